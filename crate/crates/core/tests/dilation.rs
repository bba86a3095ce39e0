mod common;

use common::equivalence::dilation_max_diff;
use inflatenn::layers::ConvGeometry;

#[test]
fn dilated_conv_equals_zero_stuffed_kernel() {
    for d in [2, 4, 8] {
        for seed in 0..3 {
            let diff = dilation_max_diff(d, seed);
            assert!(diff <= 1e-6, "d={d} seed={seed}: {diff:e}");
        }
    }
}

#[test]
fn short_clips_rejected_for_large_dilation() {
    let g = ConvGeometry {
        in_ch: 1,
        out_ch: 1,
        kt: 3,
        kh: 1,
        kw: 1,
        stride: 1,
        pad_t: 0,
        pad_h: 0,
        pad_w: 0,
        dilation_t: 8,
    };
    assert!(g.output_extent(16, 4, 4).is_err());
    assert_eq!(g.output_extent(17, 4, 4).unwrap().0, 1);
}
