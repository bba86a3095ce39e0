mod common;

use common::equivalence::*;
use inflatenn::inflation::{inflate_model, InflationConfig, InflationMode, OffCenterInit};
use inflatenn::model::{model_forward, Mode};
use inflatenn::{RngStream, Tensor};

#[test]
fn centered_zero_matches_per_frame_2d() {
    let d = centered_max_diff(&InflationConfig::default(), 20, 11);
    assert!(d <= 1e-6, "max diff {d:e}");
}

#[test]
fn centered_zero_matches_per_frame_2d_under_dilation() {
    let cfg = InflationConfig { dilation_schedule: [1, 2, 4, 8], ..Default::default() };
    let d = centered_max_diff(&cfg, 5, 12);
    assert!(d <= 1e-6, "max diff {d:e}");
}

#[test]
fn copied_rescaled_matches_2d_on_static_clips() {
    let d = copied_static_max_diff(5, 13);
    assert!(d <= 1e-5, "max diff {d:e}");
}

#[test]
fn copied_without_rescale_scales_first_conv_by_n() {
    // only the first conv is linear in the input
    let trunk = desk_trunk(14);
    let first = inflatenn::model::ModelSpec {
        layers: trunk.layers[..1].to_vec(),
        block_starts: vec![0],
        ..trunk.clone()
    };
    let cfg = InflationConfig { mode: InflationMode::Copied, ..Default::default() };
    let i3d = inflate_model(&first, &cfg, &mut RngStream::new(0)).unwrap();
    let frame = Tensor::<f32>::seeded_uniform(&mut RngStream::new(1), &[3, 32, 24], 0.0, 1.0).unwrap();
    let clip = Tensor::from_fn(&i3d.batch_shape(1, 5), |i| frame.get(&[i[1], i[3], i[4]]));
    let y3 = model_forward(&i3d, &clip, Mode::Eval, &mut RngStream::new(0)).unwrap().output;
    let y2 = per_frame_2d(&first, &clip);
    let bias = &first.weights["block1_conv1.bias"];
    // interior frame t = 2 sees three copies
    for c in 0..8 {
        for y in 0..32 {
            for x in 0..24 {
                let b = bias.data()[c] as f64;
                let want = 3.0 * (y2.get(&[0, c, 2, y, x]) as f64 - b) + b;
                assert!((y3.get(&[0, c, 2, y, x]) as f64 - want).abs() <= 1e-5);
            }
        }
    }
}

#[test]
fn random_off_centre_breaks_equivalence() {
    let cfg = InflationConfig { off_center_init: OffCenterInit::Random, ..Default::default() };
    assert!(centered_max_diff(&cfg, 1, 15) > 1e-3);
}

#[test]
fn masked_training_keeps_centre_slices() {
    let (identical, moved) = masked_training(50);
    assert!(identical, "centre slices changed");
    assert!(moved, "off-centre slices never trained");
}
