//! Saves model weights as a WeightPack, reloads them bit-exactly and shows
//! how corrupt files are rejected.
//!
//! `cargo run --example weight_pack_roundtrip`

use inflatenn::model::{build_vgg_mini, Head, Profile};
use inflatenn::storage::{decode_weight_pack, encode_weight_pack, read_weight_pack, write_weight_pack};
use inflatenn::RngStream;

fn main() -> inflatenn::Result<()> {
    let model = build_vgg_mini(&Profile::desk(), Head::Classification, &mut RngStream::new(4))?;
    let dir = tempfile::tempdir().map_err(|e| inflatenn::Error::io(std::path::Path::new("."), e))?;
    let path = dir.path().join("vgg.wpk");
    write_weight_pack(&path, &model.weights)?;
    let back = read_weight_pack(&path, false)?;
    println!("{} tensors, {} bytes, identical: {}", back.len(), std::fs::metadata(&path).unwrap().len(), back == model.weights);

    let bytes = encode_weight_pack(&model.weights);
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    let mut nan = model.weights.clone();
    nan.values_mut().next().unwrap().data_mut()[0] = f32::NAN;
    for (name, b) in [
        ("bad magic", bad_magic),
        ("truncated", bytes[..bytes.len() / 2].to_vec()),
        ("NaN payload", encode_weight_pack(&nan)),
    ] {
        match decode_weight_pack(&b, false) {
            Ok(_) => println!("{name}: accepted"),
            Err(e) => println!("{name}: {e} (exit code {})", e.exit_code()),
        }
    }
    Ok(())
}
