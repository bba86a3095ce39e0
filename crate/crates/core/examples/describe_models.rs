//! Prints layer manifests and parameter counts for every architecture at
//! desk and paper scale.
//!
//! `cargo run --example describe_models`

use inflatenn::inflation::InflationConfig;
use inflatenn::model::{build_cnn_lstm, build_i3d, build_vgg_mini, Head, Profile};
use inflatenn::RngStream;

fn main() -> inflatenn::Result<()> {
    for (scale, profile) in [("desk", Profile::desk()), ("paper", Profile::paper())] {
        let mut rng = RngStream::new(0);
        let base = build_vgg_mini(&profile, Head::Classification, &mut rng)?;
        let cascade = build_cnn_lstm(&base.trunk(), &profile, &mut rng)?;
        let i3d = build_i3d(&base, &InflationConfig::default(), &profile, &mut rng)?;
        println!("{scale}: vgg {}, cnn-lstm {}, i3d {}", base.param_count(), cascade.param_count(), i3d.param_count());
        if scale == "desk" {
            print!("{}", cascade.manifest(16)?);
        }
    }
    Ok(())
}
