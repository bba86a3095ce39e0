//! Grows a 2D kernel into a 3D one under each inflation mode and inflates
//! the desk VGG trunk.
//!
//! `cargo run --example inflate_kernels`

use inflatenn::inflation::{inflate_kernel, inflate_model, InflationConfig, InflationMode, OffCenterInit};
use inflatenn::model::{build_vgg_mini, Head, Profile};
use inflatenn::{RngStream, Tensor};

fn main() -> inflatenn::Result<()> {
    let mut rng = RngStream::new(1);
    let w2d: Tensor = Tensor::seeded_uniform(&mut rng, &[1, 1, 2, 2], -1.0, 1.0)?;
    println!("2D kernel {:?}", w2d.data());
    let configs = [
        ("centred/zero", InflationConfig::default()),
        ("centred/random", InflationConfig { off_center_init: OffCenterInit::Random, ..Default::default() }),
        ("copied", InflationConfig { mode: InflationMode::Copied, ..Default::default() }),
        ("copied/rescaled", InflationConfig { mode: InflationMode::Copied, copied_rescale: true, ..Default::default() }),
    ];
    for (name, cfg) in &configs {
        let w3d = inflate_kernel(&w2d, cfg, &mut rng)?;
        println!("{name}:");
        for t in 0..cfg.temporal_extent {
            let slice: Vec<f32> = (0..4).map(|i| w3d.get(&[0, 0, t, i / 2, i % 2])).collect();
            println!("  t={t} {slice:.3?}");
        }
    }

    let profile = Profile::desk();
    let base = build_vgg_mini(&profile, Head::None, &mut rng)?;
    let cfg = InflationConfig { dilation_schedule: [1, 2, 4, 8], ..Default::default() };
    let i3d = inflate_model(&base, &cfg, &mut rng)?;
    println!("\n2D parameters {}, inflated {}", base.param_count(), i3d.param_count());
    print!("{}", i3d.manifest(16)?);
    Ok(())
}
