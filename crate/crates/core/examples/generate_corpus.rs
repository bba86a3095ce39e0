//! Renders a synthetic annotated face-video corpus and writes it to disk.
//!
//! `cargo run --example generate_corpus [out_dir]`

use inflatenn::datagen::{generate_corpus, SynthSpec};
use inflatenn::storage::{read_corpus, write_corpus};

fn main() -> inflatenn::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "corpus".into());
    let spec = SynthSpec { num_videos: 4, frames_per_video: 120, ..Default::default() };
    let videos = generate_corpus(&spec)?;
    write_corpus(out.as_ref(), &videos)?;
    for v in read_corpus(out.as_ref(), false)? {
        let valid = v.valid.iter().filter(|&&b| b).count();
        let mean = |xs: &[f32]| xs.iter().sum::<f32>() / xs.len() as f32;
        println!(
            "{}: {} frames ({valid} with a face), mean valence {:+.3}, mean arousal {:+.3}",
            v.id,
            v.frames.len(),
            mean(&v.valence),
            mean(&v.arousal)
        );
    }
    println!("written to {out}");
    Ok(())
}
