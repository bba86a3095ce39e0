//! Cuts a synthetic corpus into labelled clips and prints the clip-count
//! table over frame rate, length and overlap.
//!
//! `cargo run --example window_clips`

use inflatenn::clips::{count_table, window_clips, Fusion, WindowConfig};
use inflatenn::datagen::{generate_corpus, SynthSpec};

fn main() -> inflatenn::Result<()> {
    let videos = generate_corpus(&SynthSpec { num_videos: 3, frames_per_video: 200, fps: 50, ..Default::default() })?;
    let streams: Vec<_> = videos.iter().map(|v| v.to_stream()).collect();

    let cfg = WindowConfig { fps: 50, seq_len: 32, overlap: 0.5, fusion: Fusion::Extremum, ..Default::default() };
    let clips = window_clips(&streams[0], &cfg)?;
    println!("{}: {} clips of {} frames, stride {}", streams[0].id, clips.len(), cfg.seq_len, cfg.stride());
    for c in clips.iter().take(5) {
        println!(
            "  frames {}..={} valence {:+.3} arousal {:+.3}",
            c.indices[0],
            c.indices[c.indices.len() - 1],
            c.valence,
            c.arousal
        );
    }

    println!("\nfps,seq_len,overlap,clips");
    for (fps, len, overlap, n) in count_table(&streams, &WindowConfig::default())? {
        println!("{fps},{len},{overlap},{n}");
    }
    Ok(())
}
