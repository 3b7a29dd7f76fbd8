//! Regenerates the bundled synthetic corpus and word vectors.
//!
//! cargo run --example make_data [-- <dir>]

fn main() -> translationese::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| translationese::synth::bundled_path(""));
    translationese::synth::write_mini_data(&dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}
