//! Render the synthetic corpus and walk it like a real dataset.
//!
//! The corpus lives in the same directory layout as actual training data
//! (`<song>/<fine_label>/<n>.wav` plus `splits/` lists), so every scanning,
//! pooling and training flow can be exercised without any licensed audio.

use qscnet::cli::{cmd_scan, cmd_toy_gen, ScanArgs, ToyGenArgs};
use qscnet::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let root = dir.path().join("toy");

    cmd_toy_gen(&ToyGenArgs {
        out: root.clone(),
        songs: 4,
        seconds: 6.0,
        seed: 0,
        extended: true,
    })?;
    println!();
    cmd_scan(&ScanArgs { root, strict: true })?;
    Ok(())
}
