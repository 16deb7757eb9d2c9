//! Builds the miniature labeled training set used for overfit runs.
//!
//! cargo run --release --example build_mini_dataset [out_dir]

use sriqa::synth::{build_mini_dataset, MiniSpec};

fn main() -> sriqa::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("sriqa-mini"));
    let mini = build_mini_dataset(&MiniSpec::default(), &dir)?;
    println!("{} records -> {}", mini.records.len(), mini.manifest_path.display());
    for c in &mini.curves {
        println!("  {:<28} b = {:.4}", c.group.id(), c.b);
    }
    Ok(())
}
