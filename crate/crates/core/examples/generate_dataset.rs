//! Generates poor, medium and good datasets for one scenario and prints the
//! summary table.
//!
//! cargo run --release --example generate_dataset -- [scenario] [episodes] [out_dir]

use std::path::PathBuf;

use madt::dataset::{format_table, generate, read_dataset, stats, write_dataset};
use madt::env::{Registry, Tier};

fn main() -> madt::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let scenario = args.first().map_or("2a_2t", String::as_str);
    let episodes: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let out = args
        .get(2)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("madt-data"));

    let registry = Registry::builtin();
    let mut manifests = Vec::new();
    for (i, tier) in Tier::ALL.into_iter().enumerate() {
        let ds = generate(&registry, scenario, tier, episodes, i as u64)?;
        let path = write_dataset(&ds, &out)?;
        // Reload and recompute to show the manifest survives the round trip.
        let back = read_dataset(&path)?;
        assert_eq!(stats(&back), back.manifest);
        println!("wrote {}", path.display());
        manifests.push(back.manifest);
    }
    print!("\n{}", format_table(&manifests));
    Ok(())
}
