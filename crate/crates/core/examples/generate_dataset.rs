//! Generate a synthetic clothes-changing benchmark, save it, reload it and
//! print its summary table.
//!
//! ```text
//! cargo run --example generate_dataset -- [out_dir] [n_identities]
//! ```

use conf_rerank::data::Dataset;
use conf_rerank::synthetic::{dataset_stats, generate, SyntheticConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synthetic-data".into());
    let mut config = SyntheticConfig::default();
    if let Some(n) = args.next() {
        config.n_identities = n.parse()?;
    }

    let dataset = generate(&config)?;
    dataset.save(&out)?;
    let reloaded = Dataset::load(&out)?;
    assert_eq!(reloaded.manifest, dataset.manifest);

    let stats = dataset_stats(&reloaded.manifest)?;
    println!("written to {out}/");
    println!("identities   {}", stats.identities);
    println!("sequences    {}", stats.sequences);
    println!("suits/id     {} .. {} (mean {:.2})", stats.suits_min, stats.suits_max, stats.suits_mean);
    println!("frames/seq   {} .. {} (mean {:.1})", stats.frames_min, stats.frames_max, stats.frames_mean);
    println!(
        "splits       train {}, query {}, gallery {}",
        stats.splits.train, stats.splits.query, stats.splits.gallery
    );
    println!(
        "features     appearance {}-d, gait {}-d",
        reloaded.features.appearance.cols(),
        reloaded.features.gait.cols()
    );
    Ok(())
}
