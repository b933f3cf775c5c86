//! Train the re-ranker on the default synthetic benchmark and compare it with
//! the fixed-confidence baselines under both protocols.
//!
//! ```text
//! cargo run --release --example train_and_evaluate -- [epochs]
//! ```

use std::time::Instant;

use conf_rerank::eval::{evaluate, Baseline, MetricsReport, Protocol, Scorer};
use conf_rerank::synthetic::{generate, SyntheticConfig};
use conf_rerank::trainer::{train, TrainConfig};

fn row(label: &str, r: &MetricsReport) {
    println!(
        "{label:<8} {:>8}  mAP {:6.2}  R1 {:6.2}  R5 {:6.2}  R10 {:6.2}",
        r.protocol.to_string(),
        100.0 * r.map,
        100.0 * r.rank1,
        100.0 * r.rank5,
        100.0 * r.rank10
    );
}

fn main() -> anyhow::Result<()> {
    let mut config = TrainConfig::default();
    if let Some(epochs) = std::env::args().nth(1) {
        config.epochs = epochs.parse()?;
    }
    let dataset = generate(&SyntheticConfig::default())?;

    let start = Instant::now();
    let outcome = train(&dataset, &config)?;
    for e in &outcome.log {
        println!(
            "epoch {:>2}  L {:9.3}  L_c {:9.3}  L_r {:9.3}  ({} queries)",
            e.epoch, e.total, e.confidence, e.ranking, e.queries
        );
    }
    println!("trained in {:.1?}\n", start.elapsed());

    for protocol in [Protocol::Cc, Protocol::Standard] {
        for (label, baseline) in [
            ("app", Baseline::App),
            ("gait", Baseline::Gait),
            ("sum", Baseline::Sum),
            ("oracle", Baseline::Oracle),
        ] {
            row(label, &evaluate(&dataset, Scorer::Fixed(baseline), protocol, &config.hyper)?);
        }
        row("model", &evaluate(&dataset, Scorer::Model(&outcome.params), protocol, &config.hyper)?);
        println!();
    }
    Ok(())
}
