//! Train each attention and message-source variant for a few epochs on a
//! smaller benchmark and compare their clothes-changing scores.
//!
//! ```text
//! cargo run --release --example attention_variants -- [epochs]
//! ```

use conf_rerank::eval::{evaluate, Protocol, Scorer};
use conf_rerank::net::{AttentionMode, MessageSource};
use conf_rerank::synthetic::{generate, SyntheticConfig};
use conf_rerank::trainer::{train, TrainConfig};

fn main() -> anyhow::Result<()> {
    let epochs = std::env::args().nth(1).map(|e| e.parse()).transpose()?.unwrap_or(3);
    let ds = generate(&SyntheticConfig {
        n_identities: 40,
        ..SyntheticConfig::default()
    })?;
    println!("{:<10} {:<10} {:>7} {:>7}", "attention", "message", "mAP", "R1");
    for attention in [AttentionMode::Softmax, AttentionMode::Raw] {
        for message in [MessageSource::Neighbor, MessageSource::Target] {
            let mut cfg = TrainConfig {
                epochs,
                ..TrainConfig::default()
            };
            cfg.hyper.attention = attention;
            cfg.hyper.message = message;
            let out = train(&ds, &cfg)?;
            let r = evaluate(&ds, Scorer::Model(&out.params), Protocol::Cc, &cfg.hyper)?;
            println!(
                "{:<10} {:<10} {:>7.2} {:>7.2}",
                format!("{attention:?}"),
                format!("{message:?}"),
                100.0 * r.map,
                100.0 * r.rank1
            );
        }
    }
    Ok(())
}
