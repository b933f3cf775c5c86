use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use conf_rerank::checkpoint::{load_checkpoint, save_checkpoint};
use conf_rerank::data::{Dataset, Split};
use conf_rerank::eval::{evaluate, filter_gallery, Baseline, MetricsReport, Protocol, Scorer};
use conf_rerank::net::{model_forward, Mode};
use conf_rerank::pipeline::{retrieve, UnitFeatures};
use conf_rerank::ranking::Hyperparams;
use conf_rerank::synthetic::{dataset_stats, generate, SyntheticConfig};
use conf_rerank::trainer::{init_params, log_to_jsonl, train, TrainConfig};

#[derive(Parser)]
#[command(name = "conf-rerank", version, about = "Confidence-aware two-branch re-ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark.
    Gen {
        /// Generator config (JSON). Defaults to the desk-scale preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump both initial top-K lists per query.
    Rank {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "standard")]
        protocol: Protocol,
        /// Hyperparameters (JSON); only K, gamma and n_neighbors matter here.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the first query's relation graphs as JSON adjacency.
        #[arg(long)]
        dump_graph: Option<PathBuf>,
    },
    /// Train the re-ranking model on the train split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Training log (JSON Lines); defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Override a config field, e.g. `--set epochs=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a model or a fixed-confidence baseline.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "baseline")]
        model: Option<PathBuf>,
        #[arg(long, default_value = "cc")]
        protocol: Protocol,
        #[arg(long, conflicts_with = "model")]
        baseline: Option<Baseline>,
        /// Hyperparameters for baselines (JSON); models use their own.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare evaluation reports.
    Report {
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        compare: Vec<PathBuf>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn hyperparams(path: Option<&Path>) -> Result<Hyperparams> {
    let hp = match path {
        Some(p) => read_json(p)?,
        None => Hyperparams::default(),
    };
    hp.validate()?;
    Ok(hp)
}

#[derive(Serialize)]
struct QueryLists {
    query: String,
    appearance: Vec<String>,
    gait: Vec<String>,
}

fn cmd_rank(data: &Path, out: &Path, protocol: Protocol, hp: &Hyperparams, dump: Option<&Path>) -> Result<()> {
    let ds = Dataset::load(data)?;
    let unit = UnitFeatures::new(&ds.features)?;
    let records = &ds.manifest.records;
    let gallery = ds.manifest.indices(Split::Gallery);
    let gallery_records: Vec<_> = gallery.iter().map(|&g| &records[g]).collect();
    let mut lists = Vec::new();
    for (n, q) in ds.manifest.indices(Split::Query).into_iter().enumerate() {
        let admissible: Vec<usize> = filter_gallery(&records[q], &gallery_records, protocol)
            .into_iter()
            .map(|i| gallery[i])
            .collect();
        if admissible.is_empty() {
            continue;
        }
        let with_graphs = dump.is_some() && n == 0;
        let r = retrieve(&ds.manifest, &unit, q, admissible, hp, with_graphs)?;
        let names = |idx: &[usize]| -> Vec<String> {
            idx.iter().take(hp.k).map(|&p| records[r.gallery[p]].seq_id.clone()).collect()
        };
        lists.push(QueryLists {
            query: records[q].seq_id.clone(),
            appearance: names(&r.r_app.indices),
            gait: names(&r.r_gait.indices),
        });
        if let (Some(path), Some(graphs)) = (dump, &r.graphs) {
            let params = init_params(&ds, hp);
            let fwd = model_forward(&r.candidates, graphs, &params, Mode::Eval)?;
            let doc = serde_json::json!({
                "query": records[q].seq_id,
                "candidates": r.candidate_records().iter().map(|&g| &records[g].seq_id).collect::<Vec<_>>(),
                "appearance_graph": graphs.app.to_json(Some(&fwd.trace.encoder.s)),
                "gait_graph": graphs.gait.to_json(Some(&fwd.trace.encoder.s)),
            });
            write_json(path, &doc)?;
        }
    }
    write_json(out, &lists)
}

fn cmd_train(data: &Path, config: Option<&Path>, out: &Path, log: Option<PathBuf>, overrides: &[String]) -> Result<()> {
    let ds = Dataset::load(data)?;
    let mut cfg: TrainConfig = match config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    for o in overrides {
        cfg.set(o)?;
    }
    let outcome = train(&ds, &cfg)?;
    save_checkpoint(&outcome.params, &cfg.hyper, out)?;
    for (epoch, params) in &outcome.snapshots {
        let mut name = out.file_stem().unwrap_or_default().to_os_string();
        name.push(format!(".epoch{epoch}.ckpt"));
        save_checkpoint(params, &cfg.hyper, out.with_file_name(name))?;
    }
    let log_path = log.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    fs::write(&log_path, log_to_jsonl(&outcome.log))
        .with_context(|| format!("writing {}", log_path.display()))?;
    if let Some(last) = outcome.log.last() {
        eprintln!(
            "trained {} epochs; last epoch L = {:.4} (L_c {:.4}, L_r {:.4}) over {} queries",
            outcome.log.len(),
            last.total,
            last.confidence,
            last.ranking,
            last.queries
        );
    }
    Ok(())
}

fn print_report(label: &str, r: &MetricsReport) {
    println!(
        "{label:<12} {:>8} mAP {:6.2}  R1 {:6.2}  R5 {:6.2}  R10 {:6.2}  ({} queries, {} skipped)",
        r.protocol.to_string(),
        100.0 * r.map,
        100.0 * r.rank1,
        100.0 * r.rank5,
        100.0 * r.rank10,
        r.num_queries,
        r.num_skipped
    );
}

fn cmd_report(paths: &[PathBuf]) -> Result<()> {
    let [a, b] = paths else {
        bail!("--compare takes exactly two reports");
    };
    let ra: MetricsReport = read_json(a)?;
    let rb: MetricsReport = read_json(b)?;
    println!("{:<8} {:>9} {:>9} {:>9}", "metric", "A", "B", "B - A");
    for (name, x, y) in [
        ("mAP", ra.map, rb.map),
        ("R1", ra.rank1, rb.rank1),
        ("R5", ra.rank5, rb.rank5),
        ("R10", ra.rank10, rb.rank10),
    ] {
        println!("{name:<8} {:>9.2} {:>9.2} {:>+9.2}", 100.0 * x, 100.0 * y, 100.0 * (y - x));
    }
    if ra.protocol != rb.protocol {
        println!("note: protocols differ ({} vs {})", ra.protocol, rb.protocol);
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen { config, out } => {
            let cfg: SyntheticConfig = match config {
                Some(p) => read_json(&p)?,
                None => SyntheticConfig::default(),
            };
            let ds = generate(&cfg)?;
            ds.save(&out)?;
            write_json(&out.join("stats.json"), &dataset_stats(&ds.manifest)?)?;
        }
        Command::Rank {
            data,
            out,
            protocol,
            config,
            dump_graph,
        } => cmd_rank(&data, &out, protocol, &hyperparams(config.as_deref())?, dump_graph.as_deref())?,
        Command::Train {
            data,
            config,
            out,
            log,
            overrides,
        } => cmd_train(&data, config.as_deref(), &out, log, &overrides)?,
        Command::Eval {
            data,
            model,
            protocol,
            baseline,
            config,
            out,
        } => {
            let ds = Dataset::load(&data)?;
            let (report, label) = match (baseline, model) {
                (Some(b), _) => {
                    let hp = hyperparams(config.as_deref())?;
                    (evaluate(&ds, Scorer::Fixed(b), protocol, &hp)?, format!("{b:?}").to_lowercase())
                }
                (None, Some(m)) => {
                    let ckpt = load_checkpoint(&m)?;
                    (
                        evaluate(&ds, Scorer::Model(&ckpt.params), protocol, &ckpt.hyperparams)?,
                        "model".to_string(),
                    )
                }
                (None, None) => bail!("either --model or --baseline is required"),
            };
            print_report(&label, &report);
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
        }
        Command::Report { compare } => cmd_report(&compare)?,
    }
    Ok(())
}
