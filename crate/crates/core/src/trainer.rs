//! Leave-one-out training on the train split.
//!
//! Every train sequence is a query once per epoch, searched against the
//! other train sequences admissible under `episode_protocol`. Episodes are
//! processed in batches: each batch is evaluated in parallel, gradients are
//! summed in episode order, and one Adam step is taken.
//!
//! The default episode protocol is [`Protocol::Cc`]: same-identity,
//! same-clothes sequences are left out of the query's gallery, so the
//! training candidates look like clothes-changing test candidates. With
//! [`Protocol::Standard`] the gallery is every other train sequence.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Manifest, Split};
use crate::error::{Error, Result};
use crate::eval::{filter_gallery, Protocol};
use crate::loss::{total_loss, LossBreakdown, LossInputs};
use crate::net::{model_backward, model_forward, Adam, AdamSettings, EncoderTrace, Mode, ModelConfig, ModelParams, Weights};
use crate::pipeline::{retrieve, UnitFeatures};
use crate::ranking::Hyperparams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub hyper: Hyperparams,
    pub epochs: usize,
    /// Episodes per optimizer step.
    pub batch_size: usize,
    /// Keep a snapshot every this many epochs; 0 disables snapshots.
    pub checkpoint_every: usize,
    /// Gallery filtering applied to training episodes.
    pub episode_protocol: Protocol,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparams::default(),
            epochs: 10,
            batch_size: 8,
            checkpoint_every: 0,
            episode_protocol: Protocol::Cc,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies a `key=value` override, where `value` is parsed as JSON
    /// (falling back to a bare string).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        let value: serde_json::Value = serde_json::from_str(value)
            .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        let mut doc = serde_json::to_value(&*self)?;
        let obj = doc.as_object_mut().expect("config serializes to an object");
        if !obj.contains_key(key) {
            return Err(Error::Config(format!("unknown setting {key:?}")));
        }
        obj.insert(key.to_string(), value);
        *self = serde_json::from_value(doc)?;
        Ok(())
    }
}

/// One training unit: a train query against its admissible train gallery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub query: usize,
    pub gallery: Vec<usize>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The episodes of one epoch in their seeded order.
///
/// Queries left with an empty gallery by the protocol are dropped.
pub fn build_episodes(manifest: &Manifest, protocol: Protocol, epoch: usize, seed: u64) -> Result<Vec<Episode>> {
    let train = manifest.indices(Split::Train);
    if train.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 2 train sequences, found {}",
            train.len()
        )));
    }
    let records = &manifest.records;
    let mut episodes: Vec<Episode> = train
        .iter()
        .map(|&q| {
            let others: Vec<usize> = train.iter().copied().filter(|&g| g != q).collect();
            let other_records: Vec<_> = others.iter().map(|&g| &records[g]).collect();
            let gallery = filter_gallery(&records[q], &other_records, protocol)
                .into_iter()
                .map(|i| others[i])
                .collect();
            Episode { query: q, gallery }
        })
        .filter(|e: &Episode| !e.gallery.is_empty())
        .collect();
    if episodes.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no train query has an admissible gallery under the {protocol} protocol"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64, 0x5eed));
    episodes.shuffle(&mut rng);
    Ok(episodes)
}

/// Loss totals of one epoch, as written to the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub queries: usize,
    #[serde(rename = "L_c")]
    pub confidence: f64,
    #[serde(rename = "L_r")]
    pub ranking: f64,
    #[serde(rename = "L")]
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    /// Total loss of every episode in processing order.
    pub episode_losses: Vec<f64>,
    /// `(epoch, params)` after every `checkpoint_every` epochs.
    pub snapshots: Vec<(usize, ModelParams)>,
}

struct EpisodeResult {
    loss: LossBreakdown,
    grads: Weights,
    encoder: EncoderTrace,
}

fn run_episode(
    dataset: &Dataset,
    unit: &UnitFeatures,
    params: &ModelParams,
    episode: &Episode,
    hp: &Hyperparams,
    dropout_seed: u64,
) -> Result<EpisodeResult> {
    let retrieval = retrieve(&dataset.manifest, unit, episode.query, episode.gallery.clone(), hp, true)?;
    let cand = &retrieval.candidates;
    let graphs = retrieval.graphs.as_ref().expect("graphs requested");
    let out = model_forward(cand, graphs, params, Mode::Train { seed: dropout_seed })?;
    let (loss, upstream) = total_loss(LossInputs {
        s: &out.s,
        c_app: &out.c_app,
        c_gait: &out.c_gait,
        s_app: &cand.s_app,
        s_gait: &cand.s_gait,
        labels: &cand.labels,
        epsilon: hp.epsilon,
    })?;
    let grads = model_backward(params, graphs, &out, &upstream)?;
    Ok(EpisodeResult {
        loss,
        grads,
        encoder: out.trace.encoder,
    })
}

/// Fresh model parameters sized for a dataset.
pub fn init_params(dataset: &Dataset, hp: &Hyperparams) -> ModelParams {
    let cfg = ModelConfig::new(hp, dataset.features.appearance.cols(), dataset.features.gait.cols());
    ModelParams::init(cfg, hp.seed)
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let hp = &config.hyper;
    let unit = UnitFeatures::new(&dataset.features)?;
    let mut params = init_params(dataset, hp);
    let mut adam = Adam::new(
        AdamSettings {
            lr: hp.lr,
            beta1: hp.beta1,
            beta2: hp.beta2,
            eps: hp.adam_eps,
        },
        &params.weights,
    );

    let mut log = Vec::with_capacity(config.epochs);
    let mut episode_losses = Vec::new();
    let mut snapshots = Vec::new();
    for epoch in 0..config.epochs {
        let episodes = build_episodes(&dataset.manifest, config.episode_protocol, epoch, hp.seed)?;
        let mut totals = EpochLog {
            epoch: epoch + 1,
            queries: 0,
            confidence: 0.0,
            ranking: 0.0,
            total: 0.0,
        };
        for (batch_no, batch) in episodes.chunks(config.batch_size).enumerate() {
            let base = batch_no * config.batch_size;
            let results: Vec<EpisodeResult> = batch
                .par_iter()
                .enumerate()
                .map(|(i, ep)| {
                    let seed = mix(hp.seed, epoch as u64 + 1, (base + i) as u64);
                    run_episode(dataset, &unit, &params, ep, hp, seed)
                })
                .collect::<Result<_>>()?;

            let mut grads = Weights::zeros(&params.config);
            for (i, r) in results.iter().enumerate() {
                if !r.loss.total.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch: epoch + 1,
                        episode: base + i,
                        query: dataset.manifest.records[batch[i].query].seq_id.clone(),
                    });
                }
                grads.add_assign(&r.grads);
                params.update_running_stats(&r.encoder);
                totals.queries += 1;
                totals.confidence += r.loss.confidence;
                totals.ranking += r.loss.ranking;
                totals.total += r.loss.total;
                episode_losses.push(r.loss.total);
            }
            adam.step(&mut params.weights, &grads)?;
        }
        log.push(totals);
        if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
            snapshots.push((epoch + 1, params.clone()));
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        episode_losses,
        snapshots,
    })
}

/// The training log as JSON Lines.
pub fn log_to_jsonl(log: &[EpochLog]) -> String {
    log.iter()
        .map(|e| serde_json::to_string(e).expect("log entry serializes") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SequenceRecord;

    fn manifest(n_train: usize) -> Manifest {
        Manifest {
            records: (0..n_train + 2)
                .map(|i| SequenceRecord {
                    seq_id: format!("s{i}"),
                    person_id: (i / 2) as i64,
                    clothes_id: (i % 2) as i64,
                    camera_id: 0,
                    split: if i < n_train { Split::Train } else { Split::Gallery },
                    n_frames: 3,
                })
                .collect(),
        }
    }

    #[test]
    fn leave_one_out_counts() {
        for protocol in [Protocol::Standard, Protocol::Cc] {
            let eps = build_episodes(&manifest(5), protocol, 0, 1).unwrap();
            assert_eq!(eps.len(), 5);
            for e in &eps {
                assert_eq!(e.gallery.len(), 4);
                assert!(!e.gallery.contains(&e.query));
                assert!(e.gallery.iter().all(|&g| g < 5));
            }
        }
        let two = build_episodes(&manifest(2), Protocol::Standard, 0, 1).unwrap();
        assert_eq!(two.len(), 2);
        assert!(two.iter().all(|e| e.gallery.len() == 1));
        assert!(build_episodes(&manifest(1), Protocol::Standard, 0, 1).is_err());
    }

    #[test]
    fn cc_episodes_drop_same_clothes() {
        let mut m = manifest(6);
        for r in &mut m.records {
            r.clothes_id = 0;
        }
        // persons 0,0,1,1,2,2 all in clothes 0
        let eps = build_episodes(&m, Protocol::Cc, 0, 3).unwrap();
        assert_eq!(eps.len(), 6);
        for e in &eps {
            assert_eq!(e.gallery.len(), 4);
            let pid = m.records[e.query].person_id;
            assert!(e.gallery.iter().all(|&g| m.records[g].person_id != pid));
        }
        // a single identity in a single suit leaves nothing to train on
        let mut lone = manifest(2);
        lone.records[1].clothes_id = 0;
        assert!(build_episodes(&lone, Protocol::Cc, 0, 3).is_err());
        assert_eq!(build_episodes(&lone, Protocol::Standard, 0, 3).unwrap().len(), 2);
    }

    #[test]
    fn episode_order_is_seeded() {
        let m = manifest(30);
        let eps = |epoch, seed| build_episodes(&m, Protocol::Standard, epoch, seed).unwrap();
        assert_eq!(eps(2, 7), eps(2, 7));
        assert_ne!(eps(2, 7), eps(3, 7));
    }

    #[test]
    fn overrides() {
        let mut c = TrainConfig::default();
        c.set("epochs=3").unwrap();
        c.set("gamma=0.5").unwrap();
        c.set("attention=raw").unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.hyper.gamma, 0.5);
        assert_eq!(c.hyper.attention, crate::net::AttentionMode::Raw);
        c.set("episode_protocol=standard").unwrap();
        assert_eq!(c.episode_protocol, Protocol::Standard);
        assert!(c.set("nope=1").is_err());
        assert!(c.set("epochs").is_err());
        assert!(c.set("epochs=\"x\"").is_err());
    }

    #[test]
    fn config_json_is_flat() {
        let c: TrainConfig = serde_json::from_str(r#"{"k": 20, "epochs": 2}"#).unwrap();
        assert_eq!((c.hyper.k, c.epochs, c.batch_size), (20, 2, 8));
        assert_eq!(c.episode_protocol, Protocol::Cc);
    }
}
