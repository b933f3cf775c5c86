//! Seeded synthetic clothes-changing benchmarks.
//!
//! Generative model:
//!
//! * every identity draws one gait prototype (spherical Gaussian in `d_gait`
//!   dimensions, unit-normalized), shared by all of its suits;
//! * every (identity, suit) pair draws its own appearance prototype in
//!   `d_app` dimensions, unit-normalized, independent across suits;
//! * every sequence is its prototypes plus spherical noise of scale
//!   `sigma_app` / `sigma_gait`, and a camera drawn uniformly.
//!
//! Appearance therefore separates suits, while gait separates identities.
//! The first `round(train_fraction · n_identities)` identities form the
//! train split; for the rest, the first sequence of every suit is a query
//! and the remaining sequences are gallery.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureStore, Manifest, SequenceRecord, Split};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_identities: usize,
    /// Inclusive range.
    pub suits_per_identity: [usize; 2],
    /// Inclusive range.
    pub sequences_per_suit: [usize; 2],
    pub d_app: usize,
    pub d_gait: usize,
    pub sigma_app: f64,
    pub sigma_gait: f64,
    pub n_cameras: usize,
    pub train_fraction: f64,
    pub seed: u64,
    /// Inclusive range for the recorded `n_frames`; does not affect features.
    pub frames_per_sequence: [u32; 2],
}

impl Default for SyntheticConfig {
    /// Desk-scale benchmark: appearance strong within a suit, weak across
    /// suits; gait moderate everywhere.
    fn default() -> Self {
        Self {
            n_identities: 80,
            suits_per_identity: [2, 6],
            sequences_per_suit: [4, 8],
            d_app: 64,
            d_gait: 32,
            sigma_app: 0.35,
            sigma_gait: 0.9,
            n_cameras: 10,
            train_fraction: 0.5,
            seed: 17,
            frames_per_sequence: [8, 165],
        }
    }
}

impl SyntheticConfig {
    /// Roughly the size of the large synthetic benchmark: 333 identities,
    /// about 7 suits each and a little under 10k sequences.
    pub fn benchmark_scale() -> Self {
        Self {
            n_identities: 333,
            suits_per_identity: [2, 12],
            sequences_per_suit: [2, 6],
            train_fraction: 167.0 / 333.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_identities == 0 || self.d_app == 0 || self.d_gait == 0 || self.n_cameras == 0 {
            return fail("counts and dimensions must be at least 1");
        }
        let [smin, smax] = self.suits_per_identity;
        if smin < 2 {
            return fail("every identity needs at least 2 suits");
        }
        if smin > smax {
            return fail("suits_per_identity minimum exceeds maximum");
        }
        let [qmin, qmax] = self.sequences_per_suit;
        if qmin == 0 || qmin > qmax {
            return fail("sequences_per_suit must be a non-empty range starting at 1 or more");
        }
        let [fmin, fmax] = self.frames_per_sequence;
        if fmin == 0 || fmin > fmax {
            return fail("frames_per_sequence must be a non-empty range starting at 1 or more");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail("train_fraction must lie strictly between 0 and 1");
        }
        if !(self.sigma_app >= 0.0 && self.sigma_gait >= 0.0)
            || !self.sigma_app.is_finite()
            || !self.sigma_gait.is_finite()
        {
            return fail("noise scales must be finite and non-negative");
        }
        Ok(())
    }

    pub fn n_train_identities(&self) -> usize {
        ((self.n_identities as f64 * self.train_fraction).round() as usize).min(self.n_identities)
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Adds isotropic noise whose expected squared norm is `sigma²`, so `sigma`
/// reads directly against the unit-norm prototype.
fn perturb(rng: &mut ChaCha8Rng, proto: &[f64], sigma: f64) -> Vec<f64> {
    let scale = sigma / (proto.len() as f64).sqrt();
    proto
        .iter()
        .map(|&p| {
            let z: f64 = rng.sample(StandardNormal);
            p + scale * z
        })
        .collect()
}

/// Generates a benchmark. Deterministic in `config` (including the seed).
pub fn generate(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_train = config.n_train_identities();

    let mut records = Vec::new();
    let mut app_rows = Vec::new();
    let mut gait_rows = Vec::new();

    for person in 0..config.n_identities {
        let gait_proto = unit_gaussian(&mut rng, config.d_gait);
        let n_suits =
            rng.random_range(config.suits_per_identity[0]..=config.suits_per_identity[1]);
        for suit in 0..n_suits {
            let app_proto = unit_gaussian(&mut rng, config.d_app);
            let n_seq =
                rng.random_range(config.sequences_per_suit[0]..=config.sequences_per_suit[1]);
            for seq in 0..n_seq {
                let split = if person < n_train {
                    Split::Train
                } else if seq == 0 {
                    Split::Query
                } else {
                    Split::Gallery
                };
                let camera_id = rng.random_range(0..config.n_cameras) as i64;
                let n_frames = rng
                    .random_range(config.frames_per_sequence[0]..=config.frames_per_sequence[1]);
                app_rows.push(perturb(&mut rng, &app_proto, config.sigma_app));
                gait_rows.push(perturb(&mut rng, &gait_proto, config.sigma_gait));
                records.push(SequenceRecord {
                    seq_id: format!("p{person:04}_c{suit:02}_s{seq:03}"),
                    person_id: person as i64,
                    clothes_id: suit as i64,
                    camera_id,
                    split,
                    n_frames,
                });
            }
        }
    }

    let appearance = if app_rows.is_empty() {
        Matrix::zeros(0, config.d_app)
    } else {
        Matrix::from_rows(&app_rows)?
    };
    let gait = if gait_rows.is_empty() {
        Matrix::zeros(0, config.d_gait)
    } else {
        Matrix::from_rows(&gait_rows)?
    };
    Dataset::new(Manifest { records }, FeatureStore::new(appearance, gait)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub query: usize,
    pub gallery: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub identities: usize,
    pub sequences: usize,
    pub suits_min: usize,
    pub suits_mean: f64,
    pub suits_max: usize,
    pub frames_min: u32,
    pub frames_mean: f64,
    pub frames_max: u32,
    pub splits: SplitCounts,
}

/// Summary counts in the style of a dataset table.
pub fn dataset_stats(manifest: &Manifest) -> Result<DatasetStats> {
    if manifest.is_empty() {
        return Err(Error::InvalidArgument("cannot summarize an empty manifest".into()));
    }
    let mut suits: BTreeMap<i64, BTreeSet<i64>> = BTreeMap::new();
    let mut splits = SplitCounts {
        train: 0,
        query: 0,
        gallery: 0,
    };
    for r in &manifest.records {
        suits.entry(r.person_id).or_default().insert(r.clothes_id);
        match r.split {
            Split::Train => splits.train += 1,
            Split::Query => splits.query += 1,
            Split::Gallery => splits.gallery += 1,
        }
    }
    let counts: Vec<usize> = suits.values().map(BTreeSet::len).collect();
    let frames = manifest.records.iter().map(|r| r.n_frames);
    Ok(DatasetStats {
        identities: suits.len(),
        sequences: manifest.len(),
        suits_min: *counts.iter().min().unwrap(),
        suits_mean: counts.iter().sum::<usize>() as f64 / counts.len() as f64,
        suits_max: *counts.iter().max().unwrap(),
        frames_min: frames.clone().min().unwrap(),
        frames_mean: frames.clone().map(f64::from).sum::<f64>() / manifest.len() as f64,
        frames_max: frames.max().unwrap(),
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            n_identities: 10,
            suits_per_identity: [3, 3],
            sequences_per_suit: [5, 5],
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn counts_follow_ranges_and_query_rule() {
        let ds = generate(&small()).unwrap();
        let m = &ds.manifest;
        assert_eq!(m.len(), 150);
        assert_eq!(m.indices(Split::Train).len(), 75);
        assert_eq!(m.indices(Split::Query).len(), 15);
        assert_eq!(m.indices(Split::Gallery).len(), 60);
        let stats = dataset_stats(m).unwrap();
        assert_eq!(stats.identities, 10);
        assert_eq!(stats.suits_mean, 3.0);
        assert_eq!((stats.suits_min, stats.suits_max), (3, 3));
    }

    #[test]
    fn each_test_suit_has_exactly_one_query() {
        let cfg = SyntheticConfig {
            n_identities: 12,
            ..SyntheticConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        let mut per_suit: BTreeMap<(i64, i64), usize> = BTreeMap::new();
        for r in ds.manifest.records.iter().filter(|r| r.split != Split::Train) {
            *per_suit.entry((r.person_id, r.clothes_id)).or_default() +=
                usize::from(r.split == Split::Query);
        }
        assert!(!per_suit.is_empty());
        assert!(per_suit.values().all(|&q| q == 1));
    }

    #[test]
    fn single_identity_two_suits() {
        let cfg = SyntheticConfig {
            n_identities: 1,
            suits_per_identity: [2, 2],
            sequences_per_suit: [1, 1],
            ..SyntheticConfig::default()
        };
        let stats = dataset_stats(&generate(&cfg).unwrap().manifest).unwrap();
        assert_eq!(stats.sequences, 2);
        assert_eq!(stats.suits_mean, 2.0);
    }

    #[test]
    fn zero_noise_rows_collapse_to_prototypes() {
        let cfg = SyntheticConfig {
            sigma_app: 0.0,
            sigma_gait: 0.0,
            ..small()
        };
        let ds = generate(&cfg).unwrap();
        let recs = &ds.manifest.records;
        for i in 0..recs.len() {
            for j in 0..recs.len() {
                let same_id = recs[i].person_id == recs[j].person_id;
                let same_suit = same_id && recs[i].clothes_id == recs[j].clothes_id;
                if same_suit {
                    assert_eq!(ds.features.appearance.row(i), ds.features.appearance.row(j));
                }
                if same_id {
                    assert_eq!(ds.features.gait.row(i), ds.features.gait.row(j));
                } else {
                    assert_ne!(ds.features.gait.row(i), ds.features.gait.row(j));
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SyntheticConfig { seed: 18, ..small() }).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            SyntheticConfig { suits_per_identity: [1, 3], ..small() },
            SyntheticConfig { suits_per_identity: [4, 3], ..small() },
            SyntheticConfig { train_fraction: 1.0, ..small() },
            SyntheticConfig { train_fraction: 0.0, ..small() },
            SyntheticConfig { sigma_app: -0.1, ..small() },
            SyntheticConfig { n_identities: 0, ..small() },
            SyntheticConfig { sequences_per_suit: [0, 2], ..small() },
        ];
        for cfg in bad {
            assert!(generate(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn empty_manifest_has_no_stats() {
        assert!(dataset_stats(&Manifest::default()).is_err());
    }

    #[test]
    fn benchmark_scale_preset_matches_reported_shape() {
        let ds = generate(&SyntheticConfig::benchmark_scale()).unwrap();
        let stats = dataset_stats(&ds.manifest).unwrap();
        assert_eq!(stats.identities, 333);
        assert_eq!((stats.suits_min, stats.suits_max), (2, 12));
        // uniform on [2, 12] has mean 7; 333 identities keep the sample mean close
        assert!((stats.suits_mean - 7.0).abs() < 0.5, "{}", stats.suits_mean);
        let rel = (stats.sequences as f64 - 9620.0).abs() / 9620.0;
        assert!(rel < 0.1, "{} sequences", stats.sequences);
        assert_eq!(stats.splits.train + stats.splits.query + stats.splits.gallery, stats.sequences);
    }
}
