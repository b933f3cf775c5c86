//! Initial two-branch retrieval: distances, ranking lists, min-max
//! similarities and γ-mixed top-K candidate collection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{AttentionMode, MessageSource};

/// Re-ranking and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Candidates kept per query.
    pub k: usize,
    /// Share of the candidates taken from the appearance list.
    pub gamma: f64,
    /// Incoming neighbors per node in the relation graphs.
    pub n_neighbors: usize,
    /// Width of the shared node embedding `S`.
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub gcn_out_dim: usize,
    /// Triplet margin.
    pub epsilon: f64,
    pub dropout: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub attention: AttentionMode,
    pub message: MessageSource,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            k: 100,
            gamma: 0.75,
            n_neighbors: 30,
            embed_dim: 32,
            hidden_dim: 32,
            gcn_out_dim: 32,
            epsilon: 0.2,
            dropout: 0.1,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            attention: AttentionMode::Softmax,
            message: MessageSource::Neighbor,
            seed: 17,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.k == 0 || self.n_neighbors == 0 {
            return fail("k and n_neighbors must be at least 1");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.gcn_out_dim == 0 {
            return fail("layer widths must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1]");
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2)
        {
            return fail("optimizer settings out of range");
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be positive");
        }
        Ok(())
    }
}

/// Returns `v / ‖v‖`.
pub fn l2_normalize(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.iter().map(|x| x / norm).collect())
}

/// Normalizes every row; a zero row is an error naming that row.
pub fn normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let unit = l2_normalize(m.row(i)).ok_or(Error::ZeroVector(i))?;
        out.row_mut(i).copy_from_slice(&unit);
    }
    Ok(out)
}

/// Euclidean distance between two vectors that are already unit length.
#[inline]
pub(crate) fn unit_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean distance between the L2-normalized inputs, in `[0, 2]`.
pub fn pairwise_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    let u = l2_normalize(u).ok_or(Error::ZeroVector(0))?;
    let v = l2_normalize(v).ok_or(Error::ZeroVector(1))?;
    Ok(unit_distance(&u, &v))
}

/// Gallery positions ordered best-first with their distances.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingList {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl RankingList {
    /// Sorts positions `0..distances.len()` by ascending distance, ties by
    /// ascending position.
    pub fn from_distances(distances: &[f64]) -> Self {
        let mut indices: Vec<usize> = (0..distances.len()).collect();
        indices.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
        let sorted = indices.iter().map(|&i| distances[i]).collect();
        Self {
            indices,
            distances: sorted,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Inverse permutation: `positions()[g]` is the 0-based rank of gallery item `g`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.indices.len()];
        for (rank, &g) in self.indices.iter().enumerate() {
            pos[g] = rank;
        }
        pos
    }

    /// Distance of each gallery item, indexed by gallery position.
    pub fn distance_by_index(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.indices.len()];
        for (&g, &dist) in self.indices.iter().zip(&self.distances) {
            d[g] = dist;
        }
        d
    }
}

/// Ranks the gallery rows against a query by [`pairwise_distance`].
pub fn initial_ranking(query: &[f64], gallery: &Matrix) -> Result<RankingList> {
    if gallery.rows() == 0 {
        return Err(Error::InvalidArgument("empty gallery".into()));
    }
    if query.len() != gallery.cols() {
        return Err(Error::Shape(format!(
            "query of length {} against gallery of width {}",
            query.len(),
            gallery.cols()
        )));
    }
    let q = l2_normalize(query)
        .ok_or_else(|| Error::InvalidArgument("query is a zero vector".into()))?;
    let mut distances = Vec::with_capacity(gallery.rows());
    for (i, row) in gallery.iter_rows().enumerate() {
        let g = l2_normalize(row).ok_or(Error::ZeroVector(i))?;
        distances.push(unit_distance(&q, &g));
    }
    Ok(RankingList::from_distances(&distances))
}

/// Min-max similarity `(M − d) / (M − m)` over the given distances.
///
/// When all distances are equal the result is the constant 0.5.
pub fn minmax_similarity(distances: &[f64]) -> Vec<f64> {
    let max = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let span = max - min;
    if !(span > 0.0) {
        return vec![0.5; distances.len()];
    }
    distances
        .iter()
        .map(|&d| ((max - d) / span).clamp(0.0, 1.0))
        .collect()
}

/// The candidates retained for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// Gallery positions in selection order.
    pub indices: Vec<usize>,
    pub dist_app: Vec<f64>,
    pub dist_gait: Vec<f64>,
    pub s_app: Vec<f64>,
    pub s_gait: Vec<f64>,
    /// `true` when the candidate shares the query's identity.
    pub labels: Vec<bool>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }

    pub fn num_negative(&self) -> usize {
        self.len() - self.num_positive()
    }
}

/// Takes the top `⌊γ·K⌋` of the appearance list, fills the remaining slots
/// from the top of the gait list (skipping items already taken), and scores
/// the selection with [`minmax_similarity`] per branch.
///
/// `is_positive(g)` reports whether gallery position `g` shares the
/// query's identity.
pub fn collect_candidates(
    r_app: &RankingList,
    r_gait: &RankingList,
    k: usize,
    gamma: f64,
    is_positive: impl Fn(usize) -> bool,
) -> Result<CandidateSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} outside [0, 1]")));
    }
    if r_app.len() != r_gait.len() {
        return Err(Error::Shape(format!(
            "ranking lists over {} and {} items",
            r_app.len(),
            r_gait.len()
        )));
    }
    let n = r_app.len();
    let k = k.min(n);
    let from_app = ((gamma * k as f64).floor() as usize).min(k);

    let mut taken = vec![false; n];
    let mut indices = Vec::with_capacity(k);
    for &g in &r_app.indices[..from_app] {
        taken[g] = true;
        indices.push(g);
    }
    for &g in &r_gait.indices {
        if indices.len() == k {
            break;
        }
        if !taken[g] {
            taken[g] = true;
            indices.push(g);
        }
    }

    let app_by_index = r_app.distance_by_index();
    let gait_by_index = r_gait.distance_by_index();
    let dist_app: Vec<f64> = indices.iter().map(|&g| app_by_index[g]).collect();
    let dist_gait: Vec<f64> = indices.iter().map(|&g| gait_by_index[g]).collect();
    Ok(CandidateSet {
        s_app: minmax_similarity(&dist_app),
        s_gait: minmax_similarity(&dist_gait),
        labels: indices.iter().map(|&g| is_positive(g)).collect(),
        indices,
        dist_app,
        dist_gait,
    })
}
