//! Per-query retrieval shared by training episodes and test-time re-ranking:
//! both branch rankings over a gallery subset, the candidate set, and
//! (optionally) its relation graphs.

use crate::data::{FeatureStore, Manifest};
use crate::error::Result;
use crate::graph::{build_relation_graphs, GraphPair};
use crate::matrix::Matrix;
use crate::ranking::{collect_candidates, normalize_rows, unit_distance, CandidateSet, Hyperparams, RankingList};

/// Unit-normalized copies of both embedding matrices.
#[derive(Debug, Clone)]
pub struct UnitFeatures {
    pub app: Matrix,
    pub gait: Matrix,
}

impl UnitFeatures {
    pub fn new(features: &FeatureStore) -> Result<Self> {
        Ok(Self {
            app: normalize_rows(&features.appearance)?,
            gait: normalize_rows(&features.gait)?,
        })
    }
}

/// Retrieval state of one query against one gallery subset.
///
/// `RankingList` and `CandidateSet` indices are positions into `gallery`,
/// which holds manifest indices.
#[derive(Debug, Clone)]
pub struct QueryRetrieval {
    pub query: usize,
    pub gallery: Vec<usize>,
    pub r_app: RankingList,
    pub r_gait: RankingList,
    pub candidates: CandidateSet,
    pub graphs: Option<GraphPair>,
}

impl QueryRetrieval {
    /// Manifest indices of the candidates, in selection order.
    pub fn candidate_records(&self) -> Vec<usize> {
        self.candidates.indices.iter().map(|&p| self.gallery[p]).collect()
    }
}

pub fn retrieve(
    manifest: &Manifest,
    unit: &UnitFeatures,
    query: usize,
    gallery: Vec<usize>,
    hp: &Hyperparams,
    with_graphs: bool,
) -> Result<QueryRetrieval> {
    let dist = |m: &Matrix| -> Vec<f64> {
        let q = m.row(query);
        gallery.iter().map(|&g| unit_distance(q, m.row(g))).collect()
    };
    let r_app = RankingList::from_distances(&dist(&unit.app));
    let r_gait = RankingList::from_distances(&dist(&unit.gait));
    let person = manifest.records[query].person_id;
    let candidates = collect_candidates(&r_app, &r_gait, hp.k, hp.gamma, |p| {
        manifest.records[gallery[p]].person_id == person
    })?;
    let graphs = if with_graphs {
        let rows: Vec<usize> = candidates.indices.iter().map(|&p| gallery[p]).collect();
        Some(build_relation_graphs(&unit.app.gather(&rows), &unit.gait.gather(&rows), hp.n_neighbors)?)
    } else {
        None
    };
    Ok(QueryRetrieval {
        query,
        gallery,
        r_app,
        r_gait,
        candidates,
        graphs,
    })
}
