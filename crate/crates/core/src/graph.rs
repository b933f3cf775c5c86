//! Candidate relation graphs.
//!
//! Two directed graphs are built over the K candidates of a query. Their
//! wiring is crossed: the appearance graph takes its edges from gait
//! nearest neighbors and its edge features from appearance, the gait graph
//! the other way round. Edge features are elementwise products of the
//! endpoints' unit-normalized embeddings; the self-loop carries the
//! elementwise square.
//!
//! Node features are not stored here. Both graphs consume the same encoder
//! output `S`, which depends on the model parameters and is supplied at
//! forward time.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ranking::{normalize_rows, unit_distance, CandidateSet};

/// For each node `k`, the `min(n, K − 1)` nearest other rows, nearest first
/// (ties by ascending index). These are the sources of edges into `k`.
pub fn knn_edges(features: &Matrix, n: usize) -> Result<Vec<Vec<usize>>> {
    let unit = normalize_rows(features)?;
    Ok(knn_unit(&unit, n))
}

fn knn_unit(unit: &Matrix, n: usize) -> Vec<Vec<usize>> {
    let k_nodes = unit.rows();
    let take = n.min(k_nodes.saturating_sub(1));
    (0..k_nodes)
        .map(|k| {
            let mut others: Vec<(f64, usize)> = (0..k_nodes)
                .filter(|&j| j != k)
                .map(|j| (unit_distance(unit.row(j), unit.row(k)), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(take).map(|(_, j)| j).collect()
        })
        .collect()
}

/// One modality's graph: incoming edges and their features.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationGraph {
    /// `incoming[k][0] == k` (the self-loop), followed by the neighbor sources.
    pub incoming: Vec<Vec<usize>>,
    /// `edge_features[k]` has one row per entry of `incoming[k]`.
    pub edge_features: Vec<Matrix>,
    pub edge_dim: usize,
}

impl RelationGraph {
    fn build(neighbors: Vec<Vec<usize>>, feature_unit: &Matrix) -> Self {
        let dim = feature_unit.cols();
        let mut incoming = Vec::with_capacity(neighbors.len());
        let mut edge_features = Vec::with_capacity(neighbors.len());
        for (k, sources) in neighbors.into_iter().enumerate() {
            let mut list = Vec::with_capacity(sources.len() + 1);
            list.push(k);
            list.extend(sources);
            let target = feature_unit.row(k);
            let mut feats = Matrix::zeros(list.len(), dim);
            for (e, &j) in list.iter().enumerate() {
                for ((out, a), b) in feats.row_mut(e).iter_mut().zip(feature_unit.row(j)).zip(target) {
                    *out = a * b;
                }
            }
            incoming.push(list);
            edge_features.push(feats);
        }
        Self {
            incoming,
            edge_features,
            edge_dim: dim,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.incoming.len()
    }

    /// Total edges including self-loops.
    pub fn num_edges(&self) -> usize {
        self.incoming.iter().map(Vec::len).sum()
    }

    /// Edge feature of `j → k`, if that edge exists.
    pub fn edge_feature(&self, j: usize, k: usize) -> Option<&[f64]> {
        let e = self.incoming.get(k)?.iter().position(|&s| s == j)?;
        Some(self.edge_features[k].row(e))
    }
}

/// The appearance and gait relation graphs of one candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPair {
    pub app: RelationGraph,
    pub gait: RelationGraph,
}

/// Builds both graphs from the candidates' embeddings (`K` rows each, in
/// candidate order).
pub fn build_relation_graphs(app_rows: &Matrix, gait_rows: &Matrix, n: usize) -> Result<GraphPair> {
    if app_rows.rows() != gait_rows.rows() {
        return Err(Error::Shape(format!(
            "{} appearance rows vs {} gait rows",
            app_rows.rows(),
            gait_rows.rows()
        )));
    }
    let app_unit = normalize_rows(app_rows)?;
    let gait_unit = normalize_rows(gait_rows)?;
    Ok(GraphPair {
        app: RelationGraph::build(knn_unit(&gait_unit, n), &app_unit),
        gait: RelationGraph::build(knn_unit(&app_unit, n), &gait_unit),
    })
}

/// Gathers the candidates' rows from gallery-aligned matrices and builds
/// both graphs.
pub fn build_for_candidates(
    cand: &CandidateSet,
    gallery_app: &Matrix,
    gallery_gait: &Matrix,
    n: usize,
) -> Result<GraphPair> {
    if let Some(&bad) = cand.indices.iter().find(|&&g| g >= gallery_app.rows() || g >= gallery_gait.rows()) {
        return Err(Error::Shape(format!("candidate {bad} outside the gallery")));
    }
    build_relation_graphs(
        &gallery_app.gather(&cand.indices),
        &gallery_gait.gather(&cand.indices),
        n,
    )
}

#[derive(Serialize)]
struct AdjacencyDump<'a> {
    nodes: usize,
    edge_dim: usize,
    /// `[source, target]` pairs, self-loops included.
    edges: Vec<[usize; 2]>,
    node_features: Option<&'a [f64]>,
}

impl RelationGraph {
    /// JSON adjacency description for debugging.
    pub fn to_json(&self, node_features: Option<&Matrix>) -> serde_json::Value {
        let edges = self
            .incoming
            .iter()
            .enumerate()
            .flat_map(|(k, src)| src.iter().map(move |&j| [j, k]))
            .collect();
        let dump = AdjacencyDump {
            nodes: self.num_nodes(),
            edge_dim: self.edge_dim,
            edges,
            node_features: node_features.map(Matrix::as_slice),
        };
        serde_json::to_value(dump).expect("adjacency serializes")
    }
}
