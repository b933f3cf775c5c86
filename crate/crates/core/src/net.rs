//! The learnable re-ranking model and its hand-derived gradients.
//!
//! Per query the model sees the K candidates' similarity pairs
//! `S0 = [s_app, s_gait]` and two relation graphs. The forward pass is
//!
//! 1. encoder: `linear(2→h) → batch-norm → PReLU → dropout → linear(h→D)`,
//!    giving the shared node matrix `S` (K×D);
//! 2. per graph (unshared weights): one edge-attentive GCN layer
//!    `H_k = PReLU(b + Σ_{j∈N(k)∪{k}} w_jk · W·S_j)` with `w_jk` the softmax
//!    over node `k`'s incoming logits `α·e_jk`;
//! 3. per graph: an affine confidence head `c_k = ω·H_k + b`;
//! 4. fusion: `s_k = c_app_k·s_app_k + c_gait_k·s_gait_k + ω0·S_k + b0`.
//!
//! [`AttentionMode::Raw`] uses the logits `α·e_jk` directly as edge weights
//! and [`MessageSource::Target`] aggregates `W·S_k` instead of `W·S_j`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphPair, RelationGraph};
use crate::matrix::{axpy, dot, Matrix};
use crate::ranking::{CandidateSet, Hyperparams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// Softmax over each node's incoming logits.
    #[default]
    Softmax,
    /// Unnormalized logits as edge weights.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageSource {
    /// Messages carry the source node's features.
    #[default]
    Neighbor,
    /// Messages carry the target node's own features.
    Target,
}

/// Architecture of a [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub app_edge_dim: usize,
    pub gait_edge_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub out_dim: usize,
    pub dropout: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub attention: AttentionMode,
    pub message: MessageSource,
}

impl ModelConfig {
    pub fn new(hp: &Hyperparams, app_edge_dim: usize, gait_edge_dim: usize) -> Self {
        Self {
            app_edge_dim,
            gait_edge_dim,
            hidden_dim: hp.hidden_dim,
            embed_dim: hp.embed_dim,
            out_dim: hp.gcn_out_dim,
            dropout: hp.dropout,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            attention: hp.attention,
            message: hp.message,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    /// hidden × 2
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub bn_scale: Vec<f64>,
    pub bn_shift: Vec<f64>,
    pub prelu: f64,
    /// embed × hidden
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// GCN layer and confidence head of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchWeights {
    pub alpha: Vec<f64>,
    /// out × embed
    pub w: Matrix,
    pub b: Vec<f64>,
    pub prelu: f64,
    pub omega: Vec<f64>,
    pub omega_bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub omega0: Vec<f64>,
    pub bias: f64,
}

/// Every learnable tensor. Also used as the gradient and Adam-moment container.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub encoder: EncoderWeights,
    pub app: BranchWeights,
    pub gait: BranchWeights,
    pub fusion: FusionWeights,
}

/// A named view of one parameter tensor.
#[derive(Debug)]
pub struct Segment<'a> {
    pub name: &'static str,
    pub shape: (usize, usize),
    pub data: &'a [f64],
}

pub struct SegmentMut<'a> {
    pub name: &'static str,
    pub shape: (usize, usize),
    pub data: &'a mut [f64],
}

fn vec_shape(v: &[f64]) -> (usize, usize) {
    (1, v.len())
}

fn mat_shape(m: &Matrix) -> (usize, usize) {
    (m.rows(), m.cols())
}

// Single source of truth for tensor order and names, shared by the
// shared and mutable views.
macro_rules! weight_segments {
    ($w:expr, $seg:ident, $matfn:ident, $scalar:path, [$($r:tt)+]) => {{
        let Weights {
            encoder: e,
            app: a,
            gait: g,
            fusion: f,
        } = $w;
        vec![
            $seg { name: "encoder.w1", shape: mat_shape(&e.w1), data: e.w1.$matfn() },
            $seg { name: "encoder.b1", shape: vec_shape(&e.b1), data: $($r)+ e.b1 },
            $seg { name: "encoder.bn_scale", shape: vec_shape(&e.bn_scale), data: $($r)+ e.bn_scale },
            $seg { name: "encoder.bn_shift", shape: vec_shape(&e.bn_shift), data: $($r)+ e.bn_shift },
            $seg { name: "encoder.prelu", shape: (1, 1), data: $scalar($($r)+ e.prelu) },
            $seg { name: "encoder.w2", shape: mat_shape(&e.w2), data: e.w2.$matfn() },
            $seg { name: "encoder.b2", shape: vec_shape(&e.b2), data: $($r)+ e.b2 },
            $seg { name: "app.alpha", shape: vec_shape(&a.alpha), data: $($r)+ a.alpha },
            $seg { name: "app.w", shape: mat_shape(&a.w), data: a.w.$matfn() },
            $seg { name: "app.b", shape: vec_shape(&a.b), data: $($r)+ a.b },
            $seg { name: "app.prelu", shape: (1, 1), data: $scalar($($r)+ a.prelu) },
            $seg { name: "app.omega", shape: vec_shape(&a.omega), data: $($r)+ a.omega },
            $seg { name: "app.omega_bias", shape: (1, 1), data: $scalar($($r)+ a.omega_bias) },
            $seg { name: "gait.alpha", shape: vec_shape(&g.alpha), data: $($r)+ g.alpha },
            $seg { name: "gait.w", shape: mat_shape(&g.w), data: g.w.$matfn() },
            $seg { name: "gait.b", shape: vec_shape(&g.b), data: $($r)+ g.b },
            $seg { name: "gait.prelu", shape: (1, 1), data: $scalar($($r)+ g.prelu) },
            $seg { name: "gait.omega", shape: vec_shape(&g.omega), data: $($r)+ g.omega },
            $seg { name: "gait.omega_bias", shape: (1, 1), data: $scalar($($r)+ g.omega_bias) },
            $seg { name: "fusion.omega0", shape: vec_shape(&f.omega0), data: $($r)+ f.omega0 },
            $seg { name: "fusion.bias", shape: (1, 1), data: $scalar($($r)+ f.bias) },
        ]
    }};
}

impl Weights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let branch = |edge_dim: usize| BranchWeights {
            alpha: vec![0.0; edge_dim],
            w: Matrix::zeros(cfg.out_dim, cfg.embed_dim),
            b: vec![0.0; cfg.out_dim],
            prelu: 0.0,
            omega: vec![0.0; cfg.out_dim],
            omega_bias: 0.0,
        };
        Self {
            encoder: EncoderWeights {
                w1: Matrix::zeros(cfg.hidden_dim, 2),
                b1: vec![0.0; cfg.hidden_dim],
                bn_scale: vec![0.0; cfg.hidden_dim],
                bn_shift: vec![0.0; cfg.hidden_dim],
                prelu: 0.0,
                w2: Matrix::zeros(cfg.embed_dim, cfg.hidden_dim),
                b2: vec![0.0; cfg.embed_dim],
            },
            app: branch(cfg.app_edge_dim),
            gait: branch(cfg.gait_edge_dim),
            fusion: FusionWeights {
                omega0: vec![0.0; cfg.embed_dim],
                bias: 0.0,
            },
        }
    }

    /// All tensors in a fixed order.
    pub fn segments(&self) -> Vec<Segment<'_>> {
        weight_segments!(self, Segment, as_slice, std::slice::from_ref, [&])
    }

    pub fn segments_mut(&mut self) -> Vec<SegmentMut<'_>> {
        weight_segments!(self, SegmentMut, as_mut_slice, std::slice::from_mut, [&mut])
    }

    pub fn num_params(&self) -> usize {
        self.segments().iter().map(|s| s.data.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.segments().iter().flat_map(|s| s.data.iter().copied()).collect()
    }

    /// Overwrites every tensor from a flat vector in [`Weights::segments`] order.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut at = 0;
        for seg in self.segments_mut() {
            let n = seg.data.len();
            seg.data.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Weights) {
        for (dst, src) in self.segments_mut().into_iter().zip(other.segments()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for seg in self.segments_mut() {
            seg.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn same_shape(&self, other: &Weights) -> bool {
        self.segments()
            .iter()
            .zip(other.segments())
            .all(|(a, b)| a.shape == b.shape)
    }
}

/// Learnable weights plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Weights,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl ModelParams {
    /// Seeded initialization: linear layers uniform in `±1/√fan_in`,
    /// batch-norm scale 1 and shift 0, PReLU slopes 0.25, attention vectors zero.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Weights::zeros(&config);
        let mut fill = |data: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for v in data {
                *v = rng.random_range(-bound..=bound);
            }
        };
        let (h, d) = (config.hidden_dim, config.embed_dim);
        fill(w.encoder.w1.as_mut_slice(), 2);
        fill(&mut w.encoder.b1, 2);
        w.encoder.bn_scale.fill(1.0);
        w.encoder.prelu = 0.25;
        fill(w.encoder.w2.as_mut_slice(), h);
        fill(&mut w.encoder.b2, h);
        for branch in [&mut w.app, &mut w.gait] {
            fill(branch.w.as_mut_slice(), d);
            fill(&mut branch.b, d);
            branch.prelu = 0.25;
            fill(&mut branch.omega, config.out_dim);
            fill(std::slice::from_mut(&mut branch.omega_bias), config.out_dim);
        }
        fill(&mut w.fusion.omega0, d);
        fill(std::slice::from_mut(&mut w.fusion.bias), d);
        Self {
            running_mean: vec![0.0; h],
            running_var: vec![1.0; h],
            config,
            weights: w,
        }
    }

    /// Folds one training forward's batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, trace: &EncoderTrace) {
        let Some(stats) = &trace.batch_stats else {
            return;
        };
        let m = self.config.bn_momentum;
        let k = trace.s0.rows();
        let correction = if k > 1 { k as f64 / (k - 1) as f64 } else { 1.0 };
        for i in 0..self.running_mean.len() {
            self.running_mean[i] = (1.0 - m) * self.running_mean[i] + m * stats.mean[i];
            self.running_var[i] = (1.0 - m) * self.running_var[i] + m * stats.var[i] * correction;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and a dropout mask drawn from `seed`.
    Train { seed: u64 },
    /// Running statistics, no dropout.
    Eval,
}

#[inline]
fn prelu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance over the K rows.
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderTrace {
    pub s0: Matrix,
    pub z1: Matrix,
    pub batch_stats: Option<BatchStats>,
    pub inv_std: Vec<f64>,
    pub xhat: Matrix,
    pub y: Matrix,
    /// Inverted-dropout multipliers (0 or `1/(1−p)`), train mode only.
    pub mask: Option<Matrix>,
    pub q: Matrix,
    pub s: Matrix,
}

/// Stacks `(s_app, s_gait)` into the K×2 input of the encoder.
pub fn similarity_matrix(cand: &CandidateSet) -> Matrix {
    let mut m = Matrix::zeros(cand.len(), 2);
    for k in 0..cand.len() {
        m.set(k, 0, cand.s_app[k]);
        m.set(k, 1, cand.s_gait[k]);
    }
    m
}

pub fn encoder_forward(s0: &Matrix, params: &ModelParams, mode: Mode) -> Result<EncoderTrace> {
    let cfg = &params.config;
    let e = &params.weights.encoder;
    let (k_rows, h, d) = (s0.rows(), cfg.hidden_dim, cfg.embed_dim);
    if k_rows == 0 || s0.cols() != 2 {
        return Err(Error::Shape(format!(
            "encoder input must be K×2 with K ≥ 1, got {}×{}",
            k_rows,
            s0.cols()
        )));
    }

    let mut z1 = Matrix::zeros(k_rows, h);
    for k in 0..k_rows {
        let x = s0.row(k);
        for i in 0..h {
            z1.set(k, i, e.b1[i] + dot(e.w1.row(i), x));
        }
    }

    let (mean, var, batch_stats) = match mode {
        Mode::Train { .. } => {
            let mut mean = vec![0.0; h];
            let mut var = vec![0.0; h];
            for i in 0..h {
                let mu = (0..k_rows).map(|k| z1.get(k, i)).sum::<f64>() / k_rows as f64;
                let v = (0..k_rows).map(|k| (z1.get(k, i) - mu).powi(2)).sum::<f64>()
                    / k_rows as f64;
                mean[i] = mu;
                var[i] = v;
            }
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
            };
            (mean, var, Some(stats))
        }
        Mode::Eval => (params.running_mean.clone(), params.running_var.clone(), None),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + cfg.bn_eps).sqrt()).collect();

    let mut xhat = Matrix::zeros(k_rows, h);
    let mut y = Matrix::zeros(k_rows, h);
    for k in 0..k_rows {
        for i in 0..h {
            let xh = (z1.get(k, i) - mean[i]) * inv_std[i];
            xhat.set(k, i, xh);
            y.set(k, i, e.bn_scale[i] * xh + e.bn_shift[i]);
        }
    }

    let mask = match mode {
        Mode::Train { seed } if cfg.dropout > 0.0 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let keep = 1.0 / (1.0 - cfg.dropout);
            let mut m = Matrix::zeros(k_rows, h);
            for v in m.as_mut_slice() {
                *v = if rng.random::<f64>() < cfg.dropout { 0.0 } else { keep };
            }
            Some(m)
        }
        _ => None,
    };

    let mut q = Matrix::zeros(k_rows, h);
    for k in 0..k_rows {
        for i in 0..h {
            let a = prelu(y.get(k, i), e.prelu);
            let m = mask.as_ref().map_or(1.0, |m| m.get(k, i));
            q.set(k, i, a * m);
        }
    }

    let mut s = Matrix::zeros(k_rows, d);
    for k in 0..k_rows {
        for j in 0..d {
            s.set(k, j, e.b2[j] + dot(e.w2.row(j), q.row(k)));
        }
    }

    Ok(EncoderTrace {
        s0: s0.clone(),
        z1,
        batch_stats,
        inv_std,
        xhat,
        y,
        mask,
        q,
        s,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnTrace {
    /// `U = S·Wᵀ`, K × out.
    pub u: Matrix,
    /// Per node, the logits `α·e_jk` of its incoming edges.
    pub logits: Vec<Vec<f64>>,
    /// Per node, the edge weights actually applied.
    pub weights: Vec<Vec<f64>>,
    pub pre: Matrix,
    pub h: Matrix,
}

fn check_graph(graph: &RelationGraph, k_rows: usize, branch: &BranchWeights) -> Result<()> {
    if graph.num_nodes() != k_rows {
        return Err(Error::Shape(format!(
            "graph has {} nodes, node matrix has {k_rows} rows",
            graph.num_nodes()
        )));
    }
    if graph.edge_dim != branch.alpha.len() {
        return Err(Error::Shape(format!(
            "edge features of dim {} vs attention vector of dim {}",
            graph.edge_dim,
            branch.alpha.len()
        )));
    }
    Ok(())
}

fn message_index(mode: MessageSource, source: usize, target: usize) -> usize {
    match mode {
        MessageSource::Neighbor => source,
        MessageSource::Target => target,
    }
}

/// One edge-attentive GCN layer over `node_features` (K × embed).
pub fn gcn_forward(
    graph: &RelationGraph,
    node_features: &Matrix,
    branch: &BranchWeights,
    config: &ModelConfig,
) -> Result<GcnTrace> {
    let k_rows = node_features.rows();
    check_graph(graph, k_rows, branch)?;
    if node_features.cols() != branch.w.cols() {
        return Err(Error::Shape(format!(
            "node features of width {} vs GCN input width {}",
            node_features.cols(),
            branch.w.cols()
        )));
    }
    let out = branch.w.rows();

    let mut u = Matrix::zeros(k_rows, out);
    for k in 0..k_rows {
        for o in 0..out {
            u.set(k, o, dot(branch.w.row(o), node_features.row(k)));
        }
    }

    let mut logits = Vec::with_capacity(k_rows);
    let mut weights = Vec::with_capacity(k_rows);
    let mut pre = Matrix::zeros(k_rows, out);
    let mut h = Matrix::zeros(k_rows, out);
    for k in 0..k_rows {
        let feats = &graph.edge_features[k];
        let z: Vec<f64> = feats.iter_rows().map(|e| dot(&branch.alpha, e)).collect();
        let w = match config.attention {
            AttentionMode::Softmax => {
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exp.iter().sum();
                exp.into_iter().map(|v| v / total).collect()
            }
            AttentionMode::Raw => z.clone(),
        };
        let row = pre.row_mut(k);
        row.copy_from_slice(&branch.b);
        for (&j, &wj) in graph.incoming[k].iter().zip(&w) {
            axpy(wj, u.row(message_index(config.message, j, k)), row);
        }
        for o in 0..out {
            h.set(k, o, prelu(pre.get(k, o), branch.prelu));
        }
        logits.push(z);
        weights.push(w);
    }
    Ok(GcnTrace {
        u,
        logits,
        weights,
        pre,
        h,
    })
}

/// Affine confidence head, one score per node.
pub fn confidence_head(h: &Matrix, branch: &BranchWeights) -> Vec<f64> {
    h.iter_rows()
        .map(|row| dot(&branch.omega, row) + branch.omega_bias)
        .collect()
}

/// Confidence-weighted fusion of the two similarities plus the linear term on `S`.
pub fn fuse_similarity(
    c_app: &[f64],
    s_app: &[f64],
    c_gait: &[f64],
    s_gait: &[f64],
    s: &Matrix,
    fusion: &FusionWeights,
) -> Vec<f64> {
    (0..c_app.len())
        .map(|k| c_app[k] * s_app[k] + c_gait[k] * s_gait[k] + dot(&fusion.omega0, s.row(k)) + fusion.bias)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub encoder: EncoderTrace,
    pub app: GcnTrace,
    pub gait: GcnTrace,
    pub s_app: Vec<f64>,
    pub s_gait: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Fused similarities.
    pub s: Vec<f64>,
    pub c_app: Vec<f64>,
    pub c_gait: Vec<f64>,
    pub trace: ForwardTrace,
}

pub fn model_forward(
    cand: &CandidateSet,
    graphs: &GraphPair,
    params: &ModelParams,
    mode: Mode,
) -> Result<ForwardOutput> {
    let s0 = similarity_matrix(cand);
    let encoder = encoder_forward(&s0, params, mode)?;
    let cfg = &params.config;
    let app = gcn_forward(&graphs.app, &encoder.s, &params.weights.app, cfg)?;
    let gait = gcn_forward(&graphs.gait, &encoder.s, &params.weights.gait, cfg)?;
    let c_app = confidence_head(&app.h, &params.weights.app);
    let c_gait = confidence_head(&gait.h, &params.weights.gait);
    let s = fuse_similarity(
        &c_app,
        &cand.s_app,
        &c_gait,
        &cand.s_gait,
        &encoder.s,
        &params.weights.fusion,
    );
    Ok(ForwardOutput {
        s,
        c_app,
        c_gait,
        trace: ForwardTrace {
            encoder,
            app,
            gait,
            s_app: cand.s_app.clone(),
            s_gait: cand.s_gait.clone(),
        },
    })
}

/// Upstream gradients of the loss with respect to the model outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    pub s: Vec<f64>,
    pub c_app: Vec<f64>,
    pub c_gait: Vec<f64>,
}

impl OutputGrads {
    pub fn zeros(k: usize) -> Self {
        Self {
            s: vec![0.0; k],
            c_app: vec![0.0; k],
            c_gait: vec![0.0; k],
        }
    }
}

/// Backpropagates one graph branch: head, PReLU, attention and the linear map.
/// Accumulates into `grad` and `d_nodes` (K × embed).
#[allow(clippy::too_many_arguments)]
fn branch_backward(
    graph: &RelationGraph,
    nodes: &Matrix,
    trace: &GcnTrace,
    branch: &BranchWeights,
    config: &ModelConfig,
    d_conf: &[f64],
    grad: &mut BranchWeights,
    d_nodes: &mut Matrix,
) {
    let k_rows = nodes.rows();
    let out = branch.w.rows();
    let mut d_u = Matrix::zeros(k_rows, out);
    let mut d_pre = vec![0.0; out];
    for k in 0..k_rows {
        let dc = d_conf[k];
        grad.omega_bias += dc;
        axpy(dc, trace.h.row(k), &mut grad.omega);
        for o in 0..out {
            let dh = dc * branch.omega[o];
            let p = trace.pre.get(k, o);
            if p > 0.0 {
                d_pre[o] = dh;
            } else {
                d_pre[o] = dh * branch.prelu;
                grad.prelu += dh * p;
            }
        }
        for o in 0..out {
            grad.b[o] += d_pre[o];
        }

        let sources = &graph.incoming[k];
        let w = &trace.weights[k];
        let mut d_w = Vec::with_capacity(sources.len());
        for (&j, &wj) in sources.iter().zip(w) {
            let m = message_index(config.message, j, k);
            d_w.push(dot(&d_pre, trace.u.row(m)));
            axpy(wj, &d_pre, d_u.row_mut(m));
        }
        let d_z: Vec<f64> = match config.attention {
            AttentionMode::Softmax => {
                let inner: f64 = w.iter().zip(&d_w).map(|(a, b)| a * b).sum();
                w.iter().zip(&d_w).map(|(wi, dwi)| wi * (dwi - inner)).collect()
            }
            AttentionMode::Raw => d_w,
        };
        for (e, dz) in graph.edge_features[k].iter_rows().zip(d_z) {
            axpy(dz, e, &mut grad.alpha);
        }
    }
    for k in 0..k_rows {
        for o in 0..out {
            let du = d_u.get(k, o);
            if du != 0.0 {
                axpy(du, nodes.row(k), grad.w.row_mut(o));
                axpy(du, branch.w.row(o), d_nodes.row_mut(k));
            }
        }
    }
}

fn encoder_backward(
    trace: &EncoderTrace,
    enc: &EncoderWeights,
    d_s: &Matrix,
    grad: &mut EncoderWeights,
) {
    let k_rows = trace.s0.rows();
    let h = enc.w1.rows();
    let d = enc.w2.rows();

    let mut d_q = Matrix::zeros(k_rows, h);
    for k in 0..k_rows {
        for j in 0..d {
            let g = d_s.get(k, j);
            grad.b2[j] += g;
            axpy(g, trace.q.row(k), grad.w2.row_mut(j));
            axpy(g, enc.w2.row(j), d_q.row_mut(k));
        }
    }

    let mut d_xhat = Matrix::zeros(k_rows, h);
    for k in 0..k_rows {
        for i in 0..h {
            let m = trace.mask.as_ref().map_or(1.0, |m| m.get(k, i));
            let d_act = d_q.get(k, i) * m;
            let y = trace.y.get(k, i);
            let d_y = if y > 0.0 {
                d_act
            } else {
                grad.prelu += d_act * y;
                d_act * enc.prelu
            };
            grad.bn_scale[i] += d_y * trace.xhat.get(k, i);
            grad.bn_shift[i] += d_y;
            d_xhat.set(k, i, d_y * enc.bn_scale[i]);
        }
    }

    let mut d_z = Matrix::zeros(k_rows, h);
    let kf = k_rows as f64;
    for i in 0..h {
        let inv = trace.inv_std[i];
        if trace.batch_stats.is_some() {
            let sum: f64 = (0..k_rows).map(|k| d_xhat.get(k, i)).sum();
            let sum_x: f64 = (0..k_rows).map(|k| d_xhat.get(k, i) * trace.xhat.get(k, i)).sum();
            for k in 0..k_rows {
                let v = inv / kf * (kf * d_xhat.get(k, i) - sum - trace.xhat.get(k, i) * sum_x);
                d_z.set(k, i, v);
            }
        } else {
            for k in 0..k_rows {
                d_z.set(k, i, d_xhat.get(k, i) * inv);
            }
        }
    }

    for k in 0..k_rows {
        let x = trace.s0.row(k);
        for i in 0..h {
            let g = d_z.get(k, i);
            grad.b1[i] += g;
            axpy(g, x, grad.w1.row_mut(i));
        }
    }
}

/// Exact gradients of a scalar loss with respect to every learnable weight,
/// given the loss's gradients with respect to the forward outputs.
pub fn model_backward(
    params: &ModelParams,
    graphs: &GraphPair,
    output: &ForwardOutput,
    upstream: &OutputGrads,
) -> Result<Weights> {
    let trace = &output.trace;
    let k_rows = trace.encoder.s.rows();
    let cfg = &params.config;
    if upstream.s.len() != k_rows || upstream.c_app.len() != k_rows || upstream.c_gait.len() != k_rows
    {
        return Err(Error::Shape(format!(
            "upstream gradients do not match K = {k_rows}"
        )));
    }
    if trace.encoder.s.cols() != cfg.embed_dim
        || trace.encoder.z1.cols() != cfg.hidden_dim
        || trace.app.h.cols() != cfg.out_dim
        || trace.gait.h.cols() != cfg.out_dim
    {
        return Err(Error::Shape("trace does not match the model configuration".into()));
    }
    check_graph(&graphs.app, k_rows, &params.weights.app)?;
    check_graph(&graphs.gait, k_rows, &params.weights.gait)?;

    let w = &params.weights;
    let mut grad = Weights::zeros(cfg);
    let s_nodes = &trace.encoder.s;

    // fusion: s = c_a·s_a + c_b·s_b + ω0·S + b0
    let mut d_c_app = upstream.c_app.clone();
    let mut d_c_gait = upstream.c_gait.clone();
    let mut d_s_nodes = Matrix::zeros(k_rows, cfg.embed_dim);
    for k in 0..k_rows {
        let ds = upstream.s[k];
        d_c_app[k] += ds * trace.s_app[k];
        d_c_gait[k] += ds * trace.s_gait[k];
        grad.fusion.bias += ds;
        axpy(ds, s_nodes.row(k), &mut grad.fusion.omega0);
        axpy(ds, &w.fusion.omega0, d_s_nodes.row_mut(k));
    }

    branch_backward(
        &graphs.app,
        s_nodes,
        &trace.app,
        &w.app,
        cfg,
        &d_c_app,
        &mut grad.app,
        &mut d_s_nodes,
    );
    branch_backward(
        &graphs.gait,
        s_nodes,
        &trace.gait,
        &w.gait,
        cfg,
        &d_c_gait,
        &mut grad.gait,
        &mut d_s_nodes,
    );
    encoder_backward(&trace.encoder, &w.encoder, &d_s_nodes, &mut grad.encoder);
    Ok(grad)
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a flat parameter slice. `step` is the
/// 1-based update count.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    s: &AdamSettings,
) {
    let bc1 = 1.0 - s.beta1.powf(step as f64);
    let bc2 = 1.0 - s.beta2.powf(step as f64);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g;
        v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= s.lr * m_hat / (v_hat.sqrt() + s.eps);
    }
}

/// Adam state over a full [`Weights`] set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub settings: AdamSettings,
    pub step: u64,
    pub m: Weights,
    pub v: Weights,
}

impl Adam {
    pub fn new(settings: AdamSettings, like: &Weights) -> Self {
        let mut m = like.clone();
        m.scale(0.0);
        Self {
            settings,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step(&mut self, weights: &mut Weights, grads: &Weights) -> Result<()> {
        if !weights.same_shape(grads) || !weights.same_shape(&self.m) {
            return Err(Error::Shape("gradient shapes do not match the parameters".into()));
        }
        for seg in grads.segments() {
            if seg.data.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(seg.name.to_string()));
            }
        }
        self.step += 1;
        let segs = weights
            .segments_mut()
            .into_iter()
            .zip(grads.segments())
            .zip(self.m.segments_mut())
            .zip(self.v.segments_mut());
        for (((p, g), m), v) in segs {
            adam_update(p.data, g.data, m.data, v.data, self.step, &self.settings);
        }
        Ok(())
    }
}
