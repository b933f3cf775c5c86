//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use conf_rerank::graph::{build_relation_graphs, GraphPair};
use conf_rerank::loss::{total_loss, LossInputs};
use conf_rerank::net::{model_backward, model_forward, AttentionMode, MessageSource, Mode, ModelConfig, ModelParams};
use conf_rerank::ranking::{minmax_similarity, CandidateSet, Hyperparams};
use conf_rerank::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// A candidate set, its graphs and fully randomized parameters.
pub struct Instance {
    pub cand: CandidateSet,
    pub graphs: GraphPair,
    pub params: ModelParams,
    pub epsilon: f64,
}

pub struct InstanceSpec {
    pub k: usize,
    pub d_app: usize,
    pub d_gait: usize,
    pub hidden: usize,
    pub embed: usize,
    pub out: usize,
    pub n: usize,
    pub attention: AttentionMode,
    pub message: MessageSource,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            k: 16,
            d_app: 12,
            d_gait: 6,
            hidden: 8,
            embed: 8,
            out: 8,
            n: 3,
            attention: AttentionMode::Softmax,
            message: MessageSource::Neighbor,
        }
    }
}

pub fn random_instance(seed: u64, spec: &InstanceSpec) -> Instance {
    let mut r = rng(seed);
    let app = random_matrix(&mut r, spec.k, spec.d_app);
    let gait = random_matrix(&mut r, spec.k, spec.d_gait);
    let dist_app: Vec<f64> = (0..spec.k).map(|_| r.random_range(0.0..2.0)).collect();
    let dist_gait: Vec<f64> = (0..spec.k).map(|_| r.random_range(0.0..2.0)).collect();
    let mut labels: Vec<bool> = (0..spec.k).map(|_| r.random_bool(0.3)).collect();
    labels[0] = true;
    if spec.k > 1 {
        labels[1] = false;
    }
    let cand = CandidateSet {
        indices: (0..spec.k).collect(),
        s_app: minmax_similarity(&dist_app),
        s_gait: minmax_similarity(&dist_gait),
        dist_app,
        dist_gait,
        labels,
    };
    let graphs = build_relation_graphs(&app, &gait, spec.n).unwrap();

    let hp = Hyperparams {
        hidden_dim: spec.hidden,
        embed_dim: spec.embed,
        gcn_out_dim: spec.out,
        attention: spec.attention,
        message: spec.message,
        ..Hyperparams::default()
    };
    let mut params = ModelParams::init(ModelConfig::new(&hp, spec.d_app, spec.d_gait), seed ^ 0xABCD);
    let flat: Vec<f64> = params.weights.to_flat().iter().map(|_| r.random_range(-1.0..1.0)).collect();
    params.weights.set_flat(&flat).unwrap();
    for v in &mut params.running_mean {
        *v = r.random_range(-0.5..0.5);
    }
    for v in &mut params.running_var {
        *v = r.random_range(0.2..2.0);
    }
    Instance {
        cand,
        graphs,
        params,
        epsilon: 0.2,
    }
}

impl Instance {
    pub fn loss(&self, params: &ModelParams, mode: Mode) -> f64 {
        let out = model_forward(&self.cand, &self.graphs, params, mode).unwrap();
        let (b, _) = total_loss(LossInputs {
            s: &out.s,
            c_app: &out.c_app,
            c_gait: &out.c_gait,
            s_app: &self.cand.s_app,
            s_gait: &self.cand.s_gait,
            labels: &self.cand.labels,
            epsilon: self.epsilon,
        })
        .unwrap();
        b.total
    }

    pub fn analytic(&self, mode: Mode) -> Vec<f64> {
        let out = model_forward(&self.cand, &self.graphs, &self.params, mode).unwrap();
        let (_, up) = total_loss(LossInputs {
            s: &out.s,
            c_app: &out.c_app,
            c_gait: &out.c_gait,
            s_app: &self.cand.s_app,
            s_gait: &self.cand.s_gait,
            labels: &self.cand.labels,
            epsilon: self.epsilon,
        })
        .unwrap();
        model_backward(&self.params, &self.graphs, &out, &up).unwrap().to_flat()
    }

    pub fn numeric(&self, mode: Mode, step: f64) -> Vec<f64> {
        let base = self.params.weights.to_flat();
        let mut p = self.params.clone();
        (0..base.len())
            .map(|i| {
                let mut x = base.clone();
                x[i] = base[i] + step;
                p.weights.set_flat(&x).unwrap();
                let up = self.loss(&p, mode);
                x[i] = base[i] - step;
                p.weights.set_flat(&x).unwrap();
                let down = self.loss(&p, mode);
                (up - down) / (2.0 * step)
            })
            .collect()
    }
}

/// Names of the flattened parameters, one per scalar.
pub fn flat_names(params: &ModelParams) -> Vec<String> {
    params
        .weights
        .segments()
        .iter()
        .flat_map(|s| (0..s.data.len()).map(move |i| format!("{}[{i}]", s.name)))
        .collect()
}

/// Gradient agreement: `|a − n| ≤ max(rel · max(|a|, |n|), abs)`.
pub fn grads_agree(a: f64, n: f64, rel: f64, abs: f64) -> bool {
    (a - n).abs() <= (rel * a.abs().max(n.abs())).max(abs)
}

/// Mismatching entries as `(name, analytic, numeric)`.
pub fn gradient_mismatches(inst: &Instance, mode: Mode) -> Vec<(String, f64, f64)> {
    let a = inst.analytic(mode);
    let n = inst.numeric(mode, 1e-5);
    flat_names(&inst.params)
        .into_iter()
        .zip(a.into_iter().zip(n))
        .filter(|(_, (a, n))| !grads_agree(*a, *n, 1e-4, 1e-8))
        .map(|(name, (a, n))| (name, a, n))
        .collect()
}
