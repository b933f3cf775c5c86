//! Compare the hand-written backward pass with central finite differences
//! on one small random query.

use conf_rerank::graph::build_relation_graphs;
use conf_rerank::loss::{total_loss, LossInputs};
use conf_rerank::net::{model_backward, model_forward, Mode, ModelConfig, ModelParams};
use conf_rerank::ranking::{minmax_similarity, CandidateSet, Hyperparams};
use conf_rerank::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let k = 12;
    let mut random = |rows: usize, cols: usize| {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let (app, gait) = (random(k, 10)?, random(k, 6)?);
    let dist_app: Vec<f64> = app.iter_rows().map(|r| r[0] + 1.0).collect();
    let dist_gait: Vec<f64> = gait.iter_rows().map(|r| r[0] + 1.0).collect();
    let cand = CandidateSet {
        indices: (0..k).collect(),
        s_app: minmax_similarity(&dist_app),
        s_gait: minmax_similarity(&dist_gait),
        dist_app,
        dist_gait,
        labels: (0..k).map(|i| i % 3 == 0).collect(),
    };
    let graphs = build_relation_graphs(&app, &gait, 3)?;
    let hp = Hyperparams {
        hidden_dim: 8,
        embed_dim: 6,
        gcn_out_dim: 5,
        ..Hyperparams::default()
    };
    let mut params = ModelParams::init(ModelConfig::new(&hp, app.cols(), gait.cols()), 3);
    let mode = Mode::Train { seed: 11 };

    let loss = |p: &ModelParams| -> anyhow::Result<f64> {
        let out = model_forward(&cand, &graphs, p, mode)?;
        let (b, _) = total_loss(LossInputs {
            s: &out.s,
            c_app: &out.c_app,
            c_gait: &out.c_gait,
            s_app: &cand.s_app,
            s_gait: &cand.s_gait,
            labels: &cand.labels,
            epsilon: hp.epsilon,
        })?;
        Ok(b.total)
    };

    let out = model_forward(&cand, &graphs, &params, mode)?;
    let (_, upstream) = total_loss(LossInputs {
        s: &out.s,
        c_app: &out.c_app,
        c_gait: &out.c_gait,
        s_app: &cand.s_app,
        s_gait: &cand.s_gait,
        labels: &cand.labels,
        epsilon: hp.epsilon,
    })?;
    let analytic = model_backward(&params, &graphs, &out, &upstream)?;

    let step = 1e-5;
    println!("{:<20} {:>5} {:>12} {:>12}", "tensor", "size", "max |grad|", "max abs err");
    let mut offset = 0;
    let base = params.weights.to_flat();
    let grads = analytic.to_flat();
    for seg in analytic.segments() {
        let (mut largest, mut worst) = (0.0f64, 0.0f64);
        for i in offset..offset + seg.data.len() {
            let mut flat = base.clone();
            flat[i] = base[i] + step;
            params.weights.set_flat(&flat)?;
            let up = loss(&params)?;
            flat[i] = base[i] - step;
            params.weights.set_flat(&flat)?;
            let down = loss(&params)?;
            let numeric = (up - down) / (2.0 * step);
            largest = largest.max(grads[i].abs());
            worst = worst.max((grads[i] - numeric).abs());
        }
        params.weights.set_flat(&base)?;
        println!("{:<20} {:>5} {:>12.3e} {:>12.1e}", seg.name, seg.data.len(), largest, worst);
        offset += seg.data.len();
    }
    Ok(())
}
