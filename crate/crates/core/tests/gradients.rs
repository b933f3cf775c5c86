mod common;

use common::{gradient_mismatches, random_instance, InstanceSpec};
use conf_rerank::loss::{total_loss, LossInputs};
use conf_rerank::net::{model_backward, model_forward, AttentionMode, MessageSource, Mode, OutputGrads};

fn assert_clean(label: &str, seeds: std::ops::Range<u64>, spec: &InstanceSpec, mode: impl Fn(u64) -> Mode) {
    for seed in seeds {
        let inst = random_instance(seed, spec);
        let bad = gradient_mismatches(&inst, mode(seed));
        assert!(bad.is_empty(), "{label}, seed {seed}: {:?}", &bad[..bad.len().min(5)]);
    }
}

#[test]
fn train_mode_matches_central_differences() {
    assert_clean("train", 100..106, &InstanceSpec::default(), |s| Mode::Train { seed: s });
}

#[test]
fn eval_mode_matches_central_differences() {
    assert_clean("eval", 200..204, &InstanceSpec::default(), |_| Mode::Eval);
}

#[test]
fn raw_attention_matches_central_differences() {
    let spec = InstanceSpec {
        attention: AttentionMode::Raw,
        ..InstanceSpec::default()
    };
    assert_clean("raw", 300..304, &spec, |s| Mode::Train { seed: s });
}

#[test]
fn target_messages_match_central_differences() {
    let spec = InstanceSpec {
        message: MessageSource::Target,
        ..InstanceSpec::default()
    };
    assert_clean("target", 400..404, &spec, |s| Mode::Train { seed: s });
}

#[test]
fn tiny_graphs_match_central_differences() {
    // K = 2 leaves one neighbor per node; K = 1 only the self-loop and a
    // degenerate batch.
    for k in [1, 2, 3] {
        let spec = InstanceSpec {
            k,
            ..InstanceSpec::default()
        };
        assert_clean("tiny", 500..502, &spec, |s| Mode::Train { seed: s });
    }
}

#[test]
fn backward_is_linear_in_upstream() {
    let inst = random_instance(7, &InstanceSpec::default());
    let out = model_forward(&inst.cand, &inst.graphs, &inst.params, Mode::Train { seed: 7 }).unwrap();
    let k = inst.cand.len();
    let up = |f: &dyn Fn(usize) -> f64| OutputGrads {
        s: (0..k).map(f).collect(),
        c_app: (0..k).map(|i| f(i + 1)).collect(),
        c_gait: (0..k).map(|i| f(i + 2)).collect(),
    };
    let g1 = up(&|i| (i as f64 * 0.37).sin());
    let g2 = up(&|i| (i as f64 * 0.11).cos());
    let sum = OutputGrads {
        s: g1.s.iter().zip(&g2.s).map(|(a, b)| 2.0 * a - b).collect(),
        c_app: g1.c_app.iter().zip(&g2.c_app).map(|(a, b)| 2.0 * a - b).collect(),
        c_gait: g1.c_gait.iter().zip(&g2.c_gait).map(|(a, b)| 2.0 * a - b).collect(),
    };
    let back = |g: &OutputGrads| model_backward(&inst.params, &inst.graphs, &out, g).unwrap().to_flat();
    let (a, b, c) = (back(&g1), back(&g2), back(&sum));
    for i in 0..a.len() {
        assert!((2.0 * a[i] - b[i] - c[i]).abs() < 1e-10 * (1.0 + c[i].abs()));
    }
    let zero = back(&OutputGrads::zeros(k));
    assert!(zero.iter().all(|&v| v == 0.0));
}

#[test]
fn pseudo_labels_receive_no_gradient() {
    // Targets are constants, so the confidence gradient is just the sign
    // of each residual.
    let inst = random_instance(9, &InstanceSpec::default());
    let out = model_forward(&inst.cand, &inst.graphs, &inst.params, Mode::Eval).unwrap();
    let (b, g) = total_loss(LossInputs {
        s: &out.s,
        c_app: &out.c_app,
        c_gait: &out.c_gait,
        s_app: &inst.cand.s_app,
        s_gait: &inst.cand.s_gait,
        labels: &inst.cand.labels,
        epsilon: 0.2,
    })
    .unwrap();
    for (i, &gi) in g.c_app.iter().enumerate() {
        let r = out.c_app[i] - b.target_app[i];
        let expected = if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 };
        assert_eq!(gi, expected);
    }
}
