//! Confidence pseudo-labels, confidence loss, triplet ranking loss.
//!
//! The pseudo-label of a candidate with similarity `s` and relevance `b` is
//! `|(1 − b) − s|`: `s` for a true match, `1 − s` otherwise. It is a
//! constant target; no gradient flows from it back to `s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::OutputGrads;

/// Confidence target for one similarity and relevance label.
pub fn pseudo_label(s: f64, positive: bool) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidArgument(format!("similarity {s} outside [0, 1]")));
    }
    let b = if positive { 1.0 } else { 0.0 };
    Ok(((1.0 - b) - s).abs())
}

pub fn pseudo_labels(s: &[f64], labels: &[bool]) -> Result<Vec<f64>> {
    s.iter().zip(labels).map(|(&s, &b)| pseudo_label(s, b)).collect()
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `Σ_k |c̃_app − c_app| + |c̃_gait − c_gait|`.
pub fn confidence_loss(c_app: &[f64], c_gait: &[f64], target_app: &[f64], target_gait: &[f64]) -> f64 {
    let a: f64 = c_app.iter().zip(target_app).map(|(c, t)| (t - c).abs()).sum();
    let b: f64 = c_gait.iter().zip(target_gait).map(|(c, t)| (t - c).abs()).sum();
    a + b
}

/// Sum over all positive/negative pairs of `max(0, ε − (s_p − s_n))`.
///
/// Returns `None` when the labels contain no positive or no negative.
pub fn triplet_loss(s: &[f64], labels: &[bool], epsilon: f64) -> Option<f64> {
    let (pos, neg): (Vec<_>, Vec<_>) = s.iter().zip(labels).partition(|(_, &b)| b);
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for (&sp, _) in &pos {
        for (&sn, _) in &neg {
            total += (epsilon - (sp - sn)).max(0.0);
        }
    }
    Some(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub confidence: f64,
    pub ranking: f64,
    pub total: f64,
    /// False when the ranking term was skipped for lack of positives or negatives.
    pub ranking_applied: bool,
    pub target_app: Vec<f64>,
    pub target_gait: Vec<f64>,
}

/// Inputs to [`total_loss`] for one query.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub s: &'a [f64],
    pub c_app: &'a [f64],
    pub c_gait: &'a [f64],
    pub s_app: &'a [f64],
    pub s_gait: &'a [f64],
    pub labels: &'a [bool],
    pub epsilon: f64,
}

/// `L = L_c + L_r` together with its gradients with respect to the fused
/// similarities and both confidences.
pub fn total_loss(inputs: LossInputs<'_>) -> Result<(LossBreakdown, OutputGrads)> {
    let k = inputs.labels.len();
    for (name, len) in [
        ("s", inputs.s.len()),
        ("c_app", inputs.c_app.len()),
        ("c_gait", inputs.c_gait.len()),
        ("s_app", inputs.s_app.len()),
        ("s_gait", inputs.s_gait.len()),
    ] {
        if len != k {
            return Err(Error::Shape(format!("{name} has length {len}, expected {k}")));
        }
    }
    let target_app = pseudo_labels(inputs.s_app, inputs.labels)?;
    let target_gait = pseudo_labels(inputs.s_gait, inputs.labels)?;
    let confidence = confidence_loss(inputs.c_app, inputs.c_gait, &target_app, &target_gait);
    let ranking = triplet_loss(inputs.s, inputs.labels, inputs.epsilon);

    let mut grads = OutputGrads::zeros(k);
    for i in 0..k {
        grads.c_app[i] = sign(inputs.c_app[i] - target_app[i]);
        grads.c_gait[i] = sign(inputs.c_gait[i] - target_gait[i]);
    }
    if ranking.is_some() {
        for p in (0..k).filter(|&i| inputs.labels[i]) {
            for n in (0..k).filter(|&i| !inputs.labels[i]) {
                if inputs.epsilon - (inputs.s[p] - inputs.s[n]) > 0.0 {
                    grads.s[p] -= 1.0;
                    grads.s[n] += 1.0;
                }
            }
        }
    }

    let ranking_value = ranking.unwrap_or(0.0);
    Ok((
        LossBreakdown {
            confidence,
            ranking: ranking_value,
            total: confidence + ranking_value,
            ranking_applied: ranking.is_some(),
            target_app,
            target_gait,
        },
        grads,
    ))
}
