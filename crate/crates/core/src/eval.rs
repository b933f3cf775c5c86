//! Test-time re-ranking and the clothes-changing / standard protocols.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SequenceRecord, Split};
use crate::error::{Error, Result};
use crate::loss::pseudo_labels;
use crate::net::{model_forward, Mode, ModelParams};
use crate::pipeline::{retrieve, QueryRetrieval, UnitFeatures};
use crate::ranking::Hyperparams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Gallery entries sharing the query's identity and clothes are removed.
    Cc,
    Standard,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Cc => "cc",
            Protocol::Standard => "standard",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cc" => Ok(Protocol::Cc),
            "standard" => Ok(Protocol::Standard),
            other => Err(Error::InvalidArgument(format!("unknown protocol {other:?}"))),
        }
    }
}

/// Fixed-confidence fusions used as reference points for the learned model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// `c_app = 1, c_gait = 0`
    App,
    /// `c_app = 0, c_gait = 1`
    Gait,
    /// `c_app = c_gait = 1`
    Sum,
    /// Confidences set to their pseudo-labels (uses ground truth).
    Oracle,
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "app" => Ok(Baseline::App),
            "gait" => Ok(Baseline::Gait),
            "sum" => Ok(Baseline::Sum),
            "oracle" => Ok(Baseline::Oracle),
            other => Err(Error::InvalidArgument(format!("unknown baseline {other:?}"))),
        }
    }
}

/// How the K candidates of a query are scored.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    Model(&'a ModelParams),
    Fixed(Baseline),
}

impl Scorer<'_> {
    fn needs_graphs(&self) -> bool {
        matches!(self, Scorer::Model(_))
    }

    /// Fused similarity of each candidate.
    pub fn score(&self, retrieval: &QueryRetrieval) -> Result<Vec<f64>> {
        let c = &retrieval.candidates;
        let fixed = |ca: &[f64], cb: &[f64]| -> Vec<f64> {
            (0..c.len()).map(|k| ca[k] * c.s_app[k] + cb[k] * c.s_gait[k]).collect()
        };
        let ones = vec![1.0; c.len()];
        let zeros = vec![0.0; c.len()];
        Ok(match self {
            Scorer::Fixed(Baseline::App) => fixed(&ones, &zeros),
            Scorer::Fixed(Baseline::Gait) => fixed(&zeros, &ones),
            Scorer::Fixed(Baseline::Sum) => fixed(&ones, &ones),
            Scorer::Fixed(Baseline::Oracle) => fixed(
                &pseudo_labels(&c.s_app, &c.labels)?,
                &pseudo_labels(&c.s_gait, &c.labels)?,
            ),
            Scorer::Model(params) => {
                let graphs = retrieval
                    .graphs
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("model scoring needs relation graphs".into()))?;
                model_forward(c, graphs, params, Mode::Eval)?.s
            }
        })
    }
}

/// Gallery records admissible for `query` under `protocol`, as indices
/// into `gallery`.
pub fn filter_gallery(query: &SequenceRecord, gallery: &[&SequenceRecord], protocol: Protocol) -> Vec<usize> {
    gallery
        .iter()
        .enumerate()
        .filter(|(_, g)| match protocol {
            Protocol::Standard => true,
            Protocol::Cc => !(g.person_id == query.person_id && g.clothes_id == query.clothes_id),
        })
        .map(|(i, _)| i)
        .collect()
}

/// Re-ranked gallery of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalRanking {
    pub query: usize,
    /// Manifest indices: the K candidates by fused similarity, then the rest
    /// by appearance rank + gait rank.
    pub order: Vec<usize>,
    pub num_candidates: usize,
}

/// Orders a retrieval given the candidates' fused similarities.
pub fn final_ranking(retrieval: &QueryRetrieval, fused: &[f64]) -> Result<FinalRanking> {
    let cand = &retrieval.candidates;
    if fused.len() != cand.len() {
        return Err(Error::Shape(format!(
            "{} fused scores for {} candidates",
            fused.len(),
            cand.len()
        )));
    }
    let gallery = &retrieval.gallery;
    let mut head: Vec<(f64, usize)> = cand
        .indices
        .iter()
        .zip(fused)
        .map(|(&p, &s)| (s, gallery[p]))
        .collect();
    head.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let pos_app = retrieval.r_app.positions();
    let pos_gait = retrieval.r_gait.positions();
    let mut in_head = vec![false; gallery.len()];
    for &p in &cand.indices {
        in_head[p] = true;
    }
    let mut tail: Vec<(usize, usize, usize)> = (0..gallery.len())
        .filter(|&p| !in_head[p])
        .map(|p| ((pos_app[p] + 1) + (pos_gait[p] + 1), pos_app[p], gallery[p]))
        .collect();
    tail.sort_unstable();

    let order = head
        .iter()
        .map(|&(_, g)| g)
        .chain(tail.iter().map(|&(_, _, g)| g))
        .collect();
    Ok(FinalRanking {
        query: retrieval.query,
        order,
        num_candidates: cand.len(),
    })
}

/// Re-ranks the admissible gallery (manifest indices) of one query.
pub fn rerank(
    dataset: &Dataset,
    unit: &UnitFeatures,
    query: usize,
    admissible: Vec<usize>,
    scorer: Scorer<'_>,
    hp: &Hyperparams,
) -> Result<FinalRanking> {
    let retrieval = retrieve(&dataset.manifest, unit, query, admissible, hp, scorer.needs_graphs())?;
    let fused = scorer.score(&retrieval)?;
    final_ranking(&retrieval, &fused)
}

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi) / 2`.
#[derive(Clone, Copy)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    const ZERO: Self = Self { hi: 0.0, lo: 0.0 };

    fn normalized(a: f64, b: f64) -> Self {
        let hi = a + b;
        Self { hi, lo: b - (hi - a) }
    }

    /// `n / d` for integers exactly representable in `f64`.
    fn ratio(n: f64, d: f64) -> Self {
        let q = n / d;
        let r = (-q).mul_add(d, n);
        Self::normalized(q, r / d)
    }

    fn add(self, other: Self) -> Self {
        let s = self.hi + other.hi;
        let v = s - self.hi;
        let e = (self.hi - (s - v)) + (other.hi - v);
        Self::normalized(s, e + self.lo + other.lo)
    }

    fn div_int(self, d: f64) -> f64 {
        let q = self.hi / d;
        let r = (-q).mul_add(d, self.hi) + self.lo;
        q + r / d
    }
}

/// Mean over relevant positions of precision at that position.
/// `None` when nothing is relevant.
///
/// Accumulated in double-double precision, so the result is the exact
/// rational AP rounded once (e.g. `[1, 0, 1]` gives `5.0 / 6.0`).
pub fn average_precision(relevance: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut total = DoubleDouble::ZERO;
    for (i, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            total = total.add(DoubleDouble::ratio(hits as f64, (i + 1) as f64));
        }
    }
    (hits > 0).then(|| total.div_int(hits as f64))
}

/// 1-based rank of the first relevant item.
pub fn first_hit(relevance: &[bool]) -> Option<usize> {
    relevance.iter().position(|&r| r).map(|p| p + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: Protocol,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub num_queries: usize,
    pub num_skipped: usize,
    #[serde(skip)]
    pub per_query_ap: Vec<f64>,
}

impl MetricsReport {
    /// Aggregates per-query relevance vectors (already in ranked order).
    pub fn from_rankings(protocol: Protocol, relevances: &[Vec<bool>], num_skipped: usize) -> Result<Self> {
        let mut aps = Vec::with_capacity(relevances.len());
        let mut firsts = Vec::with_capacity(relevances.len());
        for rel in relevances {
            let ap = average_precision(rel).ok_or_else(|| {
                Error::InvalidArgument("ranking without a relevant item".into())
            })?;
            aps.push(ap);
            firsts.push(first_hit(rel).unwrap());
        }
        if aps.is_empty() {
            return Err(Error::NoEvaluableQueries { skipped: num_skipped });
        }
        let n = aps.len() as f64;
        let cmc = |k: usize| firsts.iter().filter(|&&f| f <= k).count() as f64 / n;
        Ok(Self {
            protocol,
            map: aps.iter().sum::<f64>() / n,
            rank1: cmc(1),
            rank5: cmc(5),
            rank10: cmc(10),
            num_queries: aps.len(),
            num_skipped,
            per_query_ap: aps,
        })
    }
}

/// Every evaluable query's final ranking under a protocol, in manifest order.
/// Queries without an admissible true match are counted and skipped.
pub fn rerank_all(
    dataset: &Dataset,
    scorer: Scorer<'_>,
    protocol: Protocol,
    hp: &Hyperparams,
) -> Result<(Vec<FinalRanking>, usize)> {
    let manifest = &dataset.manifest;
    let queries = manifest.indices(Split::Query);
    let gallery = manifest.indices(Split::Gallery);
    if queries.is_empty() || gallery.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs query and gallery records".into()));
    }
    let unit = UnitFeatures::new(&dataset.features)?;
    let gallery_records: Vec<&SequenceRecord> = gallery.iter().map(|&g| &manifest.records[g]).collect();

    let results: Vec<Option<FinalRanking>> = queries
        .par_iter()
        .map(|&q| {
            let record = &manifest.records[q];
            let admissible: Vec<usize> = filter_gallery(record, &gallery_records, protocol)
                .into_iter()
                .map(|i| gallery[i])
                .collect();
            if !admissible.iter().any(|&g| manifest.records[g].person_id == record.person_id) {
                return Ok(None);
            }
            rerank(dataset, &unit, q, admissible, scorer, hp).map(Some)
        })
        .collect::<Result<_>>()?;
    let skipped = results.iter().filter(|r| r.is_none()).count();
    Ok((results.into_iter().flatten().collect(), skipped))
}

/// mAP and CMC of a scorer on the dataset's query/gallery splits.
pub fn evaluate(dataset: &Dataset, scorer: Scorer<'_>, protocol: Protocol, hp: &Hyperparams) -> Result<MetricsReport> {
    let (rankings, skipped) = rerank_all(dataset, scorer, protocol, hp)?;
    let records = &dataset.manifest.records;
    let relevances: Vec<Vec<bool>> = rankings
        .iter()
        .map(|r| {
            let person = records[r.query].person_id;
            r.order.iter().map(|&g| records[g].person_id == person).collect()
        })
        .collect();
    MetricsReport::from_rankings(protocol, &relevances, skipped)
}
