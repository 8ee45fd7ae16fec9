//! Ranking metrics and the edge-gradient diagnostics built on them.
//!
//! Gradient separability (GS) ranks evaluation edges by the squared norm of
//! their edge gradient at each message-passing state. Its orientation is the
//! reverse of a link predictor's: negatives are the class ranked high, so
//! `GS = 1` means every negative edge has a larger gradient than every
//! positive one.
//!
//! Metrics that can be undefined on a subset (an empty class-mix subset, for
//! instance) are returned as `Option<f64>`, never as a silent 0.5.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{edge_gradient_sq_norm, partition_by_class, Edge, NormalizedAdjacency};
use crate::model::LayerTrace;

/// Area under the ROC curve via mid-ranks (Mann–Whitney U), ties credited ½.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dims("auroc", scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("AUROC on NaN scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]].total_cmp(&scores[order[start]]) == Ordering::Equal {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share their mean
        let mid = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&k| labels[k]).count();
        rank_sum_pos += mid * pos_in_group as f64;
        start = end;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// AUROC of positive-class scores against negative-class scores.
pub fn auroc_split(pos: &[f64], neg: &[f64]) -> Result<f64> {
    let scores: Vec<f64> = pos.iter().chain(neg).copied().collect();
    let mut labels = vec![true; pos.len()];
    labels.resize(pos.len() + neg.len(), false);
    auroc(&scores, &labels)
}

/// GS from squared gradient norms: positives are class 0, negatives class 1.
pub fn gs_from_norms(pos_norms: &[f64], neg_norms: &[f64]) -> Result<f64> {
    auroc_split(neg_norms, pos_norms)
}

/// `‖(∇H)_ij‖²` for every edge.
pub fn edge_sq_norms(h: &crate::tensor::Tensor2, adj: &NormalizedAdjacency, edges: &[Edge]) -> Result<Vec<f64>> {
    if h.rows() != adj.num_nodes() {
        return Err(Error::dims("edge_sq_norms", adj.num_nodes(), h.rows()));
    }
    edges
        .iter()
        .map(|&e| {
            if e.hi() >= h.rows() {
                return Err(Error::IndexOutOfRange { index: e.hi(), num_nodes: h.rows() });
            }
            Ok(edge_gradient_sq_norm(h, adj, e))
        })
        .collect()
}

/// Same-class or cross-class edge subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMix {
    Hm,
    Ht,
}

fn filter_mix(edges: &[Edge], labels: &[usize], mix: ClassMix) -> Vec<Edge> {
    let p = partition_by_class(edges, labels);
    match mix {
        ClassMix::Hm => p.hm,
        ClassMix::Ht => p.ht,
    }
}

fn check_edges(edges: &[Edge], n: usize) -> Result<()> {
    match edges.iter().find(|e| e.hi() >= n) {
        Some(e) => Err(Error::IndexOutOfRange { index: e.hi(), num_nodes: n }),
        None => Ok(()),
    }
}

/// Five-number summary with linearly interpolated quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn as_array(&self) -> [f64; 5] {
        [self.min, self.q1, self.median, self.q3, self.max]
    }
}

pub fn distribution_summary(values: &[f64]) -> Option<FiveNumber> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    };
    Some(FiveNumber {
        min: v[0],
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsLayer {
    pub layer: usize,
    pub gs: f64,
    pub gs_hm_hm: Option<f64>,
    pub gs_ht_ht: Option<f64>,
    pub pos: FiveNumber,
    pub neg: FiveNumber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsTrace {
    pub layers: Vec<GsLayer>,
}

impl GsTrace {
    pub fn first(&self) -> &GsLayer {
        &self.layers[0]
    }

    pub fn last(&self) -> &GsLayer {
        self.layers.last().expect("trace has H⁰")
    }

    /// CSV with header `layer,gs,gs_hm_hm,gs_ht_ht,pos_q0..q4,neg_q0..q4`;
    /// undefined subset values are written as `NA`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,gs,gs_hm_hm,gs_ht_ht");
        for pol in ["pos", "neg"] {
            for q in 0..5 {
                let _ = write!(s, ",{pol}_q{q}");
            }
        }
        s.push('\n');
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
        for l in &self.layers {
            let _ = write!(s, "{},{},{},{}", l.layer, l.gs, opt(l.gs_hm_hm), opt(l.gs_ht_ht));
            for v in l.pos.as_array().iter().chain(l.neg.as_array().iter()) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// GS at every state of `trace`, plus the same-mix variants and norm summaries.
pub fn gradient_separability(
    trace: &LayerTrace,
    adj: &NormalizedAdjacency,
    pos_edges: &[Edge],
    neg_edges: &[Edge],
    labels: &[usize],
) -> Result<GsTrace> {
    if pos_edges.is_empty() || neg_edges.is_empty() {
        return Err(Error::UndefinedMetric("gradient separability needs positive and negative edges".into()));
    }
    check_edges(pos_edges, labels.len())?;
    check_edges(neg_edges, labels.len())?;
    let hm_hm = gs_subset(trace, adj, pos_edges, neg_edges, labels, ClassMix::Hm, ClassMix::Hm)?;
    let ht_ht = gs_subset(trace, adj, pos_edges, neg_edges, labels, ClassMix::Ht, ClassMix::Ht)?;
    let mut layers = Vec::with_capacity(trace.len());
    for (t, h) in trace.states.iter().enumerate() {
        let pos = edge_sq_norms(h, adj, pos_edges)?;
        let neg = edge_sq_norms(h, adj, neg_edges)?;
        layers.push(GsLayer {
            layer: t,
            gs: gs_from_norms(&pos, &neg)?,
            gs_hm_hm: hm_hm[t],
            gs_ht_ht: ht_ht[t],
            pos: distribution_summary(&pos).expect("non-empty"),
            neg: distribution_summary(&neg).expect("non-empty"),
        });
    }
    Ok(GsTrace { layers })
}

/// GS restricted to positives of mix `u` and negatives of mix `v`, per state.
/// `None` marks states where either filtered set is empty.
pub fn gs_subset(
    trace: &LayerTrace,
    adj: &NormalizedAdjacency,
    pos_edges: &[Edge],
    neg_edges: &[Edge],
    labels: &[usize],
    u: ClassMix,
    v: ClassMix,
) -> Result<Vec<Option<f64>>> {
    check_edges(pos_edges, labels.len())?;
    check_edges(neg_edges, labels.len())?;
    let pos = filter_mix(pos_edges, labels, u);
    let neg = filter_mix(neg_edges, labels, v);
    trace
        .states
        .iter()
        .map(|h| {
            if pos.is_empty() || neg.is_empty() {
                return Ok(None);
            }
            let p = edge_sq_norms(h, adj, &pos)?;
            let n = edge_sq_norms(h, adj, &neg)?;
            gs_from_norms(&p, &n).map(Some)
        })
        .collect()
}

/// AUROC restricted to class-mix subsets, positives ranked high.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMixAuc {
    pub hm_hm: Option<f64>,
    pub hm_ht: Option<f64>,
    pub ht_hm: Option<f64>,
    pub ht_ht: Option<f64>,
}

pub fn class_mix_auc(
    pos_scores: &[f64],
    neg_scores: &[f64],
    pos_edges: &[Edge],
    neg_edges: &[Edge],
    labels: &[usize],
) -> Result<ClassMixAuc> {
    if pos_scores.len() != pos_edges.len() || neg_scores.len() != neg_edges.len() {
        return Err(Error::dims(
            "class_mix_auc",
            format!("{} pos / {} neg scores", pos_edges.len(), neg_edges.len()),
            format!("{} / {}", pos_scores.len(), neg_scores.len()),
        ));
    }
    check_edges(pos_edges, labels.len())?;
    check_edges(neg_edges, labels.len())?;
    let same = |e: &Edge| labels[e.lo()] == labels[e.hi()];
    let pick = |scores: &[f64], edges: &[Edge], mix: ClassMix| -> Vec<f64> {
        scores
            .iter()
            .zip(edges)
            .filter(|(_, e)| same(e) == (mix == ClassMix::Hm))
            .map(|(&s, _)| s)
            .collect()
    };
    let auc = |u: ClassMix, v: ClassMix| -> Result<Option<f64>> {
        let p = pick(pos_scores, pos_edges, u);
        let n = pick(neg_scores, neg_edges, v);
        if p.is_empty() || n.is_empty() {
            return Ok(None);
        }
        auroc_split(&p, &n).map(Some)
    };
    Ok(ClassMixAuc {
        hm_hm: auc(ClassMix::Hm, ClassMix::Hm)?,
        hm_ht: auc(ClassMix::Hm, ClassMix::Ht)?,
        ht_hm: auc(ClassMix::Ht, ClassMix::Hm)?,
        ht_ht: auc(ClassMix::Ht, ClassMix::Ht)?,
    })
}
