//! Transductive edge splits and exclusion-aware negative sampling.
//!
//! Each role (train, val, test) owns a message-passing edge set, held-out
//! positive edges and sampled negatives. The message-passing sets nest:
//! validation sees the training graph plus the training positives, and the
//! test graph adds the validation positives on top of that.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, Graph};

/// Independent ChaCha stream `stream` under `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SHUFFLE_STREAM: u64 = 1;
const EVAL_NEG_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Train, val and test positive fractions.
    pub ratios: [f64; 3],
    /// Share of the train portion held out as supervision edges.
    pub disjoint_train_fraction: f64,
    /// Eval negatives sampled per positive, for val and test respectively.
    pub negative_pool_ratio: [f64; 2],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: [0.8, 0.1, 0.1],
            disjoint_train_fraction: 0.2,
            negative_pool_ratio: [1.0, 1.0],
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.ratios.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return bad(format!("split ratios must lie in (0,1), got {:?}", self.ratios));
        }
        if (self.ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split ratios must sum to 1, got {:?}", self.ratios));
        }
        if !(self.disjoint_train_fraction > 0.0 && self.disjoint_train_fraction < 1.0) {
            return bad(format!(
                "disjoint_train_fraction must lie in (0,1), got {}",
                self.disjoint_train_fraction
            ));
        }
        if self.negative_pool_ratio.iter().any(|&r| !(r >= 1.0) || !r.is_finite()) {
            return bad(format!(
                "negative_pool_ratio must be finite and at least 1, got {:?}",
                self.negative_pool_ratio
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoleSplit {
    /// Undirected, sorted.
    pub message_passing: Vec<Edge>,
    pub positives: Vec<Edge>,
    pub negatives: Vec<Edge>,
}

impl RoleSplit {
    /// Message-passing edges counted in both directions.
    pub fn directed_mp_count(&self) -> usize {
        2 * self.message_passing.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSplit {
    pub num_nodes: usize,
    pub config: SplitConfig,
    pub train: RoleSplit,
    pub val: RoleSplit,
    pub test: RoleSplit,
}

/// Sizes of the positive sets: `(train, val, test)`, plus the train
/// message-passing count. Val and test are floored; train positives are the
/// disjoint fraction of the remainder rounded to nearest.
pub fn split_sizes(num_edges: usize, cfg: &SplitConfig) -> Result<(usize, usize, usize, usize)> {
    cfg.validate()?;
    let test = (cfg.ratios[2] * num_edges as f64).floor() as usize;
    let val = (cfg.ratios[1] * num_edges as f64).floor() as usize;
    let rest = num_edges - test - val;
    let train = (cfg.disjoint_train_fraction * rest as f64).round() as usize;
    if test == 0 || val == 0 || train == 0 {
        return Err(Error::TooFewEdges(format!(
            "{num_edges} edges leave a role without positives (train {train}, val {val}, test {test})"
        )));
    }
    Ok((train, val, test, rest - train))
}

pub fn transductive_split(g: &Graph, cfg: &SplitConfig) -> Result<EdgeSplit> {
    let (n_train, n_val, n_test, _) = split_sizes(g.num_edges(), cfg)?;
    let mut edges = g.edges().to_vec();
    edges.shuffle(&mut seeded_rng(cfg.seed, SHUFFLE_STREAM));

    let sorted = |s: &[Edge]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    let test_pos = sorted(&edges[..n_test]);
    let val_pos = sorted(&edges[n_test..n_test + n_val]);
    let train_pos = sorted(&edges[n_test + n_val..n_test + n_val + n_train]);
    let train_mp = sorted(&edges[n_test + n_val + n_train..]);
    let val_mp = sorted(&[train_mp.as_slice(), &train_pos].concat());
    let test_mp = sorted(&[val_mp.as_slice(), &val_pos].concat());

    // Eval negatives avoid every graph edge and each other.
    let mut exclusion: HashSet<Edge> = g.edges().iter().copied().collect();
    let mut rng = seeded_rng(cfg.seed, EVAL_NEG_STREAM);
    let n_test_neg = (cfg.negative_pool_ratio[1] * n_test as f64).round() as usize;
    let test_neg = sample_negatives_with(g.num_nodes(), n_test_neg, &exclusion, &mut rng)?;
    exclusion.extend(test_neg.iter().copied());
    let n_val_neg = (cfg.negative_pool_ratio[0] * n_val as f64).round() as usize;
    let val_neg = sample_negatives_with(g.num_nodes(), n_val_neg, &exclusion, &mut rng)?;
    exclusion.extend(val_neg.iter().copied());
    let train_neg = sample_negatives_with(g.num_nodes(), n_train, &exclusion, &mut rng)?;

    Ok(EdgeSplit {
        num_nodes: g.num_nodes(),
        config: *cfg,
        train: RoleSplit {
            message_passing: train_mp,
            positives: train_pos,
            negatives: train_neg,
        },
        val: RoleSplit {
            message_passing: val_mp,
            positives: val_pos,
            negatives: val_neg,
        },
        test: RoleSplit {
            message_passing: test_mp,
            positives: test_pos,
            negatives: test_neg,
        },
    })
}

impl EdgeSplit {
    pub fn role(&self, r: Role) -> &RoleSplit {
        match r {
            Role::Train => &self.train,
            Role::Val => &self.val,
            Role::Test => &self.test,
        }
    }

    /// Every positive edge of every role.
    pub fn all_positives(&self) -> impl Iterator<Item = Edge> + '_ {
        self.train
            .positives
            .iter()
            .chain(&self.val.positives)
            .chain(&self.test.positives)
            .copied()
    }

    /// The full edge set the split was cut from.
    pub fn all_edges(&self) -> HashSet<Edge> {
        self.test
            .message_passing
            .iter()
            .chain(&self.test.positives)
            .copied()
            .collect()
    }

    /// Checks the nesting and disjointness invariants.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(format!("split invariant violated: {m}")));
        for (name, r) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            let mp: HashSet<Edge> = r.message_passing.iter().copied().collect();
            if mp.len() != r.message_passing.len() {
                return fail(&format!("{name} message-passing edges repeat"));
            }
            if r.positives.iter().any(|e| mp.contains(e)) {
                return fail(&format!("{name} positives overlap its message-passing edges"));
            }
            for e in r.message_passing.iter().chain(&r.positives).chain(&r.negatives) {
                if e.hi() >= self.num_nodes {
                    return Err(Error::IndexOutOfRange { index: e.hi(), num_nodes: self.num_nodes });
                }
            }
        }
        let nest = |outer: &[Edge], inner: &[Edge], extra: &[Edge]| {
            let mut v = [inner, extra].concat();
            v.sort_unstable();
            v == outer
        };
        if !nest(&self.val.message_passing, &self.train.message_passing, &self.train.positives) {
            return fail("val message passing != train message passing ∪ train positives");
        }
        if !nest(&self.test.message_passing, &self.val.message_passing, &self.val.positives) {
            return fail("test message passing != val message passing ∪ val positives");
        }
        let edges = self.all_edges();
        for r in [&self.train, &self.val, &self.test] {
            let mut seen = HashSet::new();
            for e in &r.negatives {
                if e.is_loop() || edges.contains(e) || !seen.insert(*e) {
                    return fail("negatives must be unique non-edges without self-loops");
                }
            }
        }
        Ok(())
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read_manifest(path: &Path) -> Result<EdgeSplit> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let split: EdgeSplit = serde_json::from_str(&s).map_err(|e| Error::parse("split manifest", path, e))?;
        split.validate()?;
        Ok(split)
    }
}

/// Uniform sample of `count` distinct unordered non-loop pairs outside
/// `exclusion`.
pub fn sample_negatives(g: &Graph, count: usize, exclusion: &HashSet<Edge>, seed: u64) -> Result<Vec<Edge>> {
    sample_negatives_with(g.num_nodes(), count, exclusion, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// As [`sample_negatives`], drawing from a caller-owned generator.
pub fn sample_negatives_with<R: Rng>(
    num_nodes: usize,
    count: usize,
    exclusion: &HashSet<Edge>,
    rng: &mut R,
) -> Result<Vec<Edge>> {
    let n = num_nodes;
    let total = n * n.saturating_sub(1) / 2;
    let excluded = exclusion.iter().filter(|e| !e.is_loop() && e.hi() < n).count();
    let available = total - excluded;
    if count > available {
        return Err(Error::InfeasibleSampling { requested: count, available });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if count * 2 <= available {
        // Rejection: every accepted draw is uniform over the remaining pairs.
        let mut chosen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let e = Edge::new(i, j);
            if !exclusion.contains(&e) && chosen.insert(e) {
                out.push(e);
            }
        }
        return Ok(out);
    }
    // Dense regime: enumerate the candidates and pick a subset.
    let mut candidates = Vec::with_capacity(available);
    for i in 0..n {
        for j in i + 1..n {
            let e = Edge::new(i, j);
            if !exclusion.contains(&e) {
                candidates.push(e);
            }
        }
    }
    Ok(sample(rng, candidates.len(), count)
        .into_iter()
        .map(|k| candidates[k])
        .collect())
}

/// Role positives labelled 1 followed by as many role negatives labelled 0.
pub fn make_eval_set(role: &RoleSplit) -> Result<(Vec<Edge>, Vec<f64>)> {
    let p = role.positives.len();
    if p == 0 {
        return Err(Error::TooFewEdges("evaluation role has no positives".into()));
    }
    if role.negatives.len() < p {
        return Err(Error::InfeasibleSampling {
            requested: p,
            available: role.negatives.len(),
        });
    }
    let edges: Vec<Edge> = role.positives.iter().chain(&role.negatives[..p]).copied().collect();
    let labels = (0..2 * p).map(|k| if k < p { 1.0 } else { 0.0 }).collect();
    Ok((edges, labels))
}
