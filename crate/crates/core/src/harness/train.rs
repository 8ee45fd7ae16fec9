//! Full-batch training with early stopping on validation AUROC, and
//! evaluation of a trained model on a split role.

use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, Graph, NormalizedAdjacency};
use crate::metrics::{auroc, class_mix_auc, gradient_separability, ClassMixAuc, GsTrace};
use crate::model::Model;
use crate::optim::{adam_step, AdamState, ParamTensors};
use crate::split::{make_eval_set, sample_negatives_with, seeded_rng, EdgeSplit, Role, RoleSplit};

use super::bench::{measure_inference, InferenceTiming};
use super::config::TrainConfig;

const DROPOUT_STREAM: u64 = 20;
const NEGATIVE_STREAM: u64 = 21;

/// What training may see: the training role, the validation role used for
/// model selection, and the pairs that must never be drawn as negatives.
/// Test supervision is deliberately absent.
pub struct TrainView<'a> {
    pub graph: &'a Graph,
    pub train: &'a RoleSplit,
    pub val: &'a RoleSplit,
    pub exclusion: HashSet<Edge>,
}

impl<'a> TrainView<'a> {
    /// Negatives avoid every graph edge and every frozen evaluation negative.
    pub fn new(graph: &'a Graph, split: &'a EdgeSplit) -> Self {
        let exclusion = graph
            .edges()
            .iter()
            .chain(&split.val.negatives)
            .chain(&split.test.negatives)
            .copied()
            .collect();
        Self {
            graph,
            train: &split.train,
            val: &split.val,
            exclusion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitHistory {
    pub best_val_auroc: f64,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub loss: Vec<f64>,
    pub val_auroc: Vec<f64>,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub role: Role,
    pub auroc: f64,
    pub class_mix: ClassMixAuc,
    pub gs: GsTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub best_val_auroc: f64,
    /// Test AUROC of the parameters selected by validation AUROC.
    pub test_auroc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub loss_history: Vec<f64>,
    pub val_auroc_history: Vec<f64>,
    pub test: EvalMetrics,
    pub train_seconds: f64,
    pub inference: InferenceTiming,
    pub param_count: usize,
    pub config: TrainConfig,
    pub seed: u64,
}

impl RunReport {
    /// The fields that depend only on (graph, split, config, seed).
    pub fn deterministic_part(&self) -> (f64, f64, usize, usize, &[f64], &[f64], &EvalMetrics) {
        (
            self.best_val_auroc,
            self.test_auroc,
            self.best_epoch,
            self.epochs_run,
            &self.loss_history,
            &self.val_auroc_history,
            &self.test,
        )
    }
}

fn check_finite(values: &[f64], epoch: usize) -> Result<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(&loss) => Err(Error::Divergence { epoch, loss }),
        None => Ok(()),
    }
}

fn role_auroc(model: &Model, x: &crate::tensor::Tensor2, adj: &NormalizedAdjacency, edges: &[Edge], labels: &[f64], epoch: usize) -> Result<f64> {
    let scores = model.predict_logits(x, adj, edges)?;
    check_finite(&scores, epoch)?;
    let truth: Vec<bool> = labels.iter().map(|&l| l > 0.5).collect();
    auroc(&scores, &truth)
}

/// Trains a fresh model and returns the parameters with the best validation
/// AUROC. An epoch is one resampling of train negatives, one full-batch
/// gradient step on the train message-passing graph and one validation pass
/// on the val message-passing graph. Stops once more than `patience`
/// consecutive epochs fail to strictly improve the best validation AUROC.
pub fn fit(view: &TrainView<'_>, cfg: &TrainConfig) -> Result<(Model, FitHistory)> {
    cfg.validate()?;
    if view.train.positives.is_empty() {
        return Err(Error::TooFewEdges("no train positives".into()));
    }
    let g = view.graph;
    let n = g.num_nodes();
    let x = g.features();
    let adj_train = NormalizedAdjacency::from_edges(n, &view.train.message_passing);
    let adj_val = NormalizedAdjacency::from_edges(n, &view.val.message_passing);
    let (val_edges, val_labels) = make_eval_set(view.val)?;

    let mut model = Model::new(cfg.graff_config(), g.feature_dim(), cfg.seed)?;
    let mut adam = AdamState::new(&model.params, cfg.lr, cfg.weight_decay);
    let mut dropout_rng = seeded_rng(cfg.seed, DROPOUT_STREAM);
    let mut negative_rng = seeded_rng(cfg.seed, NEGATIVE_STREAM);

    let n_pos = view.train.positives.len();
    let n_neg = ((cfg.neg_ratio * n_pos as f64).round() as usize).max(1);
    let mut labels = vec![1.0; n_pos];
    labels.resize(n_pos + n_neg, 0.0);

    let start = Instant::now();
    let mut best = model.clone();
    let mut hist = FitHistory {
        best_val_auroc: f64::NEG_INFINITY,
        best_epoch: 0,
        epochs_run: 0,
        loss: Vec::new(),
        val_auroc: Vec::new(),
        train_seconds: 0.0,
    };
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        let negatives = sample_negatives_with(n, n_neg, &view.exclusion, &mut negative_rng)?;
        let edges: Vec<Edge> = view.train.positives.iter().copied().chain(negatives).collect();
        let step = model.loss_and_grad(x, &adj_train, &edges, &labels, &mut dropout_rng)?;
        check_finite(&[step.loss], epoch)?;
        adam_step(&mut model.params, &step.grads, &mut adam)?;
        model.update_running_stats(&step.decoder_cache);
        for (_, t) in model.params.tensors() {
            check_finite(t.as_slice(), epoch)?;
        }

        let val = role_auroc(&model, x, &adj_val, &val_edges, &val_labels, epoch)?;
        hist.loss.push(step.loss);
        hist.val_auroc.push(val);
        hist.epochs_run = epoch + 1;
        if val > hist.best_val_auroc {
            hist.best_val_auroc = val;
            hist.best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    hist.train_seconds = start.elapsed().as_secs_f64();
    Ok((best, hist))
}

/// Eval-mode metrics on the balanced evaluation set of `role`, using that
/// role's message-passing graph. AUROC is computed on logits, which order
/// edges exactly like probabilities without saturating.
pub fn evaluate(model: &Model, g: &Graph, split: &EdgeSplit, role: Role) -> Result<EvalMetrics> {
    let r = split.role(role);
    let (edges, labels) = make_eval_set(r)?;
    let adj = NormalizedAdjacency::from_edges(g.num_nodes(), &r.message_passing);
    let scores = model.predict_logits(g.features(), &adj, &edges)?;
    let p = r.positives.len();
    let truth: Vec<bool> = labels.iter().map(|&l| l > 0.5).collect();
    let auc = auroc(&scores, &truth)?;
    let class_mix = class_mix_auc(&scores[..p], &scores[p..], &edges[..p], &edges[p..], g.labels())?;
    let trace = model.trace(g.features(), &adj)?;
    let gs = gradient_separability(&trace, &adj, &edges[..p], &edges[p..], g.labels())?;
    Ok(EvalMetrics {
        role,
        auroc: auc,
        class_mix,
        gs,
    })
}

/// [`fit`] on the train/val view, then test evaluation and timing of the
/// selected parameters.
pub fn train(g: &Graph, split: &EdgeSplit, cfg: &TrainConfig) -> Result<(Model, RunReport)> {
    if split.num_nodes != g.num_nodes() {
        return Err(Error::dims("train split nodes", g.num_nodes(), split.num_nodes));
    }
    let (model, hist) = fit(&TrainView::new(g, split), cfg)?;
    let test = evaluate(&model, g, split, Role::Test)?;
    let inference = measure_inference(&model, g, split, 10)?;
    let report = RunReport {
        best_val_auroc: hist.best_val_auroc,
        test_auroc: test.auroc,
        best_epoch: hist.best_epoch,
        epochs_run: hist.epochs_run,
        loss_history: hist.loss,
        val_auroc_history: hist.val_auroc,
        test,
        train_seconds: hist.train_seconds,
        inference,
        param_count: model.param_count(),
        config: cfg.clone(),
        seed: cfg.seed,
    };
    Ok((model, report))
}
