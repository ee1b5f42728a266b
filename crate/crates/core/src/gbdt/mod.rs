//! Multiclass gradient-boosted decision trees under the softmax objective.
//!
//! Each boosting iteration grows one regression tree per class on the
//! negative gradient `onehot(y) - p` and sets leaf values with a regularised
//! Newton step. If a full step would raise the training log-loss, the
//! iteration's step is halved until it no longer does, so training loss
//! never increases from one iteration to the next.

mod grid;
mod tree;

pub use grid::{grid_search, grid_search_with, GridEntry, GridSearchResult, GridSpec};
pub use tree::{RegressionTree, TreeNode};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use tree::{grow_tree, Presorted, TreeConfig};

const PROB_CLAMP: f64 = 1e-15;
const MAX_STEP_HALVINGS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbdtParams {
    pub depth: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2_leaf_reg: f64,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self { depth: 3, iterations: 50, learning_rate: 0.5, l2_leaf_reg: 3.0, seed: 0 }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::InvalidArgument("depth must be at least 1".into()));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidArgument("iterations must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if !(self.l2_leaf_reg >= 0.0 && self.l2_leaf_reg.is_finite()) {
            return Err(Error::InvalidArgument("l2_leaf_reg must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// A trained boosted ensemble: `iterations x n_classes` trees stored
/// iteration-major, plus per-class base margins (log priors).
#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    params: GbdtParams,
    n_classes: usize,
    n_features: usize,
    base_scores: Vec<f64>,
    trees: Vec<RegressionTree>,
}

impl GbdtModel {
    /// Assembles a model from parts. `params.iterations` must equal the
    /// number of tree rows; zero iterations gives a prior-only model.
    pub fn from_parts(
        params: GbdtParams,
        n_classes: usize,
        n_features: usize,
        base_scores: Vec<f64>,
        trees: Vec<RegressionTree>,
    ) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::InvalidArgument("model needs at least one class".into()));
        }
        if base_scores.len() != n_classes {
            return Err(Error::InvalidArgument(format!(
                "{} base scores for {n_classes} classes",
                base_scores.len()
            )));
        }
        if trees.len() != params.iterations * n_classes {
            return Err(Error::InvalidArgument(format!(
                "{} trees do not fill {} iterations x {n_classes} classes",
                trees.len(),
                params.iterations
            )));
        }
        if let Some(f) = trees.iter().filter_map(RegressionTree::max_feature).max() {
            if f >= n_features {
                return Err(Error::InvalidArgument(format!(
                    "tree splits on feature {f}, model has {n_features}"
                )));
            }
        }
        Ok(Self { params, n_classes, n_features, base_scores, trees })
    }

    pub fn params(&self) -> &GbdtParams {
        &self.params
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn base_scores(&self) -> &[f64] {
        &self.base_scores
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn n_iterations(&self) -> usize {
        self.trees.len() / self.n_classes
    }

    /// Tree for `class` at boosting step `iteration`.
    pub fn tree(&self, iteration: usize, class: usize) -> &RegressionTree {
        &self.trees[iteration * self.n_classes + class]
    }

    /// The model after its first `iterations` boosting steps.
    pub fn truncated(&self, iterations: usize) -> Self {
        let iterations = iterations.min(self.n_iterations());
        Self {
            params: GbdtParams { iterations, ..self.params },
            n_classes: self.n_classes,
            n_features: self.n_features,
            base_scores: self.base_scores.clone(),
            trees: self.trees[..iterations * self.n_classes].to_vec(),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, got: x.len() });
        }
        Ok(())
    }

    /// Raw per-class margins `base + sum of tree outputs`.
    pub fn margins(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut m = self.base_scores.clone();
        for step in self.trees.chunks_exact(self.n_classes) {
            for (mk, t) in m.iter_mut().zip(step) {
                *mk += t.predict(x);
            }
        }
        Ok(m)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut m = self.margins(x)?;
        softmax_in_place(&mut m);
        Ok(m)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }
}

pub fn predict_proba(model: &GbdtModel, x: &[f64]) -> Result<Vec<f64>> {
    model.predict_proba(x)
}

pub fn predict(model: &GbdtModel, x: &[f64]) -> Result<usize> {
    model.predict(x)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_in_place(m: &mut [f64]) {
    let max = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in m.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in m.iter_mut() {
        *v /= sum;
    }
}

fn row_logloss(margins: &[f64], label: usize, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend_from_slice(margins);
    softmax_in_place(scratch);
    -scratch[label].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
}

/// Mean multinomial log-loss, probabilities clamped to `[1e-15, 1 - 1e-15]`.
pub fn logloss(model: &GbdtModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("log-loss of an empty dataset".into()));
    }
    let mut scratch = Vec::with_capacity(model.n_classes);
    let mut total = 0.0;
    for (row, &label) in data.rows().zip(data.labels()) {
        if label >= model.n_classes {
            return Err(Error::InvalidArgument(format!("label {label} outside model classes")));
        }
        total += row_logloss(&model.margins(row)?, label, &mut scratch);
    }
    Ok(total / data.n_rows() as f64)
}

/// A fitted model with its training diagnostics.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub model: GbdtModel,
    /// Training log-loss before the first iteration and after each one.
    pub loss_history: Vec<f64>,
    pub warnings: Vec<String>,
}

pub fn fit(train: &Dataset, params: &GbdtParams) -> Result<GbdtModel> {
    fit_traced(train, params).map(|t| t.model)
}

pub fn fit_traced(train: &Dataset, params: &GbdtParams) -> Result<FitTrace> {
    params.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("cannot fit on an empty dataset".into()));
    }
    let k = train.n_classes();
    if k < 2 {
        return Err(Error::InvalidArgument("classification needs at least two classes".into()));
    }
    let n = train.n_rows();
    let labels = train.labels();
    let counts = train.class_counts();
    let mut warnings = Vec::new();
    if counts.iter().filter(|&&c| c > 0).count() == 1 {
        let msg = format!("training data contains a single class ({})", labels[0]);
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let base_scores: Vec<f64> = counts
        .iter()
        .map(|&c| (c as f64 / n as f64).max(PROB_CLAMP).ln())
        .collect();

    let data = Presorted::new(train.rows(), train.n_features());
    let tree_cfg = TreeConfig {
        max_depth: params.depth,
        l2_reg: params.l2_leaf_reg,
        learning_rate: params.learning_rate,
    };

    let mut margins: Vec<f64> = (0..n).flat_map(|_| base_scores.iter().copied()).collect();
    // Fills `probs` with the softmax of `m` and returns the mean log-loss.
    let loss_of = |m: &[f64], probs: &mut [f64]| {
        probs.copy_from_slice(m);
        let mut total = 0.0;
        for (row, &y) in probs.chunks_exact_mut(k).zip(labels) {
            softmax_in_place(row);
            total -= row[y].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln();
        }
        total / n as f64
    };
    let mut probs = vec![0.0; n * k];
    let mut candidate_probs = vec![0.0; n * k];
    let mut loss = loss_of(&margins, &mut probs);
    let mut loss_history = Vec::with_capacity(params.iterations + 1);
    loss_history.push(loss);

    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.iterations * k);
    let mut candidate = vec![0.0; n * k];
    let mut deltas = vec![0.0; n * k];

    for it in 0..params.iterations {
        let mut step_trees = Vec::with_capacity(k);
        for class in 0..k {
            for i in 0..n {
                let p = probs[i * k + class];
                let y = if labels[i] == class { 1.0 } else { 0.0 };
                grad[i] = y - p;
                hess[i] = p * (1.0 - p);
            }
            let (tree, values) = grow_tree(&data, &grad, &hess, &tree_cfg);
            for (i, v) in values.into_iter().enumerate() {
                deltas[i * k + class] = v;
            }
            step_trees.push(tree);
        }

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_STEP_HALVINGS {
            for ((c, &m), &d) in candidate.iter_mut().zip(&margins).zip(&deltas) {
                *c = m + d * scale;
            }
            let new_loss = loss_of(&candidate, &mut candidate_probs);
            if new_loss <= loss {
                loss = new_loss;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if accepted {
            std::mem::swap(&mut margins, &mut candidate);
            std::mem::swap(&mut probs, &mut candidate_probs);
        } else {
            scale = 0.0;
            log::debug!("iteration {it}: no loss-reducing step, recording zero trees");
        }
        if scale != 1.0 {
            for t in &mut step_trees {
                t.scale_leaves(scale);
            }
        }
        loss_history.push(loss);
        trees.extend(step_trees);
    }

    let model = GbdtModel::from_parts(*params, k, train.n_features(), base_scores, trees)?;
    Ok(FitTrace { model, loss_history, warnings })
}
