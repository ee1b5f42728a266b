use rayon::prelude::*;

use super::{argmax, fit, GbdtModel, GbdtParams};
use crate::dataio::{train_test_split, Dataset};
use crate::error::{Error, Result};

/// Hyperparameter grid; every combination is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub depths: Vec<usize>,
    pub iterations: Vec<usize>,
    pub learning_rates: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            depths: (3..=7).collect(),
            iterations: vec![50, 100, 150, 200],
            learning_rates: vec![0.1, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

impl GridSpec {
    pub fn single(params: &GbdtParams) -> Self {
        Self {
            depths: vec![params.depth],
            iterations: vec![params.iterations],
            learning_rates: vec![params.learning_rate],
        }
    }

    pub fn n_combinations(&self) -> usize {
        self.depths.len() * self.iterations.len() * self.learning_rates.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_combinations() == 0 {
            return Err(Error::InvalidArgument("hyperparameter grid is empty".into()));
        }
        for &depth in &self.depths {
            for &iterations in &self.iterations {
                for &learning_rate in &self.learning_rates {
                    GbdtParams { depth, iterations, learning_rate, ..GbdtParams::default() }.validate()?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    pub params: GbdtParams,
    pub correct: usize,
    pub total: usize,
}

impl GridEntry {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best_params: GbdtParams,
    /// The winning configuration refit on the whole training set.
    pub model: GbdtModel,
    /// Every combination, ordered by depth, then iterations, then learning rate.
    pub report: Vec<GridEntry>,
}

/// [`grid_search_with`] using the default L2 leaf regularisation.
pub fn grid_search(
    train: &Dataset,
    grid: &GridSpec,
    validation_fraction: f64,
    seed: u64,
) -> Result<GridSearchResult> {
    grid_search_with(train, grid, validation_fraction, seed, &GbdtParams::default())
}

/// Exhaustive search scored on a stratified validation slice of `train`.
/// Settings outside the grid (`l2_leaf_reg`) come from `base`.
///
/// The best validation accuracy wins; ties go to the lower depth, then fewer
/// iterations, then the lower learning rate. Models sharing a depth and
/// learning rate are prefixes of one another, so each such pair is fit once
/// at the largest iteration count and scored at every checkpoint.
pub fn grid_search_with(
    train: &Dataset,
    grid: &GridSpec,
    validation_fraction: f64,
    seed: u64,
    base: &GbdtParams,
) -> Result<GridSearchResult> {
    grid.validate()?;
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation_fraction must lie in (0, 1), got {validation_fraction}"
        )));
    }
    let split = train_test_split(train, 1.0 - validation_fraction, seed)?;
    let (fit_set, val_set) = if split.test.is_empty() {
        log::warn!("validation slice is empty; scoring grid on the training rows");
        (&split.train, &split.train)
    } else {
        (&split.train, &split.test)
    };

    let max_iter = *grid.iterations.iter().max().expect("validated non-empty");
    let mut checkpoints = grid.iterations.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();

    let pairs: Vec<(usize, f64)> = grid
        .depths
        .iter()
        .flat_map(|&d| grid.learning_rates.iter().map(move |&lr| (d, lr)))
        .collect();
    let scored: Vec<Vec<usize>> = pairs
        .par_iter()
        .map(|&(depth, learning_rate)| {
            let params = GbdtParams { depth, learning_rate, iterations: max_iter, seed, ..*base };
            let model = fit(fit_set, &params)?;
            Ok(correct_at_checkpoints(&model, val_set, &checkpoints))
        })
        .collect::<Result<_>>()?;

    let mut report = Vec::with_capacity(grid.n_combinations());
    for &depth in &grid.depths {
        for &iterations in &grid.iterations {
            for &learning_rate in &grid.learning_rates {
                let pair = pairs
                    .iter()
                    .position(|&(d, lr)| d == depth && lr == learning_rate)
                    .expect("pair enumerated");
                let cp = checkpoints.binary_search(&iterations).expect("checkpoint enumerated");
                report.push(GridEntry {
                    params: GbdtParams { depth, iterations, learning_rate, seed, ..*base },
                    correct: scored[pair][cp],
                    total: val_set.n_rows(),
                });
            }
        }
    }

    let best = report
        .iter()
        .min_by(|a, b| {
            b.correct
                .cmp(&a.correct)
                .then(a.params.depth.cmp(&b.params.depth))
                .then(a.params.iterations.cmp(&b.params.iterations))
                .then(a.params.learning_rate.total_cmp(&b.params.learning_rate))
        })
        .expect("non-empty grid")
        .params;
    let model = fit(train, &best)?;
    Ok(GridSearchResult { best_params: best, model, report })
}

/// Validation hits after each checkpoint iteration count, accumulating
/// margins tree by tree.
fn correct_at_checkpoints(model: &GbdtModel, val: &Dataset, checkpoints: &[usize]) -> Vec<usize> {
    let k = model.n_classes();
    let mut margins: Vec<f64> = (0..val.n_rows()).flat_map(|_| model.base_scores().iter().copied()).collect();
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut done = 0;
    let mut probs = vec![0.0; k];
    for &cp in checkpoints {
        for it in done..cp {
            for (i, row) in val.rows().enumerate() {
                for c in 0..k {
                    margins[i * k + c] += model.tree(it, c).predict(row);
                }
            }
        }
        done = cp;
        let correct = margins
            .chunks_exact(k)
            .zip(val.labels())
            .filter(|(m, &y)| {
                probs.copy_from_slice(m);
                super::softmax_in_place(&mut probs);
                argmax(&probs) == y
            })
            .count();
        out.push(correct);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gaussian_blobs, numbered_labels, BlobSpec};

    fn blobs() -> Dataset {
        let spec = BlobSpec { separation: 2.5, ..BlobSpec::balanced(3, 60, 4) };
        gaussian_blobs(&spec, numbered_labels(3)).unwrap()
    }

    #[test]
    fn default_grid_has_one_hundred_points() {
        let g = GridSpec::default();
        assert_eq!(g.n_combinations(), 100);
        assert!(g.validate().is_ok());
    }

    #[test]
    fn empty_or_invalid_grid_rejected() {
        let d = blobs();
        let empty = GridSpec { depths: vec![], ..GridSpec::default() };
        assert!(grid_search(&d, &empty, 0.25, 0).is_err());
        let bad = GridSpec { learning_rates: vec![2.0], ..GridSpec::default() };
        assert!(bad.validate().is_err());
        let single = GridSpec::single(&GbdtParams::default());
        assert!(grid_search(&d, &single, 1.0, 0).is_err());
    }

    #[test]
    fn single_combination_wins() {
        let d = blobs();
        let p = GbdtParams { depth: 2, iterations: 5, learning_rate: 0.3, ..GbdtParams::default() };
        let r = grid_search(&d, &GridSpec::single(&p), 0.25, 1).unwrap();
        assert_eq!(r.report.len(), 1);
        assert_eq!((r.best_params.depth, r.best_params.iterations), (2, 5));
        assert_eq!(r.best_params.learning_rate, 0.3);
        assert_eq!(r.model, fit(&d, &GbdtParams { seed: 1, ..p }).unwrap());
    }

    #[test]
    fn checkpoint_scores_match_truncated_refits() {
        let d = blobs();
        let grid = GridSpec { depths: vec![1, 2], iterations: vec![8, 2, 5], learning_rates: vec![0.5, 0.2] };
        let r = grid_search(&d, &grid, 0.25, 3).unwrap();
        assert_eq!(r.report.len(), 12);
        let split = train_test_split(&d, 0.75, 3).unwrap();
        for e in &r.report {
            let m = fit(&split.train, &e.params).unwrap();
            let hits = split
                .test
                .rows()
                .zip(split.test.labels())
                .filter(|(x, &y)| m.predict(x).unwrap() == y)
                .count();
            assert_eq!(hits, e.correct, "{:?}", e.params);
        }
    }

    #[test]
    fn ties_prefer_smaller_settings() {
        // Far-apart blobs: every configuration is perfect on validation.
        let spec = BlobSpec { separation: 30.0, ..BlobSpec::balanced(2, 40, 4) };
        let d = gaussian_blobs(&spec, numbered_labels(2)).unwrap();
        let grid = GridSpec { depths: vec![4, 2], iterations: vec![10, 3], learning_rates: vec![0.9, 0.4] };
        let r = grid_search(&d, &grid, 0.25, 0).unwrap();
        assert!(r.report.iter().all(|e| e.correct == e.total));
        assert_eq!((r.best_params.depth, r.best_params.iterations), (2, 3));
        assert_eq!(r.best_params.learning_rate, 0.4);
    }
}
