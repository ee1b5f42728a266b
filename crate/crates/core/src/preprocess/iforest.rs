use std::fmt;

use rand::Rng as _;
use rand::seq::index;
use rayon::prelude::*;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_N_TREES: usize = 100;
pub const DEFAULT_SUBSAMPLE_SIZE: usize = 256;
pub const DEFAULT_CONTAMINATION: f64 = 0.05;

const EULER_GAMMA: f64 = 0.5772156649;

/// Average path length of an unsuccessful BST search over `n` points; the
/// normaliser `c(n)` for isolation depths.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

/// `2^(-mean_depth / c(psi))`.
pub fn score_from_mean_depth(mean_depth: f64, subsample_size: usize) -> f64 {
    2f64.powf(-mean_depth / average_path_length(subsample_size))
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split { feature: usize, value: f64, left: usize, right: usize },
    Leaf { size: usize },
}

/// A random isolation tree, stored as a pre-order node arena.
#[derive(Debug, Clone, PartialEq)]
pub struct IsolationTree {
    nodes: Vec<Node>,
}

impl IsolationTree {
    fn build(
        data: &Dataset,
        rows: &mut [usize],
        height_limit: usize,
        rng: &mut rng::Rng,
    ) -> Self {
        let mut tree = Self { nodes: Vec::new() };
        tree.grow(data, rows, 0, height_limit, rng);
        tree
    }

    fn grow(
        &mut self,
        data: &Dataset,
        rows: &mut [usize],
        depth: usize,
        height_limit: usize,
        rng: &mut rng::Rng,
    ) -> usize {
        let id = self.nodes.len();
        if depth >= height_limit || rows.len() <= 1 {
            self.nodes.push(Node::Leaf { size: rows.len() });
            return id;
        }
        let ranges: Vec<(usize, f64, f64)> = (0..data.n_features())
            .filter_map(|f| {
                let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    let v = data.row(r)[f];
                    (lo.min(v), hi.max(v))
                });
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            self.nodes.push(Node::Leaf { size: rows.len() });
            return id;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let value = loop {
            let v = lo + rng.random::<f64>() * (hi - lo);
            if v > lo && v < hi {
                break v;
            }
        };
        let mut cut = 0;
        for i in 0..rows.len() {
            if data.row(rows[i])[feature] < value {
                rows.swap(i, cut);
                cut += 1;
            }
        }
        self.nodes.push(Node::Split { feature, value, left: 0, right: 0 });
        let (l, r) = rows.split_at_mut(cut);
        let left = self.grow(data, l, depth + 1, height_limit, rng);
        let right = self.grow(data, r, depth + 1, height_limit, rng);
        self.nodes[id] = Node::Split { feature, value, left, right };
        id
    }

    /// Edges from the root to the deepest leaf.
    pub fn height(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Depth of the leaf `x` lands in plus the `c(size)` correction for the
    /// points left unseparated there.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        let mut depth = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { size } => return depth as f64 + average_path_length(size),
                Node::Split { feature, value, left, right } => {
                    i = if x[feature] < value { left } else { right };
                    depth += 1;
                }
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForest {
    trees: Vec<IsolationTree>,
    subsample_size: usize,
    n_features: usize,
    normalizer: f64,
}

impl IsolationForest {
    pub fn trees(&self) -> &[IsolationTree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn subsample_size(&self) -> usize {
        self.subsample_size
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn height_limit(&self) -> usize {
        height_limit(self.subsample_size)
    }

    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n_features, "feature vector length");
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        score_from_mean_depth(self.mean_path_length(x), self.subsample_size)
    }
}

fn height_limit(psi: usize) -> usize {
    (psi as f64).log2().ceil() as usize
}

/// Fits `n_trees` isolation trees, each on its own uniform subsample drawn
/// without replacement. Tree `t` uses the random stream `(seed, t)`.
pub fn fit_isolation_forest(
    data: &Dataset,
    n_trees: usize,
    subsample_size: usize,
    seed: u64,
) -> Result<IsolationForest> {
    if data.n_rows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "an isolation forest needs at least 2 rows, got {}",
            data.n_rows()
        )));
    }
    if n_trees == 0 {
        return Err(Error::InvalidArgument("n_trees must be at least 1".into()));
    }
    if subsample_size < 2 {
        return Err(Error::InvalidArgument("subsample_size must be at least 2".into()));
    }
    let psi = subsample_size.min(data.n_rows());
    let limit = height_limit(psi);
    let trees = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, &[0x4946_5354, t as u64]);
            let mut rows = index::sample(&mut rng, data.n_rows(), psi).into_vec();
            IsolationTree::build(data, &mut rows, limit, &mut rng)
        })
        .collect();
    Ok(IsolationForest {
        trees,
        subsample_size: psi,
        n_features: data.n_features(),
        normalizer: average_path_length(psi),
    })
}

/// Anomaly score in (0, 1); higher means easier to isolate.
///
/// Panics if `x` does not have the forest's feature count.
pub fn anomaly_score(forest: &IsolationForest, x: &[f64]) -> f64 {
    forest.score(x)
}

/// Rows removed per class by [`remove_outliers`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemovalReport {
    pub removed: Vec<usize>,
}

impl fmt::Display for RemovalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (class, n) in self.removed.iter().enumerate() {
            writeln!(f, "class_{class}_removed={n}")?;
        }
        Ok(())
    }
}

/// Fits one forest per class and drops that class's
/// `floor(contamination * count)` highest-scoring rows (ties: lower index
/// first). Surviving rows keep their order.
pub fn remove_outliers(
    data: &Dataset,
    contamination: f64,
    n_trees: usize,
    subsample_size: usize,
    seed: u64,
) -> Result<(Dataset, RemovalReport)> {
    if !(0.0..1.0).contains(&contamination) {
        return Err(Error::InvalidArgument(format!(
            "contamination must lie in [0, 1), got {contamination}"
        )));
    }
    let mut keep = vec![true; data.n_rows()];
    let mut removed = vec![0; data.n_classes()];
    for (class, members) in data.class_indices().into_iter().enumerate() {
        let n_remove = (contamination * members.len() as f64 + 1e-9).floor() as usize;
        if n_remove == 0 {
            continue;
        }
        let subset = data.select(&members);
        let forest = fit_isolation_forest(&subset, n_trees, subsample_size, rng::derive_seed(seed, &[class as u64]))?;
        let scores: Vec<f64> = subset.rows().collect::<Vec<_>>().par_iter().map(|r| forest.score(r)).collect();
        let mut order: Vec<usize> = (0..members.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        for &i in &order[..n_remove] {
            keep[members[i]] = false;
        }
        removed[class] = n_remove;
    }
    let kept: Vec<usize> = (0..data.n_rows()).filter(|&i| keep[i]).collect();
    Ok((data.select(&kept), RemovalReport { removed }))
}
