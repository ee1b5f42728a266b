use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_K_NEIGHBORS: usize = 5;

/// Per-class oversampling targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoteConfig {
    /// class id -> desired row count after resampling.
    pub targets: BTreeMap<usize, usize>,
    pub k_neighbors: usize,
    pub seed: u64,
}

impl SmoteConfig {
    pub fn new(targets: BTreeMap<usize, usize>, k_neighbors: usize, seed: u64) -> Result<Self> {
        if k_neighbors == 0 {
            return Err(Error::InvalidArgument("k_neighbors must be at least 1".into()));
        }
        Ok(Self { targets, k_neighbors, seed })
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` rows of `members` closest to row `of` (excluding `of` itself) by
/// Euclidean distance, ties going to the lower row index.
pub fn k_nearest_in_class(data: &Dataset, members: &[usize], of: usize, k: usize) -> Vec<usize> {
    let x = data.row(of);
    let mut cand: Vec<(f64, usize)> = members
        .iter()
        .filter(|&&j| j != of)
        .map(|&j| (squared_distance(x, data.row(j)), j))
        .collect();
    let k = k.min(cand.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand.into_iter().map(|(_, j)| j).collect()
}

/// Appends `target - count` synthetic rows to every targeted class.
///
/// Each synthetic row is `x + u * (nn - x)` for a uniformly drawn class row
/// `x`, one of its `k` nearest same-class neighbours `nn` and `u ~ U[0, 1)`.
/// `k` is clamped to `count - 1`. Original rows are kept unchanged and in
/// order; synthetic rows follow, grouped by ascending class id.
pub fn smote_resample(data: &Dataset, cfg: &SmoteConfig) -> Result<Dataset> {
    if cfg.k_neighbors == 0 {
        return Err(Error::InvalidArgument("k_neighbors must be at least 1".into()));
    }
    let groups = data.class_indices();
    for (&class, &target) in &cfg.targets {
        let have = groups
            .get(class)
            .ok_or_else(|| Error::InvalidArgument(format!("SMOTE target for unknown class {class}")))?
            .len();
        if target < have {
            return Err(Error::InvalidArgument(format!(
                "SMOTE target {target} for class {class} is below its current count {have}"
            )));
        }
        if target > have && have < 2 {
            return Err(Error::TooFewRows { class_id: class, available: have, required: 2 });
        }
    }

    let mut out = data.clone();
    let mut synthetic = vec![0.0; data.n_features()];
    for (&class, &target) in &cfg.targets {
        let members = &groups[class];
        let needed = target - members.len();
        if needed == 0 {
            continue;
        }
        let k = cfg.k_neighbors.min(members.len() - 1);
        let mut rng = rng::stream(cfg.seed, &[0x534D_4F54, class as u64]);
        let mut neighbours: HashMap<usize, Vec<usize>> = HashMap::new();
        for _ in 0..needed {
            let base = members[rng.random_range(0..members.len())];
            let nn = neighbours
                .entry(base)
                .or_insert_with(|| k_nearest_in_class(data, members, base, k));
            let other = nn[rng.random_range(0..nn.len())];
            let u: f64 = rng.random();
            for ((s, &a), &b) in synthetic.iter_mut().zip(data.row(base)).zip(data.row(other)) {
                *s = a + u * (b - a);
            }
            out.push_row(&synthetic, class);
        }
    }
    Ok(out)
}
