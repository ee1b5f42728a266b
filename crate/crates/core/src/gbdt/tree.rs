//! Depth-limited regression trees grown level by level with exact greedy
//! splits over presorted feature columns.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go to `left`.
    Internal { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

/// A binary regression tree stored as a pre-order node arena (root at 0).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn leaf(value: f64) -> Self {
        Self { nodes: vec![TreeNode::Leaf { value }] }
    }

    pub fn split(feature: usize, threshold: f64, left: RegressionTree, right: RegressionTree) -> Self {
        let offset_left = 1;
        let offset_right = 1 + left.nodes.len();
        let mut nodes = Vec::with_capacity(offset_right + right.nodes.len());
        nodes.push(TreeNode::Internal { feature, threshold, left: offset_left, right: offset_right });
        nodes.extend(left.nodes.into_iter().map(|n| shift(n, offset_left)));
        nodes.extend(right.nodes.into_iter().map(|n| shift(n, offset_right)));
        Self { nodes }
    }

    /// Builds from pre-order node records; `Err` if the records do not form
    /// exactly one complete tree.
    pub(crate) fn from_preorder(nodes: Vec<TreeNode>) -> Result<Self, String> {
        fn check(nodes: &[TreeNode], i: usize) -> Result<usize, String> {
            match nodes.get(i) {
                None => Err("incomplete tree".into()),
                Some(TreeNode::Leaf { .. }) => Ok(i + 1),
                Some(TreeNode::Internal { left, right, .. }) => {
                    if *left != i + 1 {
                        return Err(format!("node {i}: left child is not next in pre-order"));
                    }
                    let after_left = check(nodes, *left)?;
                    if *right != after_left {
                        return Err(format!("node {i}: right child out of pre-order"));
                    }
                    check(nodes, *right)
                }
            }
        }
        if check(&nodes, 0)? != nodes.len() {
            return Err("extra nodes after tree".into());
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Internal { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn height(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Internal { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub(crate) fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let TreeNode::Leaf { value } = n {
                *value *= factor;
            }
        }
    }

    pub(crate) fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Internal { feature, .. } => Some(*feature),
                TreeNode::Leaf { .. } => None,
            })
            .max()
    }
}

fn shift(n: TreeNode, by: usize) -> TreeNode {
    match n {
        TreeNode::Internal { feature, threshold, left, right } => {
            TreeNode::Internal { feature, threshold, left: left + by, right: right + by }
        }
        leaf => leaf,
    }
}

/// Column-major training matrix with per-feature row orderings, shared by
/// every tree of one boosting run.
pub(crate) struct Presorted {
    pub columns: Vec<Vec<f64>>,
    pub order: Vec<Vec<u32>>,
    /// `sorted[f][j] == columns[f][order[f][j]]`.
    pub sorted: Vec<Vec<f64>>,
    /// `inv_count[n] == 1 / n`, with `inv_count[0] == 0`.
    inv_count: Vec<f64>,
}

impl Presorted {
    pub fn new(rows: impl Iterator<Item = impl AsRef<[f64]>>, n_features: usize) -> Self {
        let mut columns = vec![Vec::new(); n_features];
        for r in rows {
            for (c, &v) in columns.iter_mut().zip(r.as_ref()) {
                c.push(v);
            }
        }
        let order = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect::<Vec<Vec<u32>>>();
        let sorted = columns
            .iter()
            .zip(&order)
            .map(|(col, idx)| idx.iter().map(|&r| col[r as usize]).collect())
            .collect();
        let n = columns.first().map_or(0, Vec::len);
        let inv_count = (0..=n).map(|c| if c == 0 { 0.0 } else { 1.0 / c as f64 }).collect();
        Self { columns, order, sorted, inv_count }
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

const NO_NODE: u32 = u32::MAX;
const MIN_GAIN: f64 = 1e-9;

pub(crate) struct TreeConfig {
    pub max_depth: usize,
    pub l2_reg: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
}

/// Running left-side totals of one node during a sweep over a feature.
struct ScanState {
    g_tot: f64,
    n_tot: usize,
    parent_term: f64,
    left_g: f64,
    left_n: usize,
    last_v: f64,
}

enum Building {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

/// Grows one tree on `grad`, choosing splits that maximise the reduction in
/// squared error of the gradient, with leaf values
/// `learning_rate * sum(grad) / (sum(hess) + l2_reg)`.
///
/// Returns the tree and each training row's leaf value.
pub(crate) fn grow_tree(
    data: &Presorted,
    grad: &[f64],
    hess: &[f64],
    cfg: &TreeConfig,
) -> (RegressionTree, Vec<f64>) {
    let n = data.n_rows();
    let n_features = data.columns.len();

    let mut built: Vec<Option<Building>> = vec![None];
    // Per active node: (arena id, sum_g, sum_h, count).
    let mut active: Vec<(usize, f64, f64, usize)> =
        vec![(0, grad.iter().sum(), hess.iter().sum(), n)];
    let mut slot_of_row: Vec<u32> = vec![0; n];
    let mut leaf_of_row: Vec<usize> = vec![0; n];

    let mut scan: Vec<ScanState> = Vec::new();

    for _level in 0..cfg.max_depth {
        if active.is_empty() {
            break;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; active.len()];
        let mut best_gain = vec![MIN_GAIN; active.len()];
        for f in 0..n_features {
            scan.clear();
            scan.extend(active.iter().map(|&(_, g, _, c)| ScanState {
                g_tot: g,
                n_tot: c,
                parent_term: g * g * data.inv_count[c],
                left_g: 0.0,
                left_n: 0,
                last_v: f64::NEG_INFINITY,
            }));
            for (&r, &v) in data.order[f].iter().zip(&data.sorted[f]) {
                let r = r as usize;
                let slot = slot_of_row[r];
                if slot == NO_NODE {
                    continue;
                }
                let st = &mut scan[slot as usize];
                if v > st.last_v && st.left_n > 0 {
                    let gl = st.left_g;
                    let gr = st.g_tot - gl;
                    let gain = gl * gl * data.inv_count[st.left_n] + gr * gr * data.inv_count[st.n_tot - st.left_n]
                        - st.parent_term;
                    let bg = &mut best_gain[slot as usize];
                    if gain > *bg {
                        *bg = gain;
                        let lo = st.last_v;
                        let mut threshold = lo + (v - lo) / 2.0;
                        if !(threshold < v) {
                            threshold = lo;
                        }
                        best[slot as usize] = Some(Candidate { feature: f, threshold });
                    }
                }
                st.left_g += grad[r];
                st.left_n += 1;
                st.last_v = v;
            }
        }

        // Children for the next level, two per split node.
        let mut next: Vec<(usize, f64, f64, usize)> = Vec::new();
        let mut child_slot: Vec<Option<(u32, u32)>> = vec![None; active.len()];
        for (s, &(id, g, h, _)) in active.iter().enumerate() {
            match best[s] {
                Some(c) => {
                    let left = built.len();
                    built.push(None);
                    built.push(None);
                    built[id] = Some(Building::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right: left + 1,
                    });
                    child_slot[s] = Some((next.len() as u32, next.len() as u32 + 1));
                    next.push((left, 0.0, 0.0, 0));
                    next.push((left + 1, 0.0, 0.0, 0));
                }
                None => {
                    built[id] = Some(Building::Leaf { value: leaf_value(g, h, cfg) });
                }
            }
        }
        for r in 0..n {
            let s = slot_of_row[r];
            if s == NO_NODE {
                continue;
            }
            match (child_slot[s as usize], best[s as usize]) {
                (Some((ls, rs)), Some(c)) => {
                    let to = if data.columns[c.feature][r] <= c.threshold { ls } else { rs };
                    let child = &mut next[to as usize];
                    child.1 += grad[r];
                    child.2 += hess[r];
                    child.3 += 1;
                    slot_of_row[r] = to;
                }
                _ => {
                    leaf_of_row[r] = active[s as usize].0;
                    slot_of_row[r] = NO_NODE;
                }
            }
        }
        active = next;
    }
    for &(id, g, h, _) in &active {
        built[id] = Some(Building::Leaf { value: leaf_value(g, h, cfg) });
    }
    for r in 0..n {
        let s = slot_of_row[r];
        if s != NO_NODE {
            leaf_of_row[r] = active[s as usize].0;
        }
    }

    let row_values = leaf_of_row
        .iter()
        .map(|&id| match built[id] {
            Some(Building::Leaf { value }) => value,
            _ => unreachable!("rows end in leaves"),
        })
        .collect();

    fn to_tree(built: &[Option<Building>], id: usize) -> RegressionTree {
        match built[id].as_ref().expect("every node resolved") {
            Building::Leaf { value } => RegressionTree::leaf(*value),
            Building::Split { feature, threshold, left, right } => RegressionTree::split(
                *feature,
                *threshold,
                to_tree(built, *left),
                to_tree(built, *right),
            ),
        }
    }
    (to_tree(&built, 0), row_values)
}

fn leaf_value(sum_g: f64, sum_h: f64, cfg: &TreeConfig) -> f64 {
    cfg.learning_rate * sum_g / (sum_h + cfg.l2_reg)
}
