//! Canonical binary encoding of boosted models and ensembles. All integers
//! and floats are big-endian; equal models always encode to equal bytes.
//!
//! Model layout:
//!
//! ```text
//! n_classes u32 | n_features u32 | depth u32 | iterations u32
//! learning_rate f64 | l2_leaf_reg f64 | seed u64 | base_scores n_classes x f64
//! trees, iteration-major then class, each in pre-order:
//!   0u8 feature u32 threshold f64   (internal)
//!   1u8 value f64                   (leaf)
//! ```
//!
//! Ensemble layout: `n_members u32`, then per member
//! `device_id u32 | model_len u64 | model bytes`.

use crate::error::WireError;
use crate::gbdt::{GbdtModel, GbdtParams, RegressionTree, TreeNode};

use super::ensemble::EnsembleModel;

const TAG_INTERNAL: u8 = 0;
const TAG_LEAF: u8 = 1;

/// Header bytes before the base scores.
pub const MODEL_HEADER_LEN: usize = 4 * 4 + 8 + 8 + 8;
pub const INTERNAL_NODE_LEN: usize = 1 + 4 + 8;
pub const LEAF_NODE_LEN: usize = 1 + 8;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let available = self.buf.len() - self.pos;
        if available < n {
            return Err(WireError::Truncated { offset: self.pos, needed: n, available });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_be_bytes(self.array()?))
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(self) -> Result<(), WireError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(WireError::TrailingBytes(n)),
        }
    }
}

fn invalid(msg: impl Into<String>) -> WireError {
    WireError::InvalidValue(msg.into())
}

fn to_u32(v: usize, what: &str) -> u32 {
    u32::try_from(v).unwrap_or_else(|_| panic!("{what} {v} does not fit in u32"))
}

/// Encodes a model in the canonical layout.
pub fn serialize_model(model: &GbdtModel) -> Vec<u8> {
    let p = model.params();
    let mut out = Vec::with_capacity(encoded_len_hint(model));
    out.extend_from_slice(&to_u32(model.n_classes(), "n_classes").to_be_bytes());
    out.extend_from_slice(&to_u32(model.n_features(), "n_features").to_be_bytes());
    out.extend_from_slice(&to_u32(p.depth, "depth").to_be_bytes());
    out.extend_from_slice(&to_u32(model.n_iterations(), "iterations").to_be_bytes());
    out.extend_from_slice(&p.learning_rate.to_be_bytes());
    out.extend_from_slice(&p.l2_leaf_reg.to_be_bytes());
    out.extend_from_slice(&p.seed.to_be_bytes());
    for b in model.base_scores() {
        out.extend_from_slice(&b.to_be_bytes());
    }
    for tree in model.trees() {
        for node in tree.nodes() {
            match *node {
                TreeNode::Internal { feature, threshold, .. } => {
                    out.push(TAG_INTERNAL);
                    out.extend_from_slice(&to_u32(feature, "feature").to_be_bytes());
                    out.extend_from_slice(&threshold.to_be_bytes());
                }
                TreeNode::Leaf { value } => {
                    out.push(TAG_LEAF);
                    out.extend_from_slice(&value.to_be_bytes());
                }
            }
        }
    }
    out
}

fn encoded_len_hint(model: &GbdtModel) -> usize {
    MODEL_HEADER_LEN
        + 8 * model.n_classes()
        + model.trees().iter().map(|t| t.nodes().len() * INTERNAL_NODE_LEN).sum::<usize>()
}

/// Inverse of [`serialize_model`]; the input must hold exactly one model.
pub fn deserialize_model(bytes: &[u8]) -> Result<GbdtModel, WireError> {
    let mut r = Reader::new(bytes);
    let model = read_model(&mut r)?;
    r.finish()?;
    Ok(model)
}

pub(crate) fn read_model(r: &mut Reader<'_>) -> Result<GbdtModel, WireError> {
    let n_classes = r.u32()? as usize;
    let n_features = r.u32()? as usize;
    let depth = r.u32()? as usize;
    let iterations = r.u32()? as usize;
    let learning_rate = r.f64()?;
    let l2_leaf_reg = r.f64()?;
    let seed = r.u64()?;
    if n_classes == 0 {
        return Err(invalid("model has zero classes"));
    }
    let mut base_scores = Vec::with_capacity(n_classes.min(r.remaining() / 8));
    for _ in 0..n_classes {
        let b = r.f64()?;
        if b.is_nan() {
            return Err(invalid("NaN base score"));
        }
        base_scores.push(b);
    }
    let n_trees = iterations
        .checked_mul(n_classes)
        .ok_or_else(|| invalid("tree count overflows"))?;
    let mut trees = Vec::with_capacity(n_trees.min(r.remaining() / LEAF_NODE_LEN));
    for _ in 0..n_trees {
        trees.push(read_tree(r, n_features)?);
    }
    let params = GbdtParams { depth, iterations, learning_rate, l2_leaf_reg, seed };
    GbdtModel::from_parts(params, n_classes, n_features, base_scores, trees)
        .map_err(|e| invalid(e.to_string()))
}

/// Reads one pre-order tree without recursion.
fn read_tree(r: &mut Reader<'_>, n_features: usize) -> Result<RegressionTree, WireError> {
    let mut nodes: Vec<TreeNode> = Vec::new();
    // Internal nodes whose right subtree has not started yet.
    let mut open: Vec<usize> = Vec::new();
    loop {
        let offset = r.position();
        let idx = nodes.len();
        match r.u8()? {
            TAG_INTERNAL => {
                let feature = r.u32()? as usize;
                let threshold = r.f64()?;
                if feature >= n_features {
                    return Err(invalid(format!("split on feature {feature} of {n_features}")));
                }
                if !threshold.is_finite() {
                    return Err(invalid("non-finite threshold"));
                }
                nodes.push(TreeNode::Internal { feature, threshold, left: idx + 1, right: 0 });
                open.push(idx);
            }
            TAG_LEAF => {
                let value = r.f64()?;
                if value.is_nan() {
                    return Err(invalid("NaN leaf value"));
                }
                nodes.push(TreeNode::Leaf { value });
                match open.pop() {
                    None => break,
                    Some(parent) => {
                        let next = nodes.len();
                        if let TreeNode::Internal { right, .. } = &mut nodes[parent] {
                            *right = next;
                        }
                    }
                }
            }
            tag => return Err(WireError::BadTag { tag, offset }),
        }
    }
    RegressionTree::from_preorder(nodes).map_err(invalid)
}

pub fn serialize_ensemble(e: &EnsembleModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&to_u32(e.members().len(), "member count").to_be_bytes());
    for (m, &origin) in e.members().iter().zip(e.origins()) {
        let bytes = serialize_model(m);
        out.extend_from_slice(&origin.to_be_bytes());
        out.extend_from_slice(&(bytes.len() as u64).to_be_bytes());
        out.extend_from_slice(&bytes);
    }
    out
}

pub fn deserialize_ensemble(bytes: &[u8]) -> Result<EnsembleModel, WireError> {
    let mut r = Reader::new(bytes);
    let n = r.u32()? as usize;
    let mut members = Vec::new();
    let mut origins = Vec::new();
    for _ in 0..n {
        origins.push(r.u32()?);
        let len = r.u64()?;
        let len = usize::try_from(len).map_err(|_| invalid("member length overflows"))?;
        let body = r.take(len)?;
        members.push(deserialize_model(body)?);
    }
    r.finish()?;
    EnsembleModel::new(members, origins).map_err(|e| invalid(e.to_string()))
}
