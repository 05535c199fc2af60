//! Dyadic-tree container for wavelet coefficient magnitudes.
//!
//! Scale `j` holds `2^j` coefficients indexed by `k` (the dyadic interval
//! `[k 2^-j, (k+1) 2^-j)`), with periodic wrap-around at both ends of a level.

mod dwt;
mod io;

pub use dwt::{dwt_front_end, WaveletDecomposition, WaveletFilter};
pub use io::{read_tree, write_tree, TreeFormat};

use crate::error::{domain, MfaError, Result};

/// Largest scale accepted when constructing or decoding trees.
pub const MAX_SCALE_LIMIT: u32 = 40;

/// A node `(j, k)` of the dyadic tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub scale: u32,
    pub position: u64,
}

impl NodeRef {
    /// Builds a node, reducing `position` modulo `2^scale`.
    pub fn new(scale: u32, position: i64) -> Self {
        let size = 1i64 << scale;
        NodeRef { scale, position: position.rem_euclid(size) as u64 }
    }

    pub fn level_size(&self) -> u64 {
        1u64 << self.scale
    }

    pub fn children(&self) -> [NodeRef; 2] {
        [
            NodeRef { scale: self.scale + 1, position: 2 * self.position },
            NodeRef { scale: self.scale + 1, position: 2 * self.position + 1 },
        ]
    }

    pub fn parent(&self) -> Option<NodeRef> {
        (self.scale > 0).then(|| NodeRef { scale: self.scale - 1, position: self.position / 2 })
    }

    /// The periodic neighbourhood `{k-1, k, k+1} mod 2^j`, as a set. At
    /// scales 0 and 1 the three positions collapse to fewer distinct nodes.
    pub fn neighbours(&self) -> Vec<NodeRef> {
        let k = self.position as i64;
        let mut out: Vec<NodeRef> = Vec::with_capacity(3);
        for d in [-1i64, 0, 1] {
            let n = NodeRef::new(self.scale, k + d);
            if !out.contains(&n) {
                out.push(n);
            }
        }
        out.sort();
        out
    }

    /// Whether `other` is a descendant of `self` (or `self` itself).
    pub fn contains(&self, other: &NodeRef) -> bool {
        other.scale >= self.scale && (other.position >> (other.scale - self.scale)) == self.position
    }
}

/// The node at scale `j` whose dyadic interval contains `x0`.
pub fn node_containing(x0: f64, j: u32) -> Result<NodeRef> {
    if !(0.0..1.0).contains(&x0) {
        return domain(format!("x0 = {x0} is outside [0, 1)"));
    }
    if j > MAX_SCALE_LIMIT {
        return domain(format!("scale {j} exceeds the supported maximum {MAX_SCALE_LIMIT}"));
    }
    let size = (1u64 << j) as f64;
    let k = ((x0 * size).floor() as u64).min((1u64 << j) - 1);
    Ok(NodeRef { scale: j, position: k })
}

/// Magnitudes `|c_{j,k}|` on the full dyadic tree up to `max_scale`.
///
/// Immutable after construction. Signs, when present, are carried for
/// round-tripping only; analyses read magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTree {
    levels: Vec<Vec<f64>>,
    signs: Option<Vec<Vec<bool>>>,
}

impl CoefficientTree {
    /// Builds a tree from per-scale magnitudes; level `j` must have `2^j`
    /// finite non-negative entries.
    pub fn new(levels: Vec<Vec<f64>>) -> Result<Self> {
        if levels.len() < 2 {
            return domain("a tree needs at least scales 0 and 1");
        }
        if levels.len() - 1 > MAX_SCALE_LIMIT as usize {
            return domain(format!("max scale {} exceeds {MAX_SCALE_LIMIT}", levels.len() - 1));
        }
        for (j, level) in levels.iter().enumerate() {
            let expected = 1usize << j;
            if level.len() != expected {
                return Err(MfaError::Parse {
                    location: format!("scale {j}"),
                    message: format!("level {j} expected {expected} nodes, got {}", level.len()),
                });
            }
            if let Some(k) = level.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(MfaError::Parse {
                    location: format!("scale {j}, offset {k}"),
                    message: format!("magnitude {} is not a finite non-negative number", level[k]),
                });
            }
        }
        Ok(CoefficientTree { levels, signs: None })
    }

    /// Builds a tree of depth `max_scale` by evaluating `f(j, k)`.
    pub fn from_fn(max_scale: u32, mut f: impl FnMut(u32, u64) -> f64) -> Result<Self> {
        if max_scale > MAX_SCALE_LIMIT {
            return domain(format!("max scale {max_scale} exceeds {MAX_SCALE_LIMIT}"));
        }
        let levels = (0..=max_scale).map(|j| (0..1u64 << j).map(|k| f(j, k)).collect()).collect();
        Self::new(levels)
    }

    pub fn zeros(max_scale: u32) -> Result<Self> {
        Self::from_fn(max_scale, |_, _| 0.0)
    }

    /// Attaches per-node sign bits (`true` = negative coefficient).
    pub fn with_signs(mut self, signs: Vec<Vec<bool>>) -> Result<Self> {
        if signs.len() != self.levels.len() || signs.iter().zip(&self.levels).any(|(s, l)| s.len() != l.len()) {
            return domain("sign bits do not match the tree shape");
        }
        self.signs = Some(signs);
        Ok(self)
    }

    pub fn without_signs(mut self) -> Self {
        self.signs = None;
        self
    }

    pub fn max_scale(&self) -> u32 {
        (self.levels.len() - 1) as u32
    }

    pub fn node_count(&self) -> usize {
        (1usize << self.levels.len()) - 1
    }

    pub fn level(&self, j: u32) -> &[f64] {
        &self.levels[j as usize]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn signs(&self) -> Option<&[Vec<bool>]> {
        self.signs.as_deref()
    }

    pub fn get(&self, node: NodeRef) -> f64 {
        self.levels[node.scale as usize][node.position as usize]
    }

    /// Signed coefficient value; positive when no signs are attached.
    pub fn signed(&self, node: NodeRef) -> f64 {
        let m = self.get(node);
        match &self.signs {
            Some(s) if s[node.scale as usize][node.position as usize] => -m,
            _ => m,
        }
    }

    pub fn node_containing(&self, x0: f64, j: u32) -> Result<NodeRef> {
        if j > self.max_scale() {
            return domain(format!("scale {j} exceeds the tree depth {}", self.max_scale()));
        }
        node_containing(x0, j)
    }

    /// True when every magnitude is zero.
    pub fn is_zero(&self) -> bool {
        self.levels.iter().flatten().all(|v| *v == 0.0)
    }
}
