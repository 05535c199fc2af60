//! Wavelet leaders, p-leaders, restricted p-leaders and structure functions.
//!
//! All p-leader variants are built from the per-node depth profile
//!
//! ```text
//! T_λ(d) = 2^-d · Σ_{λ' ⊆ λ, scale(λ') = j + d} |c_λ'|^p,   d = 0..=J-j
//! ```
//!
//! computed bottom-up through `T_λ(0) = |c_λ|^p` and
//! `T_λ(d) = (T_left(d-1) + T_right(d-1)) / 2`, for `O(J 2^J)` total work.
//! The restricted p-leader is `e_λ = (max_d T_λ(d))^(1/p)`; the p-leader is
//! `l_λ = (max_d Σ_{μ ∈ N(λ)} T_μ(d))^(1/p)` over the periodic neighbourhood.
//!
//! The supremum over finer scales stops at the tree depth `J`, so values near
//! the bottom of the tree are biased low. Estimators keep a margin below `J`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{CoefficientTree, NodeRef};
use crate::error::{domain, Result};
use crate::numeric::{log2_add, KahanSum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaderKind {
    /// `sup` of `|c|` over the `3λ` subtree (`p = +inf`).
    ClassicalLeaderInf,
    PLeader,
    RestrictedPLeader,
}

/// Per-node leader values for one `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderField {
    kind: LeaderKind,
    p: f64,
    values: Vec<Vec<f64>>,
    truncation_scale: u32,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    kind: LeaderKind,
    p: String,
    truncation_scale: u32,
}

impl LeaderField {
    pub fn kind(&self) -> LeaderKind {
        self.kind
    }

    /// `f64::INFINITY` for classical leaders.
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn truncation_scale(&self) -> u32 {
        self.truncation_scale
    }

    pub fn max_scale(&self) -> u32 {
        (self.values.len() - 1) as u32
    }

    pub fn level(&self, j: u32) -> &[f64] {
        &self.values[j as usize]
    }

    pub fn get(&self, node: NodeRef) -> f64 {
        self.values[node.scale as usize][node.position as usize]
    }

    /// Leader values packaged as a tree, for the tree serializers.
    pub fn to_tree(&self) -> CoefficientTree {
        CoefficientTree::new(self.values.clone()).expect("leader values are finite and non-negative")
    }

    /// JSON sidecar recording kind, `p` and truncation scale.
    pub fn sidecar_json(&self) -> String {
        let p = if self.p.is_infinite() { "inf".to_string() } else { format!("{:?}", self.p) };
        serde_json::to_string(&Sidecar { kind: self.kind, p, truncation_scale: self.truncation_scale })
            .expect("sidecar serializes")
    }

    /// Rebuilds a field from a tree written by [`Self::to_tree`] and its sidecar.
    pub fn from_tree_and_sidecar(tree: &CoefficientTree, sidecar: &str) -> Result<Self> {
        let s: Sidecar = serde_json::from_str(sidecar)?;
        let p = if s.p == "inf" {
            f64::INFINITY
        } else {
            s.p.parse().map_err(|_| crate::MfaError::Domain(format!("bad p '{}'", s.p)))?
        };
        Ok(LeaderField { kind: s.kind, p, values: tree.levels().to_vec(), truncation_scale: s.truncation_scale })
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p.is_finite() && p > 0.0) {
        return domain(format!("p must be positive and finite, got {p}"));
    }
    Ok(())
}

/// Representation of `|c|^p` used during accumulation.
#[derive(Debug, Clone, Copy)]
enum PowDomain {
    /// Plain `|c|^p`.
    Plain { p: f64 },
    /// `|c|^p · 2^-shift`, for trees whose powers leave the `f64` range
    /// but whose dynamic range still fits.
    Shifted { p: f64, shift: f64 },
    /// `log2(|c|^p)`, with `-inf` for zero.
    Log { p: f64 },
}

const SAFE_EXPONENT: f64 = 960.0;

impl PowDomain {
    fn choose(tree: &CoefficientTree, p: f64) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &c in tree.levels().iter().flatten() {
            if c > 0.0 {
                let e = p * c.log2();
                lo = lo.min(e);
                hi = hi.max(e);
            }
        }
        if !lo.is_finite() || (lo >= -SAFE_EXPONENT && hi <= SAFE_EXPONENT) {
            PowDomain::Plain { p }
        } else if hi - lo <= SAFE_EXPONENT {
            PowDomain::Shifted { p, shift: hi }
        } else {
            PowDomain::Log { p }
        }
    }

    fn zero(self) -> f64 {
        match self {
            PowDomain::Log { .. } => f64::NEG_INFINITY,
            _ => 0.0,
        }
    }

    #[inline]
    fn lift(self, c: f64) -> f64 {
        match self {
            PowDomain::Plain { p } => c.powf(p),
            PowDomain::Shifted { p, shift } => {
                if c == 0.0 {
                    0.0
                } else {
                    (p * c.log2() - shift).exp2()
                }
            }
            PowDomain::Log { p } => {
                if c == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    p * c.log2()
                }
            }
        }
    }

    #[inline]
    fn half_sum(self, a: f64, b: f64) -> f64 {
        match self {
            PowDomain::Log { .. } => log2_add(a, b) - 1.0,
            _ => 0.5 * (a + b),
        }
    }

    #[inline]
    fn add(self, a: f64, b: f64) -> f64 {
        match self {
            PowDomain::Log { .. } => log2_add(a, b),
            _ => a + b,
        }
    }

    /// Back from the accumulation domain to a magnitude: `x^(1/p)`.
    #[inline]
    fn root(self, x: f64) -> f64 {
        match self {
            PowDomain::Plain { p } => x.powf(1.0 / p),
            PowDomain::Shifted { p, shift } => {
                if x == 0.0 {
                    0.0
                } else {
                    ((x.log2() + shift) / p).exp2()
                }
            }
            PowDomain::Log { p } => (x / p).exp2(),
        }
    }
}

/// Depth profiles `T_k(d)` of one level, stored `k`-major.
struct LevelProfiles {
    depths: usize,
    data: Vec<f64>,
}

impl LevelProfiles {
    fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.depths..(k + 1) * self.depths]
    }
}

const PAR_THRESHOLD: usize = 1 << 10;

/// Walks the tree bottom-up, handing each level's depth profiles to `visit`.
fn for_each_level_profile(tree: &CoefficientTree, dom: PowDomain, mut visit: impl FnMut(u32, &LevelProfiles)) {
    let big_j = tree.max_scale();
    let bottom = LevelProfiles { depths: 1, data: tree.level(big_j).iter().map(|&c| dom.lift(c)).collect() };
    visit(big_j, &bottom);
    let mut below = bottom;
    for j in (0..big_j).rev() {
        let depths = (big_j - j + 1) as usize;
        let coeffs = tree.level(j);
        let mut data = vec![dom.zero(); coeffs.len() * depths];
        let fill = |(k, row): (usize, &mut [f64])| {
            row[0] = dom.lift(coeffs[k]);
            let l = below.row(2 * k);
            let r = below.row(2 * k + 1);
            for d in 1..depths {
                row[d] = dom.half_sum(l[d - 1], r[d - 1]);
            }
        };
        if coeffs.len() >= PAR_THRESHOLD {
            data.par_chunks_mut(depths).enumerate().for_each(fill);
        } else {
            data.chunks_mut(depths).enumerate().for_each(fill);
        }
        let level = LevelProfiles { depths, data };
        visit(j, &level);
        below = level;
    }
}

fn max_of(xs: impl Iterator<Item = f64>, dom: PowDomain) -> f64 {
    xs.fold(dom.zero(), f64::max)
}

/// Restricted p-leaders `e_λ^(p)`: the depth-weighted `l^p` mean over the
/// subtree of `λ` only, maximized over depth.
pub fn compute_restricted_p_leaders(tree: &CoefficientTree, p: f64) -> Result<LeaderField> {
    check_p(p)?;
    let dom = PowDomain::choose(tree, p);
    let mut values = vec![Vec::new(); tree.max_scale() as usize + 1];
    for_each_level_profile(tree, dom, |j, lp| {
        values[j as usize] = (0..1usize << j).map(|k| dom.root(max_of(lp.row(k).iter().copied(), dom))).collect();
    });
    Ok(LeaderField { kind: LeaderKind::RestrictedPLeader, p, values, truncation_scale: tree.max_scale() })
}

/// p-leaders `l_λ^(p)` over the periodic `3λ` neighbourhood, computed from
/// the combined three-subtree average at each depth.
pub fn compute_p_leaders(tree: &CoefficientTree, p: f64) -> Result<LeaderField> {
    check_p(p)?;
    if tree.max_scale() < 2 {
        return domain("p-leaders need a tree of depth at least 2");
    }
    let dom = PowDomain::choose(tree, p);
    let mut values = vec![Vec::new(); tree.max_scale() as usize + 1];
    for_each_level_profile(tree, dom, |j, lp| {
        let per_node = |k: usize| {
            let nbrs = NodeRef::new(j, k as i64).neighbours();
            let combined = (0..lp.depths).map(|d| {
                nbrs.iter().map(|m| lp.row(m.position as usize)[d]).fold(dom.zero(), |acc, x| dom.add(acc, x))
            });
            dom.root(max_of(combined, dom))
        };
        let n = 1usize << j;
        values[j as usize] = if n >= PAR_THRESHOLD {
            (0..n).into_par_iter().map(per_node).collect()
        } else {
            (0..n).map(per_node).collect()
        };
    });
    Ok(LeaderField { kind: LeaderKind::PLeader, p, values, truncation_scale: tree.max_scale() })
}

/// Classical wavelet leaders: `sup |c_λ'|` over `λ' ⊆ 3λ` at scales `>= j`.
pub fn compute_leaders_inf(tree: &CoefficientTree) -> Result<LeaderField> {
    if tree.max_scale() < 2 {
        return domain("leaders need a tree of depth at least 2");
    }
    let big_j = tree.max_scale();
    let mut sub: Vec<Vec<f64>> = vec![Vec::new(); big_j as usize + 1];
    sub[big_j as usize] = tree.level(big_j).to_vec();
    for j in (0..big_j).rev() {
        let below = &sub[j as usize + 1];
        sub[j as usize] =
            tree.level(j).iter().enumerate().map(|(k, &c)| c.max(below[2 * k]).max(below[2 * k + 1])).collect();
    }
    let values = sub
        .iter()
        .enumerate()
        .map(|(j, level)| {
            (0..level.len())
                .map(|k| {
                    NodeRef::new(j as u32, k as i64)
                        .neighbours()
                        .iter()
                        .map(|m| level[m.position as usize])
                        .fold(0.0, f64::max)
                })
                .collect()
        })
        .collect();
    Ok(LeaderField { kind: LeaderKind::ClassicalLeaderInf, p: f64::INFINITY, values, truncation_scale: big_j })
}

/// Leaders of the requested kind; `p = inf` selects classical leaders.
pub fn compute_leaders(tree: &CoefficientTree, kind: LeaderKind, p: f64) -> Result<LeaderField> {
    match kind {
        LeaderKind::ClassicalLeaderInf => compute_leaders_inf(tree),
        LeaderKind::PLeader if p.is_infinite() => compute_leaders_inf(tree),
        LeaderKind::PLeader => compute_p_leaders(tree, p),
        LeaderKind::RestrictedPLeader => compute_restricted_p_leaders(tree, p),
    }
}

/// Per-scale mean p-th powers `S_j(p) = 2^-j Σ_k |c_{j,k}|^p`, `j = 1..=J`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureFunction {
    pub p: f64,
    values: Vec<f64>,
    log2_values: Vec<f64>,
}

impl StructureFunction {
    /// `S_j(p)`; may underflow to zero where `log2_value` does not.
    pub fn value(&self, j: u32) -> f64 {
        self.values[j as usize - 1]
    }

    /// `log2 S_j(p)`, `-inf` iff scale `j` is identically zero.
    pub fn log2_value(&self, j: u32) -> f64 {
        self.log2_values[j as usize - 1]
    }

    pub fn max_scale(&self) -> u32 {
        self.values.len() as u32
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn structure_function(tree: &CoefficientTree, p: f64) -> Result<StructureFunction> {
    check_p(p)?;
    let mut values = Vec::with_capacity(tree.max_scale() as usize);
    let mut log2_values = Vec::with_capacity(tree.max_scale() as usize);
    for j in 1..=tree.max_scale() {
        let level = tree.level(j);
        let exps: Vec<f64> = level.iter().filter(|c| **c > 0.0).map(|c| p * c.log2()).collect();
        if exps.is_empty() {
            values.push(0.0);
            log2_values.push(f64::NEG_INFINITY);
            continue;
        }
        let hi = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: KahanSum = exps.iter().map(|e| (e - hi).exp2()).collect();
        let log2_s = scaled.value().log2() + hi - j as f64;
        let direct: KahanSum = level.iter().map(|c| c.powf(p)).collect();
        values.push(direct.value() / (1u64 << j) as f64);
        log2_values.push(log2_s);
    }
    Ok(StructureFunction { p, values, log2_values })
}
