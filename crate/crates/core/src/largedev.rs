//! Finite-scale estimators: wavelet and p-leader densities and profiles,
//! the scaling function and its critical `p`, pointwise p-exponents, and the
//! large-deviation formalism
//!
//! ```text
//! D(h) = min(1, (h + 1/p) · sup_{α ∈ (-1/p, h]} ρ(α) / (α + 1/p))
//! ```
//!
//! Limits over scales are replaced by aggregates over a window `[j_min, j_max]`:
//! a maximum (the literal finite-scale `limsup`) or an OLS slope. Empty counts
//! are `-inf` and stay `-inf` through aggregation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{CoefficientTree, NodeRef};
use crate::error::{domain, MfaError, Result};
use crate::leaders::{compute_leaders_inf, compute_restricted_p_leaders, structure_function, LeaderField, LeaderKind};
use crate::numeric::{inv_p, linspace, ols_slope};

/// What the counted values are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensitySource {
    Coefficients,
    PLeaders,
    RestrictedPLeaders,
    ClassicalLeaders,
}

/// Anything that exposes one array of non-negative values per scale.
pub trait ScaleValues: Sync {
    fn source(&self) -> DensitySource;
    fn depth(&self) -> u32;
    fn values_at(&self, j: u32) -> &[f64];
}

impl ScaleValues for CoefficientTree {
    fn source(&self) -> DensitySource {
        DensitySource::Coefficients
    }
    fn depth(&self) -> u32 {
        self.max_scale()
    }
    fn values_at(&self, j: u32) -> &[f64] {
        self.level(j)
    }
}

impl ScaleValues for LeaderField {
    fn source(&self) -> DensitySource {
        match self.kind() {
            LeaderKind::ClassicalLeaderInf => DensitySource::ClassicalLeaders,
            LeaderKind::PLeader => DensitySource::PLeaders,
            LeaderKind::RestrictedPLeader => DensitySource::RestrictedPLeaders,
        }
    }
    fn depth(&self) -> u32 {
        self.max_scale()
    }
    fn values_at(&self, j: u32) -> &[f64] {
        self.level(j)
    }
}

/// Inclusive range of scales used by the finite-scale surrogates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleWindow {
    pub j_min: u32,
    pub j_max: u32,
}

impl ScaleWindow {
    pub fn new(j_min: u32, j_max: u32) -> Result<Self> {
        if j_min < 1 {
            return domain("window must start at scale 1 or later");
        }
        if j_min > j_max {
            return domain(format!("empty scale window [{j_min}, {j_max}]"));
        }
        Ok(ScaleWindow { j_min, j_max })
    }

    /// `[ceil(J/2), J - margin]`, clipped to at least one scale.
    pub fn with_margin(max_scale: u32, margin: u32) -> Self {
        let j_max = max_scale.saturating_sub(margin).max(1);
        let j_min = max_scale.div_ceil(2).clamp(1, j_max);
        ScaleWindow { j_min, j_max }
    }

    /// Default window for leader-based quantities: margin 2 below the depth.
    pub fn default_for(max_scale: u32) -> Self {
        Self::with_margin(max_scale, 2)
    }

    pub fn scales(&self) -> impl Iterator<Item = u32> + Clone {
        self.j_min..=self.j_max
    }

    pub fn len(&self) -> usize {
        (self.j_max - self.j_min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn check_depth(&self, depth: u32) -> Result<()> {
        if self.j_max > depth {
            return domain(format!("window ends at {} beyond tree depth {depth}", self.j_max));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `max_j log2(N_j) / j` over the window.
    #[default]
    MaxOverScales,
    /// OLS slope of `log2 N_j` against `j` over scales with `N_j > 0`.
    Regression,
    /// Least squares fit of `log2 N_j = ρ j` through the origin, weighted by
    /// `N_j` (the inverse variance of `log N_j` for Poisson-like counts): a
    /// weighted mean of the per-scale ratios `log2(N_j)/j` that the `limsup`
    /// ranges over.
    OriginRegression,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return domain("empty grid");
    }
    if grid.iter().any(|a| !a.is_finite()) {
        return domain("grid contains non-finite values");
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return domain("grid is not sorted ascending");
    }
    Ok(())
}

/// Per-scale counts of values falling in the `ε`-band around `2^{-αj}`
/// (`N_ρ`) and above `2^{-(α+ε)j}` (`N_ν`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHistogram {
    pub source: DensitySource,
    pub epsilon: f64,
    pub alpha_grid: Vec<f64>,
    pub window: ScaleWindow,
    /// `counts_rho[j - j_min][i]`
    pub counts_rho: Vec<Vec<u64>>,
    pub counts_nu: Vec<Vec<u64>>,
}

impl LogHistogram {
    pub fn build<F: ScaleValues + ?Sized>(
        field: &F,
        epsilon: f64,
        alpha_grid: &[f64],
        window: ScaleWindow,
    ) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return domain(format!("epsilon must be positive, got {epsilon}"));
        }
        check_grid(alpha_grid)?;
        window.check_depth(field.depth())?;
        let scales: Vec<u32> = window.scales().collect();
        let per_scale: Vec<(Vec<u64>, Vec<u64>)> = scales
            .par_iter()
            .map(|&j| {
                // -log2 v, ascending; zeros never cross a threshold.
                let mut xs: Vec<f64> = field.values_at(j).iter().filter(|v| **v > 0.0).map(|v| -v.log2()).collect();
                xs.sort_by(f64::total_cmp);
                let jf = j as f64;
                let mut rho = Vec::with_capacity(alpha_grid.len());
                let mut nu = Vec::with_capacity(alpha_grid.len());
                for &a in alpha_grid {
                    let upper = xs.partition_point(|x| *x <= (a + epsilon) * jf);
                    let lower = xs.partition_point(|x| *x < (a - epsilon) * jf);
                    rho.push((upper - lower.min(upper)) as u64);
                    nu.push(upper as u64);
                }
                (rho, nu)
            })
            .collect();
        let (counts_rho, counts_nu) = per_scale.into_iter().unzip();
        Ok(LogHistogram {
            source: field.source(),
            epsilon,
            alpha_grid: alpha_grid.to_vec(),
            window,
            counts_rho,
            counts_nu,
        })
    }

    fn aggregate(&self, counts: &[Vec<u64>], i: usize, aggregation: Aggregation) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .window
            .scales()
            .zip(counts)
            .filter(|(_, c)| c[i] > 0)
            .map(|(j, c)| (j as f64, (c[i] as f64).log2()))
            .collect();
        if pts.is_empty() {
            return f64::NEG_INFINITY;
        }
        let max_ratio = pts.iter().map(|(j, l)| l / j).fold(f64::NEG_INFINITY, f64::max);
        let raw = match aggregation {
            Aggregation::MaxOverScales => max_ratio,
            Aggregation::Regression => {
                let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
                ols_slope(&x, &y).unwrap_or(max_ratio)
            }
            Aggregation::OriginRegression => {
                let (num, den) = pts.iter().fold((0.0, 0.0), |(n, d), (j, l)| {
                    let w = l.exp2();
                    (n + w * j * l, d + w * j * j)
                });
                num / den
            }
        };
        raw.clamp(0.0, 1.0)
    }
}

/// Density `ρ̂` and profile `ν̂` on a grid of `α` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub source: DensitySource,
    pub alpha_grid: Vec<f64>,
    #[serde(with = "neg_inf_as_null")]
    pub rho_hat: Vec<f64>,
    #[serde(with = "neg_inf_as_null")]
    pub nu_hat: Vec<f64>,
    pub epsilon: f64,
    pub aggregation: Aggregation,
    pub window: ScaleWindow,
}

impl DensityEstimate {
    /// `(α, ρ̂(α))` pairs, the input of [`formalism_d`].
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.alpha_grid.iter().copied().zip(self.rho_hat.iter().copied()).collect()
    }

    pub fn profile_points(&self) -> Vec<(f64, f64)> {
        self.alpha_grid.iter().copied().zip(self.nu_hat.iter().copied()).collect()
    }

    /// `ρ̂` at the grid point nearest to `alpha`.
    pub fn rho_at(&self, alpha: f64) -> f64 {
        self.rho_hat[nearest_index(&self.alpha_grid, alpha)]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,rho,nu\n");
        for ((a, r), n) in self.alpha_grid.iter().zip(&self.rho_hat).zip(&self.nu_hat) {
            s.push_str(&format!("{a:?},{},{}\n", fmt_num(*r), fmt_num(*n)));
        }
        s
    }
}

pub(crate) fn nearest_index(grid: &[f64], x: f64) -> usize {
    grid.iter().enumerate().min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs())).map(|(i, _)| i).unwrap_or(0)
}

pub(crate) fn fmt_num(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:?}")
    }
}

pub fn estimate_density<F: ScaleValues + ?Sized>(
    field: &F,
    epsilon: f64,
    alpha_grid: &[f64],
    window: ScaleWindow,
    aggregation: Aggregation,
) -> Result<DensityEstimate> {
    let hist = LogHistogram::build(field, epsilon, alpha_grid, window)?;
    let n = alpha_grid.len();
    let rho_hat: Vec<f64> = (0..n).map(|i| hist.aggregate(&hist.counts_rho, i, aggregation)).collect();
    let mut nu_hat: Vec<f64> = (0..n).map(|i| hist.aggregate(&hist.counts_nu, i, aggregation)).collect();
    if aggregation != Aggregation::MaxOverScales {
        // slopes of nested counts need not be ordered
        nu_hat = increasing_hull(&nu_hat);
    }
    Ok(DensityEstimate {
        source: hist.source,
        alpha_grid: alpha_grid.to_vec(),
        rho_hat,
        nu_hat,
        epsilon,
        aggregation,
        window,
    })
}

/// Running maximum; `-inf` persists until the first finite value.
pub fn increasing_hull(values: &[f64]) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    values
        .iter()
        .map(|v| {
            if *v > best {
                best = *v;
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMethod {
    /// OLS slope of `-log2 S_j(p)` against `j`.
    #[default]
    Regression,
    /// `min_j -log2 S_j(p) / j`.
    MinRatio,
    /// Least squares fit of `-log2 S_j(p) = η j` through the origin: a
    /// `j²`-weighted mean of the ratios `-log2 S_j(p) / j`.
    OriginRegression,
}

/// Estimated scaling function and its critical exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingEstimate {
    pub p_grid: Vec<f64>,
    #[serde(with = "neg_inf_as_null")]
    pub eta_hat: Vec<f64>,
    /// `+inf` when `η̂ > 0` on the whole grid.
    #[serde(with = "inf_as_string")]
    pub p0_hat: f64,
    pub method: ScalingMethod,
    pub window: ScaleWindow,
}

impl ScalingEstimate {
    /// Soft concavity check on the probe grid: the largest violation of
    /// `η̂(p_i) >= interpolation of its neighbours`.
    pub fn concavity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 1..self.p_grid.len().saturating_sub(1) {
            let (p0, p1, p2) = (self.p_grid[i - 1], self.p_grid[i], self.p_grid[i + 1]);
            let (e0, e1, e2) = (self.eta_hat[i - 1], self.eta_hat[i], self.eta_hat[i + 1]);
            if ![e0, e1, e2].iter().all(|e| e.is_finite()) {
                continue;
            }
            let chord = e0 + (e2 - e0) * (p1 - p0) / (p2 - p0);
            worst = worst.max(chord - e1);
        }
        worst
    }
}

/// `η̂_f(p)` for one `p`; `+inf` when every scale in the window vanishes.
pub fn estimate_eta(tree: &CoefficientTree, p: f64, window: ScaleWindow, method: ScalingMethod) -> Result<f64> {
    window.check_depth(tree.max_scale())?;
    let sf = structure_function(tree, p)?;
    let pts: Vec<(f64, f64)> =
        window.scales().map(|j| (j as f64, -sf.log2_value(j))).filter(|(_, v)| v.is_finite()).collect();
    if pts.is_empty() {
        return Ok(f64::INFINITY);
    }
    if pts.len() < 3 {
        return Err(MfaError::Estimation(format!(
            "only {} scales with nonzero coefficients in [{}, {}]; need 3",
            pts.len(),
            window.j_min,
            window.j_max
        )));
    }
    Ok(match method {
        ScalingMethod::Regression => {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            ols_slope(&x, &y).expect("at least three distinct scales")
        }
        ScalingMethod::MinRatio => pts.iter().map(|(j, v)| v / j).fold(f64::INFINITY, f64::min),
        ScalingMethod::OriginRegression => {
            let (num, den) = pts.iter().fold((0.0, 0.0), |(n, d), (j, v)| (n + j * v, d + j * j));
            num / den
        }
    })
}

/// Scaling function on `p_grid` and `p̂_0`, refined by bisection to `1e-3`
/// between the last positive and the first non-positive grid point.
pub fn estimate_scaling(
    tree: &CoefficientTree,
    p_grid: &[f64],
    window: ScaleWindow,
    method: ScalingMethod,
) -> Result<ScalingEstimate> {
    check_grid(p_grid)?;
    if p_grid.iter().any(|p| *p <= 0.0) {
        return domain("p grid must be positive");
    }
    let eta_hat: Vec<f64> = p_grid.iter().map(|&p| estimate_eta(tree, p, window, method)).collect::<Result<_>>()?;
    let p0_hat = match eta_hat.iter().position(|e| *e <= 0.0) {
        None => f64::INFINITY,
        Some(0) => {
            // non-positive already at the smallest probe: bisect down towards 0
            bisect_p0(tree, 0.0, p_grid[0], window, method)?
        }
        Some(i) => bisect_p0(tree, p_grid[i - 1], p_grid[i], window, method)?,
    };
    Ok(ScalingEstimate { p_grid: p_grid.to_vec(), eta_hat, p0_hat, method, window })
}

fn bisect_p0(
    tree: &CoefficientTree,
    mut lo: f64,
    mut hi: f64,
    window: ScaleWindow,
    method: ScalingMethod,
) -> Result<f64> {
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if estimate_eta(tree, mid, window, method)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Refuses `p` when `η̂_f(p) <= 0`, where the p-exponent characterization
/// through p-leaders does not apply.
pub fn check_p_admissible(tree: &CoefficientTree, p: f64, window: ScaleWindow) -> Result<f64> {
    if p.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let eta = estimate_eta(tree, p, window, ScalingMethod::default())?;
    if eta <= 0.0 {
        return Err(MfaError::Refusal(format!(
            "p-exponent characterization not valid: estimated eta_f({p}) = {eta:.4} <= 0"
        )));
    }
    Ok(eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Empirical,
    Theoretical,
}

/// A sampled spectrum `h ↦ D(h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumCurve {
    #[serde(with = "inf_as_string")]
    pub p: f64,
    pub h: Vec<f64>,
    #[serde(rename = "D", with = "neg_inf_as_null")]
    pub d: Vec<f64>,
    #[serde(with = "inf_as_string")]
    pub h_min: f64,
    #[serde(rename = "h_max", with = "inf_as_string")]
    pub h_max_p: f64,
    /// `η̂_f(p)/p - 1/p`, when a scaling estimate was available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_min_scaling: Option<f64>,
    pub provenance: Provenance,
}

impl SpectrumCurve {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("curve serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,D\n");
        for (h, d) in self.h.iter().zip(&self.d) {
            s.push_str(&format!("{h:?},{}\n", fmt_num(*d)));
        }
        s
    }

    /// `D` at the grid point nearest to `h`.
    pub fn value_at(&self, h: f64) -> f64 {
        self.d[nearest_index(&self.h, h)]
    }
}

/// `sup_{α ∈ (-1/p, h]} ρ(α)/(α + 1/p)` over the finite points of `density`,
/// `-inf` when no finite point qualifies.
fn best_ratio(density: &[(f64, f64)], p: f64, h: f64) -> f64 {
    let ip = inv_p(p);
    density
        .iter()
        .filter(|(a, r)| *a > -ip && *a <= h && *r > f64::NEG_INFINITY)
        .map(|(a, r)| r / (a + ip))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn formalism_value(density: &[(f64, f64)], p: f64, h: f64) -> f64 {
    let ratio = best_ratio(density, p, h);
    if ratio == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    ((h + inv_p(p)) * ratio).min(1.0)
}

/// The large-deviation formalism evaluated on `h_grid` from `(α, ρ(α))`
/// points. Unreached `h_max` is reported as `+inf`.
pub fn formalism_d(density: &[(f64, f64)], p: f64, h_grid: &[f64]) -> Result<SpectrumCurve> {
    if !(p > 0.0) {
        return domain(format!("p must be positive, got {p}"));
    }
    check_grid(h_grid)?;
    let ip = inv_p(p);
    if let Some(h) = h_grid.iter().find(|h| **h <= -ip) {
        return domain(format!("h = {h} is not above -1/p = {}", -ip));
    }
    let d: Vec<f64> = h_grid.iter().map(|&h| formalism_value(density, p, h)).collect();
    let h_min = density
        .iter()
        .filter(|(a, r)| *a > -ip && *r > f64::NEG_INFINITY)
        .map(|(a, _)| *a)
        .fold(f64::INFINITY, f64::min);
    Ok(SpectrumCurve {
        p,
        h: h_grid.to_vec(),
        d,
        h_min,
        h_max_p: h_max(density, p),
        h_min_scaling: None,
        provenance: Provenance::Empirical,
    })
}

/// Smallest `h` with `D(h) = 1`, by bisection on the non-decreasing map
/// `h ↦ (h + 1/p) · best_ratio(h)`; `+inf` if 1 is never reached.
pub fn h_max(density: &[(f64, f64)], p: f64) -> f64 {
    let ip = inv_p(p);
    let finite: Vec<(f64, f64)> = density.iter().copied().filter(|(a, r)| *a > -ip && *r > f64::NEG_INFINITY).collect();
    if finite.is_empty() {
        return f64::INFINITY;
    }
    let top = best_ratio(&finite, p, f64::INFINITY);
    if !(top > 0.0) {
        return f64::INFINITY;
    }
    let reaches = |h: f64| (h + ip) * best_ratio(&finite, p, h) >= 1.0;
    let lo_edge = finite.iter().map(|(a, _)| *a).fold(f64::INFINITY, f64::min);
    // first α attaining the top ratio; the product reaches 1 by 1/top - 1/p
    let alpha_top = finite.iter().filter(|(a, r)| r / (a + ip) == top).map(|(a, _)| *a).fold(f64::INFINITY, f64::min);
    let hi_edge = alpha_top.max(1.0 / top - ip);
    if reaches(lo_edge) {
        return lo_edge;
    }
    let (mut lo, mut hi) = (lo_edge, hi_edge);
    if !reaches(hi) {
        // the product at hi_edge equals 1 up to rounding
        hi = hi + 1e-12 * (1.0 + hi.abs());
        if !reaches(hi) {
            return f64::INFINITY;
        }
    }
    while hi - lo > 1e-13 * (1.0 + hi.abs()) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if reaches(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentMethod {
    /// `min_j log2(l_j) / (-j)`, the finite-scale `liminf`.
    #[default]
    MinRatio,
    /// OLS slope of `log2 l_j` against `-j`.
    Regression,
}

/// Pointwise p-exponent at `x0` from the leaders along `λ_j(x0)`. `+inf` when
/// every leader in the window vanishes.
pub fn pointwise_exponent(
    tree: &CoefficientTree,
    field: &LeaderField,
    x0: f64,
    window: ScaleWindow,
    method: ExponentMethod,
) -> Result<f64> {
    window.check_depth(field.max_scale())?;
    check_p_admissible(tree, field.p(), ScaleWindow::with_margin(tree.max_scale(), 0))?;
    let mut ratios = Vec::with_capacity(window.len());
    let mut pts = Vec::with_capacity(window.len());
    for j in window.scales() {
        let node: NodeRef = crate::dyadic::node_containing(x0, j)?;
        let l = field.get(node);
        if l > 0.0 {
            ratios.push(-l.log2() / j as f64);
            pts.push((-(j as f64), l.log2()));
        } else {
            ratios.push(f64::INFINITY);
        }
    }
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(match method {
        ExponentMethod::MinRatio => min_ratio,
        ExponentMethod::Regression => {
            if pts.is_empty() {
                f64::INFINITY
            } else {
                let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
                ols_slope(&x, &y).unwrap_or(min_ratio)
            }
        }
    })
}

/// Settings for [`empirical_spectrum`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumOptions {
    pub epsilon: f64,
    /// Half-width for leader densities; defaults to `epsilon`. Leader values
    /// of sparse trees sit on a lattice of spacing about `1/j` in `h`, so
    /// they may need wider bands than coefficients.
    #[serde(default)]
    pub leader_epsilon: Option<f64>,
    /// Window for leader densities; defaults to `[ceil(J/2), J-2]`.
    pub leader_window: Option<ScaleWindow>,
    /// Window for coefficient densities and the scaling function; defaults
    /// to `[ceil(J/2), J]` (coefficients carry no truncation bias).
    pub coefficient_window: Option<ScaleWindow>,
    pub aggregation: Aggregation,
    /// Number of `α` points for the coefficient density.
    pub alpha_points: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions {
            epsilon: 0.1,
            leader_epsilon: None,
            leader_window: None,
            coefficient_window: None,
            aggregation: Aggregation::MaxOverScales,
            alpha_points: 512,
        }
    }
}

impl SpectrumOptions {
    pub fn leader_window(&self, max_scale: u32) -> ScaleWindow {
        self.leader_window.unwrap_or_else(|| ScaleWindow::default_for(max_scale))
    }

    pub fn coefficient_window(&self, max_scale: u32) -> ScaleWindow {
        self.coefficient_window.unwrap_or_else(|| ScaleWindow::with_margin(max_scale, 0))
    }
}

/// Default `α` grid for the formalism: `n` points over `(-1/p + 1e-3, upper]`.
pub fn default_alpha_grid(p: f64, upper: f64, n: usize) -> Vec<f64> {
    linspace(-inv_p(p) + 1e-3, upper, n)
}

/// Both empirical views of the spectrum on a shared `h` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSpectrum {
    /// Large-deviation spectrum of restricted p-leaders (classical leaders
    /// for `p = inf`), read directly on the `h` grid.
    pub leader: SpectrumCurve,
    /// The formalism applied to the coefficient density.
    pub formalism: SpectrumCurve,
    pub leader_density: DensityEstimate,
    pub coefficient_density: DensityEstimate,
    /// `η̂_f(p)`, `+inf` for `p = inf`.
    #[serde(with = "inf_as_string")]
    pub eta_hat: f64,
}

pub fn empirical_spectrum(
    tree: &CoefficientTree,
    p: f64,
    h_grid: &[f64],
    opts: &SpectrumOptions,
) -> Result<EmpiricalSpectrum> {
    if !(p > 0.0) {
        return domain(format!("p must be positive, got {p}"));
    }
    check_grid(h_grid)?;
    let big_j = tree.max_scale();
    let cwin = opts.coefficient_window(big_j);
    let lwin = opts.leader_window(big_j);
    let eta_hat = check_p_admissible(tree, p, cwin)?;

    let field = if p.is_infinite() { compute_leaders_inf(tree)? } else { compute_restricted_p_leaders(tree, p)? };
    let leader_eps = opts.leader_epsilon.unwrap_or(opts.epsilon);
    let leader_density = estimate_density(&field, leader_eps, h_grid, lwin, opts.aggregation)?;
    let ip = inv_p(p);
    let leader_h_min = h_grid
        .iter()
        .zip(&leader_density.rho_hat)
        .find(|(_, r)| r.is_finite())
        .map(|(h, _)| *h)
        .unwrap_or(f64::INFINITY);
    let leader_h_max =
        h_grid.iter().zip(&leader_density.nu_hat).find(|(_, v)| **v >= 1.0).map(|(h, _)| *h).unwrap_or(f64::INFINITY);
    let h_min_scaling = eta_hat.is_finite().then_some(eta_hat * ip - ip);
    let leader = SpectrumCurve {
        p,
        h: h_grid.to_vec(),
        d: leader_density.rho_hat.clone(),
        h_min: leader_h_min,
        h_max_p: leader_h_max,
        h_min_scaling,
        provenance: Provenance::Empirical,
    };

    let upper = h_grid[h_grid.len() - 1];
    let alpha_grid = default_alpha_grid(p, upper.max(-ip + 2e-3), opts.alpha_points);
    let coefficient_density = estimate_density(tree, opts.epsilon, &alpha_grid, cwin, opts.aggregation)?;
    let valid_h: Vec<f64> = h_grid.iter().copied().filter(|h| *h > -ip).collect();
    if valid_h.len() != h_grid.len() {
        return domain(format!("h grid must lie above -1/p = {}", -ip));
    }
    let mut formalism = formalism_d(&coefficient_density.points(), p, h_grid)?;
    formalism.h_min_scaling = h_min_scaling;

    Ok(EmpiricalSpectrum { leader, formalism, leader_density, coefficient_density, eta_hat })
}

/// `-inf` entries serialize as `null`.
pub(crate) mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let out: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}

/// Non-finite scalars serialize as `"inf"` / `"-inf"`.
pub(crate) mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Num(*v).serialize(s)
        } else {
            Repr::Text(super::fmt_num(*v)).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("bad number '{other}'"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exactly `ceil(2^{ηj})` coefficients of size `2^{-αj}` per scale.
    fn idealized_lacunary(alpha: f64, eta: f64, max_scale: u32) -> CoefficientTree {
        CoefficientTree::from_fn(max_scale, |j, k| {
            let n = (eta * j as f64).exp2().ceil() as u64;
            if k < n {
                (-alpha * j as f64).exp2()
            } else {
                0.0
            }
        })
        .unwrap()
    }

    fn full_window() -> ScaleWindow {
        ScaleWindow::with_margin(14, 0)
    }

    #[test]
    fn windows() {
        assert_eq!(ScaleWindow::default_for(14), ScaleWindow { j_min: 7, j_max: 12 });
        assert_eq!(ScaleWindow::with_margin(13, 0), ScaleWindow { j_min: 7, j_max: 13 });
        assert!(ScaleWindow::new(0, 3).is_err());
        assert!(ScaleWindow::new(5, 4).is_err());
        let t = CoefficientTree::zeros(6).unwrap();
        assert!(estimate_density(&t, 0.1, &[0.5], ScaleWindow::new(2, 7).unwrap(), Aggregation::default()).is_err());
    }

    #[test]
    fn deterministic_count_density() {
        let t = CoefficientTree::from_fn(14, |j, k| if k < (1u64 << (j / 2)) { (-0.7 * j as f64).exp2() } else { 0.0 })
            .unwrap();
        let grid = linspace(0.4, 1.0, 61);
        let d = estimate_density(&t, 0.05, &grid, full_window(), Aggregation::MaxOverScales).unwrap();
        let r = d.rho_at(0.7);
        assert!((0.45..=0.5).contains(&r), "{r}");
        for (a, r) in grid.iter().zip(&d.rho_hat) {
            if (a - 0.7).abs() > 0.1 {
                assert_eq!(*r, f64::NEG_INFINITY, "alpha {a}");
            }
        }
    }

    #[test]
    fn zero_and_uniform_trees() {
        let grid = linspace(-0.5, 1.0, 31);
        let z = estimate_density(
            &CoefficientTree::zeros(10).unwrap(),
            0.1,
            &grid,
            ScaleWindow::default_for(10),
            Aggregation::default(),
        )
        .unwrap();
        assert!(z.rho_hat.iter().chain(&z.nu_hat).all(|v| *v == f64::NEG_INFINITY));

        let u = CoefficientTree::from_fn(10, |_, _| 1.0).unwrap();
        let d = estimate_density(&u, 0.1, &grid, ScaleWindow::default_for(10), Aggregation::default()).unwrap();
        for (a, nu) in grid.iter().zip(&d.nu_hat) {
            if a + 0.1 >= 0.0 {
                assert_eq!(*nu, 1.0, "alpha {a}");
            } else {
                assert_eq!(*nu, f64::NEG_INFINITY, "alpha {a}");
            }
        }
    }

    #[test]
    fn hull_examples() {
        let ninf = f64::NEG_INFINITY;
        assert_eq!(increasing_hull(&[ninf, 0.3, 0.1, 0.6]), vec![ninf, 0.3, 0.3, 0.6]);
        assert_eq!(increasing_hull(&[0.4; 5]), vec![0.4; 5]);
        assert_eq!(increasing_hull(&[ninf, 0.5, ninf, ninf]), vec![ninf, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn scaling_on_idealized_lacunary() {
        let t = idealized_lacunary(0.5, 0.5, 14);
        let eta = estimate_eta(&t, 2.0, full_window(), ScalingMethod::Regression).unwrap();
        assert!((eta - 1.5).abs() < 0.1, "{eta}");

        let neg = idealized_lacunary(-0.25, 0.5, 14);
        for method in [ScalingMethod::Regression, ScalingMethod::OriginRegression] {
            let est = estimate_scaling(&neg, &[0.5, 1.0, 1.5, 2.5, 3.0], full_window(), method).unwrap();
            assert!((est.p0_hat - 2.0).abs() < 0.05, "{method:?}: {}", est.p0_hat);
        }

        let z = estimate_scaling(
            &CoefficientTree::zeros(10).unwrap(),
            &[1.0, 2.0],
            ScaleWindow::default_for(10),
            ScalingMethod::default(),
        )
        .unwrap();
        assert!(z.eta_hat.iter().all(|e| *e == f64::INFINITY));
        assert_eq!(z.p0_hat, f64::INFINITY);
    }

    #[test]
    fn scaling_needs_three_scales() {
        let t = CoefficientTree::from_fn(10, |j, _| if j == 9 || j == 10 { 0.1 } else { 0.0 }).unwrap();
        assert!(matches!(
            estimate_eta(&t, 1.0, ScaleWindow::new(5, 10).unwrap(), ScalingMethod::default()),
            Err(MfaError::Estimation(_))
        ));
    }

    #[test]
    fn refuses_non_positive_scaling() {
        let u = CoefficientTree::from_fn(10, |_, _| 1.0).unwrap();
        assert!(matches!(check_p_admissible(&u, 2.0, ScaleWindow::default_for(10)), Err(MfaError::Refusal(_))));
        assert_eq!(check_p_admissible(&u, f64::INFINITY, ScaleWindow::default_for(10)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn formalism_examples() {
        let point = [(0.5, 0.5)];
        let grid = linspace(0.5, 1.5, 11);
        let c = formalism_d(&point, 2.0, &grid).unwrap();
        for (h, d) in grid.iter().zip(&c.d) {
            assert!((d - 0.5 * (h + 0.5)).abs() < 1e-15);
        }
        assert_eq!(c.d[0], 0.5);
        assert_eq!(c.d[10], 1.0);
        assert_eq!(c.h_max_p, 1.5);

        let inf = formalism_d(&point, f64::INFINITY, &linspace(0.5, 1.0, 6)).unwrap();
        for (h, d) in inf.h.iter().zip(&inf.d) {
            assert!((d - h).abs() < 1e-15);
        }
        assert_eq!(inf.h_max_p, 1.0);

        let below = formalism_d(&point, 2.0, &[0.2, 0.4]).unwrap();
        assert!(below.d.iter().all(|d| *d == f64::NEG_INFINITY));
        assert!(formalism_d(&point, 2.0, &[-0.5]).is_err());
    }

    #[test]
    fn h_max_examples() {
        assert_eq!(h_max(&[(0.5, 0.5)], 2.0), 1.5);
        assert_eq!(h_max(&[(0.5, 0.5)], f64::INFINITY), 1.0);
        assert_eq!(h_max(&[(0.3, 1.0), (0.6, 0.2)], 2.0), 0.3);
        assert_eq!(h_max(&[(0.3, f64::NEG_INFINITY)], 2.0), f64::INFINITY);
        assert_eq!(h_max(&[(0.3, 0.0)], 2.0), f64::INFINITY);
    }

    #[test]
    fn pointwise_exponent_on_a_cascade() {
        // |c| = 2^{-0.5 j} along the path to x0, zero elsewhere
        let x0 = 0.3;
        let t = CoefficientTree::from_fn(14, |j, k| {
            if k == (x0 * (1u64 << j) as f64).floor() as u64 {
                (-0.5 * j as f64).exp2()
            } else {
                0.0
            }
        })
        .unwrap();
        let w = ScaleWindow::default_for(14);
        let e = compute_restricted_p_leaders(&t, 2.0).unwrap();
        let h = pointwise_exponent(&t, &e, x0, w, ExponentMethod::MinRatio).unwrap();
        assert!((h - 0.5).abs() < 1e-12, "{h}");
        let l = crate::leaders::compute_p_leaders(&t, 2.0).unwrap();
        let h = pointwise_exponent(&t, &l, x0, w, ExponentMethod::Regression).unwrap();
        assert!((h - 0.5).abs() < 0.1, "{h}");

        let z = CoefficientTree::zeros(10).unwrap();
        let f = compute_leaders_inf(&z).unwrap();
        assert_eq!(
            pointwise_exponent(&z, &f, 0.5, ScaleWindow::default_for(10), ExponentMethod::MinRatio).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn empirical_spectrum_edge_cases() {
        let grid = linspace(0.01, 1.51, 16);
        let z =
            empirical_spectrum(&CoefficientTree::zeros(10).unwrap(), 2.0, &grid, &SpectrumOptions::default()).unwrap();
        assert!(z.leader.d.iter().chain(&z.formalism.d).all(|d| *d == f64::NEG_INFINITY));

        // a uniform tree has η_f(p) = 0: refused for finite p, fine for p = inf
        let u = CoefficientTree::from_fn(10, |_, _| 1.0).unwrap();
        assert!(matches!(empirical_spectrum(&u, 2.0, &grid, &SpectrumOptions::default()), Err(MfaError::Refusal(_))));
        let s = empirical_spectrum(&u, f64::INFINITY, &grid, &SpectrumOptions::default()).unwrap();
        assert_eq!(s.leader.h_min, 0.01);
        assert_eq!(s.leader.d[0], 1.0);
        assert!(s.leader.d[1..].iter().filter(|h| **h > f64::NEG_INFINITY).count() <= 1);
    }

    #[test]
    fn serialization_shapes() {
        let c = formalism_d(&[(0.5, 0.5)], 2.0, &[0.2, 0.5, 1.5, 2.0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(v["D"][0], serde_json::Value::Null);
        assert_eq!(v["h_max"], 1.5);
        assert_eq!(v["p"], 2.0);
        assert!(c.to_csv().starts_with("h,D\n0.2,-inf\n"));
        let back: SpectrumCurve = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let inf = formalism_d(&[(0.5, 0.5)], f64::INFINITY, &[1.0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&inf.to_json()).unwrap();
        assert_eq!(v["p"], "inf");
    }

    fn random_tree(max_scale: u32, seed: u64) -> CoefficientTree {
        CoefficientTree::from_fn(max_scale, |j, k| {
            let u = crate::rng::node_uniform(seed, j, k, crate::rng::Stream::Magnitude);
            if u < 0.6 {
                0.0
            } else {
                (-(u * 2.0 - 0.5) * j as f64).exp2()
            }
        })
        .unwrap()
    }

    fn density_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec(prop_oneof![1 => Just(f64::NEG_INFINITY), 3 => 0.0f64..=1.0], 1..40)
            .prop_flat_map(|rho| {
                let n = rho.len();
                (Just(rho), prop::collection::vec(-0.45f64..2.0, n))
            })
            .prop_map(|(rho, mut alpha)| {
                alpha.sort_by(f64::total_cmp);
                alpha.into_iter().zip(rho).collect()
            })
    }

    proptest! {
        #[test]
        fn hull_is_idempotent_and_dominates(v in prop::collection::vec(prop_oneof![Just(f64::NEG_INFINITY), 0.0f64..1.0], 0..50)) {
            let h = increasing_hull(&v);
            prop_assert_eq!(increasing_hull(&h), h.clone());
            for (a, b) in v.iter().zip(&h) {
                prop_assert!(b >= a);
            }
            prop_assert!(h.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn formalism_of_hull_is_identical(dens in density_strategy(), p in prop_oneof![Just(f64::INFINITY), 2.5f64..20.0]) {
            // below -1/p the density is non-positive when η_f(p) > 0
            let dens: Vec<(f64, f64)> = dens.into_iter().filter(|(a, _)| *a > -inv_p(p)).collect();
            prop_assume!(!dens.is_empty());
            let rho: Vec<f64> = dens.iter().map(|x| x.1).collect();
            let hull: Vec<(f64, f64)> = dens.iter().map(|x| x.0).zip(increasing_hull(&rho)).collect();
            let grid = linspace(-inv_p(p) + 1e-3, 2.5, 97);
            let a = formalism_d(&dens, p, &grid).unwrap();
            let b = formalism_d(&hull, p, &grid).unwrap();
            prop_assert_eq!(a.d, b.d);
            prop_assert_eq!(a.h_max_p.to_bits(), b.h_max_p.to_bits());
        }

        #[test]
        fn profile_counts_dominate_band_counts(seed in any::<u64>(), eps in 0.02f64..0.3) {
            let t = random_tree(9, seed);
            let grid = linspace(-0.6, 1.6, 45);
            let w = ScaleWindow::new(2, 9).unwrap();
            let hist = LogHistogram::build(&t, eps, &grid, w).unwrap();
            for (rho, nu) in hist.counts_rho.iter().zip(&hist.counts_nu) {
                for (i, n) in nu.iter().enumerate() {
                    prop_assert!(rho[..=i].iter().all(|r| n >= r));
                }
            }
            for agg in [Aggregation::MaxOverScales, Aggregation::Regression, Aggregation::OriginRegression] {
                let d = estimate_density(&t, eps, &grid, w, agg).unwrap();
                prop_assert!(d.rho_hat.iter().chain(&d.nu_hat).all(|v| *v <= 1.0 && (*v >= 0.0 || *v == f64::NEG_INFINITY)));
            }
        }

        #[test]
        fn exponent_is_non_increasing_in_p(seed in any::<u64>(), x0 in 0.0f64..1.0) {
            let t = random_tree(10, seed);
            let w = ScaleWindow::default_for(10);
            let mut last = f64::INFINITY;
            for p in [0.5, 1.0, 2.0, 8.0] {
                let field = compute_restricted_p_leaders(&t, p).unwrap();
                match pointwise_exponent(&t, &field, x0, w, ExponentMethod::MinRatio) {
                    Ok(h) => {
                        prop_assert!(h <= last + 1e-12, "p {} gave {} after {}", p, h, last);
                        last = h;
                    }
                    Err(MfaError::Refusal(_)) => break,
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
            }
        }
    }
}
