//! Random wavelet series: per-scale atom laws, a counter-based sampler, the
//! asymptotic quantities of a law and its almost-sure p-spectrum, and a Monte
//! Carlo harness comparing estimators with the theory.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::CoefficientTree;
use crate::error::{domain, MfaError, Result};
use crate::largedev::{
    empirical_spectrum, estimate_density, estimate_eta, Aggregation, Provenance, ScalingMethod, SpectrumCurve,
    SpectrumOptions,
};
use crate::numeric::{inv_p, linspace};
use crate::rng::{node_bits, node_uniform, splitmix64, Stream};
use crate::snu::{AdmissibleProfile, DEFAULT_GRID_POINTS};

/// Coefficient `2^{-α j}` with probability `2^{(η-1) j}` at scale `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub alpha: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Lacunary {
        alpha: f64,
        eta: f64,
    },
    DiscreteAtoms {
        atoms: Vec<Atom>,
    },
    /// Grid atoms carrying the cumulative masses of a profile.
    ProfileAssociated {
        profile: AdmissibleProfile,
        #[serde(default = "default_grid_points")]
        grid_points: usize,
    },
}

fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

/// A per-scale law `ρ_j` of `X_{j,k} = -log2|c_{j,k}| / j`; mass not on an
/// atom gives a zero coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleDistributionSpec {
    #[serde(flatten)]
    pub family: Family,
    /// Attach independent Rademacher signs to sampled coefficients.
    #[serde(default)]
    pub signs: bool,
}

impl ScaleDistributionSpec {
    pub fn new(family: Family) -> Self {
        ScaleDistributionSpec { family, signs: false }
    }

    pub fn lacunary(alpha: f64, eta: f64) -> Result<Self> {
        let s = Self::new(Family::Lacunary { alpha, eta });
        s.check_family()?;
        Ok(s)
    }

    pub fn discrete(atoms: Vec<Atom>) -> Result<Self> {
        let s = Self::new(Family::DiscreteAtoms { atoms });
        s.check_family()?;
        Ok(s)
    }

    pub fn with_signs(mut self, signs: bool) -> Self {
        self.signs = signs;
        self
    }

    /// Checks parameters independent of the scale.
    pub fn check_family(&self) -> Result<()> {
        match &self.family {
            Family::Lacunary { alpha, eta } => {
                if !alpha.is_finite() {
                    return domain(format!("alpha must be finite, got {alpha}"));
                }
                if !(*eta > 0.0 && *eta < 1.0) {
                    return domain(format!("lacunary eta must lie in (0, 1), got {eta}"));
                }
            }
            Family::DiscreteAtoms { atoms } => {
                if atoms.is_empty() {
                    return domain("at least one atom is required");
                }
                for a in atoms {
                    if !a.alpha.is_finite() {
                        return domain(format!("atom alpha must be finite, got {}", a.alpha));
                    }
                    if !(a.eta > 0.0 && a.eta <= 1.0) {
                        return domain(format!("atom eta must lie in (0, 1], got {}", a.eta));
                    }
                }
                let mut alphas: Vec<f64> = atoms.iter().map(|a| a.alpha).collect();
                alphas.sort_by(f64::total_cmp);
                if alphas.windows(2).any(|w| w[0] == w[1]) {
                    return domain("atom alphas must be distinct");
                }
            }
            Family::ProfileAssociated { profile, grid_points } => {
                if *grid_points < 1 {
                    return domain("grid needs at least one point");
                }
                if !profile.positive_above_min() {
                    return Err(MfaError::Refusal(
                        "associated series need nu(alpha) > 0 for every alpha > alpha_min".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Atom positions `α_i` and probabilities at scale `j`, sorted by `α`.
    /// At `j = 0` every atom has probability 1; the total is then
    /// normalised to 1.
    pub fn probabilities(&self, j: u32) -> Vec<(f64, f64)> {
        let jf = j as f64;
        let mut out: Vec<(f64, f64)> = match &self.family {
            Family::Lacunary { alpha, eta } => vec![(*alpha, ((eta - 1.0) * jf).exp2())],
            Family::DiscreteAtoms { atoms } => atoms.iter().map(|a| (a.alpha, ((a.eta - 1.0) * jf).exp2())).collect(),
            Family::ProfileAssociated { profile, grid_points } => associated_masses(profile, *grid_points, j),
        };
        out.sort_by(|x, y| x.0.total_cmp(&y.0));
        if j == 0 {
            let total: f64 = out.iter().map(|(_, m)| m).sum();
            if total > 1.0 {
                out.iter_mut().for_each(|(_, m)| *m /= total);
            }
        }
        out
    }

    /// Checks that atom masses sum to at most 1 at every scale `1..=max_scale`.
    pub fn validate(&self, max_scale: u32) -> Result<()> {
        self.check_family()?;
        for j in 1..=max_scale {
            let total: f64 = self.probabilities(j).iter().map(|(_, m)| m).sum();
            if total > 1.0 + 1e-12 {
                return Err(MfaError::Distribution {
                    scale: j,
                    message: format!("atom probabilities sum to {total} > 1"),
                });
            }
        }
        Ok(())
    }
}

/// Grid knots `α_i` and `ν(α_i)` of an associated series.
pub fn associated_knots(profile: &AdmissibleProfile, grid_points: usize) -> Vec<(f64, f64)> {
    let amin = profile.alpha_min();
    let mut knots = linspace(amin, amin + 4.0, grid_points.max(1));
    for (a, _) in profile.knots() {
        if *a <= amin + 4.0 && !knots.contains(a) {
            knots.push(*a);
        }
    }
    knots.sort_by(f64::total_cmp);
    knots.into_iter().map(|a| (a, profile.eval(a))).collect()
}

/// Cumulative mass `min(1, max(j² 2^-j, 2^{(ν-1) j}))` at each knot,
/// differenced into atom masses.
fn associated_masses(profile: &AdmissibleProfile, grid_points: usize, j: u32) -> Vec<(f64, f64)> {
    let jf = j as f64;
    let floor = jf * jf * (-jf).exp2();
    let mut placed = 0.0;
    associated_knots(profile, grid_points)
        .into_iter()
        .map(|(a, nu)| {
            let cum = floor.max(((nu - 1.0) * jf).exp2()).min(1.0);
            let m = (cum - placed).max(0.0);
            placed = placed.max(cum);
            (a, m)
        })
        .collect()
}

/// Draws a tree of depth `max_scale`. Node `(j, k)` uses its own counter-based
/// variate, so the result depends only on `(spec, max_scale, seed)`.
pub fn sample(spec: &ScaleDistributionSpec, max_scale: u32, seed: u64) -> Result<CoefficientTree> {
    spec.validate(max_scale)?;
    let laws: Vec<Vec<(f64, f64)>> = (0..=max_scale)
        .map(|j| {
            let mut cum = 0.0;
            spec.probabilities(j)
                .into_iter()
                .map(|(a, m)| {
                    cum += m;
                    (cum, (-(a * j as f64)).exp2())
                })
                .collect()
        })
        .collect();
    sample_with(max_scale, seed, spec.signs, |j, u| {
        laws[j as usize].iter().find(|(cum, _)| u < *cum).map_or(0.0, |(_, v)| *v)
    })
}

/// Generic sampler: `quantile(j, u)` maps a uniform variate to a magnitude.
pub fn sample_with<F>(max_scale: u32, seed: u64, signs: bool, quantile: F) -> Result<CoefficientTree>
where
    F: Fn(u32, f64) -> f64 + Sync,
{
    let levels: Vec<Vec<f64>> = (0..=max_scale)
        .map(|j| {
            (0..1u64 << j).into_par_iter().map(|k| quantile(j, node_uniform(seed, j, k, Stream::Magnitude))).collect()
        })
        .collect();
    let tree = CoefficientTree::new(levels)?;
    if !signs {
        return Ok(tree);
    }
    let signs: Vec<Vec<bool>> = (0..=max_scale)
        .map(|j| (0..1u64 << j).into_par_iter().map(|k| node_bits(seed, j, k, Stream::Sign) & 1 == 1).collect())
        .collect();
    tree.with_signs(signs)
}

/// Whether a point of the support is known to lie in `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WMembership {
    Member,
    /// `ρ(α) = 0` without a divergence guarantee.
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WPoint {
    pub alpha: f64,
    pub membership: WMembership,
}

/// Asymptotic density `ρ`, profile `ν` and closed-interval profile `λ` of an
/// atom law, which for the supported families are carried by finitely many
/// points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalAsymptotics {
    /// `(α_i, ρ(α_i))`, sorted by `α`; `ρ = -inf` everywhere else.
    pub atoms: Vec<Atom>,
    pub w: Vec<WPoint>,
    pub h_min: f64,
    /// Jump points of `λ`.
    pub discontinuities: Vec<f64>,
}

/// The asymptotic functions sampled on a grid; `-inf` as `null` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsGrid {
    pub alpha: Vec<f64>,
    #[serde(with = "crate::largedev::neg_inf_as_null")]
    pub bold_rho: Vec<f64>,
    #[serde(with = "crate::largedev::neg_inf_as_null")]
    pub bold_nu: Vec<f64>,
    #[serde(with = "crate::largedev::neg_inf_as_null")]
    pub bold_lambda: Vec<f64>,
}

impl TheoreticalAsymptotics {
    pub fn bold_rho(&self, alpha: f64) -> f64 {
        self.atoms.iter().find(|a| a.alpha == alpha).map_or(f64::NEG_INFINITY, |a| a.eta)
    }

    /// `sup_{α' ≤ α} ρ(α')`.
    pub fn bold_nu(&self, alpha: f64) -> f64 {
        self.atoms.iter().filter(|a| a.alpha <= alpha).map(|a| a.eta).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Growth rate of `2^j ρ_j((-inf, α])`. Atoms make it right-continuous,
    /// so it coincides with `ν`; the jumps are listed in `discontinuities`.
    pub fn bold_lambda(&self, alpha: f64) -> f64 {
        self.bold_nu(alpha)
    }

    pub fn in_w(&self, alpha: f64) -> Option<WMembership> {
        self.w.iter().find(|w| w.alpha == alpha).map(|w| w.membership)
    }

    pub fn on_grid(&self, grid: &[f64]) -> AsymptoticsGrid {
        AsymptoticsGrid {
            alpha: grid.to_vec(),
            bold_rho: grid.iter().map(|a| self.bold_rho(*a)).collect(),
            bold_nu: grid.iter().map(|a| self.bold_nu(*a)).collect(),
            bold_lambda: grid.iter().map(|a| self.bold_lambda(*a)).collect(),
        }
    }

    /// `(α_i, ρ(α_i))` pairs, the input of the formalism.
    pub fn density_points(&self) -> Vec<(f64, f64)> {
        self.atoms.iter().map(|a| (a.alpha, a.eta)).collect()
    }
}

pub fn asymptotics(spec: &ScaleDistributionSpec) -> Result<TheoreticalAsymptotics> {
    spec.check_family()?;
    // (alpha, rho, divergence of sum_j 2^j m_j guaranteed)
    let mut pts: Vec<(f64, f64, bool)> = match &spec.family {
        Family::Lacunary { alpha, eta } => vec![(*alpha, *eta, true)],
        Family::DiscreteAtoms { atoms } => atoms.iter().map(|a| (a.alpha, a.eta, true)).collect(),
        Family::ProfileAssociated { profile, grid_points } => {
            // the first knot carries the whole cumulative mass, which the
            // floor keeps above j² 2^-j; later knots only carry mass where ν
            // strictly increases
            let knots = associated_knots(profile, *grid_points);
            let mut out = vec![(knots[0].0, knots[0].1, true)];
            for w in knots.windows(2) {
                if w[1].1 > w[0].1 {
                    out.push((w[1].0, w[1].1, w[1].1 > 0.0));
                }
            }
            out
        }
    };
    pts.sort_by(|x, y| x.0.total_cmp(&y.0));
    let atoms: Vec<Atom> = pts.iter().map(|(a, r, _)| Atom { alpha: *a, eta: *r }).collect();
    let w = pts
        .iter()
        .map(|(a, r, div)| WPoint {
            alpha: *a,
            membership: if *r > 0.0 || *div { WMembership::Member } else { WMembership::Undetermined },
        })
        .collect();
    let mut discontinuities = Vec::new();
    let mut running = f64::NEG_INFINITY;
    for a in &atoms {
        if a.eta > running {
            discontinuities.push(a.alpha);
            running = a.eta;
        }
    }
    Ok(TheoreticalAsymptotics { h_min: atoms[0].alpha, atoms, w, discontinuities })
}

/// The almost-sure p-spectrum `D(h) = (h + 1/p) max_{α_i ≤ h} ρ_i/(α_i + 1/p)`
/// on `[h_min, h_max]`, `-inf` outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalSpectrum {
    #[serde(with = "crate::largedev::inf_as_string")]
    pub p: f64,
    #[serde(with = "crate::largedev::inf_as_string")]
    pub p0: f64,
    pub h_min: f64,
    #[serde(with = "crate::largedev::inf_as_string")]
    pub h_max: f64,
    pub atoms: Vec<Atom>,
}

/// `p_0 = sup{p : min_i (α_i p + 1 - ρ_i) > 0}`.
pub fn critical_p(atoms: &[Atom]) -> f64 {
    atoms.iter().fold(f64::INFINITY, |acc, a| {
        if a.alpha < 0.0 {
            acc.min((1.0 - a.eta) / -a.alpha)
        } else if a.alpha == 0.0 && a.eta >= 1.0 {
            0.0
        } else {
            acc
        }
    })
}

/// `η_f(p) = min_i (α_i p + 1 - ρ_i)`.
pub fn scaling_function(atoms: &[Atom], p: f64) -> f64 {
    atoms.iter().map(|a| a.alpha * p + 1.0 - a.eta).fold(f64::INFINITY, f64::min)
}

impl TheoreticalSpectrum {
    fn ratio_up_to(&self, h: f64) -> f64 {
        let ip = inv_p(self.p);
        self.atoms.iter().take_while(|a| a.alpha <= h).map(|a| a.eta / (a.alpha + ip)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn eval(&self, h: f64) -> f64 {
        if h < self.h_min || h > self.h_max {
            return f64::NEG_INFINITY;
        }
        ((h + inv_p(self.p)) * self.ratio_up_to(h)).min(1.0)
    }

    pub fn curve(&self, h_grid: &[f64]) -> SpectrumCurve {
        SpectrumCurve {
            p: self.p,
            h: h_grid.to_vec(),
            d: h_grid.iter().map(|h| self.eval(*h)).collect(),
            h_min: self.h_min,
            h_max_p: self.h_max,
            h_min_scaling: None,
            provenance: Provenance::Theoretical,
        }
    }
}

pub fn theoretical_spectrum(spec: &ScaleDistributionSpec, p: f64) -> Result<TheoreticalSpectrum> {
    if !(p > 0.0) || p.is_nan() {
        return domain(format!("p must be positive, got {p}"));
    }
    let asy = asymptotics(spec)?;
    let atoms = asy.atoms;
    let p0 = critical_p(&atoms);
    let admissible = if p.is_infinite() { p0.is_infinite() && asy.h_min > 0.0 } else { p < p0 };
    if !admissible {
        return Err(MfaError::Refusal(format!("p = {} is not below the critical index p0 = {}", fmt_p(p), fmt_p(p0))));
    }
    let ip = inv_p(p);
    // solve (h + 1/p) R_k = 1 on each piece [α_k, α_{k+1}) of constant running ratio
    let mut h_max = f64::INFINITY;
    let mut best = f64::NEG_INFINITY;
    for (k, a) in atoms.iter().enumerate() {
        best = best.max(a.eta / (a.alpha + ip));
        if !(best > 0.0) {
            continue;
        }
        let next = atoms.get(k + 1).map_or(f64::INFINITY, |b| b.alpha);
        let root = (1.0 / best - ip).max(a.alpha);
        if root < next {
            h_max = root;
            break;
        }
    }
    Ok(TheoreticalSpectrum { p, p0, h_min: asy.h_min, h_max, atoms })
}

fn fmt_p(p: f64) -> String {
    if p.is_infinite() {
        "inf".into()
    } else {
        format!("{p}")
    }
}

/// Gate thresholds for [`validate_montecarlo`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// `|ρ̂(α_i) - ρ(α_i)|` at the atoms.
    pub density: f64,
    /// `|η̂(p) - η(p)|` over the scaling exponents.
    pub eta: f64,
    /// `|D̂(h) - D(h)|` over the comparison range.
    pub spectrum: f64,
    pub h_max: f64,
    /// Fraction of realizations that must pass each gate.
    pub pass_fraction: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { density: 0.05, eta: 0.1, spectrum: 0.1, h_max: 0.1, pass_fraction: 0.875 }
    }
}

impl Tolerances {
    /// Every tolerance set to `tol`.
    pub fn uniform(tol: f64) -> Self {
        Tolerances { density: tol, eta: tol, spectrum: tol, h_max: tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOptions {
    pub seed: u64,
    /// Spectrum analysis settings.
    pub analysis: SpectrumOptions,
    /// Half-width of the coefficient density compared at the atoms.
    pub density_epsilon: f64,
    pub scaling_method: ScalingMethod,
    /// `h` range of the spectrum comparison; defaults to
    /// `[h_min + 2ε, h_max - 4ε]`.
    pub h_range: Option<(f64, f64)>,
    pub h_points: usize,
    /// Exponents at which the scaling function is compared.
    pub scaling_p: Vec<f64>,
    pub tolerances: Tolerances,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            seed: 0,
            analysis: SpectrumOptions {
                epsilon: 0.02,
                leader_epsilon: Some(0.1),
                aggregation: Aggregation::OriginRegression,
                ..SpectrumOptions::default()
            },
            density_epsilon: 0.05,
            scaling_method: ScalingMethod::OriginRegression,
            h_range: None,
            h_points: 141,
            scaling_p: vec![0.5, 1.0, 2.0],
            tolerances: Tolerances::default(),
        }
    }
}

/// Deviations measured on one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationMetrics {
    pub seed: u64,
    pub density_dev: f64,
    /// Grid points farther than `2ε` from every atom with a finite `ρ̂`
    /// (`ε` the density half-width).
    pub spurious_density_points: usize,
    pub eta_dev: f64,
    pub spectrum_dev: f64,
    #[serde(with = "crate::largedev::inf_as_string")]
    pub h_max_hat: f64,
    #[serde(with = "crate::largedev::inf_as_string")]
    pub h_max_dev: f64,
    /// `|D̂_leader - D̂_formalism|` over the comparison range (informational).
    pub pathway_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub tolerance: f64,
    /// Worst deviation over all realizations.
    #[serde(with = "crate::largedev::inf_as_string")]
    pub worst: f64,
    pub mean: f64,
    pub passing: usize,
    pub required: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub spec: ScaleDistributionSpec,
    #[serde(with = "crate::largedev::inf_as_string")]
    pub p: f64,
    pub max_scale: u32,
    pub realizations: usize,
    pub epsilon: f64,
    pub h_range: Option<(f64, f64)>,
    pub tolerances: Tolerances,
    pub theory: Option<TheoreticalSpectrum>,
    pub per_realization: Vec<RealizationMetrics>,
    pub gates: Vec<Gate>,
    pub passed: bool,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<10} {:>10} {:>10} {:>10} {:>9} {:>6}\n",
            "gate", "tolerance", "worst", "mean", "passing", "result"
        );
        for g in &self.gates {
            s.push_str(&format!(
                "{:<10} {:>10.4} {:>10.4} {:>10.4} {:>5}/{:<3} {:>6}\n",
                g.name,
                g.tolerance,
                g.worst,
                g.mean,
                g.passing,
                self.realizations,
                if g.passed { "PASS" } else { "FAIL" }
            ));
        }
        for w in &self.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        s
    }
}

fn max_abs_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() }).fold(0.0, f64::max)
}

/// Samples `realizations` trees and compares coefficient densities, the
/// scaling function, the empirical spectrum and `h_max` with the theory.
/// Failures are report entries, not errors; invalid inputs are errors.
pub fn validate_montecarlo(
    spec: &ScaleDistributionSpec,
    p: f64,
    max_scale: u32,
    realizations: usize,
    opts: &ValidationOptions,
) -> Result<ValidationReport> {
    spec.validate(max_scale)?;
    let tol = &opts.tolerances;
    if !(0.0..=1.0).contains(&tol.pass_fraction) {
        return domain("pass_fraction must lie in [0, 1]");
    }
    let mut report = ValidationReport {
        spec: spec.clone(),
        p,
        max_scale,
        realizations,
        epsilon: opts.analysis.epsilon,
        h_range: None,
        tolerances: tol.clone(),
        theory: None,
        per_realization: Vec::new(),
        gates: Vec::new(),
        passed: true,
        warnings: Vec::new(),
    };
    if realizations == 0 {
        report.warnings.push("no realizations requested; nothing was validated".into());
        return Ok(report);
    }
    let theory = theoretical_spectrum(spec, p)?;
    let eps = opts.analysis.epsilon;
    let deps = opts.density_epsilon;
    if !(deps > 0.0) {
        return domain(format!("density epsilon must be positive, got {deps}"));
    }
    let (h_lo, h_hi) = opts.h_range.unwrap_or((theory.h_min + 2.0 * eps, theory.h_max - 4.0 * eps));
    if !(h_lo < h_hi) || !h_hi.is_finite() {
        return domain(format!("empty spectrum comparison range [{h_lo}, {h_hi}]"));
    }
    report.h_range = Some((h_lo, h_hi));
    let h_grid = linspace(h_lo, h_hi, opts.h_points.max(2));
    let d_theory: Vec<f64> = h_grid.iter().map(|h| theory.eval(*h)).collect();
    let atoms = &theory.atoms;
    let scaling_p: Vec<f64> = opts.scaling_p.iter().copied().filter(|q| q.is_finite() && *q < theory.p0).collect();
    let cwin = opts.analysis.coefficient_window(max_scale);

    let metrics: Result<Vec<RealizationMetrics>> = (0..realizations as u64)
        .into_par_iter()
        .map(|r| {
            let seed = splitmix64(opts.seed ^ splitmix64(r));
            let tree = sample(spec, max_scale, seed)?;

            let alpha_lo = atoms[0].alpha - 1.0;
            let alpha_hi = atoms[atoms.len() - 1].alpha + 1.0;
            let n = (((alpha_hi - alpha_lo) / (deps / 4.0)).round() as usize).max(2) + 1;
            let mut grid = linspace(alpha_lo, alpha_hi, n);
            grid.extend(atoms.iter().map(|a| a.alpha));
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            let dens = estimate_density(&tree, deps, &grid, cwin, opts.analysis.aggregation)?;
            let density_dev = atoms
                .iter()
                .map(|a| {
                    let r = dens.rho_at(a.alpha);
                    if r == f64::NEG_INFINITY {
                        f64::INFINITY
                    } else {
                        (r - a.eta).abs()
                    }
                })
                .fold(0.0, f64::max);
            let spurious_density_points = grid
                .iter()
                .zip(&dens.rho_hat)
                .filter(|(g, r)| r.is_finite() && atoms.iter().all(|a| (*g - a.alpha).abs() > 2.0 * deps))
                .count();

            let mut eta_dev: f64 = 0.0;
            for &q in &scaling_p {
                let est = estimate_eta(&tree, q, cwin, opts.scaling_method)?;
                eta_dev = eta_dev.max((est - scaling_function(atoms, q)).abs());
            }

            let emp = empirical_spectrum(&tree, p, &h_grid, &opts.analysis)?;
            let spectrum_dev = max_abs_dev(&emp.formalism.d, &d_theory);
            let pathway_gap = max_abs_dev(&emp.formalism.d, &emp.leader.d);
            let h_max_hat = emp.formalism.h_max_p;
            Ok(RealizationMetrics {
                seed,
                density_dev,
                spurious_density_points,
                eta_dev,
                spectrum_dev,
                h_max_hat,
                h_max_dev: (h_max_hat - theory.h_max).abs(),
                pathway_gap,
            })
        })
        .collect();
    let metrics = metrics?;

    let required = (tol.pass_fraction * realizations as f64).ceil() as usize;
    let gate = |name: &str, tolerance: f64, f: &dyn Fn(&RealizationMetrics) -> f64| {
        let vals: Vec<f64> = metrics.iter().map(f).collect();
        let passing = vals.iter().filter(|v| **v <= tolerance).count();
        Gate {
            name: name.into(),
            tolerance,
            worst: vals.iter().copied().fold(0.0, f64::max),
            mean: vals.iter().sum::<f64>() / vals.len() as f64,
            passing,
            required,
            passed: passing >= required,
        }
    };
    let mut gates = vec![gate("density", tol.density, &|m| m.density_dev)];
    if !scaling_p.is_empty() {
        gates.push(gate("eta", tol.eta, &|m| m.eta_dev));
    }
    gates.push(gate("spectrum", tol.spectrum, &|m| m.spectrum_dev));
    gates.push(gate("h_max", tol.h_max, &|m| m.h_max_dev));
    report.passed = gates.iter().all(|g| g.passed);
    report.gates = gates;
    report.per_realization = metrics;
    report.theory = Some(theory);
    Ok(report)
}
