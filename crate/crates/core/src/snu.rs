//! Admissible profiles, the critical index `p_ν`, finite-scale membership
//! diagnostics, and random wavelet series associated to a profile.

use serde::{Deserialize, Serialize};

use crate::dyadic::CoefficientTree;
use crate::error::{domain, MfaError, Result};
use crate::largedev::{estimate_density, Aggregation, ScaleWindow};
use crate::numeric::linspace;
use crate::rws::{Family, ScaleDistributionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Interpolation {
    #[serde(rename = "right-constant")]
    RightConstant,
    #[serde(rename = "linear")]
    Linear,
}

/// A non-decreasing, right-continuous profile `ν : R → {-inf} ∪ [0, 1]`,
/// given by knots from `alpha_min` on; constant after the last knot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile", into = "RawProfile")]
pub struct AdmissibleProfile {
    alpha_min: f64,
    knots: Vec<(f64, f64)>,
    interpolation: Interpolation,
}

#[derive(Serialize, Deserialize)]
struct RawProfile {
    alpha_min: f64,
    knots: Vec<(f64, f64)>,
    interpolation: Interpolation,
}

impl TryFrom<RawProfile> for AdmissibleProfile {
    type Error = MfaError;
    fn try_from(r: RawProfile) -> Result<Self> {
        AdmissibleProfile::new(r.alpha_min, r.knots, r.interpolation)
    }
}

impl From<AdmissibleProfile> for RawProfile {
    fn from(p: AdmissibleProfile) -> Self {
        RawProfile { alpha_min: p.alpha_min, knots: p.knots, interpolation: p.interpolation }
    }
}

/// One piece of the profile: `ν` on `[lo, hi)`, affine between the end values.
#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    v_lo: f64,
    v_hi: f64,
}

impl Segment {
    fn at(&self, a: f64) -> f64 {
        if a == self.lo || self.v_lo == self.v_hi {
            self.v_lo
        } else if a == self.hi {
            self.v_hi
        } else {
            self.v_lo + (self.v_hi - self.v_lo) * (a - self.lo) / (self.hi - self.lo)
        }
    }
}

impl AdmissibleProfile {
    pub fn new(alpha_min: f64, knots: Vec<(f64, f64)>, interpolation: Interpolation) -> Result<Self> {
        if !alpha_min.is_finite() {
            return domain("alpha_min must be finite");
        }
        if knots.is_empty() {
            return domain("profile needs at least one knot");
        }
        if knots[0].0 != alpha_min {
            return domain(format!("first knot {} must sit at alpha_min {alpha_min}", knots[0].0));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return domain("knot abscissae must be strictly increasing");
            }
            if w[1].1 < w[0].1 {
                return domain(format!("profile decreases between {} and {}", w[0].0, w[1].0));
            }
        }
        if let Some((a, v)) = knots.iter().find(|(a, v)| !a.is_finite() || !(0.0..=1.0).contains(v)) {
            return domain(format!("knot ({a}, {v}) outside R x [0, 1]"));
        }
        Ok(AdmissibleProfile { alpha_min, knots, interpolation })
    }

    /// `ν ≡ value` on `[alpha, inf)`.
    pub fn single_knot(alpha: f64, value: f64) -> Result<Self> {
        Self::new(alpha, vec![(alpha, value)], Interpolation::RightConstant)
    }

    pub fn alpha_min(&self) -> f64 {
        self.alpha_min
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    fn segments(&self) -> Vec<Segment> {
        let mut segs: Vec<Segment> = self
            .knots
            .windows(2)
            .map(|w| {
                let v_hi = match self.interpolation {
                    Interpolation::Linear => w[1].1,
                    Interpolation::RightConstant => w[0].1,
                };
                Segment { lo: w[0].0, hi: w[1].0, v_lo: w[0].1, v_hi }
            })
            .collect();
        let last = self.knots[self.knots.len() - 1];
        segs.push(Segment { lo: last.0, hi: f64::INFINITY, v_lo: last.1, v_hi: last.1 });
        segs
    }

    pub fn eval(&self, alpha: f64) -> f64 {
        if alpha < self.alpha_min {
            return f64::NEG_INFINITY;
        }
        self.segments()
            .into_iter()
            .find(|s| alpha >= s.lo && alpha < s.hi)
            .map(|s| s.at(alpha))
            .expect("segments cover [alpha_min, inf)")
    }

    /// The standing assumption `ν(α) > 0` for every `α > alpha_min`.
    pub fn positive_above_min(&self) -> bool {
        self.segments().iter().all(|s| match self.interpolation {
            Interpolation::RightConstant => s.v_lo > 0.0,
            Interpolation::Linear => s.v_lo > 0.0 || s.v_hi > 0.0,
        })
    }

    /// Inserts extra knots without changing the function.
    pub fn refined(&self, extra: &[f64]) -> Self {
        let mut knots = self.knots.clone();
        for &a in extra {
            if a > self.alpha_min && !knots.iter().any(|(k, _)| *k == a) {
                knots.push((a, self.eval(a)));
            }
        }
        knots.sort_by(|x, y| x.0.total_cmp(&y.0));
        AdmissibleProfile { alpha_min: self.alpha_min, knots, interpolation: self.interpolation }
    }
}

/// `p_ν = inf_{α ∈ [alpha_min, 0)} (ν(α) - 1)/α`, `+inf` when
/// `alpha_min >= 0`. On each affine piece the ratio is monotone, so the
/// infimum is taken over piece endpoints (one-sided limits at open ends).
pub fn p_nu(profile: &AdmissibleProfile) -> Result<f64> {
    let amin = profile.alpha_min();
    if amin >= 0.0 {
        return Ok(f64::INFINITY);
    }
    if profile.eval(0.0) >= 1.0 {
        return Err(MfaError::Refusal(format!("nu(0) = {} must be < 1 when alpha_min <= 0", profile.eval(0.0))));
    }
    let mut best = f64::INFINITY;
    for s in profile.segments() {
        if s.lo >= 0.0 {
            break;
        }
        // left endpoint is attained
        best = best.min((s.v_lo - 1.0) / s.lo);
        // open right end; a piece running into 0 has ν(0-) < 1, ratio -> +inf
        if s.hi < 0.0 {
            best = best.min((s.v_hi - 1.0) / s.hi);
        }
    }
    Ok(best)
}

/// Result of comparing an empirical profile with `ν`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    /// `max_α (ν̂(α) - ν(α + ε))`; `+inf` when coefficients appear where `ν = -inf`.
    #[serde(with = "crate::largedev::inf_as_string")]
    pub max_excess: f64,
    pub argmax_alpha: Option<f64>,
    pub slack: f64,
    pub consistent: bool,
    pub note: String,
}

/// Finite-scale check of `ν̂ ≤ ν`. The profile estimate at `α` counts
/// coefficients above `2^{-(α+ε)j}`, so it is compared with `ν(α + ε)`.
/// This is a diagnostic at the stated slack; it does not decide membership.
pub fn membership_diagnostic(
    tree: &CoefficientTree,
    profile: &AdmissibleProfile,
    epsilon: f64,
    window: ScaleWindow,
    slack: f64,
) -> Result<MembershipReport> {
    let amin = profile.alpha_min();
    let grid = linspace(amin - 1.0, amin + 4.0, 501);
    let est = estimate_density(tree, epsilon, &grid, window, Aggregation::MaxOverScales)?;
    let mut max_excess = f64::NEG_INFINITY;
    let mut argmax = None;
    for (a, nu_hat) in grid.iter().zip(&est.nu_hat) {
        if *nu_hat == f64::NEG_INFINITY {
            continue;
        }
        let target = profile.eval(a + epsilon);
        let excess = if target == f64::NEG_INFINITY { f64::INFINITY } else { nu_hat - target };
        if excess > max_excess {
            max_excess = excess;
            argmax = Some(*a);
        }
    }
    let consistent = max_excess <= slack;
    Ok(MembershipReport {
        max_excess,
        argmax_alpha: argmax,
        slack,
        consistent,
        note: format!(
            "finite-scale diagnostic over scales [{}, {}] at epsilon {epsilon}; {} with the profile at slack {slack}",
            window.j_min,
            window.j_max,
            if consistent { "consistent" } else { "not consistent" }
        ),
    })
}

/// Default knot count of the associated-series grid.
pub const DEFAULT_GRID_POINTS: usize = 64;

/// A random wavelet series law associated to `profile`: atoms on a grid of
/// `grid_points` knots over `[alpha_min, alpha_min + 4]` (plus the profile's
/// own knots) whose cumulative mass at scale `j` is
/// `min(1, max(j² 2^-j, 2^{(ν(α)-1) j}))`.
pub fn associated_rws(profile: &AdmissibleProfile, grid_points: usize) -> Result<ScaleDistributionSpec> {
    let spec = ScaleDistributionSpec::new(Family::ProfileAssociated { profile: profile.clone(), grid_points })
        .with_signs(true);
    spec.check_family()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_knot() -> AdmissibleProfile {
        AdmissibleProfile::new(-0.25, vec![(-0.25, 0.0), (0.25, 1.0)], Interpolation::Linear).unwrap()
    }

    #[test]
    fn eval_linear_and_constant() {
        let p = two_knot();
        assert_eq!(p.eval(-0.3), f64::NEG_INFINITY);
        assert_eq!(p.eval(-0.25), 0.0);
        assert!((p.eval(0.0) - 0.5).abs() < 1e-15);
        assert_eq!(p.eval(0.25), 1.0);
        assert_eq!(p.eval(3.0), 1.0);
        let rc = AdmissibleProfile::new(0.1, vec![(0.1, 0.2), (0.5, 0.7)], Interpolation::RightConstant).unwrap();
        assert_eq!(rc.eval(0.3), 0.2);
        assert_eq!(rc.eval(0.5), 0.7);
    }

    #[test]
    fn p_nu_examples() {
        assert_eq!(p_nu(&two_knot()).unwrap(), 4.0);
        let pos = AdmissibleProfile::single_knot(0.3, 0.5).unwrap();
        assert_eq!(p_nu(&pos).unwrap(), f64::INFINITY);
        let flat = AdmissibleProfile::new(-0.5, vec![(-0.5, 0.0), (0.0, 0.5)], Interpolation::RightConstant).unwrap();
        assert_eq!(p_nu(&flat).unwrap(), 2.0);
        let full = AdmissibleProfile::new(-0.5, vec![(-0.5, 0.0), (-0.1, 1.0)], Interpolation::Linear).unwrap();
        assert!(matches!(p_nu(&full), Err(MfaError::Refusal(_))));
    }

    #[test]
    fn rejects_inadmissible() {
        assert!(AdmissibleProfile::new(0.0, vec![(0.0, 0.5), (1.0, 0.2)], Interpolation::Linear).is_err());
        assert!(AdmissibleProfile::new(0.0, vec![(0.1, 0.5)], Interpolation::Linear).is_err());
        assert!(AdmissibleProfile::new(0.0, vec![(0.0, 1.5)], Interpolation::Linear).is_err());
        assert!(AdmissibleProfile::new(0.0, vec![], Interpolation::Linear).is_err());
    }

    #[test]
    fn profile_json_schema() {
        let p: AdmissibleProfile = serde_json::from_str(
            r#"{"alpha_min": -0.25, "knots": [[-0.25, 0.0], [0.25, 1.0]], "interpolation": "linear"}"#,
        )
        .unwrap();
        assert_eq!(p, two_knot());
        let back: AdmissibleProfile = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<AdmissibleProfile>(
            r#"{"alpha_min": 0, "knots": [[0, 0.5], [1, 0.1]], "interpolation": "right-constant"}"#
        )
        .is_err());
    }

    #[test]
    fn associated_requires_positive_profile() {
        let bad = AdmissibleProfile::new(0.0, vec![(0.0, 0.0), (1.0, 0.5)], Interpolation::RightConstant).unwrap();
        assert!(matches!(associated_rws(&bad, 16), Err(MfaError::Refusal(_))));
        assert!(associated_rws(&two_knot(), 16).is_ok());
    }

    #[test]
    fn single_knot_collapses_to_lacunary() {
        let prof = AdmissibleProfile::single_knot(0.5, 0.5).unwrap();
        let spec = associated_rws(&prof, 64).unwrap();
        for j in 16..=24u32 {
            let probs = spec.probabilities(j);
            assert_eq!(probs[0], (0.5, (-0.5 * j as f64).exp2()));
            assert!(probs[1..].iter().all(|(_, m)| *m == 0.0));
        }
        let asy = crate::rws::asymptotics(&spec).unwrap();
        for (a, nu) in crate::rws::associated_knots(&prof, 64) {
            assert_eq!(asy.bold_nu(a), nu);
        }
    }

    #[test]
    fn associated_masses_meet_floor_and_exponent() {
        let prof = two_knot();
        let spec = associated_rws(&prof, 64).unwrap();
        spec.validate(24).unwrap();
        for j in 8..=16u32 {
            let jf = j as f64;
            let mut cum = 0.0;
            let mut last = 0.0;
            for (a, m) in spec.probabilities(j) {
                assert!(m >= 0.0);
                cum += m;
                assert!(cum >= last);
                last = cum;
                let nu = prof.eval(a);
                assert!(
                    cum.exp2().log2() >= 0.0 && (jf.exp2() * cum) >= jf * jf * (1.0 - 1e-12),
                    "floor at j {j}, alpha {a}"
                );
                let rate = (jf.exp2() * cum).log2() / jf;
                assert!(rate >= nu - 1e-12, "rate {rate} below nu {nu} at j {j}");
                assert!(rate <= nu.max(2.0 * jf.log2() / jf) + 1e-12, "rate {rate} at j {j}");
            }
        }
    }

    #[test]
    fn full_profile_fills_every_coefficient() {
        let prof = AdmissibleProfile::single_knot(0.2, 1.0).unwrap();
        let t = crate::rws::sample(&associated_rws(&prof, 16).unwrap(), 10, 5).unwrap();
        for j in 0..=10 {
            assert!(t.level(j).iter().all(|v| *v == (-0.2 * j as f64).exp2()));
        }
    }

    #[test]
    fn membership_examples() {
        let prof = AdmissibleProfile::single_knot(0.5, 0.5).unwrap();
        let w = ScaleWindow::default_for(12);
        let z = membership_diagnostic(&CoefficientTree::zeros(12).unwrap(), &prof, 0.1, w, 0.1).unwrap();
        assert!(z.consistent);
        assert_eq!(z.argmax_alpha, None);

        let rough = CoefficientTree::from_fn(12, |j, _| (-0.2 * j as f64).exp2()).unwrap();
        let r = membership_diagnostic(&rough, &prof, 0.1, w, 0.1).unwrap();
        assert!(!r.consistent);
        assert_eq!(r.max_excess, f64::INFINITY);
        assert!(r.note.contains("diagnostic"));
    }

    #[test]
    fn associated_series_are_consistent_with_a_high_profile() {
        let prof = AdmissibleProfile::new(0.2, vec![(0.2, 0.85), (0.6, 1.0)], Interpolation::RightConstant).unwrap();
        let spec = associated_rws(&prof, 64).unwrap();
        let consistent = (0..8u64)
            .filter(|s| {
                let t = crate::rws::sample(&spec, 14, *s).unwrap();
                membership_diagnostic(&t, &prof, 0.1, ScaleWindow::default_for(14), 0.1).unwrap().consistent
            })
            .count();
        assert!(consistent >= 7, "{consistent}/8");
    }

    #[test]
    fn mass_floor_dominates_low_profiles_at_desk_scale() {
        // 2^j ρ_j((-inf, α]) >= j² forces count exponents of at least
        // 2 log2(j)/j, far above ν near alpha_min when J = 14
        let prof = two_knot();
        let spec = associated_rws(&prof, 64).unwrap();
        let t = crate::rws::sample(&spec, 14, 1).unwrap();
        let w = ScaleWindow::default_for(14);
        let r = membership_diagnostic(&t, &prof, 0.05, w, 0.1).unwrap();
        let floor_rate = 2.0 * (w.j_min as f64).log2() / w.j_min as f64;
        assert!(!r.consistent);
        assert!((r.max_excess - floor_rate).abs() < 0.05, "{} vs {floor_rate}", r.max_excess);
    }

    fn profile_strategy() -> impl Strategy<Value = AdmissibleProfile> {
        (-1.0f64..0.5, prop::collection::vec((0.01f64..0.5, 0.0f64..0.3), 0..6), 0.0f64..0.9, any::<bool>()).prop_map(
            |(amin, steps, v0, linear)| {
                let mut knots = vec![(amin, v0)];
                for (da, dv) in steps {
                    let (a, v) = *knots.last().unwrap();
                    knots.push((a + da, (v + dv).min(0.95)));
                }
                let interp = if linear { Interpolation::Linear } else { Interpolation::RightConstant };
                AdmissibleProfile::new(amin, knots, interp).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn p_nu_is_refinement_invariant(prof in profile_strategy(), extra in prop::collection::vec(-1.0f64..2.0, 0..8)) {
            prop_assume!(prof.eval(0.0) < 1.0);
            let a = p_nu(&prof).unwrap();
            let b = p_nu(&prof.refined(&extra)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn associated_specs_validate(prof in profile_strategy(), points in 1usize..80) {
            prop_assume!(prof.positive_above_min());
            let spec = associated_rws(&prof, points).unwrap();
            prop_assert!(spec.validate(24).is_ok());
        }
    }
}
