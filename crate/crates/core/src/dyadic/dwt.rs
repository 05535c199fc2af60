//! Periodized orthonormal pyramid transform, used to ingest sampled signals.
//!
//! Detail coefficients are rescaled to the `L^inf` normalization
//! `c_{j,k} = 2^{(j-K)/2} d_{j,k}` for a signal of length `2^K`, so that a
//! sampled `psi(2^j x - k)` has coefficient 1.

use serde::{Deserialize, Serialize};

use super::CoefficientTree;
use crate::error::{domain, Result};

/// Low-pass filter of an orthonormal, compactly supported wavelet. The
/// high-pass filter is the quadrature mirror `g[n] = (-1)^n h[L-1-n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletFilter {
    lowpass: Vec<f64>,
}

impl WaveletFilter {
    /// Validates orthonormality: `sum h = sqrt 2` and
    /// `sum_n h[n] h[n+2m] = delta_m`.
    pub fn new(lowpass: Vec<f64>) -> Result<Self> {
        let l = lowpass.len();
        if l < 2 || !l.is_multiple_of(2) {
            return domain("filter length must be even and at least 2");
        }
        let sum: f64 = lowpass.iter().sum();
        if (sum - std::f64::consts::SQRT_2).abs() > 1e-10 {
            return domain(format!("filter taps sum to {sum}, expected sqrt(2)"));
        }
        for m in 0..l / 2 {
            let dot: f64 = (0..l - 2 * m).map(|n| lowpass[n] * lowpass[n + 2 * m]).sum();
            let target = if m == 0 { 1.0 } else { 0.0 };
            if (dot - target).abs() > 1e-10 {
                return domain(format!("filter is not orthonormal at shift {}", 2 * m));
            }
        }
        Ok(WaveletFilter { lowpass })
    }

    pub fn haar() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        WaveletFilter { lowpass: vec![h, h] }
    }

    /// Four-tap Daubechies filter (two vanishing moments).
    pub fn daubechies4() -> Self {
        let s3 = 3f64.sqrt();
        let d = 4.0 * std::f64::consts::SQRT_2;
        WaveletFilter { lowpass: vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d] }
    }

    pub fn lowpass(&self) -> &[f64] {
        &self.lowpass
    }

    pub fn highpass(&self) -> Vec<f64> {
        let l = self.lowpass.len();
        (0..l).map(|n| if n % 2 == 0 { 1.0 } else { -1.0 } * self.lowpass[l - 1 - n]).collect()
    }

    fn analyze(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        let g = self.highpass();
        let half = n / 2;
        let mut a = vec![0.0; half];
        let mut d = vec![0.0; half];
        for k in 0..half {
            for (i, (hi, gi)) in self.lowpass.iter().zip(&g).enumerate() {
                let v = x[(2 * k + i) % n];
                a[k] += hi * v;
                d[k] += gi * v;
            }
        }
        (a, d)
    }

    fn synthesize(&self, a: &[f64], d: &[f64]) -> Vec<f64> {
        let n = 2 * a.len();
        let g = self.highpass();
        let mut x = vec![0.0; n];
        for k in 0..a.len() {
            for (i, (hi, gi)) in self.lowpass.iter().zip(&g).enumerate() {
                x[(2 * k + i) % n] += hi * a[k] + gi * d[k];
            }
        }
        x
    }
}

/// Output of the pyramid transform: the coarsest approximation coefficient
/// and the signed detail tree.
#[derive(Debug, Clone)]
pub struct WaveletDecomposition {
    pub approximation: f64,
    pub tree: CoefficientTree,
    pub filter: WaveletFilter,
}

impl WaveletDecomposition {
    /// Inverse transform back to samples.
    pub fn inverse(&self) -> Vec<f64> {
        let big_k = self.tree.max_scale() + 1;
        let mut a = vec![self.approximation];
        for j in 0..big_k {
            let d: Vec<f64> = (0..1u64 << j)
                .map(|k| {
                    let node = super::NodeRef { scale: j, position: k };
                    self.tree.signed(node) * 2f64.powf((big_k as f64 - j as f64) / 2.0)
                })
                .collect();
            a = self.filter.synthesize(&a, &d);
        }
        a
    }
}

/// Periodized forward transform of a signal of length `2^K`, `K >= 2`.
pub fn dwt_front_end(signal: &[f64], filter: &WaveletFilter) -> Result<WaveletDecomposition> {
    let n = signal.len();
    if n < 4 || !n.is_power_of_two() {
        return domain(format!("signal length {n} is not a power of two >= 4"));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return domain("signal contains non-finite samples");
    }
    let big_k = n.trailing_zeros();
    let mut details: Vec<Vec<f64>> = vec![Vec::new(); big_k as usize];
    let mut a = signal.to_vec();
    for step in 0..big_k {
        let (next, d) = filter.analyze(&a);
        details[(big_k - 1 - step) as usize] = d;
        a = next;
    }
    let mut mags = Vec::with_capacity(details.len());
    let mut signs = Vec::with_capacity(details.len());
    for (j, d) in details.into_iter().enumerate() {
        let scale = 2f64.powf((j as f64 - big_k as f64) / 2.0);
        mags.push(d.iter().map(|v| (v * scale).abs()).collect());
        signs.push(d.iter().map(|v| *v < 0.0).collect());
    }
    let tree = CoefficientTree::new(mags)?.with_signs(signs)?;
    Ok(WaveletDecomposition { approximation: a[0], tree, filter: filter.clone() })
}
