//! Small numerical helpers shared by the estimators.

/// Kahan-compensated sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Ordinary least squares slope of `y` against `x`. `None` with fewer than
/// two points or a degenerate abscissa.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    wls_slope(x, y, &vec![1.0; x.len()])
}

/// Weighted least squares slope with non-negative weights `w`.
fn wls_slope(x: &[f64], y: &[f64], w: &[f64]) -> Option<f64> {
    debug_assert!(x.len() == y.len() && y.len() == w.len());
    if x.len() < 2 {
        return None;
    }
    let sw: f64 = w.iter().sum();
    if !(sw > 0.0) {
        return None;
    }
    let mx = x.iter().zip(w).map(|(a, w)| a * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(b, w)| b * w).sum::<f64>() / sw;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for ((a, b), w) in x.iter().zip(y).zip(w) {
        sxy += w * (a - mx) * (b - my);
        sxx += w * (a - mx) * (a - mx);
    }
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// `log2(2^a + 2^b)` with `-inf` as the log of zero.
#[inline]
pub fn log2_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp2().ln_1p() / std::f64::consts::LN_2
}

/// `1/p` with the convention `1/inf = 0`.
#[inline]
pub fn inv_p(p: f64) -> f64 {
    if p.is_infinite() {
        0.0
    } else {
        1.0 / p
    }
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| if i + 1 == n { hi } else { lo + step * i as f64 }).collect()
        }
    }
}
