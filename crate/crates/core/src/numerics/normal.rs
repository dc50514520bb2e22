//! Univariate, bivariate and multivariate normal probabilities.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use crate::error::{Error, Result};

/// A probability with its Monte-Carlo standard error (0 for exact values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_draws: u64,
}

impl ProbEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value: value.clamp(0.0, 1.0),
            stderr: 0.0,
            n_draws: 0,
        }
    }

    /// Bernoulli proportion `hits / n` with binomial standard error.
    pub fn from_hits(hits: u64, n: u64) -> Self {
        let value = hits as f64 / n as f64;
        Self {
            value,
            stderr: (value * (1.0 - value) / n as f64).sqrt(),
            n_draws: n,
        }
    }

    /// Mean of per-draw values in `[0, 1]`, standard error of the mean.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                value: f64::NAN,
                stderr: f64::NAN,
                n_draws: 0,
            };
        }
        let mean = kahan_sum(values.iter().copied()) / n as f64;
        let var = if n > 1 {
            kahan_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            value: mean,
            stderr: (var / n as f64).sqrt(),
            n_draws: n as u64,
        }
    }

    /// `|self - other|` measured in combined standard errors.
    pub fn z_distance(&self, other: f64) -> f64 {
        (self.value - other).abs() / self.stderr
    }
}

/// Compensated summation in iteration order.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Standard normal cdf Φ(x).
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail 1 − Φ(x), accurate far into the tail.
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

// 20-point Gauss-Legendre rule on [-1, 1]: (weight, node) for the negative half.
const GL20: [(f64, f64); 10] = [
    (0.017_614_007_139_152_12, -0.993_128_599_185_094_9),
    (0.040_601_429_800_386_94, -0.963_971_927_277_913_8),
    (0.062_672_048_334_109_06, -0.912_234_428_251_325_9),
    (0.083_276_741_576_704_75, -0.839_116_971_822_218_8),
    (0.101_930_119_817_240_4, -0.746_331_906_460_150_8),
    (0.118_194_531_961_518_4, -0.636_053_680_726_515),
    (0.131_688_638_449_176_6, -0.510_867_001_950_827_1),
    (0.142_096_109_318_382_1, -0.373_706_088_715_419_6),
    (0.149_172_986_472_603_7, -0.227_785_851_141_645_1),
    (0.152_753_387_130_725_9, -0.076_526_521_133_497_33),
];

fn gauss_legendre(f: &impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut acc = 0.0;
    for &(w, x) in &GL20 {
        acc += w * (f(mid + half * x) + f(mid - half * x));
    }
    acc * half
}

fn adaptive_gl(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let mid = 0.5 * (lo + hi);
    let left = gauss_legendre(f, lo, mid);
    let right = gauss_legendre(f, mid, hi);
    let split = left + right;
    if depth == 0 || (split - whole).abs() <= tol {
        return split;
    }
    adaptive_gl(f, lo, mid, left, 0.5 * tol, depth - 1)
        + adaptive_gl(f, mid, hi, right, 0.5 * tol, depth - 1)
}

/// P(Z1 > a, Z2 > b) for a standard bivariate normal with correlation `rho`.
///
/// Uses the single-integral form
/// `Φ(-a)Φ(-b) + (1/2π) ∫_0^{asin ρ} exp(-(a² + b² - 2ab sin θ) / (2 cos² θ)) dθ`
/// with adaptive Gauss-Legendre quadrature. Symmetric in `(a, b)` bit for bit.
pub fn bvn_upper_orthant(a: f64, b: f64, rho: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&rho) || rho.is_nan() {
        return Err(Error::Domain(format!("correlation {rho} outside [-1, 1]")));
    }
    if a.is_nan() || b.is_nan() {
        return Err(Error::Domain("NaN integration limit".into()));
    }
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    if rho == 1.0 {
        return Ok(std_normal_sf(b));
    }
    if rho == -1.0 {
        // X > a and -X > b, i.e. a < X < -b.
        return Ok((std_normal_cdf(-b) - std_normal_cdf(a)).max(0.0));
    }
    let base = std_normal_sf(a) * std_normal_sf(b);
    if rho == 0.0 {
        return Ok(base);
    }
    let diff2 = (a - b) * (a - b);
    let sum2 = (a + b) * (a + b);
    let ab = a * b;
    let integrand = |theta: f64| {
        let (s, c) = theta.sin_cos();
        let c2 = c * c;
        let expo = if s >= 0.0 {
            diff2 / (2.0 * c2) + ab / (1.0 + s)
        } else {
            sum2 / (2.0 * c2) - ab / (1.0 - s)
        };
        (-expo).exp()
    };
    let upper = rho.asin();
    let whole = gauss_legendre(&integrand, 0.0, upper);
    let integral = adaptive_gl(&integrand, 0.0, upper, whole, 1e-15, 40);
    Ok((base + integral / (2.0 * PI)).clamp(0.0, 1.0))
}

/// Monte-Carlo estimate of P(all coordinates > 0) for N(mean, cov).
pub fn mvn_orthant_mc(
    mean: &[f64],
    cov: &DMatrix<f64>,
    n_draws: u64,
    stream: &mut RngStream,
) -> Result<ProbEstimate> {
    let m = mean.len();
    if cov.nrows() != m || cov.ncols() != m {
        return Err(Error::Dimension(format!(
            "covariance is {}x{}, mean has length {m}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if n_draws == 0 {
        return Err(Error::Domain("n_draws must be at least 1".into()));
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("Cholesky factorization failed: covariance not positive definite".into()))?;
    let l = chol.l();
    let mu = DVector::from_column_slice(mean);
    let mut z = DVector::<f64>::zeros(m);
    let mut eta = DVector::<f64>::zeros(m);
    let mut hits = 0u64;
    for _ in 0..n_draws {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(stream);
        }
        eta.copy_from(&mu);
        eta.gemv(1.0, &l, &z, 1.0);
        if eta.iter().all(|&v| v > 0.0) {
            hits += 1;
        }
    }
    Ok(ProbEstimate::from_hits(hits, n_draws))
}

/// ε = 1 − Φ(1/(σ·n_total))^K, the small-noise failure bound.
pub fn epsilon_bound(sigma: f64, n_total: usize, k: usize) -> Result<f64> {
    if !(sigma > 0.0) || n_total == 0 || k < 2 {
        return Err(Error::Domain(format!(
            "epsilon_bound needs sigma > 0, n_total >= 1, K >= 2 (got {sigma}, {n_total}, {k})"
        )));
    }
    let tail = std_normal_sf(1.0 / (sigma * n_total as f64));
    Ok(-(k as f64 * (-tail).ln_1p()).exp_m1())
}
