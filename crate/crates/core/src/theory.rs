//! Closed-form OOD accuracies: the orthant function F_p, the exact
//! multinomial sum G, polynomial formulas for the worked examples, and the
//! weight-space versus output-space comparison rule.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generative::FeatureSpec;
use crate::models::FeatureMask;
use crate::numerics::{bvn_upper_orthant, kahan_sum, mvn_orthant_mc, std_normal_cdf, ProbEstimate, RngStream};

/// Draws used by [`fp`] when K > 3.
pub const FP_MC_DRAWS: u64 = 400_000;
const FP_MC_SEED: u64 = 0x00F0_0D5E_ED00_0001;

/// Upper limit on the number of terms [`g_exact`] will enumerate.
pub const G_EXACT_TERM_LIMIT: f64 = 1e8;

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("shift probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Covariance entries (diagonal, off-diagonal) of the K−1 margin vector.
pub fn margin_covariance(p: f64, k: usize) -> (f64, f64) {
    let kf = k as f64;
    (p * (kf + 2.0 - p * kf) / kf, p * (kf + 1.0 - p * kf) / kf)
}

/// F_p(x) = P(η_i > 0 for all i) with η ~ N(x·1, M) in K−1 dimensions.
/// Exact for K ≤ 3, Monte Carlo with a fixed stream for K > 3.
pub fn fp(x: f64, p: f64, k: usize) -> Result<ProbEstimate> {
    check_p(p)?;
    if k < 2 {
        return Err(Error::Domain(format!("need K >= 2, got {k}")));
    }
    if x.is_nan() {
        return Err(Error::Domain("F_p of NaN".into()));
    }
    let (var, cov) = margin_covariance(p, k);
    if var == 0.0 {
        return Ok(ProbEstimate::exact(if x > 0.0 { 1.0 } else { 0.0 }));
    }
    let sd = var.sqrt();
    match k {
        2 => Ok(ProbEstimate::exact(std_normal_cdf(x / sd))),
        3 => Ok(ProbEstimate::exact(bvn_upper_orthant(-x / sd, -x / sd, cov / var)?)),
        _ => {
            let m = k - 1;
            let sigma = DMatrix::from_fn(m, m, |i, j| if i == j { var } else { cov });
            let mut stream = RngStream::new(FP_MC_SEED, k as u64);
            mvn_orthant_mc(&vec![x; m], &sigma, FP_MC_DRAWS, &mut stream)
        }
    }
}

/// All ways to split `m` items over `k` classes, with their multinomial
/// probabilities when class 0 has probability `stay` and every other class
/// `(1 - stay)/(k - 1)`.
fn multinomial_outcomes(m: usize, k: usize, stay: f64, other: f64, ln_fact: &[f64]) -> Vec<(f64, Vec<u32>)> {
    let mut out = Vec::new();
    let mut counts = vec![0u32; k];
    fn rec(pos: usize, left: usize, counts: &mut Vec<u32>, emit: &mut dyn FnMut(&[u32])) {
        if pos + 1 == counts.len() {
            counts[pos] = left as u32;
            emit(counts);
            return;
        }
        for r in 0..=left {
            counts[pos] = r as u32;
            rec(pos + 1, left - r, counts, emit);
        }
    }
    let ln_term = |r: u32, q: f64| if r == 0 { Some(0.0) } else if q > 0.0 { Some(r as f64 * q.ln()) } else { None };
    rec(0, m, &mut counts, &mut |c: &[u32]| {
        let mut lp = ln_fact[m];
        for (i, &r) in c.iter().enumerate() {
            lp -= ln_fact[r as usize];
            match ln_term(r, if i == 0 { stay } else { other }) {
                Some(t) => lp += t,
                None => return,
            }
        }
        out.push((lp.exp(), c.to_vec()));
    });
    out
}

fn n_compositions(m: usize, k: usize) -> f64 {
    // C(m + k - 1, k - 1)
    (1..k).fold(1.0, |acc, i| acc * (m + i) as f64 / i as f64)
}

/// Exact small-noise accuracy by enumerating how the spurious features of a
/// true-class sample spread over classes. `n_v`, `n_s` count features across
/// both models (shared ones twice); the `n_s − 2·n_so` unshared spurious
/// features have coefficient 1, the `n_so` shared ones coefficient `c`, and
/// likewise for invariant features. Ties split evenly.
pub fn g_exact(n_v: usize, n_s: usize, n_vo: usize, n_so: usize, c: f64, p: f64, k: usize) -> Result<f64> {
    check_p(p)?;
    if k < 2 {
        return Err(Error::Domain(format!("need K >= 2, got {k}")));
    }
    if n_s < 2 * n_so || n_v < 2 * n_vo {
        return Err(Error::Domain(format!(
            "inconsistent counts: n_v={n_v}, n_vo={n_vo}, n_s={n_s}, n_so={n_so}"
        )));
    }
    if !(c >= 0.0) {
        return Err(Error::Domain(format!("overlap coefficient {c} must be non-negative")));
    }
    let single = n_s - 2 * n_so;
    let terms = n_compositions(single, k) * n_compositions(n_so, k);
    if terms > G_EXACT_TERM_LIMIT {
        return Err(Error::EnumerationTooLarge {
            terms,
            limit: G_EXACT_TERM_LIMIT,
        });
    }
    let kf = k as f64;
    let other = p / kf;
    let stay = 1.0 - p + other;
    let top = single.max(n_so);
    let mut ln_fact = vec![0.0; top + 1];
    for i in 1..=top {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let inv_mass = (n_v - 2 * n_vo) as f64 + c * n_vo as f64;
    let singles = multinomial_outcomes(single, k, stay, other, &ln_fact);
    let shared = multinomial_outcomes(n_so, k, stay, other, &ln_fact);
    let tol = 1e-9 * (inv_mass + single as f64 + c * n_so as f64).max(1.0);
    let mut scores = vec![0.0; k];
    let terms = singles.iter().flat_map(|(p1, r1)| {
        shared.iter().map(move |(p2, r2)| (p1 * p2, r1, r2))
    });
    let acc = kahan_sum(terms.map(|(prob, r1, r2)| {
        for (l, s) in scores.iter_mut().enumerate() {
            *s = r1[l] as f64 + c * r2[l] as f64;
        }
        scores[0] += inv_mass;
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if scores[0] < best - tol {
            0.0
        } else {
            prob / scores.iter().filter(|&&s| s >= best - tol).count() as f64
        }
    }));
    Ok(acc.clamp(0.0, 1.0))
}

/// Two-model worked example with 2 invariant and 3 spurious features each
/// and no overlap: (individual, ensemble) accuracy.
pub fn prop1_values(p: f64) -> Result<(f64, f64)> {
    check_p(p)?;
    let individual = 1.0 - 5.0 * p.powi(3) / 27.0;
    let ensemble = 1.0 - 2.0 * p.powi(5) / 81.0 - 17.0 * p.powi(6) / 729.0;
    Ok((individual, ensemble))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapValues {
    pub ose: f64,
    pub wse: f64,
}

/// The 2+3 / 2+3 example sharing one invariant and one spurious feature.
/// Assignment follows exact enumeration: the weight-space ensemble, which
/// weights the shared invariant feature 4×, is the more accurate one.
pub fn overlap_example_values(p: f64) -> Result<OverlapValues> {
    check_p(p)?;
    let base = 1.0 - 4.0 * p.powi(4) / 81.0;
    Ok(OverlapValues {
        ose: base - p.powi(5) / 27.0,
        wse: base - 8.0 * p.powi(5) / 243.0,
    })
}

/// Feature counts of two models and their overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_v1: usize,
    pub n_s1: usize,
    pub n_v2: usize,
    pub n_s2: usize,
    pub n_vo: usize,
    pub n_so: usize,
    pub p: f64,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    3
}

/// Worked examples by name.
pub const EXAMPLES: [&str; 4] = ["1-1", "1-2", "2-1", "2-2"];

impl ModelConfig {
    pub fn symmetric(n_v: usize, n_s: usize, n_vo: usize, n_so: usize, p: f64) -> Result<Self> {
        Self {
            n_v1: n_v,
            n_s1: n_s,
            n_v2: n_v,
            n_s2: n_s,
            n_vo,
            n_so,
            p,
            k: 3,
        }
        .validated()
    }

    /// One of [`EXAMPLES`] at shift probability `p`.
    pub fn example(name: &str, p: f64) -> Result<Self> {
        let (n_v1, n_s1, n_v2, n_s2, n_vo, n_so) = match name {
            "1-1" => (2, 3, 2, 3, 0, 0),
            "1-2" => (2, 3, 2, 3, 1, 1),
            "2-1" => (5, 20, 4, 20, 0, 0),
            "2-2" => (5, 20, 5, 20, 4, 1),
            other => return Err(Error::Domain(format!("unknown example {other:?}; expected one of {EXAMPLES:?}"))),
        };
        Self {
            n_v1,
            n_s1,
            n_v2,
            n_s2,
            n_vo,
            n_so,
            p,
            k: 3,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        check_p(self.p)?;
        if self.k < 2 {
            return Err(Error::Domain(format!("need K >= 2, got {}", self.k)));
        }
        if self.n_vo > self.n_v1.min(self.n_v2) || self.n_so > self.n_s1.min(self.n_s2) {
            return Err(Error::Domain(format!("overlap exceeds a model's feature count: {self:?}")));
        }
        if self.n_v1 + self.n_s1 == 0 || self.n_v2 + self.n_s2 == 0 {
            return Err(Error::Domain("each model needs at least one feature".into()));
        }
        Ok(self)
    }

    /// (d_v, d_s) of the smallest world holding both models.
    pub fn world_dims(&self) -> (usize, usize) {
        (self.n_v1 + self.n_v2 - self.n_vo, self.n_s1 + self.n_s2 - self.n_so)
    }

    /// Model 1 takes the first features of each kind; model 2 starts at the
    /// last `n_vo` (resp. `n_so`) features of model 1.
    pub fn masks(&self, spec: &FeatureSpec) -> Result<(FeatureMask, FeatureMask)> {
        let (d_v, d_s) = self.world_dims();
        if spec.d_v() < d_v || spec.d_s() < d_s {
            return Err(Error::Dimension(format!(
                "world has ({}, {}) features, config needs ({d_v}, {d_s})",
                spec.d_v(),
                spec.d_s()
            )));
        }
        let v1: Vec<usize> = (0..self.n_v1).collect();
        let s1: Vec<usize> = (0..self.n_s1).collect();
        let v2: Vec<usize> = (self.n_v1 - self.n_vo..self.n_v1 - self.n_vo + self.n_v2).collect();
        let s2: Vec<usize> = (self.n_s1 - self.n_so..self.n_s1 - self.n_so + self.n_s2).collect();
        Ok((FeatureMask::select(spec, &v1, &s1)?, FeatureMask::select(spec, &v2, &s2)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Individual1,
    Individual2,
    Ose,
    Wse,
}

/// The F_p argument for each predictor of a two-model configuration.
pub fn prop23_argument(config: &ModelConfig, kind: PredictorKind) -> f64 {
    let q = 1.0 - config.p;
    let f = |x: usize| x as f64;
    let (n_v, n_s) = (f(config.n_v1 + config.n_v2), f(config.n_s1 + config.n_s2));
    let (n_vo, n_so) = (f(config.n_vo), f(config.n_so));
    let individual = |v: usize, s: usize| {
        if s == 0 {
            f64::INFINITY
        } else {
            (q * f(s) + f(v)) / f(s).sqrt()
        }
    };
    match kind {
        PredictorKind::Individual1 => individual(config.n_v1, config.n_s1),
        PredictorKind::Individual2 => individual(config.n_v2, config.n_s2),
        PredictorKind::Ose if n_s == 0.0 => f64::INFINITY,
        PredictorKind::Ose => (q * n_s + n_v) / (n_s + 2.0 * n_so).sqrt(),
        PredictorKind::Wse if n_s == 0.0 => f64::INFINITY,
        PredictorKind::Wse => (q * (n_s + 2.0 * n_so) + n_v + 2.0 * n_vo) / (n_s + 14.0 * n_so).sqrt(),
    }
}

/// Gaussian-approximation accuracy F_p(argument).
pub fn prop23_values(config: &ModelConfig, kind: PredictorKind) -> Result<ProbEstimate> {
    let config = config.validated()?;
    let x = prop23_argument(&config, kind);
    if x.is_infinite() {
        // No spurious features: only the O(ε) noise failure remains.
        return Ok(ProbEstimate::exact(1.0));
    }
    fp(x, config.p, config.k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRegime {
    /// λ = 1.
    Balanced,
    /// λ > √5.
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop4Values {
    /// Accuracy in the requested regime.
    pub value: f64,
    /// Accuracy at λ = 1.
    pub balanced: f64,
    /// `balanced − value`.
    pub drop: f64,
    /// The guaranteed minimum drop `34p³/729`.
    pub bound: f64,
}

/// Imbalanced weight-space ensemble of the 2+3 / 2+3 example.
pub fn prop4_imbalanced(p: f64, regime: LambdaRegime) -> Result<Prop4Values> {
    let (_, balanced) = prop1_values(p)?;
    let value = match regime {
        LambdaRegime::Balanced => balanced,
        LambdaRegime::Large => 1.0 - 5.0 * p.powi(6) / 243.0 - 2.0 * p.powi(3) / 27.0,
    };
    Ok(Prop4Values {
        value,
        balanced,
        drop: balanced - value,
        bound: 34.0 * p.powi(3) / 729.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    WseWins,
    OseWinsOrTies,
}

/// Threshold rule for symmetric models: the weight-space ensemble wins iff
/// `ρ_v / ρ_s > 3 (1 − p) n_s / n_v`.
pub fn wse_ose_condition(n_v: usize, n_s: usize, rho_v: f64, rho_s: f64, p: f64) -> Result<Verdict> {
    check_p(p)?;
    if !(0.0..=1.0).contains(&rho_v) || !(0.0..=1.0).contains(&rho_s) {
        return Err(Error::Domain(format!("overlap ratios ({rho_v}, {rho_s}) outside [0, 1]")));
    }
    if n_v == 0 {
        return Err(Error::Domain("n_v must be positive".into()));
    }
    let threshold = 3.0 * (1.0 - p) * n_s as f64 / n_v as f64;
    let wins = if rho_s == 0.0 {
        rho_v > 0.0
    } else {
        rho_v / rho_s > threshold
    };
    Ok(if wins { Verdict::WseWins } else { Verdict::OseWinsOrTies })
}
