//! Feature masks, linear classifiers and their predictions.

use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::container::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::generative::{FeatureSpec, SampleBatch};
use crate::numerics::RngStream;

/// Per-feature featurizer weight. Individual models use 0/1; composed
/// weight-space models carry sums such as `Φ1 + λΦ2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMask {
    weights: Vec<f64>,
    d_v: usize,
}

impl FeatureMask {
    pub fn new(weights: Vec<f64>, d_v: usize) -> Result<Self> {
        if d_v > weights.len() {
            return Err(Error::Dimension(format!("d_v = {d_v} exceeds mask length {}", weights.len())));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain(format!("mask weight {w} is not a finite non-negative number")));
        }
        Ok(Self { weights, d_v })
    }

    /// 0/1 mask selecting the given invariant and spurious feature indices
    /// (spurious indices are relative to the spurious block).
    pub fn select(spec: &FeatureSpec, invariant: &[usize], spurious: &[usize]) -> Result<Self> {
        let mut weights = vec![0.0; spec.n_features()];
        for &i in invariant {
            if i >= spec.d_v() {
                return Err(Error::Dimension(format!("invariant feature {i} out of range")));
            }
            weights[i] = 1.0;
        }
        for &j in spurious {
            if j >= spec.d_s() {
                return Err(Error::Dimension(format!("spurious feature {j} out of range")));
            }
            weights[spec.d_v() + j] = 1.0;
        }
        Self::new(weights, spec.d_v())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
    pub fn d_v(&self) -> usize {
        self.d_v
    }

    /// Number of invariant features used.
    pub fn n_v(&self) -> usize {
        self.weights[..self.d_v].iter().filter(|&&w| w > 0.0).count()
    }

    /// Number of spurious features used.
    pub fn n_s(&self) -> usize {
        self.weights[self.d_v..].iter().filter(|&&w| w > 0.0).count()
    }

    /// `self + lambda · other`.
    pub fn combine(&self, other: &Self, lambda: f64) -> Result<Self> {
        if self.d_v != other.d_v || self.len() != other.len() {
            return Err(Error::Mismatch("masks belong to different worlds".into()));
        }
        let weights = self.weights.iter().zip(&other.weights).map(|(a, b)| a + lambda * b).collect();
        Self::new(weights, self.d_v)
    }
}

/// Per-feature logit coefficients of a predictor, up to a global positive
/// factor: at σ = 0 the class-`l` logit of a sample equals
/// `Σ_f c_f · 1[feature f shows class l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCoeffs {
    pub c: Vec<f64>,
    pub d_v: usize,
}

impl EffectiveCoeffs {
    pub fn n_v_eff(&self) -> usize {
        self.c[..self.d_v].iter().filter(|&&c| c > 0.0).count()
    }
    pub fn n_s_eff(&self) -> usize {
        self.c[self.d_v..].iter().filter(|&&c| c > 0.0).count()
    }
    pub fn invariant_mass(&self) -> f64 {
        self.c[..self.d_v].iter().sum()
    }
    pub fn spurious_mass(&self) -> f64 {
        self.c[self.d_v..].iter().sum()
    }
}

/// A linear classifier on masked block sums: `logits = scale · Wᵀ (Σ_f mask_f x_f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    mask: FeatureMask,
    w: DMatrix<f64>,
    scale: f64,
    // Coefficient of μ_f(k) in W(k) when W is a combination of latent columns.
    coeffs: Option<Vec<f64>>,
}

impl LinearModel {
    pub fn new(mask: FeatureMask, w: DMatrix<f64>, scale: f64) -> Result<Self> {
        Self::build(mask, w, scale, None)
    }

    pub(crate) fn build(mask: FeatureMask, w: DMatrix<f64>, scale: f64, coeffs: Option<Vec<f64>>) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Domain(format!("scale must be positive, got {scale}")));
        }
        if w.ncols() < 2 {
            return Err(Error::Dimension("classifier needs at least 2 class columns".into()));
        }
        Ok(Self { mask, w, scale, coeffs })
    }

    pub fn mask(&self) -> &FeatureMask {
        &self.mask
    }
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }
    pub fn k(&self) -> usize {
        self.w.ncols()
    }
    pub fn latent_coeffs(&self) -> Option<&[f64]> {
        self.coeffs.as_deref()
    }

    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        Self::build(self.mask.clone(), self.w.clone(), scale, self.coeffs.clone())
    }
}

/// Row-major `n × K` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    k: usize,
    data: Vec<f64>,
}

impl Logits {
    pub fn new(k: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 || data.len() % k != 0 {
            return Err(Error::Dimension(format!("{} values do not form rows of {k}", data.len())));
        }
        Ok(Self { k, data })
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn len(&self) -> usize {
        self.data.len() / self.k
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `a · self + b · other`.
    pub fn blend(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.k != other.k || self.data.len() != other.data.len() {
            return Err(Error::Mismatch("logit shapes differ".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        Ok(Self { k: self.k, data })
    }
}

/// Anything that maps a batch to logits. Implemented by single models and
/// two-model ensembles.
pub trait Predictor: Sync {
    fn k(&self) -> usize;
    fn logits(&self, batch: &SampleBatch) -> Result<Logits>;
    fn effective_coeffs(&self) -> Result<EffectiveCoeffs>;
    /// Masks of every linear map the predictor evaluates.
    fn masks(&self) -> Vec<&FeatureMask>;
}

pub fn closed_form_classifier(spec: &FeatureSpec, mask: &FeatureMask, normalize: bool) -> Result<LinearModel> {
    if mask.len() != spec.n_features() || mask.d_v() != spec.d_v() {
        return Err(Error::Mismatch("mask does not match the feature spec".into()));
    }
    let used = mask.n_v() + mask.n_s();
    if used == 0 {
        return Err(Error::Domain("mask selects no features".into()));
    }
    let (d, k) = (spec.dim(), spec.k());
    let mut w = DMatrix::zeros(d, k);
    for (f, &m) in mask.weights().iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for c in 0..k {
            let mut col = w.column_mut(c);
            for (wi, mu) in col.iter_mut().zip(spec.column(f, c)) {
                *wi += m * mu;
            }
        }
    }
    let scale = if normalize { 1.0 / (used as f64).sqrt() } else { 1.0 };
    LinearModel::build(mask.clone(), w, scale, Some(mask.weights().to_vec()))
}

/// Block weights of `mask` for the batch layout; errors when a block mixes
/// weights or a used feature is missing from the batch.
pub(crate) fn block_plan(mask: &FeatureMask, batch: &SampleBatch) -> Result<Vec<(usize, f64)>> {
    if mask.len() != batch.n_features() {
        return Err(Error::Mismatch(format!(
            "mask covers {} features, batch has {}",
            mask.len(),
            batch.n_features()
        )));
    }
    let mut covered = vec![false; mask.len()];
    let mut plan = Vec::new();
    for (b, feats) in batch.blocks().iter().enumerate() {
        let w0 = mask.weights()[feats[0]];
        if feats.iter().any(|&f| mask.weights()[f] != w0) {
            return Err(Error::Mismatch(format!("block {b} mixes features with different mask weights")));
        }
        feats.iter().for_each(|&f| covered[f] = true);
        if w0 != 0.0 {
            plan.push((b, w0));
        }
    }
    if let Some(f) = (0..mask.len()).find(|&f| !covered[f] && mask.weights()[f] != 0.0) {
        return Err(Error::Mismatch(format!("feature {f} is used by the model but absent from the batch")));
    }
    Ok(plan)
}

/// Masked block sums, `n × d` row-major.
fn masked_features(mask: &FeatureMask, batch: &SampleBatch) -> Result<Vec<f64>> {
    let plan = block_plan(mask, batch)?;
    let d = batch.dim();
    let mut z = vec![0.0; batch.len() * d];
    for (i, zi) in z.chunks_exact_mut(d).enumerate() {
        for &(b, wt) in &plan {
            zi.iter_mut().zip(batch.block(i, b)).for_each(|(o, x)| *o += wt * x);
        }
    }
    Ok(z)
}

pub fn predict_logits(model: &LinearModel, batch: &SampleBatch) -> Result<Logits> {
    let (d, k) = (model.w.nrows(), model.k());
    if batch.dim() != d || batch.k() != k {
        return Err(Error::Mismatch(format!(
            "model is {d}x{k}, batch has dimension {} and {} classes",
            batch.dim(),
            batch.k()
        )));
    }
    let plan = block_plan(&model.mask, batch)?;
    let wt = model.w.as_slice(); // column-major: class c is wt[c*d..(c+1)*d]
    let mut z = vec![0.0; d];
    let mut data = Vec::with_capacity(batch.len() * k);
    for i in 0..batch.len() {
        z.iter_mut().for_each(|v| *v = 0.0);
        for &(b, m) in &plan {
            z.iter_mut().zip(batch.block(i, b)).for_each(|(o, x)| *o += m * x);
        }
        for c in 0..k {
            let col = &wt[c * d..(c + 1) * d];
            let dot: f64 = col.iter().zip(&z).map(|(a, b)| a * b).sum();
            data.push(model.scale * dot);
        }
    }
    Logits::new(k, data)
}

/// Row-wise argmax; exact ties are broken uniformly at random from `stream`.
pub fn predict_labels(logits: &Logits, stream: &mut RngStream) -> Vec<usize> {
    let mut tied = Vec::with_capacity(logits.k());
    (0..logits.len())
        .map(|i| {
            let row = logits.row(i);
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            tied.clear();
            tied.extend(row.iter().enumerate().filter(|(_, &v)| v == best).map(|(c, _)| c));
            match tied.len() {
                0 => 0, // all NaN
                1 => tied[0],
                n => tied[stream.below(n)],
            }
        })
        .collect()
}

impl Predictor for LinearModel {
    fn k(&self) -> usize {
        LinearModel::k(self)
    }

    fn logits(&self, batch: &SampleBatch) -> Result<Logits> {
        predict_logits(self, batch)
    }

    fn effective_coeffs(&self) -> Result<EffectiveCoeffs> {
        let a = self
            .coeffs
            .as_ref()
            .ok_or_else(|| Error::Unsupported("effective coefficients need a closed-form classifier".into()))?;
        let c = a.iter().zip(self.mask.weights()).map(|(a, m)| a * m).collect();
        Ok(EffectiveCoeffs {
            c,
            d_v: self.mask.d_v(),
        })
    }

    fn masks(&self) -> Vec<&FeatureMask> {
        vec![&self.mask]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErmConfig {
    pub steps: usize,
    pub lr: f64,
    /// Standard deviation of the Gaussian initialization of W (0 = zeros).
    pub init_std: f64,
}

impl Default for ErmConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 0.1,
            init_std: 0.0,
        }
    }
}

/// Full-batch gradient descent on softmax cross-entropy over masked block sums.
pub fn fit_classifier_erm(
    batch: &SampleBatch,
    mask: &FeatureMask,
    config: &ErmConfig,
    stream: &mut RngStream,
) -> Result<LinearModel> {
    if batch.is_empty() {
        return Err(Error::Domain("empty training batch".into()));
    }
    let (n, d, k) = (batch.len(), batch.dim(), batch.k());
    let z = DMatrix::from_row_slice(n, d, &masked_features(mask, batch)?);
    let mut w = if config.init_std > 0.0 {
        DMatrix::from_fn(d, k, |_, _| {
            let z: f64 = StandardNormal.sample(stream);
            config.init_std * z
        })
    } else {
        DMatrix::zeros(d, k)
    };
    let labels = batch.labels();
    let mut residual = DMatrix::<f64>::zeros(n, k);
    for step in 0..config.steps {
        let logits = &z * &w;
        let mut loss = 0.0;
        for i in 0..n {
            let row_max = (0..k).map(|c| logits[(i, c)]).fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for c in 0..k {
                let e = (logits[(i, c)] - row_max).exp();
                residual[(i, c)] = e;
                denom += e;
            }
            for c in 0..k {
                residual[(i, c)] /= denom;
            }
            loss -= (residual[(i, labels[i])]).ln();
            residual[(i, labels[i])] -= 1.0;
        }
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "cross-entropy became {loss} at step {step} (lr {}, {} samples)",
                config.lr, n
            )));
        }
        let grad = z.tr_mul(&residual) / n as f64;
        w -= grad * config.lr;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("weights became non-finite at step {step} (lr {})", config.lr)));
        }
    }
    LinearModel::new(mask.clone(), w, 1.0)
}

/// Column-wise cosine similarity between two `d × K` classifiers. With
/// `centered`, the mean column is removed from each matrix first: softmax
/// is invariant to adding a common vector to every class column.
pub fn column_cosines(a: &DMatrix<f64>, b: &DMatrix<f64>, centered: bool) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::Mismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let prep = |m: &DMatrix<f64>| {
        if centered {
            let mean = m.column_mean();
            let mut c = m.clone();
            for mut col in c.column_iter_mut() {
                col -= &mean;
            }
            c
        } else {
            m.clone()
        }
    };
    let (a, b) = (prep(a), prep(b));
    Ok(a.column_iter()
        .zip(b.column_iter())
        .map(|(x, y)| x.dot(&y) / (x.norm() * y.norm()))
        .collect())
}

const MODEL_MAGIC: &[u8; 4] = b"SFDM";

/// Header `K, d, n_features, d_v, has_coeffs` (u32 LE); then mask weights,
/// scale, W row-major `d × K`, and latent coefficients if present (all f64 LE).
pub fn write_model(model: &LinearModel, path: &Path) -> Result<()> {
    let (d, k) = model.w.shape();
    let nf = model.mask.len();
    let header = [k as u32, d as u32, nf as u32, model.mask.d_v() as u32, model.coeffs.is_some() as u32];
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut w = Writer::new(file, MODEL_MAGIC, &header)?;
    w.f64s(model.mask.weights())?;
    w.f64s(&[model.scale])?;
    let row_major: Vec<f64> = (0..d).flat_map(|i| (0..k).map(move |c| (i, c))).map(|ic| model.w[ic]).collect();
    w.f64s(&row_major)?;
    if let Some(c) = &model.coeffs {
        w.f64s(c)?;
    }
    w.finish()
}

pub fn read_model(path: &Path) -> Result<LinearModel> {
    let bytes = read_file(path)?;
    let mut r = Reader::open(&bytes, MODEL_MAGIC)?;
    let k = r.u32()? as usize;
    let d = r.u32()? as usize;
    let nf = r.u32()? as usize;
    let d_v = r.u32()? as usize;
    let has_coeffs = r.u32()? != 0;
    let mask = FeatureMask::new(r.f64s(nf)?, d_v)?;
    let scale = r.f64s(1)?[0];
    let w = DMatrix::from_row_slice(d, k, &r.f64s(d * k)?);
    let coeffs = if has_coeffs { Some(r.f64s(nf)?) } else { None };
    r.finish()?;
    LinearModel::build(mask, w, scale, coeffs)
}
