use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{ColorBatch, GridCell, IMAGE_LEN, N_CLASSES};
use crate::container::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

pub const HIDDEN: usize = 64;
const EVAL_CHUNK: usize = 250;

/// Two-layer ReLU network, `IMAGE_LEN → HIDDEN → 10`. Weight matrices are
/// row-major with the input dimension first.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Probability mass spread evenly over the wrong classes.
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 100,
            steps: 5000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            label_smoothing: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.lr > 0.0 && self.eps > 0.0 && self.batch_size > 0 && self.steps > 0;
        let betas = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !positive || !betas {
            return Err(Error::Domain(format!("invalid training hyperparameters {self:?}")));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Domain(format!("label smoothing {} outside [0, 1)", self.label_smoothing)));
        }
        Ok(())
    }
}

/// `C = A·B + beta·C` for row-major operands, with either input optionally
/// read transposed from its stored layout.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_t: bool, b: &[f32], b_t: bool, beta: f32, c: &mut [f32]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the stored layouts.
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

impl MlpModel {
    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn init(stream: &mut RngStream) -> Self {
        let mut draw = |len: usize, fan_in: usize| -> Vec<f32> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..len).map(|_| ((2.0 * stream.uniform() - 1.0) * bound) as f32).collect()
        };
        let w1 = draw(IMAGE_LEN * HIDDEN, IMAGE_LEN);
        let b1 = draw(HIDDEN, IMAGE_LEN);
        let w2 = draw(HIDDEN * N_CLASSES, HIDDEN);
        let b2 = draw(N_CLASSES, HIDDEN);
        Self { w1, b1, w2, b2 }
    }

    pub fn is_finite(&self) -> bool {
        [&self.w1, &self.b1, &self.w2, &self.b2].iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Returns `(hidden pre-activation, logits)` for `n` stacked images.
    fn forward(&self, x: &[f32], n: usize) -> (Vec<f32>, Vec<f32>) {
        let mut z1 = self.b1.repeat(n);
        gemm(n, IMAGE_LEN, HIDDEN, x, false, &self.w1, false, 1.0, &mut z1);
        let a1: Vec<f32> = z1.iter().map(|v| v.max(0.0)).collect();
        let mut logits = self.b2.repeat(n);
        gemm(n, HIDDEN, N_CLASSES, &a1, false, &self.w2, false, 1.0, &mut logits);
        (z1, logits)
    }

    /// Logits for every sample, `n × 10` row-major. `blackout` occludes one
    /// grid cell in every image.
    pub fn logits(&self, batch: &ColorBatch, blackout: Option<GridCell>) -> Vec<f32> {
        let starts: Vec<usize> = (0..batch.len()).step_by(EVAL_CHUNK).collect();
        let parts: Vec<Vec<f32>> = starts
            .par_iter()
            .map(|&start| {
                let end = (start + EVAL_CHUNK).min(batch.len());
                let mut x = vec![0.0f32; (end - start) * IMAGE_LEN];
                for (i, img) in (start..end).zip(x.chunks_exact_mut(IMAGE_LEN)) {
                    batch.render_into(i, blackout, img);
                }
                self.forward(&x, end - start).1
            })
            .collect();
        parts.concat()
    }
}

fn softmax_row(row: &[f32]) -> [f32; N_CLASSES] {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut out = [0.0; N_CLASSES];
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    out
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }

    fn step(&mut self, param: &mut [f32], grad: &[f32], cfg: &TrainConfig, t: i32) {
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, eps) = (cfg.lr as f32, cfg.eps as f32);
        for (((p, g), m), v) in param.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Minibatch Adam on (optionally label-smoothed) softmax cross-entropy.
/// Samples are visited in a fresh random order each epoch.
pub fn train_mlp(batch: &ColorBatch, config: &TrainConfig) -> Result<MlpModel> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::Domain("empty training batch".into()));
    }
    let root = RngStream::new(config.seed, 2);
    let mut model = MlpModel::init(&mut root.child(0));
    let mut order_stream = root.child(1);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut cursor = order.len();

    let bs = config.batch_size.min(batch.len());
    let off = (config.label_smoothing / (N_CLASSES - 1) as f64) as f32;
    let on = (1.0 - config.label_smoothing) as f32;
    let mut opt = [
        Adam::new(model.w1.len()),
        Adam::new(model.b1.len()),
        Adam::new(model.w2.len()),
        Adam::new(model.b2.len()),
    ];
    let mut x = vec![0.0f32; bs * IMAGE_LEN];
    let mut labels = vec![0u8; bs];
    let mut g_w1 = vec![0.0f32; model.w1.len()];
    let mut g_w2 = vec![0.0f32; model.w2.len()];

    for step in 0..config.steps {
        for (img, label) in x.chunks_exact_mut(IMAGE_LEN).zip(labels.iter_mut()) {
            if cursor == order.len() {
                order.shuffle(&mut order_stream);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            batch.render_into(i, None, img);
            *label = batch.labels()[i];
        }

        let (z1, logits) = model.forward(&x, bs);
        let mut loss = 0.0f64;
        let mut g_logits = vec![0.0f32; bs * N_CLASSES];
        for ((row, g), &y) in logits.chunks_exact(N_CLASSES).zip(g_logits.chunks_exact_mut(N_CLASSES)).zip(&labels) {
            let prob = softmax_row(row);
            for c in 0..N_CLASSES {
                let target = if c == y as usize { on } else { off };
                if target > 0.0 {
                    loss -= (target * prob[c].max(f32::MIN_POSITIVE).ln()) as f64;
                }
                g[c] = (prob[c] - target) / bs as f32;
            }
        }
        loss /= bs as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss became {loss} at step {step}")));
        }

        let a1: Vec<f32> = z1.iter().map(|v| v.max(0.0)).collect();
        gemm(HIDDEN, bs, N_CLASSES, &a1, true, &g_logits, false, 0.0, &mut g_w2);
        let g_b2: Vec<f32> = (0..N_CLASSES).map(|c| g_logits.iter().skip(c).step_by(N_CLASSES).sum()).collect();
        let mut g_z1 = vec![0.0f32; bs * HIDDEN];
        gemm(bs, N_CLASSES, HIDDEN, &g_logits, false, &model.w2, true, 0.0, &mut g_z1);
        for (g, z) in g_z1.iter_mut().zip(&z1) {
            if *z <= 0.0 {
                *g = 0.0;
            }
        }
        gemm(IMAGE_LEN, bs, HIDDEN, &x, true, &g_z1, false, 0.0, &mut g_w1);
        let g_b1: Vec<f32> = (0..HIDDEN).map(|h| g_z1.iter().skip(h).step_by(HIDDEN).sum()).collect();

        let t = step as i32 + 1;
        let [o_w1, o_b1, o_w2, o_b2] = &mut opt;
        o_w1.step(&mut model.w1, &g_w1, config, t);
        o_b1.step(&mut model.b1, &g_b1, config, t);
        o_w2.step(&mut model.w2, &g_w2, config, t);
        o_b2.step(&mut model.b2, &g_b2, config, t);
    }
    if !model.is_finite() {
        return Err(Error::Numeric("trained weights are not finite".into()));
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Single,
    /// Argmax of the summed logits of two models.
    Ose,
}

/// Index of the largest entry; the first one wins a tie.
pub fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

pub fn predictions(logits: &[f32]) -> Vec<u8> {
    logits.chunks_exact(N_CLASSES).map(|r| argmax(r) as u8).collect()
}

pub fn accuracy_of(predictions: &[u8], labels: &[u8]) -> f64 {
    let hits = predictions.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Elementwise sum of two logit tables.
pub fn ose_logits(a: &[f32], b: &[f32]) -> Vec<f32> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn eval_color(models: &[&MlpModel], batch: &ColorBatch, mode: EvalMode) -> Result<f64> {
    let logits = match (mode, models) {
        (EvalMode::Single, [m]) => m.logits(batch, None),
        (EvalMode::Ose, [a, b]) => ose_logits(&a.logits(batch, None), &b.logits(batch, None)),
        _ => {
            return Err(Error::Mismatch(format!("mode {mode:?} cannot take {} models", models.len())));
        }
    };
    Ok(accuracy_of(&predictions(&logits), batch.labels()))
}

/// Mean top-class softmax probability.
pub fn mean_confidence(logits: &[f32]) -> f64 {
    let rows = logits.chunks_exact(N_CLASSES);
    let n = rows.len().max(1);
    rows.map(|r| softmax_row(r).iter().copied().fold(0.0f32, f32::max) as f64).sum::<f64>() / n as f64
}

/// Fraction of samples whose prediction changes when `cell` is blacked out.
pub fn occlusion_sensitivity_at(model: &MlpModel, batch: &ColorBatch, cell: GridCell, baseline: &[u8]) -> f64 {
    let occluded = predictions(&model.logits(batch, Some(cell)));
    let flips = occluded.iter().zip(baseline).filter(|(a, b)| a != b).count();
    flips as f64 / batch.len().max(1) as f64
}

pub fn occlusion_sensitivity(model: &MlpModel, batch: &ColorBatch, patch_id: usize) -> Result<f64> {
    let cells = super::dataset::patch_cells();
    let cell = *cells
        .get(patch_id)
        .ok_or_else(|| Error::Domain(format!("patch id {patch_id} outside 0..{}", cells.len())))?;
    let baseline = predictions(&model.logits(batch, None));
    Ok(occlusion_sensitivity_at(model, batch, cell, &baseline))
}

/// Sensitivity of every patch, reusing one baseline pass.
pub fn occlusion_profile(model: &MlpModel, batch: &ColorBatch) -> Vec<f64> {
    let baseline = predictions(&model.logits(batch, None));
    super::dataset::patch_cells()
        .iter()
        .map(|&cell| occlusion_sensitivity_at(model, batch, cell, &baseline))
        .collect()
}

const MLP_MAGIC: &[u8; 4] = b"SFDN";

/// Header `input, hidden, classes` (u32 LE); then W1, b1, W2, b2 as f32 LE.
pub fn write_mlp(model: &MlpModel, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut w = Writer::new(file, MLP_MAGIC, &[IMAGE_LEN as u32, HIDDEN as u32, N_CLASSES as u32])?;
    for part in [&model.w1, &model.b1, &model.w2, &model.b2] {
        w.f32s(part)?;
    }
    w.finish()
}

pub fn read_mlp(path: &Path) -> Result<MlpModel> {
    let bytes = read_file(path)?;
    let mut r = Reader::open(&bytes, MLP_MAGIC)?;
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    if dims != [IMAGE_LEN as u32, HIDDEN as u32, N_CLASSES as u32] {
        return Err(Error::Dimension(format!("unexpected network shape {dims:?}")));
    }
    let model = MlpModel {
        w1: r.f32s(IMAGE_LEN * HIDDEN)?,
        b1: r.f32s(HIDDEN)?,
        w2: r.f32s(HIDDEN * N_CLASSES)?,
        b2: r.f32s(N_CLASSES)?,
    };
    r.finish()?;
    if !model.is_finite() {
        return Err(Error::Numeric("stored weights are not finite".into()));
    }
    Ok(model)
}
