//! The multi-class Gaussian feature model: latent feature matrices, label
//! transformation environments and noisy sample batches.

use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::container::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::{build_orthonormal_bank, BankMode, RngStream};

pub const DEFAULT_SIGMA: f64 = 0.01;

/// The latent world: `d_v` invariant and `d_s` spurious features, each a
/// `d × K` matrix whose columns are orthonormal across all features.
/// Features are indexed invariant-first: `0..d_v` invariant, `d_v..` spurious.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    k: usize,
    d_v: usize,
    d_s: usize,
    sigma: f64,
    d: usize,
    bank_mode: BankMode,
    // Column (feature f, class c) is cols[(f * k + c) * d .. +d].
    cols: Vec<f64>,
}

impl FeatureSpec {
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn d_v(&self) -> usize {
        self.d_v
    }
    pub fn d_s(&self) -> usize {
        self.d_s
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn bank_mode(&self) -> BankMode {
        self.bank_mode
    }
    pub fn n_features(&self) -> usize {
        self.d_v + self.d_s
    }
    pub fn is_invariant(&self, feature: usize) -> bool {
        feature < self.d_v
    }

    /// Latent column μ_f(class).
    pub fn column(&self, feature: usize, class: usize) -> &[f64] {
        let start = (feature * self.k + class) * self.d;
        &self.cols[start..start + self.d]
    }

    /// The `d × K` matrix μ_f.
    pub fn mu(&self, feature: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.d, self.k, |i, c| self.column(feature, c)[i])
    }

    /// Same world with σ = 0. Only meant for noiseless test hooks.
    pub fn noiseless(&self) -> Self {
        Self {
            sigma: 0.0,
            ..self.clone()
        }
    }
}

/// Builds a world with embedding dimension `K·(d_v + d_s)`.
pub fn make_feature_spec(
    k: usize,
    d_v: usize,
    d_s: usize,
    sigma: f64,
    bank_mode: BankMode,
    stream: &mut RngStream,
) -> Result<FeatureSpec> {
    make_feature_spec_with_dim(k, d_v, d_s, sigma, k * (d_v + d_s), bank_mode, stream)
}

pub fn make_feature_spec_with_dim(
    k: usize,
    d_v: usize,
    d_s: usize,
    sigma: f64,
    d: usize,
    bank_mode: BankMode,
    stream: &mut RngStream,
) -> Result<FeatureSpec> {
    if k < 2 {
        return Err(Error::Domain(format!("need at least 2 classes, got {k}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if d_v + d_s == 0 {
        return Err(Error::Domain("world has no features".into()));
    }
    let m = k * (d_v + d_s);
    if d < m {
        return Err(Error::Dimension(format!(
            "embedding dimension {d} is below K*(d_v+d_s) = {m}"
        )));
    }
    let bank = build_orthonormal_bank(m, d, bank_mode, stream)?;
    // Column-major storage already matches the (feature, class) layout.
    let cols = bank.columns.as_slice().to_vec();
    Ok(FeatureSpec {
        k,
        d_v,
        d_s,
        sigma,
        d,
        bank_mode,
        cols,
    })
}

/// Shift probability of an OOD environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentLaw {
    p: f64,
}

impl EnvironmentLaw {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("shift probability {p} outside [0, 1]")));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

/// One environment: for every spurious feature, the class each label column
/// is redirected to. Invariant features are implicitly the identity.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TransformSet {
    k: usize,
    d_v: usize,
    targets: Vec<Vec<u8>>,
}

impl TransformSet {
    pub fn from_targets(k: usize, d_v: usize, targets: Vec<Vec<u8>>) -> Result<Self> {
        for (j, row) in targets.iter().enumerate() {
            if row.len() != k || row.iter().any(|&t| t as usize >= k) {
                return Err(Error::Domain(format!("spurious transform {j} is not a valid column selector")));
            }
        }
        Ok(Self { k, d_v, targets })
    }

    pub fn identity(spec: &FeatureSpec) -> Self {
        let row: Vec<u8> = (0..spec.k as u8).collect();
        Self {
            k: spec.k,
            d_v: spec.d_v,
            targets: vec![row; spec.d_s],
        }
    }

    pub fn d_s(&self) -> usize {
        self.targets.len()
    }

    /// Class whose latent column feature `feature` shows for a sample of `class`.
    pub fn image(&self, feature: usize, class: usize) -> usize {
        if feature < self.d_v {
            class
        } else {
            self.targets[feature - self.d_v][class] as usize
        }
    }

    /// The K×K 0/1 matrix Q_{s,j}.
    pub fn q_matrix(&self, spurious: usize) -> DMatrix<f64> {
        let row = &self.targets[spurious];
        DMatrix::from_fn(self.k, self.k, |r, c| if row[c] as usize == r { 1.0 } else { 0.0 })
    }

    pub fn targets(&self) -> &[Vec<u8>] {
        &self.targets
    }
}

/// The in-distribution environment (all Q = I).
pub fn id_environment(spec: &FeatureSpec) -> TransformSet {
    TransformSet::identity(spec)
}

pub fn sample_environment(spec: &FeatureSpec, law: EnvironmentLaw, stream: &mut RngStream) -> TransformSet {
    let k = spec.k;
    let targets = (0..spec.d_s)
        .map(|_| {
            (0..k)
                .map(|c| {
                    if stream.uniform() < law.p {
                        stream.below(k) as u8
                    } else {
                        c as u8
                    }
                })
                .collect()
        })
        .collect();
    TransformSet {
        k,
        d_v: spec.d_v,
        targets,
    }
}

/// Samples stored as blocks. A block is the sum of a group of feature
/// vectors; the default layout has one block per feature. Grouped layouts
/// are exact in distribution (the sum of independent Gaussians) and let
/// evaluation skip features no model looks at.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    k: usize,
    d_v: usize,
    d_s: usize,
    d: usize,
    blocks: Vec<Vec<usize>>,
    x: Vec<f64>,
    y: Vec<usize>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.y.len()
    }
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn n_features(&self) -> usize {
        self.d_v + self.d_s
    }
    pub fn labels(&self) -> &[usize] {
        &self.y
    }
    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Vector of block `b` for sample `i`.
    pub fn block(&self, i: usize, b: usize) -> &[f64] {
        let start = (i * self.blocks.len() + b) * self.d;
        &self.x[start..start + self.d]
    }

    /// One block per feature, in feature order.
    pub fn is_per_feature(&self) -> bool {
        self.blocks.len() == self.n_features()
            && self.blocks.iter().enumerate().all(|(f, b)| b.len() == 1 && b[0] == f)
    }

    /// Same layout as `spec`?
    pub fn matches(&self, spec: &FeatureSpec) -> bool {
        self.k == spec.k && self.d_v == spec.d_v && self.d_s == spec.d_s && self.d == spec.d
    }

    /// Keeps samples `range`; used to shard or subsample.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let stride = self.blocks.len() * self.d;
        Self {
            x: self.x[range.start * stride..range.end * stride].to_vec(),
            y: self.y[range].to_vec(),
            blocks: self.blocks.clone(),
            ..*self
        }
    }
}

/// One block per feature.
pub fn sample_batch(spec: &FeatureSpec, transforms: &TransformSet, n: usize, stream: &mut RngStream) -> Result<SampleBatch> {
    let groups: Vec<Vec<usize>> = (0..spec.n_features()).map(|f| vec![f]).collect();
    sample_batch_grouped(spec, transforms, &groups, n, stream)
}

/// Blocks are sums over `groups`; features in no group are not sampled.
pub fn sample_batch_grouped(
    spec: &FeatureSpec,
    transforms: &TransformSet,
    groups: &[Vec<usize>],
    n: usize,
    stream: &mut RngStream,
) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::Domain("batch size must be at least 1".into()));
    }
    if transforms.k != spec.k || transforms.d_s() != spec.d_s || transforms.d_v != spec.d_v {
        return Err(Error::Mismatch("transform set does not belong to this feature spec".into()));
    }
    let mut seen = vec![false; spec.n_features()];
    for g in groups {
        if g.is_empty() {
            return Err(Error::Domain("empty feature group".into()));
        }
        for &f in g {
            if f >= seen.len() || std::mem::replace(&mut seen[f], true) {
                return Err(Error::Domain(format!("feature {f} out of range or in two groups")));
            }
        }
    }
    let d = spec.d;
    let nb = groups.len();
    let mut x = vec![0.0; n * nb * d];
    let mut y = Vec::with_capacity(n);
    let noise: Vec<f64> = groups.iter().map(|g| spec.sigma * (g.len() as f64).sqrt()).collect();
    for sample in x.chunks_exact_mut(nb * d) {
        let label = stream.below(spec.k);
        y.push(label);
        for ((g, out), &s) in groups.iter().zip(sample.chunks_exact_mut(d)).zip(&noise) {
            for &f in g {
                let col = spec.column(f, transforms.image(f, label));
                out.iter_mut().zip(col).for_each(|(o, c)| *o += c);
            }
            if s > 0.0 {
                for o in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(stream);
                    *o += s * z;
                }
            }
        }
    }
    Ok(SampleBatch {
        k: spec.k,
        d_v: spec.d_v,
        d_s: spec.d_s,
        d,
        blocks: groups.to_vec(),
        x,
        y,
    })
}

const BATCH_MAGIC: &[u8; 4] = b"SFDB";

/// Writes a per-feature batch: header `K, d_v, d_s, d, n` (u32 LE), labels
/// (u16 LE, 0-based), then the `n × (d_v+d_s) × d` values as f64 LE.
pub fn write_batch(batch: &SampleBatch, path: &Path) -> Result<()> {
    if !batch.is_per_feature() {
        return Err(Error::Unsupported("only per-feature batches can be serialized".into()));
    }
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::Domain(format!("{v} does not fit in u32")));
    let header = [
        to_u32(batch.k)?,
        to_u32(batch.d_v)?,
        to_u32(batch.d_s)?,
        to_u32(batch.d)?,
        to_u32(batch.len())?,
    ];
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut w = Writer::new(file, BATCH_MAGIC, &header)?;
    w.u16s(batch.y.iter().map(|&l| l as u16))?;
    w.f64s(&batch.x)?;
    w.finish()
}

pub fn read_batch(path: &Path) -> Result<SampleBatch> {
    let bytes = read_file(path)?;
    let mut r = Reader::open(&bytes, BATCH_MAGIC)?;
    let k = r.u32()? as usize;
    let d_v = r.u32()? as usize;
    let d_s = r.u32()? as usize;
    let d = r.u32()? as usize;
    let n = r.u32()? as usize;
    let y: Vec<usize> = r.u16s(n)?.into_iter().map(usize::from).collect();
    if let Some(bad) = y.iter().find(|&&l| l >= k) {
        return Err(Error::Parse {
            offset: 24,
            reason: format!("label {bad} out of range for K = {k}"),
        });
    }
    let x = r.f64s(n * (d_v + d_s) * d)?;
    r.finish()?;
    Ok(SampleBatch {
        k,
        d_v,
        d_s,
        d,
        blocks: (0..d_v + d_s).map(|f| vec![f]).collect(),
        x,
        y,
    })
}
