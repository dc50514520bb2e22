use std::path::Path;

use serde::{Deserialize, Serialize};

use super::idx::{MnistSet, Split};
use crate::container::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

pub const CANVAS: usize = 42;
pub const CELL: usize = 7;
pub const GRID: usize = CANVAS / CELL;
pub const N_PATCHES: usize = 32;
pub const N_COLORS: usize = 10;
pub const N_CLASSES: usize = 10;
/// Flattened `42 × 42 × 3` image length.
pub const IMAGE_LEN: usize = CANVAS * CANVAS * 3;
const DIGIT: usize = 28;
const DIGIT_OFFSET: usize = (CANVAS - DIGIT) / 2;
/// Stroke pixels (normalized intensity above this) are never occluded.
pub const STROKE_THRESHOLD: f32 = 0.5;

pub type Rgb = [f32; 3];

pub const DEFAULT_PALETTE: [Rgb; N_COLORS] = [
    [1.0, 1.0, 1.0], // white
    [1.0, 1.0, 0.0], // yellow
    [1.0, 0.0, 0.0], // red
    [0.0, 1.0, 0.0], // green
    [0.0, 0.0, 1.0], // blue
    [0.0, 1.0, 1.0], // cyan
    [1.0, 0.0, 1.0], // magenta
    [1.0, 0.5, 0.0], // orange
    [0.5, 0.0, 1.0], // purple
    [0.5, 0.5, 0.5], // gray
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// 32 patches, each with its own label-to-color bijection and
    /// independent test-time corruption.
    #[default]
    Multi,
    /// One color decision per sample shared by every patch.
    Single,
}

/// A cell of the 6×6 grid, `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
}

impl GridCell {
    pub fn is_reserved(self) -> bool {
        (2..4).contains(&self.row) && (2..4).contains(&self.col)
    }
}

/// Grid cells of the 32 patches in row-major order, skipping the four
/// reserved central cells.
pub fn patch_cells() -> [GridCell; N_PATCHES] {
    let mut out = [GridCell { row: 0, col: 0 }; N_PATCHES];
    let cells = (0..GRID * GRID)
        .map(|i| GridCell { row: i / GRID, col: i % GRID })
        .filter(|c| !c.is_reserved());
    for (slot, cell) in out.iter_mut().zip(cells) {
        *slot = cell;
    }
    out
}

/// How a corrupted test-time color is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Uniform over all 10 colors, so the correlated color survives with
    /// probability `1 - p + p/10`.
    #[default]
    Uniform,
    /// Uniform over the 9 other colors; correlation exactly `1 - p`.
    OtherColors,
}

impl Corruption {
    fn redraw(self, s: &mut RngStream, correlated: u8) -> u8 {
        match self {
            Corruption::Uniform => s.below(N_COLORS) as u8,
            Corruption::OtherColors => {
                let c = s.below(N_COLORS - 1) as u8;
                if c >= correlated {
                    c + 1
                } else {
                    c
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColorConfig {
    pub variant: Variant,
    pub corruption: Corruption,
    pub palette: [Rgb; N_COLORS],
    /// Test-time probability that a color is resampled uniformly.
    pub p_test: f64,
    pub seed: u64,
}

impl Default for ColorConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Multi,
            corruption: Corruption::Uniform,
            palette: DEFAULT_PALETTE,
            p_test: 0.7,
            seed: 0,
        }
    }
}

impl ColorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_test) {
            return Err(Error::Domain(format!("p_test {} outside [0, 1]", self.p_test)));
        }
        for (i, a) in self.palette.iter().enumerate() {
            if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Domain(format!("palette entry {i} outside [0, 1]")));
            }
            if self.palette[..i].contains(a) {
                return Err(Error::Domain(format!("palette entry {i} repeats an earlier color")));
            }
        }
        Ok(())
    }

    /// Color index that patch `j` takes for `label` when correlated.
    pub fn patch_map(&self, patch: usize, label: u8) -> u8 {
        match self.variant {
            Variant::Multi => ((label as usize + patch) % N_COLORS) as u8,
            Variant::Single => label,
        }
    }
}

/// Colored digits. Images are rendered on demand from the stored digit and
/// patch colors; the full float tensor of the training split would not fit
/// comfortably in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorBatch {
    pub variant: Variant,
    pub split: Split,
    pub palette: [Rgb; N_COLORS],
    labels: Vec<u8>,
    /// `n × 32` color indices.
    patch_colors: Vec<u8>,
    /// `n × 28 × 28` raw digit intensities.
    digits: Vec<u8>,
}

impl ColorBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn patch_colors(&self, i: usize) -> &[u8] {
        &self.patch_colors[i * N_PATCHES..(i + 1) * N_PATCHES]
    }

    pub fn digit(&self, i: usize) -> &[u8] {
        &self.digits[i * DIGIT * DIGIT..(i + 1) * DIGIT * DIGIT]
    }

    /// First `n` samples.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            variant: self.variant,
            split: self.split,
            palette: self.palette,
            labels: self.labels[..n].to_vec(),
            patch_colors: self.patch_colors[..n * N_PATCHES].to_vec(),
            digits: self.digits[..n * DIGIT * DIGIT].to_vec(),
        }
    }

    /// Stroke intensity in `[0, 1]` at canvas pixel `(y, x)`.
    fn stroke(&self, i: usize, y: usize, x: usize) -> f32 {
        let inside = |v: usize| (DIGIT_OFFSET..DIGIT_OFFSET + DIGIT).contains(&v);
        if inside(y) && inside(x) {
            self.digit(i)[(y - DIGIT_OFFSET) * DIGIT + (x - DIGIT_OFFSET)] as f32 / 255.0
        } else {
            0.0
        }
    }

    /// Writes sample `i` into `out` (length [`IMAGE_LEN`], `y, x, channel`
    /// order). Cells listed in `blackout` have their background forced to
    /// black everywhere except on stroke pixels.
    pub fn render_into(&self, i: usize, blackout: Option<GridCell>, out: &mut [f32]) {
        assert_eq!(out.len(), IMAGE_LEN);
        let mut background = [[0.0f32; 3]; GRID * GRID];
        for (cell, &color) in patch_cells().iter().zip(self.patch_colors(i)) {
            background[cell.row * GRID + cell.col] = self.palette[color as usize];
        }
        for y in 0..CANVAS {
            for x in 0..CANVAS {
                let cell = GridCell { row: y / CELL, col: x / CELL };
                let v = self.stroke(i, y, x);
                let mut bg = background[cell.row * GRID + cell.col];
                if blackout == Some(cell) && v <= STROKE_THRESHOLD {
                    bg = [0.0; 3];
                }
                let px = &mut out[(y * CANVAS + x) * 3..(y * CANVAS + x) * 3 + 3];
                for (p, b) in px.iter_mut().zip(bg) {
                    *p = (1.0 - v) * b + v;
                }
            }
        }
    }

    pub fn image(&self, i: usize) -> Vec<f32> {
        let mut out = vec![0.0; IMAGE_LEN];
        self.render_into(i, None, &mut out);
        out
    }
}

/// Builds the colored split. Each sample draws from its own child stream,
/// so the result does not depend on iteration order.
pub fn build_color_dataset(mnist: &MnistSet, config: &ColorConfig, split: Split) -> Result<ColorBatch> {
    config.validate()?;
    if mnist.rows != DIGIT || mnist.cols != DIGIT {
        return Err(Error::Dimension(format!("expected 28×28 digits, got {}×{}", mnist.rows, mnist.cols)));
    }
    let split_id = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let root = RngStream::new(config.seed, split_id);
    let n = mnist.len();
    let mut patch_colors = Vec::with_capacity(n * N_PATCHES);
    for (i, &label) in mnist.labels.iter().enumerate() {
        let correlated = |j: usize| config.patch_map(j, label);
        match (split, config.variant) {
            (Split::Train, _) => patch_colors.extend((0..N_PATCHES).map(correlated)),
            (Split::Test, Variant::Multi) => {
                let mut s = root.child(i as u64);
                patch_colors.extend((0..N_PATCHES).map(|j| {
                    if s.uniform() < config.p_test {
                        config.corruption.redraw(&mut s, correlated(j))
                    } else {
                        correlated(j)
                    }
                }));
            }
            (Split::Test, Variant::Single) => {
                let mut s = root.child(i as u64);
                let color = if s.uniform() < config.p_test {
                    config.corruption.redraw(&mut s, correlated(0))
                } else {
                    correlated(0)
                };
                patch_colors.extend(std::iter::repeat_n(color, N_PATCHES));
            }
        }
    }
    Ok(ColorBatch {
        variant: config.variant,
        split,
        palette: config.palette,
        labels: mnist.labels.clone(),
        patch_colors,
        digits: mnist.images.clone(),
    })
}

const BATCH_MAGIC: &[u8; 4] = b"SFDC";

/// Header `n, variant, split` (u32 LE); palette as 30 f32; labels, patch
/// colors and digit bytes as u8.
pub fn write_color_batch(batch: &ColorBatch, path: &Path) -> Result<()> {
    let variant = match batch.variant {
        Variant::Multi => 0,
        Variant::Single => 1,
    };
    let split = match batch.split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut w = Writer::new(file, BATCH_MAGIC, &[batch.len() as u32, variant, split])?;
    w.f32s(batch.palette.as_flattened())?;
    w.u8s(&batch.labels)?;
    w.u8s(&batch.patch_colors)?;
    w.u8s(&batch.digits)?;
    w.finish()
}

pub fn read_color_batch(path: &Path) -> Result<ColorBatch> {
    let bytes = read_file(path)?;
    let mut r = Reader::open(&bytes, BATCH_MAGIC)?;
    let n = r.u32()? as usize;
    let variant = match r.u32()? {
        0 => Variant::Multi,
        1 => Variant::Single,
        v => return Err(Error::Parse { offset: 8, reason: format!("unknown variant {v}") }),
    };
    let split = match r.u32()? {
        0 => Split::Train,
        1 => Split::Test,
        v => return Err(Error::Parse { offset: 12, reason: format!("unknown split {v}") }),
    };
    let flat = r.f32s(N_COLORS * 3)?;
    let mut palette = [[0.0; 3]; N_COLORS];
    for (dst, src) in palette.iter_mut().zip(flat.chunks_exact(3)) {
        dst.copy_from_slice(src);
    }
    let labels = r.u8s(n)?;
    let patch_colors = r.u8s(n * N_PATCHES)?;
    let digits = r.u8s(n * DIGIT * DIGIT)?;
    r.finish()?;
    if labels.iter().any(|&l| l as usize >= N_CLASSES) || patch_colors.iter().any(|&c| c as usize >= N_COLORS) {
        return Err(Error::Domain("label or color index out of range".into()));
    }
    Ok(ColorBatch { variant, split, palette, labels, patch_colors, digits })
}

/// Synthetic digits for tests and smoke runs: a filled square whose size
/// depends on the label.
pub fn synthetic_mnist(n: usize, split: Split, seed: u64) -> MnistSet {
    let mut s = RngStream::new(seed, 99);
    let mut images = vec![0u8; n * DIGIT * DIGIT];
    let labels: Vec<u8> = (0..n).map(|_| s.below(N_CLASSES) as u8).collect();
    for (img, &l) in images.chunks_exact_mut(DIGIT * DIGIT).zip(&labels) {
        let half = 3 + l as usize;
        for y in 14 - half..14 + half {
            for x in 14 - half..14 + half {
                img[y * DIGIT + x] = 255;
            }
        }
    }
    MnistSet { images, labels, rows: DIGIT, cols: DIGIT, split }
}
