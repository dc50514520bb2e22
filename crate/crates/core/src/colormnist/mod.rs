//! Colored-digit benchmarks: 32 color patches around an MNIST digit, each
//! patch spuriously tied to the label, plus a small MLP trainer.

mod dataset;
mod fetch;
mod idx;
mod mlp;
mod ppm;

pub use dataset::{
    build_color_dataset, patch_cells, read_color_batch, synthetic_mnist, write_color_batch, ColorBatch, ColorConfig,
    Corruption,
    GridCell, Rgb, Variant, CANVAS, CELL, DEFAULT_PALETTE, GRID, IMAGE_LEN, N_CLASSES, N_COLORS, N_PATCHES,
    STROKE_THRESHOLD,
};
pub use fetch::{
    default_cache_root, fetch_mnist, HttpTransport, Transport, CACHE_ENV, DEFAULT_MIRROR, TEST_IMAGES, TEST_LABELS,
    TRAIN_IMAGES, TRAIN_LABELS,
};
pub use idx::{parse_idx, IdxTensor, MnistSet, Split};
pub use mlp::{
    accuracy_of, argmax, eval_color, mean_confidence, occlusion_profile, occlusion_sensitivity,
    occlusion_sensitivity_at, ose_logits, predictions, read_mlp, train_mlp, write_mlp, EvalMode, MlpModel,
    TrainConfig, HIDDEN,
};
pub use ppm::{decode_ppm, encode_ppm, export_ppm, read_ppm, Ppm};
