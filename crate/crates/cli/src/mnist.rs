//! Staged colored-MNIST pipeline. Each stage writes a manifest next to its
//! outputs; a stage whose manifest matches the current config is skipped.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sfd_core::colormnist::{
    build_color_dataset, default_cache_root, export_ppm, fetch_mnist, mean_confidence, occlusion_profile, ose_logits,
    predictions, accuracy_of, read_color_batch, read_mlp, train_mlp, write_color_batch, write_mlp, ColorBatch,
    ColorConfig, HttpTransport, MlpModel, MnistSet, Split, TrainConfig, CANVAS, N_PATCHES,
};

use crate::config::{ExperimentConfig, MnistConfig};
use crate::error::CliError;
use crate::table::{num, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Fetch,
    Build,
    Train,
    Eval,
    Occlude,
}

/// Where one variant's artifacts live.
#[derive(Debug, Clone)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let variant = serde_json::to_value(cfg.mnist.variant).expect("variant serializes");
        Self(cfg.out_dir.join("mnist").join(variant.as_str().unwrap_or("variant")))
    }

    pub fn train_set(&self) -> PathBuf {
        self.0.join("train.sfdc")
    }

    pub fn test_set(&self, p: f64) -> PathBuf {
        self.0.join(format!("test_p{p:.2}.sfdc"))
    }

    pub fn model(&self, index: u64) -> PathBuf {
        self.0.join("models").join(format!("model_{index}.sfdn"))
    }

    fn manifest(&self, stage: &str) -> PathBuf {
        self.0.join(format!("{stage}.manifest.json"))
    }
}

fn require(path: &Path, stage: &'static str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingStage { stage, path: path.to_path_buf() })
    }
}

/// True if `stage` already ran with exactly `key`.
fn cached<T: Serialize>(run: &RunDir, stage: &str, key: &T) -> Result<bool, CliError> {
    let path = run.manifest(stage);
    let want = serde_json::to_string_pretty(key)?;
    Ok(std::fs::read_to_string(path).is_ok_and(|have| have == want))
}

fn mark<T: Serialize>(run: &RunDir, stage: &str, key: &T) -> Result<(), CliError> {
    std::fs::write(run.manifest(stage), serde_json::to_string_pretty(key)?)?;
    Ok(())
}

fn cache_root(cfg: &ExperimentConfig) -> PathBuf {
    cfg.mnist.cache_dir.clone().unwrap_or_else(default_cache_root)
}

pub fn load_mnist(cfg: &ExperimentConfig) -> Result<(MnistSet, MnistSet), CliError> {
    Ok(fetch_mnist(&cfg.mnist.mirror, &cache_root(cfg), &HttpTransport::default(), cfg.offline)?)
}

fn truncate(mut set: MnistSet, n: Option<usize>) -> MnistSet {
    if let Some(n) = n.filter(|&n| n < set.len()) {
        set.labels.truncate(n);
        set.images.truncate(n * set.rows * set.cols);
    }
    set
}

pub fn color_config(cfg: &ExperimentConfig, p: f64) -> ColorConfig {
    ColorConfig {
        variant: cfg.mnist.variant,
        corruption: cfg.mnist.corruption,
        p_test: p,
        seed: cfg.seed,
        ..ColorConfig::default()
    }
}

/// Training seed of model `index`.
pub fn train_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index)
}

pub fn model_indices(m: &MnistConfig) -> Vec<u64> {
    m.seeds.iter().flat_map(|&s| [2 * s, 2 * s + 1]).collect()
}

#[derive(Serialize)]
struct BuildKey<'a> {
    seed: u64,
    variant: sfd_core::colormnist::Variant,
    corruption: sfd_core::colormnist::Corruption,
    p_grid: &'a [f64],
    n_train: Option<usize>,
    n_test: Option<usize>,
}

pub fn build(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let run = RunDir::new(cfg);
    let m = &cfg.mnist;
    let key = BuildKey {
        seed: cfg.seed,
        variant: m.variant,
        corruption: m.corruption,
        p_grid: &m.p_grid,
        n_train: m.n_train,
        n_test: m.n_test,
    };
    if cached(&run, "build", &key)? {
        return Ok("build: cached".into());
    }
    std::fs::create_dir_all(&run.0)?;
    let (train, test) = load_mnist(cfg)?;
    let (train, test) = (truncate(train, m.n_train), truncate(test, m.n_test));
    let train_set = build_color_dataset(&train, &color_config(cfg, 0.0), Split::Train)?;
    write_color_batch(&train_set, &run.train_set())?;
    export_ppm(&train_set.image(0), CANVAS, CANVAS, &run.0.join("sample_train.ppm"))?;
    for &p in &m.p_grid {
        let test_set = build_color_dataset(&test, &color_config(cfg, p), Split::Test)?;
        write_color_batch(&test_set, &run.test_set(p))?;
        export_ppm(&test_set.image(0), CANVAS, CANVAS, &run.0.join(format!("sample_test_p{p:.2}.ppm")))?;
    }
    mark(&run, "build", &key)?;
    Ok(format!("build: {} train, {} test samples per p", train_set.len(), test.len()))
}

#[derive(Serialize)]
struct TrainKey<'a> {
    seed: u64,
    models: Vec<u64>,
    train: &'a TrainConfig,
    build: String,
}

pub fn train(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let run = RunDir::new(cfg);
    require(&run.train_set(), "build")?;
    let key = TrainKey {
        seed: cfg.seed,
        models: model_indices(&cfg.mnist),
        train: &cfg.mnist.train,
        build: std::fs::read_to_string(run.manifest("build")).unwrap_or_default(),
    };
    if cached(&run, "train", &key)? && key.models.iter().all(|&i| run.model(i).exists()) {
        return Ok("train: cached".into());
    }
    let batch = read_color_batch(&run.train_set())?;
    std::fs::create_dir_all(run.0.join("models"))?;
    for &i in &key.models {
        let tc = TrainConfig { seed: train_seed(cfg.seed, i), ..cfg.mnist.train };
        let model = train_mlp(&batch, &tc)?;
        write_mlp(&model, &run.model(i))?;
    }
    mark(&run, "train", &key)?;
    Ok(format!("train: {} models", key.models.len()))
}

fn load_models(run: &RunDir, m: &MnistConfig) -> Result<Vec<(u64, MlpModel)>, CliError> {
    model_indices(m)
        .into_iter()
        .map(|i| {
            let path = run.model(i);
            require(&path, "train")?;
            Ok((i, read_mlp(&path)?))
        })
        .collect()
}

/// One row of the ensemble table (accuracies in percent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub p: f64,
    pub seed: u64,
    pub model1: f64,
    pub model2: f64,
    pub ensemble: f64,
    pub confidence1: f64,
    pub confidence2: f64,
}

impl EvalRow {
    pub fn gain(&self) -> f64 {
        self.ensemble - self.model1.max(self.model2)
    }
}

/// Individual and output-space-ensemble accuracy of each model pair.
pub fn evaluate_pairs(models: &[(u64, MlpModel)], seeds: &[u64], test: &ColorBatch, p: f64) -> Vec<EvalRow> {
    let logits: Vec<Vec<f32>> = models.iter().map(|(_, m)| m.logits(test, None)).collect();
    let labels = test.labels();
    seeds
        .iter()
        .zip(logits.chunks_exact(2))
        .map(|(&seed, pair)| EvalRow {
            p,
            seed,
            model1: 100.0 * accuracy_of(&predictions(&pair[0]), labels),
            model2: 100.0 * accuracy_of(&predictions(&pair[1]), labels),
            ensemble: 100.0 * accuracy_of(&predictions(&ose_logits(&pair[0], &pair[1])), labels),
            confidence1: mean_confidence(&pair[0]),
            confidence2: mean_confidence(&pair[1]),
        })
        .collect()
}

pub fn eval_table(rows: &[EvalRow], p_grid: &[f64]) -> Table {
    let mut t = Table::new(["p", "seed", "model1", "model2", "ensemble", "gain", "confidence1", "confidence2"]);
    for r in rows {
        t.push(vec![
            format!("{:.2}", r.p),
            r.seed.to_string(),
            num(r.model1),
            num(r.model2),
            num(r.ensemble),
            num(r.gain()),
            num(r.confidence1),
            num(r.confidence2),
        ]);
    }
    for &p in p_grid {
        let sel: Vec<&EvalRow> = rows.iter().filter(|r| r.p == p).collect();
        let n = sel.len().max(1) as f64;
        let mean = |f: &dyn Fn(&EvalRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
        t.push(vec![
            format!("{p:.2}"),
            "mean".into(),
            num(mean(&|r| r.model1)),
            num(mean(&|r| r.model2)),
            num(mean(&|r| r.ensemble)),
            num(mean(&|r| r.gain())),
            num(mean(&|r| r.confidence1)),
            num(mean(&|r| r.confidence2)),
        ]);
    }
    t
}

pub fn eval(cfg: &ExperimentConfig) -> Result<(String, Vec<EvalRow>), CliError> {
    let run = RunDir::new(cfg);
    let models = load_models(&run, &cfg.mnist)?;
    let mut rows = Vec::new();
    for &p in &cfg.mnist.p_grid {
        let path = run.test_set(p);
        require(&path, "build")?;
        rows.extend(evaluate_pairs(&models, &cfg.mnist.seeds, &read_color_batch(&path)?, p));
    }
    let table = eval_table(&rows, &cfg.mnist.p_grid);
    table.write(&run.0, "eval")?;
    std::fs::write(run.0.join("eval.json"), serde_json::to_string_pretty(&rows)?)?;
    Ok((table.aligned(), rows))
}

/// Per-patch occlusion sensitivity of every model on the first test split.
pub fn occlude(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let run = RunDir::new(cfg);
    let models = load_models(&run, &cfg.mnist)?;
    let p = *cfg
        .mnist
        .p_grid
        .first()
        .ok_or_else(|| CliError::Usage("p_grid is empty".into()))?;
    let path = run.test_set(p);
    require(&path, "build")?;
    let test = read_color_batch(&path)?.head(cfg.mnist.occlude_samples);
    let mut header = vec!["model".to_string()];
    header.extend((0..N_PATCHES).map(|j| format!("patch_{j}")));
    let mut t = Table::new(header);
    for (i, m) in &models {
        let mut row = vec![i.to_string()];
        row.extend(occlusion_profile(m, &test).into_iter().map(num));
        t.push(row);
    }
    t.write(&run.0, "occlude")?;
    Ok(t.aligned())
}

pub fn run_stage(cfg: &ExperimentConfig, stage: Stage) -> Result<String, CliError> {
    match stage {
        Stage::Fetch => {
            let (train, test) = load_mnist(cfg)?;
            Ok(format!("fetch: {} train, {} test digits in {}", train.len(), test.len(), cache_root(cfg).display()))
        }
        Stage::Build => build(cfg),
        Stage::Train => train(cfg),
        Stage::Eval => eval(cfg).map(|r| r.0),
        Stage::Occlude => occlude(cfg),
    }
}
