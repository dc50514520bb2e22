//! Accuracy in a fixed environment, expected OOD accuracy over random
//! environments, worst-case accuracy, correctness-group decomposition and
//! confidence statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generative::{sample_batch_grouped, sample_environment, EnvironmentLaw, FeatureSpec, SampleBatch, TransformSet};
use crate::models::{predict_labels, EffectiveCoeffs, Logits, Predictor};
use crate::numerics::{kahan_sum, ProbEstimate, RngStream};

/// Fraction of correct predictions with binomial standard error.
pub fn accuracy(model: &dyn Predictor, batch: &SampleBatch, stream: &mut RngStream) -> Result<ProbEstimate> {
    if batch.is_empty() {
        return Err(Error::Domain("accuracy of an empty batch".into()));
    }
    let labels = predict_labels(&model.logits(batch)?, stream);
    let hits = labels.iter().zip(batch.labels()).filter(|(a, b)| a == b).count();
    Ok(ProbEstimate::from_hits(hits as u64, batch.len() as u64))
}

/// Small-noise accuracy for each true class in one environment: 1 when the
/// true class has the strictly largest score, `1/(N+1)` when it ties with
/// `N` others at the top, 0 otherwise.
pub fn conditional_accuracy_analytic(
    coeffs: &EffectiveCoeffs,
    transforms: &TransformSet,
    spec: &FeatureSpec,
) -> Result<Vec<f64>> {
    if coeffs.c.len() != spec.n_features() || coeffs.d_v != spec.d_v() || transforms.d_s() != spec.d_s() {
        return Err(Error::Mismatch("coefficients or transforms do not match the feature spec".into()));
    }
    let k = spec.k();
    let tol = 1e-9 * coeffs.c.iter().map(|c| c.abs()).sum::<f64>().max(1.0);
    let mut scores = vec![0.0; k];
    Ok((0..k)
        .map(|class| {
            scores.iter_mut().for_each(|s| *s = 0.0);
            for (f, &c) in coeffs.c.iter().enumerate() {
                if c != 0.0 {
                    scores[transforms.image(f, class)] += c;
                }
            }
            tie_accuracy(&scores, class, tol)
        })
        .collect())
}

fn tie_accuracy(scores: &[f64], truth: usize, tol: f64) -> f64 {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if scores[truth] < best - tol {
        return 0.0;
    }
    let at_top = scores.iter().filter(|&&s| s >= best - tol).count();
    1.0 / at_top as f64
}

/// How each environment is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum OodMode {
    /// Small-noise limit via effective coefficients.
    Analytic,
    /// Draw `n_per_env` noisy samples per environment.
    Sampled { n_per_env: usize },
}

/// Per-environment results for a set of predictors evaluated on shared
/// environments (and, in sampled mode, shared batches).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiEval {
    /// `[env][predictor]` accuracy.
    pub per_env: Vec<Vec<f64>>,
    /// `[env][predictor][class]` accuracy.
    pub per_class: Vec<Vec<Vec<f64>>>,
    /// `[env][triple]` group counts, sampled mode only.
    pub groups: Vec<Vec<GroupCounts>>,
    /// `[env][predictor]` (mean confidence, mean margin), sampled mode only.
    pub confidence: Vec<Vec<(f64, f64)>>,
}

impl MultiEval {
    pub fn n_env(&self) -> usize {
        self.per_env.len()
    }

    pub fn estimate(&self, predictor: usize) -> ProbEstimate {
        let v: Vec<f64> = self.per_env.iter().map(|row| row[predictor]).collect();
        ProbEstimate::from_values(&v)
    }

    pub fn per_class_mean(&self, predictor: usize) -> Vec<f64> {
        let k = self.per_class.first().map_or(0, |e| e[predictor].len());
        (0..k)
            .map(|c| kahan_sum(self.per_class.iter().map(|e| e[predictor][c])) / self.n_env() as f64)
            .collect()
    }

    /// Group counts summed over environments.
    pub fn total_groups(&self, triple: usize) -> Option<GroupCounts> {
        let mut it = self.groups.iter().map(|e| e[triple]);
        let first = it.next()?;
        Some(it.fold(first, |a, b| a.merge(&b)))
    }

    pub fn mean_confidence(&self, predictor: usize) -> Option<(f64, f64)> {
        if self.confidence.is_empty() {
            return None;
        }
        let n = self.confidence.len() as f64;
        Some((
            kahan_sum(self.confidence.iter().map(|e| e[predictor].0)) / n,
            kahan_sum(self.confidence.iter().map(|e| e[predictor].1)) / n,
        ))
    }
}

/// Features used by any predictor, grouped by their weight signature
/// across all masks. Only these are sampled.
fn feature_groups(preds: &[&dyn Predictor], n_features: usize) -> Vec<Vec<usize>> {
    let masks: Vec<_> = preds.iter().flat_map(|p| p.masks()).collect();
    let mut groups: Vec<(Vec<u64>, Vec<usize>)> = Vec::new();
    for f in 0..n_features {
        let sig: Vec<u64> = masks.iter().map(|m| m.weights()[f].to_bits()).collect();
        if sig.iter().all(|&b| f64::from_bits(b) == 0.0) {
            continue;
        }
        match groups.iter_mut().find(|(s, _)| *s == sig) {
            Some((_, members)) => members.push(f),
            None => groups.push((sig, vec![f])),
        }
    }
    groups.into_iter().map(|(_, m)| m).collect()
}

/// Evaluates `preds` on `n_env` environments drawn from `law`. Environment
/// `e` uses child stream `e` of `stream`, so results do not depend on how
/// many threads run the loop. `triples` lists `(model1, model2, ensemble)`
/// predictor indices whose correctness groups are counted (sampled mode).
pub fn evaluate_environments(
    preds: &[&dyn Predictor],
    spec: &FeatureSpec,
    law: EnvironmentLaw,
    n_env: usize,
    mode: OodMode,
    stream: &RngStream,
    triples: &[(usize, usize, usize)],
) -> Result<MultiEval> {
    if n_env == 0 {
        return Err(Error::Domain("need at least one environment".into()));
    }
    if let Some(&(a, b, c)) = triples.iter().find(|t| t.0.max(t.1).max(t.2) >= preds.len()) {
        return Err(Error::Dimension(format!("group triple ({a}, {b}, {c}) out of range")));
    }
    let k = spec.k();
    let coeffs = match mode {
        OodMode::Analytic => Some(preds.iter().map(|p| p.effective_coeffs()).collect::<Result<Vec<_>>>()?),
        OodMode::Sampled { n_per_env } => {
            if n_per_env == 0 {
                return Err(Error::Domain("n_per_env must be at least 1".into()));
            }
            None
        }
    };
    let groups = feature_groups(preds, spec.n_features());

    struct EnvResult {
        acc: Vec<f64>,
        per_class: Vec<Vec<f64>>,
        groups: Vec<GroupCounts>,
        confidence: Vec<(f64, f64)>,
    }

    let run_env = |e: usize| -> Result<EnvResult> {
        let root = stream.child(e as u64);
        let env = sample_environment(spec, law, &mut root.child(0));
        match (&coeffs, mode) {
            (Some(coeffs), _) => {
                let per_class = coeffs
                    .iter()
                    .map(|c| conditional_accuracy_analytic(c, &env, spec))
                    .collect::<Result<Vec<_>>>()?;
                let acc = per_class.iter().map(|pc| pc.iter().sum::<f64>() / k as f64).collect();
                Ok(EnvResult {
                    acc,
                    per_class,
                    groups: Vec::new(),
                    confidence: Vec::new(),
                })
            }
            (None, OodMode::Sampled { n_per_env }) => {
                let batch = sample_batch_grouped(spec, &env, &groups, n_per_env, &mut root.child(1))?;
                let mut ties = root.child(2);
                let labels = batch.labels();
                let mut preds_out = Vec::with_capacity(preds.len());
                let mut confidence = Vec::with_capacity(preds.len());
                for p in preds {
                    let logits = p.logits(&batch)?;
                    let stats = confidence_margin(&logits, labels, None)?;
                    confidence.push((stats.mean_confidence, stats.mean_margin));
                    preds_out.push(predict_labels(&logits, &mut ties));
                }
                let mut per_class = vec![vec![0.0; k]; preds.len()];
                let mut class_n = vec![0usize; k];
                labels.iter().for_each(|&y| class_n[y] += 1);
                let acc = preds_out
                    .iter()
                    .zip(per_class.iter_mut())
                    .map(|(pl, pc)| {
                        let mut hits = 0usize;
                        for (&p, &y) in pl.iter().zip(labels) {
                            if p == y {
                                hits += 1;
                                pc[y] += 1.0;
                            }
                        }
                        pc.iter_mut().zip(&class_n).for_each(|(v, &n)| *v = if n > 0 { *v / n as f64 } else { f64::NAN });
                        hits as f64 / labels.len() as f64
                    })
                    .collect();
                let groups = triples
                    .iter()
                    .map(|&(a, b, c)| group_decomposition(&preds_out[a], &preds_out[b], &preds_out[c], labels))
                    .collect::<Result<Vec<_>>>()?;
                Ok(EnvResult {
                    acc,
                    per_class,
                    groups,
                    confidence,
                })
            }
            (None, OodMode::Analytic) => unreachable!(),
        }
    };

    let results = (0..n_env).into_par_iter().map(run_env).collect::<Result<Vec<_>>>()?;
    let mut out = MultiEval {
        per_env: Vec::with_capacity(n_env),
        per_class: Vec::with_capacity(n_env),
        groups: Vec::new(),
        confidence: Vec::new(),
    };
    for r in results {
        out.per_env.push(r.acc);
        out.per_class.push(r.per_class);
        if matches!(mode, OodMode::Sampled { .. }) {
            out.groups.push(r.groups);
            out.confidence.push(r.confidence);
        }
    }
    Ok(out)
}

/// Expected OOD accuracy: the mean over `n_env` random environments of the
/// accuracy in each environment, with the standard error across environments.
pub fn ood_accuracy_mc(
    model: &dyn Predictor,
    spec: &FeatureSpec,
    law: EnvironmentLaw,
    n_env: usize,
    mode: OodMode,
    stream: &RngStream,
) -> Result<ProbEstimate> {
    Ok(evaluate_environments(&[model], spec, law, n_env, mode, stream, &[])?.estimate(0))
}

/// Minimum over all environments of the small-noise accuracy. For every
/// class the adversary sends all spurious features to one wrong class, so
/// the answer depends only on invariant versus spurious coefficient mass.
pub fn worst_case_accuracy(coeffs: &EffectiveCoeffs, spec: &FeatureSpec) -> Result<f64> {
    if coeffs.c.len() != spec.n_features() || coeffs.d_v != spec.d_v() {
        return Err(Error::Mismatch("coefficients do not match the feature spec".into()));
    }
    let inv = coeffs.invariant_mass();
    let spur = coeffs.spurious_mass();
    let tol = 1e-9 * (inv + spur).max(1.0);
    Ok(if inv <= tol && spur <= tol {
        1.0 / spec.k() as f64
    } else if inv > spur + tol {
        1.0
    } else if (inv - spur).abs() <= tol {
        0.5
    } else {
        0.0
    })
}

/// Counts of the eight (model1 correct, model2 correct, ensemble correct)
/// groups, indexed `4·m1 + 2·m2 + ens`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub counts: [u64; 8],
    pub n: u64,
}

/// Which groups an improvement figure is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupFamily {
    /// Both individuals agree on correctness.
    TtFf,
    /// Individuals disagree.
    TfFt,
    All,
}

impl GroupCounts {
    pub fn get(&self, m1: bool, m2: bool, ens: bool) -> u64 {
        self.counts[(m1 as usize) << 2 | (m2 as usize) << 1 | ens as usize]
    }

    /// Both individuals wrong, ensemble right.
    pub fn fft(&self) -> u64 {
        self.get(false, false, true)
    }

    /// Both individuals right, ensemble wrong.
    pub fn ttf(&self) -> u64 {
        self.get(true, true, false)
    }

    /// `(FFT − TTF) / n`.
    pub fn fft_ratio(&self) -> f64 {
        (self.fft() as f64 - self.ttf() as f64) / self.n as f64
    }

    /// Correct count of the ensemble minus the better individual on the
    /// family, over the full dataset size.
    pub fn improve_contri(&self, family: GroupFamily) -> f64 {
        let keep = |m1: bool, m2: bool| match family {
            GroupFamily::TtFf => m1 == m2,
            GroupFamily::TfFt => m1 != m2,
            GroupFamily::All => true,
        };
        let (mut c1, mut c2, mut ce) = (0u64, 0u64, 0u64);
        for idx in 0..8 {
            let (m1, m2, e) = (idx & 4 != 0, idx & 2 != 0, idx & 1 != 0);
            if !keep(m1, m2) {
                continue;
            }
            let n = self.counts[idx];
            c1 += if m1 { n } else { 0 };
            c2 += if m2 { n } else { 0 };
            ce += if e { n } else { 0 };
        }
        (ce as f64 - c1.max(c2) as f64) / self.n as f64
    }

    pub fn merge(&self, other: &Self) -> Self {
        let mut counts = self.counts;
        counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Self {
            counts,
            n: self.n + other.n,
        }
    }
}

pub fn group_decomposition(
    preds1: &[usize],
    preds2: &[usize],
    preds_ens: &[usize],
    labels: &[usize],
) -> Result<GroupCounts> {
    let n = labels.len();
    if preds1.len() != n || preds2.len() != n || preds_ens.len() != n {
        return Err(Error::Mismatch(format!(
            "prediction lengths {}, {}, {} vs {n} labels",
            preds1.len(),
            preds2.len(),
            preds_ens.len()
        )));
    }
    let mut counts = [0u64; 8];
    for i in 0..n {
        let y = labels[i];
        let idx = ((preds1[i] == y) as usize) << 2 | ((preds2[i] == y) as usize) << 1 | (preds_ens[i] == y) as usize;
        counts[idx] += 1;
    }
    Ok(GroupCounts { counts, n: n as u64 })
}

/// Per-sample group index `4·m1 + 2·m2 + ens`.
pub fn group_labels(preds1: &[usize], preds2: &[usize], preds_ens: &[usize], labels: &[usize]) -> Vec<u8> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| ((preds1[i] == y) as u8) << 2 | ((preds2[i] == y) as u8) << 1 | (preds_ens[i] == y) as u8)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceStats {
    /// Mean of the largest softmax probability.
    pub mean_confidence: f64,
    /// Mean of `prob(true) − max prob(other)`.
    pub mean_margin: f64,
    /// Mean margin per correctness group (`None` where the group is empty).
    pub group_margins: Option<[Option<f64>; 8]>,
}

pub fn confidence_margin(logits: &Logits, labels: &[usize], groups: Option<&[u8]>) -> Result<ConfidenceStats> {
    let n = logits.len();
    if labels.len() != n || groups.is_some_and(|g| g.len() != n) {
        return Err(Error::Mismatch("logits, labels and groups differ in length".into()));
    }
    if n == 0 {
        return Err(Error::Domain("no samples".into()));
    }
    let k = logits.k();
    let mut probs = vec![0.0; k];
    let mut conf = Vec::with_capacity(n);
    let mut margin = Vec::with_capacity(n);
    for i in 0..n {
        let row = logits.row(i);
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        probs.iter_mut().zip(row).for_each(|(p, &l)| *p = (l - top).exp());
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        conf.push(probs.iter().copied().fold(0.0, f64::max));
        let y = labels[i];
        let other = probs
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != y)
            .map(|(_, &p)| p)
            .fold(0.0, f64::max);
        margin.push(probs[y] - other);
    }
    let group_margins = groups.map(|g| {
        let mut out = [None; 8];
        for (gi, slot) in out.iter_mut().enumerate() {
            let vals: Vec<f64> = margin.iter().zip(g).filter(|(_, &gg)| gg as usize == gi).map(|(m, _)| *m).collect();
            if !vals.is_empty() {
                *slot = Some(kahan_sum(vals.iter().copied()) / vals.len() as f64);
            }
        }
        out
    });
    Ok(ConfidenceStats {
        mean_confidence: kahan_sum(conf) / n as f64,
        mean_margin: kahan_sum(margin) / n as f64,
        group_margins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImproveContri {
    pub tt_ff: f64,
    pub tf_ft: f64,
    pub all: f64,
}

impl From<&GroupCounts> for ImproveContri {
    fn from(g: &GroupCounts) -> Self {
        Self {
            tt_ff: g.improve_contri(GroupFamily::TtFf),
            tf_ft: g.improve_contri(GroupFamily::TfFt),
            all: g.improve_contri(GroupFamily::All),
        }
    }
}

/// Evaluation summary of one predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub accuracy: ProbEstimate,
    pub per_class: Vec<f64>,
    pub worst_case: Option<f64>,
    pub group_counts: Option<GroupCounts>,
    /// `(FFT − TTF) / n`; raw counts are in `group_counts`.
    pub fft_ratio: Option<f64>,
    pub improve_contri: Option<ImproveContri>,
    pub mean_confidence: Option<f64>,
    pub mean_margin: Option<f64>,
    /// Small-noise bound attached to analytic results.
    pub epsilon: Option<f64>,
}

impl EvalReport {
    pub const CSV_HEADER: [&'static str; 14] = [
        "name",
        "accuracy",
        "stderr",
        "n_draws",
        "worst_case",
        "fft",
        "ttf",
        "fft_ratio",
        "improve_tt_ff",
        "improve_tf_ft",
        "improve_all",
        "mean_confidence",
        "mean_margin",
        "epsilon",
    ];

    /// Values in `CSV_HEADER` order; absent values are empty strings.
    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
        let optu = |v: Option<u64>| v.map_or_else(String::new, |x| x.to_string());
        vec![
            self.name.clone(),
            format!("{}", self.accuracy.value),
            format!("{}", self.accuracy.stderr),
            self.accuracy.n_draws.to_string(),
            opt(self.worst_case),
            optu(self.group_counts.map(|g| g.fft())),
            optu(self.group_counts.map(|g| g.ttf())),
            opt(self.fft_ratio),
            opt(self.improve_contri.map(|c| c.tt_ff)),
            opt(self.improve_contri.map(|c| c.tf_ft)),
            opt(self.improve_contri.map(|c| c.all)),
            opt(self.mean_confidence),
            opt(self.mean_margin),
            opt(self.epsilon),
        ]
    }
}
