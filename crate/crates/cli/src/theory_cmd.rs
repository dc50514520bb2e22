use serde::Serialize;
use sfd_core::theory::{fp, g_exact, overlap_example_values, prop1_values, prop23_values, ModelConfig, PredictorKind};
use sfd_core::Error;

use crate::config::TheoryConfig;
use crate::error::CliError;
use crate::table::{num, Table};

pub const KINDS: [PredictorKind; 4] = [
    PredictorKind::Individual1,
    PredictorKind::Individual2,
    PredictorKind::Ose,
    PredictorKind::Wse,
];

pub fn kind_name(kind: PredictorKind) -> &'static str {
    match kind {
        PredictorKind::Individual1 => "model1",
        PredictorKind::Individual2 => "model2",
        PredictorKind::Ose => "ose",
        PredictorKind::Wse => "wse",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryRow {
    pub config: String,
    pub predictor: String,
    /// `formula` (closed-form polynomial), `g_exact` (multinomial
    /// enumeration) or `fp` (Gaussian approximation).
    pub method: String,
    pub value: f64,
    pub stderr: f64,
}

/// Exact small-noise OOD accuracy by enumeration.
pub fn exact_value(c: &ModelConfig, kind: PredictorKind) -> sfd_core::Result<f64> {
    match kind {
        PredictorKind::Individual1 => g_exact(c.n_v1, c.n_s1, 0, 0, 0.0, c.p, c.k),
        PredictorKind::Individual2 => g_exact(c.n_v2, c.n_s2, 0, 0, 0.0, c.p, c.k),
        PredictorKind::Ose => g_exact(c.n_v1 + c.n_v2, c.n_s1 + c.n_s2, c.n_vo, c.n_so, 2.0, c.p, c.k),
        PredictorKind::Wse => g_exact(c.n_v1 + c.n_v2, c.n_s1 + c.n_s2, c.n_vo, c.n_so, 4.0, c.p, c.k),
    }
}

/// Closed-form polynomial where one exists for the named example.
pub fn formula_value(example: &str, c: &ModelConfig, kind: PredictorKind) -> sfd_core::Result<Option<f64>> {
    if c.k != 3 {
        return Ok(None);
    }
    let (single, pair) = prop1_values(c.p)?;
    Ok(match (example, kind) {
        ("1-1" | "1-2", PredictorKind::Individual1 | PredictorKind::Individual2) => Some(single),
        ("1-1", _) => Some(pair),
        ("1-2", PredictorKind::Ose) => Some(overlap_example_values(c.p)?.ose),
        ("1-2", PredictorKind::Wse) => Some(overlap_example_values(c.p)?.wse),
        _ => None,
    })
}

pub fn run_theory(cfg: &TheoryConfig) -> Result<Vec<TheoryRow>, CliError> {
    let mut rows = Vec::new();
    for name in &cfg.examples {
        let c = ModelConfig { k: cfg.k, ..ModelConfig::example(name, cfg.p)? }.validated()?;
        for kind in KINDS {
            let mut push = |method: &str, value: f64, stderr: f64| {
                rows.push(TheoryRow {
                    config: name.clone(),
                    predictor: kind_name(kind).into(),
                    method: method.into(),
                    value,
                    stderr,
                })
            };
            if let Some(v) = formula_value(name, &c, kind)? {
                push("formula", v, 0.0);
            }
            match exact_value(&c, kind) {
                Ok(v) => push("g_exact", v, 0.0),
                Err(Error::EnumerationTooLarge { .. }) => {}
                Err(e) => return Err(e.into()),
            }
            let est = prop23_values(&c, kind)?;
            push("fp", est.value, est.stderr);
        }
    }
    for q in &cfg.fp {
        let est = fp(q.x, q.p, q.k)?;
        rows.push(TheoryRow {
            config: format!("x={} p={} k={}", q.x, q.p, q.k),
            predictor: String::new(),
            method: "fp".into(),
            value: est.value,
            stderr: est.stderr,
        });
    }
    Ok(rows)
}

pub fn theory_table(rows: &[TheoryRow]) -> Table {
    let mut t = Table::new(["config", "predictor", "method", "value", "stderr"]);
    for r in rows {
        t.push(vec![r.config.clone(), r.predictor.clone(), r.method.clone(), num(r.value), num(r.stderr)]);
    }
    t
}
