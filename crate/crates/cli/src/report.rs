//! Side-by-side tables assembled from the other commands' outputs.

use std::path::Path;

use sfd_core::theory::{prop23_values, ModelConfig};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::mnist::{EvalRow, RunDir};
use crate::simulate::SimulationReport;
use crate::table::{num, Table};
use crate::theory_cmd::{exact_value, formula_value, KINDS};

const PREDICTORS: [&str; 4] = ["model1", "model2", "wse", "ose"];

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, CliError> {
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Theory versus simulation for each configured example. Simulation rows
/// come from `simulate/<example>.json`; run `simulate` first to fill them.
pub fn simulation_table(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let mut t = Table::new(["example", "source", "model1", "model2", "wse", "ose"]);
    for name in &cfg.simulate.examples {
        let c = ModelConfig::example(name, cfg.simulate.p)?;
        let sim: Option<SimulationReport> = read_json(&cfg.out_dir.join("simulate").join(format!("{name}.json")))?;
        if let Some(sim) = sim {
            let mut row = vec![name.clone(), "simulation".into()];
            row.extend(PREDICTORS.iter().map(|p| sim.get(p).map_or_else(String::new, |r| num(r.accuracy.value))));
            t.push(row);
        }
        let order = [KINDS[0], KINDS[1], KINDS[3], KINDS[2]];
        let mut theory = vec![name.clone(), "theory".into()];
        let mut exact = vec![name.clone(), "exact".into()];
        for kind in order {
            let v = match formula_value(name, &c, kind)? {
                Some(v) => v,
                None => prop23_values(&c, kind)?.value,
            };
            theory.push(num(v));
            exact.push(exact_value(&c, kind).map(num).unwrap_or_default());
        }
        t.push(theory);
        t.push(exact);
    }
    Ok(t)
}

/// Mean accuracy per shift probability from a finished `mnist eval`.
pub fn ensemble_table(cfg: &ExperimentConfig) -> Result<Option<Table>, CliError> {
    let run = RunDir::new(cfg);
    let Some(rows) = read_json::<Vec<EvalRow>>(&run.0.join("eval.json"))? else {
        return Ok(None);
    };
    let mut t = Table::new(["p", "model1", "model2", "ensemble", "gain"]);
    for &p in &cfg.mnist.p_grid {
        let sel: Vec<&EvalRow> = rows.iter().filter(|r| r.p == p).collect();
        if sel.is_empty() {
            continue;
        }
        let n = sel.len() as f64;
        let mean = |f: fn(&EvalRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
        t.push(vec![
            format!("{p:.2}"),
            num(mean(|r| r.model1)),
            num(mean(|r| r.model2)),
            num(mean(|r| r.ensemble)),
            num(mean(|r| r.gain())),
        ]);
    }
    Ok(Some(t))
}

pub fn run_report(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let dir = cfg.out_dir.join("report");
    let sim = simulation_table(cfg)?;
    sim.write(&dir, "simulation_table")?;
    let mut text = sim.aligned();
    if let Some(t) = ensemble_table(cfg)? {
        t.write(&dir, "ensemble_table")?;
        text.push('\n');
        text.push_str(&t.aligned());
    }
    Ok(text)
}
