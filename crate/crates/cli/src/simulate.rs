use serde::{Deserialize, Serialize};
use sfd_core::ensembles::{ose, wse, wse_imbalanced};
use sfd_core::evaluation::{evaluate_environments, worst_case_accuracy, EvalReport, ImproveContri, OodMode};
use sfd_core::generative::{make_feature_spec, EnvironmentLaw};
use sfd_core::models::{closed_form_classifier, Predictor};
use sfd_core::numerics::{epsilon_bound, BankMode, RngStream};
use sfd_core::theory::ModelConfig;

use crate::config::SimulateConfig;
use crate::error::CliError;
use crate::table::{num, opt_num, Table};

/// Full result of one simulated two-model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub example: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub sigma: f64,
    pub n_env: usize,
    pub mode: OodMode,
    pub bank: BankMode,
    pub reports: Vec<EvalReport>,
}

impl SimulationReport {
    pub fn get(&self, name: &str) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.name == name)
    }
}

/// Evaluates both closed-form individuals, their output- and weight-space
/// ensembles, and any imbalanced ensembles over `n_env` environments.
/// `index` separates the random streams of configurations sharing a seed.
pub fn run_simulation(
    name: &str,
    config: &ModelConfig,
    sim: &SimulateConfig,
    seed: u64,
    index: u64,
) -> Result<SimulationReport, CliError> {
    let config = config.validated()?;
    let root = RngStream::new(seed, 0).child(index);
    let (d_v, d_s) = config.world_dims();
    let spec = make_feature_spec(config.k, d_v, d_s, sim.sigma, sim.bank, &mut root.child(0))?;
    let (mask1, mask2) = config.masks(&spec)?;
    let m1 = closed_form_classifier(&spec, &mask1, false)?;
    let m2 = closed_form_classifier(&spec, &mask2, false)?;
    let e_ose = ose(&m1, &m2)?;
    let e_wse = wse(&m1, &m2)?;
    let imbalanced = sim
        .lambdas
        .iter()
        .map(|&l| wse_imbalanced(&m1, &m2, l))
        .collect::<sfd_core::Result<Vec<_>>>()?;

    let mut names = vec!["model1".to_string(), "model2".into(), "ose".into(), "wse".into()];
    names.extend(sim.lambdas.iter().map(|l| format!("wse_lambda={l}")));
    let mut preds: Vec<&dyn Predictor> = vec![&m1, &m2, &e_ose, &e_wse];
    preds.extend(imbalanced.iter().map(|e| e as &dyn Predictor));
    let triples = [(0, 1, 2), (0, 1, 3)];

    let law = EnvironmentLaw::new(config.p)?;
    let eval = evaluate_environments(&preds, &spec, law, sim.n_env, sim.mode, &root.child(1), &triples)?;

    let mut reports = Vec::with_capacity(preds.len());
    for (i, (pred, name)) in preds.iter().zip(&names).enumerate() {
        let coeffs = pred.effective_coeffs()?;
        let groups = triples.iter().position(|t| t.2 == i).and_then(|t| eval.total_groups(t));
        let confidence = eval.mean_confidence(i);
        let epsilon = match sim.mode {
            OodMode::Analytic => Some(epsilon_bound(sim.sigma, coeffs.n_v_eff() + coeffs.n_s_eff(), config.k)?),
            OodMode::Sampled { .. } => None,
        };
        reports.push(EvalReport {
            name: name.clone(),
            accuracy: eval.estimate(i),
            per_class: eval.per_class_mean(i),
            worst_case: Some(worst_case_accuracy(&coeffs, &spec)?),
            group_counts: groups,
            fft_ratio: groups.map(|g| g.fft_ratio()),
            improve_contri: groups.as_ref().map(ImproveContri::from),
            mean_confidence: confidence.map(|c| c.0),
            mean_margin: confidence.map(|c| c.1),
            epsilon,
        });
    }
    Ok(SimulationReport {
        example: name.to_string(),
        config,
        seed,
        sigma: sim.sigma,
        n_env: sim.n_env,
        mode: sim.mode,
        bank: sim.bank,
        reports,
    })
}

pub fn summary_table(reports: &[SimulationReport]) -> Table {
    let mut header = vec!["example"];
    header.extend(EvalReport::CSV_HEADER);
    let mut t = Table::new(header);
    for r in reports {
        for e in &r.reports {
            let g = e.group_counts;
            let ic = e.improve_contri;
            t.push(vec![
                r.example.clone(),
                e.name.clone(),
                num(e.accuracy.value),
                num(e.accuracy.stderr),
                e.accuracy.n_draws.to_string(),
                opt_num(e.worst_case),
                g.map_or_else(String::new, |g| g.fft().to_string()),
                g.map_or_else(String::new, |g| g.ttf().to_string()),
                opt_num(e.fft_ratio),
                opt_num(ic.map(|c| c.tt_ff)),
                opt_num(ic.map(|c| c.tf_ft)),
                opt_num(ic.map(|c| c.all)),
                opt_num(e.mean_confidence),
                opt_num(e.mean_margin),
                e.epsilon.map_or_else(String::new, |x| format!("{x:.3e}")),
            ]);
        }
    }
    t
}
