//! Experiment runner behind the `sfd` binary. Each command reads an
//! [`ExperimentConfig`], writes CSV/JSON/text artifacts under `out_dir`, and
//! returns the human-readable table it printed.

pub mod config;
pub mod error;
pub mod mnist;
pub mod report;
pub mod simulate;
pub mod table;
pub mod theory_cmd;

pub use config::ExperimentConfig;
pub use error::CliError;

use simulate::{run_simulation, summary_table, SimulationReport};
use theory_cmd::{run_theory, theory_table, TheoryRow};

pub fn theory_command(cfg: &ExperimentConfig) -> Result<(String, Vec<TheoryRow>), CliError> {
    let rows = run_theory(&cfg.theory)?;
    let table = theory_table(&rows);
    table.write(&cfg.out_dir.join("theory"), "theory")?;
    Ok((table.aligned(), rows))
}

pub fn simulate_command(cfg: &ExperimentConfig) -> Result<(String, Vec<SimulationReport>), CliError> {
    let dir = cfg.out_dir.join("simulate");
    std::fs::create_dir_all(&dir)?;
    let mut reports = Vec::new();
    for (name, mc) in cfg.simulation_targets()? {
        let r = run_simulation(&name, &mc, &cfg.simulate, cfg.seed, stream_index(&name))?;
        std::fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(&r)?)?;
        reports.push(r);
    }
    let table = summary_table(&reports);
    table.write(&dir, "summary")?;
    Ok((table.aligned(), reports))
}

/// Stable stream index per configuration name, so a configuration draws
/// the same randomness whichever subset of configurations is run.
fn stream_index(name: &str) -> u64 {
    match sfd_core::theory::EXAMPLES.iter().position(|e| *e == name) {
        Some(i) => i as u64,
        None => 100 + name.trim_start_matches("custom-").parse::<u64>().unwrap_or(0),
    }
}
