use std::path::{Path, PathBuf};

use latent_dag::ingest::write_study;
use latent_dag::synth::gen_study;
use serde::Serialize;
use tracing::info;

use super::write_config_echo;
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::truth::write_truth;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSummary {
    pub out: PathBuf,
    pub p: usize,
    pub environments: usize,
    pub true_edges: usize,
}

/// Simulates a study from `cfg.synth` and writes it, with its truth, to `out`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> CliResult<SimulateSummary> {
    cfg.validate()?;
    let study = gen_study(&cfg.synth, cfg.seed)?;
    let echo = serde_json::to_value(cfg).expect("config serializes");
    write_study(out, &study.dataset, Some(cfg.seed), Some(echo))?;
    write_truth(out, &study)?;
    write_config_echo(out, cfg)?;
    let summary = SimulateSummary {
        out: out.to_path_buf(),
        p: study.dataset.p(),
        environments: study.dataset.environments.len(),
        true_edges: study.spec.dag.edge_count(),
    };
    info!(out = %out.display(), p = summary.p, edges = summary.true_edges, "study written");
    Ok(summary)
}
