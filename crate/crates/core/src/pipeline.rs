//! End-to-end estimation: measurement layer, latent means, `B̂`, then `Â`.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::dataset::{InterventionDesign, StudyDataset};
use crate::error::Result;
use crate::glm::{fit_covariates, CovariateFit};
use crate::moments::{
    assemble_b_hat, estimate_all, ContrastRule, LatentMeanEstimates, MixingEstimate, SecondMoment,
};
use crate::solver::{select_lambda, Selection, SolverConfig};
use crate::synth::{population_means, ScmSpec};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub second_moment: SecondMoment,
    pub contrast: ContrastRule,
    pub solver: SolverConfig,
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StageTimings {
    pub covariates: f64,
    pub moments: f64,
    pub assemble: f64,
    pub selection: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutput {
    pub covariate_fit: Option<CovariateFit>,
    pub estimates: LatentMeanEstimates,
    pub mixing: MixingEstimate,
    pub selection: Selection,
    pub timings: StageTimings,
}

/// Runs every estimation step on an observed dataset.
pub fn fit_dataset(dataset: &StudyDataset, opts: &FitOptions) -> Result<FitOutput> {
    dataset.validate()?;
    opts.solver.validate()?;
    let mut timings = StageTimings::default();
    let start = Instant::now();
    let covariate_fit = if dataset.q() > 0 {
        Some(fit_covariates(dataset)?)
    } else {
        None
    };
    timings.covariates = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let estimates = estimate_all(dataset, covariate_fit.as_ref(), opts.second_moment)?;
    timings.moments = start.elapsed().as_secs_f64();
    fit_estimates(estimates, covariate_fit, opts, timings)
}

/// Noiseless variant: exact latent means of `spec` under `design`.
pub fn fit_population(
    spec: &ScmSpec,
    design: &InterventionDesign,
    opts: &FitOptions,
) -> Result<FitOutput> {
    opts.solver.validate()?;
    let means = population_means(spec, design)?;
    let targets: Vec<usize> = design.interventions.iter().map(|iv| iv.target).collect();
    let estimates = LatentMeanEstimates::from_population(&means, &targets)?;
    fit_estimates(estimates, None, opts, StageTimings::default())
}

fn fit_estimates(
    estimates: LatentMeanEstimates,
    covariate_fit: Option<CovariateFit>,
    opts: &FitOptions,
    mut timings: StageTimings,
) -> Result<FitOutput> {
    let start = Instant::now();
    let mixing = assemble_b_hat(&estimates, &opts.contrast)?;
    timings.assemble = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let selection = select_lambda(&mixing.b_hat, &opts.solver.lambda_grid, &opts.solver)?;
    timings.selection = start.elapsed().as_secs_f64();
    info!(
        lambda = selection.lambda,
        edges = selection.result.graph.len(),
        gap = selection.result.feasibility_gap,
        "model selected"
    );
    Ok(FitOutput {
        covariate_fit,
        estimates,
        mixing,
        selection,
        timings,
    })
}
