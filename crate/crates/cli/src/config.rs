//! Run configuration: one TOML file with a block per concern.

use std::path::Path;

use latent_dag::eval::KsOptions;
use latent_dag::pipeline::FitOptions;
use latent_dag::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Descending threshold grid `start, start − step, …` down to `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for TauRange {
    fn default() -> Self {
        Self {
            start: 0.15,
            stop: 0.001,
            step: 0.001,
        }
    }
}

impl TauRange {
    pub fn values(&self) -> Vec<f64> {
        // integer stepping avoids accumulated rounding in the grid
        let count = ((self.start - self.stop) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|k| {
                let t = self.start - k as f64 * self.step;
                (t * 1e12).round() / 1e12
            })
            .collect()
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        let num = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| {
                CliError::Usage(format!("'{s}' in tau range '{text}' is not a number"))
            })
        };
        match parts.as_slice() {
            [a, b, c] => Ok(Self {
                start: num(a)?,
                stop: num(b)?,
                step: num(c)?,
            }),
            _ => Err(CliError::Usage(format!(
                "tau range '{text}' must look like start:stop:step"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tau: TauRange,
    /// Explicit grid; overrides `tau` when non-empty.
    pub tau_grid: Vec<f64>,
    pub ks: KsOptions,
}

impl EvalConfig {
    pub fn taus(&self) -> Vec<f64> {
        if self.tau_grid.is_empty() {
            self.tau.values()
        } else {
            self.tau_grid.clone()
        }
    }
}

/// Cartesian grid of study settings; every cell runs `replicates` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub degrees: Vec<f64>,
    pub alphas: Vec<f64>,
    pub n_interventions: Vec<usize>,
    pub replicates: usize,
    /// Also write each run's artifacts under `runs/`.
    pub keep_runs: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            degrees: vec![SynthConfig::DEGREE_LOW],
            alphas: vec![-2.0, -4.0],
            n_interventions: vec![100, 200, 500],
            replicates: 10,
            keep_runs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub synth: SynthConfig,
    pub fit: FitOptions,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            synth: SynthConfig::default(),
            fit: FitOptions::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "config schema version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.synth.validate()?;
        self.fit.solver.validate()?;
        if self.fit.solver.lambda_grid.is_empty() {
            return Err(CliError::Usage("fit.solver.lambda_grid is empty".into()));
        }
        let tau = &self.eval.tau;
        if self.eval.tau_grid.is_empty()
            && !(tau.step > 0.0 && tau.start >= tau.stop && tau.stop >= 0.0)
        {
            return Err(CliError::Usage(format!(
                "tau range {}:{}:{} must satisfy start >= stop >= 0 and step > 0",
                tau.start, tau.stop, tau.step
            )));
        }
        if let Some(t) = self.eval.tau_grid.iter().find(|t| !(**t >= 0.0)) {
            return Err(CliError::Usage(format!("tau grid value {t} is negative")));
        }
        let sw = &self.sweep;
        if sw.replicates == 0
            || sw.degrees.is_empty()
            || sw.alphas.is_empty()
            || sw.n_interventions.is_empty()
        {
            return Err(CliError::Usage(
                "sweep needs at least one value per axis and one replicate".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tau_grid_matches_protocol() {
        let t = TauRange::default().values();
        assert_eq!(t.len(), 150);
        assert_eq!(t[0], 0.15);
        assert_eq!(t[1], 0.149);
        assert_eq!(*t.last().unwrap(), 0.001);
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        back.validate().unwrap();
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig = toml::from_str(
            "seed = 7\n[synth]\np = 20\n[fit.solver]\nlambda_grid = [0.1, 0.05]\n[fit.solver.acyclicity]\nform = \"trace_exp\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.synth.p, 20);
        assert_eq!(cfg.synth.n_control, 5000);
        assert_eq!(cfg.fit.solver.lambda_grid, vec![0.1, 0.05]);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[synth]\npp = 3\n").is_err());
        let cfg: RunConfig = toml::from_str("schema_version = 9\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tau_range_parsing() {
        let r = TauRange::parse("0.1:0.05:0.01").unwrap();
        assert_eq!(r.values(), vec![0.1, 0.09, 0.08, 0.07, 0.06, 0.05]);
        assert!(TauRange::parse("0.1:x:0.01").is_err());
    }
}
