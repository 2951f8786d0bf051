//! Generating truth of a simulated study, stored next to the dataset.

use std::path::Path;

use latent_dag::dag::WeightedDag;
use latent_dag::dataset::InterventionDesign;
use latent_dag::io::{read_json, write_edge_list, write_json, write_matrix_csv};
use latent_dag::synth::{ScmSpec, Study};
use latent_dag::Matrix;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::CliResult;

pub const TRUTH_DIR: &str = "truth";
pub const TRUTH_FILE: &str = "scm.json";

/// Row-major matrices so the file is self-describing JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub genes: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub eta0: Vec<f64>,
    pub sigma_e: Vec<Vec<f64>>,
    pub loadings: Vec<Vec<f64>>,
    pub design: InterventionDesign,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], ncols: usize) -> Matrix {
    Matrix::from_fn(r.len(), ncols, |i, j| r[i][j])
}

impl TruthFile {
    pub fn from_study(study: &Study) -> Self {
        Self {
            genes: study.dataset.gene_names.clone(),
            weights: rows(study.spec.dag.weights()),
            eta0: study.spec.eta0.iter().copied().collect(),
            sigma_e: rows(&study.spec.sigma_e),
            loadings: rows(&study.spec.loadings),
            design: study.design.clone(),
        }
    }

    pub fn spec(&self) -> CliResult<ScmSpec> {
        let p = self.genes.len();
        let k = self.loadings.first().map_or(0, Vec::len);
        Ok(ScmSpec {
            dag: WeightedDag::new(from_rows(&self.weights, p))?,
            eta0: DVector::from_vec(self.eta0.clone()),
            sigma_e: from_rows(&self.sigma_e, p),
            loadings: Matrix::from_fn(p, k, |i, j| self.loadings[i][j]),
        })
    }

    pub fn weights(&self) -> Matrix {
        from_rows(&self.weights, self.genes.len())
    }
}

/// Writes `truth/scm.json`, `truth/A.csv`, `truth/B.csv` and `truth/edges.csv`.
pub fn write_truth(dataset_dir: &Path, study: &Study) -> CliResult<()> {
    let dir = dataset_dir.join(TRUTH_DIR);
    let names = &study.dataset.gene_names;
    write_json(&dir.join(TRUTH_FILE), &TruthFile::from_study(study))?;
    let a = study.spec.dag.weights();
    write_matrix_csv(&dir.join("A.csv"), a, names)?;
    write_matrix_csv(
        &dir.join("B.csv"),
        study.spec.dag.mixing_matrix()?.matrix(),
        names,
    )?;
    write_edge_list(&dir.join("edges.csv"), a, names)?;
    Ok(())
}

pub fn read_truth(dataset_dir: &Path) -> CliResult<TruthFile> {
    Ok(read_json(&dataset_dir.join(TRUTH_DIR).join(TRUTH_FILE))?)
}
