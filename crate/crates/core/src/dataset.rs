//! In-memory interventional count datasets.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Cells × genes count matrix.
pub type CountMatrix = DMatrix<u64>;

/// One environment: the control (no target) or a single-gene perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentData {
    pub id: String,
    /// Index of the perturbed gene; `None` for the control.
    pub target: Option<usize>,
    pub counts: CountMatrix,
    pub library_sizes: Vec<f64>,
    /// Cells × q covariates; q may be zero.
    pub covariates: Matrix,
}

impl EnvironmentData {
    pub fn n(&self) -> usize {
        self.counts.nrows()
    }

    pub fn is_control(&self) -> bool {
        self.target.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyDataset {
    pub gene_names: Vec<String>,
    pub covariate_names: Vec<String>,
    pub environments: Vec<EnvironmentData>,
}

impl StudyDataset {
    pub fn p(&self) -> usize {
        self.gene_names.len()
    }

    pub fn q(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn control_index(&self) -> Result<usize> {
        self.environments
            .iter()
            .position(|e| e.is_control())
            .ok_or(Error::MissingControl)
    }

    pub fn control(&self) -> Result<&EnvironmentData> {
        Ok(&self.environments[self.control_index()?])
    }

    /// Checks the structural invariants shared by every producer of datasets.
    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        let q = self.q();
        let controls = self.environments.iter().filter(|e| e.is_control()).count();
        if controls == 0 {
            return Err(Error::MissingControl);
        }
        if controls > 1 {
            return Err(Error::ManifestError(format!(
                "expected exactly one control environment, found {controls}"
            )));
        }
        for env in &self.environments {
            if env.counts.ncols() != p {
                return Err(Error::ShapeMismatch(format!(
                    "environment {} has {} genes, expected {p}",
                    env.id,
                    env.counts.ncols()
                )));
            }
            if env.library_sizes.len() != env.n() {
                return Err(Error::ShapeMismatch(format!(
                    "environment {} has {} library sizes for {} cells",
                    env.id,
                    env.library_sizes.len(),
                    env.n()
                )));
            }
            if env.covariates.nrows() != env.n() || env.covariates.ncols() != q {
                return Err(Error::ShapeMismatch(format!(
                    "environment {} covariates are {}x{}, expected {}x{q}",
                    env.id,
                    env.covariates.nrows(),
                    env.covariates.ncols(),
                    env.n()
                )));
            }
            if let Some(t) = env.target {
                if t >= p {
                    return Err(Error::InvalidNode { node: t, p });
                }
            }
            if let Some(bad) = env
                .library_sizes
                .iter()
                .find(|l| !(**l > 0.0) || !l.is_finite())
            {
                return Err(Error::InvalidParameter(format!(
                    "environment {} has nonpositive library size {bad}",
                    env.id
                )));
            }
        }
        Ok(())
    }

    /// Genes whose counts are zero in every cell of every environment.
    pub fn zero_genes(&self) -> Vec<usize> {
        (0..self.p())
            .filter(|&j| {
                self.environments
                    .iter()
                    .all(|e| e.counts.column(j).iter().all(|&x| x == 0))
            })
            .collect()
    }

    /// Keeps only the listed genes (in the given order), remapping targets.
    /// Environments whose target is dropped are removed.
    pub fn restrict_genes(&self, keep: &[usize]) -> Result<StudyDataset> {
        let p = self.p();
        let mut new_index = vec![None; p];
        for (k, &g) in keep.iter().enumerate() {
            if g >= p {
                return Err(Error::InvalidNode { node: g, p });
            }
            new_index[g] = Some(k);
        }
        let environments = self
            .environments
            .iter()
            .filter(|e| e.target.map_or(true, |t| new_index[t].is_some()))
            .map(|e| EnvironmentData {
                id: e.id.clone(),
                target: e.target.and_then(|t| new_index[t]),
                counts: e.counts.select_columns(keep.iter()),
                library_sizes: e.library_sizes.clone(),
                covariates: e.covariates.clone(),
            })
            .collect();
        Ok(StudyDataset {
            gene_names: keep.iter().map(|&g| self.gene_names[g].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
            environments,
        })
    }
}

/// A single perturbation: shift `shift` added to the intercept of `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub target: usize,
    pub shift: f64,
    pub n: usize,
}

/// Control size plus the list of one-sparse mean-shift environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionDesign {
    pub n_control: usize,
    pub interventions: Vec<Intervention>,
}

impl InterventionDesign {
    /// One environment per gene, all with the same shift and size.
    pub fn one_per_gene(p: usize, shift: f64, n_control: usize, n: usize) -> Self {
        Self {
            n_control,
            interventions: (0..p)
                .map(|target| Intervention { target, shift, n })
                .collect(),
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        for iv in &self.interventions {
            if iv.target >= p {
                return Err(Error::InvalidNode { node: iv.target, p });
            }
            if iv.shift == 0.0 || !iv.shift.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "intervention on gene {} has shift {}",
                    iv.target, iv.shift
                )));
            }
        }
        Ok(())
    }

    pub fn untargeted(&self, p: usize) -> Vec<usize> {
        let mut hit = vec![false; p];
        for iv in &self.interventions {
            if iv.target < p {
                hit[iv.target] = true;
            }
        }
        (0..p).filter(|&j| !hit[j]).collect()
    }
}
