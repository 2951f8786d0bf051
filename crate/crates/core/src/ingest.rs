//! Dataset directories: a JSON manifest plus per-environment CSV files.
//!
//! ```text
//! manifest.json
//! <env>/counts.csv     cells × genes, integer counts, header = gene names
//! <env>/libsize.csv    one column `libsize`
//! <env>/covariates.csv optional, header = covariate names
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::dataset::{CountMatrix, EnvironmentData, StudyDataset};
use crate::error::{Error, Result};
use crate::io::{csv_reader, csv_writer, parse_f64, read_json, write_json};
use crate::linalg::Matrix;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Control,
    Intervention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentEntry {
    pub id: String,
    pub role: Role,
    /// Target gene name; required for interventions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub counts: PathBuf,
    pub libsize: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<PathBuf>,
    /// Declared number of cells.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub genes: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
    pub environments: Vec<EnvironmentEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Free-form provenance, typically the generating configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::ManifestError(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.genes.is_empty() {
            return Err(Error::ManifestError("gene list is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.genes.iter().find(|g| !seen.insert(g.as_str())) {
            return Err(Error::ManifestError(format!("duplicate gene name '{dup}'")));
        }
        let controls = self
            .environments
            .iter()
            .filter(|e| e.role == Role::Control)
            .count();
        if controls == 0 {
            return Err(Error::MissingControl);
        }
        if controls > 1 {
            return Err(Error::ManifestError(format!(
                "expected exactly one control environment, found {controls}"
            )));
        }
        let mut ids = std::collections::HashSet::new();
        for env in &self.environments {
            if !ids.insert(env.id.as_str()) {
                return Err(Error::ManifestError(format!(
                    "duplicate environment id '{}'",
                    env.id
                )));
            }
            match (env.role, &env.target) {
                (Role::Control, Some(t)) => {
                    return Err(Error::ManifestError(format!(
                        "control environment '{}' has target '{t}'",
                        env.id
                    )))
                }
                (Role::Intervention, None) => {
                    return Err(Error::ManifestError(format!(
                        "intervention environment '{}' has no target",
                        env.id
                    )))
                }
                (Role::Intervention, Some(t)) if !self.genes.contains(t) => {
                    return Err(Error::ManifestError(format!(
                        "target '{t}' of environment '{}' is not a listed gene",
                        env.id
                    )))
                }
                _ => {}
            }
            if !self.covariates.is_empty() && env.covariates.is_none() {
                return Err(Error::ManifestError(format!(
                    "environment '{}' lacks a covariates file",
                    env.id
                )));
            }
        }
        Ok(())
    }
}

fn read_counts(path: &Path, genes: &[String]) -> Result<CountMatrix> {
    let mut r = csv_reader(path)?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header != genes {
        return Err(Error::ManifestError(format!(
            "{} header does not match the manifest gene list",
            path.display()
        )));
    }
    let p = genes.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let bad = |column: usize, reason: String| Error::DataError {
            path: path.to_path_buf(),
            row: i + 1,
            column,
            reason,
        };
        if rec.len() != p {
            return Err(bad(rec.len(), format!("expected {p} fields")));
        }
        for (j, f) in rec.iter().enumerate() {
            let v = match f.parse::<u64>() {
                Ok(v) => v,
                Err(_) => {
                    let x = f
                        .parse::<f64>()
                        .map_err(|_| bad(j + 1, format!("'{f}' is not a count")))?;
                    if x < 0.0 {
                        return Err(bad(j + 1, format!("negative count {f}")));
                    }
                    if x.fract() != 0.0 || !x.is_finite() {
                        return Err(bad(j + 1, format!("fractional count {f}")));
                    }
                    x as u64
                }
            };
            data.push(v);
        }
        rows += 1;
    }
    Ok(CountMatrix::from_row_slice(rows, p, &data))
}

fn read_column(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv_reader(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let f = rec.get(0).unwrap_or("");
        let v = parse_f64(path, i + 1, 1, f)?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::DataError {
                path: path.to_path_buf(),
                row: i + 1,
                column: 1,
                reason: format!("library size {f} is not strictly positive"),
            });
        }
        out.push(v);
    }
    Ok(out)
}

fn read_covariates(path: &Path, names: &[String]) -> Result<Matrix> {
    let (m, header) = crate::io::read_matrix_csv(path)?;
    if header != names {
        return Err(Error::ManifestError(format!(
            "{} header does not match the manifest covariate list",
            path.display()
        )));
    }
    Ok(m)
}

/// Loads and validates a dataset directory (or a path to its manifest).
pub fn load_study(path: &Path) -> Result<StudyDataset> {
    let (dir, manifest_path) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
            path.to_path_buf(),
        )
    };
    let manifest: DatasetManifest = read_json(&manifest_path).map_err(|e| match e {
        Error::Json { path, source } => {
            Error::ManifestError(format!("{}: {source}", path.display()))
        }
        other => other,
    })?;
    manifest.validate()?;

    let mut environments = Vec::with_capacity(manifest.environments.len());
    for entry in &manifest.environments {
        let counts_path = dir.join(&entry.counts);
        let counts = read_counts(&counts_path, &manifest.genes)?;
        let lib_path = dir.join(&entry.libsize);
        let library_sizes = read_column(&lib_path)?;
        if counts.nrows() != entry.n || library_sizes.len() != entry.n {
            return Err(Error::ManifestError(format!(
                "environment '{}' declares {} cells but files hold {} count rows and {} library sizes",
                entry.id,
                entry.n,
                counts.nrows(),
                library_sizes.len()
            )));
        }
        let covariates = match &entry.covariates {
            Some(c) => {
                let m = read_covariates(&dir.join(c), &manifest.covariates)?;
                if m.nrows() != entry.n {
                    return Err(Error::ManifestError(format!(
                        "environment '{}' covariates hold {} rows, expected {}",
                        entry.id,
                        m.nrows(),
                        entry.n
                    )));
                }
                m
            }
            None => Matrix::zeros(entry.n, manifest.covariates.len()),
        };
        let target = entry.target.as_ref().map(|t| {
            manifest
                .genes
                .iter()
                .position(|g| g == t)
                .expect("validated target")
        });
        environments.push(EnvironmentData {
            id: entry.id.clone(),
            target,
            counts,
            library_sizes,
            covariates,
        });
    }
    let dataset = StudyDataset {
        gene_names: manifest.genes.clone(),
        covariate_names: manifest.covariates.clone(),
        environments,
    };
    dataset.validate()?;
    let zero = dataset.zero_genes();
    if !zero.is_empty() {
        let names: Vec<&str> = zero
            .iter()
            .map(|&g| dataset.gene_names[g].as_str())
            .collect();
        warn!(genes = ?names, "genes with zero total count");
    }
    Ok(dataset)
}

/// Writes a dataset directory readable by [`load_study`].
pub fn write_study(
    dir: &Path,
    dataset: &StudyDataset,
    seed: Option<u64>,
    config: Option<serde_json::Value>,
) -> Result<DatasetManifest> {
    dataset.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.environments.len());
    for env in &dataset.environments {
        let sub = PathBuf::from(&env.id);
        let counts_rel = sub.join("counts.csv");
        let counts_path = dir.join(&counts_rel);
        let mut w = csv_writer(&counts_path)?;
        w.write_record(&dataset.gene_names)
            .map_err(|e| Error::csv(&counts_path, e))?;
        for i in 0..env.n() {
            w.write_record(env.counts.row(i).iter().map(|x| x.to_string()))
                .map_err(|e| Error::csv(&counts_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&counts_path, e))?;

        let lib_rel = sub.join("libsize.csv");
        let lib_path = dir.join(&lib_rel);
        let mut w = csv_writer(&lib_path)?;
        w.write_record(["libsize"])
            .map_err(|e| Error::csv(&lib_path, e))?;
        for l in &env.library_sizes {
            w.write_record([format!("{l}")])
                .map_err(|e| Error::csv(&lib_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&lib_path, e))?;

        let cov_rel = if dataset.q() > 0 {
            let rel = sub.join("covariates.csv");
            crate::io::write_matrix_csv(
                &dir.join(&rel),
                &env.covariates,
                &dataset.covariate_names,
            )?;
            Some(rel)
        } else {
            None
        };
        entries.push(EnvironmentEntry {
            id: env.id.clone(),
            role: if env.is_control() {
                Role::Control
            } else {
                Role::Intervention
            },
            target: env.target.map(|t| dataset.gene_names[t].clone()),
            counts: counts_rel,
            libsize: lib_rel,
            covariates: cov_rel,
            n: env.n(),
        });
    }
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        genes: dataset.gene_names.clone(),
        covariates: dataset.covariate_names.clone(),
        environments: entries,
        seed,
        config,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Intervention coverage of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub untargeted: Vec<usize>,
    pub untargeted_names: Vec<String>,
    /// Number of environments targeting each gene.
    pub per_target: Vec<usize>,
    /// Smallest interventional environment size.
    pub min_n: Option<usize>,
    pub n_control: Option<usize>,
}

impl CoverageReport {
    pub fn is_complete(&self) -> bool {
        self.untargeted.is_empty()
    }
}

pub fn validate_design(dataset: &StudyDataset) -> CoverageReport {
    let p = dataset.p();
    let mut per_target = vec![0usize; p];
    for env in &dataset.environments {
        if let Some(t) = env.target {
            if t < p {
                per_target[t] += 1;
            }
        }
    }
    let untargeted: Vec<usize> = (0..p).filter(|&j| per_target[j] == 0).collect();
    CoverageReport {
        untargeted_names: untargeted
            .iter()
            .map(|&j| dataset.gene_names[j].clone())
            .collect(),
        untargeted,
        per_target,
        min_n: dataset
            .environments
            .iter()
            .filter(|e| e.target.is_some())
            .map(|e| e.n())
            .min(),
        n_control: dataset.control().ok().map(|c| c.n()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> StudyDataset {
        StudyDataset {
            gene_names: vec!["a".into(), "b".into()],
            covariate_names: vec![],
            environments: vec![
                EnvironmentData {
                    id: "control".into(),
                    target: None,
                    counts: CountMatrix::from_row_slice(3, 2, &[1, 2, 0, 5, 7, 1]),
                    library_sizes: vec![1.5, 2.0, 0.25],
                    covariates: Matrix::zeros(3, 0),
                },
                EnvironmentData {
                    id: "ko_a".into(),
                    target: Some(0),
                    counts: CountMatrix::from_row_slice(2, 2, &[0, 3, 1, 4]),
                    library_sizes: vec![1.0, 3.0],
                    covariates: Matrix::zeros(2, 0),
                },
            ],
        }
    }

    #[test]
    fn coverage_report() {
        let ds = tiny();
        let rep = validate_design(&ds);
        assert_eq!(rep.untargeted, vec![1]);
        assert_eq!(rep.untargeted_names, vec!["b".to_string()]);
        assert_eq!(rep.per_target, vec![1, 0]);
        assert_eq!(rep.min_n, Some(2));
        assert_eq!(rep.n_control, Some(3));
    }

    #[test]
    fn round_trip_with_covariates() {
        let mut ds = tiny();
        ds.covariate_names = vec!["batch".into()];
        ds.environments[0].covariates = Matrix::from_column_slice(3, 1, &[0.1, -2.0, 1.0 / 7.0]);
        ds.environments[1].covariates = Matrix::from_column_slice(2, 1, &[3.0, 0.0]);
        let dir = tempfile::tempdir().unwrap();
        write_study(dir.path(), &ds, Some(3), None).unwrap();
        assert_eq!(load_study(dir.path()).unwrap(), ds);
    }

    #[test]
    fn two_controls_rejected() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = write_study(dir.path(), &ds, None, None).unwrap();
        manifest.environments[1].role = Role::Control;
        manifest.environments[1].target = None;
        write_json(&dir.path().join(MANIFEST_FILE), &manifest).unwrap();
        assert!(matches!(
            load_study(dir.path()),
            Err(Error::ManifestError(_))
        ));
    }

    #[test]
    fn missing_control_rejected() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = write_study(dir.path(), &ds, None, None).unwrap();
        manifest.environments.remove(0);
        write_json(&dir.path().join(MANIFEST_FILE), &manifest).unwrap();
        assert!(matches!(load_study(dir.path()), Err(Error::MissingControl)));
    }

    #[test]
    fn negative_and_fractional_counts_rejected() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        write_study(dir.path(), &ds, None, None).unwrap();
        let counts = dir.path().join("ko_a/counts.csv");
        std::fs::write(&counts, "a,b\n0,3\n1,-1\n").unwrap();
        match load_study(dir.path()) {
            Err(Error::DataError {
                path, row, column, ..
            }) => {
                assert_eq!(path, counts);
                assert_eq!((row, column), (2, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&counts, "a,b\n0,3.5\n1,4\n").unwrap();
        assert!(matches!(
            load_study(dir.path()),
            Err(Error::DataError {
                row: 1,
                column: 2,
                ..
            })
        ));
        std::fs::write(&counts, "a,b\n0,3.0\n1,4\n").unwrap();
        assert_eq!(load_study(dir.path()).unwrap(), ds);
    }

    #[test]
    fn declared_size_must_match() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = write_study(dir.path(), &ds, None, None).unwrap();
        manifest.environments[1].n = 5;
        write_json(&dir.path().join(MANIFEST_FILE), &manifest).unwrap();
        assert!(matches!(
            load_study(dir.path()),
            Err(Error::ManifestError(_))
        ));
    }

    #[test]
    fn unknown_target_rejected() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = write_study(dir.path(), &ds, None, None).unwrap();
        manifest.environments[1].target = Some("zzz".into());
        write_json(&dir.path().join(MANIFEST_FILE), &manifest).unwrap();
        assert!(matches!(
            load_study(dir.path()),
            Err(Error::ManifestError(_))
        ));
    }
}
