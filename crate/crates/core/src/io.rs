//! CSV readers and writers for matrices, edge lists and estimate tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dag::EdgeGraph;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::moments::LatentMeanEstimates;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().from_writer(create(path)?))
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))
}

pub(crate) fn parse_f64(path: &Path, row: usize, column: usize, field: &str) -> Result<f64> {
    field.parse::<f64>().map_err(|_| Error::DataError {
        path: path.to_path_buf(),
        row,
        column,
        reason: format!("'{field}' is not a number"),
    })
}

/// Dense matrix with a header row of node names; row-major.
pub fn write_matrix_csv(path: &Path, m: &Matrix, names: &[String]) -> Result<()> {
    if names.len() != m.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{} names for {} columns",
            names.len(),
            m.ncols()
        )));
    }
    let mut w = csv_writer(path)?;
    w.write_record(names).map_err(|e| Error::csv(path, e))?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|x| format!("{x}")))
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dense matrix written by [`write_matrix_csv`]; returns it with its header.
pub fn read_matrix_csv(path: &Path) -> Result<(Matrix, Vec<String>)> {
    let mut r = csv_reader(path)?;
    let names: Vec<String> = r
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if rec.len() != names.len() {
            return Err(Error::DataError {
                path: path.to_path_buf(),
                row: i + 1,
                column: rec.len(),
                reason: format!("expected {} fields", names.len()),
            });
        }
        for (j, f) in rec.iter().enumerate() {
            data.push(parse_f64(path, i + 1, j + 1, f)?);
        }
        rows += 1;
    }
    Ok((Matrix::from_row_slice(rows, names.len(), &data), names))
}

/// Edge list `src,dst,weight` for every nonzero off-diagonal entry of `a`.
pub fn write_edge_list(path: &Path, a: &Matrix, names: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["src", "dst", "weight"])
        .map_err(|e| Error::csv(path, e))?;
    let graph = EdgeGraph::from_weights(a);
    for &(i, j) in graph.edges() {
        w.write_record([
            names[i].as_str(),
            names[j].as_str(),
            &format!("{}", a[(j, i)]),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an edge list into a weight matrix using `names` for node lookup.
pub fn read_edge_list(path: &Path, names: &[String]) -> Result<Matrix> {
    let p = names.len();
    let index = |row: usize, column: usize, name: &str| -> Result<usize> {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::DataError {
                path: path.to_path_buf(),
                row,
                column,
                reason: format!("unknown node '{name}'"),
            })
    };
    let mut a = Matrix::zeros(p, p);
    let mut r = csv_reader(path)?;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if rec.len() < 2 {
            return Err(Error::DataError {
                path: path.to_path_buf(),
                row: i + 1,
                column: rec.len(),
                reason: "expected src,dst[,weight]".into(),
            });
        }
        let src = index(i + 1, 1, &rec[0])?;
        let dst = index(i + 1, 2, &rec[1])?;
        let w = match rec.get(2) {
            Some(f) if !f.is_empty() => parse_f64(path, i + 1, 3, f)?,
            _ => 1.0,
        };
        a[(dst, src)] = w;
    }
    Ok(a)
}

/// Long-format table `environment,target,gene,mu,sigma2`.
pub fn write_estimates_csv(path: &Path, est: &LatentMeanEstimates, names: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["environment", "target", "gene", "mu", "sigma2"])
        .map_err(|e| Error::csv(path, e))?;
    for env in &est.environments {
        let target = env.target.map(|t| names[t].clone()).unwrap_or_default();
        for j in 0..est.p {
            w.write_record([
                env.id.clone(),
                target.clone(),
                names[j].clone(),
                format!("{}", env.moments.mu[j]),
                format!("{}", env.moments.sigma2[j]),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::json(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(f)).map_err(|e| Error::json(path, e))
}

/// Writes any serializable rows as CSV with a header derived from field names.
pub fn write_rows<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
