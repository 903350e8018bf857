//! File formats: dataset CSV (`id,x_obs[,x_true],y:<dim>...,dy:<dim>...`),
//! draws CSV (one column per parameter, one row per iteration), JSON
//! summaries and manifests. Everything is written deterministically so
//! resumed experiments reproduce byte-identical outputs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diagnostics::ConvergenceFlags;
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::sampler::ChainDraws;
use crate::simgen::GroundTruth;

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.17e}")
    } else {
        String::new()
    }
}

/// Write a dataset in the harness CSV format. The x_true column appears
/// only when ground truth is present; dy columns only with derivatives.
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "x_obs".to_string()];
    if data.x_true.is_some() {
        header.push("x_true".to_string());
    }
    for name in &data.dim_names {
        header.push(format!("y:{name}"));
    }
    if data.y_prime.is_some() {
        for name in &data.dim_names {
            header.push(format!("dy:{name}"));
        }
    }
    w.write_record(&header)?;
    for i in 0..data.n_obs() {
        let mut row = vec![(i + 1).to_string(), fmt(data.x_obs[i])];
        if let Some(xt) = &data.x_true {
            row.push(fmt(xt[i]));
        }
        for d in 0..data.n_dims() {
            row.push(fmt(data.y[[i, d]]));
        }
        if let Some(yp) = &data.y_prime {
            for d in 0..data.n_dims() {
                row.push(fmt(yp[[i, d]]));
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

struct HeaderMap {
    x_obs: usize,
    x_true: Option<usize>,
    y: Vec<(String, usize)>,
    dy: Vec<(String, usize)>,
}

fn parse_header(path: &str, header: &csv::StringRecord, case_study: bool) -> Result<HeaderMap> {
    let mut x_obs = None;
    let mut x_true = None;
    let mut y = Vec::new();
    let mut dy = Vec::new();
    for (ix, field) in header.iter().enumerate() {
        let field = field.trim();
        if field == "id" {
            continue;
        } else if field == "x_obs" || (case_study && field == "cell_hours") {
            x_obs = Some(ix);
        } else if field == "x_true" {
            x_true = Some(ix);
        } else if let Some(name) = field.strip_prefix("y:") {
            if y.iter().any(|(n, _): &(String, usize)| n == name) {
                return Err(Error::Schema {
                    path: path.into(),
                    message: format!("duplicate output column y:{name}"),
                });
            }
            y.push((name.to_string(), ix));
        } else if let Some(name) = field.strip_prefix("dy:") {
            if dy.iter().any(|(n, _): &(String, usize)| n == name) {
                return Err(Error::Schema {
                    path: path.into(),
                    message: format!("duplicate derivative column dy:{name}"),
                });
            }
            dy.push((name.to_string(), ix));
        } else {
            return Err(Error::Schema {
                path: path.into(),
                message: format!("unrecognized column '{field}'"),
            });
        }
    }
    let x_obs = x_obs.ok_or_else(|| Error::Schema {
        path: path.into(),
        message: if case_study {
            "missing cell_hours (or x_obs) column".into()
        } else {
            "missing x_obs column".into()
        },
    })?;
    if y.is_empty() {
        return Err(Error::Schema {
            path: path.into(),
            message: "no output columns (y:<dim>)".into(),
        });
    }
    if !dy.is_empty() {
        let y_names: Vec<&String> = y.iter().map(|(n, _)| n).collect();
        let dy_names: Vec<&String> = dy.iter().map(|(n, _)| n).collect();
        if y_names != dy_names {
            return Err(Error::Schema {
                path: path.into(),
                message: format!(
                    "expression and velocity column sets differ: y={y_names:?} dy={dy_names:?}"
                ),
            });
        }
    }
    Ok(HeaderMap {
        x_obs,
        x_true,
        y,
        dy,
    })
}

fn read_csv_dataset(path: &Path, case_study: bool) -> Result<Dataset> {
    let pathstr = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let map = parse_header(&pathstr, &header, case_study)?;

    let mut x_obs = Vec::new();
    let mut x_true = Vec::new();
    let mut y_rows: Vec<Vec<f64>> = Vec::new();
    let mut dy_rows: Vec<Vec<f64>> = Vec::new();
    for (row_ix, record) in rdr.records().enumerate() {
        let record = record?;
        let parse = |col: usize| -> Result<f64> {
            let cell = record.get(col).ok_or_else(|| Error::Parse {
                path: pathstr.clone(),
                row: row_ix + 2,
                column: col + 1,
                message: "row has too few fields".into(),
            })?;
            cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                path: pathstr.clone(),
                row: row_ix + 2,
                column: col + 1,
                message: format!("not a number: '{cell}'"),
            })
        };
        x_obs.push(parse(map.x_obs)?);
        if let Some(col) = map.x_true {
            x_true.push(parse(col)?);
        }
        let mut yr = Vec::with_capacity(map.y.len());
        for (_, col) in &map.y {
            yr.push(parse(*col)?);
        }
        y_rows.push(yr);
        if !map.dy.is_empty() {
            let mut dr = Vec::with_capacity(map.dy.len());
            for (_, col) in &map.dy {
                dr.push(parse(*col)?);
            }
            dy_rows.push(dr);
        }
    }
    if x_obs.is_empty() {
        return Err(Error::EmptyInput(pathstr));
    }
    let n = x_obs.len();
    let d = map.y.len();
    let flat: Vec<f64> = y_rows.into_iter().flatten().collect();
    let y = Array2::from_shape_vec((n, d), flat)
        .map_err(|e| Error::InvalidArgument(format!("bad y shape: {e}")))?;
    let y_prime = if map.dy.is_empty() {
        None
    } else {
        let flat: Vec<f64> = dy_rows.into_iter().flatten().collect();
        Some(
            Array2::from_shape_vec((n, d), flat)
                .map_err(|e| Error::InvalidArgument(format!("bad dy shape: {e}")))?,
        )
    };
    Dataset::new(
        x_obs,
        y,
        y_prime,
        if map.x_true.is_some() { Some(x_true) } else { None },
        map.y.iter().map(|(n, _)| n.clone()).collect(),
    )
}

/// Read a dataset written by [`write_dataset_csv`].
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    read_csv_dataset(path, false)
}

/// Ingest a case-study file: cell hours (the noisy pseudotime prior),
/// expression columns `y:<gene>` and velocity columns `dy:<gene>`.
/// A file without velocity columns loads with y_prime absent and a
/// warning; derivative-free fitting is still allowed.
pub fn load_case_study(path: &Path, x_obs_sd: f64) -> Result<(Dataset, Vec<String>)> {
    if !(x_obs_sd > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "x_obs_sd must be positive, got {x_obs_sd}"
        )));
    }
    let data = read_csv_dataset(path, true)?;
    let mut warnings = Vec::new();
    if data.y_prime.is_none() {
        warnings.push(format!(
            "{}: no velocity (dy:) columns; fitting without derivative information",
            path.display()
        ));
    }
    Ok((data, warnings))
}

/// Draws CSV: one column per parameter, one row per retained iteration.
/// Multi-chain runs append each chain's rows in chain order.
pub fn write_draws_csv(path: &Path, chains: &[ChainDraws]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let names = &chains[0].param_names;
    w.write_record(names)?;
    for chain in chains {
        for row in chain.draws.rows() {
            let rec: Vec<String> = row.iter().map(|v| fmt(*v)).collect();
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a draws CSV back as (parameter names, draws matrix).
pub fn read_draws_csv(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let pathstr = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path)?;
    let names: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (row_ix, record) in rdr.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(names.len());
        for (col, cell) in record.iter().enumerate() {
            row.push(cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                path: pathstr.clone(),
                row: row_ix + 2,
                column: col + 1,
                message: format!("not a number: '{cell}'"),
            })?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(pathstr));
    }
    let n = rows.len();
    let p = names.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let draws = Array2::from_shape_vec((n, p), flat)
        .map_err(|e| Error::InvalidArgument(format!("ragged draws file: {e}")))?;
    Ok((names, draws))
}

/// Per-parameter summary row. Diagnostics are None for degenerate
/// (constant) parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q5: f64,
    pub q95: f64,
    pub rhat: Option<f64>,
    pub bulk_ess: Option<f64>,
    pub tail_ess: Option<f64>,
    pub flags: ConvergenceFlags,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub params: Vec<ParamSummary>,
    pub n_chains: usize,
    pub n_iterations: usize,
    pub n_warmup: usize,
    pub seed: u64,
    pub divergences: usize,
    /// any parameter with R-hat above 1.1
    pub rhat_flagged: bool,
    /// any parameter with bulk or tail ESS below 100 x chains
    pub ess_flagged: bool,
    pub flagged_params: Vec<String>,
    pub runtime_seconds: f64,
    pub variant: String,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let s = serde_json::to_string_pretty(value)?;
    f.write_all(s.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&s)?)
}

/// Ground truth mirror with plain vectors for JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthJson {
    pub x_true: Vec<f64>,
    pub rho: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_prime: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sigma_prime: Vec<f64>,
    pub corr_matrix: Vec<Vec<f64>>,
}

impl From<&GroundTruth> for GroundTruthJson {
    fn from(t: &GroundTruth) -> Self {
        Self {
            x_true: t.x_true.clone(),
            rho: t.rho.clone(),
            alpha: t.alpha.clone(),
            alpha_prime: t.alpha_prime.clone(),
            sigma: t.sigma.clone(),
            sigma_prime: t.sigma_prime.clone(),
            corr_matrix: t
                .corr_matrix
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
        }
    }
}

/// Experiment manifest: completed cells keyed by "t<trial>_D<dims>_<variant>".
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub completed: BTreeMap<String, String>,
}

/// One result row: a (trial, dims, variant, latent input) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub trial: usize,
    pub scenario: String,
    pub dims: usize,
    pub use_derivatives: bool,
    pub scaled_derivatives: bool,
    pub varying_hyperparams: bool,
    pub correlated_outputs: bool,
    pub input_index: usize,
    pub rmse: Option<f64>,
    pub bias: Option<f64>,
    pub sd: Option<f64>,
    pub rhat_x: Option<f64>,
    pub bulk_ess_x: Option<f64>,
    pub tail_ess_x: Option<f64>,
    pub runtime_seconds: f64,
    pub failed: bool,
}

pub const RESULT_HEADER: [&str; 16] = [
    "trial",
    "scenario",
    "dims",
    "use_derivatives",
    "scaled_derivatives",
    "varying_hyperparams",
    "correlated_outputs",
    "input_index",
    "rmse",
    "bias",
    "sd",
    "rhat_x",
    "bulk_ess_x",
    "tail_ess_x",
    "runtime_seconds",
    "failed",
];

fn opt_fmt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

pub fn write_result_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULT_HEADER)?;
    for r in rows {
        w.write_record(&[
            r.trial.to_string(),
            r.scenario.clone(),
            r.dims.to_string(),
            (r.use_derivatives as u8).to_string(),
            (r.scaled_derivatives as u8).to_string(),
            (r.varying_hyperparams as u8).to_string(),
            (r.correlated_outputs as u8).to_string(),
            r.input_index.to_string(),
            opt_fmt(r.rmse),
            opt_fmt(r.bias),
            opt_fmt(r.sd),
            opt_fmt(r.rhat_x),
            opt_fmt(r.bulk_ess_x),
            opt_fmt(r.tail_ess_x),
            fmt(r.runtime_seconds),
            (r.failed as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_result_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let pathstr = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (row_ix, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |col: usize| -> Result<&str> {
            record.get(col).ok_or_else(|| Error::Parse {
                path: pathstr.clone(),
                row: row_ix + 2,
                column: col + 1,
                message: "missing field".into(),
            })
        };
        let opt = |col: usize| -> Result<Option<f64>> {
            let s = field(col)?.trim();
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                    path: pathstr.clone(),
                    row: row_ix + 2,
                    column: col + 1,
                    message: format!("not a number: '{s}'"),
                })
            }
        };
        out.push(ResultRow {
            trial: field(0)?.parse().unwrap_or(0),
            scenario: field(1)?.to_string(),
            dims: field(2)?.parse().unwrap_or(0),
            use_derivatives: field(3)? == "1",
            scaled_derivatives: field(4)? == "1",
            varying_hyperparams: field(5)? == "1",
            correlated_outputs: field(6)? == "1",
            input_index: field(7)?.parse().unwrap_or(0),
            rmse: opt(8)?,
            bias: opt(9)?,
            sd: opt(10)?,
            rhat_x: opt(11)?,
            bulk_ess_x: opt(12)?,
            tail_ess_x: opt(13)?,
            runtime_seconds: opt(14)?.unwrap_or(0.0),
            failed: field(15)? == "1",
        });
    }
    Ok(out)
}
