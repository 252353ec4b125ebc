//! File formats: CSV readers for treatments/covariates/outcomes keyed by a
//! subject id, JSON model persistence, and report writers.
//!
//! All floating-point output uses a fixed 17-significant-digit scientific
//! format ([`fmt17`]) so that identical runs produce byte-identical files.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcrep::{DenseTrajectory, SampleSet, TreatmentSet};
use crate::kernels::KernelSpec;
use crate::model::FteModel;
use crate::simulate::SimReport;
use crate::tuning::TuningReport;

/// Current schema version of persisted model files.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Fixed-width float formatting: 17 significant digits, scientific notation.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(field: &str, line: usize, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse {what} from '{field}'"),
    })
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))
}

fn headers(rdr: &mut csv::Reader<std::fs::File>) -> Result<Vec<String>> {
    Ok(rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: format!("cannot read header: {e}"),
        })?
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect())
}

/// Rows of a treatment CSV, grouped by id in order of first appearance.
fn group_rows(
    path: &Path,
    expect_value: bool,
) -> Result<Vec<(String, Vec<(f64, Option<f64>)>)>> {
    let mut rdr = open_csv(path)?;
    let head = headers(&mut rdr)?;
    let expected: &[&str] = if expect_value {
        &["id", "t", "value"]
    } else {
        &["id", "t"]
    };
    if head != expected {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "expected header '{}', found '{}'",
                expected.join(","),
                head.join(",")
            ),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(f64, Option<f64>)>> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2; // header is line 1
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: format!("malformed row: {e}"),
        })?;
        if rec.len() != expected.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", expected.len(), rec.len()),
            });
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                msg: "empty id".into(),
            });
        }
        let t = parse_f64(&rec[1], line, "t")?;
        let v = if expect_value {
            Some(parse_f64(&rec[2], line, "value")?)
        } else {
            None
        };
        groups.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        groups.get_mut(&rec[0]).unwrap().push((t, v));
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let rows = groups.remove(&id).unwrap();
            (id, rows)
        })
        .collect())
}

/// Read dense trajectories from a CSV with header `id,t,value`.
///
/// Rows are grouped by id (ids ordered by first appearance) and sorted by
/// `t` within each id. Every id must have at least two observation points.
pub fn read_dense_treatments(path: &Path) -> Result<(Vec<String>, TreatmentSet)> {
    let grouped = group_rows(path, true)?;
    if grouped.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let mut ids = Vec::with_capacity(grouped.len());
    let mut trajs = Vec::with_capacity(grouped.len());
    for (id, mut rows) in grouped {
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let grid: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let values: Vec<f64> = rows.iter().map(|r| r.1.unwrap()).collect();
        let traj = DenseTrajectory::new(grid, values)
            .map_err(|e| Error::InvalidInput(format!("id '{id}': {e}")))?;
        ids.push(id);
        trajs.push(traj);
    }
    Ok((ids, TreatmentSet::from_dense(trajs)?))
}

/// Read sample-set treatments from a CSV with header `id,t`, attaching the
/// given base kernel to every subject's point set.
pub fn read_sample_set_treatments(
    path: &Path,
    base_kernel: &KernelSpec,
) -> Result<(Vec<String>, TreatmentSet)> {
    let grouped = group_rows(path, false)?;
    if grouped.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let mut ids = Vec::with_capacity(grouped.len());
    let mut sets = Vec::with_capacity(grouped.len());
    for (id, rows) in grouped {
        let points: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let set = SampleSet::new(points, base_kernel.clone())
            .map_err(|e| Error::InvalidInput(format!("id '{id}': {e}")))?;
        ids.push(id);
        sets.push(set);
    }
    Ok((ids, TreatmentSet::from_sample_sets(sets)?))
}

/// Read covariates from a CSV with header `id,<name1>,<name2>,...`.
pub fn read_covariates(path: &Path) -> Result<(Vec<String>, Vec<String>, DMatrix<f64>)> {
    let mut rdr = open_csv(path)?;
    let head = headers(&mut rdr)?;
    if head.len() < 2 || head[0] != "id" {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "expected header 'id,<covariate names...>', found '{}'",
                head.join(",")
            ),
        });
    }
    let names: Vec<String> = head[1..].to_vec();
    let p = names.len();
    let mut ids = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: format!("malformed row: {e}"),
        })?;
        if rec.len() != p + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", p + 1, rec.len()),
            });
        }
        ids.push(rec[0].to_string());
        for j in 0..p {
            rows.push(parse_f64(&rec[j + 1], line, &names[j])?);
        }
    }
    if ids.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let x = DMatrix::from_row_slice(ids.len(), p, &rows);
    Ok((ids, names, x))
}

/// Read outcomes from a CSV with header `id,y`.
pub fn read_outcomes(path: &Path) -> Result<(Vec<String>, DVector<f64>)> {
    let mut rdr = open_csv(path)?;
    let head = headers(&mut rdr)?;
    if head != ["id", "y"] {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header 'id,y', found '{}'", head.join(",")),
        });
    }
    let mut ids = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: format!("malformed row: {e}"),
        })?;
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        ids.push(rec[0].to_string());
        ys.push(parse_f64(&rec[1], line, "y")?);
    }
    if ids.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok((ids.clone(), DVector::from_vec(ys)))
}

/// Align three id-keyed inputs on the intersection of their ids, ordered as
/// in the treatment file. Errors when the intersection is empty or when an
/// id appears twice in the covariate or outcome files.
pub fn align_ids(
    treatment_ids: &[String],
    covariate_ids: &[String],
    outcome_ids: &[String],
) -> Result<Vec<(usize, usize, usize)>> {
    let index_of = |ids: &[String], what: &str| -> Result<HashMap<String, usize>> {
        let mut m = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if m.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate id '{id}' in {what}"
                )));
            }
        }
        Ok(m)
    };
    let cov = index_of(covariate_ids, "covariates")?;
    let out = index_of(outcome_ids, "outcomes")?;
    let mut triples = Vec::new();
    for (i, id) in treatment_ids.iter().enumerate() {
        if let (Some(&j), Some(&k)) = (cov.get(id), out.get(id)) {
            triples.push((i, j, k));
        }
    }
    if triples.is_empty() {
        return Err(Error::InvalidInput(
            "no common ids across treatments, covariates and outcomes".into(),
        ));
    }
    Ok(triples)
}

/// A persisted model file: self-contained (training treatments embedded).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedModel {
    pub schema_version: u32,
    /// Subject ids aligned with the model's training treatments.
    pub ids: Vec<String>,
    pub model: FteModel,
    /// Tuning diagnostics when the model came from the balancing pipeline.
    pub tuning: Option<TuningReport>,
}

pub fn save_model(path: &Path, saved: &SavedModel) -> Result<()> {
    let json = serde_json::to_string_pretty(saved)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize model: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let text = std::fs::read_to_string(path)?;
    let saved: SavedModel = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: format!("invalid model file: {e}"),
    })?;
    if saved.schema_version != MODEL_SCHEMA_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported model schema version {} (expected {MODEL_SCHEMA_VERSION})",
            saved.schema_version
        )));
    }
    Ok(saved)
}

/// Write per-replicate study results in long format:
/// `setting,estimator,metric,replicate,value`.
pub fn write_sim_report_csv(path: &Path, report: &SimReport) -> Result<()> {
    let mut out = String::from("setting,estimator,metric,replicate,value\n");
    for rec in &report.records {
        for (metric, value) in [
            ("empirical_mse", rec.empirical_mse),
            ("oos_mse", rec.oos_mse),
        ] {
            if let Some(v) = value {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    report.config.setting,
                    rec.estimator,
                    metric,
                    rec.replicate,
                    fmt17(v)
                ));
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Write the study summary as a markdown table (mean and standard error per
/// estimator and metric, plus replicate counts).
pub fn write_sim_summary_markdown(path: &Path, report: &SimReport) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "# Simulation study: setting {}, n = {}, {} replicates, seed {}\n",
        report.config.setting, report.config.n, report.config.replicates, report.config.seed
    )?;
    writeln!(f, "| estimator | metric | mean | se | used | failures |")?;
    writeln!(f, "|---|---|---:|---:|---:|---:|")?;
    for s in &report.summaries {
        writeln!(
            f,
            "| {} | {} | {:.3} | {:.3} | {} | {} |",
            s.estimator, s.metric, s.mean, s.standard_error, s.replicates_used, s.failures
        )?;
    }
    Ok(())
}

/// Write a two-column CSV `id,<name>`.
pub fn write_id_value_csv(path: &Path, name: &str, ids: &[String], values: &[f64]) -> Result<()> {
    if ids.len() != values.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} ids vs {} values",
            ids.len(),
            values.len()
        )));
    }
    let mut out = format!("id,{name}\n");
    for (id, v) in ids.iter().zip(values) {
        out.push_str(&format!("{id},{}\n", fmt17(*v)));
    }
    std::fs::write(path, out)?;
    Ok(())
}
