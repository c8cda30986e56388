//! CSV ingestion and output files.

use std::fs;
use std::path::Path;

use gsm_core::numkit::{norm, Matrix};
use gsm_core::vmf::SphereSample;
use gsm_core::{Dataset, Responses};

use crate::config::{ModelId, RunConfig};
use crate::CliError;

const NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub enum Loaded {
    Table(Dataset),
    Sphere { sample: SphereSample, coords: Option<Vec<(i64, i64)>> },
}

struct Raw {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_raw(path: &Path) -> Result<Raw, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Ingest(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Ingest(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    if header.is_empty() {
        return Err(CliError::Ingest(format!("{}: missing header row", path.display())));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Ingest(format!("{}: {e}", path.display())))?;
        rows.push(rec.iter().map(String::from).collect());
    }
    if rows.is_empty() {
        return Err(CliError::Ingest(format!("{}: no data rows", path.display())));
    }
    Ok(Raw { header, rows })
}

/// Collects per-line problems and reports them together.
#[derive(Default)]
struct Problems(Vec<String>);

impl Problems {
    fn push(&mut self, line: usize, msg: impl std::fmt::Display) {
        self.0.push(format!("line {line}: {msg}"));
    }

    fn finish(self, path: &Path) -> Result<(), CliError> {
        if self.0.is_empty() {
            return Ok(());
        }
        let shown: Vec<&String> = self.0.iter().take(20).collect();
        let more = if self.0.len() > 20 { format!("\n... and {} more", self.0.len() - 20) } else { String::new() };
        Err(CliError::Ingest(format!(
            "{}: {} malformed row(s)\n{}{more}",
            path.display(),
            self.0.len(),
            shown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n")
        )))
    }
}

fn numeric_matrix(raw: &Raw, cols: &[usize], problems: &mut Problems) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.rows.len() * cols.len());
    for (i, row) in raw.rows.iter().enumerate() {
        for &c in cols {
            match row.get(c).map(|s| s.parse::<f64>()) {
                Some(Ok(v)) if v.is_finite() => out.push(v),
                Some(_) => {
                    problems.push(i + 2, format!("column '{}' is not a finite number: '{}'", raw.header[c], row[c]));
                    out.push(0.0);
                }
                None => {
                    problems.push(i + 2, "too few columns");
                    out.push(0.0);
                }
            }
        }
    }
    out
}

pub fn load_csv(path: &Path, model: ModelId, sqrt_compositional: bool) -> Result<Loaded, CliError> {
    let raw = read_raw(path)?;
    let mut problems = Problems::default();
    for (i, row) in raw.rows.iter().enumerate() {
        if row.len() != raw.header.len() {
            problems.push(i + 2, format!("{} fields, header has {}", row.len(), raw.header.len()));
        }
    }
    let n = raw.rows.len();
    let ycols: Vec<usize> = (0..raw.header.len()).filter(|&c| is_response(&raw.header[c])).collect();
    match model {
        ModelId::Cmp | ModelId::CustomOrdinal => {
            if raw.header[0] != "y" {
                return Err(CliError::Ingest(format!("{}: first column must be 'y'", path.display())));
            }
            let xcols: Vec<usize> = (1..raw.header.len()).collect();
            if xcols.is_empty() {
                return Err(CliError::Ingest(format!("{}: no covariate columns", path.display())));
            }
            let mut y = Vec::with_capacity(n);
            for (i, row) in raw.rows.iter().enumerate() {
                match row[0].parse::<i64>() {
                    Ok(v) if v >= 0 => y.push(v),
                    Ok(v) => {
                        problems.push(i + 2, format!("negative count {v}"));
                        y.push(0);
                    }
                    Err(_) => {
                        problems.push(i + 2, format!("count '{}' is not a non-negative integer", row[0]));
                        y.push(0);
                    }
                }
            }
            let x = numeric_matrix(&raw, &xcols, &mut problems);
            problems.finish(path)?;
            let labels = xcols.iter().map(|&c| raw.header[c].clone()).collect();
            let ds = Dataset::with_labels(
                Responses::Integer { d: 1, values: y },
                Matrix::from_vec(n, xcols.len(), x)?,
                vec!["y".into()],
                labels,
            )?;
            Ok(Loaded::Table(ds))
        }
        ModelId::TruncGauss => {
            let d = leading_responses(&raw, path)?;
            let xcols: Vec<usize> = (d..raw.header.len()).collect();
            if xcols.is_empty() {
                return Err(CliError::Ingest(format!("{}: no covariate columns", path.display())));
            }
            let ycols: Vec<usize> = (0..d).collect();
            let y = numeric_matrix(&raw, &ycols, &mut problems);
            for (i, row) in y.chunks(d).enumerate() {
                if row.iter().any(|v| *v <= 0.0) {
                    problems.push(i + 2, "responses must be strictly positive");
                }
            }
            let x = numeric_matrix(&raw, &xcols, &mut problems);
            problems.finish(path)?;
            let ds = Dataset::with_labels(
                Responses::Real(Matrix::from_vec(n, d, y)?),
                Matrix::from_vec(n, xcols.len(), x)?,
                ycols.iter().map(|&c| raw.header[c].clone()).collect(),
                xcols.iter().map(|&c| raw.header[c].clone()).collect(),
            )?;
            Ok(Loaded::Table(ds))
        }
        ModelId::VmfAuto => {
            let d = ycols.len();
            if d < 2 || ycols != (0..d).collect::<Vec<_>>() {
                return Err(CliError::Ingest(format!(
                    "{}: expected leading columns y1..yd with d >= 2",
                    path.display()
                )));
            }
            let rest: Vec<&str> = raw.header[d..].iter().map(String::as_str).collect();
            let has_grid = match rest.as_slice() {
                [] => false,
                ["grid_row", "grid_col"] => true,
                _ => {
                    return Err(CliError::Ingest(format!(
                        "{}: after y1..yd only grid_row,grid_col are allowed",
                        path.display()
                    )))
                }
            };
            let y = numeric_matrix(&raw, &ycols, &mut problems);
            let mut pts = Vec::with_capacity(n * d);
            for (i, row) in y.chunks(d).enumerate() {
                if sqrt_compositional {
                    let total: f64 = row.iter().sum();
                    if row.iter().any(|v| *v < 0.0) || (total - 1.0).abs() > NORM_TOL {
                        problems.push(i + 2, format!("not a composition (sum {total})"));
                        pts.extend(std::iter::repeat_n(0.0, d));
                        continue;
                    }
                    let r: Vec<f64> = row.iter().map(|v| (v / total).sqrt()).collect();
                    pts.extend(r);
                } else {
                    let r = norm(row);
                    if (r - 1.0).abs() > NORM_TOL {
                        problems.push(i + 2, format!("norm {r:.6} violates the unit-norm constraint"));
                        pts.extend(std::iter::repeat_n(0.0, d));
                        continue;
                    }
                    pts.extend(row.iter().map(|v| v / r));
                }
            }
            let coords = if has_grid {
                let mut c = Vec::with_capacity(n);
                for (i, row) in raw.rows.iter().enumerate() {
                    match (row.get(d).map(|s| s.parse::<i64>()), row.get(d + 1).map(|s| s.parse::<i64>())) {
                        (Some(Ok(a)), Some(Ok(b))) => c.push((a, b)),
                        _ => {
                            problems.push(i + 2, "grid_row/grid_col must be integers");
                            c.push((0, 0));
                        }
                    }
                }
                Some(c)
            } else {
                None
            };
            problems.finish(path)?;
            let sample = SphereSample::new(Matrix::from_vec(n, d, pts)?)?;
            Ok(Loaded::Sphere { sample, coords })
        }
    }
}

fn is_response(name: &str) -> bool {
    name.strip_prefix('y').is_some_and(|r| !r.is_empty() && r.chars().all(|c| c.is_ascii_digit()))
}

fn leading_responses(raw: &Raw, path: &Path) -> Result<usize, CliError> {
    let d = raw.header.iter().take_while(|h| is_response(h)).count();
    if d == 0 {
        return Err(CliError::Ingest(format!("{}: expected leading columns y1..yd", path.display())));
    }
    Ok(d)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(e.into()))?;
    w.write_record(header).map_err(|e| CliError::Io(e.into()))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<path>.meta` with version, seed and configuration hash.
pub fn write_sidecar(path: &Path, cfg: &RunConfig, seed: Option<u64>) -> Result<(), CliError> {
    let mut meta = path.as_os_str().to_owned();
    meta.push(".meta");
    let text = format!(
        "version={}\ncommand={}\nseed={}\nconfig_sha256={}\n",
        env!("CARGO_PKG_VERSION"),
        cfg.command,
        seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into()),
        cfg.hash()
    );
    fs::write(meta, text)?;
    Ok(())
}

pub fn fmt_num(v: f64) -> String {
    format!("{v:.6}")
}
