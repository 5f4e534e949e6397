//! CSV files read and written by the commands. Floats use the shortest
//! representation that round-trips.

use std::fs::OpenOptions;
use std::path::Path;

use rnoise::metrics::MetricResult;
use rnoise::numerics::Tensor;
use rnoise::sampling::{noise_ledger, Trajectory};

use crate::error::{CliError, CliResult};

pub const TRAJECTORY_PREFIX: &str = "traj_id,step,t";

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            CliError::missing(format!("{}: file not found", path.display()))
        }
        _ => CliError::config(format!("{}: {e}", path.display())),
    }
}

fn writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::missing(format!("cannot write {}: {e}", path.display())))
}

fn coord_names(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|j| format!("{prefix}{j}")).collect()
}

/// `x0,…,x{d-1}[,label]`.
pub fn write_samples(path: &Path, points: &Tensor, labels: Option<&[usize]>) -> CliResult<()> {
    let d = points.cols();
    let mut w = writer(path)?;
    let mut header = coord_names("x", d);
    if labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..points.rows() {
        let mut rec: Vec<String> = points.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(l) = labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an `x0,…[,label]` file.
pub fn read_points(path: &Path) -> CliResult<(Tensor, Option<Vec<usize>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let coords: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('x') && h[1..].parse::<usize>().is_ok())
        .map(|(i, _)| i)
        .collect();
    if coords.is_empty() {
        return Err(CliError::config(format!("{}: no x0,x1,… columns", path.display())));
    }
    let label_col = header.iter().position(|h| h == "label");
    let d = coords.len();
    let mut data = Vec::new();
    let mut labels = label_col.map(|_| Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for &c in &coords {
            let v: f64 = rec
                .get(c)
                .and_then(|s| s.trim().parse().ok())
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| CliError::config(format!("{}: bad number on row {}", path.display(), line + 2)))?;
            data.push(v);
        }
        if let (Some(c), Some(l)) = (label_col, labels.as_mut()) {
            let v = rec
                .get(c)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| CliError::config(format!("{}: bad label on row {}", path.display(), line + 2)))?;
            l.push(v);
        }
    }
    let n = data.len() / d;
    Ok((Tensor::matrix(n, d, data), labels))
}

/// One row per trajectory per time; with `ledger`, adds the noise injected
/// on the step into that state (`noise*`) and its running sum (`cum*`).
pub fn write_trajectories(path: &Path, traj: &Trajectory, ledger: bool) -> CliResult<()> {
    let d = traj.states[0].cols();
    let n = traj.states[0].rows();
    let (per, cum) = if ledger {
        let (p, c) = noise_ledger(traj)?;
        (Some(p), Some(c))
    } else {
        (None, None)
    };
    let mut w = writer(path)?;
    let mut header: Vec<String> = TRAJECTORY_PREFIX.split(',').map(String::from).collect();
    header.extend(coord_names("x", d));
    if ledger {
        header.extend(coord_names("noise", d));
        header.extend(coord_names("cum", d));
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let zeros = vec![0.0; d];
    for i in 0..n {
        for (k, state) in traj.states.iter().enumerate() {
            let mut rec = vec![i.to_string(), k.to_string(), traj.times[k].to_string()];
            rec.extend(state.row(i).iter().map(|v| v.to_string()));
            if let (Some(per), Some(cum)) = (&per, &cum) {
                let step = if k == 0 || k > per.len() { &zeros[..] } else { per[k - 1].row(i) };
                let total = match k {
                    0 => &zeros[..],
                    _ => cum[(k - 1).min(cum.len() - 1)].row(i),
                };
                rec.extend(step.iter().map(|v| v.to_string()));
                rec.extend(total.iter().map(|v| v.to_string()));
            }
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean over trajectories of `‖noise‖` and `‖cum‖` at every step index.
pub struct LedgerSeries {
    pub steps: Vec<usize>,
    pub per_step: Vec<f64>,
    pub cumulative: Vec<f64>,
}

pub fn read_ledger(path: &Path) -> CliResult<LedgerSeries> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let idx = |prefix: &str| -> Vec<usize> {
        header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.strip_prefix(prefix).is_some_and(|s| s.parse::<usize>().is_ok()))
            .map(|(i, _)| i)
            .collect()
    };
    let (noise, cum) = (idx("noise"), idx("cum"));
    let step_col = header.iter().position(|h| h == "step");
    let Some(step_col) = step_col.filter(|_| !noise.is_empty() && noise.len() == cum.len()) else {
        return Err(CliError::config(format!(
            "{}: not a trajectory file with noise ledger columns",
            path.display()
        )));
    };
    let mut sums: Vec<(f64, f64, usize)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = || CliError::config(format!("{}: bad value on row {}", path.display(), line + 2));
        let step: usize = rec.get(step_col).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let norm = |cols: &[usize]| -> CliResult<f64> {
            let mut s = 0.0;
            for &c in cols {
                let v: f64 = rec.get(c).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                s += v * v;
            }
            Ok(s.sqrt())
        };
        if sums.len() <= step {
            sums.resize(step + 1, (0.0, 0.0, 0));
        }
        let e = &mut sums[step];
        e.0 += norm(&noise)?;
        e.1 += norm(&cum)?;
        e.2 += 1;
    }
    let mut out = LedgerSeries {
        steps: Vec::new(),
        per_step: Vec::new(),
        cumulative: Vec::new(),
    };
    for (k, (a, b, c)) in sums.into_iter().enumerate() {
        if c > 0 {
            out.steps.push(k);
            out.per_step.push(a / c as f64);
            out.cumulative.push(b / c as f64);
        }
    }
    Ok(out)
}

/// Appends metric rows, writing the header first when the file is new or
/// empty.
pub fn append_metrics(path: &Path, rows: &[MetricResult]) -> CliResult<()> {
    use std::io::Write;
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::missing(format!("cannot write {}: {e}", path.display())))?;
    if fresh {
        writeln!(f, "{}", MetricResult::CSV_HEADER)?;
    }
    for r in rows {
        writeln!(f, "{}", r.csv_row())?;
    }
    Ok(())
}
