//! Plain CSV and JSON artifacts.
//!
//! Floats are written with Rust's shortest round-trip formatting so files
//! are byte-reproducible and parse back to the same values.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{PhaseSeries, Trajectory, Vec3};
use crate::error::{Error, Result};
use crate::kuramoto::SimRun;

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

/// Writes a header plus numeric rows.
pub fn write_csv<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[f64]>,
{
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        let row = row.as_ref();
        if row.len() != header.len() {
            return Err(Error::shape(header.len(), row.len()));
        }
        w.write_record(row.iter().map(|v| format!("{v}")))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// Reads a numeric CSV, checking the header matches `expected`.
pub fn read_csv(path: &Path, expected: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != expected {
        return Err(Error::format(
            path,
            format!("expected columns {expected:?}, found {names:?}"),
        ));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::format(path, format!("row {}: `{s}` is not a number", line + 2))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != expected.len() {
            return Err(Error::format(path, format!("row {} has {} fields", line + 2, row.len())));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let rows = traj
        .positions()
        .iter()
        .enumerate()
        .map(|(i, p)| [traj.time(i), p.x, p.y, p.z]);
    write_csv(path, &header(&["t", "x", "y", "z"]), rows)
}

pub fn read_trajectory_csv(path: &Path, id: impl Into<String>) -> Result<Trajectory> {
    let rows = read_csv(path, &["t", "x", "y", "z"])?;
    let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let pts: Vec<Vec3> = rows.iter().map(|r| Vec3::new(r[1], r[2], r[3])).collect();
    Trajectory::from_timed(id, &times, pts).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_phase_csv(path: &Path, times: &[f64], phases: &PhaseSeries) -> Result<()> {
    if times.len() != phases.len() {
        return Err(Error::shape(times.len(), phases.len()));
    }
    let rows = times.iter().zip(phases.values()).map(|(t, th)| [*t, *th]);
    write_csv(path, &header(&["t", "theta"]), rows)
}

pub fn read_phase_csv(path: &Path) -> Result<(Vec<f64>, PhaseSeries)> {
    let rows = read_csv(path, &["t", "theta"])?;
    let times = rows.iter().map(|r| r[0]).collect();
    let phases = PhaseSeries::new(rows.iter().map(|r| r[1]).collect())
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok((times, phases))
}

/// `t,theta_0..theta_{M-1},r`.
pub fn write_trace_csv(path: &Path, run: &SimRun) -> Result<()> {
    let m = run.states.first().map_or(0, |s| s.phases.len());
    let mut cols = vec!["t".to_string()];
    cols.extend((0..m).map(|i| format!("theta_{i}")));
    cols.push("r".into());
    let rows = run.states.iter().zip(&run.metrics.r).map(|(s, r)| {
        let mut row = Vec::with_capacity(m + 2);
        row.push(s.time);
        row.extend_from_slice(&s.phases);
        row.push(*r);
        row
    });
    write_csv(path, &cols, rows)
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, to_json_string(value)).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}
