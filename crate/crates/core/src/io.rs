//! File emission: CSV tables and JSON metadata.
//!
//! CSV schemas (column order is fixed):
//!
//! - trajectory: `step,time,risk,loss,kinetic,entropy_est,free_energy_est`,
//!   the last two empty when diagnostics are off
//! - marginals: `particle,theta1..thetaD,r1..rD`, one row per particle
//! - θ-grid fields: `theta1,value` or `theta1,theta2,value`, row-major with
//!   `theta2` varying fastest
//! - phase-space densities: `theta,r,value`, `r` varying fastest, with a
//!   JSON header holding the grid
//!
//! Floats are written in shortest round-trip form (see [`num`]), so identical
//! inputs give byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::TrajectoryRecord;
use crate::grid::ThetaGrid;
use crate::kinetic::{GridDensity, PhaseGrid};
use crate::types::{check_dim, Ensemble};
use crate::{Error, Result};

/// Contents of `meta.json`. Passing the file back as `--config` reproduces
/// the run, since config readers pick up the `config` member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub program: String,
    pub version: String,
    /// `run` or the preset name.
    pub kind: String,
    pub config: Value,
}

impl Meta {
    pub fn new(kind: &str, config: &impl Serialize) -> Result<Self> {
        Ok(Meta {
            program: "mfhb".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            kind: kind.into(),
            config: serde_json::to_value(config)?,
        })
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, e.into())
}

/// Shortest round-trip decimal form of `v`, in exponent notation for very
/// small or large magnitudes.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Writes a header and string rows.
pub fn write_table(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        check_dim(header.len(), row.len())?;
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a header and rows of numbers.
pub fn write_numeric(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    write_table(
        path,
        header,
        rows.into_iter().map(|r| r.into_iter().map(num).collect()),
    )
}

pub fn write_trajectory(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let header = [
        "step",
        "time",
        "risk",
        "loss",
        "kinetic",
        "entropy_est",
        "free_energy_est",
    ]
    .map(String::from);
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let rows = records.iter().map(|r| {
        vec![
            r.step.to_string(),
            num(r.time),
            num(r.risk),
            num(r.loss),
            num(r.kinetic),
            opt(r.entropy_est),
            opt(r.free_energy_est),
        ]
    });
    write_table(path, &header, rows)
}

pub fn write_marginals(path: &Path, ens: &Ensemble) -> Result<()> {
    let d = ens.dim;
    let mut header = vec!["particle".to_string()];
    header.extend((1..=d).map(|k| format!("theta{k}")));
    header.extend((1..=d).map(|k| format!("r{k}")));
    let rows = ens.particles.iter().enumerate().map(|(i, p)| {
        let mut row = vec![i.to_string()];
        row.extend(
            p.theta
                .to_vec()
                .into_iter()
                .chain(p.r.iter().copied())
                .map(num),
        );
        row
    });
    write_table(path, &header, rows)
}

/// One value per θ-grid cell.
pub fn write_grid_values(path: &Path, grid: &ThetaGrid, values: &[f64]) -> Result<()> {
    write_grid_columns(path, grid, &[("value", values)])
}

/// Several named per-cell columns after the coordinates.
pub fn write_grid_columns(path: &Path, grid: &ThetaGrid, columns: &[(&str, &[f64])]) -> Result<()> {
    for (_, col) in columns {
        check_dim(grid.cells(), col.len())?;
    }
    let mut header: Vec<String> = (1..=grid.ndim()).map(|k| format!("theta{k}")).collect();
    header.extend(columns.iter().map(|(name, _)| name.to_string()));
    let rows = (0..grid.cells()).map(|c| {
        let mut row = grid.coords(c);
        row.extend(columns.iter().map(|(_, col)| col[c]));
        row
    });
    write_numeric(path, &header, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityHeader {
    pub grid: PhaseGrid,
    pub time: f64,
    pub mass: f64,
    pub csv: String,
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_phase_density(
    dir: &Path,
    stem: &str,
    rho: &GridDensity,
    time: f64,
) -> Result<PathBuf> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let g = &rho.grid;
    let header = ["theta", "r", "value"].map(String::from);
    let rows = (0..g.n_theta)
        .flat_map(|i| (0..g.n_r).map(move |j| vec![g.theta(i), g.r(j), rho.values[i * g.n_r + j]]));
    write_numeric(&csv_path, &header, rows)?;
    let meta = DensityHeader {
        grid: *g,
        time,
        mass: rho.mass(),
        csv: format!("{stem}.csv"),
    };
    write_json(&dir.join(format!("{stem}.json")), &meta)?;
    Ok(csv_path)
}
