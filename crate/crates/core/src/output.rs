//! Snapshot writers: per-cell CSV (the primary format) and legacy ASCII VTK
//! for 2D meshes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::stepper::{Problem, SimState, SnapshotSink};
use crate::transport::Carrier;

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotRow {
    pub t: f64,
    pub cell_id: usize,
    pub x: f64,
    pub y: Option<f64>,
    pub u1: f64,
    pub u2: f64,
    pub phi: f64,
    pub j1: [f64; 2],
    pub j2: [f64; 2],
}

pub fn snapshot_header(dimension: usize) -> Vec<&'static str> {
    if dimension == 2 {
        vec!["t", "cell_id", "x", "y", "u1", "u2", "phi", "j1_x", "j1_y", "j2_x", "j2_y"]
    } else {
        vec!["t", "cell_id", "x", "u1", "u2", "phi", "j1_x", "j2_x"]
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

/// One row per cell in `cell_id` order. `Display` for `f64` is the shortest
/// decimal that parses back to the same value.
pub fn write_snapshot_csv(problem: &Problem, state: &SimState, path: &Path) -> Result<()> {
    let mesh = &problem.mesh;
    let j1 = problem.currents(state, Carrier::Electron);
    let j2 = problem.currents(state, Carrier::Hole);
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(snapshot_header(mesh.dimension)).map_err(|e| csv_error(path, e))?;
    for c in 0..mesh.num_cells() {
        let [x, y] = mesh.cell_centers[c];
        let mut row = vec![state.t.to_string(), c.to_string(), x.to_string()];
        if mesh.dimension == 2 {
            row.push(y.to_string());
        }
        row.extend([state.u1[c], state.u2[c], state.phi[c]].iter().map(f64::to_string));
        if mesh.dimension == 2 {
            row.extend([j1[c][0], j1[c][1], j2[c][0], j2[c][1]].iter().map(f64::to_string));
        } else {
            row.extend([j1[c][0], j2[c][0]].iter().map(f64::to_string));
        }
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_snapshot_csv(path: &Path) -> Result<Vec<SnapshotRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let dimension = if header.len() == 11 { 2 } else { 1 };
    if header != snapshot_header(dimension) {
        return Err(Error::config("output", format!("{}: unexpected header {header:?}", path.display())));
    }
    let bad = |line: usize, what: &str| Error::config("output", format!("{}: row {line}: {what}", path.display()));
    let mut rows = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let num = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| bad(line + 2, &format!("column {} is not a number", header[i])))
        };
        let cell_id = record
            .get(1)
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| bad(line + 2, "cell_id is not an integer"))?;
        rows.push(if dimension == 2 {
            SnapshotRow {
                t: num(0)?,
                cell_id,
                x: num(2)?,
                y: Some(num(3)?),
                u1: num(4)?,
                u2: num(5)?,
                phi: num(6)?,
                j1: [num(7)?, num(8)?],
                j2: [num(9)?, num(10)?],
            }
        } else {
            SnapshotRow {
                t: num(0)?,
                cell_id,
                x: num(2)?,
                y: None,
                u1: num(3)?,
                u2: num(4)?,
                phi: num(5)?,
                j1: [num(6)?, 0.0],
                j2: [num(7)?, 0.0],
            }
        });
    }
    Ok(rows)
}

/// Legacy ASCII structured grid: node coordinates plus per-cell `u1`, `u2`, `phi`.
pub fn write_vtk(mesh: &Mesh, state: &SimState, path: &Path) -> Result<()> {
    if mesh.dimension != 2 {
        return Err(Error::UnsupportedDimension(mesh.dimension));
    }
    let [nx, ny] = mesh.counts;
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0");
    let _ = writeln!(out, "vanroos snapshot t={}", state.t);
    let _ = writeln!(out, "ASCII");
    let _ = writeln!(out, "DATASET STRUCTURED_GRID");
    let _ = writeln!(out, "DIMENSIONS {} {} 1", nx + 1, ny + 1);
    let _ = writeln!(out, "POINTS {} double", (nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = mesh.lower[0] + i as f64 * mesh.spacing[0];
            let y = mesh.lower[1] + j as f64 * mesh.spacing[1];
            let _ = writeln!(out, "{x} {y} 0");
        }
    }
    let _ = writeln!(out, "CELL_DATA {}", nx * ny);
    for (name, values) in [("u1", &state.u1), ("u2", &state.u2), ("phi", &state.phi)] {
        let _ = writeln!(out, "SCALARS {name} double 1");
        let _ = writeln!(out, "LOOKUP_TABLE default");
        for v in values.iter() {
            let _ = writeln!(out, "{v}");
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes numbered CSV (and optionally VTK) snapshots every `every` steps.
pub struct FileSink {
    directory: PathBuf,
    prefix: String,
    every: usize,
    vtk: bool,
    last_written: Option<usize>,
    pub written: Vec<PathBuf>,
}

impl FileSink {
    pub fn new(directory: &Path, prefix: &str, every: usize, vtk: bool) -> Result<Self> {
        fs::create_dir_all(directory).map_err(|e| Error::io(directory, e))?;
        Ok(FileSink {
            directory: directory.to_path_buf(),
            prefix: prefix.to_string(),
            every: every.max(1),
            vtk,
            last_written: None,
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, problem: &Problem, state: &SimState, step: usize) -> Result<()> {
        let path = self.directory.join(format!("{}_{step:06}.csv", self.prefix));
        write_snapshot_csv(problem, state, &path)?;
        self.written.push(path);
        if self.vtk && problem.mesh.dimension == 2 {
            let path = self.directory.join(format!("{}_{step:06}.vtk", self.prefix));
            write_vtk(&problem.mesh, state, &path)?;
            self.written.push(path);
        }
        self.last_written = Some(step);
        Ok(())
    }

    /// Writes the final state unless the cadence already did.
    pub fn finish(&mut self, problem: &Problem, state: &SimState, step: usize) -> Result<()> {
        if self.last_written != Some(step) {
            self.write(problem, state, step)?;
        }
        Ok(())
    }
}

impl SnapshotSink for FileSink {
    fn record(&mut self, problem: &Problem, state: &SimState, step: usize) -> Result<()> {
        if step.is_multiple_of(self.every) {
            self.write(problem, state, step)?;
        }
        Ok(())
    }
}
