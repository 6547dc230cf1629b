//! Legacy ASCII VTK output on the rectilinear fine grid: cell data from
//! cell means, optional vertex data. Numbers print in shortest round-trip
//! form, so outputs are bit-stable across runs.

use crate::error::{Error, Result};
use crate::field::DgField;
use crate::mesh::FineGrid;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Cell means of a DG field, VTK cell ordering (row-major, bottom first).
pub fn cell_means(grid: &FineGrid, f: &DgField) -> Vec<f64> {
    (0..grid.n_cells()).map(|c| f.cell_mean(c)).collect()
}

/// Vertex values of a DG field: corner traces averaged over the adjacent
/// cells.
pub fn vertex_values(grid: &FineGrid, f: &DgField) -> Vec<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut values = vec![0.0; (nx + 1) * (ny + 1)];
    let mut counts = vec![0u32; (nx + 1) * (ny + 1)];
    for c in 0..grid.n_cells() {
        let (i, j) = grid.cell_ij(c);
        let corners = f.corner_values(c);
        // corner order: (-x,-y), (+x,-y), (-x,+y), (+x,+y)
        let nodes = [
            j * (nx + 1) + i,
            j * (nx + 1) + i + 1,
            (j + 1) * (nx + 1) + i,
            (j + 1) * (nx + 1) + i + 1,
        ];
        for (n, v) in nodes.iter().zip(corners) {
            values[*n] += v;
            counts[*n] += 1;
        }
    }
    for (v, c) in values.iter_mut().zip(counts) {
        *v /= c as f64;
    }
    values
}

/// Write a legacy VTK rectilinear-grid file with named cell fields and
/// optional point fields. Non-finite values are refused.
pub fn write_vtk(
    path: &Path,
    grid: &FineGrid,
    cell_fields: &[(&str, &[f64])],
    point_fields: &[(&str, &[f64])],
) -> Result<()> {
    for (name, values) in cell_fields {
        if values.len() != grid.n_cells() {
            return Err(Error::Config(format!(
                "cell field {name:?} has {} values for {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "cell field {name:?} has a non-finite value at cell {pos}"
            )));
        }
    }
    let n_points = (grid.nx + 1) * (grid.ny + 1);
    for (name, values) in point_fields {
        if values.len() != n_points {
            return Err(Error::Config(format!(
                "point field {name:?} has {} values for {n_points} points",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "point field {name:?} has a non-finite value at point {pos}"
            )));
        }
    }

    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "two-phase flow fields")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET RECTILINEAR_GRID")?;
    writeln!(w, "DIMENSIONS {} {} 1", grid.nx + 1, grid.ny + 1)?;
    writeln!(w, "X_COORDINATES {} double", grid.nx + 1)?;
    let xs: Vec<String> = (0..=grid.nx).map(|i| format!("{}", i as f64 * grid.hx)).collect();
    writeln!(w, "{}", xs.join(" "))?;
    writeln!(w, "Y_COORDINATES {} double", grid.ny + 1)?;
    let ys: Vec<String> = (0..=grid.ny).map(|j| format!("{}", j as f64 * grid.hy)).collect();
    writeln!(w, "{}", ys.join(" "))?;
    writeln!(w, "Z_COORDINATES 1 double")?;
    writeln!(w, "0")?;

    if !cell_fields.is_empty() {
        writeln!(w, "CELL_DATA {}", grid.n_cells())?;
        for (name, values) in cell_fields {
            writeln!(w, "SCALARS {name} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for row in values.chunks(grid.nx) {
                let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
        }
    }
    if !point_fields.is_empty() {
        writeln!(w, "POINT_DATA {n_points}")?;
        for (name, values) in point_fields {
            writeln!(w, "SCALARS {name} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for row in values.chunks(grid.nx + 1) {
                let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
