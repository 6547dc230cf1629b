//! Compact binary container for recorded runs, so separate invocations can
//! be compared. Little-endian, versioned, exact float round-trip.

use crate::error::{Error, Result};
use crate::field::DgField;
use crate::mesh::FineGrid;
use crate::scheme::{RunMetrics, StepRecord, Trajectory};
use crate::velocity::FaceFluxField;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"LRBTRAJ\x01";

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_slice(w: &mut impl Write, values: &[f64]) -> Result<()> {
    write_u64(w, values.len() as u64)?;
    for &v in values {
        write_f64(w, v)?;
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_slice(r: &mut impl Read, cap: usize) -> Result<Vec<f64>> {
    let len = read_u64(r)? as usize;
    if len > cap {
        return Err(Error::Format(format!(
            "trajectory payload declares {len} values, more than the plausible {cap}"
        )));
    }
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(read_f64(r)?);
    }
    Ok(out)
}

/// Write a recorded trajectory next to its grid dimensions.
pub fn save_trajectory(path: &Path, grid: &FineGrid, traj: &Trajectory) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    write_u64(&mut w, grid.nx as u64)?;
    write_u64(&mut w, grid.ny as u64)?;
    write_f64(&mut w, grid.lx)?;
    write_f64(&mut w, grid.ly)?;
    write_u64(&mut w, traj.initial_saturation.degree() as u64)?;
    write_slice(&mut w, traj.initial_saturation.coeffs())?;
    write_u64(&mut w, traj.records.len() as u64)?;
    for rec in &traj.records {
        write_u64(&mut w, rec.step as u64)?;
        write_slice(&mut w, rec.pressure.coeffs())?;
        write_slice(&mut w, rec.saturation.coeffs())?;
        write_slice(&mut w, rec.velocity.values())?;
        match &rec.theta {
            Some(t) => {
                write_u64(&mut w, 1)?;
                write_slice(&mut w, t)?;
            }
            None => write_u64(&mut w, 0)?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a trajectory together with a grid rebuilt from its header (no
/// boundary data; sufficient for norms and flux bookkeeping).
pub fn load_trajectory_with_grid(path: &Path) -> Result<(FineGrid, Trajectory)> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{}: not a trajectory container", path.display())));
    }
    let nx = read_u64(&mut r)? as usize;
    let ny = read_u64(&mut r)? as usize;
    let lx = read_f64(&mut r)?;
    let ly = read_f64(&mut r)?;
    drop(r);
    let grid = FineGrid::new(lx, ly, nx, ny, crate::mesh::BoundarySpec::all_no_flow())?;
    let traj = load_trajectory(path, &grid)?;
    Ok((grid, traj))
}

/// Load a trajectory and check it belongs to the given grid.
pub fn load_trajectory(path: &Path, grid: &FineGrid) -> Result<Trajectory> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{}: not a trajectory container", path.display())));
    }
    let nx = read_u64(&mut r)? as usize;
    let ny = read_u64(&mut r)? as usize;
    let lx = read_f64(&mut r)?;
    let ly = read_f64(&mut r)?;
    if nx != grid.nx || ny != grid.ny || lx != grid.lx || ly != grid.ly {
        return Err(Error::Config(format!(
            "trajectory {} was recorded on a {nx} x {ny} grid over {lx} x {ly}, not this scenario's grid",
            path.display()
        )));
    }
    let degree = read_u64(&mut r)? as usize;
    if degree > 1 {
        return Err(Error::Format(format!("unsupported degree {degree}")));
    }
    let bs = DgField::block_size(degree);
    let n_dofs = grid.n_cells() * bs;
    let initial = read_slice(&mut r, n_dofs)?;
    if initial.len() != n_dofs {
        return Err(Error::Format("initial saturation has the wrong length".into()));
    }
    let n_records = read_u64(&mut r)? as usize;
    let mut records = Vec::with_capacity(n_records.min(1 << 20));
    for _ in 0..n_records {
        let step = read_u64(&mut r)? as usize;
        let pressure = read_slice(&mut r, n_dofs)?;
        let saturation = read_slice(&mut r, n_dofs)?;
        let velocity = read_slice(&mut r, grid.n_faces())?;
        if pressure.len() != n_dofs || saturation.len() != n_dofs || velocity.len() != grid.n_faces()
        {
            return Err(Error::Format(format!("record at step {step} has inconsistent sizes")));
        }
        let theta = match read_u64(&mut r)? {
            0 => None,
            1 => Some(read_slice(&mut r, 1 << 16)?),
            other => return Err(Error::Format(format!("bad theta tag {other}"))),
        };
        records.push(StepRecord {
            step,
            pressure: DgField::from_coeffs(degree, grid.n_cells(), pressure),
            saturation: DgField::from_coeffs(degree, grid.n_cells(), saturation),
            velocity: FaceFluxField::new(velocity),
            theta,
        });
    }
    Ok(Trajectory {
        initial_saturation: DgField::from_coeffs(degree, grid.n_cells(), initial),
        records,
        metrics: RunMetrics::default(),
    })
}
