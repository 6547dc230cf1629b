//! Sequential two-phase flow loops and run comparison.
//!
//! The fine loop per step: pressure solve with the current mobilities,
//! conservative velocity reconstruction, explicit saturation update, slope
//! limiter. The reduced loop replaces the pressure solve by a mobility
//! coefficient fit plus a small dense solve and a basis expansion; the
//! saturation always lives on the fine grid.

use crate::error::{Error, Result};
use crate::field::{broken_norms, CellScalarField, DgField};
use crate::linalg::cg_solve;
use crate::mesh::{CoarseGrid, FineGrid};
use crate::mobility::{fit_theta, linear_mobilities};
use crate::pressure::{
    assemble_bilinear, assemble_rhs, build_face_data, FaceData, FluidProps, SolverOpts,
};
use crate::rom::{grid_checksum, reconstruct, reduced_solve, Localizer, ReducedModel};
use crate::transport::{limit, saturation_step};
use crate::velocity::{reconstruct_velocity, FaceFluxField};
use std::time::Instant;

/// A fully assembled fine-grid problem plus time discretization.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub grid: FineGrid,
    pub perm: CellScalarField,
    pub poro: CellScalarField,
    pub fluids: FluidProps,
    pub q1: DgField,
    pub q2: DgField,
    /// Projected initial saturation.
    pub s0: DgField,
    pub dt: f64,
    pub n_steps: usize,
    pub degree: usize,
    pub c_base: f64,
    pub fd: Vec<FaceData>,
    pub solver: SolverOpts,
    /// Record every this-many steps (the final step is always recorded).
    pub output_every: usize,
}

impl Simulation {
    pub fn checksum(&self) -> u64 {
        grid_checksum(&self.grid, &self.perm, &self.poro, self.degree, self.c_base)
    }

    pub fn rebuild_face_data(&mut self) {
        self.fd = build_face_data(
            &self.grid,
            &self.perm,
            self.c_base,
            self.fluids.mu_w,
            self.fluids.mu_n,
        );
    }
}

/// State recorded after one time step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// 1-based step index (state at t = step * dt).
    pub step: usize,
    pub pressure: DgField,
    pub saturation: DgField,
    pub velocity: FaceFluxField,
    /// Mobility fit coefficients (reduced runs only).
    pub theta: Option<Vec<f64>>,
}

/// Wall-clock seconds per phase, accumulated over all steps.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseTimings {
    pub assembly: f64,
    pub pressure_solve: f64,
    pub velocity: f64,
    pub transport: f64,
    pub limiter: f64,
    pub theta_fit: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.assembly
            + self.pressure_solve
            + self.velocity
            + self.transport
            + self.limiter
            + self.theta_fit
    }
}

/// Per-run bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub timings: PhaseTimings,
    /// max |u| dt / (phi h) observed over the run.
    pub cfl_max: f64,
    /// Extremes of the saturation cell means over the whole run.
    pub saturation_min: f64,
    pub saturation_max: f64,
    /// Extremes of the pointwise (cell corner) saturation values.
    pub saturation_point_min: f64,
    pub saturation_point_max: f64,
}

/// A recorded run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial_saturation: DgField,
    pub records: Vec<StepRecord>,
    pub metrics: RunMetrics,
}

fn fresh_metrics() -> RunMetrics {
    RunMetrics {
        saturation_min: f64::INFINITY,
        saturation_max: f64::NEG_INFINITY,
        saturation_point_min: f64::INFINITY,
        saturation_point_max: f64::NEG_INFINITY,
        ..Default::default()
    }
}

fn cfl_number(sim: &Simulation, u: &FaceFluxField) -> f64 {
    let h = sim.grid.hx.min(sim.grid.hy);
    let mut worst = 0.0f64;
    for (fid, face) in sim.grid.faces().iter().enumerate() {
        let mut phi = sim.poro[face.cell1];
        if let Some(c2) = face.cell2 {
            phi = phi.min(sim.poro[c2]);
        }
        worst = worst.max(u.values()[fid].abs() * sim.dt / (phi * h));
    }
    worst
}

fn track_range(metrics: &mut RunMetrics, s: &DgField) {
    for c in 0..s.n_cells() {
        let mean = s.cell_mean(c);
        metrics.saturation_min = metrics.saturation_min.min(mean);
        metrics.saturation_max = metrics.saturation_max.max(mean);
        for v in s.corner_values(c) {
            metrics.saturation_point_min = metrics.saturation_point_min.min(v);
            metrics.saturation_point_max = metrics.saturation_point_max.max(v);
        }
    }
}

fn should_record(sim: &Simulation, step: usize) -> bool {
    step % sim.output_every.max(1) == 0 || step == sim.n_steps
}

/// Run the fine-grid two-phase flow scheme.
pub fn run_high_dim(sim: &Simulation) -> Result<Trajectory> {
    let mut metrics = fresh_metrics();
    let mut records = Vec::new();
    let mut s = sim.s0.clone();
    track_range(&mut metrics, &s);
    let mut warm: Option<DgField> = None;
    let mut cfl_warned = false;

    for n in 0..sim.n_steps {
        let (lam_w, lam_n, lam_t) = linear_mobilities(&s, sim.fluids.mu_w, sim.fluids.mu_n);

        let t0 = Instant::now();
        let a = assemble_bilinear(&sim.grid, &sim.perm, &sim.fd, &lam_t, sim.degree);
        let rhs = assemble_rhs(
            &sim.grid, &sim.perm, &sim.fd, &lam_w, &lam_n, &sim.fluids, &sim.q1, sim.degree,
        );
        metrics.timings.assembly += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let x = cg_solve(
            &a,
            &rhs,
            warm.as_ref().map(|f| f.coeffs()),
            sim.solver.tol,
            sim.solver.max_iter,
        )
        .map_err(|e| step_error(n, e))?;
        let p = DgField::from_coeffs(sim.degree, sim.grid.n_cells(), x);
        metrics.timings.pressure_solve += t0.elapsed().as_secs_f64();
        warm = Some(p.clone());

        let t0 = Instant::now();
        let u = reconstruct_velocity(&sim.grid, &sim.perm, &sim.fd, &p, &lam_w, &lam_n, &sim.fluids);
        metrics.timings.velocity += t0.elapsed().as_secs_f64();

        step_transport(sim, &mut s, &u, &mut metrics, &mut cfl_warned, n)?;

        if should_record(sim, n + 1) {
            records.push(StepRecord {
                step: n + 1,
                pressure: p,
                saturation: s.clone(),
                velocity: u,
                theta: None,
            });
        }
    }
    Ok(Trajectory { initial_saturation: sim.s0.clone(), records, metrics })
}

/// Run the reduced two-phase flow scheme against a prebuilt model.
pub fn run_lrbms(sim: &Simulation, model: &ReducedModel) -> Result<Trajectory> {
    if model.checksum != sim.checksum() {
        return Err(Error::Config(
            "reduced model does not match this scenario (grid/field checksum differs)".into(),
        ));
    }
    if model.degree != sim.degree {
        return Err(Error::Config(format!(
            "reduced model degree {} does not match scenario degree {}",
            model.degree, sim.degree
        )));
    }
    let coarse = CoarseGrid::new(&sim.grid, model.coarse_nx, model.coarse_ny)?;
    let loc = Localizer::new(&sim.grid, &coarse, sim.degree);

    let mut metrics = fresh_metrics();
    let mut records = Vec::new();
    let mut s = sim.s0.clone();
    track_range(&mut metrics, &s);
    let mut cfl_warned = false;

    for n in 0..sim.n_steps {
        let t0 = Instant::now();
        let fit = fit_theta(&sim.grid, &s, &model.mobility, sim.fluids.mu_w, sim.fluids.mu_n);
        metrics.timings.theta_fit += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let p_n = reduced_solve(model, &fit.theta).map_err(|e| step_error(n, e))?;
        let p = reconstruct(&sim.grid, &loc, &model.basis, &p_n);
        metrics.timings.pressure_solve += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let (lam_w, lam_n, _) = linear_mobilities(&s, sim.fluids.mu_w, sim.fluids.mu_n);
        let u = reconstruct_velocity(&sim.grid, &sim.perm, &sim.fd, &p, &lam_w, &lam_n, &sim.fluids);
        metrics.timings.velocity += t0.elapsed().as_secs_f64();

        step_transport(sim, &mut s, &u, &mut metrics, &mut cfl_warned, n)?;

        if should_record(sim, n + 1) {
            records.push(StepRecord {
                step: n + 1,
                pressure: p,
                saturation: s.clone(),
                velocity: u,
                theta: Some(fit.theta),
            });
        }
    }
    Ok(Trajectory { initial_saturation: sim.s0.clone(), records, metrics })
}

fn step_transport(
    sim: &Simulation,
    s: &mut DgField,
    u: &FaceFluxField,
    metrics: &mut RunMetrics,
    cfl_warned: &mut bool,
    n: usize,
) -> Result<()> {
    let cfl = cfl_number(sim, u);
    metrics.cfl_max = metrics.cfl_max.max(cfl);
    if cfl > 1.0 && !*cfl_warned {
        log::warn!("CFL number {cfl:.2} exceeds 1 at step {n}; the explicit transport may be unstable");
        *cfl_warned = true;
    }

    let t0 = Instant::now();
    let candidate = saturation_step(
        &sim.grid, &sim.poro, &sim.perm, &sim.fd, &sim.fluids, sim.dt, &sim.q2, s, u,
    );
    metrics.timings.transport += t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    *s = limit(&sim.grid, &candidate, u);
    metrics.timings.limiter += t0.elapsed().as_secs_f64();
    track_range(metrics, s);
    Ok(())
}

fn step_error(step: usize, e: Error) -> Error {
    match e {
        Error::Convergence { iterations, residual } => Error::Numerical(format!(
            "pressure solve failed at step {step}: no convergence after {iterations} iterations (residual {residual:.3e})"
        )),
        Error::ReducedSolve { theta, reason } => Error::Numerical(format!(
            "reduced solve failed at step {step} for theta {theta:?}: {reason}"
        )),
        other => other,
    }
}

/// Relative discrepancies of one recorded step.
#[derive(Debug, Clone, Copy)]
pub struct StepDiscrepancy {
    pub step: usize,
    pub s_l2: f64,
    pub s_h1: f64,
    pub p_l2: f64,
    pub p_h1: f64,
}

/// Comparison of two runs on the same grid and cadence.
#[derive(Debug, Clone)]
pub struct CompareMetrics {
    pub steps: Vec<StepDiscrepancy>,
    pub mean_s_l2: f64,
    pub mean_s_h1: f64,
    pub mean_p_l2: f64,
    pub mean_p_h1: f64,
    pub end_s_l2: f64,
    pub end_s_h1: f64,
    pub end_p_l2: f64,
    pub end_p_h1: f64,
    /// Relative mass loss per cell for the second run's final velocity.
    pub mass_loss: Vec<f64>,
    pub mass_loss_max: f64,
}

fn relative(diff: (f64, f64), reference: (f64, f64)) -> (f64, f64) {
    let guard = |d: f64, r: f64| if r > 0.0 { d / r } else { d };
    (guard(diff.0, reference.0), guard(diff.1, reference.1))
}

/// Per-step relative L2/broken-H1 discrepancies between a reference run
/// and a second run, plus the mass-loss field of the second run.
pub fn compare_runs(grid: &FineGrid, reference: &Trajectory, other: &Trajectory) -> Result<CompareMetrics> {
    if reference.records.len() != other.records.len() {
        return Err(Error::Config(format!(
            "runs record different step counts ({} vs {})",
            reference.records.len(),
            other.records.len()
        )));
    }
    let mut steps = Vec::with_capacity(reference.records.len());
    for (a, b) in reference.records.iter().zip(&other.records) {
        if a.step != b.step {
            return Err(Error::Config(format!(
                "runs record different steps ({} vs {})",
                a.step, b.step
            )));
        }
        let (s_l2, s_h1) = relative(
            broken_norms(grid, &a.saturation.sub(&b.saturation)),
            broken_norms(grid, &a.saturation),
        );
        let (p_l2, p_h1) = relative(
            broken_norms(grid, &a.pressure.sub(&b.pressure)),
            broken_norms(grid, &a.pressure),
        );
        steps.push(StepDiscrepancy { step: a.step, s_l2, s_h1, p_l2, p_h1 });
    }
    let count = steps.len().max(1) as f64;
    let mean = |f: fn(&StepDiscrepancy) -> f64| steps.iter().map(f).sum::<f64>() / count;
    let last = steps.last().copied();
    let mass_loss = other
        .records
        .last()
        .map(|r| mass_loss_field(grid, &r.velocity))
        .unwrap_or_default();
    let mass_loss_max = mass_loss.iter().fold(0.0f64, |m, v| m.max(*v));
    Ok(CompareMetrics {
        mean_s_l2: mean(|s| s.s_l2),
        mean_s_h1: mean(|s| s.s_h1),
        mean_p_l2: mean(|s| s.p_l2),
        mean_p_h1: mean(|s| s.p_h1),
        end_s_l2: last.map(|s| s.s_l2).unwrap_or(0.0),
        end_s_h1: last.map(|s| s.s_h1).unwrap_or(0.0),
        end_p_l2: last.map(|s| s.p_l2).unwrap_or(0.0),
        end_p_h1: last.map(|s| s.p_h1).unwrap_or(0.0),
        mass_loss,
        mass_loss_max,
        steps,
    })
}

/// Relative mass loss per cell: |boundary flux sum| normalized by the
/// largest facewise velocity magnitude; zero-velocity cells report zero.
pub fn mass_loss_field(grid: &FineGrid, u: &FaceFluxField) -> Vec<f64> {
    (0..grid.n_cells())
        .map(|c| {
            let mut net = 0.0;
            for cf in grid.cell_faces(c) {
                net += cf.outward_sign * u.values()[cf.face] * grid.face(cf.face).length;
            }
            let cv = u.cell_velocity(grid, c);
            let [bx, by] = grid.cell_center(c);
            let mut vmax = 0.0f64;
            for (dx, dy) in [(-0.5, 0.0), (0.5, 0.0), (0.0, -0.5), (0.0, 0.5)] {
                let v = cv.eval(bx + dx * grid.hx, by + dy * grid.hy);
                vmax = vmax.max(v[0].hypot(v[1]));
            }
            if vmax < 1e-14 {
                0.0
            } else {
                net.abs() / (vmax * grid.h())
            }
        })
        .collect()
}

/// Flux balance defect per coarse cell: boundary flux sum minus sources.
pub fn coarse_flux_balance(
    grid: &FineGrid,
    coarse: &CoarseGrid,
    u: &FaceFluxField,
    q1: &DgField,
) -> Vec<f64> {
    (0..coarse.n_cells())
        .map(|e| {
            let mut net = 0.0;
            for (fid, sign) in coarse.boundary_faces(grid, e) {
                net += sign * u.values()[fid] * grid.face(fid).length;
            }
            let sources: f64 = coarse
                .fine_cells(e)
                .iter()
                .map(|&c| grid.cell_area() * q1.cell_mean(c))
                .sum();
            net - sources
        })
        .collect()
}
