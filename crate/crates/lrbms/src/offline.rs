//! Offline pipeline: mobility profiles, training snapshots, greedy basis
//! construction, optional per-cell compression and unit functions, and the
//! one-time operator projection, bundled into a reduced model plus a
//! build report.

use crate::error::{Error, Result};
use crate::field::DgField;
use crate::mesh::CoarseGrid;
use crate::mobility::{self, MobilityBasis};
use crate::rom::{
    add_unit_functions, grid_checksum, greedy_build, pca_compress, precompute_offline,
    sample_training_set, solve_training_snapshots, BuildHistory, FineProblem, GreedyOpts,
    Localizer, ReducedModel,
};
use crate::scenario::{ProfileMode, RomConfig};
use crate::scheme::{run_high_dim, Simulation, Trajectory};
use crate::tof::solve_tof;
use crate::velocity::reconstruct_velocity_from_saturation;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Build statistics, written as the offline report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineReport {
    pub coarse_nx: usize,
    pub coarse_ny: usize,
    pub profiles: usize,
    pub training_count: usize,
    pub snapshot_count: usize,
    pub basis_sizes_greedy: Vec<usize>,
    pub basis_sizes_final: Vec<usize>,
    pub n_total: usize,
    pub max_errors: Vec<f64>,
    pub used_pca: bool,
    pub unit_basis: bool,
    pub seconds_profiles: f64,
    pub seconds_fine_snapshots: f64,
    pub seconds_greedy: f64,
    pub seconds_pca: f64,
    pub seconds_projection: f64,
}

/// Saturation states feeding the profile construction.
pub enum ProfileSource<'a> {
    /// Time-of-flight level sets of the initial state.
    TimeOfFlight,
    /// Stored fine saturation states (at least two).
    Saturations(&'a [DgField]),
}

/// Mobility profiles for a simulation, following the configured mode.
pub fn build_profiles(
    sim: &Simulation,
    cfg: &RomConfig,
    source: &ProfileSource,
) -> Result<MobilityBasis> {
    match source {
        ProfileSource::TimeOfFlight => {
            let (lam_w, lam_n, _) =
                mobility::linear_mobilities(&sim.s0, sim.fluids.mu_w, sim.fluids.mu_n);
            let p0 = crate::pressure::solve_pressure(
                &sim.grid, &sim.perm, &sim.fd, &lam_w, &lam_n, &sim.fluids, &sim.q1, sim.degree,
                sim.solver, None,
            )?;
            let u0 = reconstruct_velocity_from_saturation(
                &sim.grid, &sim.perm, &sim.fd, &p0, &sim.s0, &sim.fluids,
            );
            let tof = solve_tof(&sim.grid, &u0, &sim.poro, sim.degree)?;
            mobility::profiles_from_tof(
                &sim.grid,
                &tof,
                cfg.profiles,
                sim.dt * sim.n_steps as f64,
                sim.fluids.mu_w,
                sim.fluids.mu_n,
            )
        }
        ProfileSource::Saturations(sats) => {
            mobility::profiles_from_snapshots(&sim.grid, sats, sim.fluids.mu_w, sim.fluids.mu_n)
        }
    }
}

/// Pick M equally spaced saturation states (including the initial and
/// final ones) out of a recorded run.
pub fn snapshot_saturations(traj: &Trajectory, n_steps: usize, m: usize) -> Result<Vec<DgField>> {
    if m < 2 {
        return Err(Error::Config(format!("at least 2 profile saturations are required, got {m}")));
    }
    let mut out = Vec::with_capacity(m);
    for q in 0..m {
        let target = ((q as f64) * n_steps as f64 / (m - 1) as f64).round() as usize;
        if target == 0 {
            out.push(traj.initial_saturation.clone());
            continue;
        }
        let rec = traj
            .records
            .iter()
            .min_by_key(|r| r.step.abs_diff(target))
            .ok_or_else(|| Error::Config("run has no recorded steps".into()))?;
        out.push(rec.saturation.clone());
    }
    Ok(out)
}

/// Run the whole offline phase for a scenario's simulation.
///
/// `profile_sats`: saturation states for the snapshot profile mode; when
/// absent in that mode, a fine reference run is executed first.
pub fn build_reduced_model(
    sim: &Simulation,
    coarse_nx: usize,
    coarse_ny: usize,
    cfg: &RomConfig,
    profile_sats: Option<&[DgField]>,
) -> Result<(ReducedModel, OfflineReport)> {
    let coarse = CoarseGrid::new(&sim.grid, coarse_nx, coarse_ny)?;
    let loc = Localizer::new(&sim.grid, &coarse, sim.degree);

    let t0 = Instant::now();
    let owned_sats;
    let mobility_basis = match (cfg.profile_mode, profile_sats) {
        (ProfileMode::Tof, _) => build_profiles(sim, cfg, &ProfileSource::TimeOfFlight)?,
        (ProfileMode::Snapshots, Some(sats)) => {
            build_profiles(sim, cfg, &ProfileSource::Saturations(sats))?
        }
        (ProfileMode::Snapshots, None) => {
            log::info!("snapshot profile mode without stored saturations: running the fine scheme once");
            let reference = run_high_dim(sim)?;
            owned_sats = snapshot_saturations(&reference, sim.n_steps, cfg.profiles)?;
            build_profiles(sim, cfg, &ProfileSource::Saturations(&owned_sats))?
        }
    };
    let seconds_profiles = t0.elapsed().as_secs_f64();

    let fp = FineProblem {
        grid: &sim.grid,
        k: &sim.perm,
        fd: &sim.fd,
        fluids: &sim.fluids,
        q1: &sim.q1,
        degree: sim.degree,
        solver: sim.solver,
    };
    let train = sample_training_set(mobility_basis.len(), cfg.training_count, cfg.seed);

    let t0 = Instant::now();
    let cache = solve_training_snapshots(&fp, &mobility_basis, &train, cfg.threads)?;
    let seconds_fine_snapshots = t0.elapsed().as_secs_f64();

    let opts = GreedyOpts {
        eps_tol: cfg.eps_tol,
        n_max: cfg.n_max,
        reject_tol: 1e-10,
        threads: cfg.threads,
    };
    let t0 = Instant::now();
    let greedy = greedy_build(&fp, &mobility_basis, &coarse, &train, &cache, &opts)?;
    let seconds_greedy = t0.elapsed().as_secs_f64();

    let sizes_greedy = greedy.basis.sizes();
    let t0 = Instant::now();
    let mut basis = if cfg.use_pca {
        pca_compress(&loc, &greedy.snapshots, cfg.eps_pca)
    } else {
        greedy.basis
    };
    let sizes_pca = cfg.use_pca.then(|| basis.sizes());
    let seconds_pca = t0.elapsed().as_secs_f64();

    if cfg.unit_basis {
        basis = add_unit_functions(&loc, &basis, 1e-10);
    }
    let basis_sizes_final = basis.sizes();

    let history = BuildHistory {
        snapshot_indices: greedy.snapshot_indices,
        max_errors: greedy.max_errors.clone(),
        sizes_greedy: sizes_greedy.clone(),
        sizes_pca,
    };
    let checksum = grid_checksum(&sim.grid, &sim.perm, &sim.poro, sim.degree, sim.c_base);

    let t0 = Instant::now();
    let model = precompute_offline(
        &sim.grid,
        &sim.perm,
        &sim.fd,
        &sim.fluids,
        &sim.q1,
        basis,
        &loc,
        mobility_basis,
        history,
        (checksum, coarse_nx, coarse_ny),
    );
    let seconds_projection = t0.elapsed().as_secs_f64();

    let report = OfflineReport {
        coarse_nx,
        coarse_ny,
        profiles: cfg.profiles,
        training_count: cfg.training_count,
        snapshot_count: model.history.snapshot_indices.len(),
        basis_sizes_greedy: sizes_greedy,
        basis_sizes_final,
        n_total: model.n(),
        max_errors: greedy.max_errors,
        used_pca: cfg.use_pca,
        unit_basis: cfg.unit_basis,
        seconds_profiles,
        seconds_fine_snapshots,
        seconds_greedy,
        seconds_pca,
        seconds_projection,
    };
    Ok((model, report))
}
