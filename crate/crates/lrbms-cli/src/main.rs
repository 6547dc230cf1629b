//! Command-line driver: fine and reduced two-phase flow runs, offline
//! basis construction, time-of-flight fields, run comparison, and a
//! one-shot benchmark pipeline.
//!
//! Exit codes: 2 configuration errors, 3 numerical failures, 4 I/O.

use clap::{Args, Parser, Subcommand};
use lrbms::error::Error;
use lrbms::io::{load_trajectory_with_grid, save_trajectory};
use lrbms::mesh::CoarseGrid;
use lrbms::offline::{build_reduced_model, snapshot_saturations, OfflineReport};
use lrbms::rom::{load_model, save_model, ReducedModel};
use lrbms::scenario::{parse_scenario, ProfileMode, Scenario};
use lrbms::scheme::{
    coarse_flux_balance, compare_runs, run_high_dim, run_lrbms, CompareMetrics, Simulation,
    Trajectory,
};
use lrbms::vtk::{cell_means, write_vtk};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "lrbms",
    version,
    about = "Two-phase porous-media flow with a reduced-basis pressure solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the fine-grid two-phase flow scheme.
    RunHd(RunArgs),
    /// Build the reduced pressure model (offline phase).
    Offline(OfflineArgs),
    /// Run the two-phase flow scheme with a reduced pressure model.
    RunRb(RunRbArgs),
    /// Compare two recorded runs and write per-step discrepancies.
    Compare(CompareArgs),
    /// Solve the steady time-of-flight field for the initial state.
    Tof(TofArgs),
    /// Full pipeline: fine run, offline build, reduced run, comparison.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Output directory.
    #[arg(short, long, default_value = "out-hd")]
    output: PathBuf,
}

#[derive(Args)]
struct OfflineArgs {
    scenario: PathBuf,
    /// Model container to write.
    #[arg(short, long)]
    output: PathBuf,
    /// Build report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RunRbArgs {
    scenario: PathBuf,
    /// Reduced model container.
    #[arg(short, long)]
    model: PathBuf,
    #[arg(short, long, default_value = "out-rb")]
    output: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Reference run (trajectory container).
    run_a: PathBuf,
    /// Second run.
    run_b: PathBuf,
    /// Metrics CSV to write.
    #[arg(short, long, default_value = "metrics.csv")]
    output: PathBuf,
}

#[derive(Args)]
struct TofArgs {
    scenario: PathBuf,
    /// VTK file to write.
    #[arg(short, long, default_value = "tof.vtk")]
    output: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    scenario: PathBuf,
    #[arg(short, long, default_value = "out-bench")]
    output: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::RunHd(args) => cmd_run_hd(&args),
        Command::Offline(args) => cmd_offline(&args),
        Command::RunRb(args) => cmd_run_rb(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::Tof(args) => cmd_tof(&args),
        Command::Bench(args) => cmd_bench(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(scenario_path: &Path) -> Result<(Scenario, Simulation), Error> {
    let scenario = parse_scenario(scenario_path)?;
    let base = scenario_path.parent().unwrap_or(Path::new("."));
    let sim = scenario.build(base)?;
    Ok((scenario, sim))
}

#[derive(Serialize)]
struct RunSummary {
    steps: usize,
    dt: f64,
    cfl_max: f64,
    saturation_mean_min: f64,
    saturation_mean_max: f64,
    saturation_point_min: f64,
    saturation_point_max: f64,
    seconds_assembly: f64,
    seconds_pressure_solve: f64,
    seconds_velocity: f64,
    seconds_transport: f64,
    seconds_limiter: f64,
    seconds_theta_fit: f64,
}

impl RunSummary {
    fn new(sim: &Simulation, traj: &Trajectory) -> Self {
        let m = &traj.metrics;
        RunSummary {
            steps: sim.n_steps,
            dt: sim.dt,
            cfl_max: m.cfl_max,
            saturation_mean_min: m.saturation_min,
            saturation_mean_max: m.saturation_max,
            saturation_point_min: m.saturation_point_min,
            saturation_point_max: m.saturation_point_max,
            seconds_assembly: m.timings.assembly,
            seconds_pressure_solve: m.timings.pressure_solve,
            seconds_velocity: m.timings.velocity,
            seconds_transport: m.timings.transport,
            seconds_limiter: m.timings.limiter,
            seconds_theta_fit: m.timings.theta_fit,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("cannot encode {}: {e}", path.display())))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn save_run(dir: &Path, sim: &Simulation, traj: &Trajectory) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    save_trajectory(&dir.join("trajectory.bin"), &sim.grid, traj)?;
    write_json(&dir.join("summary.json"), &RunSummary::new(sim, traj))?;
    if let Some(last) = traj.records.last() {
        let s = cell_means(&sim.grid, &last.saturation);
        let p = cell_means(&sim.grid, &last.pressure);
        let loss = lrbms::scheme::mass_loss_field(&sim.grid, &last.velocity);
        write_vtk(
            &dir.join("final.vtk"),
            &sim.grid,
            &[
                ("saturation", &s),
                ("pressure", &p),
                ("permeability", sim.perm.values()),
                ("porosity", sim.poro.values()),
                ("mass_loss", &loss),
            ],
            &[],
        )?;
    }
    Ok(())
}

fn warn_cfl(traj: &Trajectory) {
    if traj.metrics.cfl_max > 1.0 {
        eprintln!(
            "warning: max |u| dt / (phi h) = {:.2} exceeds 1; the explicit transport may be unstable",
            traj.metrics.cfl_max
        );
    }
}

fn cmd_run_hd(args: &RunArgs) -> Result<(), Error> {
    let (_, sim) = load(&args.scenario)?;
    let traj = run_high_dim(&sim)?;
    warn_cfl(&traj);
    save_run(&args.output, &sim, &traj)?;
    println!(
        "fine run complete: {} steps, CFL max {:.3}, outputs in {}",
        sim.n_steps,
        traj.metrics.cfl_max,
        args.output.display()
    );
    Ok(())
}

fn build_model_for(
    scenario: &Scenario,
    sim: &Simulation,
    hd: Option<&Trajectory>,
) -> Result<(ReducedModel, OfflineReport), Error> {
    let sats_storage;
    let sats: Option<&[_]> = match (scenario.rom.profile_mode, hd) {
        (ProfileMode::Snapshots, Some(traj)) => {
            sats_storage = snapshot_saturations(traj, sim.n_steps, scenario.rom.profiles)?;
            Some(&sats_storage)
        }
        _ => None,
    };
    build_reduced_model(
        sim,
        scenario.geometry.coarse_nx,
        scenario.geometry.coarse_ny,
        &scenario.rom,
        sats,
    )
}

fn cmd_offline(args: &OfflineArgs) -> Result<(), Error> {
    let (scenario, sim) = load(&args.scenario)?;
    let (model, report) = build_model_for(&scenario, &sim, None)?;
    save_model(&args.output, &model)?;
    if let Some(report_path) = &args.report {
        write_json(report_path, &report)?;
    }
    println!(
        "offline phase complete: {} snapshots, basis size {} on a {} x {} coarse grid, model in {}",
        report.snapshot_count,
        report.n_total,
        report.coarse_nx,
        report.coarse_ny,
        args.output.display()
    );
    Ok(())
}

fn cmd_run_rb(args: &RunRbArgs) -> Result<(), Error> {
    let (_, sim) = load(&args.scenario)?;
    let model = load_model(&args.model)?;
    let traj = run_lrbms(&sim, &model)?;
    warn_cfl(&traj);
    save_run(&args.output, &sim, &traj)?;
    println!(
        "reduced run complete: {} steps with a basis of size {}, outputs in {}",
        sim.n_steps,
        model.n(),
        args.output.display()
    );
    Ok(())
}

fn write_metrics_csv(path: &Path, metrics: &CompareMetrics) -> Result<(), Error> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "step,e_l2_s,e_h1_s,e_l2_p,e_h1_p")?;
    for row in &metrics.steps {
        writeln!(out, "{},{},{},{},{}", row.step, row.s_l2, row.s_h1, row.p_l2, row.p_h1)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CompareSummary {
    mean_s_l2: f64,
    mean_s_h1: f64,
    mean_p_l2: f64,
    mean_p_h1: f64,
    end_s_l2: f64,
    end_s_h1: f64,
    end_p_l2: f64,
    end_p_h1: f64,
    mass_loss_max: f64,
}

impl From<&CompareMetrics> for CompareSummary {
    fn from(m: &CompareMetrics) -> Self {
        CompareSummary {
            mean_s_l2: m.mean_s_l2,
            mean_s_h1: m.mean_s_h1,
            mean_p_l2: m.mean_p_l2,
            mean_p_h1: m.mean_p_h1,
            end_s_l2: m.end_s_l2,
            end_s_h1: m.end_s_h1,
            end_p_l2: m.end_p_l2,
            end_p_h1: m.end_p_h1,
            mass_loss_max: m.mass_loss_max,
        }
    }
}

fn cmd_compare(args: &CompareArgs) -> Result<(), Error> {
    let (grid_a, traj_a) = load_trajectory_with_grid(&args.run_a)?;
    let (grid_b, traj_b) = load_trajectory_with_grid(&args.run_b)?;
    if grid_a.nx != grid_b.nx || grid_a.ny != grid_b.ny {
        return Err(Error::Config(format!(
            "runs live on different grids ({} x {} vs {} x {})",
            grid_a.nx, grid_a.ny, grid_b.nx, grid_b.ny
        )));
    }
    let metrics = compare_runs(&grid_a, &traj_a, &traj_b)?;
    write_metrics_csv(&args.output, &metrics)?;
    println!(
        "mean discrepancies: saturation L2 {:.4e}, H1 {:.4e}; pressure L2 {:.4e}, H1 {:.4e}",
        metrics.mean_s_l2, metrics.mean_s_h1, metrics.mean_p_l2, metrics.mean_p_h1
    );
    println!("metrics written to {}", args.output.display());
    Ok(())
}

fn cmd_tof(args: &TofArgs) -> Result<(), Error> {
    let (_, sim) = load(&args.scenario)?;
    let (lam_w, lam_n, _) =
        lrbms::mobility::linear_mobilities(&sim.s0, sim.fluids.mu_w, sim.fluids.mu_n);
    let p0 = lrbms::pressure::solve_pressure(
        &sim.grid, &sim.perm, &sim.fd, &lam_w, &lam_n, &sim.fluids, &sim.q1, sim.degree,
        sim.solver, None,
    )?;
    let u0 = lrbms::velocity::reconstruct_velocity(
        &sim.grid, &sim.perm, &sim.fd, &p0, &lam_w, &lam_n, &sim.fluids,
    );
    let tof = lrbms::tof::solve_tof(&sim.grid, &u0, &sim.poro, sim.degree)?;
    let means = cell_means(&sim.grid, &tof);
    write_vtk(&args.output, &sim.grid, &[("time_of_flight", &means)], &[])?;
    println!("time-of-flight field written to {}", args.output.display());
    Ok(())
}

#[derive(Serialize)]
struct BenchReport {
    offline: OfflineReport,
    discrepancies: CompareSummary,
    hd: RunSummary,
    rb: RunSummary,
    /// Seconds per fine pressure step (assembly plus solve) over seconds
    /// per online pressure step (fit, reduced solve, expansion).
    online_pressure_speedup: f64,
    /// Largest relative coarse-cell flux imbalance of the reduced run,
    /// with the velocity reconstructed at the fitted mobilities.
    coarse_balance_max: f64,
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Error> {
    let (scenario, sim) = load(&args.scenario)?;
    std::fs::create_dir_all(&args.output)?;

    println!("[1/4] fine reference run");
    let hd = run_high_dim(&sim)?;
    warn_cfl(&hd);
    save_run(&args.output.join("hd"), &sim, &hd)?;

    println!("[2/4] offline basis construction");
    let (model, report) = build_model_for(&scenario, &sim, Some(&hd))?;
    save_model(&args.output.join("model.json"), &model)?;
    write_json(&args.output.join("offline_report.json"), &report)?;

    println!("[3/4] reduced run");
    let rb = run_lrbms(&sim, &model)?;
    save_run(&args.output.join("rb"), &sim, &rb)?;

    println!("[4/4] comparison");
    let metrics = compare_runs(&sim.grid, &hd, &rb)?;
    write_metrics_csv(&args.output.join("metrics.csv"), &metrics)?;

    // coarse-cell flux balance of the reduced run, evaluated with the
    // fitted mobilities the reduced solve used
    let coarse = CoarseGrid::new(&sim.grid, model.coarse_nx, model.coarse_ny)?;
    let mut coarse_balance_max = 0.0f64;
    if let Some(rec) = rb.records.last() {
        if let Some(theta) = &rec.theta {
            let (lw, ln, _) = lrbms::mobility::parametrized_mobilities(theta, &model.mobility);
            let u_fit = lrbms::velocity::reconstruct_velocity(
                &sim.grid, &sim.perm, &sim.fd, &rec.pressure, &lw, &ln, &sim.fluids,
            );
            let scale = (u_fit.max_abs() * sim.grid.h()).max(1e-300);
            for d in coarse_flux_balance(&sim.grid, &coarse, &u_fit, &sim.q1) {
                coarse_balance_max = coarse_balance_max.max(d.abs() / scale);
            }
        }
    }

    let hd_pressure = hd.metrics.timings.assembly + hd.metrics.timings.pressure_solve;
    let rb_pressure = rb.metrics.timings.theta_fit + rb.metrics.timings.pressure_solve;
    let speedup = if rb_pressure > 0.0 { hd_pressure / rb_pressure } else { f64::INFINITY };

    let bench = BenchReport {
        offline: report,
        discrepancies: CompareSummary::from(&metrics),
        hd: RunSummary::new(&sim, &hd),
        rb: RunSummary::new(&sim, &rb),
        online_pressure_speedup: speedup,
        coarse_balance_max,
    };
    write_json(&args.output.join("report.json"), &bench)?;

    println!(
        "bench complete: mean saturation L2 discrepancy {:.3e}, mean pressure L2 discrepancy {:.3e}",
        metrics.mean_s_l2, metrics.mean_p_l2
    );
    println!(
        "pressure phase speedup (fine vs online): {:.1}x; report in {}",
        speedup,
        args.output.join("report.json").display()
    );
    Ok(())
}
