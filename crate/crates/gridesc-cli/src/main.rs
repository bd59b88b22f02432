//! `gridesc` — scripted grid-transient experiments from the command line.
//!
//! One subcommand per experiment pattern:
//!
//! - `simulate` — one disturbance run at a fixed droop; trajectory + metrics
//! - `sweep`    — score a droop grid; cost curve CSV
//! - `esc`      — run the extremum-seeking optimizer on one scenario
//! - `case`     — optimizer run across topology-switching segments
//! - `compare`  — two fixed droop values side by side
//!
//! All outputs are CSV files in `--out`; every run is reproducible from
//! `(model, config, seed)`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gridesc::config::RunConfig;
use gridesc::esc::esc_run;
use gridesc::export;
use gridesc::model::NetworkModel;
use gridesc::scenario::{
    compare_fixed, run_case, sweep_droop, ScenarioRunner, ScenarioSpec,
};

#[derive(Parser)]
#[command(name = "gridesc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Network model file (TOML).
    #[arg(long)]
    model: PathBuf,
    /// Experiment configuration file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured disturbance once and export the trajectory.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Homogeneous droop for all inverters (default: the model's values).
        #[arg(long)]
        droop: Option<f64>,
        /// Add one frequency column per device to the trajectory CSV.
        #[arg(long)]
        per_device: bool,
    },
    /// Evaluate the cost over the configured droop grid.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Evaluate grid points sequentially instead of in parallel.
        #[arg(long)]
        sequential: bool,
    },
    /// Run the extremum-seeking optimizer on the configured scenario.
    Esc {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the optimizer across the configured topology-switching segments.
    Case {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Simulate two fixed droop values with identical disturbances.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        droop_a: f64,
        #[arg(long)]
        droop_b: f64,
        /// Add per-device columns to both trajectory CSVs.
        #[arg(long)]
        per_device: bool,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { common, droop, per_device } => simulate(&common, droop, per_device),
        Command::Sweep { common, sequential } => sweep(&common, !sequential),
        Command::Esc { common } => esc(&common),
        Command::Case { common } => case(&common),
        Command::Compare { common, droop_a, droop_b, per_device } => {
            compare(&common, droop_a, droop_b, per_device)
        }
    }
}

struct Setup {
    config: RunConfig,
    scenario: ScenarioSpec,
    out: PathBuf,
}

fn load(common: &CommonArgs) -> Result<Setup> {
    let model = NetworkModel::load(&common.model)
        .with_context(|| format!("loading model {}", common.model.display()))?;
    let config = match &common.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    let mut scenario = config.scenario(model)?;
    if let Some(seed) = common.seed {
        scenario.seed = seed;
    }
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating output directory {}", common.out.display()))?;
    Ok(Setup { config, scenario, out: common.out.clone() })
}

fn runner_for(setup: &Setup) -> Result<ScenarioRunner> {
    let cfg = &setup.config;
    Ok(ScenarioRunner::new(
        setup.scenario.clone(),
        cfg.sim_options(),
        cfg.weights,
        cfg.metric_config(),
        (cfg.esc.x_min, cfg.esc.x_max),
        cfg.auto_normalize(),
    )?)
}

fn csv(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn simulate(common: &CommonArgs, droop: Option<f64>, per_device: bool) -> Result<()> {
    let setup = load(common)?;
    let runner = runner_for(&setup)?;
    let droop = droop.unwrap_or_else(|| {
        // Without an override, take the model's configured droop (they are
        // homogeneous in the bundled system; otherwise the first one).
        setup.scenario.model.gfms.first().map(|g| g.p_droop).unwrap_or(0.0125)
    });
    let (eval, result) = runner.evaluate_with_sim(droop)?;

    let traj_path = setup.out.join("trajectory.csv");
    let mut w = csv(&traj_path)?;
    let model = runner.spec().applied_model()?;
    export::write_trajectory(&mut w, &result, per_device.then_some(&model))?;
    w.flush()?;

    let metrics_path = setup.out.join("metrics.csv");
    let mut w = csv(&metrics_path)?;
    writeln!(w, "{}", export::METRICS_HEADER)?;
    export::write_metrics_row(&mut w, droop, &eval.metrics, eval.j_total)?;
    w.flush()?;

    println!(
        "simulate: droop {:.6}, E_avg {:.6e}, R_mean {:.6e} Hz/s, R_max {:.6e} Hz/s, \
         F_final {:.6e} Hz, J {:.6}",
        droop, eval.metrics.e_avg, eval.metrics.r_mean, eval.metrics.r_max,
        eval.metrics.f_final, eval.j_total
    );
    println!("wrote {} and {}", traj_path.display(), metrics_path.display());
    Ok(())
}

fn sweep(common: &CommonArgs, parallel: bool) -> Result<()> {
    let setup = load(common)?;
    let runner = runner_for(&setup)?;
    let grid = setup.config.droop_grid();
    let result = sweep_droop(&runner, &grid, parallel);

    let sweep_path = setup.out.join("sweep.csv");
    let mut w = csv(&sweep_path)?;
    export::write_sweep(&mut w, &result)?;
    w.flush()?;

    let failures = export::sweep_failures("sweep", &result);
    if !failures.is_empty() {
        let failures_path = setup.out.join("failures.csv");
        let mut w = csv(&failures_path)?;
        export::write_failures(&mut w, &failures)?;
        w.flush()?;
        println!("{} grid point(s) failed; see {}", failures.len(), failures_path.display());
    }

    match result.argmin() {
        Some(best) => {
            let eval = best.outcome.as_ref().unwrap();
            println!(
                "sweep: {} points, argmin droop {:.6} with J {:.6}",
                grid.len(),
                best.droop,
                eval.j_total
            );
        }
        None => bail!("every grid point failed"),
    }
    println!("wrote {}", sweep_path.display());
    Ok(())
}

fn esc(common: &CommonArgs) -> Result<()> {
    let setup = load(common)?;
    let runner = runner_for(&setup)?;
    let cfg = setup.config.esc_config();
    let mut iteration = 0u64;
    let trace = esc_run(
        |droop| {
            iteration += 1;
            runner
                .evaluate_iteration(droop, Some(iteration))
                .map(|(eval, _)| eval.j_total)
                .map_err(|e| e.to_string())
        },
        &cfg,
        setup.config.esc.x0,
        setup.config.esc.iterations,
    )?;

    let trace_path = setup.out.join("esc_trace.csv");
    let mut w = csv(&trace_path)?;
    export::write_esc_trace(&mut w, &trace)?;
    w.flush()?;

    if let Some((iter, msg)) = &trace.failure {
        let failures_path = setup.out.join("failures.csv");
        let mut w = csv(&failures_path)?;
        export::write_failures(
            &mut w,
            &[export::FailureRow {
                context: "esc".into(),
                droop: None,
                iteration: Some(*iter),
                error: msg.clone(),
            }],
        )?;
        w.flush()?;
        println!("trace truncated at iteration {iter}: {msg}");
    }
    if let Some(last) = trace.rows.last() {
        println!(
            "esc: {} iteration(s), final droop {:.6}, final cost {:.6}",
            trace.rows.len(),
            last.droop,
            last.cost
        );
    }
    println!("wrote {}", trace_path.display());
    Ok(())
}

fn case(common: &CommonArgs) -> Result<()> {
    let setup = load(common)?;
    let cfg = &setup.config;
    let mut case = cfg.case(setup.scenario.model.clone())?;
    if let Some(seed) = common.seed {
        for segment in &mut case.segments {
            segment.scenario.seed = seed;
        }
    }
    let run = run_case(
        &case,
        &cfg.sim_options(),
        &cfg.weights,
        &cfg.metric_config(),
        &cfg.droop_grid(),
    )?;

    let case_path = setup.out.join("case_trace.csv");
    let mut w = csv(&case_path)?;
    export::write_case(&mut w, &run)?;
    w.flush()?;

    if let Some((iter, msg)) = &run.failure {
        let failures_path = setup.out.join("failures.csv");
        let mut w = csv(&failures_path)?;
        export::write_failures(
            &mut w,
            &[export::FailureRow {
                context: "case".into(),
                droop: None,
                iteration: Some(*iter),
                error: msg.clone(),
            }],
        )?;
        w.flush()?;
        println!("case truncated at iteration {iter}: {msg}");
    }
    println!(
        "case: {} iteration(s) over {} segment(s); per-segment argmin: {:?}",
        run.rows.len(),
        run.segment_argmins.len(),
        run.segment_argmins
    );
    println!("wrote {}", case_path.display());
    Ok(())
}

fn compare(common: &CommonArgs, droop_a: f64, droop_b: f64, per_device: bool) -> Result<()> {
    let setup = load(common)?;
    let runner = runner_for(&setup)?;
    let result = compare_fixed(&runner, droop_a, droop_b);
    let model = runner.spec().applied_model()?;

    let mut failures = Vec::new();
    for (label, side) in [("a", &result.a), ("b", &result.b)] {
        match &side.outcome {
            Ok((eval, sim)) => {
                let path = setup.out.join(format!("compare_{label}.csv"));
                let mut w = csv(&path)?;
                export::write_trajectory(&mut w, sim, per_device.then_some(&model))?;
                w.flush()?;
                println!(
                    "compare {label}: droop {:.6}, J {:.6}, F_final {:.6e} Hz -> {}",
                    side.droop,
                    eval.j_total,
                    eval.metrics.f_final,
                    path.display()
                );
            }
            Err(e) => {
                println!("compare {label}: droop {:.6} failed: {e}", side.droop);
                failures.push(export::FailureRow {
                    context: format!("compare_{label}"),
                    droop: Some(side.droop),
                    iteration: None,
                    error: e.to_string(),
                });
            }
        }
    }

    let summary_path = setup.out.join("compare_summary.csv");
    let mut w = csv(&summary_path)?;
    export::write_compare_summary(&mut w, &result)?;
    w.flush()?;
    if !failures.is_empty() {
        let failures_path = setup.out.join("failures.csv");
        let mut w = csv(&failures_path)?;
        export::write_failures(&mut w, &failures)?;
        w.flush()?;
    }
    println!("wrote {}", summary_path.display());
    Ok(())
}
