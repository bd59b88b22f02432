//! CSV artifact writers.
//!
//! All floats are printed with nine significant digits in scientific
//! notation, so identical inputs produce byte-identical files.

use std::io::{self, Write};

use crate::model::NetworkModel;
use crate::scenario::{CaseRun, CompareResult, SweepResult};
use crate::sim::{SimResult, SystemState};
use crate::EscTrace;

/// Nine-significant-digit scientific formatting.
pub fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Trajectory CSV: `t,f_hz,df_hz` per sample, plus one frequency column per
/// device when the state history is supplied.
pub fn write_trajectory(
    w: &mut impl Write,
    result: &SimResult,
    per_device: Option<&NetworkModel>,
) -> io::Result<()> {
    let traj = &result.trajectory;
    write!(w, "t,f_hz,df_hz")?;
    if let Some(model) = per_device {
        for sg in &model.sgs {
            write!(w, ",f_sg_bus{}_hz", sg.bus)?;
        }
        for gfm in &model.gfms {
            write!(w, ",f_gfm_bus{}_hz", gfm.bus)?;
        }
    }
    writeln!(w)?;
    for (k, (t, f)) in traj.times().zip(traj.samples.iter()).enumerate() {
        write!(w, "{},{},{}", sig9(t), sig9(*f), sig9(f - traj.f_nom))?;
        if per_device.is_some() {
            let state: &SystemState = &result.states[k];
            for sg in &state.sg_states {
                write!(w, ",{}", sig9(sg.frequency * traj.f_nom))?;
            }
            for gfm in &state.gfm_states {
                write!(w, ",{}", sig9(gfm.frequency * traj.f_nom))?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

pub const METRICS_HEADER: &str = "droop,e_avg,r_mean,r_max,f_final,j_total";

/// One metrics row: `droop,e_avg,r_mean,r_max,f_final,j_total`.
pub fn write_metrics_row(
    w: &mut impl Write,
    droop: f64,
    metrics: &crate::metrics::PerformanceMetrics,
    j_total: f64,
) -> io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{}",
        sig9(droop),
        sig9(metrics.e_avg),
        sig9(metrics.r_mean),
        sig9(metrics.r_max),
        sig9(metrics.f_final),
        sig9(j_total)
    )
}

/// Sweep CSV: the metrics header plus one row per successful grid point.
/// Failed points go to the failures sidecar, not here.
pub fn write_sweep(w: &mut impl Write, sweep: &SweepResult) -> io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for point in &sweep.points {
        if let Ok(eval) = &point.outcome {
            write_metrics_row(w, point.droop, &eval.metrics, eval.j_total)?;
        }
    }
    Ok(())
}

/// Optimizer trace CSV: `iter,droop,cost,epsilon,dwell`.
pub fn write_esc_trace(w: &mut impl Write, trace: &EscTrace) -> io::Result<()> {
    writeln!(w, "iter,droop,cost,epsilon,dwell")?;
    for row in &trace.rows {
        writeln!(
            w,
            "{},{},{},{:+},{}",
            row.iteration,
            sig9(row.droop),
            sig9(row.cost),
            row.epsilon,
            sig9(row.dwell)
        )?;
    }
    Ok(())
}

/// Switching-case trace CSV: the optimizer trace plus the active segment and
/// its sweep-argmin reference.
pub fn write_case(w: &mut impl Write, run: &CaseRun) -> io::Result<()> {
    writeln!(w, "iter,droop,cost,epsilon,dwell,segment,segment_argmin")?;
    for row in &run.rows {
        writeln!(
            w,
            "{},{},{},{:+},{},{},{}",
            row.iteration,
            sig9(row.droop),
            sig9(row.cost),
            row.epsilon,
            sig9(row.dwell),
            row.segment,
            sig9(row.segment_argmin)
        )?;
    }
    Ok(())
}

/// One entry of the failures sidecar.
#[derive(Debug, Clone)]
pub struct FailureRow {
    /// Which artifact the failure belongs to (e.g. `sweep`, `esc`, `case`).
    pub context: String,
    pub droop: Option<f64>,
    pub iteration: Option<usize>,
    pub error: String,
}

/// Failures sidecar CSV: `context,droop,iteration,error`.
pub fn write_failures(w: &mut impl Write, rows: &[FailureRow]) -> io::Result<()> {
    writeln!(w, "context,droop,iteration,error")?;
    for row in rows {
        let droop = row.droop.map(sig9).unwrap_or_default();
        let iter = row.iteration.map(|i| i.to_string()).unwrap_or_default();
        let error = row.error.replace(['\n', ','], ";");
        writeln!(w, "{},{},{},{}", row.context, droop, iter, error)?;
    }
    Ok(())
}

/// Collect sweep failures into sidecar rows.
pub fn sweep_failures(context: &str, sweep: &SweepResult) -> Vec<FailureRow> {
    sweep
        .failures()
        .map(|(droop, err)| FailureRow {
            context: context.to_string(),
            droop: Some(droop),
            iteration: None,
            error: err.to_string(),
        })
        .collect()
}

/// Comparison summary CSV: one metrics row per side, with a leading label.
pub fn write_compare_summary(w: &mut impl Write, result: &CompareResult) -> io::Result<()> {
    writeln!(w, "side,{METRICS_HEADER}")?;
    for (label, side) in [("a", &result.a), ("b", &result.b)] {
        match &side.outcome {
            Ok((eval, _)) => {
                write!(w, "{label},")?;
                write_metrics_row(w, side.droop, &eval.metrics, eval.j_total)?;
            }
            Err(e) => {
                let msg = e.to_string().replace(['\n', ','], ";");
                writeln!(w, "{label},{},,,,,{msg}", sig9(side.droop))?;
            }
        }
    }
    Ok(())
}
