//! Transient-performance metrics and the weighted total cost.
//!
//! Four quantities summarize a disturbance response, all computed from the
//! sampled frequency signal in Hz:
//!
//! - average energy flow `E_avg = (1/T) Σ (v/2)·Δf(t_i)²` with `T = N·dt`,
//! - mean rate of change of frequency `R_mean = (1/(N-1)) Σ |Δf_i|/dt`,
//! - maximum rate of change of frequency `R_max = max |Δf_i|/dt`,
//! - final fluctuation height `F_final = max |f - f_nom|` over the trailing
//!   fraction of the window.
//!
//! The total cost is `J = Σ w_k · metric_k / ref_k`; with unit references it
//! reduces to the plain weighted sum.

use crate::sim::FrequencyTrajectory;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    /// Virtual inertia constant scaling the energy term.
    pub v_inertia: f64,
    /// Nominal frequency (Hz). Must match the trajectory's.
    pub f_nom: f64,
    /// Fraction of the window that counts as "final" for the settling metric.
    pub final_fraction: f64,
    /// Per-metric normalization references (E_avg, R_mean, R_max, F_final).
    pub normalization_refs: [f64; 4],
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            v_inertia: 1.0,
            f_nom: 60.0,
            final_fraction: 0.2,
            normalization_refs: [1.0; 4],
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.v_inertia > 0.0) {
            return Err(MetricsError::BadConfig("v_inertia must be > 0".into()));
        }
        if !(self.final_fraction > 0.0 && self.final_fraction < 1.0) {
            return Err(MetricsError::BadConfig(
                "final_fraction must lie in (0, 1)".into(),
            ));
        }
        if self.normalization_refs.iter().any(|r| !(*r > 0.0)) {
            return Err(MetricsError::BadConfig(
                "normalization references must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// The four metric values for one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformanceMetrics {
    /// Average energy flow (energy per second).
    pub e_avg: f64,
    /// Mean RoCoF (Hz/s).
    pub r_mean: f64,
    /// Maximum RoCoF (Hz/s).
    pub r_max: f64,
    /// Final fluctuation height (Hz).
    pub f_final: f64,
}

impl PerformanceMetrics {
    pub fn as_array(&self) -> [f64; 4] {
        [self.e_avg, self.r_mean, self.r_max, self.f_final]
    }
}

/// Weights of the four cost terms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { w1: 6.0, w2: 1.0, w3: 0.0015, w4: 35.0 }
    }
}

impl CostWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.w1, self.w2, self.w3, self.w4]
    }

    pub fn from_array(w: [f64; 4]) -> Self {
        Self { w1: w[0], w2: w[1], w3: w[2], w4: w[3] }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let w = self.as_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(MetricsError::BadConfig(
                "weights must be finite and >= 0".into(),
            ));
        }
        if w.iter().all(|x| *x == 0.0) {
            return Err(MetricsError::BadConfig("weights cannot all be zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("invalid metric configuration: {0}")]
    BadConfig(String),
    #[error("trajectory needs at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("empty final window")]
    EmptyFinalWindow,
    #[error("no interior optimum under perturbed weight {weight_index}")]
    NoInteriorOptimum { weight_index: usize },
    #[error("sweep failed under perturbed weight {weight_index}: {reason}")]
    SweepFailed { weight_index: usize, reason: String },
}

/// Average energy flow of the deviation signal. The averaging period is
/// `N·dt`, the span of signal the N samples stand for.
pub fn energy_avg(traj: &FrequencyTrajectory, cfg: &MetricConfig) -> f64 {
    let t = traj.len() as f64 * traj.dt;
    if t == 0.0 {
        return 0.0;
    }
    let sum: f64 = traj.deviations().map(|d| 0.5 * cfg.v_inertia * d * d).sum();
    sum / t
}

/// Mean absolute sample-to-sample frequency slope (Hz/s).
pub fn rocof_mean(traj: &FrequencyTrajectory) -> Result<f64, MetricsError> {
    if traj.len() < 2 {
        return Err(MetricsError::TooShort { needed: 2, got: traj.len() });
    }
    let sum: f64 = traj
        .samples
        .windows(2)
        .map(|w| (w[1] - w[0]).abs() / traj.dt)
        .sum();
    Ok(sum / (traj.len() - 1) as f64)
}

/// Largest absolute sample-to-sample frequency slope (Hz/s).
pub fn rocof_max(traj: &FrequencyTrajectory) -> Result<f64, MetricsError> {
    if traj.len() < 2 {
        return Err(MetricsError::TooShort { needed: 2, got: traj.len() });
    }
    Ok(traj
        .samples
        .windows(2)
        .map(|w| (w[1] - w[0]).abs() / traj.dt)
        .fold(0.0, f64::max))
}

/// Largest deviation from nominal over the trailing `final_fraction` of the
/// window: samples with `t >= t1 + (1 - fraction)·(t2 - t1)`.
pub fn final_fluctuation(
    traj: &FrequencyTrajectory,
    cfg: &MetricConfig,
) -> Result<f64, MetricsError> {
    let (t1, t2) = traj.window;
    let start = t1 + (1.0 - cfg.final_fraction) * (t2 - t1);
    let mut best: Option<f64> = None;
    for (t, d) in traj.times().zip(traj.deviations()) {
        if t >= start - 1e-12 {
            let mag = d.abs();
            best = Some(best.map_or(mag, |b: f64| b.max(mag)));
        }
    }
    best.ok_or(MetricsError::EmptyFinalWindow)
}

/// All four metrics of one trajectory.
pub fn compute_metrics(
    traj: &FrequencyTrajectory,
    cfg: &MetricConfig,
) -> Result<PerformanceMetrics, MetricsError> {
    Ok(PerformanceMetrics {
        e_avg: energy_avg(traj, cfg),
        r_mean: rocof_mean(traj)?,
        r_max: rocof_max(traj)?,
        f_final: final_fluctuation(traj, cfg)?,
    })
}

/// Weighted, normalized total cost.
pub fn total_cost(metrics: &PerformanceMetrics, weights: &CostWeights, cfg: &MetricConfig) -> f64 {
    let m = metrics.as_array();
    let w = weights.as_array();
    let r = cfg.normalization_refs;
    (0..4).map(|k| w[k] * m[k] / r[k]).sum()
}

/// Result of perturbing one weight both ways.
#[derive(Debug)]
pub struct WeightSensitivity {
    /// Index of the perturbed weight (0..=3).
    pub weight_index: usize,
    /// `|Δx*| / (x_range · Δw/w)`, averaged over the ± perturbations.
    pub value: Result<f64, MetricsError>,
}

/// Sensitivity of the optimal droop to each cost weight.
///
/// `argmin` maps a weight set to the cost-minimizing droop (typically a grid
/// sweep followed by local refinement); it reports `Err` when no interior
/// optimum exists. Each weight is perturbed by `±perturbation` relative and
/// the resulting optimum shift is normalized by `x_range · perturbation`.
pub fn weight_sensitivity<F>(
    mut argmin: F,
    weights: &CostWeights,
    perturbation: f64,
    x_range: f64,
) -> Vec<WeightSensitivity>
where
    F: FnMut(&CostWeights) -> Result<f64, String>,
{
    let base = weights.as_array();
    let mut out = Vec::with_capacity(4);
    if perturbation == 0.0 {
        // No perturbation, no shift.
        for k in 0..4 {
            out.push(WeightSensitivity { weight_index: k, value: Ok(0.0) });
        }
        return out;
    }
    let x_base = match argmin(weights) {
        Ok(x) => x,
        Err(reason) => {
            for k in 0..4 {
                out.push(WeightSensitivity {
                    weight_index: k,
                    value: Err(MetricsError::SweepFailed { weight_index: k, reason: reason.clone() }),
                });
            }
            return out;
        }
    };
    for k in 0..4 {
        let mut shifts = Vec::with_capacity(2);
        let mut failure: Option<MetricsError> = None;
        for sign in [1.0, -1.0] {
            let mut w = base;
            w[k] *= 1.0 + sign * perturbation;
            match argmin(&CostWeights::from_array(w)) {
                Ok(x) => shifts.push((x - x_base).abs()),
                Err(reason) => {
                    failure =
                        Some(MetricsError::SweepFailed { weight_index: k, reason });
                    break;
                }
            }
        }
        let value = match failure {
            Some(e) => Err(e),
            None => {
                let mean_shift = shifts.iter().sum::<f64>() / shifts.len() as f64;
                Ok(mean_shift / (x_range * perturbation))
            }
        };
        out.push(WeightSensitivity { weight_index: k, value });
    }
    out
}
