//! Experiment orchestration: droop sweeps, switching cases, and fixed-droop
//! comparisons over scripted disturbance scenarios.
//!
//! A scenario is a base model, a set of branch removals, a disturbance
//! schedule and an analysis window. Evaluating a scenario at a droop value
//! runs the full pipeline: set every inverter's active-power droop to that
//! value, find the equilibrium, integrate through the disturbances, score
//! the trajectory and form the weighted cost.
//!
//! Metric normalization references are scenario-specific: the raw metric
//! values at the midpoint of the droop search range, computed once when the
//! runner is built.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::esc::{esc_init, esc_step, EscConfig, EscError};
use crate::metrics::{
    compute_metrics, total_cost, CostWeights, MetricConfig, MetricsError, PerformanceMetrics,
};
use crate::model::{ModelError, NetworkModel};
use crate::sim::{
    find_equilibrium, integrate, Disturbance, DisturbanceEvent, SimError, SimOptions, SimResult,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Esc(#[from] EscError),
    #[error("invalid harness input: {0}")]
    BadInput(String),
}

/// One scripted disturbance experiment on one topology.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub model: NetworkModel,
    /// Branches switched out relative to the base model, in order.
    pub branch_removals: Vec<(usize, usize)>,
    /// Disturbances applied in every evaluation, relative to window start.
    pub schedule: Vec<DisturbanceEvent>,
    pub window: (f64, f64),
    /// Seed for the optional per-iteration disturbance randomization.
    pub seed: u64,
    /// Flip the sign of load steps at random per iteration.
    pub randomize_sign: bool,
    /// Move load steps to a random load-carrying bus per iteration.
    pub randomize_bus: bool,
}

impl ScenarioSpec {
    /// A deterministic single-load-step scenario: one step of
    /// `fraction × total load` at `bus` (default: the largest load bus).
    pub fn load_step(
        name: impl Into<String>,
        model: NetworkModel,
        bus: Option<usize>,
        fraction: f64,
        at_time: f64,
        window: f64,
    ) -> Result<Self, HarnessError> {
        let target = bus
            .or_else(|| model.largest_load_bus())
            .ok_or_else(|| HarnessError::BadInput("model has no load to step".into()))?;
        let (total_p, _) = model.total_load();
        Ok(Self {
            name: name.into(),
            model,
            branch_removals: Vec::new(),
            schedule: vec![DisturbanceEvent {
                at_time,
                kind: Disturbance::LoadStep {
                    bus: target,
                    delta_p: fraction * total_p,
                    delta_q: 0.0,
                },
            }],
            window: (0.0, window),
            seed: 0,
            randomize_sign: false,
            randomize_bus: false,
        })
    }

    pub fn with_removals(mut self, removals: &[(usize, usize)]) -> Self {
        self.branch_removals = removals.to_vec();
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// The base model with this scenario's branch removals applied.
    pub fn applied_model(&self) -> Result<NetworkModel, ModelError> {
        let mut model = self.model.clone();
        for &(from, to) in &self.branch_removals {
            model = model.remove_branch(from, to)?;
        }
        Ok(model)
    }

    /// The disturbance schedule for one optimizer iteration. Without
    /// randomization this is the scripted schedule itself; with it, the
    /// load-step signs and/or target buses are drawn from a stream seeded by
    /// `(seed, iteration)`.
    pub fn events_for_iteration(
        &self,
        model: &NetworkModel,
        iteration: Option<u64>,
    ) -> Vec<DisturbanceEvent> {
        let Some(iter) = iteration else {
            return self.schedule.clone();
        };
        if !self.randomize_sign && !self.randomize_bus {
            return self.schedule.clone();
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.seed ^ iter.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let load_buses: Vec<usize> = model
            .buses
            .iter()
            .filter(|b| b.load_p > 0.0)
            .map(|b| b.id)
            .collect();
        self.schedule
            .iter()
            .map(|ev| {
                let kind = match ev.kind {
                    Disturbance::LoadStep { bus, delta_p, delta_q } => {
                        let bus = if self.randomize_bus && !load_buses.is_empty() {
                            load_buses[rng.random_range(0..load_buses.len())]
                        } else {
                            bus
                        };
                        let sign = if self.randomize_sign && rng.random_bool(0.5) {
                            -1.0
                        } else {
                            1.0
                        };
                        Disturbance::LoadStep {
                            bus,
                            delta_p: sign * delta_p,
                            delta_q: sign * delta_q,
                        }
                    }
                    other => other,
                };
                DisturbanceEvent { at_time: ev.at_time, kind }
            })
            .collect()
    }
}

/// One scored evaluation of a scenario at a droop value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub droop: f64,
    pub metrics: PerformanceMetrics,
    pub j_total: f64,
}

/// A scenario bound to its simulation/metric/weight configuration, with the
/// normalization references already computed.
pub struct ScenarioRunner {
    spec: ScenarioSpec,
    model: NetworkModel,
    sim: SimOptions,
    weights: CostWeights,
    metric_cfg: MetricConfig,
}

impl ScenarioRunner {
    /// Build a runner. `droop_range` is the search range whose midpoint
    /// defines the normalization references (unless `metric_base` already
    /// carries explicit non-unit references).
    pub fn new(
        spec: ScenarioSpec,
        sim: SimOptions,
        weights: CostWeights,
        metric_base: MetricConfig,
        droop_range: (f64, f64),
        auto_normalize: bool,
    ) -> Result<Self, HarnessError> {
        weights.validate()?;
        metric_base.validate()?;
        let model = spec.applied_model()?;
        let mut metric_cfg = MetricConfig { f_nom: model.base.f_nom, ..metric_base };
        let mut runner = Self { spec, model, sim, weights, metric_cfg };
        if auto_normalize {
            let midpoint = 0.5 * (droop_range.0 + droop_range.1);
            let reference = runner.evaluate(midpoint)?;
            for (slot, value) in metric_cfg
                .normalization_refs
                .iter_mut()
                .zip(reference.metrics.as_array())
            {
                *slot = value.max(1e-12);
            }
            runner.metric_cfg = metric_cfg;
        }
        Ok(runner)
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn metric_config(&self) -> &MetricConfig {
        &self.metric_cfg
    }

    pub fn weights(&self) -> &CostWeights {
        &self.weights
    }

    /// Score one droop value against the scripted disturbance.
    pub fn evaluate(&self, droop: f64) -> Result<Evaluation, HarnessError> {
        self.evaluate_iteration(droop, None).map(|(eval, _)| eval)
    }

    /// Score one droop value, with the full simulation result.
    pub fn evaluate_with_sim(&self, droop: f64) -> Result<(Evaluation, SimResult), HarnessError> {
        self.evaluate_iteration(droop, None)
    }

    /// Score one droop value for a specific optimizer iteration (engages the
    /// per-iteration disturbance randomization when the scenario enables it).
    pub fn evaluate_iteration(
        &self,
        droop: f64,
        iteration: Option<u64>,
    ) -> Result<(Evaluation, SimResult), HarnessError> {
        if !(droop > 0.0 && droop.is_finite()) {
            return Err(HarnessError::BadInput(format!(
                "droop must be positive and finite, got {droop}"
            )));
        }
        let mut model = self.model.clone();
        // One homogeneous droop drives every inverter.
        for gfm in &mut model.gfms {
            gfm.p_droop = droop;
        }
        let equilibrium = find_equilibrium(&model)?;
        let events = self.spec.events_for_iteration(&model, iteration);
        let result = integrate(&model, &equilibrium, &events, self.spec.window, &self.sim)?;
        let metrics = compute_metrics(&result.trajectory, &self.metric_cfg)?;
        let j_total = total_cost(&metrics, &self.weights, &self.metric_cfg);
        Ok((Evaluation { droop, metrics, j_total }, result))
    }
}

/// One grid point of a droop sweep.
#[derive(Debug)]
pub struct SweepPoint {
    pub droop: f64,
    pub outcome: Result<Evaluation, HarnessError>,
}

/// Ordered sweep results (one entry per grid point, failures included).
#[derive(Debug)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// The successful grid point with the lowest total cost.
    pub fn argmin(&self) -> Option<&SweepPoint> {
        self.points
            .iter()
            .filter(|p| p.outcome.is_ok())
            .min_by(|a, b| {
                let ja = a.outcome.as_ref().unwrap().j_total;
                let jb = b.outcome.as_ref().unwrap().j_total;
                ja.partial_cmp(&jb).unwrap()
            })
    }

    /// Grid argmin refined by a parabola through its neighbors. Errors when
    /// the minimum sits on the grid boundary (no interior optimum) or any
    /// neighbor failed.
    pub fn refined_argmin(&self) -> Result<f64, MetricsError> {
        let costs: Vec<Option<(f64, f64)>> = self
            .points
            .iter()
            .map(|p| p.outcome.as_ref().ok().map(|e| (p.droop, e.j_total)))
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in costs.iter().enumerate() {
            if let Some((_, j)) = c {
                if best.is_none() || *j < best.unwrap().1 {
                    best = Some((i, *j));
                }
            }
        }
        let (i, _) = best.ok_or(MetricsError::NoInteriorOptimum { weight_index: 0 })?;
        if i == 0 || i + 1 == costs.len() {
            return Err(MetricsError::NoInteriorOptimum { weight_index: 0 });
        }
        let (Some((xl, jl)), Some((xc, jc)), Some((xr, jr))) =
            (costs[i - 1], costs[i], costs[i + 1])
        else {
            return Err(MetricsError::NoInteriorOptimum { weight_index: 0 });
        };
        let denom = jl - 2.0 * jc + jr;
        if denom <= 0.0 {
            return Ok(xc);
        }
        let h = 0.5 * (xr - xl);
        Ok(xc + 0.5 * h * (jl - jr) / denom)
    }

    pub fn failures(&self) -> impl Iterator<Item = (f64, &HarnessError)> + '_ {
        self.points
            .iter()
            .filter_map(|p| p.outcome.as_ref().err().map(|e| (p.droop, e)))
    }
}

/// Evenly spaced droop grid over `[lo, hi]`.
pub fn droop_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Evaluate every grid point; failures are recorded in place and the sweep
/// continues. Grid points are independent, so `parallel` fans them out while
/// preserving input order in the result.
pub fn sweep_droop(runner: &ScenarioRunner, grid: &[f64], parallel: bool) -> SweepResult {
    let eval = |&droop: &f64| SweepPoint { droop, outcome: runner.evaluate(droop) };
    let points = if parallel {
        grid.par_iter().map(eval).collect()
    } else {
        grid.iter().map(eval).collect()
    };
    SweepResult { points }
}

/// A topology-switching optimization case: the optimizer keeps running while
/// the underlying scenario changes at segment boundaries.
pub struct CaseSpec {
    pub segments: Vec<CaseSegment>,
    pub esc: EscConfig,
    pub x0: f64,
}

pub struct CaseSegment {
    pub scenario: ScenarioSpec,
    /// Optimizer iterations spent in this segment.
    pub iterations: usize,
}

/// One row of a switching-case trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseRow {
    pub iteration: usize,
    /// 1-based segment counter.
    pub segment: usize,
    pub droop: f64,
    pub cost: f64,
    pub epsilon: i8,
    pub dwell: f64,
    /// Brute-force sweep argmin of this row's segment (reference column).
    pub segment_argmin: f64,
}

pub struct CaseRun {
    pub rows: Vec<CaseRow>,
    /// Sweep argmin per segment, same order as the segments.
    pub segment_argmins: Vec<f64>,
    /// Set when a segment evaluation failed: (iteration, diagnostic).
    pub failure: Option<(usize, String)>,
}

/// Run the optimizer across the case's segments. Each segment gets its own
/// normalization references; the optimizer state carries over the segment
/// boundaries untouched. The per-segment sweep argmin over `grid` is
/// computed as an independent reference.
pub fn run_case(
    case: &CaseSpec,
    sim: &SimOptions,
    weights: &CostWeights,
    metric_base: &MetricConfig,
    grid: &[f64],
) -> Result<CaseRun, HarnessError> {
    if case.segments.is_empty() {
        return Err(HarnessError::BadInput("case needs at least one segment".into()));
    }
    if case.segments.iter().any(|s| s.iterations == 0) {
        return Err(HarnessError::BadInput("segment durations must be > 0".into()));
    }
    case.esc.validate()?;
    let range = (case.esc.x_min, case.esc.x_max);

    let mut runners = Vec::with_capacity(case.segments.len());
    for segment in &case.segments {
        runners.push(ScenarioRunner::new(
            segment.scenario.clone(),
            *sim,
            *weights,
            *metric_base,
            range,
            true,
        )?);
    }
    let mut segment_argmins = Vec::with_capacity(runners.len());
    for runner in &runners {
        let sweep = sweep_droop(runner, grid, true);
        let best = sweep
            .argmin()
            .ok_or_else(|| HarnessError::BadInput("segment sweep found no feasible point".into()))?;
        segment_argmins.push(best.droop);
    }

    let mut state = esc_init(&case.esc, case.x0)?;
    let mut rows = Vec::new();
    let mut iteration = 0usize;
    for (seg_idx, segment) in case.segments.iter().enumerate() {
        let runner = &runners[seg_idx];
        for _ in 0..segment.iterations {
            iteration += 1;
            let cost = match runner.evaluate_iteration(state.x, Some(iteration as u64)) {
                Ok((eval, _)) => eval.j_total,
                Err(e) => {
                    return Ok(CaseRun {
                        rows,
                        segment_argmins,
                        failure: Some((iteration, e.to_string())),
                    });
                }
            };
            state = match esc_step(&state, cost, &case.esc) {
                Ok(s) => s,
                Err(e) => {
                    return Ok(CaseRun {
                        rows,
                        segment_argmins,
                        failure: Some((iteration, e.to_string())),
                    });
                }
            };
            rows.push(CaseRow {
                iteration,
                segment: seg_idx + 1,
                droop: state.x,
                cost,
                epsilon: state.epsilon,
                dwell: state.dwell,
                segment_argmin: segment_argmins[seg_idx],
            });
        }
    }
    Ok(CaseRun { rows, segment_argmins, failure: None })
}

/// Side-by-side outcome of one fixed-droop run.
pub struct CompareSide {
    pub droop: f64,
    pub outcome: Result<(Evaluation, SimResult), HarnessError>,
}

pub struct CompareResult {
    pub a: CompareSide,
    pub b: CompareSide,
}

/// Simulate the same scenario at two fixed droop values with identical
/// disturbances. Divergence is reported per run, not for the pair.
pub fn compare_fixed(runner: &ScenarioRunner, droop_a: f64, droop_b: f64) -> CompareResult {
    CompareResult {
        a: CompareSide { droop: droop_a, outcome: runner.evaluate_with_sim(droop_a) },
        b: CompareSide { droop: droop_b, outcome: runner.evaluate_with_sim(droop_b) },
    }
}

/// Sensitivity of the sweep-optimal droop to each cost weight.
///
/// The metric values per grid point do not depend on the weights, so the
/// grid is simulated once and re-scored under every perturbed weight set;
/// each re-scoring is a full grid re-optimization with a parabolic argmin
/// refinement on top (grid-quantized shifts would otherwise round small
/// sensitivities to zero).
pub fn sweep_weight_sensitivity(
    runner: &ScenarioRunner,
    grid: &[f64],
    perturbation: f64,
) -> Vec<crate::metrics::WeightSensitivity> {
    let sweep = sweep_droop(runner, grid, true);
    let cached: Vec<(f64, PerformanceMetrics)> = sweep
        .points
        .iter()
        .filter_map(|p| p.outcome.as_ref().ok().map(|e| (p.droop, e.metrics)))
        .collect();
    let cfg = *runner.metric_config();
    let x_range = grid.last().copied().unwrap_or(1.0) - grid.first().copied().unwrap_or(0.0);
    let argmin = |weights: &CostWeights| -> Result<f64, String> {
        if cached.len() < 3 {
            return Err("not enough feasible grid points".into());
        }
        let costs: Vec<(f64, f64)> = cached
            .iter()
            .map(|(x, m)| (*x, total_cost(m, weights, &cfg)))
            .collect();
        let (mut best, mut best_j) = (0usize, f64::INFINITY);
        for (i, (_, j)) in costs.iter().enumerate() {
            if *j < best_j {
                best_j = *j;
                best = i;
            }
        }
        if best == 0 || best + 1 == costs.len() {
            return Err("no interior optimum".into());
        }
        let (xl, jl) = costs[best - 1];
        let (xc, jc) = costs[best];
        let (xr, jr) = costs[best + 1];
        let denom = jl - 2.0 * jc + jr;
        if denom <= 0.0 {
            return Ok(xc);
        }
        Ok(xc + 0.25 * (xr - xl) * (jl - jr) / denom)
    };
    crate::metrics::weight_sensitivity(argmin, runner.weights(), perturbation, x_range)
}
