//! Relay-based extremum-seeking optimizer.
//!
//! A plant-agnostic hill descender: one cost measurement in, one bounded
//! droop update out. The relay direction `ε ∈ {+1, -1}` flips whenever the
//! cost increased since the previous measurement and at least `dwell_limit`
//! of dwell has accumulated since the last flip; the iterate then moves by
//! the fixed gain
//!
//! ```text
//! K = Δt · (x_max - x_min) / gain_divisor
//! ```
//!
//! and is clamped to the search bounds. On a convex cost the iterate settles
//! into a persistent limit cycle around the minimizer; that oscillation is
//! what keeps the optimizer responsive when the plant changes underneath it.
//!
//! The first step has no previous cost, so the difference is taken as zero
//! and no flip can occur. A plateau (exactly zero difference) does not flip
//! either; the iterate keeps walking in its current direction.

/// Search bounds and stepping constants.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EscConfig {
    /// Lower droop bound (pu).
    pub x_min: f64,
    /// Upper droop bound (pu).
    pub x_max: f64,
    /// Iteration step Δt, in disturbance events.
    pub dt: f64,
    /// Dwell required between direction flips, in the same units the dwell
    /// clock accumulates (Δt per iteration).
    pub dwell_limit: f64,
    /// Divisor of the search span in the gain formula; 10 makes each step
    /// 10% of `Δt·(x_max - x_min)`.
    pub gain_divisor: f64,
}

impl Default for EscConfig {
    fn default() -> Self {
        Self {
            x_min: 0.003,
            x_max: 0.022,
            dt: 1.0,
            dwell_limit: 1.0,
            gain_divisor: 10.0,
        }
    }
}

impl EscConfig {
    /// Step gain `K = Δt (x_max - x_min) / gain_divisor`.
    pub fn gain(&self) -> f64 {
        self.dt * (self.x_max - self.x_min) / self.gain_divisor
    }

    pub fn validate(&self) -> Result<(), EscError> {
        if !(self.x_min < self.x_max) {
            return Err(EscError::BadConfig(format!(
                "need x_min < x_max, got [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        if !(self.dt > 0.0) {
            return Err(EscError::BadConfig(format!("need dt > 0, got {}", self.dt)));
        }
        if !(self.dwell_limit >= 0.0) {
            return Err(EscError::BadConfig(format!(
                "need dwell_limit >= 0, got {}",
                self.dwell_limit
            )));
        }
        if !(self.gain_divisor > 0.0) {
            return Err(EscError::BadConfig(format!(
                "need gain_divisor > 0, got {}",
                self.gain_divisor
            )));
        }
        Ok(())
    }
}

/// Optimizer state between iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscState {
    /// Current droop value (pu), always within the configured bounds.
    pub x: f64,
    /// Relay direction, +1 or -1.
    pub epsilon: i8,
    /// Dwell accumulated since the last flip.
    pub dwell: f64,
    /// The previous cost measurement, absent before the first step.
    pub last_cost: Option<f64>,
    /// Step gain, fixed for the whole run.
    pub gain: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum EscError {
    #[error("invalid ESC configuration: {0}")]
    BadConfig(String),
    #[error("initial droop {x0} outside bounds [{x_min}, {x_max}]")]
    OutOfBounds { x0: f64, x_min: f64, x_max: f64 },
    #[error("cost measurement is not finite: {0}")]
    NonFiniteCost(f64),
}

/// Initialize the optimizer at `x0`: direction +1, dwell 0, no cost history.
pub fn esc_init(cfg: &EscConfig, x0: f64) -> Result<EscState, EscError> {
    cfg.validate()?;
    if !(x0 >= cfg.x_min && x0 <= cfg.x_max) {
        return Err(EscError::OutOfBounds { x0, x_min: cfg.x_min, x_max: cfg.x_max });
    }
    Ok(EscState { x: x0, epsilon: 1, dwell: 0.0, last_cost: None, gain: cfg.gain() })
}

/// One optimizer update from a cost measurement taken at the current `x`.
///
/// The state is a value type: the input is untouched, so a non-finite cost
/// simply leaves the caller holding the previous state.
pub fn esc_step(state: &EscState, cost: f64, cfg: &EscConfig) -> Result<EscState, EscError> {
    if !cost.is_finite() {
        return Err(EscError::NonFiniteCost(cost));
    }
    let mut next = *state;
    let g = match state.last_cost {
        Some(prev) => cost - prev,
        None => 0.0,
    };
    if g > 0.0 && state.dwell >= cfg.dwell_limit {
        next.epsilon = -state.epsilon;
        next.dwell = 0.0;
    }
    next.x = (next.x + f64::from(next.epsilon) * state.gain).clamp(cfg.x_min, cfg.x_max);
    next.dwell += cfg.dt;
    next.last_cost = Some(cost);
    Ok(next)
}

/// One row of an optimization trace: the state after the iteration's update,
/// alongside the cost that drove it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscTraceRow {
    /// 1-based iteration counter.
    pub iteration: usize,
    /// Droop after the update.
    pub droop: f64,
    /// Cost measured at the start of the iteration.
    pub cost: f64,
    pub epsilon: i8,
    pub dwell: f64,
}

/// A (possibly truncated) optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct EscTrace {
    pub rows: Vec<EscTraceRow>,
    /// Set when the plant failed mid-run: (iteration, diagnostic).
    pub failure: Option<(usize, String)>,
    /// State after the last completed iteration.
    pub final_state: Option<EscState>,
}

impl EscTrace {
    /// Droop values in iteration order.
    pub fn droops(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.droop)
    }
}

/// Run the optimizer against a plant: one plant evaluation per iteration,
/// then one update. A plant failure truncates the trace and records the
/// diagnostic instead of aborting.
pub fn esc_run<F, E>(
    mut plant: F,
    cfg: &EscConfig,
    x0: f64,
    iterations: usize,
) -> Result<EscTrace, EscError>
where
    F: FnMut(f64) -> Result<f64, E>,
    E: std::fmt::Display,
{
    let mut state = esc_init(cfg, x0)?;
    let mut rows = Vec::with_capacity(iterations);
    for iteration in 1..=iterations {
        let cost = match plant(state.x) {
            Ok(c) => c,
            Err(e) => {
                return Ok(EscTrace {
                    rows,
                    failure: Some((iteration, e.to_string())),
                    final_state: Some(state),
                });
            }
        };
        state = match esc_step(&state, cost, cfg) {
            Ok(s) => s,
            Err(e) => {
                return Ok(EscTrace {
                    rows,
                    failure: Some((iteration, e.to_string())),
                    final_state: Some(state),
                });
            }
        };
        rows.push(EscTraceRow {
            iteration,
            droop: state.x,
            cost,
            epsilon: state.epsilon,
            dwell: state.dwell,
        });
    }
    Ok(EscTrace { rows, failure: None, final_state: Some(state) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn paper_cfg() -> EscConfig {
        EscConfig::default()
    }

    #[test]
    fn gain_follows_the_span_formula() {
        // Δt = 1 over [0.003, 0.022]: K = 0.019/10 = 0.0019.
        let cfg = paper_cfg();
        assert!((cfg.gain() - 0.0019).abs() < 1e-18);
        let state = esc_init(&cfg, 0.0125).unwrap();
        assert_eq!(state.gain, cfg.gain());
    }

    #[test]
    fn init_starts_with_positive_relay() {
        for x0 in [0.003, 0.01, 0.022] {
            let s = esc_init(&paper_cfg(), x0).unwrap();
            assert_eq!(s.epsilon, 1);
            assert_eq!(s.dwell, 0.0);
            assert!(s.last_cost.is_none());
        }
    }

    #[test]
    fn out_of_bounds_start_rejected() {
        assert!(matches!(
            esc_init(&paper_cfg(), 0.0229),
            Err(EscError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn degenerate_bounds_rejected() {
        let cfg = EscConfig { x_min: 0.01, x_max: 0.01, ..paper_cfg() };
        assert!(matches!(esc_init(&cfg, 0.01), Err(EscError::BadConfig(_))));
    }

    #[test]
    fn first_step_never_flips() {
        let cfg = paper_cfg();
        let s0 = esc_init(&cfg, 0.01).unwrap();
        let s1 = esc_step(&s0, 123.4, &cfg).unwrap();
        assert_eq!(s1.epsilon, 1);
        assert!((s1.x - (0.01 + cfg.gain())).abs() < 1e-18);
        assert_eq!(s1.last_cost, Some(123.4));
    }

    #[test]
    fn rising_cost_with_enough_dwell_flips_and_resets() {
        let cfg = paper_cfg();
        let state = EscState {
            x: 0.01,
            epsilon: 1,
            dwell: 1.0,
            last_cost: Some(5.0),
            gain: cfg.gain(),
        };
        let next = esc_step(&state, 6.0, &cfg).unwrap();
        assert_eq!(next.epsilon, -1);
        // Dwell reset, then one Δt accumulated by this very step.
        assert_eq!(next.dwell, cfg.dt);
        assert!((next.x - (0.01 - cfg.gain())).abs() < 1e-18);
    }

    #[test]
    fn rising_cost_without_dwell_does_not_flip() {
        let cfg = paper_cfg();
        let state = EscState {
            x: 0.01,
            epsilon: 1,
            dwell: 0.0,
            last_cost: Some(5.0),
            gain: cfg.gain(),
        };
        let next = esc_step(&state, 6.0, &cfg).unwrap();
        assert_eq!(next.epsilon, 1);
    }

    #[test]
    fn iterate_clamps_exactly_to_the_bound() {
        let cfg = paper_cfg();
        let state = EscState {
            x: cfg.x_max - cfg.gain() / 2.0,
            epsilon: 1,
            dwell: 1.0,
            last_cost: Some(5.0),
            gain: cfg.gain(),
        };
        // Decreasing cost: no flip, step rides into the bound.
        let next = esc_step(&state, 4.0, &cfg).unwrap();
        assert_eq!(next.x, cfg.x_max);
    }

    #[test]
    fn non_finite_cost_is_rejected() {
        let cfg = paper_cfg();
        let s0 = esc_init(&cfg, 0.01).unwrap();
        assert!(matches!(
            esc_step(&s0, f64::NAN, &cfg),
            Err(EscError::NonFiniteCost(_))
        ));
    }

    #[test]
    fn constant_cost_walks_to_a_bound_and_parks() {
        let cfg = paper_cfg();
        let trace = esc_run(|_x| Ok::<_, String>(1.0), &cfg, 0.01, 60).unwrap();
        assert!(trace.failure.is_none());
        let last_rows: Vec<f64> = trace.droops().skip(40).collect();
        assert!(last_rows.iter().all(|&x| x == cfg.x_max));
    }

    #[test]
    fn plant_failure_truncates_with_diagnostic() {
        let cfg = paper_cfg();
        let mut calls = 0;
        let trace = esc_run(
            |_x| {
                calls += 1;
                if calls == 5 {
                    Err("diverged".to_string())
                } else {
                    Ok(1.0)
                }
            },
            &cfg,
            0.01,
            60,
        )
        .unwrap();
        assert_eq!(trace.rows.len(), 4);
        let (iter, msg) = trace.failure.unwrap();
        assert_eq!(iter, 5);
        assert!(msg.contains("diverged"));
    }

    /// Line-by-line replay of the update law, written independently of
    /// `esc_step`, driven by the closed-form cost (x - 0.012)².
    #[test]
    fn convex_cost_trace_matches_scripted_replay() {
        let cfg = paper_cfg();
        let k = cfg.gain();
        let cost = |x: f64| (x - 0.012) * (x - 0.012);

        // Scripted replay of the relay/integrator update.
        let mut xs = Vec::new();
        let mut x = 0.005;
        let mut eps = 1.0f64;
        let mut d = 0.0f64;
        let mut last: Option<f64> = None;
        for _ in 0..400 {
            let j = cost(x);
            let g = last.map_or(0.0, |p| j - p);
            if g > 0.0 && d >= cfg.dwell_limit {
                eps = -eps;
                d = 0.0;
            }
            x = (x + eps * k).clamp(cfg.x_min, cfg.x_max);
            d += cfg.dt;
            last = Some(j);
            xs.push(x);
        }

        let trace = esc_run(|x| Ok::<_, String>(cost(x)), &cfg, 0.005, 400).unwrap();
        let got: Vec<f64> = trace.droops().collect();
        assert_eq!(got, xs);

        // Once settled, the iterates stay within 2K of the minimizer.
        let band = got[200..].iter().all(|&x| (x - 0.012).abs() <= 2.0 * k + 1e-15);
        assert!(band, "late iterates escaped the 2K band");
    }

    proptest! {
        /// Bounds hold, steps are exactly K except at a clamp, and two flips
        /// are always separated by at least the dwell limit.
        #[test]
        fn trace_invariants_hold_for_arbitrary_cost_sequences(
            costs in proptest::collection::vec(-100.0f64..100.0, 1..200),
            x0_frac in 0.0f64..1.0,
        ) {
            let cfg = paper_cfg();
            let k = cfg.gain();
            let x0 = cfg.x_min + x0_frac * (cfg.x_max - cfg.x_min);
            let mut state = esc_init(&cfg, x0).unwrap();
            let mut dwell_since_flip = f64::INFINITY; // no flip yet
            let mut prev_x = state.x;
            for &c in &costs {
                let next = esc_step(&state, c, &cfg).unwrap();
                prop_assert!(next.x >= cfg.x_min && next.x <= cfg.x_max);
                let moved = (next.x - prev_x).abs();
                let clamped = next.x == cfg.x_min || next.x == cfg.x_max;
                prop_assert!(
                    (moved - k).abs() < 1e-15 || (clamped && moved < k + 1e-15),
                    "step of {moved} with clamped = {clamped}"
                );
                if next.epsilon != state.epsilon {
                    prop_assert!(
                        dwell_since_flip >= cfg.dwell_limit || dwell_since_flip.is_infinite()
                    );
                    dwell_since_flip = cfg.dt;
                } else {
                    dwell_since_flip += cfg.dt;
                }
                prev_x = next.x;
                state = next;
            }
        }

        /// Identical cost sequences produce identical traces.
        #[test]
        fn runs_are_deterministic(
            costs in proptest::collection::vec(0.0f64..10.0, 1..100),
        ) {
            let cfg = paper_cfg();
            let run = |costs: &[f64]| {
                let mut it = costs.iter();
                esc_run(
                    |_x| Ok::<_, String>(*it.next().unwrap()),
                    &cfg,
                    0.01,
                    costs.len(),
                )
                .unwrap()
            };
            let a = run(&costs);
            let b = run(&costs);
            prop_assert_eq!(a, b);
        }
    }
}
