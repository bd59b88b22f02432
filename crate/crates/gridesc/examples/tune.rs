//! Development scratchpad: equilibrium sanity, disturbance response shape,
//! and the droop-sweep cost curve on the bundled system.
//!
//! Run with `cargo run --release -p gridesc --example tune -- [sweep|case|sens]`.

use gridesc::metrics::{compute_metrics, total_cost};
use gridesc::scenario::{droop_grid, sweep_droop, ScenarioRunner, ScenarioSpec};
use gridesc::sim::{find_equilibrium, integrate, SimOptions};
use gridesc::systems::mesh8;
use gridesc::{CostWeights, MetricConfig};

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "eq".into());
    let model = mesh8();

    if mode == "eq" {
        let t0 = std::time::Instant::now();
        let eq = find_equilibrium(&model).expect("equilibrium");
        println!("equilibrium in {:?}", t0.elapsed());
        println!("  omega = {:.12} pu", eq.sg_states[0].frequency);
        for (i, sg) in eq.sg_states.iter().enumerate() {
            println!("  sg{i}: delta {:.4} rad, emf {:.4}", sg.rotor_angle, sg.emf);
        }
        for (j, g) in eq.gfm_states.iter().enumerate() {
            println!("  gfm{j}: delta {:.4} rad, E {:.4}", g.angle, g.internal_voltage);
        }
        for (k, v) in eq.bus_voltages.iter().enumerate() {
            println!("  bus{}: |V| {:.4}, angle {:.4}", k + 1, v.norm(), v.arg());
        }

        // Zero-event persistence.
        let opts = SimOptions::default();
        let t0 = std::time::Instant::now();
        let result = integrate(&model, &eq, &[], (0.0, 10.0), &opts).expect("integrate");
        println!("10 s zero-event run in {:?}", t0.elapsed());
        let worst = result
            .trajectory
            .deviations()
            .fold(0.0f64, |m, d| m.max(d.abs()));
        println!("  worst |df| = {worst:.3e} Hz over 10 s");

        // Disturbance response at a few droops.
        let spec = ScenarioSpec::load_step("baseline", model.clone(), None, 0.10, 0.5, 10.0)
            .expect("scenario");
        for droop in [0.003, 0.008, 0.0125, 0.018, 0.022] {
            let runner = ScenarioRunner::new(
                spec.clone(),
                opts,
                CostWeights::default(),
                MetricConfig::default(),
                (0.003, 0.022),
                false,
            )
            .expect("runner");
            let t0 = std::time::Instant::now();
            match runner.evaluate_with_sim(droop) {
                Ok((eval, sim)) => {
                    let nadir = sim
                        .trajectory
                        .samples
                        .iter()
                        .cloned()
                        .fold(f64::INFINITY, f64::min);
                    let last = *sim.trajectory.samples.last().unwrap();
                    println!(
                        "  droop {droop:.4}: nadir {nadir:.4} Hz, last {last:.4} Hz, \
                         E {:.4e}, Rm {:.4e}, Rx {:.4e}, Ff {:.4e}  ({:?})",
                        eval.metrics.e_avg,
                        eval.metrics.r_mean,
                        eval.metrics.r_max,
                        eval.metrics.f_final,
                        t0.elapsed()
                    );
                }
                Err(e) => println!("  droop {droop:.4}: FAILED: {e}"),
            }
        }
    }

    if mode == "sweep" || mode == "sweeps" {
        let opts = SimOptions::default();
        for (name, removals) in [
            ("baseline", vec![]),
            ("minus-4-1", vec![(4usize, 1usize)]),
            ("minus-2-7", vec![(2, 7)]),
        ] {
            let spec = ScenarioSpec::load_step(name, model.clone(), None, 0.10, 0.5, 10.0)
                .expect("scenario")
                .with_removals(&removals);
            let runner = match ScenarioRunner::new(
                spec,
                opts,
                CostWeights::default(),
                MetricConfig::default(),
                (0.003, 0.022),
                true,
            ) {
                Ok(r) => r,
                Err(e) => {
                    println!("{name}: runner failed: {e}");
                    continue;
                }
            };
            let grid = droop_grid(0.003, 0.022, 40);
            let t0 = std::time::Instant::now();
            let sweep = sweep_droop(&runner, &grid, true);
            let elapsed = t0.elapsed();
            println!("== {name} ({elapsed:?})");
            for p in &sweep.points {
                match &p.outcome {
                    Ok(e) => println!(
                        "  {:.5}  J {:9.4}   E {:.3e} Rm {:.3e} Rx {:.3e} Ff {:.3e}",
                        p.droop, e.j_total, e.metrics.e_avg, e.metrics.r_mean,
                        e.metrics.r_max, e.metrics.f_final
                    ),
                    Err(e) => println!("  {:.5}  FAILED: {e}", p.droop),
                }
            }
            if let Some(best) = sweep.argmin() {
                println!(
                    "  argmin {:.5} (J {:.4}), sign changes: {}",
                    best.droop,
                    best.outcome.as_ref().unwrap().j_total,
                    sign_changes(&sweep)
                );
            }
        }
    }

    if mode == "order" {
        // Richardson order probe.
        let opts = SimOptions {
            solve: gridesc::SolveOptions { tolerance: 1e-12, max_iterations: 60 },
            ..SimOptions::default()
        };
        let spec = ScenarioSpec::load_step("order", model.clone(), None, 0.10, 0.0, 2.0)
            .expect("scenario");
        let mut m = model.clone();
        for g in &mut m.gfms {
            g.p_droop = 0.0125;
        }
        let eq = find_equilibrium(&m).expect("eq");
        let run = |dt: f64| {
            let o = SimOptions { dt, ..opts };
            integrate(&m, &eq, &spec.schedule, (0.0, 2.0), &o).expect("run")
        };
        for base in [0.01, 0.005, 0.0025] {
            let coarse = run(base);
            let half = run(base / 2.0);
            let fine = run(base / 8.0);
            let err = |t: &gridesc::FrequencyTrajectory, stride: usize| {
                t.samples
                    .iter()
                    .step_by(1)
                    .zip(fine.trajectory.samples.iter().step_by(stride))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            };
            let e1 = err(&coarse.trajectory, 8);
            let e2 = err(&half.trajectory, 4);
            println!(
                "dt {base}: err {e1:.3e} vs {e2:.3e}, ratio {:.2}, order {:.2}",
                e1 / e2,
                (e1 / e2).log2()
            );
        }
    }

    if mode == "droopcheck" {
        // Settled frequency vs the analytic droop-sharing offset.
        let opts = SimOptions::default();
        for droop in [0.003, 0.0125, 0.022] {
            let mut m = model.clone();
            for g in &mut m.gfms {
                g.p_droop = droop;
            }
            let eq = find_equilibrium(&m).expect("eq");
            let spec = ScenarioSpec::load_step("d", m.clone(), None, 0.10, 0.5, 30.0).unwrap();
            let res = integrate(&m, &eq, &spec.schedule, (0.0, 30.0), &opts).expect("run");
            let (total_p, _) = m.total_load();
            let dp = 0.10 * total_p;
            let denom: f64 = m.sgs.iter().map(|s| s.damping).sum::<f64>()
                + m.gfms.iter().map(|g| 1.0 / g.p_droop).sum::<f64>();
            let predicted = -dp / denom;
            let last = res.trajectory.samples.last().unwrap() / 60.0 - 1.0;
            println!(
                "droop {droop:.4}: settled {last:.6e} pu vs predicted {predicted:.6e} pu, \
                 diff {:.2e}",
                (last - predicted).abs()
            );
        }
    }

    if mode == "eig" {
        eig_mode(&model);
    }

    if mode == "case" {
        use gridesc::scenario::{run_case, CaseSegment, CaseSpec};
        let opts = SimOptions::default();
        let base = ScenarioSpec::load_step("baseline", model.clone(), None, 0.10, 0.5, 10.0)
            .expect("scenario");
        let removed = base.clone().with_name("minus-4-1").with_removals(&[(4, 1)]);
        let case = CaseSpec {
            segments: vec![
                CaseSegment { scenario: base, iterations: 60 },
                CaseSegment { scenario: removed, iterations: 60 },
            ],
            esc: gridesc::EscConfig::default(),
            x0: 0.0125,
        };
        let grid = droop_grid(0.003, 0.022, 40);
        let t0 = std::time::Instant::now();
        let run = run_case(
            &case,
            &opts,
            &CostWeights::default(),
            &MetricConfig::default(),
            &grid,
        )
        .expect("case");
        println!("case in {:?}, argmins {:?}", t0.elapsed(), run.segment_argmins);
        if let Some((it, msg)) = &run.failure {
            println!("TRUNCATED at {it}: {msg}");
        }
        let k = gridesc::EscConfig::default().gain();
        for seg in 1..=2usize {
            let rows: Vec<&gridesc::scenario::CaseRow> =
                run.rows.iter().filter(|r| r.segment == seg).collect();
            let trailing: Vec<f64> = rows.iter().rev().take(20).map(|r| r.droop).collect();
            let mean = trailing.iter().sum::<f64>() / trailing.len() as f64;
            let argmin = run.segment_argmins[seg - 1];
            println!(
                "segment {seg}: trailing-20 mean {mean:.5} vs argmin {argmin:.5}, \
                 |diff| {:.5} vs 2K = {:.5} -> {}",
                (mean - argmin).abs(),
                2.0 * k,
                (mean - argmin).abs() <= 2.0 * k
            );
        }
        for r in run.rows.iter().step_by(5) {
            println!("  it {:3} seg {} x {:.5} J {:8.3}", r.iteration, r.segment, r.droop, r.cost);
        }
    }

    if mode == "sens" {
        let opts = SimOptions::default();
        let spec = ScenarioSpec::load_step("baseline", model.clone(), None, 0.10, 0.5, 10.0)
            .expect("scenario");
        let runner = ScenarioRunner::new(
            spec,
            opts,
            CostWeights::default(),
            MetricConfig::default(),
            (0.003, 0.022),
            true,
        )
        .expect("runner");
        let grid = droop_grid(0.003, 0.022, 40);
        let sweep = sweep_droop(&runner, &grid, true);
        let cached: Vec<(f64, gridesc::PerformanceMetrics)> = sweep
            .points
            .iter()
            .filter_map(|p| p.outcome.as_ref().ok().map(|e| (p.droop, e.metrics)))
            .collect();
        let cfg = runner.metric_config().clone();
        let argmin = |w: &CostWeights| -> Result<f64, String> {
            let js: Vec<(f64, f64)> = cached
                .iter()
                .map(|(x, m)| (*x, total_cost(m, w, &cfg)))
                .collect();
            let (mut bi, mut bj) = (0usize, f64::INFINITY);
            for (i, (_, j)) in js.iter().enumerate() {
                if *j < bj {
                    bj = *j;
                    bi = i;
                }
            }
            if bi == 0 || bi + 1 == js.len() {
                return Err("argmin on boundary".into());
            }
            let (xl, jl) = js[bi - 1];
            let (xc, jc) = js[bi];
            let (xr, jr) = js[bi + 1];
            let denom = jl - 2.0 * jc + jr;
            if denom <= 0.0 {
                return Ok(xc);
            }
            Ok(xc + 0.25 * (xr - xl) * (jl - jr) / denom)
        };
        let sens = gridesc::metrics::weight_sensitivity(
            argmin,
            &CostWeights::default(),
            0.5,
            0.019,
        );
        let mut values = Vec::new();
        for s in &sens {
            match &s.value {
                Ok(v) => {
                    println!("w{}: sensitivity {v:.4}", s.weight_index + 1);
                    values.push(*v);
                }
                Err(e) => println!("w{}: FAILED {e}", s.weight_index + 1),
            }
        }
        if values.len() == 4 {
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = 0.5 * (sorted[1] + sorted[2]);
            let max = sorted[3];
            println!("median {median:.4}, max {max:.4}, max <= 3*median: {}", max <= 3.0 * median);
        }
    }

    if mode == "metricscheck" {
        // Raw trajectory scoring at midpoint for reference values.
        let mut m = model.clone();
        for g in &mut m.gfms {
            g.p_droop = 0.0125;
        }
        let eq = find_equilibrium(&m).expect("eq");
        let spec = ScenarioSpec::load_step("m", m.clone(), None, 0.10, 0.5, 10.0).unwrap();
        let res =
            integrate(&m, &eq, &spec.schedule, (0.0, 10.0), &SimOptions::default()).unwrap();
        let cfg = MetricConfig::default();
        let metrics = compute_metrics(&res.trajectory, &cfg).unwrap();
        println!("raw metrics at 0.0125: {metrics:?}");
        println!(
            "raw J: {}",
            total_cost(&metrics, &CostWeights::default(), &cfg)
        );
    }
}

fn eig_mode(model: &gridesc::NetworkModel) {
    // Finite-difference Jacobian of the reduced dynamics around equilibrium,
    // via two-sided integration probes (one tiny RK step per column).
    use gridesc::sim::SystemState;
    use nalgebra::DMatrix;

    let pack = |s: &SystemState| -> Vec<f64> {
        let mut x = Vec::new();
        for sg in &s.sg_states {
            x.push(sg.rotor_angle);
            x.push(sg.frequency);
        }
        for g in &s.gfm_states {
            x.push(g.angle);
            x.push(g.frequency);
            x.push(g.voltage_error);
            x.push(g.internal_voltage);
        }
        x
    };
    let apply = |s: &SystemState, x: &[f64]| -> SystemState {
        let mut out = s.clone();
        let mut i = 0;
        for sg in &mut out.sg_states {
            sg.rotor_angle = x[i];
            sg.frequency = x[i + 1];
            i += 2;
        }
        for g in &mut out.gfm_states {
            g.angle = x[i];
            g.frequency = x[i + 1];
            g.voltage_error = x[i + 2];
            g.internal_voltage = x[i + 3];
            i += 4;
        }
        out
    };

    for droop in [0.003, 0.006, 0.0125, 0.022] {
        let mut m = model.clone();
        for g in &mut m.gfms {
            g.p_droop = droop;
        }
        let eq = find_equilibrium(&m).expect("eq");
        let x0 = pack(&eq);
        let n = x0.len();
        let h = 1e-6;
        let dt = 1e-4;
        let opts = SimOptions {
            dt,
            solve: gridesc::SolveOptions { tolerance: 1e-12, max_iterations: 60 },
            ..SimOptions::default()
        };
        // One micro-step of RK4 approximates the matrix exponential; recover
        // A from (x(dt) - x(0))/dt to first order.
        let f = |x: &[f64]| -> Vec<f64> {
            let s = apply(&eq, x);
            let r = integrate(&m, &s, &[], (0.0, dt), &opts).expect("step");
            let end = pack(r.states.last().unwrap());
            end.iter().zip(x).map(|(a, b)| (a - b) / dt).collect()
        };
        let mut a = DMatrix::zeros(n, n);
        for col in 0..n {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[col] += h;
            xm[col] -= h;
            let fp = f(&xp);
            let fm = f(&xm);
            for row in 0..n {
                a[(row, col)] = (fp[row] - fm[row]) / (2.0 * h);
            }
        }
        // Power iteration per shifted mode is overkill; get participation by
        // looking at A's action restricted near each eigenvalue via complex
        // Schur is unavailable, so approximate with the full complex solve:
        // for each distinct eigenvalue λ find the null-space direction of
        // (A - λI) by inverse iteration.
        use nalgebra::{Complex, DVector};
        let eig = a.complex_eigenvalues();
        let mut seen: Vec<(f64, f64)> = Vec::new();
        println!("droop {droop}:");
        let mut modes: Vec<Complex<f64>> = eig.iter().cloned().collect();
        modes.sort_by(|p, q| p.re.partial_cmp(&q.re).unwrap());
        for lam in modes.iter().filter(|l| l.im > 1e-6) {
            if seen
                .iter()
                .any(|(re, im)| (re - lam.re).abs() < 1e-6 && (im - lam.im).abs() < 1e-6)
            {
                continue;
            }
            seen.push((lam.re, lam.im));
            let zeta = -lam.re / lam.norm();
            // Inverse iteration for the eigenvector.
            let ac = a.map(|x| Complex::new(x, 0.0));
            let shifted = &ac
                - DMatrix::from_diagonal(&DVector::from_element(
                    n,
                    lam + Complex::new(1e-8, 1e-8),
                ));
            let lu = shifted.lu();
            let mut v = DVector::from_element(n, Complex::new(1.0, 0.0));
            for _ in 0..6 {
                if let Some(w) = lu.solve(&v) {
                    let norm = w.norm();
                    if norm > 0.0 {
                        v = w / Complex::new(norm, 0.0);
                    }
                } else {
                    break;
                }
            }
            // Frequency-state participation: machines at 2i+1, inverters at
            // base + 4j+1.
            let m = model.sgs.len();
            let mut parts: Vec<(String, f64)> = Vec::new();
            for i in 0..m {
                parts.push((format!("sg{i}w"), v[2 * i + 1].norm()));
            }
            for j in 0..model.gfms.len() {
                parts.push((format!("g{j}w"), v[2 * m + 4 * j + 1].norm()));
            }
            // COI residue with the aggregate weights.
            let mut coi = Complex::new(0.0, 0.0);
            let mut den = 0.0;
            for (i, sg) in model.sgs.iter().enumerate() {
                coi += Complex::new(sg.inertia, 0.0) * v[2 * i + 1];
                den += sg.inertia;
            }
            for (j, g) in model.gfms.iter().enumerate() {
                let w = g.filter_tau / droop;
                coi += Complex::new(w, 0.0) * v[2 * m + 4 * j + 1];
                den += w;
            }
            let maxpart = parts.iter().map(|(_, p)| *p).fold(0.0f64, f64::max);
            let desc: Vec<String> = parts
                .iter()
                .map(|(n, p)| format!("{n} {:.2}", p / maxpart.max(1e-30)))
                .collect();
            println!(
                "  sigma {:8.3} omega {:7.3} zeta {zeta:6.3} coi {:.3e} | {}",
                lam.re,
                lam.im,
                coi.norm() / den / maxpart.max(1e-30),
                desc.join(" ")
            );
        }
        let worst = modes.iter().map(|l| l.re).fold(f64::MIN, f64::max);
        println!("  worst real part: {worst:.4}");
    }
}

fn sign_changes(sweep: &gridesc::scenario::SweepResult) -> usize {
    let js: Vec<f64> = sweep
        .points
        .iter()
        .filter_map(|p| p.outcome.as_ref().ok().map(|e| e.j_total))
        .collect();
    let diffs: Vec<f64> = js.windows(2).map(|w| w[1] - w[0]).collect();
    let mut changes = 0;
    let mut last = 0.0f64;
    for d in diffs {
        if d != 0.0 {
            if last != 0.0 && d.signum() != last.signum() {
                changes += 1;
            }
            last = d;
        }
    }
    changes
}
