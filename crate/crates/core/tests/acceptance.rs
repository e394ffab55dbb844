//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drr_core::cli::parse_scenario;
use drr_core::contact::RobotParams;
use drr_core::geometry::Vec2;
use drr_core::qp::{solve_qp, QpProblem};
use drr_core::recovery::{
    feedback_linearize, plan_recovery, recovery_qp, ContactState, RecoveryConfig, RecoveryError, SLIP_DEADBAND,
};
use drr_core::replan::{max_safe_speed, plan_trajectory, scale_time, Adjustment, Boundary, PlannerConfig, Trajectory};
use drr_core::sim::{impact_trial, run_drr, ImpactSpec, Outcome, RunMode, Scenario, SimEvent};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

fn qp_oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for case in 0..200 {
        let n = rng.random_range(1..=6usize);
        let meq = rng.random_range(0..=4usize.min(n));
        let m = rng.random_range(0..=6usize);
        let l = random_matrix(&mut rng, n, n);
        let p = l.transpose() * &l + DMatrix::identity(n, n) * 0.1;
        let q = random_vector(&mut rng, n, 2.0);
        let x_feas = random_vector(&mut rng, n, 1.0);
        let a = random_matrix(&mut rng, meq, n);
        let b = &a * &x_feas;
        let c = random_matrix(&mut rng, m, n);
        let cx = &c * &x_feas;
        let lo = DVector::from_fn(m, |i, _| cx[i] - rng.random_range(0.0..1.0));
        let hi = DVector::from_fn(m, |i, _| cx[i] + rng.random_range(0.0..1.0));
        let prob = QpProblem::new(p, q).with_equalities(a, b).with_inequalities(c, lo, hi);
        let Some(expected) = common::enumerate_qp(&prob) else {
            failures.push(format!("case {case}: oracle found no feasible pattern"));
            continue;
        };
        match solve_qp(&prob) {
            Ok(sol) => {
                let err = (&sol.x - &expected).amax();
                worst = worst.max(err);
                if err > 1e-5 {
                    failures.push(format!("case {case}: |dx| = {err:.2e}"));
                }
            }
            Err(e) => failures.push(format!("case {case}: solver error {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 10.0;
    verdict(pass, format!("200 QPs, max |dx| = {worst:.2e}, {secs:.2} s {}", failures.join("; ")))
}

fn polynomial_closed_forms() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (j, order, shape) in [(2usize, 3usize, vec![0.0, 0.0, 3.0, -2.0]), (3, 5, vec![0.0, 0.0, 0.0, 10.0, -15.0, 6.0])] {
        for duration in [1.0f64, 2.0] {
            let cfg = PlannerConfig { j, order, ..PlannerConfig::default() };
            let traj = match plan_trajectory(&[Vec2::ZERO, Vec2::new(1.0, 0.0)], &[duration], &Boundary::rest(j), &cfg) {
                Ok(t) => t,
                Err(e) => return verdict(false, format!("j = {j}: {e}")),
            };
            let seg = &traj.segments[0];
            for (n, &a) in shape.iter().enumerate() {
                // coefficients are stored in real time: a_n / T^n
                worst = worst.max((seg.coeffs_x[n] - a / duration.powi(n as i32)).abs());
                worst = worst.max(seg.coeffs_y[n].abs());
            }
        }
        detail.push(format!("j={j}"));
    }
    verdict(worst <= 1e-9, format!("{} at T in {{1, 2}}, max coefficient error {worst:.2e}", detail.join(", ")))
}

fn constraint_residuals(traj: &Trajectory, points: &[Vec2], boundary: &Boundary, j: usize) -> f64 {
    let segs = &traj.segments;
    let mut worst: f64 = 0.0;
    let mut track = |a: Vec2, b: Vec2| worst = worst.max((a - b).norm());
    for (i, s) in segs.iter().enumerate() {
        track(s.eval(0.0, 0), points[i]);
        track(s.eval(s.duration, 0), points[i + 1]);
    }
    for (k, d) in boundary.start.iter().enumerate() {
        track(segs[0].eval(0.0, k + 1), *d);
    }
    let last = segs.last().unwrap();
    for (k, d) in boundary.end.iter().enumerate() {
        track(last.eval(last.duration, k + 1), *d);
    }
    for w in segs.windows(2) {
        for alpha in 0..j {
            track(w[0].eval(w[0].duration, alpha), w[1].eval(0.0, alpha));
        }
    }
    worst
}

fn trajectory_residuals() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut slowest: f64 = 0.0;
    let mut failures = Vec::new();
    for case in 0..100 {
        let j = rng.random_range(2..=4usize);
        let order = 2 * j - 1 + rng.random_range(0..=2usize);
        let n_pts = rng.random_range(2..=6usize);
        let points: Vec<Vec2> = (0..n_pts).map(|_| Vec2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
        let durations: Vec<f64> = (1..n_pts).map(|_| rng.random_range(0.5..3.0)).collect();
        let start: Vec<Vec2> = (0..rng.random_range(1..j))
            .map(|_| Vec2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
            .collect();
        let boundary = Boundary { start, end: vec![Vec2::ZERO; j - 1] };
        let cfg = PlannerConfig { j, order, ..PlannerConfig::default() };
        let t0 = Instant::now();
        let traj = plan_trajectory(&points, &durations, &boundary, &cfg);
        let secs = t0.elapsed().as_secs_f64();
        slowest = slowest.max(secs);
        match traj {
            Ok(traj) => {
                let r = constraint_residuals(&traj, &points, &boundary, j);
                worst = worst.max(r);
                if r > 1e-6 || secs >= 0.05 {
                    failures.push(format!("case {case}: residual {r:.2e}, {:.1} ms", secs * 1e3));
                }
            }
            Err(e) => failures.push(format!("case {case}: {e}")),
        }
    }
    verdict(
        failures.is_empty(),
        format!("100 instances, max residual {worst:.2e}, slowest solve {:.2} ms {}", slowest * 1e3, failures.join("; ")),
    )
}

fn recovery_contract() -> Verdict {
    let params = RobotParams::default();
    let cfg = RecoveryConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut feasible, mut sampled, mut worst_box, mut worst_term) = (0, 0, 0.0f64, 0.0f64);
    let mut failures = Vec::new();
    while feasible < 200 && sampled < 5000 {
        sampled += 1;
        let theta = rng.random_range(-0.7..0.7f64);
        let lower = -params.travel() * theta.cos();
        let x0 = rng.random_range(lower..0.0);
        let v0 = Vec2::new(rng.random_range(-0.7..0.0), rng.random_range(-0.5..0.5));
        let v_t = Vec2::new(rng.random_range(0.0..0.5), rng.random_range(-0.5..0.5));
        let (prob, _) = recovery_qp(x0, v0, v_t, theta, &params, &cfg).expect("valid inputs");
        let oracle = common::enumerate_qp(&prob);
        match plan_recovery(x0, v0, v_t, theta, &params, &cfg) {
            Ok(plan) => {
                feasible += 1;
                if oracle.is_none() {
                    failures.push(format!("sample {sampled}: solved but oracle says infeasible"));
                }
                for s in &plan.states {
                    worst_box = worst_box.max(s[0] - 0.0).max(lower - s[0]);
                }
                let last = plan.states.last().unwrap();
                let term = [last[0], last[2] - v_t.x, last[3] - v_t.y].iter().fold(0.0f64, |m, r| m.max(r.abs()));
                worst_term = worst_term.max(term);
            }
            Err(RecoveryError::QpInfeasible) => {
                if oracle.is_some() {
                    failures.push(format!("sample {sampled}: oracle found a solution the solver missed"));
                }
            }
            Err(e) => failures.push(format!("sample {sampled}: {e}")),
        }
    }
    let pass = feasible == 200 && worst_box <= 1e-9 && worst_term <= 1e-6 && failures.is_empty();
    verdict(
        pass,
        format!(
            "{feasible} feasible of {sampled} sampled, box violation {worst_box:.2e}, terminal residual {worst_term:.2e} {}",
            failures.join("; ")
        ),
    )
}

/// Contact dynamics written out independently: the tangential channel carries
/// the friction and obliquity terms, the normal channel is the spring-damper.
fn contact_dynamics(u: Vec2, s: &ContactState, p: &RobotParams) -> Vec2 {
    let sgn = if s.v.y > SLIP_DEADBAND {
        1.0
    } else if s.v.y < -SLIP_DEADBAND {
        -1.0
    } else {
        0.0
    };
    let coef = p.mu * sgn + s.theta.tan();
    let f0 = p.mu * p.k * sgn * (p.ls - p.l0) * s.theta.cos();
    let ax = -p.k / p.m * s.x - p.c / p.m * s.v.x + u.x;
    let ay = -(p.k * coef * s.x + f0) / p.m - p.c * coef * s.v.x / p.m + u.y;
    Vec2::new(ax, ay)
}

fn linearization_exactness() -> Verdict {
    let p = RobotParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = ContactState {
            x: rng.random_range(-p.travel()..0.0),
            theta: rng.random_range(-1.0..1.0),
            v: Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        };
        let nu = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let acc = contact_dynamics(feedback_linearize(nu, &s, &p), &s, &p);
        // the normal channel keeps the linear spring-damper that the recovery QP models
        let expected = Vec2::new(-p.k / p.m * s.x - p.c / p.m * s.v.x + nu.x, nu.y);
        worst = worst.max((acc - expected).norm());
    }
    verdict(worst <= 1e-12, format!("1000 states, max error {worst:.2e}"))
}

fn vmax_formula() -> Verdict {
    let p = RobotParams::default();
    let direct = (2310.0 * ((0.015f64 - 0.0415).powi(2) - (0.030f64 - 0.0415).powi(2)) / (2.0 * 6.0)
        + 9.81 * (0.3 - 0.030 + 0.015) * 3f64.to_radians().sin()
        + 5.0 * (0.030 - 0.015))
        .sqrt();
    match max_safe_speed(&p) {
        Ok(v) => {
            let pass = (v - direct).abs() <= 1e-12 && (v - 0.575).abs() < 5e-4 && (v - 0.7).abs() > 0.1;
            verdict(pass, format!("v_max = {v:.6} m/s, direct {direct:.6}, differs from 0.7 by {:.3}", 0.7 - v))
        }
        Err(e) => verdict(false, e.to_string()),
    }
}

fn detachment() -> Verdict {
    let sc = Scenario::default();
    let mut lines = Vec::new();
    let mut pass = true;
    let (mut min_vn, mut max_comp) = (f64::INFINITY, 0.0f64);
    for speed in [0.3, 0.5, 0.7] {
        for deg in [-45.0f64, -22.5, 0.0, 22.5, 45.0] {
            let spec = ImpactSpec { speed, angle: deg.to_radians(), v_out: Vec2::new(0.5, 0.0), heading: 0.0 };
            match impact_trial(&sc, &spec) {
                Ok(Some(r)) => {
                    min_vn = min_vn.min(r.v_out.x);
                    max_comp = max_comp.max(r.compression_at_t);
                    if r.v_out.x < 0.0 || r.compression_at_t > 1e-9 {
                        pass = false;
                        lines.push(format!("{speed} m/s at {deg} deg: v_n {:.4}, compression {:.2e}", r.v_out.x, r.compression_at_t));
                    }
                }
                Ok(None) => {
                    pass = false;
                    lines.push(format!("{speed} m/s at {deg} deg: no collision detected"));
                }
                Err(e) => {
                    pass = false;
                    lines.push(format!("{speed} m/s at {deg} deg: {e}"));
                }
            }
        }
    }
    verdict(pass, format!("15 runs, min outgoing v_n {min_vn:.3} m/s, max compression at T {max_comp:.2e} m {}", lines.join("; ")))
}

fn end_to_end_cases() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, branch) in [("case1.json", Adjustment::Clamp), ("case2.json", Adjustment::Insert)] {
        let sc = match parse_scenario(&scenario_path(name)) {
            Ok(s) => s,
            Err(e) => return verdict(false, e.to_string()),
        };
        let (mut reached, mut branch_hits, mut slowest) = (0, 0, 0.0f64);
        for i in 0..10 {
            let seed = sc.seed + i;
            let t0 = Instant::now();
            let run = run_drr(&sc, seed, RunMode::Drr);
            slowest = slowest.max(t0.elapsed().as_secs_f64());
            let Ok((log, m)) = run else {
                pass = false;
                notes.push(format!("{name} seed {seed} failed"));
                continue;
            };
            if log.outcome == Outcome::Reached && m.goal_error <= 0.05 {
                reached += 1;
            }
            let first = log.events.iter().find_map(|e| match e {
                SimEvent::Replan { adjustment, .. } => Some(*adjustment),
                _ => None,
            });
            if first == Some(branch) {
                branch_hits += 1;
            }
        }
        pass &= reached == 10 && branch_hits == 10 && slowest < 1.0;
        notes.push(format!("{name}: reached {reached}/10, first adjustment {branch:?} {branch_hits}/10, slowest {slowest:.3} s"));
        if branch == Adjustment::Clamp {
            let face = sc.obstacles[0].vertices().iter().map(|v| v.x).fold(f64::INFINITY, f64::min);
            match run_drr(&sc, sc.seed, RunMode::Preplanned) {
                Ok((log, _)) => {
                    let furthest = log.records.iter().map(|r| r.x).fold(f64::NEG_INFINITY, f64::max);
                    let stuck = log.outcome == Outcome::Timeout && furthest < face;
                    pass &= stuck;
                    notes.push(format!("preplanned furthest x {furthest:.3} vs face {face:.3}, {:?}", log.outcome));
                }
                Err(e) => {
                    pass = false;
                    notes.push(format!("preplanned failed: {e}"));
                }
            }
        }
    }
    verdict(pass, notes.join("; "))
}

fn time_scaling() -> Verdict {
    let p = RobotParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut worst_v, mut worst_a, mut worst_geo) = (0.0f64, 0.0f64, 0.0f64);
    let cfg = PlannerConfig::default();
    let mut errors = Vec::new();
    for case in 0..50 {
        let n_pts = rng.random_range(2..=5usize);
        let points: Vec<Vec2> = (0..n_pts).map(|_| Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).collect();
        let durations: Vec<f64> = (1..n_pts).map(|_| rng.random_range(0.3..2.0)).collect();
        let traj = match plan_trajectory(&points, &durations, &Boundary::rest(cfg.j), &cfg) {
            Ok(t) => t,
            Err(e) => {
                errors.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let (scaled, kappa) = scale_time(&traj, cfg.v_max, p.a_in_max);
        // dense sampling, independent of the library's peak search
        let total = traj.duration();
        for k in 0..=4000 {
            let t = total * k as f64 / 4000.0;
            let before = traj.eval(t, 0).unwrap();
            let after = scaled.eval(kappa * t, 0).unwrap();
            worst_geo = worst_geo.max((before - after).norm());
            worst_v = worst_v.max(scaled.eval(kappa * t, 1).unwrap().norm() / cfg.v_max);
            worst_a = worst_a.max(scaled.eval(kappa * t, 2).unwrap().norm() / p.a_in_max);
        }
    }
    let pass = errors.is_empty() && worst_v <= 1.0 && worst_a <= 1.0 && worst_geo <= 1e-9;
    verdict(
        pass,
        format!(
            "50 trajectories, peak speed {worst_v:.4} and accel {worst_a:.4} of limits, geometry error {worst_geo:.2e} {}",
            errors.join("; ")
        ),
    )
}

fn determinism() -> Verdict {
    let mut sc = match parse_scenario(&scenario_path("case1.json")) {
        Ok(s) => s,
        Err(e) => return verdict(false, e.to_string()),
    };
    sc.sim.noise_std = 2e-4;
    let run = || run_drr(&sc, 42, RunMode::Drr).map(|(log, _)| log);
    match (run(), run()) {
        (Ok(a), Ok(b)) => {
            let bits = |l: &drr_core::sim::SimLog| -> Vec<u64> {
                l.records.iter().flat_map(|r| [r.t, r.x, r.y, r.heading, r.vx, r.vy, r.ax, r.ay]).map(f64::to_bits).collect()
            };
            let same_json = serde_json::to_string(&a.lines()).unwrap() == serde_json::to_string(&b.lines()).unwrap();
            let pass = same_json && bits(&a) == bits(&b) && a.events == b.events;
            verdict(pass, format!("{} step records and {} events compared bitwise", a.records.len(), a.events.len()))
        }
        (Err(e), _) | (_, Err(e)) => verdict(false, e.to_string()),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("QP oracle equivalence", qp_oracle_equivalence),
        ("polynomial closed forms", polynomial_closed_forms),
        ("trajectory constraint residuals", trajectory_residuals),
        ("recovery plan contract", recovery_contract),
        ("feedback linearization exactness", linearization_exactness),
        ("v_max formula", vmax_formula),
        ("detachment", detachment),
        ("case 1 / case 2 end to end", end_to_end_cases),
        ("time scaling", time_scaling),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        if !v.pass {
            failed += 1;
        }
        println!("criterion {:>2} {:<34} {}: {}", i + 1, name, if v.pass { "PASS" } else { "FAIL" }, v.detail.trim_end());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
