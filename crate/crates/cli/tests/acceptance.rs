//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use satint_cli::pipeline::certify_plant;
use satint_cli::{parse_config, run_pipeline, RunConfig};
use satint_core::closed_loop::{compare_windup, log_error_slope, lyapunov_checks, simulate_closed_loop, LoopStepper};
use satint_core::gain_synthesis::{compute_constants, DEFAULT_LIPSCHITZ_SAMPLES};
use satint_core::io;
use satint_core::lemma_harness::check_lemma;
use satint_core::numeric::stream_rng;
use satint_core::roa::{nesting_report, sample_xt};
use satint_core::sat_integrator::{eval_s, l1_deviation_bound_check, simulate, InputSignal, PiecewiseConstant};
use satint_core::{
    build_map, builtin, ClosedLoopConfig, ClosedLoopRecord, Fault, GridSpec, IntegratorKind, LemmaId, LemmaOptions,
    LipschitzEstimates, SaturatorSpec, StabilityCertificate, BUILTIN_PLANTS,
};
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn unit_box() -> SaturatorSpec {
    SaturatorSpec::new(-1.0, 1.0).unwrap()
}

fn config(args: &[&str]) -> RunConfig {
    parse_config(std::iter::once("satint").chain(args.iter().copied())).expect("valid invocation")
}

// ---------------------------------------------------------------- 1

fn three_branch(u_min: f64, u_max: f64, u: f64, w: f64) -> f64 {
    if u <= u_min {
        if w > 0.0 {
            w
        } else {
            0.0
        }
    } else if u >= u_max {
        if w < 0.0 {
            w
        } else {
            0.0
        }
    } else {
        w
    }
}

fn saturator_truth_table() -> Outcome {
    let mut rng = stream_rng(1, 0);
    let mut mismatches = 0usize;
    for _ in 0..1_000_000 {
        let lo: f64 = rng.gen_range(-3.0..1.0);
        let spec = SaturatorSpec::new(lo, lo + rng.gen_range(0.1..3.0)).unwrap();
        let u = match rng.gen_range(0..4) {
            0 => spec.u_min,
            1 => spec.u_max,
            _ => rng.gen_range(spec.u_min - 0.5..spec.u_max + 0.5),
        };
        let w = if rng.gen_bool(0.05) { 0.0 } else { rng.gen_range(-10.0..10.0) };
        if eval_s(&spec, u, w) != three_branch(spec.u_min, spec.u_max, u, w) {
            mismatches += 1;
        }
    }

    let mut outside = 0usize;
    let mut diverged = 0usize;
    let plants: Vec<_> = BUILTIN_PLANTS.iter().map(|n| builtin(n).unwrap()).collect();
    for run in 0..10_000u64 {
        let mut rng = stream_rng(2, run);
        let plant = &plants[rng.gen_range(0..plants.len())];
        let lo: f64 = rng.gen_range(-2.0..0.5);
        let spec = SaturatorSpec::new(lo, lo + rng.gen_range(0.05..2.0)).unwrap();
        let k = 10f64.powf(rng.gen_range(-3.0..2.0));
        let r = rng.gen_range(-3.0..3.0);
        let x0: Vec<f64> = (0..plant.n()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let u0 = rng.gen_range(spec.u_min..=spec.u_max);
        let mut st = LoopStepper::new(plant, spec, IntegratorKind::Saturating, k, r, &x0, u0);
        for _ in 0..500 {
            if !st.step(1e-2, 0.0) {
                diverged += 1;
                break;
            }
            if st.u() < spec.u_min || st.u() > spec.u_max {
                outside += 1;
            }
        }
    }
    outcome(
        mismatches == 0 && outside == 0,
        format!("{mismatches} mismatches in 10^6 evaluations; {outside} out-of-box samples in 10^4 runs ({diverged} runs stopped on plant blow-up)"),
    )
}

// ---------------------------------------------------------------- 2

fn exact_l1(a: &PiecewiseConstant, b: &PiecewiseConstant, horizon: f64) -> f64 {
    let mut cuts: Vec<f64> = a.breakpoints().unwrap().iter().chain(b.breakpoints().unwrap()).copied().collect();
    cuts.push(horizon);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .map(|c| (a.value(c[0]) - b.value(c[0])).abs() * (c[1] - c[0]))
        .sum()
}

fn l1_lipschitz() -> Outcome {
    let spec = unit_box();
    let (horizon, dt) = (5.0, 1e-3);
    let mut failures = 0usize;
    let mut disagreements = 0usize;
    let mut tightest = f64::INFINITY;
    for pair in 0..1000u64 {
        let mut rng = stream_rng(3, pair);
        let amp = rng.gen_range(0.1..4.0);
        let (n1, n2) = (rng.gen_range(1..25), rng.gen_range(1..25));
        let w1 = PiecewiseConstant::random(&mut rng, n1, amp, horizon);
        let w2 = PiecewiseConstant::random(&mut rng, n2, amp, horizon);
        let u1_0 = rng.gen_range(-1.0..=1.0);
        let u2_0 = rng.gen_range(-1.0..=1.0);

        let t1 = simulate(&spec, u1_0, &w1, dt, horizon).unwrap();
        let t2 = simulate(&spec, u2_0, &w2, dt, horizon).unwrap();
        let lhs = t1.iter().zip(&t2).map(|(a, b)| (a.1 - b.1).abs()).fold(0.0, f64::max);
        let rhs = (u2_0 - u1_0).abs() + exact_l1(&w1, &w2, horizon);
        let slack = 4.0 * dt * w1.max_abs().max(w2.max_abs());
        let holds = lhs <= rhs + slack;
        if !holds {
            failures += 1;
        }
        tightest = tightest.min(rhs + slack - lhs);
        let report = l1_deviation_bound_check(&spec, u1_0, u2_0, &w1, &w2, horizon, dt).unwrap();
        if report.holds != holds {
            disagreements += 1;
        }
    }
    outcome(
        failures == 0 && disagreements == 0,
        format!("{failures} failures in 1000 pairs, smallest margin {tightest:.3e}; library check disagrees on {disagreements}"),
    )
}

// ---------------------------------------------------------------- 3 and 6

struct TrackingRuns {
    linear: Vec<ClosedLoopRecord>,
    linear_spacing: f64,
    linear_k: f64,
    osc: Vec<ClosedLoopRecord>,
    osc_spacing: f64,
    osc_k: f64,
}

/// Solution of `ẋ = -x + u, u̇ = k(r - x)` from `(x0, u0)` at time `t`.
fn linear_oracle(k: f64, r: f64, x0: f64, u0: f64, t: f64) -> (f64, f64) {
    let a = Matrix3::new(-1.0, 1.0, 0.0, -k, 0.0, k * r, 0.0, 0.0, 0.0);
    let z = (a * t).exp() * Vector3::new(x0, u0, 1.0);
    (z[0], z[1])
}

fn tracking(runs: &mut Option<TrackingRuns>) -> Outcome {
    // linear1d against the matrix exponential
    let (k, r) = (0.1, 0.5);
    let plant = builtin("linear1d").unwrap();
    let map = build_map(&plant, &unit_box(), 201).unwrap();
    let mut cfg = ClosedLoopConfig::new(plant, unit_box(), k, r, vec![0.0], 0.0, 200.0);
    cfg.dt = 1e-4;
    cfg.record_every = 10;
    let linear = simulate_closed_loop(&cfg, &map).unwrap();
    let mut oracle_err = 0.0_f64;
    let mut interior = true;
    for rec in &linear {
        let (x, u) = linear_oracle(k, r, 0.0, 0.0, rec.t);
        interior &= u > -1.0 && u < 1.0;
        oracle_err = oracle_err.max((rec.x[0] - x).abs()).max((rec.u - u).abs());
    }
    let last = linear.last().unwrap();
    let linear_ok = last.t == 200.0
        && (last.y - r).abs() < 1e-3
        && (last.u - 0.5).abs() < 1e-3
        && interior
        && oracle_err < 1e-5;

    // osc_cubic at the empirically selected gain
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("cert");
    let cert_cfg = config(&["certify", "--plant", "osc_cubic", "--r", "1.0", "--out-dir", out_dir.to_str().unwrap()]);
    run_pipeline(&cert_cfg, &mut Vec::new()).unwrap();
    let cert = io::read_json_value(&out_dir.join("certificate.json")).unwrap();
    let k_emp = cert["empirical"]["k_emp"].as_f64().unwrap();
    let horizon = 50.0 / (cert_cfg.map.mu * k_emp);
    let mut cfg = ClosedLoopConfig::new(cert_cfg.plant.clone(), cert_cfg.spec, k_emp, 1.0, vec![0.0, 0.0], 0.0, horizon);
    cfg.dt = 1e-3;
    let osc = simulate_closed_loop(&cfg, &cert_cfg.map).unwrap();
    let osc_err = (osc.last().unwrap().y - 1.0).abs();
    let slope = log_error_slope(&osc, 1e-12).unwrap_or(f64::NAN);
    let osc_ok = osc_err < 1e-3 && slope < 0.0;

    let detail = format!(
        "linear1d: final |y-r| {:.1e}, |u-u_r| {:.1e}, oracle sup error {:.2e}, interior {interior}; \
         osc_cubic at k_emp {k_emp}: |y-r| {osc_err:.1e} at t={horizon:.0}, log-error slope {slope:.4}",
        (last.y - r).abs(),
        (last.u - 0.5).abs(),
        oracle_err,
    );
    *runs = Some(TrackingRuns {
        linear,
        linear_spacing: 1e-3,
        linear_k: k,
        osc,
        osc_spacing: 1e-3,
        osc_k: k_emp,
    });
    outcome(linear_ok && osc_ok, detail)
}

fn lyapunov(runs: &Option<TrackingRuns>) -> Outcome {
    let Some(runs) = runs else {
        return outcome(false, "criterion 3 produced no runs");
    };
    let linear_map = build_map(&builtin("linear1d").unwrap(), &unit_box(), 201).unwrap();
    let osc_map = build_map(&builtin("osc_cubic").unwrap(), &unit_box(), 201).unwrap();
    let a = lyapunov_checks(&runs.linear, &linear_map, runs.linear_k, runs.linear_spacing).unwrap();
    let b = lyapunov_checks(&runs.osc, &osc_map, runs.osc_k, runs.osc_spacing).unwrap();
    let describe = |name: &str, r: &satint_core::closed_loop::LyapunovReport| {
        format!(
            "{name}: {}/{} decrease, {}/{} envelope, {} bound violations (eta* {:.1e})",
            r.decrease_violations, r.decrease_checks, r.envelope_violations, r.envelope_checks, r.bound_violations, r.eta_star
        )
    };
    let vacuous = |r: &satint_core::closed_loop::LyapunovReport| {
        if r.decrease_checks == 0 {
            " [|G(u)-r| never exceeds 2eta*, only the bound applies]"
        } else {
            ""
        }
    };
    outcome(
        a.holds() && b.holds() && a.decrease_checks > 0,
        format!("{}{}; {}{}", describe("linear1d", &a), vacuous(&a), describe("osc_cubic", &b), vacuous(&b)),
    )
}

// ---------------------------------------------------------------- 4

fn constants_pipeline() -> Outcome {
    let (m, lambda, alpha, l1, l2, delta_g) = (1.0_f64, 1.0_f64, 1.0_f64, 1.0_f64, 1.0_f64, 1.0_f64);
    let cert = StabilityCertificate::forced(m, lambda, 1.0, -1.0).unwrap();
    let lip = LipschitzEstimates { l1, l2, delta_g };
    let got = compute_constants(&cert, &lip, alpha, 0.5).unwrap();

    let t = (6.0 * m * (m + 1.0)).ln() / lambda;
    let kappa = f64::min(
        1.0 / (6.0 * (m + 1.0) * alpha * t),
        l1 / (6.0 * (m + 1.0) * l2 * t * ((l1 * t).exp() - 1.0)),
    );
    let lambda_tilde = 2.0 * delta_g * (m + 1.0 / 6.0);
    let k_max = 2.0 * kappa / (delta_g * (6.0 * m + 1.0));

    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let pass = rel(got.t, 12f64.ln()) < 1e-12
        && rel(got.t, t) < 1e-12
        && rel(got.kappa, kappa) < 1e-12
        && rel(got.kappa, 3.049e-3) < 1e-3
        && rel(got.lambda_tilde, 7.0 / 3.0) < 1e-12
        && rel(got.lambda_tilde, lambda_tilde) < 1e-12
        && rel(got.k_max, k_max) < 1e-12
        && rel(got.k_max, 8.712e-4) < 1e-3;
    outcome(
        pass,
        format!(
            "T={:.12} (ln12={:.12}), kappa={:.4e}, lambda_tilde={:.12}, k_max={:.4e}",
            got.t,
            12f64.ln(),
            got.kappa,
            got.lambda_tilde,
            got.k_max
        ),
    )
}

// ---------------------------------------------------------------- 5

fn lemma_harnesses() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for plant in BUILTIN_PLANTS {
        let cfg = config(&["lemma-check", "--plant", plant, "--lemma", "tube"]);
        let c = certify_plant(&cfg, 16, 1.0, DEFAULT_LIPSCHITZ_SAMPLES).unwrap();
        let opts = LemmaOptions {
            n_instances: 50,
            ..LemmaOptions::default()
        };
        for lemma in [LemmaId::SlowInput, LemmaId::Tube, LemmaId::Gain] {
            let rep = check_lemma(lemma, &cfg.plant, &cfg.map, &c.gain, &opts).unwrap();
            pass &= rep.violations == 0 && rep.instances >= 50;
            parts.push(format!("{plant}/{lemma} {}/{}", rep.violations, rep.instances));
        }
        if plant == "linear1d" {
            let mut broken = c.gain;
            broken.kappa *= 1000.0;
            let rep = check_lemma(LemmaId::Tube, &cfg.plant, &cfg.map, &broken, &opts).unwrap();
            pass &= rep.violations >= 1;
            parts.push(format!("linear1d/tube with kappa x1000 {}/{}", rep.violations, rep.instances));
        }
    }
    outcome(pass, format!("violations/instances: {}", parts.join(", ")))
}

// ---------------------------------------------------------------- 7

fn xt_geometry() -> Outcome {
    let plant = builtin("linear1d").unwrap();
    let map = build_map(&plant, &unit_box(), 201).unwrap();
    let cert = StabilityCertificate::forced(1.0, 0.9, 0.5, -1.0).unwrap();
    let t_roa = 3.0;
    let grid = GridSpec::parse("x1:-6:6:49,u:-1:1:21", 1).unwrap();
    let samples = sample_xt(&plant, &map, &cert, t_roa, &grid, 1e-3).unwrap();
    // |x0 - u0| e^{-T} ≤ ε₀/2
    let band = 0.5 * cert.eps0 * t_roa.exp();
    let near = grid.x[0].cell() + grid.u.cell();
    let mut wrong = 0usize;
    let mut wrong_far = 0usize;
    for s in &samples {
        let d = (s.x0[0] - s.u0).abs();
        if s.in_xt != (d <= band) {
            wrong += 1;
            if (d - band).abs() > near {
                wrong_far += 1;
            }
        }
    }
    let nesting = nesting_report(&plant, &map, &cert, t_roa, &grid, 1e-3).unwrap();
    outcome(
        wrong_far == 0 && nesting.exceptions == 0 && nesting.members_doubled >= nesting.members,
        format!(
            "band |x0-u0| <= {band:.4}; {} nodes, {} members, {wrong} misclassified ({wrong_far} beyond one cell); \
             nesting T->2T: {} -> {} members, {} exceptions",
            samples.len(),
            nesting.members,
            nesting.members,
            nesting.members_doubled,
            nesting.exceptions
        ),
    )
}

// ---------------------------------------------------------------- 8

/// Exact solution of the piecewise-affine linear1d loops under a fault.
/// Each mode is affine in `(x, v)`; mode switches are located by bisection
/// on the exact flow.
struct WindupOracle {
    k: f64,
    r: f64,
    clamped: bool,
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Mode {
    Interior,
    Lower,
    Upper,
}

impl WindupOracle {
    fn matrix(&self, mode: Mode, offset: f64) -> Matrix3<f64> {
        let drive = self.k * (self.r - offset);
        let (vx, cx) = match mode {
            Mode::Interior => (1.0, 0.0),
            Mode::Lower => (0.0, -1.0),
            Mode::Upper => (0.0, 1.0),
        };
        let (vrow_x, vrow_c) = if mode == Mode::Interior || self.clamped { (-self.k, drive) } else { (0.0, 0.0) };
        Matrix3::new(-1.0, vx, cx, vrow_x, 0.0, vrow_c, 0.0, 0.0, 0.0)
    }

    /// Positive once the trajectory must leave `mode`.
    fn exit(&self, mode: Mode, z: &Vector3<f64>, offset: f64) -> f64 {
        let w = self.k * (self.r - z[0] - offset);
        match (mode, self.clamped) {
            (Mode::Interior, _) => (z[1] - 1.0).max(-1.0 - z[1]),
            (Mode::Lower, true) => z[1] + 1.0,
            (Mode::Upper, true) => 1.0 - z[1],
            (Mode::Lower, false) => w,
            (Mode::Upper, false) => -w,
        }
    }

    fn next_mode(&self, z: &Vector3<f64>, offset: f64) -> Mode {
        let w = self.k * (self.r - z[0] - offset);
        let v = z[1];
        if self.clamped {
            if v <= -1.0 {
                Mode::Lower
            } else if v >= 1.0 {
                Mode::Upper
            } else {
                Mode::Interior
            }
        } else if v <= -1.0 && w <= 0.0 {
            Mode::Lower
        } else if v >= 1.0 && w >= 0.0 {
            Mode::Upper
        } else {
            Mode::Interior
        }
    }

    /// Recovery time after the fault: last time `|x - r| > tol`, minus `t_off`.
    fn recovery(&self, x0: f64, v0: f64, fault: Fault, horizon: f64, tol: f64) -> f64 {
        let scan: f64 = 1e-2;
        let mut z = Vector3::new(x0, v0, 1.0);
        let mut t = 0.0;
        let mut last_bad: Option<f64> = None;
        let windows = [(0.0, fault.t_on, 0.0), (fault.t_on, fault.t_off, fault.y_offset), (fault.t_off, horizon, 0.0)];
        for (_, end, offset) in windows {
            let mut mode = self.next_mode(&z, offset);
            while t < end - 1e-12 {
                let h = scan.min(end - t);
                let a = self.matrix(mode, offset);
                let z1 = (a * h).exp() * z;
                let tracking = t >= fault.t_off;
                let err = |z: &Vector3<f64>| (z[0] - self.r).abs() - tol;
                if self.exit(mode, &z1, offset) > 0.0 {
                    // bisect for the switch, then continue from it in the new mode
                    let (mut lo, mut hi) = (0.0, h);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if self.exit(mode, &((a * mid).exp() * z), offset) > 0.0 {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    let zs = (a * hi).exp() * z;
                    if tracking && err(&zs) > 0.0 {
                        last_bad = Some(t + hi);
                    }
                    z = zs;
                    t += hi;
                    if !self.clamped {
                        z[1] = z[1].clamp(-1.0, 1.0);
                    }
                    mode = self.next_mode(&z, offset);
                    continue;
                }
                if tracking && err(&z1) > 0.0 {
                    last_bad = Some(t + h);
                } else if tracking && err(&z) > 0.0 {
                    // crossed into the band inside this step
                    let (mut lo, mut hi) = (0.0, h);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if err(&((a * mid).exp() * z)) > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    last_bad = Some(t + lo);
                }
                z = z1;
                t += h;
            }
        }
        match last_bad {
            None => 0.0,
            Some(tb) if tb >= horizon - 1e-9 => f64::INFINITY,
            Some(tb) => tb - fault.t_off,
        }
    }
}

fn anti_windup() -> Outcome {
    let (k, r, offset, t_on, tol) = (0.2, 0.5, 5.0, 10.0, 1e-2);
    let plant = builtin("linear1d").unwrap();
    let map = build_map(&plant, &unit_box(), 201).unwrap();
    let mut sim = Vec::new();
    let mut oracle = Vec::new();
    let mut worst_rel = 0.0_f64;
    for duration in [10.0, 20.0, 40.0] {
        let fault = Fault {
            t_on,
            t_off: t_on + duration,
            y_offset: offset,
        };
        let horizon = fault.t_off + 200.0;
        let mut cfg = ClosedLoopConfig::new(plant.clone(), unit_box(), k, r, vec![r], r, horizon);
        cfg.record_every = 1000;
        let cmp = compare_windup(&cfg, &map, fault, tol).unwrap();
        let sat = WindupOracle { k, r, clamped: false }.recovery(r, r, fault, horizon, tol);
        let clamp = WindupOracle { k, r, clamped: true }.recovery(r, r, fault, horizon, tol);
        for (s, o) in [(cmp.saturating.recovery_time, sat), (cmp.clamped.recovery_time, clamp)] {
            worst_rel = worst_rel.max(((s - o) / o).abs());
        }
        sim.push((cmp.saturating.recovery_time, cmp.clamped.recovery_time));
        oracle.push((sat, clamp));
    }
    let clamp_growth = sim[2].1 / sim[0].1;
    let sat_change = (sim[2].0 / sim[0].0 - 1.0).abs();
    let pass = clamp_growth > 1.5 && sat_change < 0.1 && worst_rel < 0.05;
    let fmt_pairs = |v: &[(f64, f64)]| {
        v.iter()
            .map(|(a, b)| format!("{a:.3}/{b:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    outcome(
        pass,
        format!(
            "recovery saturating/clamped for D=10,20,40: simulated {} oracle {}; clamped growth x{clamp_growth:.2}, \
             saturating change {:.1}%, worst deviation from oracle {:.2}%",
            fmt_pairs(&sim),
            fmt_pairs(&oracle),
            100.0 * sat_change,
            100.0 * worst_rel
        ),
    )
}

// ---------------------------------------------------------------- 9

fn collect_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let commands: [&[&str]; 8] = [
        &["certify", "--plant", "osc_cubic", "--r", "1.0", "--out-dir", "cert"],
        &["simulate", "--plant", "osc_cubic", "--k", "0.3", "--r", "1.0", "--horizon", "20", "--out", "traj.csv"],
        &["roa", "--plant", "linear1d", "--T", "3", "--grid", "x1:-6:6:13,u:-1:1:5", "--r", "0.5", "--summary", "roa.json"],
        &["lemma-check", "--plant", "osc_cubic", "--lemma", "slow-input", "--instances", "10", "--out", "slow.json"],
        &["lemma-check", "--plant", "osc_cubic", "--lemma", "tube", "--instances", "10", "--out", "tube.json"],
        &["lemma-check", "--plant", "osc_cubic", "--lemma", "sample-hold", "--instances", "10", "--out", "sh.json"],
        &["lemma-check", "--plant", "osc_cubic", "--lemma", "gain", "--instances", "10", "--out", "gain.json"],
        &["compare-windup", "--plant", "linear1d", "--k", "0.2", "--r", "0.5", "--summary", "windup.json"],
    ];
    let mut differing = Vec::new();
    let mut artifacts = 0usize;
    for args in commands {
        let runs: Vec<(TempDir, Vec<u8>)> = (0..2)
            .map(|_| {
                let dir = TempDir::new().unwrap();
                let out = Process::new(env!("CARGO_BIN_EXE_satint"))
                    .args(args)
                    .args(["--seed", "11"])
                    .current_dir(dir.path())
                    .output()
                    .unwrap();
                assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
                (dir, out.stdout)
            })
            .collect();
        let files = collect_files(runs[0].0.path());
        let same = runs[0].1 == runs[1].1
            && files == collect_files(runs[1].0.path())
            && files.iter().all(|f| fs::read(runs[0].0.path().join(f)).unwrap() == fs::read(runs[1].0.path().join(f)).unwrap());
        artifacts += files.len();
        if !same {
            differing.push(args[0]);
        }
    }
    outcome(
        differing.is_empty() && artifacts >= 8,
        format!("{} commands, {artifacts} artifacts plus stdout compared; differing: {differing:?}", commands.len()),
    )
}

// ----------------------------------------------------------------

fn run(n: usize, limit: Option<Duration>, check: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(check));
    let elapsed = start.elapsed();
    let (mut pass, mut detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    if let Some(limit) = limit {
        if elapsed > limit {
            pass = false;
            detail.push_str(&format!("; over the {}s budget", limit.as_secs()));
        }
    }
    println!(
        "criterion {n}: {} ({detail}) [{:.1}s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

fn main() {
    let secs = Duration::from_secs;
    let mut runs = None;
    let results = [
        run(1, Some(secs(60)), saturator_truth_table),
        run(2, Some(secs(60)), l1_lipschitz),
        run(3, Some(secs(10)), || tracking(&mut runs)),
        run(4, Some(secs(1)), constants_pipeline),
        run(5, Some(secs(300)), lemma_harnesses),
        run(6, None, || lyapunov(&runs)),
        run(7, Some(secs(30)), xt_geometry),
        run(8, Some(secs(10)), anti_windup),
        run(9, None, determinism),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
