//! The feedback interconnection `w = k(r - y)`, `u̇ = S(u, w)`,
//! `ẋ = f(x, u)` and its diagnostics.
//!
//! Both subsystems share one step `dt`. The plant is advanced by RK4 with
//! `u` frozen at the step start, then `u` takes a projected Euler step with
//! `y` frozen at the step start. `S` is discontinuous at the bounds, so it
//! is never evaluated inside RK4 stages.

use serde::Serialize;

use crate::equilibrium::EquilibriumMap;
use crate::error::{invalid, Error, Result};
use crate::numeric::{ls_slope, norm_inf};
use crate::plant::{diverged, PlantModel, Rk4};
use crate::sat_integrator::{eval_s, SaturatorSpec, DEFAULT_DT};

#[derive(Debug, Clone)]
pub struct ClosedLoopConfig {
    pub plant: PlantModel,
    pub spec: SaturatorSpec,
    pub k: f64,
    pub r: f64,
    pub x0: Vec<f64>,
    pub u0: f64,
    pub dt: f64,
    pub horizon: f64,
    /// Keep every `record_every`-th step (the final step is always kept).
    pub record_every: usize,
}

impl ClosedLoopConfig {
    pub fn new(plant: PlantModel, spec: SaturatorSpec, k: f64, r: f64, x0: Vec<f64>, u0: f64, horizon: f64) -> Self {
        Self {
            plant,
            spec,
            k,
            r,
            x0,
            u0,
            dt: DEFAULT_DT,
            horizon,
            record_every: 1,
        }
    }

    pub fn validate(&self, map: &EquilibriumMap) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(invalid(format!("gain k must be positive, got {}", self.k)));
        }
        if !self.spec.contains(self.u0) {
            return Err(invalid(format!(
                "u0 = {} outside [{}, {}]",
                self.u0, self.spec.u_min, self.spec.u_max
            )));
        }
        if !(self.dt > 0.0 && self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(invalid("closed loop needs dt > 0 and a finite horizon > 0"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        self.plant.smoke_check(&self.x0, self.u0)?;
        map.invert_g(self.r)?;
        Ok(())
    }

    fn steps(&self) -> (usize, f64) {
        let steps = (self.horizon / self.dt - 1e-9).ceil().max(1.0) as usize;
        (steps, self.horizon / steps as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedLoopRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: f64,
    pub y: f64,
    /// `y - G(u)`
    pub eta: f64,
    /// `½(u - u_r)²`
    pub v: f64,
    /// `x - Ξ(u)`
    pub xi: Vec<f64>,
    /// `G(u) - r`
    pub w_coord: f64,
}

impl ClosedLoopRecord {
    pub fn new(t: f64, x: &[f64], u: f64, y: f64, map: &EquilibriumMap, r: f64, u_r: f64) -> Self {
        let g_u = map.g_at(u);
        let xi_u = map.xi_at(u);
        Self {
            t,
            x: x.to_vec(),
            u,
            y,
            eta: y - g_u,
            v: 0.5 * (u - u_r) * (u - u_r),
            xi: x.iter().zip(&xi_u).map(|(a, b)| a - b).collect(),
            w_coord: g_u - r,
        }
    }

    /// Reference recovered from the record: `r = y - η - w`.
    pub fn reference(&self) -> f64 {
        self.y - self.eta - self.w_coord
    }

    /// `‖(ξ, G(u) - r)‖_∞`, the distance to the equilibrium in the
    /// transformed coordinates.
    pub fn transformed_norm(&self) -> f64 {
        norm_inf(&self.xi).max(self.w_coord.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IntegratorKind {
    /// `u̇ = S(u, w)`
    Saturating,
    /// `v̇ = w`, `u = sat(v)`: an integrator followed by a saturation.
    ClampedOutput,
}

/// Steps the interconnection one `dt` at a time.
#[derive(Debug, Clone)]
pub struct LoopStepper<'a> {
    plant: &'a PlantModel,
    spec: SaturatorSpec,
    kind: IntegratorKind,
    k: f64,
    r: f64,
    x: Vec<f64>,
    integ: f64,
    rk: Rk4,
}

impl<'a> LoopStepper<'a> {
    pub fn new(
        plant: &'a PlantModel,
        spec: SaturatorSpec,
        kind: IntegratorKind,
        k: f64,
        r: f64,
        x0: &[f64],
        u0: f64,
    ) -> Self {
        Self {
            plant,
            spec,
            kind,
            k,
            r,
            x: x0.to_vec(),
            integ: u0,
            rk: Rk4::new(plant.n()),
        }
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Plant input.
    pub fn u(&self) -> f64 {
        match self.kind {
            IntegratorKind::Saturating => self.integ,
            IntegratorKind::ClampedOutput => self.spec.clamp(self.integ),
        }
    }

    /// Internal integrator state (equal to `u` for the saturating integrator).
    pub fn integrator_state(&self) -> f64 {
        self.integ
    }

    pub fn y(&self) -> f64 {
        self.plant.g(&self.x)
    }

    /// Advances by `dt`; `y_offset` is added to the measured output. Returns
    /// `false` if the plant state blew up.
    pub fn step(&mut self, dt: f64, y_offset: f64) -> bool {
        let u = self.u();
        let w = self.k * (self.r - (self.plant.g(&self.x) + y_offset));
        self.rk.step(self.plant, &mut self.x, u, dt);
        self.integ = match self.kind {
            IntegratorKind::Saturating => self.spec.clamp(u + dt * eval_s(&self.spec, u, w)),
            IntegratorKind::ClampedOutput => self.integ + dt * w,
        };
        !diverged(&self.x)
    }
}

/// Simulates the closed loop and records diagnostics.
pub fn simulate_closed_loop(cfg: &ClosedLoopConfig, map: &EquilibriumMap) -> Result<Vec<ClosedLoopRecord>> {
    cfg.validate(map)?;
    let u_r = map.invert_g(cfg.r)?;
    let (steps, h) = cfg.steps();
    let mut stepper = LoopStepper::new(&cfg.plant, cfg.spec, IntegratorKind::Saturating, cfg.k, cfg.r, &cfg.x0, cfg.u0);
    let mut out = Vec::with_capacity(steps / cfg.record_every + 2);
    out.push(ClosedLoopRecord::new(0.0, stepper.x(), stepper.u(), stepper.y(), map, cfg.r, u_r));
    for i in 1..=steps {
        let t = i as f64 * h;
        if !stepper.step(h, 0.0) {
            return Err(Error::Diverged { time: t });
        }
        if i % cfg.record_every == 0 || i == steps {
            out.push(ClosedLoopRecord::new(t, stepper.x(), stepper.u(), stepper.y(), map, cfg.r, u_r));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackingMetrics {
    /// First time after which `|y - r| ≤ tol` for the rest of the run;
    /// infinite if the run ends outside the band.
    pub settle_time: f64,
    /// Largest excursion of `y` past `r`, relative to `|r - y(0)|`.
    pub overshoot: f64,
    pub final_error: f64,
    /// `max |u - u_r|`
    pub u_excursion: f64,
}

pub fn tracking_metrics(records: &[ClosedLoopRecord], tol: f64) -> Result<TrackingMetrics> {
    let first = records.first().ok_or_else(|| invalid("tracking metrics need records"))?;
    let last = records.last().unwrap();
    let r = first.reference();
    let err = |rec: &ClosedLoopRecord| (rec.y - r).abs();
    let settle_time = match records.iter().rposition(|rec| err(rec) > tol) {
        None => first.t,
        Some(i) if i + 1 == records.len() => f64::INFINITY,
        Some(i) => records[i + 1].t,
    };
    let step = r - first.y;
    let overshoot = if step.abs() < 1e-12 {
        0.0
    } else {
        records
            .iter()
            .map(|rec| ((rec.y - r) * step.signum()).max(0.0))
            .fold(0.0, f64::max)
            / step.abs()
    };
    Ok(TrackingMetrics {
        settle_time,
        overshoot,
        final_error: err(last),
        u_excursion: records.iter().map(|rec| (2.0 * rec.v).sqrt()).fold(0.0, f64::max),
    })
}

/// Least-squares slope of `ln ‖(ξ, G(u) - r)‖` over the run, ignoring
/// values under `floor`. Negative for exponential convergence.
pub fn log_error_slope(records: &[ClosedLoopRecord], floor: f64) -> Option<f64> {
    let stride = (records.len() / 4000).max(1);
    let (ts, ls): (Vec<f64>, Vec<f64>) = records
        .iter()
        .step_by(stride)
        .filter_map(|rec| {
            let e = rec.transformed_norm();
            (e > floor).then(|| (rec.t, e.ln()))
        })
        .unzip();
    ls_slope(&ts, &ls)
}

/// `10·dt·(1 + k)`: relative slack granted to discrete versions of
/// continuous-time inequalities.
pub fn tol_dt(dt: f64, k: f64) -> f64 {
    10.0 * dt * (1.0 + k)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    /// Observed `sup |η|`.
    pub eta_star: f64,
    /// End of the initial interval on which `|G(u) - r| > 2η*`.
    pub excess_end: f64,
    pub tol_dt: f64,
    pub decrease_checks: usize,
    /// Steps with `|G(u) - r| > 2η*` but `ΔV/Δt > -2μkV` beyond slack.
    pub decrease_violations: usize,
    pub envelope_checks: usize,
    /// Records in the excess interval with `|u - u_r| > e^{-μkt}|u(0) - u_r|`.
    pub envelope_violations: usize,
    /// Records with `|G(u) - r| > max{|G_r(e^{-μkt}(u(0) - u_r))|, 2η*}`.
    pub bound_violations: usize,
}

impl LyapunovReport {
    pub fn holds(&self) -> bool {
        self.decrease_violations == 0 && self.envelope_violations == 0 && self.bound_violations == 0
    }
}

/// Checks the Lyapunov decrease, the decay envelope of `|u - u_r|` and the
/// resulting bound on `|G(u) - r|` along a recorded run.
pub fn lyapunov_checks(records: &[ClosedLoopRecord], map: &EquilibriumMap, k: f64, dt: f64) -> Result<LyapunovReport> {
    let first = records.first().ok_or_else(|| invalid("Lyapunov checks need records"))?;
    let r = first.reference();
    let gr = map.shifted_gain(r)?;
    let u_r = gr.u_r;
    let mu = map.mu;
    let tol = tol_dt(dt, k);
    let eta_star = records.iter().map(|rec| rec.eta.abs()).fold(0.0, f64::max);
    let excess = |rec: &ClosedLoopRecord| rec.w_coord.abs() > 2.0 * eta_star;

    let mut report = LyapunovReport {
        eta_star,
        excess_end: records.iter().find(|rec| !excess(rec)).map_or(f64::INFINITY, |rec| rec.t),
        tol_dt: tol,
        decrease_checks: 0,
        decrease_violations: 0,
        envelope_checks: 0,
        envelope_violations: 0,
        bound_violations: 0,
    };

    for pair in records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if !excess(a) {
            continue;
        }
        report.decrease_checks += 1;
        let rate = (b.v - a.v) / (b.t - a.t);
        let bound = -2.0 * mu * k * a.v;
        if rate > bound + tol * bound.abs() + 1e-15 {
            report.decrease_violations += 1;
        }
    }

    let d0 = first.u - u_r;
    for rec in records {
        let decay = (-mu * k * rec.t).exp();
        if rec.t < report.excess_end {
            report.envelope_checks += 1;
            if (rec.u - u_r).abs() > decay * d0.abs() * (1.0 + tol) + 1e-15 {
                report.envelope_violations += 1;
            }
        }
        let bound = gr.eval(decay * d0).abs().max(2.0 * eta_star);
        if rec.w_coord.abs() > bound * (1.0 + tol) + 1e-15 {
            report.bound_violations += 1;
        }
    }
    Ok(report)
}

/// A measurement fault: `y_offset` is added to the measured output on
/// `[t_on, t_off)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fault {
    pub t_on: f64,
    pub t_off: f64,
    pub y_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindupSample {
    pub t: f64,
    pub y: f64,
    pub u: f64,
    /// Integrator state (`u` itself for the saturating integrator).
    pub state: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindupRun {
    pub kind: IntegratorKind,
    /// Time after `t_off` until `|y - r| ≤ tol` for the rest of the run;
    /// infinite if never.
    pub recovery_time: f64,
    pub state_min: f64,
    pub state_max: f64,
    #[serde(skip)]
    pub trace: Vec<WindupSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindupComparison {
    pub fault: Fault,
    pub recovery_tol: f64,
    pub saturating: WindupRun,
    pub clamped: WindupRun,
}

/// Runs the same fault scenario with the saturating integrator and with an
/// integrator followed by a saturation, and reports post-fault recovery.
pub fn compare_windup(
    cfg: &ClosedLoopConfig,
    map: &EquilibriumMap,
    fault: Fault,
    recovery_tol: f64,
) -> Result<WindupComparison> {
    cfg.validate(map)?;
    if !(0.0 <= fault.t_on && fault.t_on <= fault.t_off && fault.t_off <= cfg.horizon) {
        return Err(invalid(format!(
            "fault window [{}, {}] must lie inside [0, {}]",
            fault.t_on, fault.t_off, cfg.horizon
        )));
    }
    if !(recovery_tol > 0.0) {
        return Err(invalid("recovery tolerance must be positive"));
    }
    let run = |kind| -> Result<WindupRun> {
        let (steps, h) = cfg.steps();
        let mut st = LoopStepper::new(&cfg.plant, cfg.spec, kind, cfg.k, cfg.r, &cfg.x0, cfg.u0);
        let mut last_bad: Option<f64> = None;
        let mut trace = Vec::with_capacity(steps / cfg.record_every + 2);
        let (mut lo, mut hi) = (cfg.u0, cfg.u0);
        let sample = |st: &LoopStepper<'_>, t: f64| WindupSample {
            t,
            y: st.y(),
            u: st.u(),
            state: st.integrator_state(),
        };
        trace.push(sample(&st, 0.0));
        for i in 0..steps {
            let t = i as f64 * h;
            let offset = if t >= fault.t_on && t < fault.t_off { fault.y_offset } else { 0.0 };
            let t1 = (i + 1) as f64 * h;
            if !st.step(h, offset) {
                return Err(Error::Diverged { time: t1 });
            }
            lo = lo.min(st.integrator_state());
            hi = hi.max(st.integrator_state());
            if t1 >= fault.t_off && (st.y() - cfg.r).abs() > recovery_tol {
                last_bad = Some(t1);
            }
            if (i + 1) % cfg.record_every == 0 || i + 1 == steps {
                trace.push(sample(&st, t1));
            }
        }
        let recovery_time = match last_bad {
            None => 0.0,
            Some(t) if t >= cfg.horizon - 0.5 * h => f64::INFINITY,
            Some(t) => t + h - fault.t_off,
        };
        Ok(WindupRun {
            kind,
            recovery_time,
            state_min: lo,
            state_max: hi,
            trace,
        })
    };
    Ok(WindupComparison {
        fault,
        recovery_tol,
        saturating: run(IntegratorKind::Saturating)?,
        clamped: run(IntegratorKind::ClampedOutput)?,
    })
}
