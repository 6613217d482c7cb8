//! The saturating integrator `u̇ = S(u, w)`.
//!
//! `S` passes its input through while `u` is strictly inside
//! `[u_min, u_max]`, and only lets the component pointing back into the
//! interval act once `u` sits on a bound:
//!
//! ```text
//!            ⎧ max{w, 0}   u ≤ u_min
//! S(u, w) =  ⎨ w           u_min < u < u_max
//!            ⎩ min{w, 0}   u ≥ u_max
//! ```
//!
//! Trajectories are produced by a projected explicit step: advance by the
//! mean drive over the step, then clamp to the interval. The step map is
//! 1-Lipschitz in both the state and the drive, which is what makes the
//! discrete scheme obey the L¹ deviation estimate exactly.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Default step for integrator and closed-loop simulation.
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturatorSpec {
    pub u_min: f64,
    pub u_max: f64,
}

impl SaturatorSpec {
    pub fn new(u_min: f64, u_max: f64) -> Result<Self> {
        if !(u_min.is_finite() && u_max.is_finite()) || u_min >= u_max {
            return Err(invalid(format!(
                "saturator bounds must satisfy u_min < u_max, got [{u_min}, {u_max}]"
            )));
        }
        Ok(Self { u_min, u_max })
    }

    #[inline]
    pub fn clamp(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }

    #[inline]
    pub fn contains(&self, u: f64) -> bool {
        (self.u_min..=self.u_max).contains(&u)
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }
}

/// The switching function `S(u, w)`. Points exactly on a bound take the
/// boundary branch.
#[inline]
pub fn eval_s(spec: &SaturatorSpec, u: f64, w: f64) -> f64 {
    if u <= spec.u_min {
        w.max(0.0)
    } else if u >= spec.u_max {
        w.min(0.0)
    } else {
        w
    }
}

/// State of the integrator; always inside the bounds of its spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturatorState {
    u: f64,
}

impl SaturatorState {
    pub fn new(spec: &SaturatorSpec, u: f64) -> Result<Self> {
        if !spec.contains(u) {
            return Err(invalid(format!(
                "initial integrator state {u} outside [{}, {}]",
                spec.u_min, spec.u_max
            )));
        }
        Ok(Self { u })
    }

    #[inline]
    pub fn u(&self) -> f64 {
        self.u
    }

    /// One projected step with the drive held at `w` over the step.
    pub fn step(self, spec: &SaturatorSpec, w: f64, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        Ok(self.step_unchecked(spec, w, dt))
    }

    #[inline]
    pub(crate) fn step_unchecked(self, spec: &SaturatorSpec, w: f64, dt: f64) -> Self {
        Self {
            u: spec.clamp(self.u + dt * eval_s(spec, self.u, w)),
        }
    }

    /// One projected step over `[t, t + dt]` driven by the mean of `signal`
    /// on that interval.
    pub fn advance(
        self,
        spec: &SaturatorSpec,
        signal: &dyn InputSignal,
        t: f64,
        dt: f64,
    ) -> Result<Self> {
        check_dt(dt)?;
        let w = signal.mean_over(t, t + dt);
        Ok(self.step_unchecked(spec, w, dt))
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("step size must be positive, got {dt}")))
    }
}

/// A scalar drive signal defined on `[0, horizon]`.
pub trait InputSignal: Send + Sync {
    fn value(&self, t: f64) -> f64;

    /// End of the definition interval, `None` for signals defined for all t ≥ 0.
    fn horizon(&self) -> Option<f64> {
        None
    }

    /// Times where the signal may jump. Signals that return `Some` are
    /// piecewise constant between consecutive breakpoints.
    fn breakpoints(&self) -> Option<&[f64]> {
        None
    }

    /// Mean of the signal over `[a, b]`. The default uses Simpson's rule.
    fn mean_over(&self, a: f64, b: f64) -> f64 {
        (self.value(a) + 4.0 * self.value(0.5 * (a + b)) + self.value(b)) / 6.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantSignal(pub f64);

impl InputSignal for ConstantSignal {
    fn value(&self, _t: f64) -> f64 {
        self.0
    }

    fn mean_over(&self, _a: f64, _b: f64) -> f64 {
        self.0
    }
}

/// Right-continuous piecewise-constant signal: `values[i]` holds on
/// `[starts[i], starts[i + 1])`, the last value up to `end`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstant {
    starts: Vec<f64>,
    values: Vec<f64>,
    end: f64,
}

impl PiecewiseConstant {
    pub fn new(starts: Vec<f64>, values: Vec<f64>, end: f64) -> Result<Self> {
        if starts.is_empty() || starts.len() != values.len() {
            return Err(invalid("piecewise signal needs matching, nonempty starts and values"));
        }
        if starts[0] != 0.0 {
            return Err(invalid("piecewise signal must start at t = 0"));
        }
        if starts.windows(2).any(|w| w[1] <= w[0]) || *starts.last().unwrap() >= end {
            return Err(invalid("piecewise signal breakpoints must increase and end before the horizon"));
        }
        Ok(Self { starts, values, end })
    }

    /// Random signal with `pieces` segments of random length and values in
    /// `[-amplitude, amplitude]`.
    pub fn random<R: rand::Rng + ?Sized>(
        rng: &mut R,
        pieces: usize,
        amplitude: f64,
        end: f64,
    ) -> Self {
        let pieces = pieces.max(1);
        let mut cuts: Vec<f64> = (1..pieces).map(|_| rng.gen_range(0.0..end)).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut starts = vec![0.0];
        starts.extend(cuts.into_iter().filter(|&c| c > 0.0));
        let values = (0..starts.len())
            .map(|_| rng.gen_range(-amplitude..=amplitude))
            .collect();
        Self { starts, values, end }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    fn index(&self, t: f64) -> usize {
        self.starts.partition_point(|&s| s <= t).saturating_sub(1)
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        let mut acc = 0.0;
        let mut i = self.index(a);
        let mut lo = a;
        while lo < b {
            let hi = self.starts.get(i + 1).copied().unwrap_or(f64::INFINITY).min(b);
            acc += self.values[i] * (hi - lo);
            lo = hi;
            i += 1;
        }
        acc
    }
}

impl InputSignal for PiecewiseConstant {
    fn value(&self, t: f64) -> f64 {
        self.values[self.index(t)]
    }

    fn horizon(&self) -> Option<f64> {
        Some(self.end)
    }

    fn breakpoints(&self) -> Option<&[f64]> {
        Some(&self.starts)
    }

    fn mean_over(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return self.value(a);
        }
        self.integral(a, b) / (b - a)
    }
}

/// Wraps a closure as a signal defined for all t ≥ 0.
pub struct FnSignal<F>(pub F);

impl<F: Fn(f64) -> f64 + Send + Sync> InputSignal for FnSignal<F> {
    fn value(&self, t: f64) -> f64 {
        (self.0)(t)
    }
}

/// Simulates `u̇ = S(u, w)` on `[0, horizon]` with steps of at most `dt`.
/// Returns `(t, u)` samples including both endpoints.
pub fn simulate(
    spec: &SaturatorSpec,
    u0: f64,
    signal: &dyn InputSignal,
    dt: f64,
    horizon: f64,
) -> Result<Vec<(f64, f64)>> {
    check_dt(dt)?;
    if !(horizon > 0.0) {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    let steps = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
    let h = horizon / steps as f64;
    let mut state = SaturatorState::new(spec, u0)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push((0.0, state.u));
    for i in 0..steps {
        let t = i as f64 * h;
        state = state.step_unchecked(spec, signal.mean_over(t, t + h), h);
        out.push(((i + 1) as f64 * h, state.u));
    }
    Ok(out)
}

/// `∫₀^horizon |w2 - w1|`, exact when both signals are piecewise constant.
pub fn l1_distance(w1: &dyn InputSignal, w2: &dyn InputSignal, horizon: f64) -> f64 {
    if let (Some(b1), Some(b2)) = (w1.breakpoints(), w2.breakpoints()) {
        let mut cuts: Vec<f64> = b1
            .iter()
            .chain(b2)
            .copied()
            .filter(|&t| t < horizon)
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.push(horizon);
        return cuts
            .windows(2)
            .map(|w| (w2.value(w[0]) - w1.value(w[0])).abs() * (w[1] - w[0]))
            .sum();
    }
    let n = ((horizon / 1e-4).ceil() as usize).max(1000);
    let h = horizon / n as f64;
    let diff = |t: f64| (w2.value(t) - w1.value(t)).abs();
    let inner: f64 = (1..n).map(|i| diff(i as f64 * h)).sum();
    h * (0.5 * (diff(0.0) + diff(horizon)) + inner)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct L1Report {
    /// `sup_t |u2(t) - u1(t)|`
    pub lhs: f64,
    /// `|u2(0) - u1(0)| + ∫|w2 - w1|`
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Checks `sup |u2 - u1| ≤ |u2(0) - u1(0)| + ‖w2 - w1‖_{L¹}` on simulated
/// trajectories, with a discretization slack of `4·dt·max|w|`.
#[allow(clippy::too_many_arguments)]
pub fn l1_deviation_bound_check(
    spec: &SaturatorSpec,
    u1_0: f64,
    u2_0: f64,
    w1: &dyn InputSignal,
    w2: &dyn InputSignal,
    horizon: f64,
    dt: f64,
) -> Result<L1Report> {
    for (name, w) in [("w1", w1), ("w2", w2)] {
        if let Some(h) = w.horizon() {
            if h < horizon {
                return Err(invalid(format!(
                    "signal {name} ends at {h}, before the horizon {horizon}"
                )));
            }
        }
    }
    if let (Some(h1), Some(h2)) = (w1.horizon(), w2.horizon()) {
        if h1 != h2 {
            return Err(invalid(format!("signal horizons differ: {h1} vs {h2}")));
        }
    }
    let a = simulate(spec, u1_0, w1, dt, horizon)?;
    let b = simulate(spec, u2_0, w2, dt, horizon)?;
    let lhs = a
        .iter()
        .zip(&b)
        .fold(0.0_f64, |m, (p, q)| m.max((q.1 - p.1).abs()));
    let rhs = (u2_0 - u1_0).abs() + l1_distance(w1, w2, horizon);
    let max_w = a
        .iter()
        .map(|&(t, _)| w1.value(t).abs().max(w2.value(t).abs()))
        .fold(0.0_f64, f64::max);
    let slack = 4.0 * dt * max_w;
    Ok(L1Report {
        lhs,
        rhs,
        slack,
        holds: lhs <= rhs + slack,
    })
}
