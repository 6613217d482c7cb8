//! Falsification harnesses for the slow-input lemma, the tube lemma, the
//! sample-hold comparison inside the slow-input argument, and the gain
//! lemma. Each harness samples instances satisfying a lemma's hypotheses,
//! simulates them and counts instances where the conclusion fails.
//!
//! Distances are measured in the ∞-norm, the same norm used by the
//! stability certificate and the Lipschitz estimates.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::closed_loop::tol_dt;
use crate::equilibrium::{EquilibriumMap, EquilibriumTracker};
use crate::error::{invalid, Error, Result};
use crate::gain_synthesis::GainCertificate;
use crate::numeric::{dist_inf, stream_rng, unit_direction};
use crate::plant::{diverged, PlantModel, Rk4};
use crate::sat_integrator::{eval_s, InputSignal, SaturatorSpec, DEFAULT_DT};
use crate::stability_cert::CERTIFICATE_LABEL;

/// Printed in every report.
pub const HARNESS_NOTE: &str = "a zero-violation run is consistency evidence, never proof";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LemmaId {
    SlowInput,
    Tube,
    SampleHold,
    Gain,
}

impl LemmaId {
    pub const ALL: [LemmaId; 4] = [LemmaId::SlowInput, LemmaId::Tube, LemmaId::SampleHold, LemmaId::Gain];

    pub fn as_str(self) -> &'static str {
        match self {
            LemmaId::SlowInput => "slow-input",
            LemmaId::Tube => "tube",
            LemmaId::SampleHold => "sample-hold",
            LemmaId::Gain => "gain",
        }
    }
}

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LemmaId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LemmaId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown lemma '{s}' (expected slow-input, tube, sample-hold or gain)")))
    }
}

/// Clamped piecewise-linear input: on each segment the value moves with a
/// constant slope and is clipped to the saturation box. Its Lipschitz
/// constant is the largest slope magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct RampInput {
    spec: SaturatorSpec,
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    end: f64,
}

impl RampInput {
    pub fn new(spec: SaturatorSpec, u0: f64, slopes: Vec<f64>, segment: f64) -> Result<Self> {
        if !spec.contains(u0) || slopes.is_empty() || !(segment > 0.0) {
            return Err(invalid("ramp input needs u0 in the box, one slope or more and a positive segment"));
        }
        let mut knots = Vec::with_capacity(slopes.len());
        let mut values = Vec::with_capacity(slopes.len());
        let mut v = u0;
        for (i, s) in slopes.iter().enumerate() {
            knots.push(i as f64 * segment);
            values.push(v);
            v = spec.clamp(v + s * segment);
        }
        Ok(Self {
            spec,
            knots,
            values,
            end: slopes.len() as f64 * segment,
            slopes,
        })
    }

    /// Slopes drawn uniformly from `[-bound, bound]`, one per segment.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        spec: SaturatorSpec,
        u0: f64,
        bound: f64,
        segment: f64,
        end: f64,
    ) -> Result<Self> {
        let count = (end / segment).ceil().max(1.0) as usize;
        let slopes = (0..count)
            .map(|_| if bound > 0.0 { rng.gen_range(-bound..=bound) } else { 0.0 })
            .collect();
        Self::new(spec, u0, slopes, segment)
    }

    pub fn lipschitz(&self) -> f64 {
        self.slopes.iter().fold(0.0, |a, s| a.max(s.abs()))
    }

    pub fn end(&self) -> f64 {
        self.end
    }
}

impl InputSignal for RampInput {
    fn value(&self, t: f64) -> f64 {
        let i = self.knots.partition_point(|&k| k <= t).saturating_sub(1);
        self.spec.clamp(self.values[i] + self.slopes[i] * (t - self.knots[i]))
    }

    fn horizon(&self) -> Option<f64> {
        Some(self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub eps: f64,
    /// Largest observed value of (checked quantity) / (bound).
    pub worst_ratio: f64,
    /// Contraction time, gain lemma only.
    pub tau: Option<f64>,
    /// Time after which the slow dynamics were integrated on the reduced
    /// model (gain lemma with very small k).
    pub reduced_after: Option<f64>,
    pub holds: bool,
    /// Exceeded the bound, but only within the discretization slack.
    pub marginal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub lemma_id: LemmaId,
    pub certificate: &'static str,
    pub note: &'static str,
    pub instances: usize,
    pub violations: usize,
    pub numerical_marginal: usize,
    /// Smallest relative margin over instances; negative when violated.
    /// For the gain lemma this is `1 - τ/horizon`.
    pub worst_margin: f64,
    pub tol_dt: f64,
    pub details: Vec<InstanceRecord>,
}

impl LemmaReport {
    fn assemble(lemma_id: LemmaId, tol: f64, details: Vec<InstanceRecord>, margin: impl Fn(&InstanceRecord) -> f64) -> Self {
        Self {
            lemma_id,
            certificate: CERTIFICATE_LABEL,
            note: HARNESS_NOTE,
            instances: details.len(),
            violations: details.iter().filter(|d| !d.holds).count(),
            numerical_marginal: details.iter().filter(|d| d.marginal).count(),
            worst_margin: details.iter().map(margin).fold(f64::INFINITY, f64::min),
            tol_dt: tol,
            details,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaOptions {
    pub n_instances: usize,
    pub seed: u64,
    pub dt: f64,
    /// Open-loop horizon as a multiple of the certification `T`.
    pub horizon_factor: f64,
    /// Evaluate the checked quantity every `check_every` steps.
    pub check_every: usize,
    /// Closed-loop gain for the gain lemma; `None` means `k_max / 2`.
    pub k: Option<f64>,
    /// Closed-loop runs longer than this switch to the reduced slow model
    /// after the fast transient.
    pub max_direct_time: f64,
    /// Intervals of length `T` in the sample-hold comparison.
    pub sample_hold_intervals: usize,
}

impl Default for LemmaOptions {
    fn default() -> Self {
        Self {
            n_instances: 50,
            seed: 0,
            dt: DEFAULT_DT,
            horizon_factor: 3.0,
            check_every: 5,
            k: None,
            max_direct_time: 400.0,
            sample_hold_intervals: 3,
        }
    }
}

impl LemmaOptions {
    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.check_every == 0 || !(self.horizon_factor >= 1.0) {
            return Err(invalid("lemma options need dt > 0, check_every ≥ 1 and horizon_factor ≥ 1"));
        }
        Ok(())
    }
}

fn ratio(value: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        value / bound
    } else if value <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn classify(worst_ratio: f64, tol: f64) -> (bool, bool) {
    let holds = worst_ratio <= 1.0 + tol;
    (holds, holds && worst_ratio > 1.0)
}

/// `ε` log-uniform on `[ε₀/100, ε₀]`.
fn sample_eps<R: Rng + ?Sized>(rng: &mut R, eps0: f64) -> f64 {
    eps0 * 10f64.powf(-2.0 * rng.gen::<f64>())
}

/// Point at ∞-distance at most `eps` from `center`; half of the draws sit
/// on the boundary of the ball.
fn perturb<R: Rng + ?Sized>(rng: &mut R, center: &[f64], eps: f64) -> Vec<f64> {
    let d = unit_direction(rng, center.len());
    let s = if rng.gen_bool(0.5) { 1.0 } else { rng.gen::<f64>() };
    center.iter().zip(&d).map(|(c, d)| c + eps * s * d).collect()
}

/// One open-loop instance of the slow-input and tube lemmas.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopInstance {
    pub eps: f64,
    pub x0: Vec<f64>,
    pub input: RampInput,
}

impl OpenLoopInstance {
    /// Random `ε`, input with slope at most `κε` re-drawn every `T/4`, and
    /// `x0` within `ε` of `Ξ(u(0))`.
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        tracker: &mut EquilibriumTracker<'_>,
        spec: SaturatorSpec,
        gain: &GainCertificate,
        horizon: f64,
    ) -> Result<Self> {
        let eps = sample_eps(rng, gain.eps0);
        let u0 = rng.gen_range(spec.u_min..=spec.u_max);
        let input = RampInput::random(rng, spec, u0, gain.kappa * eps, gain.t / 4.0, horizon)?;
        let x0 = perturb(rng, tracker.xi(u0), eps);
        Ok(Self { eps, x0, input })
    }
}

/// Samples `(t, ‖x(t) - Ξ(u(t))‖)` along the open-loop response to the
/// instance input. Stops early if the state blows up.
pub fn open_loop_deviation(
    plant: &PlantModel,
    map: &EquilibriumMap,
    inst: &OpenLoopInstance,
    dt: f64,
    check_every: usize,
) -> Result<Vec<(f64, f64)>> {
    let end = inst.input.end();
    let steps = (end / dt - 1e-9).ceil().max(1.0) as usize;
    let h = end / steps as f64;
    let mut tracker = EquilibriumTracker::new(plant, map);
    let mut rk = Rk4::new(plant.n());
    let mut x = inst.x0.clone();
    let u = &inst.input;
    let mut out = Vec::with_capacity(steps / check_every + 2);
    out.push((0.0, dist_inf(&x, tracker.xi(u.value(0.0)))));
    for i in 0..steps {
        let t = i as f64 * h;
        rk.step_with(plant, &mut x, [u.value(t), u.value(t + 0.5 * h), u.value(t + h)], h);
        if diverged(&x) {
            out.push((t + h, f64::INFINITY));
            break;
        }
        if (i + 1) % check_every == 0 || i + 1 == steps {
            let t1 = (i + 1) as f64 * h;
            out.push((t1, dist_inf(&x, tracker.xi(u.value(t1)))));
        }
    }
    Ok(out)
}

fn run_open_loop(
    id: LemmaId,
    plant: &PlantModel,
    map: &EquilibriumMap,
    gain: &GainCertificate,
    opts: &LemmaOptions,
    instance_override: Option<&(dyn Fn(usize) -> Option<OpenLoopInstance> + Sync)>,
) -> Result<LemmaReport> {
    opts.validate()?;
    let tol = tol_dt(opts.dt, 0.0);
    let horizon = opts.horizon_factor * gain.t;
    let details: Vec<Result<InstanceRecord>> = (0..opts.n_instances)
        .into_par_iter()
        .map(|i| {
            let inst = match instance_override.and_then(|f| f(i)) {
                Some(inst) => inst,
                None => {
                    let mut rng = stream_rng(opts.seed, i as u64);
                    let mut tracker = EquilibriumTracker::new(plant, map);
                    OpenLoopInstance::sample(&mut rng, &mut tracker, map.spec, gain, horizon)?
                }
            };
            let dev = open_loop_deviation(plant, map, &inst, opts.dt, opts.check_every)?;
            let worst = match id {
                LemmaId::SlowInput => {
                    let bound = 2.0 / 3.0 * inst.eps;
                    dev.iter()
                        .filter(|(t, _)| *t >= gain.t - 1e-12)
                        .map(|&(_, d)| ratio(d, bound))
                        .fold(0.0, f64::max)
                }
                _ => {
                    let bound = (gain.m + 1.0 / 6.0) * inst.eps;
                    dev.iter().map(|&(_, d)| ratio(d, bound)).fold(0.0, f64::max)
                }
            };
            let (holds, marginal) = classify(worst, tol);
            Ok(InstanceRecord {
                index: i,
                eps: inst.eps,
                worst_ratio: worst,
                tau: None,
                reduced_after: None,
                holds,
                marginal,
            })
        })
        .collect();
    let details = details.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(LemmaReport::assemble(id, tol, details, |d| 1.0 - d.worst_ratio))
}

/// Checks `‖x(t) - Ξ(u(t))‖ ≤ (2/3)ε` for `t ≥ T` on random instances.
pub fn check_slow_input_lemma(
    plant: &PlantModel,
    map: &EquilibriumMap,
    gain: &GainCertificate,
    opts: &LemmaOptions,
) -> Result<LemmaReport> {
    run_open_loop(LemmaId::SlowInput, plant, map, gain, opts, None)
}

/// Checks `‖x(t) - Ξ(u(t))‖ < (m + 1/6)ε` for all `t ≥ 0` on random instances.
pub fn check_tube_lemma(
    plant: &PlantModel,
    map: &EquilibriumMap,
    gain: &GainCertificate,
    opts: &LemmaOptions,
) -> Result<LemmaReport> {
    run_open_loop(LemmaId::Tube, plant, map, gain, opts, None)
}

/// Runs the slow-input or tube check on caller-supplied instances.
pub fn check_open_loop_instances(
    id: LemmaId,
    plant: &PlantModel,
    map: &EquilibriumMap,
    gain: &GainCertificate,
    instances: &[OpenLoopInstance],
    opts: &LemmaOptions,
) -> Result<LemmaReport> {
    if !matches!(id, LemmaId::SlowInput | LemmaId::Tube) {
        return Err(invalid(format!("{id} is not an open-loop lemma")));
    }
    let opts = LemmaOptions {
        n_instances: instances.len(),
        ..opts.clone()
    };
    let pick = |i: usize| instances.get(i).cloned();
    run_open_loop(id, plant, map, gain, &opts, Some(&pick))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalDeviation {
    /// `sup ‖z_k(t) - x(t)‖` over the interval.
    pub sup_dev: f64,
    /// `(L₂δT/L₁)(e^{L₁T} - 1)`, the bound at the end of the interval.
    pub bound: f64,
    /// Largest deviation / bound ratio at the sampled times.
    pub worst_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleHoldRecord {
    pub delta: f64,
    pub sup_dev: f64,
    pub bound: f64,
    pub worst_ratio: f64,
    pub intervals: Vec<IntervalDeviation>,
}

/// Compares the response `x` to `u` with the responses `z_k` to the
/// sample-hold input `u_T` restarted from `x` at the start of every
/// interval of length `T`.
pub fn check_sample_hold_comparison(
    plant: &PlantModel,
    gain: &GainCertificate,
    x0: &[f64],
    input: &RampInput,
    n_intervals: usize,
    dt: f64,
) -> Result<SampleHoldRecord> {
    if n_intervals == 0 || !(dt > 0.0) {
        return Err(invalid("sample-hold comparison needs at least one interval and dt > 0"));
    }
    plant.smoke_check(x0, input.value(0.0))?;
    let period = gain.t;
    let steps = (period / dt).round().max(1.0) as usize;
    let h = period / steps as f64;
    let delta = input.lipschitz();
    let (l1, l2) = (gain.l1, gain.l2);
    let bound_at = |s: f64| l2 * delta * period / l1 * (l1 * s).exp_m1();

    let mut rk = Rk4::new(plant.n());
    let mut x = x0.to_vec();
    let mut intervals = Vec::with_capacity(n_intervals);
    for kk in 0..n_intervals {
        let start = kk as f64 * period;
        let held = input.value(start);
        let mut z = x.clone();
        let (mut sup_dev, mut worst_ratio) = (0.0f64, 0.0f64);
        for i in 0..steps {
            let t = start + i as f64 * h;
            rk.step_with(plant, &mut x, [input.value(t), input.value(t + 0.5 * h), input.value(t + h)], h);
            rk.step(plant, &mut z, held, h);
            if diverged(&x) || diverged(&z) {
                return Err(Error::Diverged { time: t + h });
            }
            let dev = dist_inf(&x, &z);
            sup_dev = sup_dev.max(dev);
            worst_ratio = worst_ratio.max(ratio(dev, bound_at((i + 1) as f64 * h)));
        }
        intervals.push(IntervalDeviation {
            sup_dev,
            bound: bound_at(period),
            worst_ratio,
        });
    }
    Ok(SampleHoldRecord {
        delta,
        sup_dev: intervals.iter().map(|d| d.sup_dev).fold(0.0, f64::max),
        bound: bound_at(period),
        worst_ratio: intervals.iter().map(|d| d.worst_ratio).fold(0.0, f64::max),
        intervals,
    })
}

/// Sample-hold comparison on random instances drawn like the slow-input
/// instances.
pub fn check_sample_hold_lemma(
    plant: &PlantModel,
    map: &EquilibriumMap,
    gain: &GainCertificate,
    opts: &LemmaOptions,
) -> Result<LemmaReport> {
    opts.validate()?;
    let tol = tol_dt(opts.dt, 0.0);
    let horizon = opts.sample_hold_intervals as f64 * gain.t;
    let details: Vec<Result<InstanceRecord>> = (0..opts.n_instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(opts.seed, i as u64);
            let mut tracker = EquilibriumTracker::new(plant, map);
            let inst = OpenLoopInstance::sample(&mut rng, &mut tracker, map.spec, gain, horizon)?;
            let rec = check_sample_hold_comparison(plant, gain, &inst.x0, &inst.input, opts.sample_hold_intervals, opts.dt)?;
            let (holds, marginal) = classify(rec.worst_ratio, tol);
            Ok(InstanceRecord {
                index: i,
                eps: inst.eps,
                worst_ratio: rec.worst_ratio,
                tau: None,
                reduced_after: None,
                holds,
                marginal,
            })
        })
        .collect();
    let details = details.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(LemmaReport::assemble(LemmaId::SampleHold, tol, details, |d| 1.0 - d.worst_ratio))
}

/// One closed-loop instance of the gain lemma.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainInstance {
    pub eps: f64,
    pub r: f64,
    pub x0: Vec<f64>,
    pub u0: f64,
}

impl GainInstance {
    /// Random `ε`, reference `r = G(u_r)` with `u_r` in the inner 80% of
    /// the box, `|G(u0) - r| ≤ λ̃ε` and `‖x0 - Ξ(u0)‖ ≤ ε`.
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        tracker: &mut EquilibriumTracker<'_>,
        spec: SaturatorSpec,
        gain: &GainCertificate,
    ) -> Self {
        let eps = sample_eps(rng, gain.eps0);
        let pad = 0.1 * spec.width();
        let u_r = rng.gen_range(spec.u_min + pad..=spec.u_max - pad);
        let r = tracker.g(u_r);
        let target = r + gain.lambda_tilde * eps * rng.gen_range(-1.0..=1.0);
        let mut u0 = spec.clamp(tracker.invert_g(target));
        // the inversion is clamped to the box, so pull back inside the band if needed
        let (g_lo, g_hi) = (r - gain.lambda_tilde * eps, r + gain.lambda_tilde * eps);
        let g0 = tracker.g(u0);
        if g0 < g_lo || g0 > g_hi {
            u0 = u_r;
        }
        let x0 = perturb(rng, tracker.xi(u0), eps);
        Self { eps, r, x0, u0 }
    }
}

/// Samples of `(t, ‖x - Ξ(u)‖, |G(u) - r|)` along a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTrace {
    pub samples: Vec<(f64, f64, f64)>,
    pub horizon: f64,
    pub reduced_after: Option<f64>,
}

impl GainTrace {
    /// Earliest sampled `τ` after which `‖x - Ξ(u)‖ ≤ qε` and
    /// `|G(u) - r| ≤ qλ̃ε` hold (within relative slack `tol`) for the rest
    /// of the run. `None` if the last sample fails.
    pub fn contraction_time(&self, q: f64, eps: f64, lambda_tilde: f64, tol: f64) -> Option<f64> {
        let ok = |&(_, dx, dw): &(f64, f64, f64)| {
            dx <= q * eps * (1.0 + tol) + 1e-14 && dw <= q * lambda_tilde * eps * (1.0 + tol) + 1e-14
        };
        match self.samples.iter().rposition(|s| !ok(s)) {
            None => Some(0.0),
            Some(i) if i + 1 == self.samples.len() => None,
            Some(i) => Some(self.samples[i + 1].0),
        }
    }
}

/// Runs the closed loop from a gain-lemma instance long enough to see the
/// `levels`-fold contraction by 2/3.
///
/// While the run is short it is simulated directly. Otherwise the direct
/// simulation covers the fast transient `[0, 2T]` and the remainder uses
/// the reduced slow model `u̇ = S(u, k(r - G(u)))` with exact `G`, stepped
/// by projected implicit Euler, while `‖x - Ξ(u)‖` is propagated through
/// the bound `m e^{-λ(t-t₁)}‖ξ(t₁)‖ + mα∫e^{-λ(t-s)}|u̇(s)| ds`.
pub fn gain_lemma_trace(
    plant: &PlantModel,
    map: &EquilibriumMap,
    gain: &GainCertificate,
    inst: &GainInstance,
    k: f64,
    levels: u32,
    opts: &LemmaOptions,
) -> Result<GainTrace> {
    if !(k > 0.0) {
        return Err(invalid("gain lemma needs k > 0"));
    }
    let spec = map.spec;
    let mut tracker = EquilibriumTracker::new(plant, map);
    let mu = gain.mu;
    let spread = (gain.delta_g * gain.alpha / (2.0 * mu)).max(1.0);
    let slow = (spread.ln() + (levels as f64 + 1.0) * 1.5f64.ln()) / (mu * k);
    let t1 = 2.0 * gain.t;
    let full = t1 + slow;
    let direct_end = if full <= opts.max_direct_time { full } else { t1 };

    let steps = (direct_end / opts.dt - 1e-9).ceil().max(1.0) as usize;
    let h = direct_end / steps as f64;
    let mut rk = Rk4::new(plant.n());
    let mut x = inst.x0.clone();
    let mut u = inst.u0;
    let mut samples = Vec::with_capacity(steps / opts.check_every + 4100);
    let sample = |t: f64, x: &[f64], u: f64, tracker: &mut EquilibriumTracker<'_>| {
        let dx = dist_inf(x, tracker.xi(u));
        (t, dx, (tracker.g(u) - inst.r).abs())
    };
    samples.push(sample(0.0, &x, u, &mut tracker));
    for i in 0..steps {
        let w = k * (inst.r - plant.g(&x));
        rk.step(plant, &mut x, u, h);
        u = spec.clamp(u + h * eval_s(&spec, u, w));
        if diverged(&x) {
            return Err(Error::Diverged { time: (i + 1) as f64 * h });
        }
        if (i + 1) % opts.check_every == 0 || i + 1 == steps {
            samples.push(sample((i + 1) as f64 * h, &x, u, &mut tracker));
        }
    }
    if direct_end >= full {
        return Ok(GainTrace {
            samples,
            horizon: full,
            reduced_after: None,
        });
    }

    let macro_steps = 4000;
    let hm = (full - t1) / macro_steps as f64;
    let xi1 = dist_inf(&x, tracker.xi(u));
    let decay = (-gain.lambda * hm).exp();
    let mut lag = 0.0;
    for j in 0..macro_steps {
        let rate = k * (inst.r - tracker.g(u)).abs();
        u = implicit_step(&mut tracker, map, u, inst.r, k * hm);
        lag = decay * lag + rate * (1.0 - decay) / gain.lambda;
        let t = t1 + (j + 1) as f64 * hm;
        let dx = gain.m * (-gain.lambda * (t - t1)).exp() * xi1 + gain.m * gain.alpha * lag;
        samples.push((t, dx, (tracker.g(u) - inst.r).abs()));
    }
    Ok(GainTrace {
        samples,
        horizon: full,
        reduced_after: Some(t1),
    })
}

/// Solves `v = clamp(u + c(r - G(v)))` for the projected implicit Euler step.
fn implicit_step(tracker: &mut EquilibriumTracker<'_>, map: &EquilibriumMap, u: f64, r: f64, c: f64) -> f64 {
    let spec = map.spec;
    let phi = |tr: &mut EquilibriumTracker<'_>, v: f64| v - u - c * (r - tr.g(v));
    if phi(tracker, spec.u_min) >= 0.0 {
        return spec.u_min;
    }
    if phi(tracker, spec.u_max) <= 0.0 {
        return spec.u_max;
    }
    let (mut lo, mut hi) = (spec.u_min, spec.u_max);
    let mut v = u;
    for _ in 0..60 {
        let p = phi(tracker, v);
        if p == 0.0 {
            return v;
        }
        if p > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        let slope = 1.0 + c * map.g_at_slope(v);
        let mut next = v - p / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - v).abs() <= 1e-15 * (1.0 + v.abs()) {
            return next;
        }
        v = next;
    }
    v
}

/// Checks the gain lemma: from `‖x(0) - Ξ(u(0))‖ ≤ ε` and
/// `|G(u(0)) - r| ≤ λ̃ε`, both quantities eventually contract by 2/3.
pub fn check_gain_lemma(
    plant: &PlantModel,
    map: &EquilibriumMap,
    gain: &GainCertificate,
    opts: &LemmaOptions,
) -> Result<LemmaReport> {
    opts.validate()?;
    let k = opts.k.unwrap_or(0.5 * gain.k_max);
    let tol = tol_dt(opts.dt, k);
    let details: Vec<Result<InstanceRecord>> = (0..opts.n_instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(opts.seed, i as u64);
            let mut tracker = EquilibriumTracker::new(plant, map);
            let inst = GainInstance::sample(&mut rng, &mut tracker, map.spec, gain);
            let trace = gain_lemma_trace(plant, map, gain, &inst, k, 1, opts)?;
            let tau = trace.contraction_time(2.0 / 3.0, inst.eps, gain.lambda_tilde, tol);
            let strict = trace.contraction_time(2.0 / 3.0, inst.eps, gain.lambda_tilde, 0.0);
            Ok(InstanceRecord {
                index: i,
                eps: inst.eps,
                worst_ratio: tau.map_or(f64::INFINITY, |t| t / trace.horizon),
                tau,
                reduced_after: trace.reduced_after,
                holds: tau.is_some(),
                marginal: tau.is_some() && strict.is_none(),
            })
        })
        .collect();
    let details = details.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(LemmaReport::assemble(LemmaId::Gain, tol, details, |d| 1.0 - d.worst_ratio))
}

/// Contraction times for the levels `(2/3)^j`, `j = 1..=levels`, along a
/// single run. Composition holds when every level is reached and the
/// times are nondecreasing.
pub fn contraction_composition(
    plant: &PlantModel,
    map: &EquilibriumMap,
    gain: &GainCertificate,
    inst: &GainInstance,
    k: f64,
    levels: u32,
    opts: &LemmaOptions,
) -> Result<Vec<Option<f64>>> {
    let trace = gain_lemma_trace(plant, map, gain, inst, k, levels, opts)?;
    let tol = tol_dt(opts.dt, k);
    Ok((1..=levels)
        .map(|j| trace.contraction_time((2.0f64 / 3.0).powi(j as i32), inst.eps, gain.lambda_tilde, tol))
        .collect())
}

/// Dispatches on the lemma id.
pub fn check_lemma(
    id: LemmaId,
    plant: &PlantModel,
    map: &EquilibriumMap,
    gain: &GainCertificate,
    opts: &LemmaOptions,
) -> Result<LemmaReport> {
    match id {
        LemmaId::SlowInput => check_slow_input_lemma(plant, map, gain, opts),
        LemmaId::Tube => check_tube_lemma(plant, map, gain, opts),
        LemmaId::SampleHold => check_sample_hold_lemma(plant, map, gain, opts),
        LemmaId::Gain => check_gain_lemma(plant, map, gain, opts),
    }
}
