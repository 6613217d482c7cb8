//! The sets `X_T` of initial pairs whose constant-input trajectory comes
//! within `ε₀/2` of `Ξ(u0)` by time `T_roa`, grid sampling of these sets,
//! and empirical selection of a gain under which every sampled member
//! converges.

use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::closed_loop::{log_error_slope, simulate_closed_loop, tracking_metrics, ClosedLoopConfig};
use crate::equilibrium::{solve_equilibrium, EquilibriumMap};
use crate::error::{invalid, Error, Result};
use crate::numeric::{dist_inf, linspace};
use crate::plant::{final_state_constant_input, PlantModel};
use crate::stability_cert::StabilityCertificate;

/// Most records kept per convergence run.
const MAX_RECORDS: usize = 20_000;
const MAX_HALVINGS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridAxis {
    pub fn nodes(&self) -> Vec<f64> {
        if self.n == 1 {
            vec![self.lo]
        } else {
            linspace(self.lo, self.hi, self.n)
        }
    }

    pub fn cell(&self) -> f64 {
        if self.n > 1 {
            (self.hi - self.lo) / (self.n - 1) as f64
        } else {
            0.0
        }
    }
}

/// Box grid over `(x1, ..., xn, u)` parsed from
/// `"x1:lo:hi:n,...,xn:lo:hi:n,u:lo:hi:n"`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub x: Vec<GridAxis>,
    pub u: GridAxis,
}

impl GridSpec {
    /// Parses a grid for a plant of dimension `n`. Axes must appear in the
    /// order `x1..xn, u`.
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        let malformed = |why: String| Error::Config(format!("malformed grid '{text}': {why}"));
        let mut axes = Vec::new();
        for (i, part) in text.split(',').enumerate() {
            let fields: Vec<&str> = part.trim().split(':').collect();
            if fields.len() != 4 {
                return Err(malformed(format!("axis '{part}' needs name:lo:hi:n")));
            }
            let expected = if i < n { format!("x{}", i + 1) } else { "u".to_string() };
            if fields[0] != expected {
                return Err(malformed(format!("axis {} should be '{expected}', found '{}'", i + 1, fields[0])));
            }
            let num = |s: &str| f64::from_str(s).map_err(|_| malformed(format!("'{s}' is not a number")));
            let (lo, hi) = (num(fields[1])?, num(fields[2])?);
            let count: usize = fields[3]
                .parse()
                .map_err(|_| malformed(format!("'{}' is not a resolution", fields[3])))?;
            if count == 0 {
                return Err(malformed(format!("axis '{}' has zero resolution", fields[0])));
            }
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(malformed(format!("axis '{}' needs finite lo ≤ hi", fields[0])));
            }
            axes.push(GridAxis { lo, hi, n: count });
        }
        if axes.len() != n + 1 {
            return Err(malformed(format!("expected {} axes (x1..x{n}, u), found {}", n + 1, axes.len())));
        }
        let u = axes.pop().unwrap();
        Ok(Self { x: axes, u })
    }

    pub fn len(&self) -> usize {
        self.x.iter().map(|a| a.n).product::<usize>() * self.u.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid nodes with `x1` varying slowest and `u` fastest.
    pub fn points(&self) -> Vec<(Vec<f64>, f64)> {
        let xs: Vec<Vec<f64>> = self.x.iter().map(GridAxis::nodes).collect();
        let us = self.u.nodes();
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; xs.len()];
        loop {
            let x: Vec<f64> = idx.iter().zip(&xs).map(|(&i, ax)| ax[i]).collect();
            for &u in &us {
                out.push((x.clone(), u));
            }
            // odometer increment, last state axis fastest
            let mut d = xs.len();
            loop {
                if d == 0 {
                    return out;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < xs[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
    }

    /// Same box with every cell split in two.
    pub fn refined(&self) -> Self {
        let refine = |a: &GridAxis| GridAxis {
            n: if a.n > 1 { 2 * a.n - 1 } else { 1 },
            ..*a
        };
        Self {
            x: self.x.iter().map(refine).collect(),
            u: refine(&self.u),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XtSample {
    pub x0: Vec<f64>,
    pub u0: f64,
    pub in_xt: bool,
    /// Closed-loop convergence, `None` when not tested.
    pub converged: Option<bool>,
    /// Infinite when not tested or never settled.
    pub settle_time: f64,
}

/// `‖z(T_roa) - Ξ(u0)‖_∞ ≤ ε₀/2` for the trajectory `z` from `x0` under
/// the constant input `u0`. A blow-up counts as non-membership.
pub fn membership_xt(
    plant: &PlantModel,
    map: &EquilibriumMap,
    cert: &StabilityCertificate,
    x0: &[f64],
    u0: f64,
    t_roa: f64,
    dt: f64,
) -> Result<bool> {
    if !map.spec.contains(u0) {
        return Err(invalid(format!("u0 = {u0} outside [{}, {}]", map.spec.u_min, map.spec.u_max)));
    }
    plant.smoke_check(x0, u0)?;
    let xi = solve_equilibrium(plant, u0, &map.xi_at(u0))?;
    match final_state_constant_input(plant, x0, u0, t_roa, dt) {
        Ok(z) => Ok(dist_inf(&z, &xi) <= 0.5 * cert.eps0),
        Err(Error::Diverged { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Membership at every grid node, in grid order.
pub fn sample_xt(
    plant: &PlantModel,
    map: &EquilibriumMap,
    cert: &StabilityCertificate,
    t_roa: f64,
    grid: &GridSpec,
    dt: f64,
) -> Result<Vec<XtSample>> {
    if !(t_roa > 0.0) {
        return Err(invalid("T_roa must be positive"));
    }
    if grid.x.len() != plant.n() {
        return Err(invalid("grid dimension does not match the plant"));
    }
    if grid.u.lo < map.spec.u_min || grid.u.hi > map.spec.u_max {
        return Err(invalid("grid u-range must lie inside [u_min, u_max]"));
    }
    grid.points()
        .into_par_iter()
        .map(|(x0, u0)| {
            let in_xt = membership_xt(plant, map, cert, &x0, u0, t_roa, dt)?;
            Ok(XtSample {
                x0,
                u0,
                in_xt,
                converged: None,
                settle_time: f64::INFINITY,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NestingReport {
    pub t_roa: f64,
    pub members: usize,
    pub members_doubled: usize,
    pub nodes: usize,
    /// Members at `T_roa` that are not members at `2·T_roa`.
    pub exceptions: usize,
}

impl NestingReport {
    pub fn fraction(&self) -> f64 {
        self.members as f64 / self.nodes.max(1) as f64
    }

    pub fn fraction_doubled(&self) -> f64 {
        self.members_doubled as f64 / self.nodes.max(1) as f64
    }
}

pub fn nesting_report(
    plant: &PlantModel,
    map: &EquilibriumMap,
    cert: &StabilityCertificate,
    t_roa: f64,
    grid: &GridSpec,
    dt: f64,
) -> Result<NestingReport> {
    let a = sample_xt(plant, map, cert, t_roa, grid, dt)?;
    let b = sample_xt(plant, map, cert, 2.0 * t_roa, grid, dt)?;
    Ok(NestingReport {
        t_roa,
        members: a.iter().filter(|s| s.in_xt).count(),
        members_doubled: b.iter().filter(|s| s.in_xt).count(),
        nodes: a.len(),
        exceptions: a.iter().zip(&b).filter(|(p, q)| p.in_xt && !q.in_xt).count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceOutcome {
    pub converged: bool,
    pub settle_time: f64,
    pub final_u: f64,
    pub final_error: f64,
    pub log_slope: Option<f64>,
}

const LOG_FLOOR: f64 = 1e-12;

/// Closed-loop convergence test: `|y - r| ≤ 1e-3·(y_max - y_min)` before
/// the horizon `max(50/(μk), 10·T_roa)` and a negative log-error slope.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop_converges(
    plant: &PlantModel,
    map: &EquilibriumMap,
    k: f64,
    r: f64,
    x0: &[f64],
    u0: f64,
    t_roa: f64,
    dt: f64,
) -> Result<ConvergenceOutcome> {
    let horizon = (50.0 / (map.mu * k)).max(10.0 * t_roa);
    let tol = 1e-3 * (map.y_max - map.y_min);
    let mut cfg = ClosedLoopConfig::new(plant.clone(), map.spec, k, r, x0.to_vec(), u0, horizon);
    cfg.dt = dt;
    cfg.record_every = ((horizon / dt) as usize / MAX_RECORDS).max(1);
    let records = match simulate_closed_loop(&cfg, map) {
        Ok(recs) => recs,
        Err(Error::Diverged { .. }) => {
            return Ok(ConvergenceOutcome {
                converged: false,
                settle_time: f64::INFINITY,
                final_u: f64::NAN,
                final_error: f64::INFINITY,
                log_slope: None,
            })
        }
        Err(e) => return Err(e),
    };
    let metrics = tracking_metrics(&records, tol)?;
    let log_slope = log_error_slope(&records, LOG_FLOOR);
    let last = records.last().unwrap();
    Ok(ConvergenceOutcome {
        converged: metrics.settle_time.is_finite()
            && match log_slope {
                Some(s) => s < 0.0,
                // too few samples above the floor to fit: the run sits at the equilibrium
                None => last.transformed_norm() <= LOG_FLOOR,
            },
        settle_time: metrics.settle_time,
        final_u: last.u,
        final_error: metrics.final_error,
        log_slope,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainSelection {
    pub k_emp: f64,
    pub k_start: f64,
    pub halvings: u32,
    /// Certified bound, reported for contrast.
    pub k_max_certified: Option<f64>,
    /// Tested members with their outcome at `k_emp`.
    pub samples: Vec<XtSample>,
}

/// Halves `k` from `k_start` (at most 20 times) until every member sample
/// converges, and returns the first passing gain.
#[allow(clippy::too_many_arguments)]
pub fn select_gain_empirical(
    plant: &PlantModel,
    map: &EquilibriumMap,
    members: &[XtSample],
    r: f64,
    k_start: f64,
    t_roa: f64,
    dt: f64,
    k_max_certified: Option<f64>,
) -> Result<GainSelection> {
    let members: Vec<&XtSample> = members.iter().filter(|s| s.in_xt).collect();
    if members.is_empty() {
        return Err(invalid("gain selection needs at least one X_T member"));
    }
    if !(k_start > 0.0 && k_start.is_finite()) {
        return Err(invalid(format!("k_start must be positive, got {k_start}")));
    }
    map.invert_g(r)?;
    let mut k = k_start;
    let mut last_failure = None;
    for halvings in 0..=MAX_HALVINGS {
        let outcomes: Vec<ConvergenceOutcome> = members
            .par_iter()
            .map(|s| closed_loop_converges(plant, map, k, r, &s.x0, s.u0, t_roa, dt))
            .collect::<Result<_>>()?;
        match outcomes.iter().position(|o| !o.converged) {
            None => {
                let samples = members
                    .iter()
                    .zip(&outcomes)
                    .map(|(s, o)| XtSample {
                        converged: Some(true),
                        settle_time: o.settle_time,
                        ..(*s).clone()
                    })
                    .collect();
                return Ok(GainSelection {
                    k_emp: k,
                    k_start,
                    halvings,
                    k_max_certified,
                    samples,
                });
            }
            Some(i) => last_failure = Some(members[i]),
        }
        if halvings < MAX_HALVINGS {
            k *= 0.5;
        }
    }
    let failing = last_failure.expect("a failure was recorded");
    Err(Error::SelectionFailed {
        k_last: k,
        x0: failing.x0.clone(),
        u0: failing.u0,
    })
}

/// Fills `converged` and `settle_time` for every member at gain `k`.
pub fn test_convergence(
    plant: &PlantModel,
    map: &EquilibriumMap,
    samples: &mut [XtSample],
    k: f64,
    r: f64,
    t_roa: f64,
    dt: f64,
) -> Result<()> {
    let outcomes: Vec<Option<ConvergenceOutcome>> = samples
        .par_iter()
        .map(|s| {
            s.in_xt
                .then(|| closed_loop_converges(plant, map, k, r, &s.x0, s.u0, t_roa, dt))
                .transpose()
        })
        .collect::<Result<_>>()?;
    for (s, o) in samples.iter_mut().zip(outcomes) {
        if let Some(o) = o {
            s.converged = Some(o.converged);
            s.settle_time = o.settle_time;
        }
    }
    Ok(())
}
