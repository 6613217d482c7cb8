//! Equilibrium map `Ξ(u)` by Newton continuation, the steady-state map
//! `G = g ∘ Ξ`, and the sampled constants `α` (Lipschitz bound of `Ξ`) and
//! `μ` (half the smallest slope of `G`).
//!
//! `α` and `μ` are estimated from grid differences; they are sampled
//! estimates, not verified bounds. Between grid nodes `Ξ` and `G` are
//! interpolated linearly, which keeps the interpolated `G` monotone.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{dist_inf, linspace, norm_inf};
use crate::plant::PlantModel;
use crate::sat_integrator::SaturatorSpec;

pub const DEFAULT_GRID_SIZE: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Residual tolerance `‖f(x, u)‖_∞`.
    pub tol: f64,
    pub max_iter: usize,
    /// Step halvings tried when a full step increases the residual.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            max_halvings: 20,
        }
    }
}

/// Solves `f(x, u0) = 0` by damped Newton from `x_guess`.
pub fn solve_equilibrium(plant: &PlantModel, u0: f64, x_guess: &[f64]) -> Result<Vec<f64>> {
    solve_equilibrium_with(plant, u0, x_guess, &NewtonOptions::default())
}

pub fn solve_equilibrium_with(
    plant: &PlantModel,
    u0: f64,
    x_guess: &[f64],
    opts: &NewtonOptions,
) -> Result<Vec<f64>> {
    let n = plant.n();
    if x_guess.len() != n {
        return Err(invalid(format!(
            "equilibrium guess has dimension {}, expected {n}",
            x_guess.len()
        )));
    }
    let mut x = x_guess.to_vec();
    let mut fx = plant.f(&x, u0);
    let mut res = norm_inf(&fx);
    let mut trial = vec![0.0; n];
    let mut f_trial = vec![0.0; n];

    for _ in 0..opts.max_iter {
        if !res.is_finite() {
            break;
        }
        let Some(dx) = newton_direction(plant, &x, u0, &fx) else {
            break;
        };
        if res < opts.tol {
            // one polishing step, kept only if it does not hurt
            for i in 0..n {
                trial[i] = x[i] + dx[i];
            }
            plant.f_into(&trial, u0, &mut f_trial);
            if norm_inf(&f_trial) <= res {
                x.copy_from_slice(&trial);
            }
            return Ok(x);
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            for i in 0..n {
                trial[i] = x[i] + step * dx[i];
            }
            plant.f_into(&trial, u0, &mut f_trial);
            let r = norm_inf(&f_trial);
            if r < res {
                x.copy_from_slice(&trial);
                fx.copy_from_slice(&f_trial);
                res = r;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res < opts.tol {
        return Ok(x);
    }
    Err(Error::EquilibriumNotFound { u: u0, residual: res })
}

fn newton_direction(plant: &PlantModel, x: &[f64], u: f64, fx: &[f64]) -> Option<DVector<f64>> {
    let jac: DMatrix<f64> = plant.jacobian_x(x, u);
    let rhs = DVector::from_iterator(fx.len(), fx.iter().map(|v| -v));
    let dx = jac.lu().solve(&rhs)?;
    dx.iter().all(|v| v.is_finite()).then_some(dx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarchDirection {
    Up,
    Down,
}

#[derive(Debug, Clone)]
pub struct MapOptions {
    pub grid_size: usize,
    pub direction: MarchDirection,
    /// Starting guess at the first node; zeros when absent.
    pub x_guess: Option<Vec<f64>>,
    pub newton: NewtonOptions,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            grid_size: DEFAULT_GRID_SIZE,
            direction: MarchDirection::Up,
            x_guess: None,
            newton: NewtonOptions::default(),
        }
    }
}

/// Sampled equilibrium and steady-state maps on `[u_min, u_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumMap {
    pub spec: SaturatorSpec,
    pub u_grid: Vec<f64>,
    pub xi_values: Vec<Vec<f64>>,
    pub g_values: Vec<f64>,
    pub alpha: f64,
    pub mu: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Grid intervals whose `Ξ` increment is far above the typical one; a
    /// likely branch jump of the continuation.
    pub branch_jumps: Vec<usize>,
}

pub fn build_map(plant: &PlantModel, spec: &SaturatorSpec, grid_size: usize) -> Result<EquilibriumMap> {
    build_map_with(
        plant,
        spec,
        &MapOptions {
            grid_size,
            ..MapOptions::default()
        },
    )
}

pub fn build_map_with(plant: &PlantModel, spec: &SaturatorSpec, opts: &MapOptions) -> Result<EquilibriumMap> {
    if opts.grid_size < 2 {
        return Err(invalid(format!("grid size must be at least 2, got {}", opts.grid_size)));
    }
    let n = plant.n();
    let u_grid = linspace(spec.u_min, spec.u_max, opts.grid_size);
    let order: Vec<usize> = match opts.direction {
        MarchDirection::Up => (0..u_grid.len()).collect(),
        MarchDirection::Down => (0..u_grid.len()).rev().collect(),
    };
    let mut guess = opts.x_guess.clone().unwrap_or_else(|| vec![0.0; n]);
    let mut xi_values = vec![Vec::new(); u_grid.len()];
    for &i in &order {
        let x = solve_equilibrium_with(plant, u_grid[i], &guess, &opts.newton)?;
        guess.clone_from(&x);
        xi_values[i] = x;
    }
    let g_values: Vec<f64> = xi_values.iter().map(|x| plant.g(x)).collect();

    let mut alpha = 0.0_f64;
    let mut min_slope = f64::INFINITY;
    let mut slopes = Vec::with_capacity(u_grid.len() - 1);
    for i in 0..u_grid.len() - 1 {
        let du = u_grid[i + 1] - u_grid[i];
        let dg = g_values[i + 1] - g_values[i];
        if !(dg > 0.0) {
            return Err(Error::Assumption2Violated {
                u_lo: u_grid[i],
                u_hi: u_grid[i + 1],
                delta: dg,
            });
        }
        let s = dist_inf(&xi_values[i + 1], &xi_values[i]) / du;
        slopes.push(s);
        alpha = alpha.max(s);
        min_slope = min_slope.min(dg / du);
    }
    let mut sorted = slopes.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let branch_jumps = slopes
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s > 1e-8 && s > 10.0 * median.max(1e-12))
        .map(|(i, _)| i)
        .collect();

    Ok(EquilibriumMap {
        spec: *spec,
        y_min: g_values[0],
        y_max: *g_values.last().unwrap(),
        u_grid,
        xi_values,
        g_values,
        alpha,
        mu: 0.5 * min_slope,
        branch_jumps,
    })
}

impl EquilibriumMap {
    pub fn n(&self) -> usize {
        self.xi_values[0].len()
    }

    pub fn len(&self) -> usize {
        self.u_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_grid.is_empty()
    }

    /// Interval index and local coordinate of `u`, clamped to the grid.
    fn locate(&self, u: f64) -> (usize, f64) {
        let last = self.u_grid.len() - 1;
        let u = u.clamp(self.u_grid[0], self.u_grid[last]);
        let i = self.u_grid.partition_point(|&v| v <= u).clamp(1, last) - 1;
        let s = (u - self.u_grid[i]) / (self.u_grid[i + 1] - self.u_grid[i]);
        (i, s)
    }

    pub fn xi_into(&self, u: f64, out: &mut [f64]) {
        let (i, s) = self.locate(u);
        let (a, b) = (&self.xi_values[i], &self.xi_values[i + 1]);
        for (k, o) in out.iter_mut().enumerate() {
            *o = a[k] + s * (b[k] - a[k]);
        }
    }

    /// Interpolated `Ξ(u)`.
    pub fn xi_at(&self, u: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.xi_into(u, &mut out);
        out
    }

    /// Interpolated `G(u)`.
    pub fn g_at(&self, u: f64) -> f64 {
        let (i, s) = self.locate(u);
        self.g_values[i] + s * (self.g_values[i + 1] - self.g_values[i])
    }

    /// Slope of the interpolated `G` on the cell containing `u`.
    pub fn g_at_slope(&self, u: f64) -> f64 {
        let (i, _) = self.locate(u);
        (self.g_values[i + 1] - self.g_values[i]) / (self.u_grid[i + 1] - self.u_grid[i])
    }

    /// Largest secant slope of `G` on the grid.
    pub fn g_slope_max(&self) -> f64 {
        self.u_grid
            .windows(2)
            .zip(self.g_values.windows(2))
            .map(|(u, g)| (g[1] - g[0]) / (u[1] - u[0]))
            .fold(0.0, f64::max)
    }

    /// `u_r = G⁻¹(r)` for `r` strictly inside `(y_min, y_max)`.
    pub fn invert_g(&self, r: f64) -> Result<f64> {
        if !(r > self.y_min && r < self.y_max) {
            return Err(Error::ReferenceOutOfRange {
                r,
                y_min: self.y_min,
                y_max: self.y_max,
            });
        }
        Ok(self.invert_g_clamped(r))
    }

    /// Inverse of the interpolated `G`, clamped to `[u_min, u_max]`.
    pub fn invert_g_clamped(&self, y: f64) -> f64 {
        let last = self.g_values.len() - 1;
        if y <= self.g_values[0] {
            return self.u_grid[0];
        }
        if y >= self.g_values[last] {
            return self.u_grid[last];
        }
        let i = self.g_values.partition_point(|&g| g <= y).clamp(1, last) - 1;
        let s = (y - self.g_values[i]) / (self.g_values[i + 1] - self.g_values[i]);
        self.u_grid[i] + s * (self.u_grid[i + 1] - self.u_grid[i])
    }

    pub fn shifted_gain(&self, r: f64) -> Result<ShiftedGain<'_>> {
        let u_r = self.invert_g(r)?;
        Ok(ShiftedGain { map: self, u_r, r })
    }

    /// Checks `2μ|v| ≤ |G_r(v)| ≤ δ_g·α·|v|` on every grid node. Returns
    /// the nodes where it fails.
    pub fn sandwich_violations(&self, r: f64, delta_g: f64) -> Result<Vec<f64>> {
        let gr = self.shifted_gain(r)?;
        let tol = 1e-9;
        Ok(self
            .u_grid
            .iter()
            .map(|u| u - gr.u_r)
            .filter(|&v| {
                let val = gr.eval(v).abs();
                val < 2.0 * self.mu * v.abs() * (1.0 - tol) - tol
                    || val > delta_g * self.alpha * v.abs() * (1.0 + tol) + tol
            })
            .collect())
    }

    /// Largest `‖f(Ξ(u_i), u_i)‖_∞` over the grid.
    pub fn max_residual(&self, plant: &PlantModel) -> f64 {
        self.u_grid
            .iter()
            .zip(&self.xi_values)
            .map(|(&u, x)| norm_inf(&plant.f(x, u)))
            .fold(0.0, f64::max)
    }
}

/// `G_r(v) = G(v + u_r) - r` on `[u_min - u_r, u_max - u_r]`.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedGain<'a> {
    map: &'a EquilibriumMap,
    pub u_r: f64,
    pub r: f64,
}

impl ShiftedGain<'_> {
    pub fn domain(&self) -> (f64, f64) {
        (self.map.spec.u_min - self.u_r, self.map.spec.u_max - self.u_r)
    }

    pub fn eval(&self, v: f64) -> f64 {
        self.map.g_at(v + self.u_r) - self.r
    }

    pub fn inverse(&self, w: f64) -> f64 {
        self.map.invert_g_clamped(w + self.r) - self.u_r
    }
}

/// Evaluates `Ξ(u)` and `G(u)` to Newton accuracy, starting from the
/// interpolated map. Used wherever interpolation error would be visible.
pub struct EquilibriumTracker<'a> {
    plant: &'a PlantModel,
    map: &'a EquilibriumMap,
    cached_u: f64,
    cached_x: Vec<f64>,
    opts: NewtonOptions,
}

impl<'a> EquilibriumTracker<'a> {
    pub fn new(plant: &'a PlantModel, map: &'a EquilibriumMap) -> Self {
        Self {
            plant,
            map,
            cached_u: f64::NAN,
            cached_x: vec![0.0; map.n()],
            opts: NewtonOptions::default(),
        }
    }

    pub fn xi(&mut self, u: f64) -> &[f64] {
        if u != self.cached_u {
            let guess = self.map.xi_at(u);
            self.cached_x = solve_equilibrium_with(self.plant, u, &guess, &self.opts).unwrap_or(guess);
            self.cached_u = u;
        }
        &self.cached_x
    }

    pub fn g(&mut self, u: f64) -> f64 {
        let plant = self.plant;
        plant.g(self.xi(u))
    }

    /// `u` with `G(u) = y`, by safeguarded Newton on the exact `G`.
    pub fn invert_g(&mut self, y: f64) -> f64 {
        let spec = self.map.spec;
        let (mut lo, mut hi) = (spec.u_min, spec.u_max);
        let mut u = self.map.invert_g_clamped(y);
        for _ in 0..60 {
            let gu = self.g(u) - y;
            if gu.abs() < 1e-13 {
                break;
            }
            if gu > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let h = 1e-7 * (1.0 + u.abs());
            let slope = (self.g(u + h) - self.g(u - h)) / (2.0 * h);
            let mut next = u - gu / slope;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            u = next;
        }
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{builtin, PlantModel};
    use approx::assert_abs_diff_eq;

    fn unit() -> SaturatorSpec {
        SaturatorSpec::new(-1.0, 1.0).unwrap()
    }

    /// Root of `u + u³ = 1` by bisection.
    fn bisect_cubic(target: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid + mid.powi(3) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn linear_equilibrium() {
        let p = builtin("linear1d").unwrap();
        assert_abs_diff_eq!(solve_equilibrium(&p, 0.3, &[0.0]).unwrap()[0], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn oscillator_equilibrium() {
        let p = builtin("osc_cubic").unwrap();
        let x = solve_equilibrium(&p, 0.5, &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(x[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn no_real_equilibrium() {
        let p = PlantModel::from_fns("quad", 1, |x, u, dx| dx[0] = x[0] * x[0] + u, |x| x[0]);
        for guess in [0.0, 1.0, -3.0] {
            assert!(matches!(
                solve_equilibrium(&p, 0.1, &[guess]),
                Err(Error::EquilibriumNotFound { .. })
            ));
        }
    }

    #[test]
    fn linear_map_constants() {
        let p = builtin("linear1d").unwrap();
        let map = build_map(&p, &unit(), 101).unwrap();
        assert_abs_diff_eq!(map.alpha, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(map.mu, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(map.y_min, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(map.y_max, 1.0, epsilon = 1e-12);
        assert!(map.max_residual(&p) < 1e-10);
        assert!(map.branch_jumps.is_empty());
    }

    #[test]
    fn oscillator_map_constants() {
        let p = builtin("osc_cubic").unwrap();
        let map = build_map(&p, &unit(), DEFAULT_GRID_SIZE).unwrap();
        assert_abs_diff_eq!(map.mu, 0.5, epsilon = 1e-3);
        assert_abs_diff_eq!(map.y_max, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(map.y_min, -2.0, epsilon = 1e-12);
        for (&u, &g) in map.u_grid.iter().zip(&map.g_values) {
            assert_abs_diff_eq!(g, u + u.powi(3), epsilon = 1e-10);
        }
    }

    #[test]
    fn decreasing_output_violates_monotonicity() {
        let p = PlantModel::from_fns("neg", 1, |x, u, dx| dx[0] = -x[0] + u, |x| -x[0]);
        assert!(matches!(build_map(&p, &unit(), 21), Err(Error::Assumption2Violated { .. })));
    }

    #[test]
    fn tiny_grid_rejected() {
        let p = builtin("linear1d").unwrap();
        assert!(build_map(&p, &unit(), 1).is_err());
    }

    #[test]
    fn reference_inversion() {
        let p = builtin("linear1d").unwrap();
        let map = build_map(&p, &unit(), 101).unwrap();
        assert_abs_diff_eq!(map.invert_g(0.5).unwrap(), 0.5, epsilon = 1e-12);
        assert!(matches!(map.invert_g(1.0), Err(Error::ReferenceOutOfRange { .. })));
        assert!(matches!(map.invert_g(-1.0), Err(Error::ReferenceOutOfRange { .. })));

        let p = builtin("osc_cubic").unwrap();
        let map = build_map(&p, &unit(), DEFAULT_GRID_SIZE).unwrap();
        let oracle = bisect_cubic(1.0);
        assert_abs_diff_eq!(oracle, 0.68233, epsilon = 1e-5);
        assert_abs_diff_eq!(map.invert_g(1.0).unwrap(), oracle, epsilon = 1e-4);
        let mut tr = EquilibriumTracker::new(&p, &map);
        assert_abs_diff_eq!(tr.invert_g(1.0), oracle, epsilon = 1e-10);
    }

    #[test]
    fn shifted_gain_round_trip() {
        use rand::Rng;
        let p = builtin("osc_cubic").unwrap();
        let map = build_map(&p, &unit(), DEFAULT_GRID_SIZE).unwrap();
        let gr = map.shifted_gain(1.0).unwrap();
        assert_abs_diff_eq!(gr.eval(0.0), 0.0, epsilon = 1e-4);
        let (lo, hi) = gr.domain();
        let mut rng = crate::numeric::stream_rng(1, 0);
        for _ in 0..100 {
            let v = rng.gen_range(lo..hi);
            assert_abs_diff_eq!(gr.inverse(gr.eval(v)), v, epsilon = 1e-9);
        }
        assert!(gr.eval(0.1) > gr.eval(0.05));
    }

    #[test]
    fn march_direction_does_not_matter() {
        for name in crate::plant::BUILTIN_PLANTS {
            let p = builtin(name).unwrap();
            let up = build_map(&p, &unit(), DEFAULT_GRID_SIZE).unwrap();
            let down = build_map_with(
                &p,
                &unit(),
                &MapOptions {
                    direction: MarchDirection::Down,
                    ..MapOptions::default()
                },
            )
            .unwrap();
            for (a, b) in up.xi_values.iter().zip(&down.xi_values) {
                assert!(dist_inf(a, b) < 1e-6, "{name}");
            }
        }
    }

    #[test]
    fn tracker_is_exact_between_nodes() {
        let p = builtin("scalar_cubic").unwrap();
        let map = build_map(&p, &unit(), 21).unwrap();
        let mut tr = EquilibriumTracker::new(&p, &map);
        let u = 0.537;
        let x = tr.xi(u)[0];
        assert!((x.powi(3) + x - u).abs() < 1e-12);
        assert!((map.xi_at(u)[0] - x).abs() > 1e-6);
    }
}
