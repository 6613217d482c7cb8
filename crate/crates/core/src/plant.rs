//! Open-loop plants `ẋ = f(x, u)`, `y = g(x)` with scalar input and output.
//!
//! Plants are either closures wrapped in [`FnPlant`] or polynomial plants
//! described by [`PlantConfig`] (the JSON format accepted by the CLI). The
//! three built-in plants are polynomial and carry analytic Jacobians.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::norm_inf;
use crate::sat_integrator::{InputSignal, SaturatorSpec};

/// `‖x‖_∞` above which a simulation is declared divergent.
pub const BLOWUP_GUARD: f64 = 1e9;

/// Right-hand side and readout of a plant. Jacobians are optional; the
/// [`PlantModel`] wrapper falls back to central differences.
pub trait Dynamics: Send + Sync {
    fn dim(&self) -> usize;
    fn rhs(&self, x: &[f64], u: f64, dx: &mut [f64]);
    fn output(&self, x: &[f64]) -> f64;

    fn jac_x(&self, _x: &[f64], _u: f64) -> Option<DMatrix<f64>> {
        None
    }
    fn jac_u(&self, _x: &[f64], _u: f64) -> Option<DVector<f64>> {
        None
    }
    fn grad_output(&self, _x: &[f64]) -> Option<DVector<f64>> {
        None
    }
}

type RhsFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;
type OutFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Plant given by closures, without analytic derivatives.
pub struct FnPlant {
    n: usize,
    f: Box<RhsFn>,
    g: Box<OutFn>,
}

impl FnPlant {
    pub fn new(
        n: usize,
        f: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        g: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            f: Box::new(f),
            g: Box::new(g),
        }
    }
}

impl Dynamics for FnPlant {
    fn dim(&self) -> usize {
        self.n
    }
    fn rhs(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        (self.f)(x, u, dx)
    }
    fn output(&self, x: &[f64]) -> f64 {
        (self.g)(x)
    }
}

/// One term `coeff · x₁^p₁ ⋯ xₙ^pₙ · u^p_u`. `powers` has length `n + 1`,
/// the last entry being the power of `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

impl Monomial {
    pub fn new(coeff: f64, powers: &[u32]) -> Self {
        Self {
            coeff,
            powers: powers.to_vec(),
        }
    }

    fn eval(&self, x: &[f64], u: f64) -> f64 {
        let mut acc = self.coeff;
        for (i, &p) in self.powers.iter().enumerate() {
            if p > 0 {
                let v = if i < x.len() { x[i] } else { u };
                acc *= v.powi(p as i32);
            }
        }
        acc
    }

    /// Partial derivative with respect to variable `var` (`var == n` is u).
    fn partial(&self, var: usize, x: &[f64], u: f64) -> f64 {
        let p = self.powers.get(var).copied().unwrap_or(0);
        if p == 0 {
            return 0.0;
        }
        let mut acc = self.coeff * p as f64;
        for (i, &q) in self.powers.iter().enumerate() {
            let q = if i == var { q - 1 } else { q };
            if q > 0 {
                let v = if i < x.len() { x[i] } else { u };
                acc *= v.powi(q as i32);
            }
        }
        acc
    }
}

fn poly_eval(terms: &[Monomial], x: &[f64], u: f64) -> f64 {
    terms.iter().map(|m| m.eval(x, u)).sum()
}

fn poly_partial(terms: &[Monomial], var: usize, x: &[f64], u: f64) -> f64 {
    terms.iter().map(|m| m.partial(var, x, u)).sum()
}

/// JSON plant description: polynomial right-hand sides and readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub name: String,
    pub n: usize,
    pub umin: f64,
    pub umax: f64,
    /// One monomial list per state coordinate.
    pub f: Vec<Vec<Monomial>>,
    /// Readout monomials; powers may have length `n` or `n + 1` (with a
    /// zero power of u).
    pub g: Vec<Monomial>,
}

impl PlantConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: PlantConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("malformed plant config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("state dimension n must be positive".into()));
        }
        if self.f.len() != self.n {
            return Err(Error::Config(format!(
                "f has {} coordinate lists, expected n = {}",
                self.f.len(),
                self.n
            )));
        }
        for (i, row) in self.f.iter().enumerate() {
            for m in row {
                if m.powers.len() != self.n + 1 {
                    return Err(Error::Config(format!(
                        "f[{i}] monomial has {} powers, expected n + 1 = {}",
                        m.powers.len(),
                        self.n + 1
                    )));
                }
            }
        }
        for m in &self.g {
            let ok = m.powers.len() == self.n
                || (m.powers.len() == self.n + 1 && m.powers[self.n] == 0);
            if !ok {
                return Err(Error::Config(
                    "g monomials must have n powers (or n + 1 with zero power of u)".into(),
                ));
            }
        }
        if self.f.iter().flatten().chain(&self.g).any(|m| !m.coeff.is_finite()) {
            return Err(Error::Config("non-finite coefficient".into()));
        }
        SaturatorSpec::new(self.umin, self.umax)
            .map_err(|_| Error::Config(format!("umin = {} must be below umax = {}", self.umin, self.umax)))?;
        Ok(())
    }

    pub fn spec(&self) -> Result<SaturatorSpec> {
        SaturatorSpec::new(self.umin, self.umax)
    }

    pub fn to_plant(&self) -> Result<PlantModel> {
        self.validate()?;
        Ok(PlantModel::new(
            self.name.clone(),
            PolynomialPlant {
                n: self.n,
                f: self.f.clone(),
                g: self.g.clone(),
            },
        ))
    }
}

/// Polynomial plant with analytic Jacobians.
#[derive(Debug, Clone)]
pub struct PolynomialPlant {
    n: usize,
    f: Vec<Vec<Monomial>>,
    g: Vec<Monomial>,
}

impl Dynamics for PolynomialPlant {
    fn dim(&self) -> usize {
        self.n
    }

    fn rhs(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        for (d, row) in dx.iter_mut().zip(&self.f) {
            *d = poly_eval(row, x, u);
        }
    }

    fn output(&self, x: &[f64]) -> f64 {
        poly_eval(&self.g, x, 0.0)
    }

    fn jac_x(&self, x: &[f64], u: f64) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_fn(self.n, self.n, |i, j| {
            poly_partial(&self.f[i], j, x, u)
        }))
    }

    fn jac_u(&self, x: &[f64], u: f64) -> Option<DVector<f64>> {
        Some(DVector::from_fn(self.n, |i, _| {
            poly_partial(&self.f[i], self.n, x, u)
        }))
    }

    fn grad_output(&self, x: &[f64]) -> Option<DVector<f64>> {
        Some(DVector::from_fn(self.n, |j, _| poly_partial(&self.g, j, x, 0.0)))
    }
}

/// Names of the built-in plants.
pub const BUILTIN_PLANTS: [&str; 3] = ["linear1d", "osc_cubic", "scalar_cubic"];

/// Configuration of a built-in plant, all on `u ∈ [-1, 1]`.
pub fn builtin_config(name: &str) -> Option<PlantConfig> {
    let m = Monomial::new;
    let (n, f, g) = match name {
        // ẋ = -x + u, y = x
        "linear1d" => (1, vec![vec![m(-1.0, &[1, 0]), m(1.0, &[0, 1])]], vec![m(1.0, &[1])]),
        // ẋ₁ = x₂, ẋ₂ = -x₁ - 2x₂ + u, y = x₁ + x₁³
        "osc_cubic" => (
            2,
            vec![
                vec![m(1.0, &[0, 1, 0])],
                vec![m(-1.0, &[1, 0, 0]), m(-2.0, &[0, 1, 0]), m(1.0, &[0, 0, 1])],
            ],
            vec![m(1.0, &[1, 0]), m(1.0, &[3, 0])],
        ),
        // ẋ = -x³ - x + u, y = x
        "scalar_cubic" => (
            1,
            vec![vec![m(-1.0, &[3, 0]), m(-1.0, &[1, 0]), m(1.0, &[0, 1])]],
            vec![m(1.0, &[1])],
        ),
        _ => return None,
    };
    Some(PlantConfig {
        name: name.to_string(),
        n,
        umin: -1.0,
        umax: 1.0,
        f,
        g,
    })
}

pub fn builtin(name: &str) -> Option<PlantModel> {
    builtin_config(name).map(|c| c.to_plant().expect("built-in configs are valid"))
}

/// A plant ready for simulation. Cheap to clone and shareable across threads.
#[derive(Clone)]
pub struct PlantModel {
    name: String,
    dynamics: Arc<dyn Dynamics>,
}

impl fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantModel")
            .field("name", &self.name)
            .field("n", &self.n())
            .finish()
    }
}

impl PlantModel {
    pub fn new(name: impl Into<String>, dynamics: impl Dynamics + 'static) -> Self {
        Self {
            name: name.into(),
            dynamics: Arc::new(dynamics),
        }
    }

    pub fn from_fns(
        name: impl Into<String>,
        n: usize,
        f: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        g: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(name, FnPlant::new(n, f, g))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.dynamics.dim()
    }

    #[inline]
    pub fn f_into(&self, x: &[f64], u: f64, dx: &mut [f64]) {
        self.dynamics.rhs(x, u, dx)
    }

    pub fn f(&self, x: &[f64], u: f64) -> Vec<f64> {
        let mut dx = vec![0.0; self.n()];
        self.f_into(x, u, &mut dx);
        dx
    }

    #[inline]
    pub fn g(&self, x: &[f64]) -> f64 {
        self.dynamics.output(x)
    }

    /// `∂f/∂x`; analytic if the plant provides it, else central differences
    /// with step `1e-6·(1 + ‖x‖_∞)`.
    pub fn jacobian_x(&self, x: &[f64], u: f64) -> DMatrix<f64> {
        if let Some(j) = self.dynamics.jac_x(x, u) {
            return j;
        }
        self.jacobian_x_fd(x, u)
    }

    pub fn jacobian_x_fd(&self, x: &[f64], u: f64) -> DMatrix<f64> {
        let n = self.n();
        let h = fd_step(x);
        let mut jac = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
        for j in 0..n {
            xp[j] = x[j] + h;
            self.f_into(&xp, u, &mut fp);
            xp[j] = x[j] - h;
            self.f_into(&xp, u, &mut fm);
            xp[j] = x[j];
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        jac
    }

    /// `∂f/∂u`.
    pub fn jacobian_u(&self, x: &[f64], u: f64) -> DVector<f64> {
        if let Some(j) = self.dynamics.jac_u(x, u) {
            return j;
        }
        self.jacobian_u_fd(x, u)
    }

    pub fn jacobian_u_fd(&self, x: &[f64], u: f64) -> DVector<f64> {
        let h = 1e-6 * (1.0 + u.abs());
        let fp = self.f(x, u + h);
        let fm = self.f(x, u - h);
        DVector::from_fn(self.n(), |i, _| (fp[i] - fm[i]) / (2.0 * h))
    }

    /// `∇g`.
    pub fn gradient_g(&self, x: &[f64]) -> DVector<f64> {
        if let Some(j) = self.dynamics.grad_output(x) {
            return j;
        }
        self.gradient_g_fd(x)
    }

    pub fn gradient_g_fd(&self, x: &[f64]) -> DVector<f64> {
        let h = fd_step(x);
        let mut xp = x.to_vec();
        DVector::from_fn(self.n(), |j, _| {
            xp[j] = x[j] + h;
            let gp = self.g(&xp);
            xp[j] = x[j] - h;
            let gm = self.g(&xp);
            xp[j] = x[j];
            (gp - gm) / (2.0 * h)
        })
    }

    /// Evaluates `f` and `g` at a point to catch obviously broken models.
    pub fn smoke_check(&self, x: &[f64], u: f64) -> Result<()> {
        if x.len() != self.n() {
            return Err(invalid(format!(
                "state has dimension {}, plant '{}' expects {}",
                x.len(),
                self.name,
                self.n()
            )));
        }
        let dx = self.f(x, u);
        if dx.iter().any(|v| !v.is_finite()) || !self.g(x).is_finite() {
            return Err(invalid(format!(
                "plant '{}' is not finite at x = {x:?}, u = {u}",
                self.name
            )));
        }
        Ok(())
    }
}

fn fd_step(x: &[f64]) -> f64 {
    1e-6 * (1.0 + norm_inf(x))
}

/// Classical RK4 with preallocated stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    /// Advances `x` by `dt` with the input held at `u`.
    pub fn step(&mut self, plant: &PlantModel, x: &mut [f64], u: f64, dt: f64) {
        self.step_with(plant, x, [u, u, u], dt)
    }

    /// Advances `x` by `dt` with the input evaluated at the stage times
    /// `t`, `t + dt/2`, `t + dt`.
    #[allow(clippy::needless_range_loop)]
    pub fn step_with(&mut self, plant: &PlantModel, x: &mut [f64], u: [f64; 3], dt: f64) {
        let n = x.len();
        plant.f_into(x, u[0], &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * dt * self.k1[i];
        }
        plant.f_into(&self.tmp, u[1], &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * dt * self.k2[i];
        }
        plant.f_into(&self.tmp, u[1], &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + dt * self.k3[i];
        }
        plant.f_into(&self.tmp, u[2], &mut self.k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// True when the state left the working region (blow-up or non-finite).
#[inline]
pub fn diverged(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_GUARD)
}

/// Time-stamped open-loop samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn push(&mut self, t: f64, x: &[f64], u: f64, y: f64) {
        self.times.push(t);
        self.states.push(x.to_vec());
        self.inputs.push(u);
        self.outputs.push(y);
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }
}

fn grid(horizon: f64, dt: f64) -> Result<(usize, f64)> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("step size must be positive, got {dt}")));
    }
    let steps = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
    Ok((steps, horizon / steps as f64))
}

/// RK4 trajectory from `x0` under the constant input `u0`, on a uniform grid
/// with step at most `dt` that lands exactly on `horizon`.
pub fn simulate_constant_input(
    plant: &PlantModel,
    x0: &[f64],
    u0: f64,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    plant.smoke_check(x0, u0)?;
    let (steps, h) = grid(horizon, dt)?;
    let mut rk = Rk4::new(plant.n());
    let mut x = x0.to_vec();
    let mut traj = Trajectory::default();
    traj.push(0.0, &x, u0, plant.g(&x));
    for i in 0..steps {
        rk.step(plant, &mut x, u0, h);
        let t = (i + 1) as f64 * h;
        if diverged(&x) {
            return Err(Error::Diverged { time: t });
        }
        traj.push(t, &x, u0, plant.g(&x));
    }
    Ok(traj)
}

/// Final state of the constant-input trajectory without storing samples.
pub fn final_state_constant_input(
    plant: &PlantModel,
    x0: &[f64],
    u0: f64,
    horizon: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    let (steps, h) = grid(horizon, dt)?;
    let mut rk = Rk4::new(plant.n());
    let mut x = x0.to_vec();
    for i in 0..steps {
        rk.step(plant, &mut x, u0, h);
        if diverged(&x) {
            return Err(Error::Diverged {
                time: (i + 1) as f64 * h,
            });
        }
    }
    Ok(x)
}

/// RK4 trajectory under a time-varying input evaluated at the stage times.
pub fn simulate_with_input(
    plant: &PlantModel,
    x0: &[f64],
    input: &dyn InputSignal,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    plant.smoke_check(x0, input.value(0.0))?;
    let (steps, h) = grid(horizon, dt)?;
    let mut rk = Rk4::new(plant.n());
    let mut x = x0.to_vec();
    let mut traj = Trajectory::default();
    traj.push(0.0, &x, input.value(0.0), plant.g(&x));
    for i in 0..steps {
        let t = i as f64 * h;
        let us = [input.value(t), input.value(t + 0.5 * h), input.value(t + h)];
        rk.step_with(plant, &mut x, us, h);
        let t1 = (i + 1) as f64 * h;
        if diverged(&x) {
            return Err(Error::Diverged { time: t1 });
        }
        traj.push(t1, &x, us[2], plant.g(&x));
    }
    Ok(traj)
}
