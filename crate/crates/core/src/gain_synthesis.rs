//! Tube set `W`, sampled Lipschitz constants over it, and the closed-form
//! gain constants:
//!
//! ```text
//! T   = ln(6m(m+1)) / λ
//! κ   = min{ 1 / (6(m+1)αT),  L₁ / (6(m+1)L₂T) · (e^{L₁T} - 1)⁻¹ }
//! λ̃   = 2δ_g(m + 1/6)
//! k   < k_max = 2κ / (δ_g(6m+1))
//! ```
//!
//! The constants are conservative by several orders of magnitude on most
//! plants; `roa::select_gain_empirical` gives the practical counterpart.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumMap;
use crate::error::{invalid, Result};
use crate::numeric::{dist_inf, stream_rng, unit_direction};
use crate::plant::PlantModel;
use crate::stability_cert::StabilityCertificate;

/// Inflation applied to every sampled Lipschitz estimate.
pub const LIPSCHITZ_INFLATION: f64 = 1.1;
pub const DEFAULT_LIPSCHITZ_SAMPLES: usize = 4000;

/// `W = { x : min_u ‖x - Ξ(u)‖_∞ < (m + 1/6)ε₀ }`, with `Ξ` the piecewise
/// linear interpolant of the equilibrium map.
#[derive(Debug, Clone, Copy)]
pub struct TubeW<'a> {
    map: &'a EquilibriumMap,
    pub radius: f64,
}

impl<'a> TubeW<'a> {
    pub fn new(map: &'a EquilibriumMap, cert: &StabilityCertificate) -> Self {
        Self {
            map,
            radius: (cert.m + 1.0 / 6.0) * cert.eps0,
        }
    }

    pub fn with_radius(map: &'a EquilibriumMap, radius: f64) -> Self {
        Self { map, radius }
    }

    pub fn map(&self) -> &'a EquilibriumMap {
        self.map
    }

    /// ∞-norm distance from `x` to the equilibrium curve.
    pub fn distance(&self, x: &[f64]) -> f64 {
        self.map
            .xi_values
            .windows(2)
            .map(|seg| segment_distance(x, &seg[0], &seg[1]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.distance(x) < self.radius
    }

    /// Random point of `W`: a point of the curve plus a uniform offset in
    /// the open ∞-ball of radius `radius`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u = rng.gen_range(self.map.spec.u_min..=self.map.spec.u_max);
        let mut x = self.map.xi_at(u);
        let r = self.radius * (1.0 - 1e-12);
        for v in x.iter_mut() {
            *v += rng.gen_range(-r..=r);
        }
        x
    }
}

/// `min_{s∈[0,1]} ‖x - a - s(b - a)‖_∞`, a convex function of `s`.
fn segment_distance(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let phi = |s: f64| {
        x.iter()
            .zip(a.iter().zip(b))
            .fold(0.0_f64, |m, (xi, (ai, bi))| m.max((xi - ai - s * (bi - ai)).abs()))
    };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (phi(c), phi(d));
    for _ in 0..80 {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = phi(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = phi(d);
        }
    }
    phi(0.0).min(phi(1.0)).min(phi(0.5 * (lo + hi)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimates {
    /// Lipschitz constant of `f` in `x` over `W × [u_min, u_max]`.
    pub l1: f64,
    /// Lipschitz constant of `f` in `u`.
    pub l2: f64,
    /// Lipschitz constant of `g` over `W`.
    pub delta_g: f64,
}

/// Sampled Lipschitz estimates: Jacobian operator norms (`‖∂f/∂x‖_∞`,
/// `‖∂f/∂u‖_∞`, `‖∇g‖₁`, the norms induced by the ∞-norm on states) and
/// difference quotients over nearby pairs, maximized over `n_samples`
/// random points and inflated by [`LIPSCHITZ_INFLATION`]. Sample `i`
/// depends only on `(seed, i)`, so more samples never lower an estimate.
pub fn estimate_lipschitz(plant: &PlantModel, w: &TubeW<'_>, n_samples: usize, seed: u64) -> Result<LipschitzEstimates> {
    if !(w.radius > 0.0) {
        return Err(invalid("tube W is empty"));
    }
    let spec = w.map().spec;
    let n = plant.n();
    let (mut l1, mut l2, mut dg) = (0.0_f64, 0.0_f64, 0.0_f64);
    for i in 0..n_samples {
        let mut rng = stream_rng(seed, i as u64);
        let x = w.sample(&mut rng);
        let u = rng.gen_range(spec.u_min..=spec.u_max);

        let jx = plant.jacobian_x(&x, u);
        let row_sums = (0..n).map(|r| jx.row(r).iter().map(|v| v.abs()).sum::<f64>());
        l1 = l1.max(row_sums.fold(0.0, f64::max));
        l2 = l2.max(plant.jacobian_u(&x, u).amax());
        dg = dg.max(plant.gradient_g(&x).iter().map(|v| v.abs()).sum());

        // difference quotients against a nearby point that stays in W
        let dir = unit_direction(&mut rng, n);
        let step = 0.05 * w.radius;
        let x2: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
        if w.contains(&x2) {
            let dx = dist_inf(&x, &x2);
            l1 = l1.max(dist_inf(&plant.f(&x, u), &plant.f(&x2, u)) / dx);
            dg = dg.max((plant.g(&x) - plant.g(&x2)).abs() / dx);
        }
        let u2 = rng.gen_range(spec.u_min..=spec.u_max);
        if (u2 - u).abs() > 1e-9 {
            l2 = l2.max(dist_inf(&plant.f(&x, u), &plant.f(&x, u2)) / (u2 - u).abs());
        }
    }
    Ok(LipschitzEstimates {
        l1: LIPSCHITZ_INFLATION * l1,
        l2: LIPSCHITZ_INFLATION * l2,
        delta_g: LIPSCHITZ_INFLATION * dg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainCertificate {
    pub m: f64,
    pub lambda: f64,
    pub eps0: f64,
    pub l1: f64,
    pub l2: f64,
    pub delta_g: f64,
    pub alpha: f64,
    pub mu: f64,
    pub w_radius: f64,
    pub t: f64,
    /// The two candidates whose minimum is `kappa`.
    pub kappa_branches: [f64; 2],
    pub kappa: f64,
    pub lambda_tilde: f64,
    pub k_max: f64,
}

/// Evaluates `T`, `κ`, `λ̃` and `k_max` from the certificate and the
/// Lipschitz data. `T` is taken at its lower bound.
pub fn compute_constants(
    cert: &StabilityCertificate,
    lip: &LipschitzEstimates,
    alpha: f64,
    mu: f64,
) -> Result<GainCertificate> {
    let LipschitzEstimates { l1, l2, delta_g } = *lip;
    let m = cert.m;
    let lambda = cert.lambda;
    for (name, v) in [
        ("L1", l1),
        ("L2", l2),
        ("delta_g", delta_g),
        ("alpha", alpha),
        ("mu", mu),
        ("lambda", lambda),
        ("eps0", cert.eps0),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(format!("gain synthesis needs {name} > 0, got {v}")));
        }
    }
    if !(m >= 1.0) {
        return Err(invalid(format!("gain synthesis needs m ≥ 1, got {m}")));
    }

    let t = (6.0 * m * (m + 1.0)).ln() / lambda;
    let branch_alpha = 1.0 / (6.0 * (m + 1.0) * alpha * t);
    // (e^{L₁T} - 1)⁻¹ = e^{-L₁T} / (1 - e^{-L₁T}), stable for large L₁T
    let decay = (-l1 * t).exp();
    let branch_flow = l1 / (6.0 * (m + 1.0) * l2 * t) * decay / -(-l1 * t).exp_m1();
    let kappa = branch_alpha.min(branch_flow);
    if !(kappa > 0.0) {
        return Err(invalid(format!(
            "gain constants underflow (L1·T = {:.1}); the certified gain is zero in double precision",
            l1 * t
        )));
    }
    Ok(GainCertificate {
        m,
        lambda,
        eps0: cert.eps0,
        l1,
        l2,
        delta_g,
        alpha,
        mu,
        w_radius: (m + 1.0 / 6.0) * cert.eps0,
        t,
        kappa_branches: [branch_alpha, branch_flow],
        kappa,
        lambda_tilde: 2.0 * delta_g * (m + 1.0 / 6.0),
        k_max: 2.0 * kappa / (delta_g * (6.0 * m + 1.0)),
    })
}

/// Builds `W`, estimates the Lipschitz constants and evaluates the gain
/// constants in one go.
pub fn synthesize(
    plant: &PlantModel,
    map: &EquilibriumMap,
    cert: &StabilityCertificate,
    n_samples: usize,
    seed: u64,
) -> Result<(LipschitzEstimates, GainCertificate)> {
    let w = TubeW::new(map, cert);
    let lip = estimate_lipschitz(plant, &w, n_samples, seed)?;
    let gain = compute_constants(cert, &lip, map.alpha, map.mu)?;
    Ok((lip, gain))
}
