//! Numerical certification of uniform exponential stability around the
//! equilibrium curve: spectral abscissae of the linearizations and a
//! sampled fit of the decay envelope
//!
//! ```text
//! ‖x(t) - Ξ(u₀)‖ ≤ m·e^{-λt}·‖x(0) - Ξ(u₀)‖   whenever ‖x(0) - Ξ(u₀)‖ ≤ ε₀.
//! ```
//!
//! The fit is empirical: it holds on the probe set by construction and is
//! checked against fresh probes, but it is not a proof. Reports label it
//! with [`CERTIFICATE_LABEL`]. State norms are ∞-norms throughout.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{EquilibriumMap, EquilibriumTracker};
use crate::error::{invalid, Error, Result};
use crate::numeric::{dist_inf, norm_inf, stream_rng, unit_direction};
use crate::plant::{diverged, PlantModel, Rk4};

pub const CERTIFICATE_LABEL: &str = "sampled certificate";

/// Per-grid-node evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub u0: f64,
    pub abscissa: f64,
    /// Largest `‖x(t) - Ξ‖ e^{λt} / ‖x(0) - Ξ‖` over the probes at this node
    /// with radius ≤ ε₀; `None` when the node was not probed.
    pub worst_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    /// Largest spectral abscissa over the grid (negative).
    pub lambda0: f64,
    pub m: f64,
    pub lambda: f64,
    pub eps0: f64,
    pub evidence: Vec<EvidenceRecord>,
}

impl StabilityCertificate {
    /// Certificate with prescribed constants and no evidence.
    pub fn forced(m: f64, lambda: f64, eps0: f64, lambda0: f64) -> Result<Self> {
        let cert = Self {
            lambda0,
            m,
            lambda,
            eps0,
            evidence: Vec::new(),
        };
        cert.check()?;
        Ok(cert)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.m >= 1.0 && self.lambda > 0.0 && self.eps0 > 0.0 && self.lambda0 < 0.0)
            || !self.m.is_finite()
            || !self.eps0.is_finite()
        {
            return Err(invalid(format!(
                "certificate needs m ≥ 1, λ > 0, ε₀ > 0, λ₀ < 0; got m = {}, λ = {}, ε₀ = {}, λ₀ = {}",
                self.m, self.lambda, self.eps0, self.lambda0
            )));
        }
        Ok(())
    }

    /// The envelope `m e^{-λt}`.
    pub fn envelope(&self, t: f64) -> f64 {
        self.m * (-self.lambda * t).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    /// Random unit directions per probed equilibrium.
    pub n_dirs: usize,
    /// Candidate radii, ascending.
    pub radii: Vec<f64>,
    /// Probe horizon; `10/|λ₀|` when absent.
    pub horizon: Option<f64>,
    pub dt: f64,
    /// Number of equilibria probed (evenly spread over the grid).
    pub n_u0: usize,
    pub m_cap: f64,
    /// Hill-climbing passes refining the worst direction per (u₀, radius).
    pub refine_rounds: usize,
    pub seed: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            n_dirs: 16,
            radii: geometric_radii(1.0, 5),
            horizon: None,
            dt: 5e-3,
            n_u0: 11,
            m_cap: 100.0,
            refine_rounds: 3,
            seed: 0,
        }
    }
}

/// `count` radii spaced geometrically from `0.01·scale` to `scale`.
pub fn geometric_radii(scale: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![scale],
        _ => (0..count)
            .map(|i| scale * 10f64.powf(-2.0 + 2.0 * i as f64 / (count - 1) as f64))
            .collect(),
    }
}

/// Largest real part of the eigenvalues of `a`.
pub fn abscissa_of(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 {
        return a[(0, 0)];
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Spectral abscissa of `∂f/∂x` at `(Ξ(u₀), u₀)`, with `Ξ(u₀)` solved to
/// Newton accuracy.
pub fn spectral_abscissa(plant: &PlantModel, map: &EquilibriumMap, u0: f64) -> f64 {
    let mut tracker = EquilibriumTracker::new(plant, map);
    let xi = tracker.xi(u0).to_vec();
    abscissa_of(&plant.jacobian_x(&xi, u0))
}

/// Sampled deviation norms of one perturbed trajectory.
#[derive(Debug, Clone)]
struct Probe {
    node: usize,
    radius_idx: usize,
    dir: Vec<f64>,
    /// `‖x(t_i) - Ξ‖` at `t_i = i·h`; truncated at divergence.
    norms: Vec<f64>,
    h: f64,
    diverged: bool,
}

impl Probe {
    fn ratio(&self, lambda: f64) -> f64 {
        if self.diverged {
            return f64::INFINITY;
        }
        let n0 = self.norms[0];
        self.norms
            .iter()
            .enumerate()
            .map(|(i, &v)| v * (lambda * i as f64 * self.h).exp() / n0)
            .fold(0.0, f64::max)
    }
}

#[allow(clippy::too_many_arguments)]
fn run_probe(
    plant: &PlantModel,
    xi: &[f64],
    u0: f64,
    node: usize,
    radius_idx: usize,
    radius: f64,
    dir: Vec<f64>,
    horizon: f64,
    dt: f64,
) -> Probe {
    let steps = (horizon / dt).ceil().max(1.0) as usize;
    let h = horizon / steps as f64;
    let mut x: Vec<f64> = xi.iter().zip(&dir).map(|(a, d)| a + radius * d).collect();
    let mut norms = Vec::with_capacity(steps + 1);
    norms.push(dist_inf(&x, xi));
    let mut rk = Rk4::new(x.len());
    let mut div = false;
    for _ in 0..steps {
        rk.step(plant, &mut x, u0, h);
        if diverged(&x) {
            div = true;
            break;
        }
        norms.push(dist_inf(&x, xi));
    }
    Probe {
        node,
        radius_idx,
        dir,
        norms,
        h,
        diverged: div,
    }
}

fn probe_nodes(map: &EquilibriumMap, n_u0: usize) -> Vec<usize> {
    let len = map.len();
    let k = n_u0.clamp(1, len);
    if k == 1 {
        return vec![len / 2];
    }
    let mut nodes: Vec<usize> = (0..k)
        .map(|i| ((i as f64) * (len - 1) as f64 / (k - 1) as f64).round() as usize)
        .collect();
    nodes.dedup();
    nodes
}

/// Estimates `(m, λ, ε₀)` by envelope fitting over perturbed trajectories.
///
/// `λ` starts at `0.9·|λ₀|` and shrinks by 0.8 up to five times if no
/// `m < m_cap` fits even the smallest radius. `ε₀` is the largest candidate
/// radius for which every probe up to that radius fits with `m < m_cap`.
pub fn certify_assumption1(
    plant: &PlantModel,
    map: &EquilibriumMap,
    opts: &CertifyOptions,
) -> Result<StabilityCertificate> {
    if opts.radii.is_empty() || opts.radii.windows(2).any(|w| w[1] <= w[0]) || opts.radii[0] <= 0.0 {
        return Err(invalid("certification radii must be positive and increasing"));
    }
    if !(opts.dt > 0.0) || opts.n_dirs == 0 {
        return Err(invalid("certification needs dt > 0 and at least one direction"));
    }

    let abscissae: Vec<f64> = map
        .u_grid
        .iter()
        .zip(&map.xi_values)
        .map(|(&u, x)| abscissa_of(&plant.jacobian_x(x, u)))
        .collect();
    let (worst_node, lambda0) = abscissae
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, a)| if a > acc.1 { (i, a) } else { acc });
    if !(lambda0 < 0.0) {
        return Err(Error::NotExponentiallyStable {
            u0: map.u_grid[worst_node],
            abscissa: lambda0,
        });
    }

    let horizon = opts.horizon.unwrap_or(10.0 / lambda0.abs());
    let lambda_start = 0.9 * lambda0.abs();
    let nodes = probe_nodes(map, opts.n_u0);
    let n = plant.n();

    let jobs: Vec<(usize, usize, usize)> = nodes
        .iter()
        .flat_map(|&node| {
            (0..opts.radii.len()).flat_map(move |ri| (0..opts.n_dirs).map(move |d| (node, ri, d)))
        })
        .collect();
    let dirs_for = |node: usize| -> Vec<Vec<f64>> {
        let mut rng = stream_rng(opts.seed, node as u64);
        (0..opts.n_dirs).map(|_| unit_direction(&mut rng, n)).collect()
    };
    let node_dirs: Vec<Vec<Vec<f64>>> = (0..map.len())
        .map(|node| if nodes.contains(&node) { dirs_for(node) } else { Vec::new() })
        .collect();

    let mut probes: Vec<Probe> = jobs
        .par_iter()
        .map(|&(node, ri, d)| {
            run_probe(
                plant,
                &map.xi_values[node],
                map.u_grid[node],
                node,
                ri,
                opts.radii[ri],
                node_dirs[node][d].clone(),
                horizon,
                opts.dt,
            )
        })
        .collect();

    // refine the worst direction of every (node, radius) group
    if n > 1 && opts.refine_rounds > 0 {
        let groups: Vec<(usize, usize)> = nodes
            .iter()
            .flat_map(|&node| (0..opts.radii.len()).map(move |ri| (node, ri)))
            .collect();
        let refined: Vec<Probe> = groups
            .par_iter()
            .map(|&(node, ri)| {
                let mut best = probes
                    .iter()
                    .filter(|p| p.node == node && p.radius_idx == ri)
                    .max_by(|a, b| a.ratio(lambda_start).total_cmp(&b.ratio(lambda_start)))
                    .expect("group is nonempty")
                    .clone();
                let mut best_ratio = best.ratio(lambda_start);
                let mut rng = stream_rng(opts.seed ^ 0x5eed_0001, (node * 1024 + ri) as u64);
                let mut scale = 0.3;
                for _ in 0..opts.refine_rounds {
                    for _ in 0..4 {
                        let kick = unit_direction(&mut rng, n);
                        let mut dir: Vec<f64> =
                            best.dir.iter().zip(&kick).map(|(d, k)| d + scale * k).collect();
                        let norm = norm_inf(&dir);
                        dir.iter_mut().for_each(|v| *v /= norm);
                        let cand = run_probe(
                            plant,
                            &map.xi_values[node],
                            map.u_grid[node],
                            node,
                            ri,
                            opts.radii[ri],
                            dir,
                            horizon,
                            opts.dt,
                        );
                        let r = cand.ratio(lambda_start);
                        if r > best_ratio {
                            best_ratio = r;
                            best = cand;
                        }
                    }
                    scale /= 3.0;
                }
                best
            })
            .collect();
        probes.extend(refined);
    }

    let mut lambda = lambda_start;
    for _ in 0..=5 {
        let ratios: Vec<f64> = probes.iter().map(|p| p.ratio(lambda)).collect();
        let mut fit: Option<(usize, f64)> = None;
        for ri in 0..opts.radii.len() {
            let m = probes
                .iter()
                .zip(&ratios)
                .filter(|(p, _)| p.radius_idx <= ri)
                .map(|(_, &r)| r)
                .fold(1.0_f64, f64::max);
            if m < opts.m_cap {
                fit = Some((ri, m));
            } else {
                break;
            }
        }
        if let Some((ri, m)) = fit {
            let eps0 = opts.radii[ri];
            let evidence = map
                .u_grid
                .iter()
                .enumerate()
                .map(|(node, &u0)| {
                    let worst = probes
                        .iter()
                        .zip(&ratios)
                        .filter(|(p, _)| p.node == node && p.radius_idx <= ri)
                        .map(|(_, &r)| r)
                        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
                    EvidenceRecord {
                        u0,
                        abscissa: abscissae[node],
                        worst_ratio: worst,
                    }
                })
                .collect();
            return Ok(StabilityCertificate {
                lambda0,
                m,
                lambda,
                eps0,
                evidence,
            });
        }
        lambda *= 0.8;
    }

    let (worst, ratio) = probes
        .iter()
        .filter(|p| p.radius_idx == 0)
        .map(|p| (p, p.ratio(lambda / 0.8)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("probes exist");
    Err(Error::CertificationFailed {
        reason: format!("no envelope with m < {} at any radius", opts.m_cap),
        worst_u0: map.u_grid[worst.node],
        worst_radius: opts.radii[worst.radius_idx],
        worst_ratio: ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreshProbeReport {
    pub probes: usize,
    /// Largest observed `ratio / m`.
    pub worst_relative: f64,
    /// Probes with `ratio > tolerance·m`.
    pub failures: usize,
}

/// Re-checks a certificate on random equilibria, directions and radii
/// `≤ ε₀` that were not part of the fit.
pub fn validate_on_fresh_probes(
    plant: &PlantModel,
    map: &EquilibriumMap,
    cert: &StabilityCertificate,
    n_probes: usize,
    tolerance: f64,
    seed: u64,
) -> FreshProbeReport {
    let horizon = 10.0 / cert.lambda0.abs();
    let ratios: Vec<f64> = (0..n_probes)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let u0 = rng.gen_range(map.spec.u_min..=map.spec.u_max);
            let dir = unit_direction(&mut rng, plant.n());
            let radius = cert.eps0 * rng.gen_range(1e-3..=1.0);
            let xi = EquilibriumTracker::new(plant, map).xi(u0).to_vec();
            run_probe(plant, &xi, u0, 0, 0, radius, dir, horizon, 5e-3).ratio(cert.lambda)
        })
        .collect();
    FreshProbeReport {
        probes: n_probes,
        worst_relative: ratios.iter().fold(0.0_f64, |m, r| m.max(r / cert.m)),
        failures: ratios.iter().filter(|&&r| r > tolerance * cert.m).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::build_map;
    use crate::plant::builtin;
    use crate::sat_integrator::SaturatorSpec;
    use approx::assert_abs_diff_eq;

    fn setup(name: &str) -> (PlantModel, EquilibriumMap) {
        let p = builtin(name).unwrap();
        let map = build_map(&p, &SaturatorSpec::new(-1.0, 1.0).unwrap(), 201).unwrap();
        (p, map)
    }

    #[test]
    fn abscissae_of_builtins() {
        let (p, map) = setup("linear1d");
        assert_abs_diff_eq!(spectral_abscissa(&p, &map, 0.2), -1.0, epsilon = 1e-12);
        let (p, map) = setup("osc_cubic");
        for u0 in [-1.0, 0.0, 0.7] {
            assert_abs_diff_eq!(spectral_abscissa(&p, &map, u0), -1.0, epsilon = 1e-6);
        }
        let (p, map) = setup("scalar_cubic");
        for u0 in [-0.9, 0.0, 0.33, 1.0] {
            let x = EquilibriumTracker::new(&p, &map).xi(u0)[0];
            assert_abs_diff_eq!(spectral_abscissa(&p, &map, u0), -3.0 * x * x - 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn linear_plant_certificate() {
        let (p, map) = setup("linear1d");
        let cert = certify_assumption1(&p, &map, &CertifyOptions::default()).unwrap();
        assert_abs_diff_eq!(cert.m, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(cert.lambda, 0.9, epsilon = 1e-12);
        assert_eq!(cert.eps0, *CertifyOptions::default().radii.last().unwrap());
        assert!(cert.lambda <= cert.lambda0.abs());
    }

    /// Sup over t and directions of `‖e^{At} d‖_∞ e^{λt}` for the
    /// oscillator's linear part, by dense direct maximization with the
    /// closed-form matrix exponential `e^{-t}(I + tN)`, `N = [[1,1],[-1,-1]]`.
    fn oscillator_envelope_oracle(lambda: f64) -> f64 {
        let mut best = 0.0_f64;
        for k in 0..2000 {
            let th = k as f64 * std::f64::consts::TAU / 2000.0;
            let (c, s) = (th.cos(), th.sin());
            let n0 = c.abs().max(s.abs());
            let (d1, d2) = (c / n0, s / n0);
            for j in 0..4000 {
                let t = j as f64 * 0.005;
                let e = (-t).exp();
                let x1 = e * ((1.0 + t) * d1 + t * d2);
                let x2 = e * (-t * d1 + (1.0 - t) * d2);
                best = best.max(x1.abs().max(x2.abs()) * (lambda * t).exp());
            }
        }
        best
    }

    #[test]
    fn oscillator_certificate_has_transient_growth() {
        let (p, map) = setup("osc_cubic");
        let cert = certify_assumption1(&p, &map, &CertifyOptions::default()).unwrap();
        assert!(cert.m > 1.0);
        let oracle = oscillator_envelope_oracle(cert.lambda);
        assert!(cert.m <= oracle * 1.0001, "m {} oracle {oracle}", cert.m);
        assert!(cert.m >= oracle * 0.98, "m {} oracle {oracle}", cert.m);
    }

    #[test]
    fn unstable_plant_rejected() {
        let p = PlantModel::from_fns("unstable", 1, |x, u, dx| dx[0] = x[0] - u, |x| x[0]);
        let map = build_map(&p, &SaturatorSpec::new(-1.0, 1.0).unwrap(), 11).unwrap();
        match certify_assumption1(&p, &map, &CertifyOptions::default()) {
            Err(Error::NotExponentiallyStable { abscissa, .. }) => assert_abs_diff_eq!(abscissa, 1.0, epsilon = 1e-6),
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn forced_certificate_validation() {
        assert!(StabilityCertificate::forced(1.0, 1.0, 1.0, -1.0).is_ok());
        assert!(StabilityCertificate::forced(0.5, 1.0, 1.0, -1.0).is_err());
        assert!(StabilityCertificate::forced(1.0, 0.0, 1.0, -1.0).is_err());
        assert!(StabilityCertificate::forced(1.0, 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn radii_grid() {
        let r = geometric_radii(2.0, 5);
        assert_abs_diff_eq!(r[0], 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(r[4], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[2], 0.2, epsilon = 1e-15);
    }
}
