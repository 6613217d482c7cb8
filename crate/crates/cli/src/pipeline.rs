use std::io::Write;
use std::path::PathBuf;

use satint_core::closed_loop::{compare_windup, lyapunov_checks, simulate_closed_loop, tracking_metrics, LyapunovReport};
use satint_core::gain_synthesis::synthesize;
use satint_core::io::{self, ConstantsTable};
use satint_core::lemma_harness::{check_lemma, LemmaOptions, LemmaReport};
use satint_core::numeric::linspace;
use satint_core::roa::{membership_xt, sample_xt, select_gain_empirical, test_convergence, NestingReport, XtSample};
use satint_core::stability_cert::{certify_assumption1, geometric_radii, validate_on_fresh_probes, FreshProbeReport};
use satint_core::{
    ClosedLoopConfig, CertifyOptions, GainCertificate, LipschitzEstimates, StabilityCertificate, TrackingMetrics,
    CERTIFICATE_LABEL,
};
use serde::Serialize;

use crate::config::{CliError, Command, RunConfig};

const FRESH_PROBE_TOLERANCE: f64 = 1.02;

/// Stability certificate plus gain constants for the configured plant.
pub struct Certified {
    pub cert: StabilityCertificate,
    pub lip: LipschitzEstimates,
    pub gain: GainCertificate,
}

pub fn certify_plant(
    cfg: &RunConfig,
    n_dirs: usize,
    radius_scale: f64,
    lipschitz_samples: usize,
) -> Result<Certified, CliError> {
    let opts = CertifyOptions {
        n_dirs,
        radii: geometric_radii(radius_scale, 5),
        seed: cfg.seed,
        ..CertifyOptions::default()
    };
    let cert = certify_assumption1(&cfg.plant, &cfg.map, &opts)?;
    let (lip, gain) = synthesize(&cfg.plant, &cfg.map, &cert, lipschitz_samples, cfg.seed)?;
    Ok(Certified { cert, lip, gain })
}

#[derive(Serialize)]
struct EmpiricalGain {
    label: &'static str,
    r: f64,
    k_start: f64,
    k_emp: f64,
    halvings: u32,
    members: usize,
}

#[derive(Serialize)]
struct CertificateArtifact<'a> {
    label: &'static str,
    plant: &'a str,
    u_min: f64,
    u_max: f64,
    lambda0: f64,
    m: f64,
    lambda: f64,
    eps0: f64,
    y_min: f64,
    y_max: f64,
    kappa_branches: [f64; 2],
    w_radius: f64,
    constants: ConstantsTable,
    fresh_probes: FreshProbeReport,
    empirical: Option<EmpiricalGain>,
}

/// Small member set around the equilibrium curve for a quick empirical gain.
fn equilibrium_members(cfg: &RunConfig, cert: &StabilityCertificate) -> Result<(Vec<XtSample>, f64), CliError> {
    let t_roa = 10.0 / cert.lambda0.abs();
    let (lo, hi) = (cfg.spec.u_min, cfg.spec.u_max);
    let pad = 0.1 * (hi - lo);
    let mut out = Vec::new();
    for u0 in linspace(lo + pad, hi - pad, 5) {
        let xi = cfg.map.xi_at(u0);
        let mut candidates = vec![xi.clone()];
        for i in 0..xi.len() {
            for s in [-0.5, 0.5] {
                let mut x = xi.clone();
                x[i] += s * cert.eps0;
                candidates.push(x);
            }
        }
        for x0 in candidates {
            let in_xt = membership_xt(&cfg.plant, &cfg.map, cert, &x0, u0, t_roa, 1e-3)?;
            out.push(XtSample {
                x0,
                u0,
                in_xt,
                converged: None,
                settle_time: f64::INFINITY,
            });
        }
    }
    Ok((out, t_roa))
}

fn run_certify(cfg: &RunConfig, args: &crate::args::CertifyArgs, out: &mut (dyn Write + Send)) -> Result<Vec<PathBuf>, CliError> {
    let c = certify_plant(cfg, args.n_dirs, args.radius_scale, args.lipschitz_samples)?;
    let fresh = validate_on_fresh_probes(
        &cfg.plant,
        &cfg.map,
        &c.cert,
        args.fresh_probes,
        FRESH_PROBE_TOLERANCE,
        cfg.seed.wrapping_add(1),
    );
    let empirical = match args.r {
        None => None,
        Some(r) => {
            let (members, t_roa) = equilibrium_members(cfg, &c.cert)?;
            let sel = select_gain_empirical(&cfg.plant, &cfg.map, &members, r, args.k_start, t_roa, 1e-3, Some(c.gain.k_max))?;
            Some(EmpiricalGain {
                label: "empirical",
                r,
                k_start: args.k_start,
                k_emp: sel.k_emp,
                halvings: sel.halvings,
                members: sel.samples.len(),
            })
        }
    };
    let table = ConstantsTable::from(&c.gain);
    let artifact = CertificateArtifact {
        label: CERTIFICATE_LABEL,
        plant: &cfg.plant_config.name,
        u_min: cfg.spec.u_min,
        u_max: cfg.spec.u_max,
        lambda0: c.cert.lambda0,
        m: c.cert.m,
        lambda: c.cert.lambda,
        eps0: c.cert.eps0,
        y_min: cfg.map.y_min,
        y_max: cfg.map.y_max,
        kappa_branches: c.gain.kappa_branches,
        w_radius: c.gain.w_radius,
        constants: table,
        fresh_probes: fresh,
        empirical,
    };

    let dir = &args.out_dir;
    let paths = [
        dir.join("certificate.json"),
        dir.join("constants.json"),
        dir.join("map.csv"),
        dir.join("evidence.csv"),
    ];
    io::write_json(&paths[0], &artifact)?;
    io::write_json(&paths[1], &table)?;
    io::write_csv_file(&paths[2], |f| io::write_map_csv(f, &cfg.map))?;
    io::write_csv_file(&paths[3], |f| io::write_evidence_csv(f, &c.cert.evidence))?;

    writeln!(out, "{} for {} on [{}, {}]", CERTIFICATE_LABEL, cfg.plant_config.name, cfg.spec.u_min, cfg.spec.u_max)
        .and_then(|_| write!(out, "{}", table.render()))
        .and_then(|_| {
            writeln!(
                out,
                "fresh probes: {} of {} outside {}·m",
                artifact.fresh_probes.failures, artifact.fresh_probes.probes, FRESH_PROBE_TOLERANCE
            )
        })
        .and_then(|_| match &artifact.empirical {
            Some(e) => writeln!(
                out,
                "k_max ({CERTIFICATE_LABEL}) = {}   k_emp (empirical, r = {}) = {}",
                io::fmt(c.gain.k_max),
                e.r,
                io::fmt(e.k_emp)
            ),
            None => Ok(()),
        })
        .map_err(|e| CliError::Domain(e.into()))?;
    Ok(paths.to_vec())
}

#[derive(Serialize)]
struct SimulationSummary {
    records: usize,
    u_r: f64,
    metrics: TrackingMetrics,
    log_error_slope: Option<f64>,
    lyapunov: LyapunovReport,
}

fn run_simulate(
    cfg: &RunConfig,
    args: &crate::args::SimulateArgs,
    x0: &[f64],
    u0: f64,
    out: &mut (dyn Write + Send),
) -> Result<Vec<PathBuf>, CliError> {
    let mut loop_cfg = ClosedLoopConfig::new(cfg.plant.clone(), cfg.spec, args.k, args.r, x0.to_vec(), u0, args.horizon);
    loop_cfg.dt = args.dt;
    loop_cfg.record_every = args.record_every;
    let records = simulate_closed_loop(&loop_cfg, &cfg.map)?;
    io::write_csv_file(&args.out, |f| io::write_trajectory_csv(f, &records))?;
    let tol = 1e-3 * (cfg.map.y_max - cfg.map.y_min);
    let summary = SimulationSummary {
        records: records.len(),
        u_r: cfg.map.invert_g(args.r)?,
        metrics: tracking_metrics(&records, tol)?,
        log_error_slope: satint_core::closed_loop::log_error_slope(&records, 1e-12),
        lyapunov: lyapunov_checks(&records, &cfg.map, args.k, args.dt * args.record_every as f64)?,
    };
    out.write_all(io::to_json(&summary)?.as_bytes())
        .map_err(|e| CliError::Domain(e.into()))?;
    Ok(vec![args.out.clone()])
}

#[derive(Serialize)]
struct RoaSummary {
    label: &'static str,
    t_roa: f64,
    eps0: f64,
    eps0_overridden: bool,
    nesting: NestingReport,
    k_max_certified: f64,
    k_emp: Option<f64>,
    converged: usize,
    tested: usize,
}

fn run_roa(
    cfg: &RunConfig,
    args: &crate::args::RoaArgs,
    grid: &satint_core::GridSpec,
    out: &mut (dyn Write + Send),
) -> Result<Vec<PathBuf>, CliError> {
    let mut c = certify_plant(cfg, 16, 1.0, satint_core::gain_synthesis::DEFAULT_LIPSCHITZ_SAMPLES)?;
    if let Some(e) = args.eps0 {
        c.cert.eps0 = e;
    }
    let mut samples = sample_xt(&cfg.plant, &cfg.map, &c.cert, args.t_roa, grid, args.dt)?;
    let doubled = sample_xt(&cfg.plant, &cfg.map, &c.cert, 2.0 * args.t_roa, grid, args.dt)?;
    let nesting = NestingReport {
        t_roa: args.t_roa,
        members: samples.iter().filter(|s| s.in_xt).count(),
        members_doubled: doubled.iter().filter(|s| s.in_xt).count(),
        nodes: samples.len(),
        exceptions: samples.iter().zip(&doubled).filter(|(a, b)| a.in_xt && !b.in_xt).count(),
    };
    let mut k_emp = None;
    if let Some(r) = args.r {
        if nesting.members > 0 {
            let sel = select_gain_empirical(&cfg.plant, &cfg.map, &samples, r, args.k_start, args.t_roa, args.dt, Some(c.gain.k_max))?;
            test_convergence(&cfg.plant, &cfg.map, &mut samples, sel.k_emp, r, args.t_roa, args.dt)?;
            k_emp = Some(sel.k_emp);
        }
    }
    io::write_csv_file(&args.out, |f| io::write_roa_csv(f, &samples))?;
    let summary = RoaSummary {
        label: CERTIFICATE_LABEL,
        t_roa: args.t_roa,
        eps0: c.cert.eps0,
        eps0_overridden: args.eps0.is_some(),
        nesting,
        k_max_certified: c.gain.k_max,
        k_emp,
        converged: samples.iter().filter(|s| s.converged == Some(true)).count(),
        tested: samples.iter().filter(|s| s.converged.is_some()).count(),
    };
    let text = io::to_json(&summary)?;
    let mut paths = vec![args.out.clone()];
    if let Some(p) = &args.summary {
        io::write_json(p, &summary)?;
        paths.push(p.clone());
    }
    out.write_all(text.as_bytes()).map_err(|e| CliError::Domain(e.into()))?;
    Ok(paths)
}

#[derive(Serialize)]
struct LemmaArtifact<'a> {
    plant: &'a str,
    kappa_scale: f64,
    k: Option<f64>,
    constants: ConstantsTable,
    report: LemmaReport,
}

fn run_lemma(
    cfg: &RunConfig,
    args: &crate::args::LemmaArgs,
    lemma: satint_core::LemmaId,
    out: &mut (dyn Write + Send),
) -> Result<Vec<PathBuf>, CliError> {
    let mut c = certify_plant(cfg, 16, 1.0, satint_core::gain_synthesis::DEFAULT_LIPSCHITZ_SAMPLES)?;
    c.gain.kappa *= args.kappa_scale;
    let opts = LemmaOptions {
        n_instances: args.instances,
        seed: cfg.seed,
        dt: args.dt,
        k: args.k,
        ..LemmaOptions::default()
    };
    let report = check_lemma(lemma, &cfg.plant, &cfg.map, &c.gain, &opts)?;
    writeln!(
        out,
        "{lemma}: {} instances, {} violations, {} numerical-marginal, worst margin {} ({}; {})",
        report.instances,
        report.violations,
        report.numerical_marginal,
        io::fmt(report.worst_margin),
        report.certificate,
        report.note
    )
    .map_err(|e| CliError::Domain(e.into()))?;
    let artifact = LemmaArtifact {
        plant: &cfg.plant_config.name,
        kappa_scale: args.kappa_scale,
        k: args.k,
        constants: ConstantsTable::from(&c.gain),
        report,
    };
    io::write_json(&args.out, &artifact)?;
    Ok(vec![args.out.clone()])
}

fn run_windup(
    cfg: &RunConfig,
    args: &crate::args::WindupArgs,
    x0: &[f64],
    u0: f64,
    fault: satint_core::Fault,
    out: &mut (dyn Write + Send),
) -> Result<Vec<PathBuf>, CliError> {
    let mut loop_cfg = ClosedLoopConfig::new(cfg.plant.clone(), cfg.spec, args.k, args.r, x0.to_vec(), u0, fault.t_off + args.tail);
    loop_cfg.dt = args.dt;
    loop_cfg.record_every = args.record_every;
    let cmp = compare_windup(&loop_cfg, &cfg.map, fault, args.tol)?;
    io::write_csv_file(&args.out, |f| io::write_windup_csv(f, &cmp))?;
    let mut paths = vec![args.out.clone()];
    if let Some(p) = &args.summary {
        io::write_json(p, &cmp)?;
        paths.push(p.clone());
    }
    out.write_all(io::to_json(&cmp)?.as_bytes())
        .map_err(|e| CliError::Domain(e.into()))?;
    Ok(paths)
}

/// Runs the configured command, writes its artifacts and prints a summary
/// to `out`. Returns the written artifact paths.
pub fn run_pipeline(cfg: &RunConfig, out: &mut (dyn Write + Send)) -> Result<Vec<PathBuf>, CliError> {
    let mut run = move || match &cfg.command {
        Command::Certify(args) => run_certify(cfg, args, out),
        Command::Simulate { args, x0, u0 } => run_simulate(cfg, args, x0, *u0, out),
        Command::Roa { args, grid } => run_roa(cfg, args, grid, out),
        Command::LemmaCheck { args, lemma } => run_lemma(cfg, args, *lemma, out),
        Command::CompareWindup { args, x0, u0, fault } => run_windup(cfg, args, x0, *u0, *fault, out),
    };
    match cfg.threads {
        None => run(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?
            .install(run),
    }
}
