use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::Parser;
use satint_core::equilibrium::build_map;
use satint_core::lemma_harness::LemmaId;
use satint_core::plant::builtin_config;
use satint_core::{EquilibriumMap, Error, Fault, GridSpec, PlantConfig, PlantModel, SaturatorSpec};

use crate::args::{CertifyArgs, Cli, Cmd, LemmaArgs, PlantArgs, RoaArgs, SimulateArgs, WindupArgs};

/// Exit status 2 for usage errors, 1 for domain errors.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or values; the message names the flag.
    Usage(String),
    Domain(Error),
    /// `--help` or `--version`; printed and exits 0.
    Info(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Info(_) => 0,
            CliError::Domain(_) => 1,
            CliError::Usage(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Domain(e) => write!(f, "error: {e}"),
            CliError::Info(text) => f.write_str(text),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Domain(e)
    }
}

fn usage(flag: &str, msg: impl fmt::Display) -> CliError {
    CliError::Usage(format!("{flag}: {msg}"))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantSource {
    Builtin(String),
    Config(PathBuf),
}

#[derive(Debug, Clone)]
pub enum Command {
    Certify(CertifyArgs),
    Simulate {
        args: SimulateArgs,
        x0: Vec<f64>,
        u0: f64,
    },
    Roa {
        args: RoaArgs,
        grid: GridSpec,
    },
    LemmaCheck {
        args: LemmaArgs,
        lemma: LemmaId,
    },
    CompareWindup {
        args: WindupArgs,
        x0: Vec<f64>,
        u0: f64,
        fault: Fault,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Certify(_) => "certify",
            Command::Simulate { .. } => "simulate",
            Command::Roa { .. } => "roa",
            Command::LemmaCheck { .. } => "lemma-check",
            Command::CompareWindup { .. } => "compare-windup",
        }
    }
}

/// A validated invocation with the plant and its equilibrium map resolved.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub plant_source: PlantSource,
    pub plant_config: PlantConfig,
    pub plant: PlantModel,
    pub spec: SaturatorSpec,
    pub map: EquilibriumMap,
    pub seed: u64,
    pub threads: Option<usize>,
}

fn resolve_plant(args: &PlantArgs) -> Result<(PlantSource, PlantConfig), CliError> {
    let (source, mut config) = match builtin_config(&args.plant) {
        Some(cfg) => (PlantSource::Builtin(args.plant.clone()), cfg),
        None => {
            let path = PathBuf::from(&args.plant);
            if !path.is_file() {
                return Err(usage(
                    "--plant",
                    format!("unknown plant '{}' (not a built-in name or a config file)", args.plant),
                ));
            }
            let cfg = PlantConfig::from_path(&path).map_err(|e| usage("--plant", e))?;
            (PlantSource::Config(path), cfg)
        }
    };
    if let Some(v) = args.umin {
        config.umin = v;
    }
    if let Some(v) = args.umax {
        config.umax = v;
    }
    config.validate().map_err(|e| usage("--umin/--umax", e))?;
    Ok((source, config))
}

fn parse_vector(flag: &str, text: &str, n: usize) -> Result<Vec<f64>, CliError> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(flag, format!("'{text}' is not a comma-separated list of numbers")))?;
    if v.len() != n {
        return Err(usage(flag, format!("expected {n} values, got {}", v.len())));
    }
    Ok(v)
}

fn check_reference(map: &EquilibriumMap, r: f64) -> Result<(), CliError> {
    map.invert_g(r).map(|_| ()).map_err(|e| usage("--r", e))
}

fn check_positive(flag: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(usage(flag, format!("must be positive, got {v}")))
    }
}

fn initial_pair(
    map: &EquilibriumMap,
    spec: &SaturatorSpec,
    x0: Option<&str>,
    u0: Option<f64>,
    default_u0: f64,
) -> Result<(Vec<f64>, f64), CliError> {
    let u0 = u0.unwrap_or(default_u0);
    if !spec.contains(u0) {
        return Err(usage("--u0", format!("{u0} outside [{}, {}]", spec.u_min, spec.u_max)));
    }
    let x0 = match x0 {
        Some(text) => parse_vector("--x0", text, map.n())?,
        None => map.xi_at(u0),
    };
    Ok((x0, u0))
}

/// Parses and validates command-line arguments (including the program name).
pub fn parse_config<I, T>(args: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CliError::Info(e.to_string()),
        _ => CliError::Usage(e.to_string().trim_end().to_string()),
    })?;
    if cli.threads == Some(0) {
        return Err(usage("--threads", "must be at least 1"));
    }
    let plant_args = match &cli.command {
        Cmd::Certify(a) => &a.plant,
        Cmd::Simulate(a) => &a.plant,
        Cmd::Roa(a) => &a.plant,
        Cmd::LemmaCheck(a) => &a.plant,
        Cmd::CompareWindup(a) => &a.plant,
    };
    let (plant_source, plant_config) = resolve_plant(plant_args)?;
    let plant = plant_config.to_plant().map_err(|e| usage("--plant", e))?;
    let spec = plant_config.spec().map_err(|e| usage("--umin/--umax", e))?;
    if plant_args.map_grid < 2 {
        return Err(usage("--map-grid", "needs at least 2 nodes"));
    }
    let map = build_map(&plant, &spec, plant_args.map_grid)?;

    let command = match cli.command {
        Cmd::Certify(args) => {
            if let Some(r) = args.r {
                check_reference(&map, r)?;
            }
            check_positive("--radius-scale", args.radius_scale)?;
            check_positive("--k-start", args.k_start)?;
            if args.n_dirs == 0 {
                return Err(usage("--n-dirs", "must be at least 1"));
            }
            Command::Certify(args)
        }
        Cmd::Simulate(args) => {
            check_positive("--k", args.k)?;
            check_reference(&map, args.r)?;
            check_positive("--dt", args.dt)?;
            check_positive("--horizon", args.horizon)?;
            if args.record_every == 0 {
                return Err(usage("--record-every", "must be at least 1"));
            }
            let mid = 0.5 * (spec.u_min + spec.u_max);
            let (x0, u0) = initial_pair(&map, &spec, args.x0.as_deref(), args.u0, mid)?;
            Command::Simulate { args, x0, u0 }
        }
        Cmd::Roa(args) => {
            let grid = GridSpec::parse(&args.grid, plant.n()).map_err(|e| usage("--grid", e))?;
            if grid.u.lo < spec.u_min || grid.u.hi > spec.u_max {
                return Err(usage("--grid", "u-range must lie inside [umin, umax]"));
            }
            check_positive("--T", args.t_roa)?;
            check_positive("--k-start", args.k_start)?;
            check_positive("--dt", args.dt)?;
            if let Some(e) = args.eps0 {
                check_positive("--eps0", e)?;
            }
            if let Some(r) = args.r {
                check_reference(&map, r)?;
            }
            Command::Roa { args, grid }
        }
        Cmd::LemmaCheck(args) => {
            let lemma = args.lemma.parse::<LemmaId>().map_err(|e| usage("--lemma", e))?;
            if args.instances == 0 {
                return Err(usage("--instances", "must be at least 1"));
            }
            if let Some(k) = args.k {
                check_positive("--k", k)?;
            }
            check_positive("--kappa-scale", args.kappa_scale)?;
            check_positive("--dt", args.dt)?;
            Command::LemmaCheck { args, lemma }
        }
        Cmd::CompareWindup(args) => {
            check_positive("--k", args.k)?;
            check_reference(&map, args.r)?;
            check_positive("--dt", args.dt)?;
            check_positive("--tol", args.tol)?;
            if !(args.t_on >= 0.0) || !(args.duration >= 0.0) || !(args.tail > 0.0) {
                return Err(usage("--t-on/--duration/--tail", "need t_on ≥ 0, duration ≥ 0 and tail > 0"));
            }
            if args.record_every == 0 {
                return Err(usage("--record-every", "must be at least 1"));
            }
            let u_r = map.invert_g(args.r)?;
            let (x0, u0) = initial_pair(&map, &spec, args.x0.as_deref(), args.u0, u_r)?;
            let fault = Fault {
                t_on: args.t_on,
                t_off: args.t_on + args.duration,
                y_offset: args.offset,
            };
            Command::CompareWindup { args, x0, u0, fault }
        }
    };

    Ok(RunConfig {
        command,
        plant_source,
        plant_config,
        plant,
        spec,
        map,
        seed: cli.seed,
        threads: cli.threads,
    })
}
