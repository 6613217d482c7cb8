use thiserror::Error;

/// Errors raised by the library. Messages carry the name of the module
/// that produced them so the CLI can forward them unchanged.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("plant: trajectory diverged near t = {time:.6}")]
    Diverged { time: f64 },

    #[error(
        "equilibrium: no equilibrium found for u = {u} (residual {residual:.3e}); \
         consider narrowing [u_min, u_max]"
    )]
    EquilibriumNotFound { u: f64, residual: f64 },

    #[error(
        "equilibrium: steady-state map is not strictly increasing on [{u_lo}, {u_hi}] \
         (G difference {delta:.3e})"
    )]
    Assumption2Violated { u_lo: f64, u_hi: f64, delta: f64 },

    #[error("equilibrium: reference r = {r} outside the open interval ({y_min}, {y_max})")]
    ReferenceOutOfRange { r: f64, y_min: f64, y_max: f64 },

    #[error("stability_cert: not exponentially stable at u0 = {u0} (spectral abscissa {abscissa:.6})")]
    NotExponentiallyStable { u0: f64, abscissa: f64 },

    #[error(
        "stability_cert: certification failed: {reason} \
         (worst probe u0 = {worst_u0}, radius = {worst_radius}, ratio = {worst_ratio:.4})"
    )]
    CertificationFailed {
        reason: String,
        worst_u0: f64,
        worst_radius: f64,
        worst_ratio: f64,
    },

    #[error("roa: gain selection failed down to k = {k_last:.3e}; failing sample x0 = {x0:?}, u0 = {u0}")]
    SelectionFailed { k_last: f64, x0: Vec<f64>, u0: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("io: json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
