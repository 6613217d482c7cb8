//! Saturating-integrator feedback control for stable nonlinear SISO plants.
//!
//! The controller `u̇ = S(u, k(r - y))` keeps its state inside
//! `[u_min, u_max]` and drives the output of a stable plant to a constant
//! reference. The crate builds the equilibrium map of the plant, estimates
//! the stability and gain constants by sampling, simulates the loop, and
//! checks the intermediate lemmas on random instances.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closed_loop;
pub mod equilibrium;
pub mod error;
pub mod gain_synthesis;
pub mod io;
pub mod lemma_harness;
pub mod numeric;
pub mod plant;
pub mod roa;
pub mod sat_integrator;
pub mod stability_cert;

pub use closed_loop::{ClosedLoopConfig, ClosedLoopRecord, Fault, IntegratorKind, TrackingMetrics, WindupComparison};
pub use equilibrium::{build_map, EquilibriumMap, ShiftedGain};
pub use error::{Error, Result};
pub use gain_synthesis::{GainCertificate, LipschitzEstimates, TubeW};
pub use lemma_harness::{LemmaId, LemmaOptions, LemmaReport};
pub use plant::{builtin, PlantConfig, PlantModel, Trajectory, BUILTIN_PLANTS};
pub use roa::{GridSpec, XtSample};
pub use sat_integrator::{SaturatorSpec, SaturatorState};
pub use stability_cert::{CertifyOptions, StabilityCertificate, CERTIFICATE_LABEL};
