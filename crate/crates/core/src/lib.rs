//! Numerical laboratory for disordered pinning models built on renewal
//! processes with regularly varying inter-arrival laws.
//!
//! The crate is organized around the objects of the marginally relevant
//! pinning problem (inter-arrival exponent 1/2 up to slowly varying
//! corrections):
//!
//! * [`slowvar`]: slowly varying functions, their integral transforms and
//!   monotone envelopes.
//! * [`renewal`]: discrete renewal processes, renewal mass functions,
//!   samplers and the local-time scaling law.
//! * [`disorder`]: IID disorder families, their cumulant generating
//!   functions and exponentially tilted variants.
//! * [`pinning`]: quenched partition functions, free energies and
//!   fractional moments.
//! * [`coarsegrain`]: block decompositions of the partition function and
//!   the coarse-graining length.
//! * [`changemeasure`]: q-body change-of-measure potentials, truncated
//!   tilts and the Holder factorization they enter.
//!
//! Supporting numerics (log-domain accumulation, quadrature, root finding)
//! live in [`numeric`]; sampling statistics in [`stats`]; reproducible
//! stream derivation in [`seeds`].

pub mod changemeasure;
pub mod coarsegrain;
pub mod disorder;
mod error;
pub mod numeric;
pub mod pinning;
pub mod renewal;
pub mod seeds;
pub mod slowvar;
pub mod stats;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Version of this library, for run manifests.
pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}
