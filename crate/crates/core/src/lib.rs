//! Interpolated MVU (I-MVU): a privacy-aware compression mechanism for
//! federated learning.
//!
//! A discrete minimum-variance unbiased (MVU) mechanism is designed on a
//! uniform input grid by linear programming ([`designer`]). The I-MVU
//! mechanism extends it to arbitrary real inputs by interpolating the natural
//! parameters `η = log p` of the categorical output distribution
//! ([`mechanism`]). [`accountant`] certifies pure-DP and Rényi-DP costs,
//! [`oracle`] recomputes divergences exactly by enumeration, and the
//! [`dme`] and [`fl`] harnesses exercise the mechanism end to end.

pub mod accountant;
pub mod baselines;
pub mod cli;
pub mod designer;
pub mod dme;
pub mod error;
pub mod fl;
pub mod format;
pub mod lp;
pub mod mechanism;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
pub use mechanism::{ClipConfig, InterpolatedMechanism, MechanismTable, Metric, NormKind};
