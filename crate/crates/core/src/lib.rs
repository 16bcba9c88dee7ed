//! Strategy-weighted density experiments for asset price ensembles.
//!
//! The crate simulates (or ingests) price paths on a time mesh, turns them
//! into prices-densities under the in-sample equivalent martingale measure,
//! estimates the small-mesh limit law of the trader's log-likelihood process
//! and prices European calls from that law, both under the trader's own
//! dynamics and after translation to the risk-neutral frame.

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod limit_law;
pub mod market_sim;
pub mod normal;
pub mod pricing;
pub mod quadrature;
pub mod report;
pub mod stats;

pub use error::{Error, Result};
pub use experiment::{DensityExperiment, Sampler, StrategyTag, Variant};
pub use limit_law::{Atom, CompoundPoissonLaw, LimitLaw, TranslationSpec};
pub use market_sim::{Mesh, MeshKind, ModelTag, PathEnsemble};
pub use pricing::{PriceMode, Quote};
