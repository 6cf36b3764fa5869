//! Simulation and estimation for instrumental-variable analyses whose
//! treatment is an aggregate of unobserved components.
//!
//! * [`scm`]: the linear aggregate SCM, exact population moments and IV estimands.
//! * [`acid`]: interventional distributions over the components and the
//!   aggregate causal effect they induce.
//! * [`estimators`]: sample 2SLS and first-stage F.
//! * [`diagnostics`]: Sargan over-identification test and power curves.
//! * [`equivalence`]: the observationally equivalent exclusion-violating SCM.
//! * [`experiments`]: deterministic reproduction runs writing CSV artifacts.
//! * [`cli`]: the `aggiv` command line.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod acid;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod equivalence;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod rng;
pub mod scm;

pub use acid::{GaussianAcid, InterventionSampler, McEstimate};
pub use dataset::Dataset;
pub use error::{Error, ErrorKind, Result};
pub use scm::{AggregateIvScm, PopulationMoments, Var};
