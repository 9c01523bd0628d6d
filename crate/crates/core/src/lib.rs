//! Percentile-criterion optimization for offline tabular reinforcement
//! learning: Bayesian posteriors over transition models, VaR dynamic
//! programming, robust-MDP baselines, analysis routines, benchmark domains and
//! an experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod domains;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod posterior;
pub mod robust;
pub mod var;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use mdp::{DeterministicPolicy, Solution, TabularMdp, TransitionModel, ValueFunction};
pub use posterior::{BatchDataset, DirichletPosterior, ModelEnsemble, PosteriorMoments, Transition};
pub use var::{PosteriorSource, VarConfig, VarMode};
