//! Toolkit for HE-friendly polynomial CNNs.
//!
//! - [`numcore`]: tensors and reverse-mode differentiation.
//! - [`polyapprox`]: minimax (Remez) and least-squares activation fits.
//! - [`netgraph`]: network DAG, builders, serialization, evaluation.
//! - [`hecost`]: chain-index propagation, bootstraps, skip cost matrices.
//! - [`scopt`]: skip-connection placement and gradual removal.
//! - [`trainer`]: range-aware training and polynomial replacement.
//! - [`hesim`]: fixed-precision mock-HE evaluation.

pub mod numcore;
pub mod hecost;
pub mod hesim;
pub mod netgraph;
pub mod polyapprox;
pub mod scopt;
pub mod trainer;
