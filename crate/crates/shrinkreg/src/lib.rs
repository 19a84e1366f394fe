//! Linear shrinkage estimators of latent unit effects, the downstream OLS
//! regression on those estimates with robust inference, and a seeded
//! Monte Carlo engine for coverage/bias/MSE experiments.
//!
//! The crate is organized around the two-step workflow the estimators
//! serve: build per-unit effect estimates from repeated measurements
//! ([`shrinkage`] over [`panel`] data), then regress an outcome on them
//! ([`regression`]). The [`simulation`] engine wraps both steps in seeded,
//! reproducible experiments, and [`cli`] exposes everything as the
//! `shrinkreg` binary.

pub mod cli;
pub mod panel;
pub mod regression;
pub mod shrinkage;
pub mod simulation;
