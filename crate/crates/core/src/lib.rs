//! Simulation and blinded analysis of a test for nonlinear quantum mechanics.
//!
//! Bit strings from several sources are combined under a sealed permutation,
//! turned into voltage readings, and analysed first blind and then per
//! source. A weighted line fit of low-level means against branch weight
//! yields the nonlinearity parameter and a confidence bound.
//!
//! ```
//! use everett::config::RunConfig;
//! use everett::pipeline::{simulate, unblind_fit};
//!
//! let mut cfg = RunConfig::paper(42, 1e-9);
//! cfg.analysis.mc_realizations = 100;
//! let sim = simulate(&cfg).unwrap();
//! let fit = unblind_fit(&sim.readings, &sim.key, &cfg).unwrap().fit;
//! assert!((fit.eps - 1e-9).abs() < 5.0 * fit.sigma_eps);
//! ```
//!
//! The guide under `book/` walks through every stage.

pub mod blinding;
pub mod model;
pub mod rng;
pub mod sources;
pub mod signal;
pub mod analysis;
pub mod config;
pub mod pipeline;
pub mod units;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/fidelity.md")]
    mod fidelity {}
    #[doc = include_str!("../../../book/src/sources.md")]
    mod sources {}
    #[doc = include_str!("../../../book/src/blinding.md")]
    mod blinding {}
    #[doc = include_str!("../../../book/src/signal.md")]
    mod signal {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
