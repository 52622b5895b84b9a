//! Probabilistic transient stability assessment by subset simulation.
//!
//! This crate holds the computational kernel and nothing else: no files, no
//! threads, no global state. It builds on `alloc` only, so it runs anywhere a
//! heap exists.
//!
//! The pipeline, bottom to top:
//!
//! * [`grid_model`] assembles admittance matrices, solves the pre-fault power
//!   flow and reduces the network to generator internal nodes.
//! * [`transient_sim`] integrates the classical swing equations through the
//!   pre-fault, fault-on and post-fault stages.
//! * [`stability_margin`] bisects for the critical clearing time and exposes
//!   the margin `CCT - FCT` (in cycles) as a [`LimitState`].
//! * [`uncertainty`] maps independent standard-normal coordinates to the
//!   physical load and wind inputs through a Gaussian copula.
//! * [`rare_event`] estimates `P(margin < 0)` by subset simulation or direct
//!   Monte Carlo.
//! * [`sensitivity`] turns the retained subset-simulation samples into total
//!   variation distance indices and runs the load compensation test.
//!
//! Heavy loops accept an [`Executor`]; the default [`Sequential`] executor
//! runs in place, and the std companion crate provides a thread pool. Results
//! never depend on the executor.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

mod error;
pub mod exec;
pub mod grid_model;
pub mod limit_state;
pub mod linalg;
pub mod normal;
pub mod rare_event;
pub mod rng;
pub mod sensitivity;
pub mod stability_margin;
pub mod transient_sim;
pub mod uncertainty;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use limit_state::LimitState;
