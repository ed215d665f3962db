//! Stability-certifiable gated recurrent networks and saturated control
//! loops in a standard operator form.
//!
//! The crate provides:
//! - [`snof`]: the operator form itself — evaluation, well-posedness,
//!   sigmoid loop transformation, star-product composition, JSON interchange.
//! - [`rnn`]: GRU and gated-recurrent cells, exact operator exports, BPTT
//!   training, and a gating-nonconservativeness analyzer.
//! - [`plant_loop`]: ZOH discretization, min–max scalers, saturated PI
//!   controllers, and closed-loop assembly with a virtual sensor.
//! - [`certify`]: equilibrium shifting, Lyapunov/LMI certificate assembly,
//!   SDP feasibility, and a simulation-based soundness harness.
//! - [`sim`]: time-domain simulation and step-response metrics.
//! - [`dataset`]: run-to-failure windowing and synthetic sequence tasks.

pub mod certify;
pub mod dataset;
pub mod error;
pub mod expm;
pub mod plant_loop;
pub mod quad;
pub mod rnn;
pub mod sdp;
pub mod sim;
pub mod snof;

pub use error::{Error, Result};
