//! CRLB-optimal two-beam tracking of a time-varying angle of departure in a
//! millimeter-wave link.
//!
//! The modules build on each other bottom-up: [`array_geometry`] (steering
//! vectors and the codebook), [`channel`] (mobility and measurement
//! models), [`estimation`] (grid ML), [`crlb`] (closed-form bound),
//! [`beam_select`] (pair selection and lookup tables) and [`sim_harness`]
//! (closed-loop Monte-Carlo comparisons against beam cycling).

pub mod array_geometry;
pub mod beam_select;
pub mod channel;
pub mod crlb;
pub mod error;
pub mod estimation;
pub mod sim_harness;

pub use error::{Error, Result};
