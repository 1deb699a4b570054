//! Simulation of backscatter surfaces that steer ambient RF energy toward a
//! receiver by choosing one load impedance per element.
//!
//! The crate is organised bottom-up: [`channel`] draws links and geometry,
//! [`loads`] describes the impedance sets, [`optimizer`] picks the best load
//! per element, [`estimation`] models imperfect channel knowledge, [`gen2`]
//! drives tags through EPC Gen2 commands, and [`harness`] runs the
//! Monte Carlo experiments behind the `ris-sim` binary.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod estimation;
pub mod gen2;
pub mod harness;
pub mod loads;
pub mod optimizer;
pub mod units;

pub use error::{Result, RisError};
