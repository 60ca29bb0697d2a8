//! Energy allocation for remote Kalman estimation over a fading, packet-dropping
//! channel with energy harvesting and imperfect acknowledgments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod belief;
pub mod dp;
pub mod error;
pub mod harness;
pub mod model;
pub mod stability;
pub mod structural;
pub mod subopt;

pub use belief::{Belief, CovGrid, GridBelief};
pub use error::{Error, Result};
pub use model::{Battery, DropoutChannel, FeedbackChannel, StochProcessSpec, SystemModel};
