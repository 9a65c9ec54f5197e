//! Mixture-of-experts password modeling.
//!
//! Passwords are clustered on eight structural features, a base n-gram
//! expert is fine-tuned per cluster, and a distance-based sparse gate mixes
//! the experts while a password is generated (offline guessing) or while a
//! source password is edited into a target (online, targeted guessing).

// Parameter checks are written as `!(x > 0.0)` on purpose so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod clustering;
pub mod corpus;
pub mod distill;
pub mod error;
pub mod expert;
pub mod features;
pub mod gate;
pub mod offline;
pub mod online;
pub mod parallel;
pub mod prob;
pub mod psm;

pub use error::{MopeError, Result};
pub use parallel::Execution;
