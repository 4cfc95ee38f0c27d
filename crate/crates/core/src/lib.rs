// SPDX-License-Identifier: MIT OR Apache-2.0

//! Restoration-based audit of class-wise machine unlearning.
//!
//! The crate trains a layered classifier on a synthetic task, applies a set
//! of unlearning methods, fits TopK sparse autoencoders on intermediate
//! activations and then tries to steer the forgotten class back. If the
//! unlearned model recovers the class under steering, the information was
//! only suppressed; if nothing comes back, it was deleted.

pub mod audit;
pub mod container;
pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod sae;
pub mod unlearn;

pub use error::{AuditError, Result};
