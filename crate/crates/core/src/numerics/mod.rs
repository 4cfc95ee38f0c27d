// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense linear algebra, loss gradients, optimizers and seeded randomness.

mod matrix;
mod ops;
mod optim;
mod rng;

pub use matrix::{dot, Matrix};
pub(crate) use ops::topk_mask_in_place;
pub use ops::{softmax_cross_entropy, softmax_rows, topk_indices, topk_mask};
pub use optim::{OptimizerKind, OptimizerState};
pub use rng::{derive_seed, Rng};
