//! Numerical core shared by the reward model and the policy: a dense MLP,
//! the Adam optimizer, seeded random streams and gradient verification.

pub mod adam;
pub mod gradcheck;
pub mod mlp;
pub mod rng;

pub use adam::AdamState;
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use mlp::{Activation, LayerShape, Mlp, Workspace};
pub use rng::{RngStream, StreamId};

/// Hidden width used by both the reward network and the policy networks.
pub const HIDDEN_UNITS: usize = 64;

/// Layer sizes `[input, 64, 64, output]`.
pub fn default_sizes(input: usize, output: usize) -> [usize; 4] {
    [input, HIDDEN_UNITS, HIDDEN_UNITS, output]
}
