//! Dense `f64` tensors, forward kernels with adjoints, and a reverse-mode tape.

pub mod ops;
pub mod tape;
mod tensor;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use ops::{ConvGeometry, QNorm};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {context} at flat index {index}")]
    NonFinite { context: String, index: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("variable {0} is not on the tape")]
    NotOnTape(usize),
}

/// Kaiming-uniform initialisation: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform(dims: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(dims.to_vec(), data).expect("dims match generated length")
}

/// Deterministic generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
