//! Independent oracles, finite-difference checks and the self-test suites
//! built from them.

pub mod compose;
mod composite;
pub mod fd;
pub mod oracle;
pub mod probe;
mod suite;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::tensor::{Scalar, Tensor};

pub use suite::{gradient_suite, kernel_oracle_suite, CheckRow, SuiteReport};

/// Uniform random tensor in `[lo, hi)`.
pub fn random_tensor<T: Scalar>(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let dist = Uniform::new(lo, hi).expect("lo < hi");
    Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng))).expect("valid shape")
}
