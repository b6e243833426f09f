//! Dense numeric kernel: tensors, a gradient tape, parameter storage with
//! SGD and checkpointing, and finite-difference gradient checking.

mod gradcheck;
mod params;
mod tape;
mod tensor;

use rand::Rng;

pub use gradcheck::{
    finite_diff_check, finite_diff_check_with, GradCheckOptions, GradCheckReport, REL_ERROR_FLOOR,
};
pub use params::{clip_global_norm, sgd_step, InitStd, ParamId, ParameterStore, CHECKPOINT_MAGIC};
pub use tape::{Tape, Var};
pub use tensor::{affine, cross_entropy, relu, softmax, Tensor, PROB_FLOOR};

pub(crate) use tensor::sigmoid;

/// Inverted-dropout keep mask: entries are `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}
