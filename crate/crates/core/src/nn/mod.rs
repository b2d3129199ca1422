//! Minimal f64 tensor kernel: reverse-mode differentiation, transformer
//! blocks, Adam, gradient checking and checkpoints.

mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;
mod train;
mod transformer;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader, TensorEntry, MAGIC,
};
pub use gradcheck::{compare_gradients, gradient_check, relative_error, GradCheckReport, SAMPLES_PER_TENSOR};
pub use graph::{Graph, Var};
pub use optim::{AdamHyper, AdamState, StepInfo};
pub use params::{Gradients, Init, ParameterSet};
pub use tensor::{softmax_rows, Tensor};
pub use train::{example_rng, train_loop, TrainConfig, TrainReport};
pub use transformer::{sinusoidal_positions, ModelConfig, Transformer};

#[cfg(test)]
mod tests;
