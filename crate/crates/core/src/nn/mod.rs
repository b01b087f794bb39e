//! Toy models, exact parameter gradients, finite-difference input Jacobians of
//! those gradients, and dataset handling.

mod data;
mod model;

pub use data::{
    generate_synthetic_dataset, load_image_dataset, partition_indices, read_dataset_binary,
    write_dataset_binary, LabelRule, Partition, SyntheticPrior,
};
pub(crate) use data::read_header;
pub use model::{
    forward_loss, input_jacobian_of_gradient, param_gradient, scaled_step, Activation,
    Architecture, DataSample, Evaluation, GradientInputJacobian, GradientVector, Layer, LossKind,
    ModelSpec, ParameterVector, Target, ZooModel, DEFAULT_JACOBIAN_STEP,
};
