//! Minimal reverse-mode automatic differentiation over dense `f64`
//! tensors: exactly the operations the curve operators and the network
//! need, a parameter store, a checkpoint container and a finite-difference
//! checker.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{BinaryKind, Graph, ReduceKind, UnaryKind, Var, COS_EPS, LEAKY_SLOPE};
pub use params::{
    bind_params, collect_grads, Activation, ConcatLinear, ConcatMlp, Ctx, Layer, Linear, MlpParams, MlpSpec, Norm, ParamId,
    ParamStore,
};
pub use tensor::Tensor;
