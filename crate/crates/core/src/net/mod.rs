//! Fully-connected network engine.

pub mod activation;
mod loss;
mod model;
mod network;
mod spec;

pub use activation::{
    activation_eval, activation_grad, register_activation, Activation, ActivationConfig,
    ResolvedActivation,
};
pub use loss::softmax_cross_entropy;
pub use model::{exact_jacobian, BatchJacobian, Linearization, Model, JACOBIAN_CAPACITY};
pub use network::{
    argmax_columns, FlatMatrix, ForwardTrace, Gradients, Network, NetworkFile,
    DEFAULT_BN_EPSILON, NETWORK_FORMAT_VERSION,
};
pub use spec::{ArchitectureSpec, LayerSpec, Normalization, SkipConfig, SkipStart};
