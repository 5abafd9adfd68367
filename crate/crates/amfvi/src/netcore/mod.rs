//! Minimal differentiable-computation layer for small feedforward and masked
//! feedforward networks, with an adaptive first-order optimizer.
//!
//! Just enough machinery to train the two parametric flows on 2D data:
//! batched forward passes, exact analytic backward passes (parameter and
//! input gradients), autoregressive weight masks, and Adam.

mod activation;
mod adam;
mod dense;
mod made;

pub use activation::Activation;
pub use adam::{AdamConfig, AdamState};
pub use dense::{DenseLayer, DenseNet, ForwardCache, Gradients, LayerGrad};
pub use made::MaskedDenseNet;
