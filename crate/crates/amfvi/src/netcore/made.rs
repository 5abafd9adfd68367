use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, DenseNet, ForwardCache, Gradients};
use crate::{Matrix, Result};

/// A dense net with fixed binary weight masks that enforce an autoregressive
/// ordering, plus per-dimension output heads for a location and a log-scale.
///
/// For an input of dimension `d` the output has `2d` columns: columns
/// `0..d` are the location heads, columns `d..2d` the log-scale heads.
/// Head `i` (either kind) depends only on inputs whose order is strictly
/// less than the order of dimension `i`.
///
/// Masked weights are held at exactly zero: the constructor zeroes them and
/// [`MaskedDenseNet::backward`] masks the gradients, so a moment-based
/// optimizer never moves them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskedDenseNet {
    net: DenseNet,
    masks: Vec<Array2<f64>>,
    order: Vec<usize>,
    dim: usize,
}

impl MaskedDenseNet {
    /// Build a MADE-style net for `dim` autoregressive dimensions.
    ///
    /// `order[i]` is the 1-based rank of input dimension `i`; hidden unit
    /// degrees cycle through `1..dim`, input-to-hidden and hidden-to-hidden
    /// connections require the target degree to be >= the source degree, and
    /// output connections require the head's rank to be strictly greater.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        hidden: &[usize],
        order: Vec<usize>,
        zero_final: bool,
        rng: &mut R,
    ) -> Self {
        assert!(dim >= 1, "need at least one dimension");
        assert_eq!(order.len(), dim, "order must cover every dimension");
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(dim);
        dims.extend_from_slice(hidden);
        dims.push(2 * dim);
        let mut net = DenseNet::new(&dims, Activation::Tanh, zero_final, rng);

        // Degree of every unit per layer boundary.
        let hidden_degree = |unit: usize| 1 + (unit % 1.max(dim - 1));
        let mut prev_degrees: Vec<usize> = order.clone();
        let mut masks = Vec::with_capacity(net.layers().len());
        let n_layers = net.layers().len();
        for (l, layer) in net.layers_mut().iter_mut().enumerate() {
            let last = l == n_layers - 1;
            let out_dim = layer.out_dim();
            let next_degrees: Vec<usize> = if last {
                (0..out_dim).map(|k| order[k % dim]).collect()
            } else {
                (0..out_dim).map(hidden_degree).collect()
            };
            let mask = Array2::from_shape_fn((layer.in_dim(), out_dim), |(j, k)| {
                let connected = if last {
                    next_degrees[k] > prev_degrees[j]
                } else {
                    next_degrees[k] >= prev_degrees[j]
                };
                if connected {
                    1.0
                } else {
                    0.0
                }
            });
            layer.weights.zip_mut_with(&mask, |w, &m| *w *= m);
            masks.push(mask);
            prev_degrees = next_degrees;
        }

        MaskedDenseNet {
            net,
            masks,
            order,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    /// The 0/1 connectivity mask of each weight matrix.
    pub fn masks(&self) -> &[Array2<f64>] {
        &self.masks
    }

    /// Re-zero masked weights (after deserialization or external edits).
    pub fn enforce_masks(&mut self) {
        for (layer, mask) in self.net.layers_mut().iter_mut().zip(&self.masks) {
            layer.weights.zip_mut_with(mask, |w, &m| *w *= m);
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.net.forward(x)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        self.net.forward_cached(x)
    }

    /// Backward pass with parameter gradients masked to the allowed pattern.
    pub fn backward(&self, x: &Matrix, upstream: &Matrix) -> Result<(Gradients, Matrix)> {
        let cache = self.net.forward_cached(x)?;
        self.backward_cached(&cache, upstream)
    }

    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        upstream: &Matrix,
    ) -> Result<(Gradients, Matrix)> {
        let (mut grads, d_input) = self.net.backward_cached(cache, upstream)?;
        for (g, mask) in grads.layers.iter_mut().zip(&self.masks) {
            g.weights.zip_mut_with(mask, |w, &m| *w *= m);
        }
        Ok((grads, d_input))
    }
}
