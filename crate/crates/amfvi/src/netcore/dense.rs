use ndarray::{Array1, Array2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Activation;
use crate::{Error, Matrix, Result};

/// One dense layer: `y = activation(x W + b)` with `W` of shape `(in, out)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// A small feedforward network operating on row-major sample batches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
    input_dim: usize,
    output_dim: usize,
}

/// Per-parameter gradients mirroring the layer layout of a network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    /// In-place `self += other * scale`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        assert_eq!(self.layers.len(), other.layers.len(), "gradient layout mismatch");
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(scale, &b.weights);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.mapv_inplace(|v| v * factor);
            l.bias.mapv_inplace(|v| v * factor);
        }
    }
}

/// Layer inputs and outputs recorded by a forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the batch fed to layer `l`; `inputs[L]` is the output.
    inputs: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.inputs.last().expect("cache holds at least the input")
    }
}

impl DenseNet {
    /// Build a net with the given layer widths, e.g. `[2, 64, 64, 4]`.
    ///
    /// Hidden layers use `hidden_activation`, the final layer is linear.
    /// Weights are Xavier-uniform; when `zero_final` is set the last layer's
    /// weights and bias start at zero so the owning flow starts at the
    /// identity map.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        hidden_activation: Activation,
        zero_final: bool,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[w], dims[w + 1]);
            let last = w == dims.len() - 2;
            let mut weights = Array2::zeros((fan_in, fan_out));
            if !(last && zero_final) {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                weights.mapv_inplace(|_| dist.sample(rng));
            }
            layers.push(DenseLayer {
                weights,
                bias: Array1::zeros(fan_out),
                activation: if last {
                    Activation::Identity
                } else {
                    hidden_activation
                },
            });
        }
        DenseNet {
            input_dim: dims[0],
            output_dim: *dims.last().unwrap(),
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn check_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::contract(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Batched forward pass.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = h.dot(&layer.weights);
            h += &layer.bias;
            if layer.activation != Activation::Identity {
                h.mapv_inplace(|v| layer.activation.apply(v));
            }
        }
        Ok(h)
    }

    /// Forward pass that records per-layer inputs for a later backward pass.
    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        inputs.push(x.clone());
        for layer in &self.layers {
            let h = inputs.last().unwrap();
            let mut next = h.dot(&layer.weights);
            next += &layer.bias;
            if layer.activation != Activation::Identity {
                next.mapv_inplace(|v| layer.activation.apply(v));
            }
            inputs.push(next);
        }
        Ok(ForwardCache { inputs })
    }

    /// Exact gradient of `sum(upstream ⊙ forward(x))` w.r.t. every parameter,
    /// plus the gradient w.r.t. the input batch (needed to chain flows).
    pub fn backward(&self, x: &Matrix, upstream: &Matrix) -> Result<(Gradients, Matrix)> {
        let cache = self.forward_cached(x)?;
        self.backward_cached(&cache, upstream)
    }

    /// Backward pass reusing a recorded forward cache.
    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        upstream: &Matrix,
    ) -> Result<(Gradients, Matrix)> {
        let out = cache.output();
        if upstream.raw_dim() != out.raw_dim() {
            return Err(Error::contract(format!(
                "upstream shape {:?} does not match output shape {:?}",
                upstream.shape(),
                out.shape()
            )));
        }
        if upstream.iter().any(|v| !v.is_finite()) || cache.inputs[0].iter().any(|v| !v.is_finite())
        {
            return Err(Error::numerical(
                "backward received non-finite inputs".to_string(),
            ));
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let layer_out = &cache.inputs[l + 1];
            if layer.activation != Activation::Identity {
                ndarray::Zip::from(&mut delta).and(layer_out).for_each(|d, &y| {
                    *d *= layer.activation.grad_from_output(y);
                });
            }
            let layer_in = &cache.inputs[l];
            let d_weights = layer_in.t().dot(&delta);
            let d_bias = delta.sum_axis(Axis(0));
            grads.push(LayerGrad {
                weights: d_weights,
                bias: d_bias,
            });
            delta = delta.dot(&layer.weights.t());
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.5..1.5))
    }

    #[test]
    fn zero_net_maps_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = DenseNet::new(&[3, 4, 2], Activation::Identity, false, &mut rng);
        for l in net.layers_mut() {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        let x = random_input(5, 3, &mut rng);
        let y = net.forward(&x).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_single_layer_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = DenseNet::new(&[3, 3], Activation::Identity, false, &mut rng);
        net.layers_mut()[0].weights.assign(&Array2::eye(3));
        net.layers_mut()[0].bias.fill(0.0);
        let x = random_input(4, 3, &mut rng);
        let y = net.forward(&x).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dimension_mismatch_is_a_contract_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNet::new(&[3, 2], Activation::Tanh, false, &mut rng);
        let x = random_input(4, 2, &mut rng);
        assert!(matches!(net.forward(&x), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(&[2, 8, 2], Activation::Tanh, false, &mut rng);
        let x = random_input(6, 2, &mut rng);
        let upstream = Array2::zeros((6, 2));
        let (grads, d_input) = net.backward(&x, &upstream).unwrap();
        assert!(grads
            .layers
            .iter()
            .all(|l| l.weights.iter().all(|&v| v == 0.0) && l.bias.iter().all(|&v| v == 0.0)));
        assert!(d_input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::new(&[3, 2], Activation::Identity, false, &mut rng);
        let x = random_input(1, 3, &mut rng);
        let upstream = random_input(1, 2, &mut rng);
        let (grads, _) = net.backward(&x, &upstream).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let expect = x[[0, i]] * upstream[[0, j]];
                assert!((grads.layers[0].weights[[i, j]] - expect).abs() < 1e-12);
            }
        }
    }

    /// Central finite differences on sum(upstream ⊙ forward) for every
    /// parameter of a 2-layer tanh net.
    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = DenseNet::new(&[2, 6, 3], Activation::Tanh, false, &mut rng);
        let x = random_input(4, 2, &mut rng);
        let upstream = random_input(4, 3, &mut rng);
        let (grads, d_input) = net.backward(&x, &upstream).unwrap();

        let objective = |net: &DenseNet, x: &Matrix| -> f64 {
            (net.forward(x).unwrap() * upstream.clone()).sum()
        };

        let h = 1e-5;
        for l in 0..net.layers().len() {
            let shape = net.layers()[l].weights.raw_dim();
            for i in 0..shape[0] {
                for j in 0..shape[1] {
                    let orig = net.layers()[l].weights[[i, j]];
                    net.layers_mut()[l].weights[[i, j]] = orig + h;
                    let plus = objective(&net, &x);
                    net.layers_mut()[l].weights[[i, j]] = orig - h;
                    let minus = objective(&net, &x);
                    net.layers_mut()[l].weights[[i, j]] = orig;
                    let numeric = (plus - minus) / (2.0 * h);
                    let analytic = grads.layers[l].weights[[i, j]];
                    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        (analytic - numeric).abs() / denom < 1e-4,
                        "layer {l} W[{i},{j}]: analytic {analytic} numeric {numeric}"
                    );
                }
            }
            for j in 0..net.layers()[l].bias.len() {
                let orig = net.layers()[l].bias[j];
                net.layers_mut()[l].bias[j] = orig + h;
                let plus = objective(&net, &x);
                net.layers_mut()[l].bias[j] = orig - h;
                let minus = objective(&net, &x);
                net.layers_mut()[l].bias[j] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = grads.layers[l].bias[j];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!((analytic - numeric).abs() / denom < 1e-4);
            }
        }

        // Input gradient against finite differences as well.
        let mut x_pert = x.clone();
        for r in 0..x.nrows() {
            for c in 0..x.ncols() {
                let orig = x_pert[[r, c]];
                x_pert[[r, c]] = orig + h;
                let plus = objective(&net, &x_pert);
                x_pert[[r, c]] = orig - h;
                let minus = objective(&net, &x_pert);
                x_pert[[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = d_input[[r, c]];
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                assert!((analytic - numeric).abs() / denom < 1e-4);
            }
        }
    }

    #[test]
    fn non_finite_input_is_a_numerical_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = DenseNet::new(&[2, 4, 2], Activation::Tanh, false, &mut rng);
        let mut x = random_input(3, 2, &mut rng);
        x[[1, 0]] = f64::NAN;
        let upstream = Array2::ones((3, 2));
        assert!(matches!(
            net.backward(&x, &upstream),
            Err(Error::Numerical(_))
        ));
    }
}
