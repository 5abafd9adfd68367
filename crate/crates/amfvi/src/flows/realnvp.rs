//! Affine coupling flow: each layer passes one block of coordinates through
//! unchanged and affinely transforms the other, using scale and translation
//! nets fed by the pass-through block. Layers alternate which block is
//! transformed; in 2D the partition is one coordinate against the other.
//!
//! Forward (data to base): `u_B = z_B * exp(s(z_A)) + t(z_A)` with per-row
//! log-det `sum s(z_A)`.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SCALE_CLAMP;
use crate::netcore::{DenseNet, ForwardCache, Gradients};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CouplingLayer {
    /// Indices of pass-through coordinates (inputs to the nets).
    pass: Vec<usize>,
    /// Indices of transformed coordinates.
    transformed: Vec<usize>,
    scale_net: DenseNet,
    translation_net: DenseNet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingStack {
    layers: Vec<CouplingLayer>,
    dim: usize,
}

pub(crate) struct CouplingLayerCache {
    x_trans: Matrix,
    scale_cache: ForwardCache,
    translation_cache: ForwardCache,
    s_clamped: Array2<f64>,
}

fn gather(z: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Array2::zeros((z.nrows(), idx.len()));
    for (k, &i) in idx.iter().enumerate() {
        out.column_mut(k).assign(&z.column(i));
    }
    out
}

fn scatter(target: &mut Matrix, idx: &[usize], values: &Matrix) {
    for (k, &i) in idx.iter().enumerate() {
        target.column_mut(i).assign(&values.column(k));
    }
}

impl CouplingLayer {
    fn forward(&self, z: &Matrix) -> (Matrix, Vec<f64>, CouplingLayerCache) {
        let x_pass = gather(z, &self.pass);
        let x_trans = gather(z, &self.transformed);
        let scale_cache = self
            .scale_net
            .forward_cached(&x_pass)
            .expect("layer dims fixed at construction");
        let translation_cache = self
            .translation_net
            .forward_cached(&x_pass)
            .expect("layer dims fixed at construction");
        let s_clamped = scale_cache
            .output()
            .mapv(|v| v.clamp(-SCALE_CLAMP, SCALE_CLAMP));
        let u_trans = &x_trans * &s_clamped.mapv(f64::exp) + translation_cache.output();

        let mut u = z.clone();
        scatter(&mut u, &self.transformed, &u_trans);
        let log_det: Vec<f64> = s_clamped.rows().into_iter().map(|r| r.sum()).collect();
        let cache = CouplingLayerCache {
            x_trans,
            scale_cache,
            translation_cache,
            s_clamped,
        };
        (u, log_det, cache)
    }

    fn inverse(&self, u: &Matrix) -> Matrix {
        let u_pass = gather(u, &self.pass);
        let u_trans = gather(u, &self.transformed);
        let s = self
            .scale_net
            .forward(&u_pass)
            .expect("layer dims fixed at construction")
            .mapv(|v| v.clamp(-SCALE_CLAMP, SCALE_CLAMP));
        let t = self
            .translation_net
            .forward(&u_pass)
            .expect("layer dims fixed at construction");
        let x_trans = (&u_trans - &t) * s.mapv(|v| (-v).exp());
        let mut z = u.clone();
        scatter(&mut z, &self.transformed, &x_trans);
        z
    }

    /// Returns `(scale grads, translation grads, d_input)`.
    fn backward(
        &self,
        cache: &CouplingLayerCache,
        d_u: &Matrix,
        coeff: &[f64],
    ) -> (Gradients, Gradients, Matrix) {
        let d_u_pass = gather(d_u, &self.pass);
        let d_u_trans = gather(d_u, &self.transformed);
        let exp_s = cache.s_clamped.mapv(f64::exp);

        let d_x_trans = &d_u_trans * &exp_s;
        let mut d_s = &d_u_trans * &cache.x_trans * &exp_s;
        for (r, mut row) in d_s.axis_iter_mut(Axis(0)).enumerate() {
            row.mapv_inplace(|v| v + coeff[r]);
        }
        ndarray::Zip::from(&mut d_s)
            .and(cache.scale_cache.output())
            .for_each(|g, &raw| {
                if raw.abs() > SCALE_CLAMP {
                    *g = 0.0;
                }
            });
        let d_t = d_u_trans;

        let (scale_grads, d_pass_s) = self
            .scale_net
            .backward_cached(&cache.scale_cache, &d_s)
            .expect("cache shapes match");
        let (translation_grads, d_pass_t) = self
            .translation_net
            .backward_cached(&cache.translation_cache, &d_t)
            .expect("cache shapes match");

        let d_x_pass = d_u_pass + d_pass_s + d_pass_t;
        let mut d_z = Array2::zeros((d_u.nrows(), self.pass.len() + self.transformed.len()));
        scatter(&mut d_z, &self.pass, &d_x_pass);
        scatter(&mut d_z, &self.transformed, &d_x_trans);
        (scale_grads, translation_grads, d_z)
    }
}

impl CouplingStack {
    /// `n_layers` coupling layers alternating the transformed block. For
    /// `dim = 2` the partition alternates between the two coordinates; for
    /// higher dimensions it alternates even/odd index blocks. Scale and
    /// translation nets start at zero so the stack begins as the identity.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        n_layers: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> CouplingStack {
        let evens: Vec<usize> = (0..dim).filter(|i| i % 2 == 0).collect();
        let odds: Vec<usize> = (0..dim).filter(|i| i % 2 == 1).collect();
        let layers = (0..n_layers)
            .map(|l| {
                let (pass, transformed) = if l % 2 == 0 {
                    (evens.clone(), odds.clone())
                } else {
                    (odds.clone(), evens.clone())
                };
                let mut dims = Vec::with_capacity(hidden.len() + 2);
                dims.push(pass.len());
                dims.extend_from_slice(hidden);
                dims.push(transformed.len());
                CouplingLayer {
                    scale_net: DenseNet::new(&dims, crate::netcore::Activation::Tanh, true, rng),
                    translation_net: DenseNet::new(
                        &dims,
                        crate::netcore::Activation::Tanh,
                        true,
                        rng,
                    ),
                    pass,
                    transformed,
                }
            })
            .collect();
        CouplingStack { layers, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn forward_raw(&self, z: &Matrix) -> (Matrix, Vec<f64>) {
        let mut h = z.clone();
        let mut log_det = vec![0.0; z.nrows()];
        for layer in &self.layers {
            let (next, ld, _) = layer.forward(&h);
            h = next;
            for (acc, v) in log_det.iter_mut().zip(ld) {
                *acc += v;
            }
        }
        (h, log_det)
    }

    pub fn forward_checked(&self, z: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        let mut h = z.clone();
        let mut log_det = vec![0.0; z.nrows()];
        for (idx, layer) in self.layers.iter().enumerate() {
            let (next, ld, _) = layer.forward(&h);
            if next.iter().any(|v| !v.is_finite()) || ld.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical(format!(
                    "non-finite intermediate in coupling layer {idx}"
                )));
            }
            h = next;
            for (acc, v) in log_det.iter_mut().zip(ld) {
                *acc += v;
            }
        }
        Ok((h, log_det))
    }

    pub fn inverse(&self, u: &Matrix) -> Matrix {
        let mut h = u.clone();
        for layer in self.layers.iter().rev() {
            h = layer.inverse(&h);
        }
        h
    }

    pub(crate) fn forward_train(
        &self,
        z: &Matrix,
    ) -> (Matrix, Vec<f64>, Vec<CouplingLayerCache>) {
        let mut h = z.clone();
        let mut log_det = vec![0.0; z.nrows()];
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, ld, cache) = layer.forward(&h);
            h = next;
            for (acc, v) in log_det.iter_mut().zip(ld) {
                *acc += v;
            }
            caches.push(cache);
        }
        (h, log_det, caches)
    }

    /// Gradients per net in `[scale_0, translation_0, scale_1, ...]` order.
    pub(crate) fn backward_train(
        &self,
        caches: &[CouplingLayerCache],
        d_output: &Matrix,
        coeff: &[f64],
    ) -> (Vec<Gradients>, Matrix) {
        let mut grads: Vec<Option<Gradients>> = vec![None; 2 * self.layers.len()];
        let mut d_h = d_output.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let (gs, gt, d_in) = layer.backward(&caches[idx], &d_h, coeff);
            grads[2 * idx] = Some(gs);
            grads[2 * idx + 1] = Some(gt);
            d_h = d_in;
        }
        (grads.into_iter().map(|g| g.unwrap()).collect(), d_h)
    }

    /// Mutable nets in the same order as [`CouplingStack::backward_train`].
    pub(crate) fn nets_mut(&mut self) -> Vec<&mut DenseNet> {
        let mut nets = Vec::with_capacity(2 * self.layers.len());
        for layer in &mut self.layers {
            nets.push(&mut layer.scale_net);
            nets.push(&mut layer.translation_net);
        }
        nets
    }

    pub fn check_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.scale_net.check_finite() && l.translation_net.check_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_stack(seed: u64, n_layers: usize) -> CouplingStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stack = CouplingStack::new(2, n_layers, &[8, 8], &mut rng);
        for net in stack.nets_mut() {
            for l in net.layers_mut() {
                l.weights.mapv_inplace(|w| w + 0.1 * rng.gen_range(-1.0..1.0));
                l.bias.mapv_inplace(|b| b + 0.1 * rng.gen_range(-1.0..1.0));
            }
        }
        stack
    }

    #[test]
    fn round_trip_recovers_input() {
        let stack = random_stack(1, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Array2::from_shape_fn((300, 2), |_| rng.gen_range(-2.5..2.5));
        let (u, _) = stack.forward_raw(&z);
        let back = stack.inverse(&u);
        let max_err = z
            .iter()
            .zip(back.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-9, "round trip error {max_err}");
    }

    #[test]
    fn log_det_matches_numerical_jacobian() {
        let stack = random_stack(4, 6);
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let z = Array2::from_shape_fn((1, 2), |_| rng.gen_range(-2.0..2.0));
            let (_, log_det) = stack.forward_raw(&z);
            let mut jac = [[0.0f64; 2]; 2];
            for j in 0..2 {
                let mut plus = z.clone();
                plus[[0, j]] += h;
                let mut minus = z.clone();
                minus[[0, j]] -= h;
                let (up, _) = stack.forward_raw(&plus);
                let (um, _) = stack.forward_raw(&minus);
                for i in 0..2 {
                    jac[i][j] = (up[[0, i]] - um[[0, i]]) / (2.0 * h);
                }
            }
            let det = (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]).abs();
            let rel = (log_det[0] - det.ln()).abs() / det.ln().abs().max(1e-3);
            assert!(rel < 1e-3);
        }
    }

    #[test]
    fn training_gradient_matches_finite_differences() {
        let mut stack = random_stack(7, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = Array2::from_shape_fn((5, 2), |_| rng.gen_range(-1.5..1.5));

        let objective = |stack: &CouplingStack, z: &Matrix| -> f64 {
            let (u, log_det) = stack.forward_raw(z);
            let quad: f64 = u.iter().map(|v| -0.5 * v * v).sum();
            quad + log_det.iter().sum::<f64>()
        };

        let (u, _, caches) = stack.forward_train(&z);
        let d_u = u.mapv(|v| -v);
        let coeff = vec![1.0; z.nrows()];
        let (grads, _) = stack.backward_train(&caches, &d_u, &coeff);

        let h = 1e-6;
        for layer_idx in 0..stack.layers.len() {
            for which in 0..2 {
                let g = &grads[2 * layer_idx + which];
                for dense_idx in 0..g.layers.len() {
                    let shape = g.layers[dense_idx].weights.raw_dim();
                    fn net_of(
                        stack: &mut CouplingStack,
                        layer_idx: usize,
                        which: usize,
                    ) -> &mut DenseNet {
                        if which == 0 {
                            &mut stack.layers[layer_idx].scale_net
                        } else {
                            &mut stack.layers[layer_idx].translation_net
                        }
                    }
                    for i in 0..shape[0] {
                        for j in 0..shape[1] {
                            let analytic = g.layers[dense_idx].weights[[i, j]];
                            let orig =
                                net_of(&mut stack, layer_idx, which).layers()[dense_idx].weights
                                    [[i, j]];
                            net_of(&mut stack, layer_idx, which).layers_mut()[dense_idx].weights
                                [[i, j]] = orig + h;
                            let plus = objective(&stack, &z);
                            net_of(&mut stack, layer_idx, which).layers_mut()[dense_idx].weights
                                [[i, j]] = orig - h;
                            let minus = objective(&stack, &z);
                            net_of(&mut stack, layer_idx, which).layers_mut()[dense_idx].weights
                                [[i, j]] = orig;
                            let numeric = (plus - minus) / (2.0 * h);
                            let denom = analytic.abs().max(numeric.abs()).max(1e-4);
                            assert!(
                                (analytic - numeric).abs() / denom < 1e-4,
                                "layer {layer_idx} net {which} dense {dense_idx} W[{i},{j}]: {analytic} vs {numeric}"
                            );
                        }
                    }
                }
            }
        }
    }
}
