//! Masked autoregressive flow: a stack of masked dense nets, each emitting
//! per-dimension location and log-scale heads under an autoregressive
//! ordering that reverses between consecutive layers.
//!
//! Forward (data to base): `u_i = (z_i - mu_i(z_<i)) * exp(-s_i(z_<i))`,
//! per-row log-det `-sum_i s_i`. The inverse runs the recursion one rank at
//! a time, so it costs `dim` network passes per layer.

use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SCALE_CLAMP;
use crate::netcore::{ForwardCache, Gradients, MaskedDenseNet};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MafLayer {
    net: MaskedDenseNet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MafStack {
    layers: Vec<MafLayer>,
    dim: usize,
}

/// Intermediates of one layer's forward pass, consumed by the backward pass.
pub(crate) struct MafLayerCache {
    net_cache: ForwardCache,
    u: Matrix,
    s_clamped: Array2<f64>,
}

impl MafLayer {
    /// Split the net output into `(mu, s_raw)` head blocks.
    fn heads(&self, out: &Matrix) -> (Matrix, Matrix) {
        let d = self.net.dim();
        (
            out.slice(s![.., 0..d]).to_owned(),
            out.slice(s![.., d..2 * d]).to_owned(),
        )
    }

    fn forward(&self, z: &Matrix) -> (Matrix, Vec<f64>, MafLayerCache) {
        let net_cache = self
            .net
            .forward_cached(z)
            .expect("layer dims are fixed at construction");
        let (mu, s_raw) = self.heads(net_cache.output());
        let s_clamped = s_raw.mapv(|v| v.clamp(-SCALE_CLAMP, SCALE_CLAMP));
        let mut u = z - &mu;
        ndarray::Zip::from(&mut u).and(&s_clamped).for_each(|val, &sc| {
            *val *= (-sc).exp();
        });
        let log_det: Vec<f64> = s_clamped
            .rows()
            .into_iter()
            .map(|row| -row.sum())
            .collect();
        let cache = MafLayerCache {
            net_cache,
            u: u.clone(),
            s_clamped,
        };
        (u, log_det, cache)
    }

    /// Inverse recursion: fill dimensions rank by rank.
    fn inverse(&self, u: &Matrix) -> Matrix {
        let d = self.net.dim();
        let order = self.net.order().to_vec();
        let mut z = Array2::zeros(u.raw_dim());
        for rank in 1..=d {
            let out = self
                .net
                .forward(&z)
                .expect("layer dims are fixed at construction");
            for i in 0..d {
                if order[i] != rank {
                    continue;
                }
                for r in 0..u.nrows() {
                    let mu = out[[r, i]];
                    let sc = out[[r, d + i]].clamp(-SCALE_CLAMP, SCALE_CLAMP);
                    z[[r, i]] = mu + sc.exp() * u[[r, i]];
                }
            }
        }
        z
    }

    /// Gradients of `sum_r coeff_r * log q`-style objectives: `d_u` is the
    /// upstream gradient on this layer's output and `coeff` the per-row
    /// weight on this layer's log-det term.
    fn backward(
        &self,
        cache: &MafLayerCache,
        d_u: &Matrix,
        coeff: &[f64],
    ) -> (Gradients, Matrix) {
        let d = self.net.dim();
        let (_, s_raw) = self.heads(cache.net_cache.output());
        let exp_neg_s = cache.s_clamped.mapv(|v| (-v).exp());

        let d_z_direct = d_u * &exp_neg_s;
        let d_mu = -(d_u * &exp_neg_s);
        let mut d_s = -(d_u * &cache.u);
        for (r, mut row) in d_s.axis_iter_mut(Axis(0)).enumerate() {
            row.mapv_inplace(|v| v - coeff[r]);
        }
        // Clamped outputs stop gradient.
        ndarray::Zip::from(&mut d_s).and(&s_raw).for_each(|g, &raw| {
            if raw.abs() > SCALE_CLAMP {
                *g = 0.0;
            }
        });

        let mut upstream = Array2::zeros((d_u.nrows(), 2 * d));
        upstream.slice_mut(s![.., 0..d]).assign(&d_mu);
        upstream.slice_mut(s![.., d..2 * d]).assign(&d_s);

        let (grads, d_z_net) = self
            .net
            .backward_cached(&cache.net_cache, &upstream)
            .expect("cache shapes match by construction");
        (grads, d_z_direct + d_z_net)
    }
}

impl MafStack {
    /// `n_layers` masked layers with the autoregressive ordering reversed
    /// between consecutive layers. Final net layers start at zero so the
    /// stack begins as the identity map.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        n_layers: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> MafStack {
        let forward_order: Vec<usize> = (1..=dim).collect();
        let reverse_order: Vec<usize> = (1..=dim).rev().collect();
        let layers = (0..n_layers)
            .map(|l| {
                let order = if l % 2 == 0 {
                    forward_order.clone()
                } else {
                    reverse_order.clone()
                };
                MafLayer {
                    net: MaskedDenseNet::new(dim, hidden, order, true, rng),
                }
            })
            .collect();
        MafStack { layers, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Autoregressive order of layer `l`.
    pub fn layer_order(&self, l: usize) -> &[usize] {
        self.layers[l].net.order()
    }

    /// Single-layer transform, exposed for triangularity checks.
    pub fn layer_forward(&self, l: usize, z: &Matrix) -> (Matrix, Vec<f64>) {
        let (u, log_det, _) = self.layers[l].forward(z);
        (u, log_det)
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
                    "non-finite intermediate in maf layer {idx}"
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

    pub(crate) fn forward_train(&self, z: &Matrix) -> (Matrix, Vec<f64>, Vec<MafLayerCache>) {
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

    /// Backward through the whole stack; returns one gradient set per layer
    /// (aligned with layer order) and the gradient w.r.t. the input batch.
    pub(crate) fn backward_train(
        &self,
        caches: &[MafLayerCache],
        d_output: &Matrix,
        coeff: &[f64],
    ) -> (Vec<Gradients>, Matrix) {
        let mut grads = vec![None; self.layers.len()];
        let mut d_h = d_output.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let (g, d_in) = layer.backward(&caches[idx], &d_h, coeff);
            grads[idx] = Some(g);
            d_h = d_in;
        }
        (grads.into_iter().map(|g| g.unwrap()).collect(), d_h)
    }

    pub(crate) fn nets_mut(&mut self) -> Vec<&mut MaskedDenseNet> {
        self.layers.iter_mut().map(|l| &mut l.net).collect()
    }

    pub fn check_finite(&self) -> bool {
        self.layers.iter().all(|l| l.net.net().check_finite())
    }
}
