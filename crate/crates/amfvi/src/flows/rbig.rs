//! Rotation-based iterative Gaussianization: alternating per-dimension
//! monotone marginal maps (probit of the empirical CDF on quantile nodes)
//! and 2x2 orthogonal rotations from principal components.
//!
//! Marginal maps are piecewise linear between nodes with slope-matched
//! linear extrapolation beyond the node range; rotations contribute zero
//! log-det, so the per-row log-det is the sum of marginal log-slopes.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf_inv;

use crate::{Error, Matrix, Result};

/// Inverse maps accept base-space values this far beyond the node range
/// before clamping (and counting) them.
const INVERSE_GUARD: f64 = 10.0;

/// Monotone piecewise-linear map on strictly increasing node grids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalMap {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl MarginalMap {
    /// Fit from one data column: node positions are empirical quantiles at
    /// levels `(k + 0.5)/nodes`, node values the probit of those levels.
    ///
    /// Returns the map and whether the constant-marginal jitter fallback
    /// fired.
    fn fit(mut values: Vec<f64>, nodes: usize) -> (MarginalMap, bool) {
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite training data"));
        let n = values.len();
        let spread = values[n - 1] - values[0];
        let mut jittered = false;

        let mut xs = Vec::with_capacity(nodes);
        if spread < 1e-12 {
            // Zero-variance marginal: spread nodes over a tiny interval
            // around the constant so the map stays invertible.
            jittered = true;
            let c = values[0];
            for k in 0..nodes {
                xs.push(c - 1e-6 + 2e-6 * (k as f64 + 0.5) / nodes as f64);
            }
        } else {
            for k in 0..nodes {
                let p = (k as f64 + 0.5) / nodes as f64;
                let h = p * (n - 1) as f64;
                let lo = h.floor() as usize;
                let frac = h - lo as f64;
                let q = if lo + 1 < n {
                    values[lo] + frac * (values[lo + 1] - values[lo])
                } else {
                    values[n - 1]
                };
                let q = match xs.last() {
                    Some(&prev) if q <= prev => prev + 1e-9 * (1.0 + prev.abs()),
                    _ => q,
                };
                xs.push(q);
            }
        }

        let ys = (0..nodes)
            .map(|k| {
                let p = (k as f64 + 0.5) / nodes as f64;
                probit(p)
            })
            .collect();
        (MarginalMap { xs, ys }, jittered)
    }

    fn segment_for_x(&self, x: f64) -> usize {
        let k = self.xs.partition_point(|&node| node <= x);
        k.saturating_sub(1).min(self.xs.len() - 2)
    }

    fn segment_for_y(&self, y: f64) -> usize {
        let k = self.ys.partition_point(|&node| node <= y);
        k.saturating_sub(1).min(self.ys.len() - 2)
    }

    fn slope(&self, k: usize) -> f64 {
        (self.ys[k + 1] - self.ys[k]) / (self.xs[k + 1] - self.xs[k])
    }

    /// Map a value and return `(y, log slope)`.
    pub fn forward(&self, x: f64) -> (f64, f64) {
        if !x.is_finite() {
            return (f64::NAN, f64::NAN);
        }
        let k = self.segment_for_x(x);
        let slope = self.slope(k);
        (self.ys[k] + slope * (x - self.xs[k]), slope.ln())
    }

    /// Invert; clamps to the guarded range and reports whether it clamped.
    pub fn inverse(&self, y: f64) -> (f64, bool) {
        if !y.is_finite() {
            return (f64::NAN, false);
        }
        let lo = self.ys[0] - INVERSE_GUARD;
        let hi = self.ys[self.ys.len() - 1] + INVERSE_GUARD;
        let (y, clamped) = if y < lo {
            (lo, true)
        } else if y > hi {
            (hi, true)
        } else {
            (y, false)
        };
        let k = self.segment_for_y(y);
        let slope = self.slope(k);
        (self.xs[k] + (y - self.ys[k]) / slope, clamped)
    }

    pub fn nodes(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RbigLayer {
    maps: Vec<MarginalMap>,
    /// Proper rotation (det +1), rows are principal axes.
    rotation: [[f64; 2]; 2],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RbigStack {
    layers: Vec<RbigLayer>,
    dim: usize,
    jitter_warnings: u32,
    #[serde(skip)]
    clamp_events: AtomicU64,
}

impl Clone for RbigStack {
    fn clone(&self) -> Self {
        RbigStack {
            layers: self.layers.clone(),
            dim: self.dim,
            jitter_warnings: self.jitter_warnings,
            clamp_events: AtomicU64::new(self.clamp_events.load(Ordering::Relaxed)),
        }
    }
}

fn probit(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * erf_inv(2.0 * p - 1.0)
}

/// Principal axes of the (mean-centered) 2x2 covariance, as a proper
/// rotation with the dominant axis first.
fn pca_rotation(data: &Matrix) -> [[f64; 2]; 2] {
    let n = data.nrows() as f64;
    let mean0 = data.column(0).sum() / n;
    let mean1 = data.column(1).sum() / n;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for row in data.rows() {
        let dx = row[0] - mean0;
        let dy = row[1] - mean1;
        a += dx * dx;
        b += dx * dy;
        c += dy * dy;
    }
    a /= n;
    b /= n;
    c /= n;
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let (sin, cos) = theta.sin_cos();
    [[cos, sin], [-sin, cos]]
}

impl RbigStack {
    /// Fit `n_layers` Gaussianization layers on a copy of the training data.
    pub fn fit(train: &Matrix, n_layers: usize, nodes: usize) -> Result<RbigStack> {
        if train.nrows() < 100 {
            return Err(Error::config(format!(
                "rbig fit needs at least 100 rows, got {}",
                train.nrows()
            )));
        }
        if train.ncols() != 2 {
            return Err(Error::contract("rbig fit expects 2 columns".to_string()));
        }
        if nodes < 2 {
            return Err(Error::config("rbig needs at least 2 quantile nodes"));
        }
        let mut data = train.clone();
        let mut layers = Vec::with_capacity(n_layers);
        let mut jitter_warnings = 0u32;
        for _ in 0..n_layers {
            let mut maps = Vec::with_capacity(2);
            for j in 0..2 {
                let (map, jittered) = MarginalMap::fit(data.column(j).to_vec(), nodes);
                if jittered {
                    jitter_warnings += 1;
                }
                for r in 0..data.nrows() {
                    let (y, _) = map.forward(data[[r, j]]);
                    data[[r, j]] = y;
                }
                maps.push(map);
            }
            let rotation = pca_rotation(&data);
            for r in 0..data.nrows() {
                let x0 = data[[r, 0]];
                let x1 = data[[r, 1]];
                data[[r, 0]] = rotation[0][0] * x0 + rotation[0][1] * x1;
                data[[r, 1]] = rotation[1][0] * x0 + rotation[1][1] * x1;
            }
            layers.push(RbigLayer { maps, rotation });
        }
        Ok(RbigStack {
            layers,
            dim: 2,
            jitter_warnings,
            clamp_events: AtomicU64::new(0),
        })
    }

    /// An empty stack (`L = 0`): the identity map.
    pub fn identity() -> RbigStack {
        RbigStack {
            layers: Vec::new(),
            dim: 2,
            jitter_warnings: 0,
            clamp_events: AtomicU64::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn jitter_warnings(&self) -> u32 {
        self.jitter_warnings
    }

    /// Number of inverse evaluations that hit the extrapolation guard.
    pub fn clamp_warnings(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    pub fn rotations(&self) -> impl Iterator<Item = &[[f64; 2]; 2]> {
        self.layers.iter().map(|l| &l.rotation)
    }

    pub fn marginal_maps(&self) -> impl Iterator<Item = &MarginalMap> {
        self.layers.iter().flat_map(|l| l.maps.iter())
    }

    pub fn forward_raw(&self, z: &Matrix) -> (Matrix, Vec<f64>) {
        let mut h = z.clone();
        let mut log_det = vec![0.0; z.nrows()];
        for layer in &self.layers {
            for r in 0..h.nrows() {
                for j in 0..2 {
                    let (y, dlog) = layer.maps[j].forward(h[[r, j]]);
                    h[[r, j]] = y;
                    log_det[r] += dlog;
                }
                let x0 = h[[r, 0]];
                let x1 = h[[r, 1]];
                h[[r, 0]] = layer.rotation[0][0] * x0 + layer.rotation[0][1] * x1;
                h[[r, 1]] = layer.rotation[1][0] * x0 + layer.rotation[1][1] * x1;
            }
        }
        (h, log_det)
    }

    pub fn forward_checked(&self, z: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        let mut h = z.clone();
        let mut log_det = vec![0.0; z.nrows()];
        for (idx, layer) in self.layers.iter().enumerate() {
            for r in 0..h.nrows() {
                for j in 0..2 {
                    let (y, dlog) = layer.maps[j].forward(h[[r, j]]);
                    h[[r, j]] = y;
                    log_det[r] += dlog;
                }
                let x0 = h[[r, 0]];
                let x1 = h[[r, 1]];
                h[[r, 0]] = layer.rotation[0][0] * x0 + layer.rotation[0][1] * x1;
                h[[r, 1]] = layer.rotation[1][0] * x0 + layer.rotation[1][1] * x1;
            }
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::numerical(format!(
                    "non-finite intermediate in rbig layer {idx}"
                )));
            }
        }
        Ok((h, log_det))
    }

    pub fn inverse(&self, u: &Matrix) -> Matrix {
        let mut h = u.clone();
        let mut clamps = 0u64;
        for layer in self.layers.iter().rev() {
            for r in 0..h.nrows() {
                let y0 = h[[r, 0]];
                let y1 = h[[r, 1]];
                // Transposed rotation.
                let x0 = layer.rotation[0][0] * y0 + layer.rotation[1][0] * y1;
                let x1 = layer.rotation[0][1] * y0 + layer.rotation[1][1] * y1;
                let (z0, c0) = layer.maps[0].inverse(x0);
                let (z1, c1) = layer.maps[1].inverse(x1);
                clamps += c0 as u64 + c1 as u64;
                h[[r, 0]] = z0;
                h[[r, 1]] = z1;
            }
        }
        if clamps > 0 {
            self.clamp_events.fetch_add(clamps, Ordering::Relaxed);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{Split, TargetFamily};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn std_gaussian_data(n: usize, seed: u64) -> Matrix {
        TargetFamily::gaussian_mixture(
            "gauss_std",
            vec![([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], 1.0)],
        )
        .unwrap()
        .sample(n, seed, Split::Train)
        .unwrap()
        .samples
    }

    #[test]
    fn gaussian_input_gives_near_identity_maps() {
        let data = std_gaussian_data(20_000, 1);
        let stack = RbigStack::fit(&data, 1, 200).unwrap();
        let map = stack.marginal_maps().next().unwrap();
        let (xs, ys) = map.nodes();
        let mut max_dev = 0.0f64;
        for (&x, &y) in xs.iter().zip(ys) {
            if x.abs() <= 2.3 {
                max_dev = max_dev.max((y - x).abs());
            }
        }
        assert!(max_dev < 0.05, "max deviation {max_dev}");
    }

    #[test]
    fn empty_stack_is_identity() {
        let stack = RbigStack::identity();
        let z = ndarray::array![[0.5, -1.0], [3.0, 2.0]];
        let (u, log_det) = stack.forward_raw(&z);
        assert_eq!(u, z);
        assert!(log_det.iter().all(|&d| d == 0.0));
        assert_eq!(stack.inverse(&z), z);
    }

    #[test]
    fn rotations_are_orthogonal_and_proper() {
        let data = TargetFamily::rings()
            .sample(5_000, 2, Split::Train)
            .unwrap()
            .samples;
        let stack = RbigStack::fit(&data, 10, 100).unwrap();
        for r in stack.rotations() {
            let dot00 = r[0][0] * r[0][0] + r[0][1] * r[0][1];
            let dot11 = r[1][0] * r[1][0] + r[1][1] * r[1][1];
            let dot01 = r[0][0] * r[1][0] + r[0][1] * r[1][1];
            assert!((dot00 - 1.0).abs() < 1e-10);
            assert!((dot11 - 1.0).abs() < 1e-10);
            assert!(dot01.abs() < 1e-10);
            let det = r[0][0] * r[1][1] - r[0][1] * r[1][0];
            assert!((det - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn marginal_map_nodes_strictly_increase() {
        let data = TargetFamily::bimodal()
            .sample(3_000, 3, Split::Train)
            .unwrap()
            .samples;
        let stack = RbigStack::fit(&data, 8, 150).unwrap();
        for map in stack.marginal_maps() {
            let (xs, ys) = map.nodes();
            assert!(xs.windows(2).all(|w| w[1] > w[0]));
            assert!(ys.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn round_trip_within_guard_is_exact() {
        let data = TargetFamily::two_moons()
            .sample(4_000, 4, Split::Train)
            .unwrap()
            .samples;
        let stack = RbigStack::fit(&data, 12, 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = Array2::from_shape_fn((500, 2), |_| rng.gen_range(-3.0..3.0));
        let z = stack.inverse(&u);
        let (back, _) = stack.forward_raw(&z);
        let max_err = u
            .iter()
            .zip(back.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-9, "round trip error {max_err}");
        assert_eq!(stack.clamp_warnings(), 0);
    }

    #[test]
    fn far_out_inverse_clamps_with_warning() {
        let data = std_gaussian_data(1_000, 6);
        let stack = RbigStack::fit(&data, 1, 50).unwrap();
        let u = ndarray::array![[1e4, 0.0]];
        let _ = stack.inverse(&u);
        assert!(stack.clamp_warnings() > 0);
    }

    #[test]
    fn constant_marginal_triggers_jitter_fallback() {
        let mut data = std_gaussian_data(500, 7);
        data.column_mut(1).fill(3.25);
        let stack = RbigStack::fit(&data, 1, 50).unwrap();
        assert!(stack.jitter_warnings() > 0);
    }

    #[test]
    fn fitted_on_rings_training_data_gaussianizes() {
        let data = TargetFamily::rings()
            .sample(20_000, 8, Split::Train)
            .unwrap()
            .samples;
        let stack = RbigStack::fit(&data, 30, 200).unwrap();
        let (t, _) = stack.forward_raw(&data);
        for j in 0..2 {
            let col = t.column(j);
            let n = col.len() as f64;
            let mean = col.sum() / n;
            let m2 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let m3 = col.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
            let m4 = col.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
            let skew = m3 / m2.powf(1.5);
            let excess_kurtosis = m4 / (m2 * m2) - 3.0;
            assert!(skew.abs() < 0.1, "dim {j} skew {skew}");
            assert!(excess_kurtosis.abs() < 0.3, "dim {j} kurtosis {excess_kurtosis}");
        }
    }

    #[test]
    fn too_few_rows_is_a_config_error() {
        let data = std_gaussian_data(99, 9);
        assert!(matches!(
            RbigStack::fit(&data, 5, 50),
            Err(Error::Config(_))
        ));
    }
}
