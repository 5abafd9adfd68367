//! Generators and closed-form log-densities for the six 2D target families.
//!
//! Every family exposes exact `log p(z)` alongside its sampler, so NLL and
//! KL can be computed against ground truth. Samplers are seeded value
//! objects: the same `(seed, split)` pair reproduces a batch bit-exactly,
//! and the three splits draw from disjoint ChaCha streams.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, LogDensity, Matrix, Result};

const LN_TWO_PI: f64 = 1.8378770664093453;

/// Data split tags; each owns a disjoint seed stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
    Fresh,
}

impl Split {
    pub(crate) fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Eval => 2,
            Split::Fresh => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::Fresh => "fresh",
        }
    }
}

/// A batch of samples tagged with its generating family, seed, and split.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub samples: Matrix,
    pub family: String,
    pub seed: u64,
    pub split: Split,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    /// CSV export: header `x1,x2`, one row per sample, 9 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.samples.ncols();
        let header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in self.samples.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.8e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Read a CSV previously produced by [`SampleSet::write_csv`].
    pub fn read_csv<R: BufRead>(r: R, family: &str, seed: u64, split: Split) -> Result<SampleSet> {
        let mut rows: Vec<f64> = Vec::new();
        let mut d = 0usize;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 {
                d = line.split(',').count();
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            for cell in line.split(',') {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|e| Error::config(format!("bad csv cell {cell:?}: {e}")))?;
                rows.push(v);
            }
        }
        let n = rows.len() / d.max(1);
        let samples = Array2::from_shape_vec((n, d), rows)
            .map_err(|e| Error::config(format!("ragged csv: {e}")))?;
        Ok(SampleSet {
            samples,
            family: family.to_string(),
            seed,
            split,
        })
    }
}

/// A Monte-Carlo scalar estimate with its standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

impl McEstimate {
    pub fn from_values(values: &[f64]) -> McEstimate {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        McEstimate {
            value: mean,
            std_error: (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GaussComponent {
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
    weight: f64,
    // Derived quantities, rebuilt on construction.
    #[serde(skip)]
    chol: [[f64; 2]; 2],
    #[serde(skip)]
    inv: [[f64; 2]; 2],
    #[serde(skip)]
    log_norm: f64,
}

impl GaussComponent {
    fn new(mean: [f64; 2], cov: [[f64; 2]; 2], weight: f64) -> GaussComponent {
        let mut c = GaussComponent {
            mean,
            cov,
            weight,
            chol: [[0.0; 2]; 2],
            inv: [[0.0; 2]; 2],
            log_norm: 0.0,
        };
        c.finish();
        c
    }

    fn finish(&mut self) {
        let [[a, b], [c_, d]] = self.cov;
        let det = a * d - b * c_;
        // Lower Cholesky factor; a zero covariance degrades to the zero map
        // so degenerate configurations can still be sampled.
        let l11 = a.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { c_ / l11 } else { 0.0 };
        let l22 = (d - l21 * l21).max(0.0).sqrt();
        self.chol = [[l11, 0.0], [l21, l22]];
        if det > 0.0 {
            self.inv = [[d / det, -b / det], [-c_ / det, a / det]];
            self.log_norm = -LN_TWO_PI - 0.5 * det.ln();
        } else {
            self.inv = [[0.0; 2]; 2];
            self.log_norm = f64::NEG_INFINITY;
        }
    }

    fn log_pdf(&self, z: [f64; 2]) -> f64 {
        if self.log_norm == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let dx = z[0] - self.mean[0];
        let dy = z[1] - self.mean[1];
        let q = dx * (self.inv[0][0] * dx + self.inv[0][1] * dy)
            + dy * (self.inv[1][0] * dx + self.inv[1][1] * dy);
        self.log_norm - 0.5 * q
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> [f64; 2] {
        let g1: f64 = rng.sample(StandardNormal);
        let g2: f64 = rng.sample(StandardNormal);
        [
            self.mean[0] + self.chol[0][0] * g1,
            self.mean[1] + self.chol[1][0] * g1 + self.chol[1][1] * g2,
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BananaParams {
    sigma1: f64,
    noise: f64,
    curvature: f64,
    offset: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MoonsParams {
    radius: f64,
    radial_sigma: f64,
    /// Moon 0 sits at `(dx, -dy)` with the upper half-arc, moon 1 at
    /// `(-dx, dy)` with the lower half-arc.
    dx: f64,
    dy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RingsParams {
    radii: Vec<f64>,
    radial_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Shape {
    Banana(BananaParams),
    Mixture(Vec<GaussComponent>),
    TwoMoons(MoonsParams),
    Rings(RingsParams),
}

/// A named 2D target family with exact log-density and a seeded sampler.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetFamily {
    name: String,
    shape: Shape,
}

pub const FAMILY_NAMES: [&str; 6] = [
    "banana",
    "xshape",
    "bimodal",
    "multimodal",
    "two_moons",
    "rings",
];

impl TargetFamily {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Look up one of the six benchmark families by name.
    pub fn by_name(name: &str) -> Result<TargetFamily> {
        match name {
            "banana" => Ok(Self::banana()),
            "xshape" => Ok(Self::xshape()),
            "bimodal" => Ok(Self::bimodal()),
            "multimodal" => Ok(Self::multimodal()),
            "two_moons" => Ok(Self::two_moons()),
            "rings" => Ok(Self::rings()),
            other => Err(Error::config(format!("unknown target family {other:?}"))),
        }
    }

    /// Warped Gaussian with curved level sets:
    /// `z1 ~ N(0, 2^2)`, `z2 = u + 0.25 (z1^2 - 4)`, `u ~ N(0, 1)`.
    pub fn banana() -> TargetFamily {
        TargetFamily {
            name: "banana".into(),
            shape: Shape::Banana(BananaParams {
                sigma1: 2.0,
                noise: 1.0,
                curvature: 0.25,
                offset: 4.0,
            }),
        }
    }

    /// Two zero-mean Gaussians with opposing correlation, crossing at origin.
    pub fn xshape() -> TargetFamily {
        let comps = vec![
            GaussComponent::new([0.0, 0.0], [[2.0, 1.8], [1.8, 2.0]], 0.5),
            GaussComponent::new([0.0, 0.0], [[2.0, -1.8], [-1.8, 2.0]], 0.5),
        ];
        TargetFamily {
            name: "xshape".into(),
            shape: Shape::Mixture(comps),
        }
    }

    /// Two well-separated isotropic modes at `(-2.5, 0)` and `(2.5, 0)`.
    pub fn bimodal() -> TargetFamily {
        let cov = [[0.25, 0.0], [0.0, 0.25]];
        let comps = vec![
            GaussComponent::new([-2.5, 0.0], cov, 0.5),
            GaussComponent::new([2.5, 0.0], cov, 0.5),
        ];
        TargetFamily {
            name: "bimodal".into(),
            shape: Shape::Mixture(comps),
        }
    }

    /// Five equal-weight modes on a circle of radius 3.
    pub fn multimodal() -> TargetFamily {
        let cov = [[0.16, 0.0], [0.0, 0.16]];
        let comps = (0..5)
            .map(|k| {
                let angle = 2.0 * PI * k as f64 / 5.0;
                GaussComponent::new([3.0 * angle.cos(), 3.0 * angle.sin()], cov, 0.2)
            })
            .collect();
        TargetFamily {
            name: "multimodal".into(),
            shape: Shape::Mixture(comps),
        }
    }

    /// Two interlocking half-arcs with Gaussian radial noise.
    pub fn two_moons() -> TargetFamily {
        TargetFamily {
            name: "two_moons".into(),
            shape: Shape::TwoMoons(MoonsParams {
                radius: 1.0,
                radial_sigma: 0.1,
                dx: 0.5,
                dy: 0.25,
            }),
        }
    }

    /// Concentric annuli at radii 1 and 2 with Gaussian radial noise.
    pub fn rings() -> TargetFamily {
        TargetFamily {
            name: "rings".into(),
            shape: Shape::Rings(RingsParams {
                radii: vec![1.0, 2.0],
                radial_sigma: 0.1,
            }),
        }
    }

    /// A custom Gaussian mixture for tests and calibration runs.
    ///
    /// `components` are `(mean, covariance, weight)` triples; weights must
    /// sum to one.
    pub fn gaussian_mixture(
        name: &str,
        components: Vec<([f64; 2], [[f64; 2]; 2], f64)>,
    ) -> Result<TargetFamily> {
        if components.is_empty() {
            return Err(Error::config("a mixture needs at least one component"));
        }
        let total: f64 = components.iter().map(|c| c.2).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("weights sum to {total}, not 1")));
        }
        Ok(TargetFamily {
            name: name.to_string(),
            shape: Shape::Mixture(
                components
                    .into_iter()
                    .map(|(m, c, w)| GaussComponent::new(m, c, w))
                    .collect(),
            ),
        })
    }

    /// Rebuild derived per-component terms after deserialization.
    pub fn rebuild(&mut self) {
        if let Shape::Mixture(comps) = &mut self.shape {
            for c in comps {
                c.finish();
            }
        }
    }

    /// Draw `n` i.i.d. samples; deterministic per `(seed, split)`.
    pub fn sample(&self, n: usize, seed: u64, split: Split) -> Result<SampleSet> {
        if n < 1 {
            return Err(Error::config("sample count must be >= 1"));
        }
        Ok(self.sample_allow_empty(n, seed, split))
    }

    fn sample_allow_empty(&self, n: usize, seed: u64, split: Split) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(split.stream());
        let mut out = Array2::zeros((n, 2));
        for mut row in out.rows_mut() {
            let z = self.sample_one(&mut rng);
            row[0] = z[0];
            row[1] = z[1];
        }
        SampleSet {
            samples: out,
            family: self.name.clone(),
            seed,
            split,
        }
    }

    fn sample_one<R: Rng>(&self, rng: &mut R) -> [f64; 2] {
        match &self.shape {
            Shape::Banana(p) => {
                let g1: f64 = rng.sample(StandardNormal);
                let g2: f64 = rng.sample(StandardNormal);
                let z1 = p.sigma1 * g1;
                let z2 = p.noise * g2 + p.curvature * (z1 * z1 - p.offset);
                [z1, z2]
            }
            Shape::Mixture(comps) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut chosen = comps.len() - 1;
                for (i, c) in comps.iter().enumerate() {
                    acc += c.weight;
                    if u < acc {
                        chosen = i;
                        break;
                    }
                }
                comps[chosen].sample(rng)
            }
            Shape::TwoMoons(p) => {
                let moon: bool = rng.gen();
                let u: f64 = rng.gen();
                let g: f64 = rng.sample(StandardNormal);
                let r = p.radius + p.radial_sigma * g;
                let (cx, cy, theta) = if moon {
                    (-p.dx, p.dy, PI + PI * u)
                } else {
                    (p.dx, -p.dy, PI * u)
                };
                [cx + r * theta.cos(), cy + r * theta.sin()]
            }
            Shape::Rings(p) => {
                let idx = rng.gen_range(0..p.radii.len());
                let u: f64 = rng.gen();
                let g: f64 = rng.sample(StandardNormal);
                let r = p.radii[idx] + p.radial_sigma * g;
                let theta = 2.0 * PI * u;
                [r * theta.cos(), r * theta.sin()]
            }
        }
    }

    fn log_density_one(&self, z: [f64; 2]) -> f64 {
        match &self.shape {
            Shape::Banana(p) => {
                let resid = z[1] - p.curvature * (z[0] * z[0] - p.offset);
                log_normal_pdf(z[0], 0.0, p.sigma1) + log_normal_pdf(resid, 0.0, p.noise)
            }
            Shape::Mixture(comps) => {
                let logs: Vec<f64> = comps
                    .iter()
                    .map(|c| c.weight.ln() + c.log_pdf(z))
                    .collect();
                log_sum_exp(&logs)
            }
            Shape::TwoMoons(p) => {
                let mut logs = Vec::with_capacity(2);
                for moon in 0..2 {
                    let (cx, cy) = if moon == 0 {
                        (p.dx, -p.dy)
                    } else {
                        (-p.dx, p.dy)
                    };
                    let vx = z[0] - cx;
                    let vy = z[1] - cy;
                    let in_arc = if moon == 0 { vy >= 0.0 } else { vy <= 0.0 };
                    if !in_arc {
                        continue;
                    }
                    let r = (vx * vx + vy * vy).sqrt().max(1e-8);
                    logs.push(
                        0.5f64.ln() - PI.ln() + log_normal_pdf(r, p.radius, p.radial_sigma)
                            - r.ln(),
                    );
                }
                log_sum_exp(&logs)
            }
            Shape::Rings(p) => {
                let r = (z[0] * z[0] + z[1] * z[1]).sqrt().max(1e-8);
                let w = 1.0 / p.radii.len() as f64;
                let logs: Vec<f64> = p
                    .radii
                    .iter()
                    .map(|&radius| {
                        w.ln() - LN_TWO_PI + log_normal_pdf(r, radius, p.radial_sigma) - r.ln()
                    })
                    .collect();
                log_sum_exp(&logs)
            }
        }
    }

    /// Monte-Carlo entropy estimate `H(p) = -E[log p]` over `n` fresh draws.
    pub fn entropy_mc(&self, n: usize, seed: u64) -> Result<McEstimate> {
        if n < 1_000 {
            return Err(Error::config("entropy estimate needs n >= 1000"));
        }
        let set = self.sample(n, seed, Split::Fresh)?;
        let logs = self.log_density(&set.samples);
        let neg: Vec<f64> = logs.iter().map(|v| -v).collect();
        Ok(McEstimate::from_values(&neg))
    }
}

impl LogDensity for TargetFamily {
    fn log_density(&self, z: &Matrix) -> Vec<f64> {
        assert_eq!(z.ncols(), 2, "target families are two-dimensional");
        z.rows()
            .into_iter()
            .map(|row| self.log_density_one([row[0], row[1]]))
            .collect()
    }

    fn dim(&self) -> usize {
        2
    }
}

fn log_normal_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let d = (x - mean) / sigma;
    -0.5 * d * d - sigma.ln() - 0.5 * LN_TWO_PI
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return f64::NEG_INFINITY;
    }
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Midpoint-rule integral of `exp(log_density)` over `[lo, hi]^2`.
///
/// Used as the normalization oracle for both exact targets and trained flows.
pub fn grid_density_integral(model: &dyn LogDensity, lo: f64, hi: f64, step: f64) -> f64 {
    let cells = ((hi - lo) / step).round() as usize;
    let mut total = 0.0;
    let mut batch = Array2::zeros((cells, 2));
    for i in 0..cells {
        let x = lo + (i as f64 + 0.5) * step;
        for j in 0..cells {
            let y = lo + (j as f64 + 0.5) * step;
            batch[[j, 0]] = x;
            batch[[j, 1]] = y;
        }
        let logs = model.log_density(&batch);
        total += logs
            .iter()
            .map(|&l| if l.is_finite() { l.exp() } else { 0.0 })
            .sum::<f64>();
    }
    total * step * step
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_TWO_PI_E: f64 = 2.8378770664093453;

    #[test]
    fn unknown_family_is_a_config_error() {
        assert!(matches!(
            TargetFamily::by_name("spiral"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn degenerate_bimodal_collapses_to_origin() {
        let family = TargetFamily::gaussian_mixture(
            "degenerate",
            vec![
                ([0.0, 0.0], [[0.0, 0.0], [0.0, 0.0]], 0.5),
                ([0.0, 0.0], [[0.0, 0.0], [0.0, 0.0]], 0.5),
            ],
        )
        .unwrap();
        let set = family.sample(100, 3, Split::Train).unwrap();
        assert!(set.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn banana_first_dimension_is_centered() {
        let family = TargetFamily::banana();
        let set = family.sample(100_000, 11, Split::Eval).unwrap();
        let mean = set.samples.column(0).sum() / set.len() as f64;
        let bound = 3.0 * 2.0 / (set.len() as f64).sqrt();
        assert!(mean.abs() < bound, "mean {mean} exceeds {bound}");
    }

    #[test]
    fn rings_radii_are_bimodal() {
        let family = TargetFamily::rings();
        let set = family.sample(100_000, 5, Split::Eval).unwrap();
        let mut near_1 = 0usize;
        let mut near_2 = 0usize;
        let mut near_mid = 0usize;
        for row in set.samples.rows() {
            let r = (row[0] * row[0] + row[1] * row[1]).sqrt();
            if (r - 1.0).abs() < 0.15 {
                near_1 += 1;
            }
            if (r - 2.0).abs() < 0.15 {
                near_2 += 1;
            }
            if (r - 1.5).abs() < 0.15 {
                near_mid += 1;
            }
        }
        assert!(near_1 > 20 * near_mid.max(1));
        assert!(near_2 > 20 * near_mid.max(1));
    }

    #[test]
    fn gaussian_mode_log_density_is_closed_form() {
        let (s1, s2) = (0.7, 1.3);
        let family = TargetFamily::gaussian_mixture(
            "gauss",
            vec![([1.0, -2.0], [[s1 * s1, 0.0], [0.0, s2 * s2]], 1.0)],
        )
        .unwrap();
        let z = Array2::from_shape_vec((1, 2), vec![1.0, -2.0]).unwrap();
        let log_p = family.log_density(&z)[0];
        let expect = -(2.0 * PI * s1 * s2).ln();
        assert!((log_p - expect).abs() < 1e-12);
    }

    #[test]
    fn bimodal_midpoint_matches_two_term_mixture() {
        let family = TargetFamily::bimodal();
        let z = Array2::from_shape_vec((1, 2), vec![0.0, 0.0]).unwrap();
        let log_p = family.log_density(&z)[0];
        // log(2 * 0.5 * N(mid; mode, 0.25 I)) with mid-to-mode distance 2.5.
        let per_mode = -LN_TWO_PI - 0.25f64.ln() - 0.5 * (2.5 * 2.5 / 0.25 + 0.0);
        let expect = (2.0 * 0.5f64).ln() + per_mode;
        assert!((log_p - expect).abs() < 1e-12, "{log_p} vs {expect}");
    }

    #[test]
    fn all_six_families_integrate_to_one_on_the_grid() {
        for name in FAMILY_NAMES {
            let family = TargetFamily::by_name(name).unwrap();
            let integral = grid_density_integral(&family, -8.0, 8.0, 0.02);
            assert!(
                (0.98..=1.02).contains(&integral),
                "{name}: integral {integral}"
            );
        }
    }

    #[test]
    fn standard_gaussian_entropy_matches_closed_form() {
        let family = TargetFamily::gaussian_mixture(
            "gauss_std",
            vec![([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], 1.0)],
        )
        .unwrap();
        let est = family.entropy_mc(50_000, 1).unwrap();
        assert!((est.value - LN_TWO_PI_E).abs() < 0.05);
    }

    #[test]
    fn entropy_scales_with_log_sigma() {
        let make = |c: f64| {
            TargetFamily::gaussian_mixture(
                "gauss_scaled",
                vec![([0.0, 0.0], [[c * c, 0.0], [0.0, c * c]], 1.0)],
            )
            .unwrap()
        };
        let h1 = make(1.0).entropy_mc(80_000, 2).unwrap();
        let h3 = make(3.0).entropy_mc(80_000, 2).unwrap();
        let shift = h3.value - h1.value;
        let bound = 3.0 * (h1.std_error + h3.std_error);
        assert!((shift - 2.0 * 3.0f64.ln()).abs() < bound.max(0.02));
    }

    #[test]
    fn entropy_is_seed_invariant_within_error() {
        let family = TargetFamily::two_moons();
        let a = family.entropy_mc(40_000, 1).unwrap();
        let b = family.entropy_mc(40_000, 99).unwrap();
        let bound = 3.0 * (a.std_error.hypot(b.std_error));
        assert!((a.value - b.value).abs() < bound);
    }

    /// Average log-density of a family's own samples converges to -H.
    #[test]
    fn sampler_and_density_are_consistent() {
        for name in FAMILY_NAMES {
            let family = TargetFamily::by_name(name).unwrap();
            let set = family.sample(100_000, 17, Split::Train).unwrap();
            let logs = family.log_density(&set.samples);
            let mean = McEstimate::from_values(&logs);
            let ent = family.entropy_mc(100_000, 23).unwrap();
            let bound = 3.0 * mean.std_error.hypot(ent.std_error);
            assert!(
                (mean.value + ent.value).abs() < bound,
                "{name}: mean log p {} vs -H {} (bound {bound})",
                mean.value,
                -ent.value
            );
        }
    }

    #[test]
    fn sampling_is_bit_deterministic_and_split_disjoint() {
        let family = TargetFamily::xshape();
        let a = family.sample(256, 7, Split::Train).unwrap();
        let b = family.sample(256, 7, Split::Train).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = family.sample(256, 7, Split::Eval).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn csv_round_trip_keeps_nine_significant_digits() {
        let family = TargetFamily::bimodal();
        let set = family.sample(64, 1, Split::Train).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2\n"));
        let back = SampleSet::read_csv(&buf[..], "bimodal", 1, Split::Train).unwrap();
        assert_eq!(back.samples.nrows(), 64);
        for (a, b) in set.samples.iter().zip(back.samples.iter()) {
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
        }
    }
}
