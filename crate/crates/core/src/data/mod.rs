//! Dataset generation, loading, splitting and synthetic outliers.

mod csv;
mod idx;

pub use csv::{parse_csv, read_csv, to_csv, write_csv};
pub use idx::{
    idx_images_bytes, idx_labels_bytes, load_idx, parse_idx_images, parse_idx_labels,
    read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, IdxImages,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{LabeledSet, Origin};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Isotropic Gaussian clusters in the plane, one class per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGaussians {
    pub means: Vec<[f64; 2]>,
    pub std: f64,
    pub n_per_class: usize,
    pub seed: u64,
}

impl Default for ToyGaussians {
    fn default() -> Self {
        ToyGaussians {
            means: vec![[2.0, 2.0], [-2.0, 2.0], [-2.0, -2.0], [2.0, -2.0]],
            std: 0.35,
            n_per_class: 100,
            seed: 0,
        }
    }
}

impl ToyGaussians {
    pub fn with_seed(seed: u64) -> Self {
        ToyGaussians {
            seed,
            ..ToyGaussians::default()
        }
    }
}

pub fn gen_toy_gaussians(spec: &ToyGaussians) -> Result<LabeledSet> {
    if !(spec.std > 0.0) || !spec.std.is_finite() {
        return Err(Error::config(format!(
            "cluster std must be positive, got {}",
            spec.std
        )));
    }
    for (i, a) in spec.means.iter().enumerate() {
        if spec.means[..i].contains(a) {
            return Err(Error::config(format!("cluster mean {a:?} appears twice")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.means.len();
    let mut data = Vec::with_capacity(k * spec.n_per_class * 2);
    let mut labels = Vec::with_capacity(k * spec.n_per_class);
    for (label, mean) in spec.means.iter().enumerate() {
        for _ in 0..spec.n_per_class {
            for &mu in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(mu + spec.std * z);
            }
            labels.push(label);
        }
    }
    LabeledSet::hard(
        Matrix::new(labels.len(), 2, data)?,
        labels,
        k,
        Origin::InDistribution,
    )
}

/// `m_out` i.i.d. points from `Unif[low, high]^dim`.
pub fn gen_uniform_ood(
    low: f64,
    high: f64,
    dim: usize,
    m_out: usize,
    seed: u64,
) -> Result<LabeledSet> {
    if !(low < high) || !low.is_finite() || !high.is_finite() {
        return Err(Error::config(format!(
            "uniform bounds need low < high, got [{low}, {high}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..m_out * dim)
        .map(|_| rng.random_range(low..=high))
        .collect();
    Ok(LabeledSet::unlabeled(
        Matrix::new(m_out, dim, data)?,
        Origin::OutOfDistribution,
    ))
}

/// Planar points with radius uniform in `[r_min, r_max]` and uniform angle.
pub fn gen_ring(r_min: f64, r_max: f64, n: usize, seed: u64) -> Result<LabeledSet> {
    if !(0.0 <= r_min && r_min <= r_max) || !r_max.is_finite() {
        return Err(Error::config(format!(
            "ring radii need 0 ≤ r_min ≤ r_max, got [{r_min}, {r_max}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let r = if r_min == r_max {
            r_min
        } else {
            rng.random_range(r_min..=r_max)
        };
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        data.push(r * phi.cos());
        data.push(r * phi.sin());
    }
    Ok(LabeledSet::unlabeled(
        Matrix::new(n, 2, data)?,
        Origin::OutOfDistribution,
    ))
}

/// Permute, blur and contrast-rescale settings for [`gen_smooth_ood`].
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothNoiseSpec {
    pub blur_sigma_range: (f64, f64),
    pub contrast_range: (f64, f64),
    pub kernel_radius: usize,
    pub seed: u64,
}

impl Default for SmoothNoiseSpec {
    fn default() -> Self {
        SmoothNoiseSpec {
            blur_sigma_range: (1.0, 2.5),
            contrast_range: (0.3, 1.0),
            kernel_radius: 2,
            seed: 0,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Separable Gaussian blur with clamp-to-edge borders.
fn blur(img: &[f64], side: usize, sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let weights: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / norm).collect();
    let clamp = |i: isize| i.clamp(0, side as isize - 1) as usize;
    let mut tmp = vec![0.0; img.len()];
    for y in 0..side {
        for x in 0..side {
            tmp[y * side + x] = (-r..=r)
                .zip(&weights)
                .map(|(k, w)| w * img[y * side + clamp(x as isize + k)])
                .sum();
        }
    }
    let mut out = vec![0.0; img.len()];
    for y in 0..side {
        for x in 0..side {
            out[y * side + x] = (-r..=r)
                .zip(&weights)
                .map(|(k, w)| w * tmp[clamp(y as isize + k) * side + x])
                .sum();
        }
    }
    out
}

/// Outlier images: each source image is pixel-permuted, Gaussian-blurred and
/// rescaled to `[0, κ]`; an all-equal image becomes the constant `κ/2`.
pub fn gen_smooth_ood(source: &LabeledSet, spec: &SmoothNoiseSpec) -> Result<LabeledSet> {
    let (s_lo, s_hi) = spec.blur_sigma_range;
    let (c_lo, c_hi) = spec.contrast_range;
    if !(0.0 < s_lo && s_lo <= s_hi) || !(0.0 < c_lo && c_lo <= c_hi && c_hi <= 1.0) {
        return Err(Error::config(
            "smooth-noise ranges must be ordered and positive, contrast at most 1",
        ));
    }
    let n_pixels = source.n_features();
    let side = (n_pixels as f64).sqrt().round() as usize;
    if side * side != n_pixels || n_pixels == 0 {
        return Err(Error::config(format!(
            "smooth noise needs square images, got {n_pixels} pixels"
        )));
    }
    if source.x().data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::config(
            "smooth-noise source pixels must lie in [0, 1]",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Vec::with_capacity(source.len() * n_pixels);
    for img in source.x().iter_rows() {
        let kappa = draw(&mut rng, spec.contrast_range);
        let sigma = draw(&mut rng, spec.blur_sigma_range);
        let first = img[0];
        if img.iter().all(|&v| v == first) {
            data.extend(std::iter::repeat_n(kappa / 2.0, n_pixels));
            continue;
        }
        let mut permuted = img.to_vec();
        permuted.shuffle(&mut rng);
        let blurred = blur(&permuted, side, sigma, spec.kernel_radius);
        let lo = blurred.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = blurred.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi == lo {
            data.extend(std::iter::repeat_n(kappa / 2.0, n_pixels));
        } else {
            data.extend(blurred.iter().map(|v| (v - lo) / (hi - lo) * kappa));
        }
    }
    Ok(LabeledSet::unlabeled(
        Matrix::new(source.len(), n_pixels, data)?,
        Origin::OutOfDistribution,
    ))
}

/// Random disjoint split into `(train, validation)` with `n_val` validation rows;
/// each part keeps the original row order.
pub fn split_validation(
    d: &LabeledSet,
    n_val: usize,
    seed: u64,
) -> Result<(LabeledSet, LabeledSet)> {
    if n_val >= d.len() && n_val > 0 {
        return Err(Error::usage(format!(
            "validation size {n_val} leaves no training rows out of {}",
            d.len()
        )));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val, train) = order.split_at_mut(n_val);
    val.sort_unstable();
    train.sort_unstable();
    Ok((d.subset(train), d.subset(val)))
}
