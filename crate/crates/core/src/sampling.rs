//! Pixel sampling distributions.
//!
//! Three categorical distributions over pixels drive the encoder:
//! an initialization and an optimization distribution that mix normalized
//! gradient magnitude with a uniform floor, and a densification distribution
//! proportional to the current per-pixel L1 reconstruction error.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};
use crate::raster::{ImageBuffer, PixelCoord};

/// A probability table over the pixels of an `H×W` raster (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDistribution {
    width: usize,
    height: usize,
    probabilities: Vec<f64>,
}

impl SamplingDistribution {
    pub fn uniform(width: usize, height: usize) -> Self {
        let n = width * height;
        Self { width, height, probabilities: vec![1.0 / n as f64; n] }
    }

    /// Normalizes non-negative `weights`; falls back to uniform when they sum to zero.
    pub fn from_weights(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != width * height || weights.is_empty() {
            return Err(Error::InvalidParameter(format!("expected {} weights, got {}", width * height, weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            return Ok(Self::uniform(width, height));
        }
        Ok(Self { width, height, probabilities: weights.into_iter().map(|w| w / total).collect() })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.probabilities[row * self.width + col]
    }

    /// Builds a reusable sampler for repeated draws.
    pub fn sampler(&self) -> Result<PixelSampler> {
        let index = WeightedIndex::new(&self.probabilities)
            .map_err(|e| Error::InvalidParameter(format!("degenerate distribution: {e}")))?;
        Ok(PixelSampler { width: self.width, height: self.height, index })
    }
}

/// Draws pixel indices from a [`SamplingDistribution`], with replacement.
#[derive(Debug, Clone)]
pub struct PixelSampler {
    width: usize,
    height: usize,
    index: WeightedIndex<f64>,
}

impl PixelSampler {
    /// Flat pixel index `row * width + col`.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, out: &mut Vec<usize>) {
        out.clear();
        out.extend((0..n).map(|_| self.index.sample(rng)));
    }

    pub fn coord(&self, index: usize) -> PixelCoord {
        PixelCoord::center(index / self.width, index % self.width, self.width, self.height)
    }
}

/// `n` pixel centers drawn independently from `dist`.
pub fn sample_pixels<R: Rng + ?Sized>(dist: &SamplingDistribution, n: usize, rng: &mut R) -> Result<Vec<PixelCoord>> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    let sampler = dist.sampler()?;
    Ok((0..n).map(|_| sampler.coord(sampler.sample_index(rng))).collect())
}

/// Per-pixel L2 norm of the Sobel x/y responses of all three channels,
/// with replicated borders.
pub fn image_gradient_magnitude(img: &ImageBuffer) -> Vec<f64> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let at = |r: isize, c: isize| img.pixel(r.clamp(0, h - 1) as usize, c.clamp(0, w - 1) as usize);
    let mut out = Vec::with_capacity((w * h) as usize);
    for r in 0..h {
        for c in 0..w {
            let mut sq = 0.0;
            for ch in 0..3 {
                let p = |dr: isize, dc: isize| at(r + dr, c + dc)[ch];
                let gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
                let gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
                sq += gx * gx + gy * gy;
            }
            out.push(sq.sqrt());
        }
    }
    out
}

/// Mixture of normalized gradient magnitude and uniform coverage:
/// `P(x) = (1−λ)·|∇I(x)| / Σ|∇I| + λ/(H·W)`.
///
/// When the image has no gradient at all the first term becomes uniform too.
pub fn gradient_mixture(img: &ImageBuffer, lambda: f64) -> Result<SamplingDistribution> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(mix_with_uniform(img.width(), img.height(), image_gradient_magnitude(img), lambda))
}

fn mix_with_uniform(width: usize, height: usize, grad: Vec<f64>, lambda: f64) -> SamplingDistribution {
    let n = (width * height) as f64;
    let total: f64 = grad.iter().sum();
    let probabilities = if total > 0.0 {
        grad.iter().map(|g| (1.0 - lambda) * g / total + lambda / n).collect()
    } else {
        vec![1.0 / n; grad.len()]
    };
    SamplingDistribution { width, height, probabilities }
}

/// Distribution used to place the initial Gaussians.
pub fn init_distribution(img: &ImageBuffer, lambda_init: f64) -> Result<SamplingDistribution> {
    gradient_mixture(img, lambda_init)
}

/// Distribution of training samples; the target is static so this is
/// computed once per fit.
pub fn opt_distribution(img: &ImageBuffer, lambda_opt: f64) -> Result<SamplingDistribution> {
    gradient_mixture(img, lambda_opt)
}

/// Per-pixel L1 error (summed over RGB) normalized to a distribution.
pub fn add_distribution(rendered: &ImageBuffer, target: &ImageBuffer) -> Result<SamplingDistribution> {
    rendered.same_dims(target)?;
    let errors = rendered
        .data()
        .chunks_exact(3)
        .zip(target.data().chunks_exact(3))
        .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).abs()).sum())
        .collect();
    SamplingDistribution::from_weights(target.width(), target.height(), errors)
}
