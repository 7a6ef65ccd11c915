//! The anisotropic 2D Gaussian primitive.
//!
//! A Gaussian lives in the normalized image domain `[0,1]²` and carries eight
//! parameters: a mean, a rotation angle, two axis scales and an RGB color.
//! Its covariance is always built from rotation and scale,
//! `Σ = R S Sᵀ Rᵀ`, so it stays positive definite no matter what the
//! optimizer does to the raw parameters.

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Smallest allowed axis scale in normalized units.
pub const SCALE_MIN: f64 = 1e-4;
/// Largest allowed axis scale in normalized units.
pub const SCALE_MAX: f64 = 2.0;

/// A symmetric 2×2 matrix stored row-major.
pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2D {
    /// Position `(u, v)`, `u` horizontal, `v` vertical.
    pub mu: [f64; 2],
    /// Rotation in radians, canonical range `[0, π)`.
    pub theta: f64,
    /// Standard deviations along the rotated axes.
    pub scale: [f64; 2],
    pub color: [f64; 3],
}

/// Number of scalar parameters per Gaussian.
pub const PARAMS_PER_GAUSSIAN: usize = 8;

impl Gaussian2D {
    pub fn new(mu: [f64; 2], theta: f64, scale: [f64; 2], color: [f64; 3]) -> Self {
        Self { mu, theta, scale, color }
    }

    /// Isotropic Gaussian with `theta = 0`.
    pub fn isotropic(mu: [f64; 2], sigma: f64, color: [f64; 3]) -> Self {
        Self::new(mu, 0.0, [sigma, sigma], color)
    }

    /// Flat parameter vector in storage order `(μu, μv, θ, s₁, s₂, r, g, b)`.
    pub fn to_params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        [self.mu[0], self.mu[1], self.theta, self.scale[0], self.scale[1], self.color[0], self.color[1], self.color[2]]
    }

    pub fn from_params(p: &[f64; PARAMS_PER_GAUSSIAN]) -> Self {
        Self { mu: [p[0], p[1]], theta: p[2], scale: [p[3], p[4]], color: [p[5], p[6], p[7]] }
    }

    /// Checks that every parameter is finite, reporting the first offender.
    pub fn check_finite(&self, index: usize) -> Result<()> {
        let named = [
            ("mu", self.mu.iter().all(|v| v.is_finite())),
            ("theta", self.theta.is_finite()),
            ("scale", self.scale.iter().all(|v| v.is_finite())),
            ("color", self.color.iter().all(|v| v.is_finite())),
        ];
        match named.iter().find(|(_, ok)| !ok) {
            Some((param, _)) => Err(Error::NonFinite { index, param }),
            None => Ok(()),
        }
    }

    /// True when the parameters already sit inside their allowed ranges.
    pub fn is_valid(&self) -> bool {
        self.check_finite(0).is_ok()
            && (0.0..PI).contains(&self.theta)
            && self.scale.iter().all(|s| (SCALE_MIN..=SCALE_MAX).contains(s))
            && self.color.iter().all(|c| (0.0..=1.0).contains(c))
            && self.mu.iter().all(|m| (0.0..=1.0).contains(m))
    }

    pub fn covariance(&self) -> Result<Mat2> {
        covariance(self.theta, self.scale)
    }

    pub fn inverse_covariance(&self) -> InverseCovariance {
        InverseCovariance::new(self.theta, self.scale)
    }

    /// Density at `x`; see [`density`].
    pub fn density(&self, x: [f64; 2]) -> f64 {
        density(self, x)
    }
}

fn check_scale(scale: [f64; 2]) -> Result<()> {
    if scale.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("scale must be finite and positive, got {scale:?}")))
    }
}

/// Builds `Σ = R S Sᵀ Rᵀ` with `R` the rotation by `theta` and `S = diag(scale)`.
pub fn covariance(theta: f64, scale: [f64; 2]) -> Result<Mat2> {
    check_scale(scale)?;
    let (sin, cos) = theta.sin_cos();
    let (a2, b2) = (scale[0] * scale[0], scale[1] * scale[1]);
    let xx = cos * cos * a2 + sin * sin * b2;
    let yy = sin * sin * a2 + cos * cos * b2;
    let xy = cos * sin * (a2 - b2);
    Ok([[xx, xy], [xy, yy]])
}

/// The precision matrix `Σ⁻¹ = R S⁻² Rᵀ`, formed directly from rotation and
/// scale without inverting `Σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseCovariance {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl InverseCovariance {
    pub fn new(theta: f64, scale: [f64; 2]) -> Self {
        let (sin, cos) = theta.sin_cos();
        let ia = 1.0 / (scale[0] * scale[0]);
        let ib = 1.0 / (scale[1] * scale[1]);
        Self { xx: cos * cos * ia + sin * sin * ib, xy: cos * sin * (ia - ib), yy: sin * sin * ia + cos * cos * ib }
    }

    /// Squared Mahalanobis distance of the offset `(du, dv)`.
    #[inline]
    pub fn quad_form(&self, du: f64, dv: f64) -> f64 {
        self.xx * du * du + 2.0 * self.xy * du * dv + self.yy * dv * dv
    }
}

/// `exp(-½ (x−μ)ᵀ Σ⁻¹ (x−μ))`, in `(0, 1]` for finite offsets (it underflows
/// to zero far out in the tail).
pub fn density(g: &Gaussian2D, x: [f64; 2]) -> f64 {
    let q = g.inverse_covariance().quad_form(x[0] - g.mu[0], x[1] - g.mu[1]);
    (-0.5 * q).exp()
}

/// Density together with its partial derivatives with respect to the
/// mean, rotation and scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityGradient {
    pub value: f64,
    pub d_mu: [f64; 2],
    pub d_theta: f64,
    pub d_scale: [f64; 2],
}

/// Analytic gradient of [`density`].
///
/// With `d = x − μ` and local coordinates `p = Rᵀ d`, the exponent is
/// `q = p₁²/s₁² + p₂²/s₂²` and `∂p/∂θ = (p₂, −p₁)`.
pub fn density_gradient(g: &Gaussian2D, x: [f64; 2]) -> DensityGradient {
    let value = density(g, x);
    let (sin, cos) = g.theta.sin_cos();
    let (du, dv) = (x[0] - g.mu[0], x[1] - g.mu[1]);
    let p1 = cos * du + sin * dv;
    let p2 = -sin * du + cos * dv;
    let [s1, s2] = g.scale;
    let (i1, i2) = (1.0 / (s1 * s1), 1.0 / (s2 * s2));
    // ∂G/∂μ = G Σ⁻¹ d = G R (p₁/s₁², p₂/s₂²)
    let (l1, l2) = (p1 * i1, p2 * i2);
    DensityGradient {
        value,
        d_mu: [value * (cos * l1 - sin * l2), value * (sin * l1 + cos * l2)],
        d_theta: -value * p1 * p2 * (i1 - i2),
        d_scale: [value * p1 * p1 * i1 / s1, value * p2 * p2 * i2 / s2],
    }
}

/// Projects raw parameters back into their allowed ranges: `θ` wrapped into
/// `[0, π)`, scale clamped to `[SCALE_MIN, SCALE_MAX]`, color and mean
/// clamped to `[0, 1]`.
pub fn constrain(g: &Gaussian2D) -> Result<Gaussian2D> {
    g.check_finite(0)?;
    Ok(constrain_finite(g))
}

pub(crate) fn constrain_finite(g: &Gaussian2D) -> Gaussian2D {
    Gaussian2D {
        mu: g.mu.map(|m| m.clamp(0.0, 1.0)),
        theta: wrap_angle(g.theta),
        scale: g.scale.map(|s| s.clamp(SCALE_MIN, SCALE_MAX)),
        color: g.color.map(|c| c.clamp(0.0, 1.0)),
    }
}

fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    // rem_euclid can round up to exactly π for tiny negative inputs
    if t >= PI {
        0.0
    } else {
        t
    }
}

/// Gradient of a scalar loss with respect to one Gaussian's parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GaussianGrad {
    pub mu: [f64; 2],
    pub theta: f64,
    pub scale: [f64; 2],
    pub color: [f64; 3],
}

impl GaussianGrad {
    /// Flat vector in the same order as [`Gaussian2D::to_params`].
    pub fn to_params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        [self.mu[0], self.mu[1], self.theta, self.scale[0], self.scale[1], self.color[0], self.color[1], self.color[2]]
    }

    pub fn add_assign(&mut self, other: &GaussianGrad) {
        self.mu[0] += other.mu[0];
        self.mu[1] += other.mu[1];
        self.theta += other.theta;
        self.scale[0] += other.scale[0];
        self.scale[1] += other.scale[1];
        for c in 0..3 {
            self.color[c] += other.color[c];
        }
    }

    pub fn is_zero(&self) -> bool {
        self.to_params().iter().all(|v| *v == 0.0)
    }
}

/// An ordered collection of Gaussians. Indices are stable identities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianSet(Vec<Gaussian2D>);

impl GaussianSet {
    pub fn new(gaussians: Vec<Gaussian2D>) -> Self {
        Self(gaussians)
    }

    pub fn into_vec(self) -> Vec<Gaussian2D> {
        self.0
    }

    /// Applies [`constrain`] to every member.
    pub fn constrained(&self) -> Result<GaussianSet> {
        self.0
            .iter()
            .enumerate()
            .map(|(i, g)| {
                g.check_finite(i)?;
                Ok(constrain_finite(g))
            })
            .collect::<Result<Vec<_>>>()
            .map(GaussianSet)
    }

    pub(crate) fn ensure_non_empty(&self) -> Result<()> {
        if self.0.is_empty() {
            Err(Error::EmptySet)
        } else {
            Ok(())
        }
    }
}

impl Deref for GaussianSet {
    type Target = Vec<Gaussian2D>;
    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

impl DerefMut for GaussianSet {
    fn deref_mut(&mut self) -> &mut Self::Target {
        &mut self.0
    }
}

impl From<Vec<Gaussian2D>> for GaussianSet {
    fn from(v: Vec<Gaussian2D>) -> Self {
        Self(v)
    }
}

impl FromIterator<Gaussian2D> for GaussianSet {
    fn from_iter<I: IntoIterator<Item = Gaussian2D>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}
