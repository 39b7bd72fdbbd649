//! Semantic parameterization of the conditioning signal: interpolation
//! between a text embedding and an unconditional embedding, amplification,
//! the semantic direction, and the alignment coefficient.

use crate::error::{Error, Result};
use crate::numerics::{axpy, RealVec};

/// A conditioning vector in abstract semantic coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    vec: RealVec,
}

impl Embedding {
    pub fn new(vec: RealVec) -> Self {
        Embedding { vec }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Embedding::new(RealVec::new(values))
    }

    /// One-hot indicator embedding: coordinate `index` of `dim` set to 1.
    pub fn one_hot(index: usize, dim: usize) -> Self {
        assert!(index < dim, "one_hot index out of range");
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        Embedding::from_values(v)
    }

    /// Uniform embedding `1/dim` in every coordinate; used as a null
    /// conditioning that carries no class preference.
    pub fn uniform(dim: usize) -> Self {
        Embedding::from_values(vec![1.0 / dim as f64; dim])
    }

    pub fn zeros(dim: usize) -> Self {
        Embedding::new(RealVec::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.vec.dim()
    }

    pub fn vec(&self) -> &RealVec {
        &self.vec
    }

    pub fn as_slice(&self) -> &[f64] {
        self.vec.as_slice()
    }
}

/// The knob set for reflective guidance: amplifying weights `s_high`/`s_low`,
/// interpolation weights `beta_high`/`beta_low` in [0,1], merge ratio
/// `gamma`, burst length `alpha`, and the plain guidance scale `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceParams {
    pub s_high: f64,
    pub beta_high: f64,
    pub s_low: f64,
    pub beta_low: f64,
    pub gamma: f64,
    pub alpha: usize,
    pub w: f64,
}

impl Default for GuidanceParams {
    fn default() -> Self {
        GuidanceParams {
            s_high: 3.5,
            beta_high: 0.7,
            s_low: 0.0,
            beta_low: 0.3,
            gamma: 0.5,
            alpha: 1,
            w: 1.0,
        }
    }
}

impl GuidanceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, beta) in [("beta_high", self.beta_high), ("beta_low", self.beta_low)] {
            if !(0.0..=1.0).contains(&beta) {
                return Err(Error::OutOfRange {
                    what: name,
                    value: beta,
                    min: 0.0,
                    max: 1.0,
                });
            }
        }
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return Err(Error::OutOfRange {
                what: "gamma",
                value: self.gamma,
                min: 0.0,
                max: f64::INFINITY,
            });
        }
        if self.alpha == 0 {
            return Err(Error::OutOfRange {
                what: "alpha",
                value: 0.0,
                min: 1.0,
                max: f64::INFINITY,
            });
        }
        if self.w < 1.0 {
            return Err(Error::OutOfRange {
                what: "w",
                value: self.w,
                min: 1.0,
                max: f64::INFINITY,
            });
        }
        Ok(())
    }

    /// `A = s_high*beta_high - s_low*beta_low`; the scale on the gradient in
    /// the first-order expansion of the reflective displacement. Ascent
    /// behavior requires `A > 0`.
    pub fn alignment_coefficient(&self) -> f64 {
        self.s_high * self.beta_high - self.s_low * self.beta_low
    }

    pub fn ascent_configured(&self) -> bool {
        self.alignment_coefficient() > 0.0
    }
}

/// Effective magnitude along the semantic direction in the decomposition
/// `weighted(...) = (1+s)*c_uncond + (1+s*beta)*u`.
pub fn lambda(s: f64, beta: f64) -> f64 {
    1.0 + s * beta
}

fn check_dims(context: &'static str, a: &Embedding, b: &Embedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context,
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

/// Convex interpolation `beta*c_text + (1-beta)*c_uncond`.
pub fn mix(c_text: &Embedding, c_uncond: &Embedding, beta: f64) -> Result<Embedding> {
    check_dims("mix", c_text, c_uncond)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::OutOfRange {
            what: "beta",
            value: beta,
            min: 0.0,
            max: 1.0,
        });
    }
    // exact endpoints: no roundoff drift at beta = 0 or 1
    if beta == 1.0 {
        return Ok(c_text.clone());
    }
    if beta == 0.0 {
        return Ok(c_uncond.clone());
    }
    Ok(Embedding::new(axpy(
        beta,
        c_text.vec(),
        &c_uncond.vec().scaled(1.0 - beta),
    )))
}

/// Amplified embedding `c_text + s*mix(c_text, c_uncond, beta)`.
pub fn weighted(c_text: &Embedding, c_uncond: &Embedding, s: f64, beta: f64) -> Result<Embedding> {
    let mixed = mix(c_text, c_uncond, beta)?;
    if s == 0.0 {
        return Ok(c_text.clone());
    }
    Ok(Embedding::new(axpy(s, mixed.vec(), c_text.vec())))
}

/// The semantic direction `u = c_text - c_uncond`.
pub fn semantic_direction(c_text: &Embedding, c_uncond: &Embedding) -> Result<Embedding> {
    check_dims("semantic_direction", c_text, c_uncond)?;
    Ok(Embedding::new(c_text.vec().sub(c_uncond.vec())))
}
