//! Velocity fields for the sampling ODE `dx/dtau = v(x, tau, c)` together
//! with exact alignment scores and their gradients.
//!
//! Time runs over `tau` in [0, 1] with `tau = 0` the prior and `tau = 1` the
//! data; denoising increases `tau`. States interpolate as
//! `x_tau = (1 - tau) * z + tau * y` with `z` a standard normal draw and `y`
//! a data draw, so for a Gaussian mixture every conditional moment is
//! available in closed form. Fields are immutable after construction and
//! velocity evaluation is pure, which keeps seed-parallel experiments safe.

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::numerics::{RealMat, RealVec, Rng};

/// Continuous flow time in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimePoint {
    tau: f64,
}

impl TimePoint {
    pub fn new(tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::OutOfRange {
                what: "tau",
                value: tau,
                min: 0.0,
                max: 1.0,
            });
        }
        Ok(TimePoint { tau })
    }

    /// Grid point `k / steps` of a uniform schedule.
    pub fn at_step(k: usize, steps: usize) -> Result<Self> {
        if k > steps || steps == 0 {
            return Err(Error::OutOfRange {
                what: "step index",
                value: k as f64,
                min: 0.0,
                max: steps as f64,
            });
        }
        TimePoint::new(k as f64 / steps as f64)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Weight on the prior draw in the interpolation path.
    pub fn prior_weight(&self) -> f64 {
        1.0 - self.tau
    }

    /// Weight on the data draw in the interpolation path.
    pub fn data_weight(&self) -> f64 {
        self.tau
    }
}

/// State in data space.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    x: RealVec,
}

impl Latent {
    pub fn new(x: RealVec) -> Self {
        Latent { x }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Latent::new(RealVec::new(values))
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn vec(&self) -> &RealVec {
        &self.x
    }

    pub fn as_slice(&self) -> &[f64] {
        self.x.as_slice()
    }
}

/// Behavioral contract every sampler consumes. `velocity` must be
/// deterministic and finite for finite inputs, and locally Lipschitz in `x`
/// (each implementation documents a bound via [`VelocityField::lipschitz_bound`]).
pub trait VelocityField: Send + Sync {
    fn velocity(&self, x: &Latent, t: TimePoint, c: &Embedding) -> RealVec;
    fn state_dim(&self) -> usize;
    fn cond_dim(&self) -> usize;
    /// Coarse upper bound on the state-Jacobian norm, for step-size sanity.
    fn lipschitz_bound(&self) -> f64;
    /// Whether the plain guidance scale `w` rescales the conditioning
    /// embedding for this field. Stock fields leave it inert.
    fn supports_guidance_scale(&self) -> bool {
        false
    }
}

/// Exact alignment score `J` and its state gradient, where a field admits one.
pub trait AlignmentObjective: Send + Sync {
    fn value(&self, x: &RealVec, t: TimePoint) -> f64;
    fn grad(&self, x: &RealVec, t: TimePoint) -> RealVec;
}

/// Map from a conditioning embedding to per-class mixture weights.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbedMap {
    /// Hard assignment to the class with the largest coordinate. Exact for
    /// one-hot class embeddings; piecewise constant in `c`, so only the
    /// smooth map below is usable for expansion checks in `c`.
    OneHot,
    /// `w_k proportional to exp(sharpness * c_k)`; smooth in `c` and equal
    /// to the uniform weights for any uniform embedding.
    Softmax { sharpness: f64 },
}

impl EmbedMap {
    fn class_weights(&self, c: &Embedding, classes: usize) -> Vec<f64> {
        assert_eq!(c.dim(), classes, "embedding dim must equal class count");
        match self {
            EmbedMap::OneHot => {
                let mut best = 0;
                for (i, v) in c.as_slice().iter().enumerate() {
                    if *v > c.as_slice()[best] {
                        best = i;
                    }
                }
                let mut w = vec![0.0; classes];
                w[best] = 1.0;
                w
            }
            EmbedMap::Softmax { sharpness } => {
                let logits: Vec<f64> = c.as_slice().iter().map(|v| sharpness * v).collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / z).collect()
            }
        }
    }
}

/// Mixture of isotropic Gaussians with the exact marginal flow-matching
/// velocity and the exact class posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureField {
    means: Vec<RealVec>,
    vars: Vec<f64>,
    priors: Vec<f64>,
    embed_map: EmbedMap,
    dim: usize,
}

impl GaussianMixtureField {
    pub fn new(
        means: Vec<RealVec>,
        vars: Vec<f64>,
        priors: Vec<f64>,
        embed_map: EmbedMap,
    ) -> Result<Self> {
        if means.is_empty() || means.len() != vars.len() || means.len() != priors.len() {
            return Err(Error::InvalidConfig {
                key: "mixture".into(),
                reason: format!(
                    "need equal non-zero counts of means/vars/priors, got {}/{}/{}",
                    means.len(),
                    vars.len(),
                    priors.len()
                ),
            });
        }
        let dim = means[0].dim();
        if means.iter().any(|m| m.dim() != dim) {
            return Err(Error::InvalidConfig {
                key: "mixture.means".into(),
                reason: "class means must share one dimension".into(),
            });
        }
        if vars.iter().any(|v| *v <= 0.0 || !v.is_finite()) {
            return Err(Error::InvalidConfig {
                key: "mixture.vars".into(),
                reason: "class variances must be strictly positive".into(),
            });
        }
        let total: f64 = priors.iter().sum();
        if priors.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig {
                key: "mixture.priors".into(),
                reason: format!("priors must be non-negative and sum to 1, sum = {total}"),
            });
        }
        let priors = priors.into_iter().map(|p| p / total).collect();
        Ok(GaussianMixtureField {
            means,
            vars,
            priors,
            embed_map,
            dim,
        })
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[RealVec] {
        &self.means
    }

    pub fn vars(&self) -> &[f64] {
        &self.vars
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn embed_map(&self) -> &EmbedMap {
        &self.embed_map
    }

    pub fn with_embed_map(mut self, map: EmbedMap) -> Self {
        self.embed_map = map;
        self
    }

    /// Marginal variance of `x_tau` under class `k`.
    fn path_var(&self, k: usize, t: TimePoint) -> f64 {
        let a = t.prior_weight();
        let b = t.data_weight();
        a * a + b * b * self.vars[k]
    }

    fn log_density(&self, x: &RealVec, t: TimePoint, k: usize) -> f64 {
        let b = t.data_weight();
        let v = self.path_var(k, t);
        let d = self.dim as f64;
        let mut sq = 0.0;
        for (xi, mi) in x.as_slice().iter().zip(self.means[k].as_slice()) {
            let r = xi - b * mi;
            sq += r * r;
        }
        -0.5 * (d * (std::f64::consts::TAU * v).ln() + sq / v)
    }

    /// Per-class predicted drift `E[y - z | x, class k]`.
    fn class_velocity(&self, x: &RealVec, t: TimePoint, k: usize) -> RealVec {
        let a = t.prior_weight();
        let b = t.data_weight();
        let v = self.path_var(k, t);
        let coef = (b * self.vars[k] - a) / v;
        let mu = &self.means[k];
        RealVec::new(
            x.as_slice()
                .iter()
                .zip(mu.as_slice())
                .map(|(xi, mi)| mi + coef * (xi - b * mi))
                .collect(),
        )
    }

    fn responsibilities(&self, x: &RealVec, t: TimePoint, weights: &[f64]) -> Vec<f64> {
        let mut log_terms: Vec<(usize, f64)> = Vec::with_capacity(self.classes());
        for (k, w) in weights.iter().enumerate() {
            if *w > 0.0 {
                log_terms.push((k, w.ln() + self.log_density(x, t, k)));
            }
        }
        let m = log_terms
            .iter()
            .map(|(_, l)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut out = vec![0.0; self.classes()];
        let mut z = 0.0;
        for (k, l) in &log_terms {
            let e = (l - m).exp();
            out[*k] = e;
            z += e;
        }
        for o in &mut out {
            *o /= z;
        }
        out
    }

    /// Exact marginal velocity for the mixture path, with the conditioning
    /// embedding mapped to class weights.
    pub fn gm_velocity(&self, x: &Latent, t: TimePoint, c: &Embedding) -> RealVec {
        let weights = self.embed_map.class_weights(c, self.classes());
        let resp = self.responsibilities(x.vec(), t, &weights);
        let mut out = RealVec::zeros(self.dim);
        for (k, r) in resp.iter().enumerate() {
            if *r > 0.0 {
                out = crate::numerics::axpy(*r, &self.class_velocity(x.vec(), t, k), &out);
            }
        }
        out
    }

    /// Log posterior `log p(class | x_tau)` under the prior class weights.
    ///
    /// Class variances are strictly positive by construction, so the path
    /// density never degenerates, including at `tau = 1`.
    pub fn gm_log_posterior(&self, x: &RealVec, t: TimePoint, class: usize) -> Result<f64> {
        if class >= self.classes() {
            return Err(Error::OutOfRange {
                what: "class id",
                value: class as f64,
                min: 0.0,
                max: (self.classes() - 1) as f64,
            });
        }
        let terms: Vec<f64> = (0..self.classes())
            .map(|k| self.priors[k].ln() + self.log_density(x, t, k))
            .collect();
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + terms.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        Ok(terms[class] - lse)
    }

    /// State gradient of [`Self::gm_log_posterior`], in closed form.
    pub fn gm_posterior_score(&self, x: &RealVec, t: TimePoint, class: usize) -> Result<RealVec> {
        if class >= self.classes() {
            return Err(Error::OutOfRange {
                what: "class id",
                value: class as f64,
                min: 0.0,
                max: (self.classes() - 1) as f64,
            });
        }
        let b = t.data_weight();
        let resp = self.responsibilities(x, t, &self.priors);
        let mut grad = vec![0.0; self.dim];
        for k in 0..self.classes() {
            let v = self.path_var(k, t);
            let own = if k == class { 1.0 } else { 0.0 };
            for (i, g) in grad.iter_mut().enumerate() {
                let r = x.as_slice()[i] - b * self.means[k].as_slice()[i];
                *g += (resp[k] - own) * r / v;
            }
        }
        Ok(RealVec::new(grad))
    }

    /// Objective view of the posterior for one class.
    pub fn posterior_objective(&self, class: usize) -> Result<GmPosterior> {
        if class >= self.classes() {
            return Err(Error::OutOfRange {
                what: "class id",
                value: class as f64,
                min: 0.0,
                max: (self.classes() - 1) as f64,
            });
        }
        Ok(GmPosterior {
            field: self.clone(),
            class,
        })
    }

    /// Draws a class index from the prior.
    pub fn sample_class(&self, rng: &mut Rng) -> usize {
        rng.pick_weighted(&self.priors)
    }

    /// Draws a data point from the named class.
    pub fn sample_data(&self, class: usize, rng: &mut Rng) -> RealVec {
        let sd = self.vars[class].sqrt();
        crate::numerics::axpy(sd, &rng.normal_vec(self.dim), &self.means[class])
    }
}

impl VelocityField for GaussianMixtureField {
    fn velocity(&self, x: &Latent, t: TimePoint, c: &Embedding) -> RealVec {
        self.gm_velocity(x, t, c)
    }

    fn state_dim(&self) -> usize {
        self.dim
    }

    fn cond_dim(&self) -> usize {
        self.classes()
    }

    // |d m_k / dx| <= |b sigma^2 - a| / V per class plus the responsibility
    // shift; bounded coarsely by the largest class-mean spread over the
    // smallest path variance on the tau grid interior.
    fn lipschitz_bound(&self) -> f64 {
        let spread = self
            .means
            .iter()
            .map(|m| m.norm())
            .fold(0.0f64, f64::max)
            .max(1.0);
        let vmin = self
            .vars
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            .min(1.0);
        1.0 / vmin + 4.0 * spread * spread / vmin
    }
}

/// Posterior objective for one mixture class.
#[derive(Debug, Clone)]
pub struct GmPosterior {
    field: GaussianMixtureField,
    class: usize,
}

impl GmPosterior {
    pub fn class(&self) -> usize {
        self.class
    }
}

impl AlignmentObjective for GmPosterior {
    fn value(&self, x: &RealVec, t: TimePoint) -> f64 {
        self.field
            .gm_log_posterior(x, t, self.class)
            .expect("class validated at construction")
    }

    fn grad(&self, x: &RealVec, t: TimePoint) -> RealVec {
        self.field
            .gm_posterior_score(x, t, self.class)
            .expect("class validated at construction")
    }
}

/// Time gain `g(t)` for the embedding-linear field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeGain {
    Constant(f64),
    /// `g(t) = intercept + slope * t`
    Affine { intercept: f64, slope: f64 },
}

impl TimeGain {
    pub fn eval(&self, t: TimePoint) -> f64 {
        match self {
            TimeGain::Constant(g) => *g,
            TimeGain::Affine { intercept, slope } => intercept + slope * t.tau(),
        }
    }
}

/// Field `v(x, t, c) = g(t) * (base * x + bias + cond * c)`: affine in the
/// state and strictly linear in the conditioning embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEmbeddingField {
    base: RealMat,
    bias: RealVec,
    cond: RealMat,
    gain: TimeGain,
}

impl LinearEmbeddingField {
    pub fn new(base: RealMat, bias: RealVec, cond: RealMat, gain: TimeGain) -> Result<Self> {
        let d = bias.dim();
        if base.rows() != d || base.cols() != d || cond.rows() != d {
            return Err(Error::InvalidConfig {
                key: "linear".into(),
                reason: format!(
                    "shape mismatch: base {}x{}, bias {}, cond {}x{}",
                    base.rows(),
                    base.cols(),
                    d,
                    cond.rows(),
                    cond.cols()
                ),
            });
        }
        Ok(LinearEmbeddingField {
            base,
            bias,
            cond,
            gain,
        })
    }

    pub fn cond_matrix(&self) -> &RealMat {
        &self.cond
    }

    pub fn base_matrix(&self) -> &RealMat {
        &self.base
    }

    /// Objective aligned with the conditioned drift direction `cond * u`.
    /// The gradient is constant in `x`; linear fields have no curvature.
    pub fn alignment_objective(&self, c_text: &Embedding, c_uncond: &Embedding) -> Result<LinearAlignment> {
        let u = crate::embedding::semantic_direction(c_text, c_uncond)?;
        Ok(LinearAlignment {
            direction: self.cond.matvec(u.vec()),
        })
    }
}

impl VelocityField for LinearEmbeddingField {
    fn velocity(&self, x: &Latent, t: TimePoint, c: &Embedding) -> RealVec {
        let g = self.gain.eval(t);
        let mut v = self.base.matvec(x.vec());
        v = v.add(&self.bias);
        v = v.add(&self.cond.matvec(c.vec()));
        v.scaled(g)
    }

    fn state_dim(&self) -> usize {
        self.bias.dim()
    }

    fn cond_dim(&self) -> usize {
        self.cond.cols()
    }

    // exactly max |g| * row-sum norm of the base matrix
    fn lipschitz_bound(&self) -> f64 {
        let gmax = match self.gain {
            TimeGain::Constant(g) => g.abs(),
            TimeGain::Affine { intercept, slope } => {
                intercept.abs().max((intercept + slope).abs())
            }
        };
        let row_sum = (0..self.base.rows())
            .map(|r| (0..self.base.cols()).map(|c| self.base.get(r, c).abs()).sum())
            .fold(0.0f64, f64::max);
        gmax * row_sum
    }
}

/// Linear alignment score `J(x) = <direction, x>` with constant gradient.
#[derive(Debug, Clone)]
pub struct LinearAlignment {
    direction: RealVec,
}

impl LinearAlignment {
    pub fn direction(&self) -> &RealVec {
        &self.direction
    }
}

impl AlignmentObjective for LinearAlignment {
    fn value(&self, x: &RealVec, _t: TimePoint) -> f64 {
        self.direction.dot(x)
    }

    fn grad(&self, _x: &RealVec, _t: TimePoint) -> RealVec {
        self.direction.clone()
    }
}
