//! Euler integration of the sampling ODE, flow inversion, and the
//! three-stage reflective sampler.
//!
//! A reflective step at grid index `k` runs a strong-conditioning denoise
//! burst of `alpha` Euler steps, inverts it with weak conditioning over the
//! same interval (times descending from `tau_{k+alpha}`), and merges the
//! residual displacement back into the state with the merge ratio `gamma`
//! before the ordinary denoising step proceeds at the original step time.
//! The residual points up the alignment-score gradient to first order, with
//! scale `dt * A` where `A` is the alignment coefficient.

use crate::embedding::{weighted, Embedding, GuidanceParams};
use crate::error::{Error, Result};
use crate::fields::{AlignmentObjective, Latent, TimePoint, VelocityField};
use crate::numerics::RealVec;
use std::io::{self, Write};

const TIME_SLACK: f64 = 1e-9;

/// Which steps of the schedule run the reflective stages.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskPolicy {
    All,
    None,
    /// Reflective stages on the first `k` steps only.
    FirstK(usize),
    /// Reflective stages on the first `round(fraction * steps)` steps.
    Fraction(f64),
    /// Explicit per-step mask; length must equal the step count.
    Bits(Vec<bool>),
}

impl MaskPolicy {
    pub fn build(&self, steps: usize) -> Result<Vec<bool>> {
        match self {
            MaskPolicy::All => Ok(vec![true; steps]),
            MaskPolicy::None => Ok(vec![false; steps]),
            MaskPolicy::FirstK(k) => {
                Ok((0..steps).map(|i| i < *k).collect())
            }
            MaskPolicy::Fraction(f) => {
                if !(0.0..=1.0).contains(f) {
                    return Err(Error::OutOfRange {
                        what: "mask fraction",
                        value: *f,
                        min: 0.0,
                        max: 1.0,
                    });
                }
                let k = (f * steps as f64).round() as usize;
                Ok((0..steps).map(|i| i < k.min(steps)).collect())
            }
            MaskPolicy::Bits(bits) => {
                if bits.len() != steps {
                    return Err(Error::InvalidConfig {
                        key: "sampler.rf_mask".into(),
                        reason: format!("mask length {} != steps {steps}", bits.len()),
                    });
                }
                Ok(bits.clone())
            }
        }
    }
}

/// Discretization schedule, guidance knobs, conditioning pair, and the
/// per-step reflective mask.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance: GuidanceParams,
    pub c_text: Embedding,
    pub c_uncond: Embedding,
    pub rf_mask: Vec<bool>,
    pub record_diagnostics: bool,
}

impl SamplerConfig {
    pub fn new(
        steps: usize,
        guidance: GuidanceParams,
        c_text: Embedding,
        c_uncond: Embedding,
        mask: &MaskPolicy,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::OutOfRange {
                what: "steps",
                value: 0.0,
                min: 1.0,
                max: f64::INFINITY,
            });
        }
        guidance.validate()?;
        if c_text.dim() != c_uncond.dim() {
            return Err(Error::DimensionMismatch {
                context: "sampler conditioning pair",
                left: c_text.dim(),
                right: c_uncond.dim(),
            });
        }
        let rf_mask = mask.build(steps)?;
        Ok(SamplerConfig {
            steps,
            guidance,
            c_text,
            c_uncond,
            rf_mask,
            record_diagnostics: false,
        })
    }

    pub fn with_diagnostics(mut self, on: bool) -> Self {
        self.record_diagnostics = on;
        self
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    /// Burst length at step `k`, truncated so the excursion never runs past
    /// the data endpoint.
    pub fn effective_alpha(&self, k: usize) -> usize {
        self.guidance.alpha.min(self.steps - k)
    }

    /// Field evaluations a full run will spend: `2*alpha + 1` per reflective
    /// step, 1 per plain step.
    pub fn expected_nfe(&self) -> usize {
        (0..self.steps)
            .map(|k| {
                if self.rf_mask[k] {
                    2 * self.effective_alpha(k) + 1
                } else {
                    1
                }
            })
            .sum()
    }
}

/// Per-step diagnostics recorded along a trajectory.
#[derive(Debug, Clone, Default)]
pub struct StepRecord {
    /// The merge displacement computed at this step, when recorded.
    pub reflective: Option<RealVec>,
    /// Inner product of the displacement with the analytic score gradient.
    pub score_alignment: Option<f64>,
}

/// The recorded latent path: `steps + 1` boundary states plus per-step
/// diagnostics and the exact field-evaluation count.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub latents: Vec<Latent>,
    pub steps: Vec<StepRecord>,
    pub nfe: usize,
    pub t_steps: usize,
}

impl Trajectory {
    pub fn final_latent(&self) -> &Latent {
        self.latents.last().expect("trajectory is never empty")
    }

    pub fn tau(&self, k: usize) -> f64 {
        k as f64 / self.t_steps as f64
    }

    /// Writes the path as CSV: `step,tau,x_0..x_{d-1},drf_norm,drf_dot_score`,
    /// one row per boundary state, comment header first. Diagnostic cells are
    /// empty on rows without a recorded displacement.
    pub fn write_csv<W: Write>(&self, w: &mut W, version: &str, seed: u64) -> io::Result<()> {
        let dim = self.latents[0].dim();
        writeln!(w, "# rfs-version: {version}")?;
        writeln!(w, "# seed: {seed}")?;
        write!(w, "step,tau")?;
        for i in 0..dim {
            write!(w, ",x_{i}")?;
        }
        writeln!(w, ",drf_norm,drf_dot_score")?;
        for (k, latent) in self.latents.iter().enumerate() {
            write!(w, "{k},{}", self.tau(k))?;
            for v in latent.as_slice() {
                write!(w, ",{v}")?;
            }
            let rec = self.steps.get(k);
            match rec.and_then(|r| r.reflective.as_ref()) {
                Some(d) => write!(w, ",{}", d.norm())?,
                None => write!(w, ",")?,
            }
            match rec.and_then(|r| r.score_alignment) {
                Some(s) => writeln!(w, ",{s}")?,
                None => writeln!(w, ",")?,
            }
        }
        Ok(())
    }
}

fn advance(x: &Latent, v: &RealVec, dt: f64) -> Result<Latent> {
    let mut next = Vec::with_capacity(x.dim());
    for (xi, vi) in x.as_slice().iter().zip(v.as_slice()) {
        let n = xi + vi * dt;
        if !n.is_finite() {
            return Err(Error::NonFinite {
                context: format!("euler update {xi} + {vi} * {dt}"),
            });
        }
        next.push(n);
    }
    Ok(Latent::from_values(next))
}

/// One Euler step `x + v(x, t, c) * dt`. The signed step must keep
/// `t + dt` inside [0, 1].
pub fn euler_step(
    field: &dyn VelocityField,
    x: &Latent,
    t: TimePoint,
    c: &Embedding,
    dt: f64,
) -> Result<Latent> {
    let dest = t.tau() + dt;
    if !(-TIME_SLACK..=1.0 + TIME_SLACK).contains(&dest) {
        return Err(Error::OutOfRange {
            what: "euler step destination time",
            value: dest,
            min: 0.0,
            max: 1.0,
        });
    }
    let v = field.velocity(x, t, c);
    advance(x, &v, dt)
}

/// `alpha` chained forward Euler steps from grid index `k`, re-evaluating
/// the field at each advanced state and time.
pub fn denoise_burst(
    field: &dyn VelocityField,
    x: &Latent,
    k: usize,
    steps: usize,
    c: &Embedding,
    alpha: usize,
) -> Result<Latent> {
    if k + alpha > steps {
        return Err(Error::OutOfRange {
            what: "denoise burst end",
            value: (k + alpha) as f64,
            min: 0.0,
            max: steps as f64,
        });
    }
    let dt = 1.0 / steps as f64;
    let mut cur = x.clone();
    for j in k..k + alpha {
        cur = euler_step(field, &cur, TimePoint::at_step(j, steps)?, c, dt)?;
    }
    Ok(cur)
}

/// Mirror of [`denoise_burst`]: `alpha` backward Euler steps with times
/// descending from `tau_{k+alpha}`, returning to the grid index `k`.
pub fn invert_burst(
    field: &dyn VelocityField,
    x: &Latent,
    k: usize,
    steps: usize,
    c: &Embedding,
    alpha: usize,
) -> Result<Latent> {
    if k + alpha > steps {
        return Err(Error::OutOfRange {
            what: "invert burst start",
            value: (k + alpha) as f64,
            min: 0.0,
            max: steps as f64,
        });
    }
    let dt = 1.0 / steps as f64;
    let mut cur = x.clone();
    for j in (k + 1..=k + alpha).rev() {
        cur = euler_step(field, &cur, TimePoint::at_step(j, steps)?, c, -dt)?;
    }
    Ok(cur)
}

/// Net displacement left by a strong-conditioning denoise burst followed by
/// a weak-conditioning inversion over the same interval.
///
/// For an embedding-linear, state-independent field this equals
/// `dt * cond * (c_high - c_low)` exactly; in general it approximates
/// `dt * A * grad J` at the step scale, where `A` is the alignment
/// coefficient of the guidance knobs.
pub fn reflective_displacement(
    field: &dyn VelocityField,
    x: &Latent,
    k: usize,
    cfg: &SamplerConfig,
) -> Result<RealVec> {
    let alpha = cfg.effective_alpha(k);
    let g = &cfg.guidance;
    let c_high = weighted(&cfg.c_text, &cfg.c_uncond, g.s_high, g.beta_high)?;
    let c_low = weighted(&cfg.c_text, &cfg.c_uncond, g.s_low, g.beta_low)?;
    let fwd = denoise_burst(field, x, k, cfg.steps, &c_high, alpha)?;
    let back = invert_burst(field, &fwd, k, cfg.steps, &c_low, alpha)?;
    Ok(back.vec().sub(x.vec()))
}

fn stage3_embedding(field: &dyn VelocityField, cfg: &SamplerConfig) -> Embedding {
    if field.supports_guidance_scale() {
        Embedding::new(cfg.c_text.vec().scaled(cfg.guidance.w))
    } else {
        cfg.c_text.clone()
    }
}

fn check_noise(field: &dyn VelocityField, noise: &Latent) -> Result<()> {
    if noise.dim() != field.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "initial noise vs field state",
            left: noise.dim(),
            right: field.state_dim(),
        });
    }
    Ok(())
}

/// Plain sampling: `steps` Euler steps under the text conditioning.
pub fn standard_sample(
    field: &dyn VelocityField,
    noise: &Latent,
    cfg: &SamplerConfig,
) -> Result<Trajectory> {
    check_noise(field, noise)?;
    let dt = cfg.dt();
    let c = stage3_embedding(field, cfg);
    let mut latents = Vec::with_capacity(cfg.steps + 1);
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut x = noise.clone();
    latents.push(x.clone());
    for k in 0..cfg.steps {
        x = euler_step(field, &x, TimePoint::at_step(k, cfg.steps)?, &c, dt)?;
        latents.push(x.clone());
        steps.push(StepRecord::default());
    }
    Ok(Trajectory {
        latents,
        steps,
        nfe: cfg.steps,
        t_steps: cfg.steps,
    })
}

/// Reflective sampling: on masked steps, compute the reflective
/// displacement, merge it with ratio `gamma`, then take the ordinary
/// denoising step at the original step time.
pub fn rf_sample(
    field: &dyn VelocityField,
    noise: &Latent,
    cfg: &SamplerConfig,
    objective: Option<&dyn AlignmentObjective>,
) -> Result<Trajectory> {
    check_noise(field, noise)?;
    let dt = cfg.dt();
    let c_step = stage3_embedding(field, cfg);
    let gamma = cfg.guidance.gamma;
    let mut latents = Vec::with_capacity(cfg.steps + 1);
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut nfe = 0usize;
    let mut x = noise.clone();
    latents.push(x.clone());
    for k in 0..cfg.steps {
        let t = TimePoint::at_step(k, cfg.steps)?;
        let mut rec = StepRecord::default();
        if cfg.rf_mask[k] {
            let drf = reflective_displacement(field, &x, k, cfg)?;
            nfe += 2 * cfg.effective_alpha(k);
            if cfg.record_diagnostics {
                rec.score_alignment = objective.map(|o| drf.dot(&o.grad(x.vec(), t)));
                rec.reflective = Some(drf.clone());
            }
            if gamma != 0.0 {
                let merged = advance(&x, &drf, gamma)?;
                x = merged;
            }
        }
        x = euler_step(field, &x, t, &c_step, dt)?;
        nfe += 1;
        latents.push(x.clone());
        steps.push(rec);
    }
    Ok(Trajectory {
        latents,
        steps,
        nfe,
        t_steps: cfg.steps,
    })
}
