//! Numerical verification of the sampler's optimization claims: the ascent
//! inequality and first-order proportionality of the reflective
//! displacement, the quadratic remainder in the semantic direction, the
//! closed-form optimal merge ratio, and paired-seed sweeps along the
//! guidance axes.

use crate::embedding::{semantic_direction, Embedding};
use crate::error::{Error, Result};
use crate::exec::run_indexed;
use crate::fields::{AlignmentObjective, Latent, TimePoint, VelocityField};
use crate::numerics::{
    axpy, central_diff_grad, directional_hessian, RealVec, Rng, GRAD_STEP, HESSIAN_STEP,
};
use crate::sampler::{
    reflective_displacement, rf_sample, standard_sample, MaskPolicy, SamplerConfig,
};

/// Stream id used to draw initial noise for a given seed.
pub const NOISE_STREAM: u64 = 0;
/// Stream id used for probe selection inside the checks.
const PROBE_STREAM: u64 = 1;
/// Step used for directional derivatives in embedding space.
const EMB_DIFF_STEP: f64 = 1e-3;

/// Aggregate first-order behavior of the reflective displacement at
/// on-trajectory probes.
#[derive(Debug, Clone)]
pub struct FirstOrderReport {
    /// Mean cosine between the displacement and the score gradient.
    pub cosine: f64,
    /// Fraction of probes with a positive displacement/gradient inner product.
    pub ascent_fraction: f64,
    /// Mean relative error of the displacement against
    /// `dt * A * (directional embedding derivative)`.
    pub proportionality_residual: f64,
    /// Largest displacement norm seen across probes.
    pub max_displacement_norm: f64,
    /// Least-squares ratio between the conditioned drift gap and the score
    /// gradient; reported because the theory only fixes it up to a constant.
    pub velocity_gap_score_ratio: f64,
    pub probes: usize,
    pub alignment_coefficient: f64,
    /// False when `A <= 0`; the ascent claim's precondition fails and the
    /// report is descriptive only.
    pub ascent_precondition: bool,
}

impl FirstOrderReport {
    /// `key: value` summary consumed by the CLI.
    pub fn to_text(&self) -> String {
        format!(
            "probes: {}\nalignment_coefficient: {}\nascent_precondition: {}\n\
             ascent_fraction: {}\ncosine: {}\nproportionality_residual: {}\n\
             max_displacement_norm: {}\nvelocity_gap_score_ratio: {}\n",
            self.probes,
            self.alignment_coefficient,
            self.ascent_precondition,
            self.ascent_fraction,
            self.cosine,
            self.proportionality_residual,
            self.max_displacement_norm,
            self.velocity_gap_score_ratio,
        )
    }
}

/// Measured objective change along a fixed direction over a merge-ratio
/// grid, with the closed-form optimum when the direction is concave.
#[derive(Debug, Clone)]
pub struct SecondOrderReport {
    pub gamma_grid: Vec<f64>,
    pub delta_j: Vec<f64>,
    /// `<d, grad J> / |d^T H d|`; absent when the direction is not concave.
    pub gamma_star_closed: Option<f64>,
    /// Grid value with the largest measured improvement.
    pub gamma_star_empirical: f64,
    pub quadratic_fit_r2: f64,
    pub concave: bool,
}

impl SecondOrderReport {
    pub fn to_text(&self) -> String {
        let closed = self
            .gamma_star_closed
            .map(|g| g.to_string())
            .unwrap_or_else(|| "none (direction not concave)".into());
        format!(
            "concave: {}\ngamma_star_closed: {}\ngamma_star_empirical: {}\nquadratic_fit_r2: {}\n",
            self.concave, closed, self.gamma_star_empirical, self.quadratic_fit_r2,
        )
    }

    /// CSV of the measured improvement curve.
    pub fn write_csv<W: std::io::Write>(
        &self,
        w: &mut W,
        version: &str,
        seed: u64,
    ) -> std::io::Result<()> {
        let rows: Vec<Vec<String>> = self
            .gamma_grid
            .iter()
            .zip(&self.delta_j)
            .map(|(g, d)| vec![g.to_string(), d.to_string()])
            .collect();
        crate::harness::csvio::write_csv(w, version, seed, &["gamma", "delta_j"], &rows)
    }
}

/// Residual decay of the displacement after removing its measured affine
/// part in the semantic-direction scale.
#[derive(Debug, Clone)]
pub struct RemainderReport {
    pub scales: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Log-log regression slope; `None` when residuals sit at the noise
    /// floor and the fit is reported as exact instead.
    pub slope: Option<f64>,
    pub exact_floor: bool,
}

impl RemainderReport {
    pub fn to_text(&self) -> String {
        let slope = self
            .slope
            .map(|s| s.to_string())
            .unwrap_or_else(|| "none (residuals at noise floor, affine part exact)".into());
        let pairs: Vec<String> = self
            .scales
            .iter()
            .zip(&self.residuals)
            .map(|(s, r)| format!("{s}:{r}"))
            .collect();
        format!(
            "exact_floor: {}\nslope: {}\nresiduals: {}\n",
            self.exact_floor,
            slope,
            pairs.join(", "),
        )
    }
}

/// One row of a guidance-axis sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub mean_j: f64,
    pub std_j: f64,
    pub nfe: usize,
}

/// Paired-seed sweep results: aggregate rows plus the per-seed objective
/// matrix for paired statistics.
#[derive(Debug, Clone)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    /// `final_j[value_index][seed_index]`
    pub final_j: Vec<Vec<f64>>,
    pub seeds: Vec<u64>,
}

impl SweepTable {
    /// One CSV row per axis value: `value,mean_j,std_j,nfe`.
    pub fn write_csv<W: std::io::Write>(
        &self,
        w: &mut W,
        version: &str,
        seed: u64,
    ) -> std::io::Result<()> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.value.to_string(),
                    r.mean_j.to_string(),
                    r.std_j.to_string(),
                    r.nfe.to_string(),
                ]
            })
            .collect();
        crate::harness::csvio::write_csv(
            w,
            version,
            seed,
            &[self.axis.label(), "mean_j", "std_j", "nfe"],
            &rows,
        )
    }
}

/// Sweepable configuration axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Gamma,
    /// `s_high - s_low` with `s_low` held at the template value.
    Gap,
    /// Fraction of leading steps that run the reflective stages.
    RfFraction,
    Steps,
}

impl SweepAxis {
    pub fn label(&self) -> &'static str {
        match self {
            SweepAxis::Gamma => "gamma",
            SweepAxis::Gap => "gap",
            SweepAxis::RfFraction => "rf_fraction",
            SweepAxis::Steps => "steps",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gamma" => Some(SweepAxis::Gamma),
            "gap" => Some(SweepAxis::Gap),
            "rf-fraction" | "rf_fraction" => Some(SweepAxis::RfFraction),
            "steps" => Some(SweepAxis::Steps),
            _ => None,
        }
    }
}

/// Template a sweep perturbs along one axis.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub steps: usize,
    pub guidance: crate::embedding::GuidanceParams,
    pub c_text: Embedding,
    pub c_uncond: Embedding,
    pub mask: MaskPolicy,
}

impl SweepSpec {
    pub fn config_for(&self, axis: SweepAxis, value: f64) -> Result<SamplerConfig> {
        let mut guidance = self.guidance.clone();
        let mut steps = self.steps;
        let mut mask = self.mask.clone();
        match axis {
            SweepAxis::Gamma => guidance.gamma = value,
            SweepAxis::Gap => guidance.s_high = guidance.s_low + value,
            SweepAxis::RfFraction => mask = MaskPolicy::Fraction(value),
            SweepAxis::Steps => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::OutOfRange {
                        what: "steps axis value",
                        value,
                        min: 1.0,
                        max: f64::INFINITY,
                    });
                }
                steps = value as usize;
            }
        }
        SamplerConfig::new(
            steps,
            guidance,
            self.c_text.clone(),
            self.c_uncond.clone(),
            &mask,
        )
    }
}

fn unit_interval_states(
    field: &dyn VelocityField,
    cfg: &SamplerConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<(Latent, usize)>> {
    // probe pool: partially denoised states reached by plain sampling
    let lo = (0.2 * cfg.steps as f64).ceil() as usize;
    let hi = (0.8 * cfg.steps as f64).floor() as usize;
    let per_run = hi.saturating_sub(lo) + 1;
    if per_run == 0 || hi >= cfg.steps {
        return Err(Error::OutOfRange {
            what: "probe window (steps too small)",
            value: cfg.steps as f64,
            min: 5.0,
            max: f64::INFINITY,
        });
    }
    let runs = count / per_run + 2;
    let mut pool = Vec::with_capacity(runs * per_run);
    for r in 0..runs as u64 {
        let mut noise_rng = Rng::new(seed.wrapping_add(r), NOISE_STREAM);
        let noise = Latent::new(noise_rng.normal_vec(field.state_dim()));
        let traj = standard_sample(field, &noise, cfg)?;
        for k in lo..=hi {
            pool.push((traj.latents[k].clone(), k));
        }
    }
    // partial Fisher-Yates: take `count` distinct pool entries
    let mut pick = Rng::new(seed, PROBE_STREAM);
    let mut taken = Vec::with_capacity(count);
    let mut remaining = pool;
    for _ in 0..count {
        let idx = (pick.next_u64() % remaining.len() as u64) as usize;
        taken.push(remaining.swap_remove(idx));
    }
    Ok(taken)
}

fn velocity_embedding_derivative(
    field: &dyn VelocityField,
    x: &Latent,
    t: TimePoint,
    at: &Embedding,
    direction: &Embedding,
) -> RealVec {
    let h = EMB_DIFF_STEP;
    let plus = Embedding::new(axpy(h, direction.vec(), at.vec()));
    let minus = Embedding::new(axpy(-h, direction.vec(), at.vec()));
    let vp = field.velocity(x, t, &plus);
    let vm = field.velocity(x, t, &minus);
    vp.sub(&vm).scaled(1.0 / (2.0 * h))
}

/// Probes the reflective displacement against the analytic score gradient
/// at on-trajectory states with `tau` in [0.2, 0.8].
pub fn check_first_order(
    field: &dyn VelocityField,
    objective: &dyn AlignmentObjective,
    cfg: &SamplerConfig,
    probes: usize,
    seed: u64,
) -> Result<FirstOrderReport> {
    if probes == 0 {
        return Err(Error::OutOfRange {
            what: "probe count",
            value: 0.0,
            min: 1.0,
            max: f64::INFINITY,
        });
    }
    let coeff = cfg.guidance.alignment_coefficient();
    let u = semantic_direction(&cfg.c_text, &cfg.c_uncond)?;
    let dt = cfg.dt();
    let states = unit_interval_states(field, cfg, probes, seed)?;

    let mut cos_sum = 0.0;
    let mut ascent = 0usize;
    let mut resid_sum = 0.0;
    let mut resid_count = 0usize;
    let mut max_norm = 0.0f64;
    let mut gap_dot_grad = 0.0;
    let mut grad_sq = 0.0;
    for (x, k) in &states {
        let t = TimePoint::at_step(*k, cfg.steps)?;
        let drf = reflective_displacement(field, x, *k, cfg)?;
        let grad = objective.grad(x.vec(), t);
        let inner = drf.dot(&grad);
        let norms = drf.norm() * grad.norm();
        if norms > 0.0 {
            cos_sum += inner / norms;
        }
        if inner > 0.0 {
            ascent += 1;
        }
        max_norm = max_norm.max(drf.norm());

        let linear_term =
            velocity_embedding_derivative(field, x, t, &cfg.c_uncond, &u).scaled(dt * coeff);
        let denom = linear_term.norm();
        if denom > 0.0 {
            resid_sum += drf.sub(&linear_term).norm() / denom;
            resid_count += 1;
        }

        let gap = field
            .velocity(x, t, &cfg.c_text)
            .sub(&field.velocity(x, t, &cfg.c_uncond));
        gap_dot_grad += gap.dot(&grad);
        grad_sq += grad.dot(&grad);
    }
    let n = states.len() as f64;
    Ok(FirstOrderReport {
        cosine: cos_sum / n,
        ascent_fraction: ascent as f64 / n,
        proportionality_residual: if resid_count > 0 {
            resid_sum / resid_count as f64
        } else {
            0.0
        },
        max_displacement_norm: max_norm,
        velocity_gap_score_ratio: if grad_sq > 0.0 {
            gap_dot_grad / grad_sq
        } else {
            0.0
        },
        probes: states.len(),
        alignment_coefficient: coeff,
        ascent_precondition: coeff > 0.0,
    })
}

/// Shrinks the semantic direction by each scale, subtracts the measured
/// affine part of the displacement in that scale, and fits the residual
/// decay. A quadratic remainder shows up as a log-log slope of 2.
pub fn check_remainder_scaling(
    field: &dyn VelocityField,
    cfg: &SamplerConfig,
    scales: &[f64],
    probes: usize,
    seed: u64,
) -> Result<RemainderReport> {
    if scales.len() < 2 {
        return Err(Error::DegenerateFit {
            context: "remainder scaling needs at least two scales".into(),
        });
    }
    if scales.iter().any(|s| *s <= 0.0) || scales.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::DegenerateFit {
            context: "scales must be positive and strictly decreasing".into(),
        });
    }
    let u = semantic_direction(&cfg.c_text, &cfg.c_uncond)?;
    let cfg_at = |scale: f64| -> Result<SamplerConfig> {
        let c_text = Embedding::new(axpy(scale, u.vec(), cfg.c_uncond.vec()));
        SamplerConfig::new(
            cfg.steps,
            cfg.guidance.clone(),
            c_text,
            cfg.c_uncond.clone(),
            &MaskPolicy::Bits(cfg.rf_mask.clone()),
        )
    };
    let states = unit_interval_states(field, cfg, probes, seed)?;
    let h = 1e-4;
    let cfg_zero = cfg_at(0.0)?;
    let cfg_plus = cfg_at(h)?;
    let cfg_minus = cfg_at(-h)?;

    let mut residuals = vec![0.0f64; scales.len()];
    let mut magnitude = 0.0f64;
    for (x, k) in &states {
        let base = reflective_displacement(field, x, *k, &cfg_zero)?;
        let plus = reflective_displacement(field, x, *k, &cfg_plus)?;
        let minus = reflective_displacement(field, x, *k, &cfg_minus)?;
        let slope_vec = plus.sub(&minus).scaled(1.0 / (2.0 * h));
        for (j, scale) in scales.iter().enumerate() {
            let measured = reflective_displacement(field, x, *k, &cfg_at(*scale)?)?;
            let affine = axpy(*scale, &slope_vec, &base);
            residuals[j] += measured.sub(&affine).norm();
            magnitude = magnitude.max(measured.norm());
        }
    }
    for r in &mut residuals {
        *r /= states.len() as f64;
    }
    let floor = 1e-10 * magnitude.max(1e-12);
    if residuals.iter().all(|r| *r <= floor) {
        return Ok(RemainderReport {
            scales: scales.to_vec(),
            residuals,
            slope: None,
            exact_floor: true,
        });
    }
    // log-log OLS
    let xs: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = residuals.iter().map(|r| r.max(1e-300).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit {
            context: "identical scales in log space".into(),
        });
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(RemainderReport {
        scales: scales.to_vec(),
        residuals,
        slope: Some(sxy / sxx),
        exact_floor: false,
    })
}

/// Measures `J(x + gamma d) - J(x)` over a merge-ratio grid and compares the
/// empirical optimum with the closed-form `<d, grad J> / |d^T H d|`.
pub fn check_second_order<F>(
    j: F,
    x: &RealVec,
    d: &RealVec,
    gamma_grid: &[f64],
) -> Result<SecondOrderReport>
where
    F: Fn(&RealVec) -> f64,
{
    if gamma_grid.len() < 3 || gamma_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::DegenerateFit {
            context: "gamma grid must be strictly increasing with >= 3 points".into(),
        });
    }
    if d.norm() == 0.0 {
        return Err(Error::OutOfRange {
            what: "direction norm",
            value: 0.0,
            min: f64::MIN_POSITIVE,
            max: f64::INFINITY,
        });
    }
    let j0 = j(x);
    if !j0.is_finite() {
        return Err(Error::NonFinite {
            context: "objective at the expansion point".into(),
        });
    }
    let mut delta_j = Vec::with_capacity(gamma_grid.len());
    for g in gamma_grid {
        let val = j(&axpy(*g, d, x));
        if !val.is_finite() {
            return Err(Error::NonFinite {
                context: format!("objective at gamma = {g}"),
            });
        }
        delta_j.push(val - j0);
    }
    let grad = central_diff_grad(&j, x, GRAD_STEP)?;
    let g_lin = d.dot(&grad);
    let curv = directional_hessian(&j, x, d, HESSIAN_STEP)?;
    let concave = curv < 0.0;
    let gamma_star_closed = if concave { Some(g_lin / curv.abs()) } else { None };
    let best = delta_j
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite deltas"))
        .map(|(i, _)| gamma_grid[i])
        .expect("non-empty grid");

    // least-squares fit of delta_j = b*gamma + a*gamma^2 (no intercept)
    let (mut s2, mut s3, mut s4, mut sy1, mut sy2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (g, y) in gamma_grid.iter().zip(&delta_j) {
        s2 += g * g;
        s3 += g * g * g;
        s4 += g * g * g * g;
        sy1 += g * y;
        sy2 += g * g * y;
    }
    let det = s2 * s4 - s3 * s3;
    let r2 = if det.abs() < 1e-300 {
        0.0
    } else {
        let b = (s4 * sy1 - s3 * sy2) / det;
        let a = (s2 * sy2 - s3 * sy1) / det;
        let mean = delta_j.iter().sum::<f64>() / delta_j.len() as f64;
        let ss_tot: f64 = delta_j.iter().map(|y| (y - mean) * (y - mean)).sum();
        let ss_res: f64 = gamma_grid
            .iter()
            .zip(&delta_j)
            .map(|(g, y)| {
                let fit = b * g + a * g * g;
                (y - fit) * (y - fit)
            })
            .sum();
        if ss_tot <= 1e-300 {
            1.0
        } else {
            (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
        }
    };
    Ok(SecondOrderReport {
        gamma_grid: gamma_grid.to_vec(),
        delta_j,
        gamma_star_closed,
        gamma_star_empirical: best,
        quadratic_fit_r2: r2,
        concave,
    })
}

/// Paired-seed sweep of the reflective sampler along one axis. The same
/// seed list (and therefore the same initial noise) is replayed at every
/// axis value, and results merge in seed order regardless of scheduling.
pub fn sweep(
    field: &dyn VelocityField,
    objective: &dyn AlignmentObjective,
    spec: &SweepSpec,
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
    workers: usize,
) -> Result<SweepTable> {
    if values.len() < 2 {
        return Err(Error::DegenerateFit {
            context: "sweep needs at least two axis values".into(),
        });
    }
    if seeds.len() < 30 {
        return Err(Error::DegenerateFit {
            context: format!("sweep needs at least 30 seeds, got {}", seeds.len()),
        });
    }
    let mut rows = Vec::with_capacity(values.len());
    let mut final_j = Vec::with_capacity(values.len());
    for value in values {
        let cfg = spec.config_for(axis, *value)?;
        let end = TimePoint::new(1.0)?;
        let outcomes: Vec<Result<(f64, usize)>> = run_indexed(seeds.len(), workers, |i| {
            let mut noise_rng = Rng::new(seeds[i], NOISE_STREAM);
            let noise = Latent::new(noise_rng.normal_vec(field.state_dim()));
            let traj = rf_sample(field, &noise, &cfg, None)?;
            Ok((objective.value(traj.final_latent().vec(), end), traj.nfe))
        });
        let mut js = Vec::with_capacity(seeds.len());
        let mut nfe = 0usize;
        for outcome in outcomes {
            let (j, n) = outcome?;
            js.push(j);
            nfe = n;
        }
        let (mean, std) = mean_std(&js);
        rows.push(SweepRow {
            value: *value,
            mean_j: mean,
            std_j: std,
            nfe,
        });
        final_j.push(js);
    }
    Ok(SweepTable {
        axis,
        rows,
        final_j,
        seeds: seeds.to_vec(),
    })
}

/// Sample mean and (n-1)-normalized standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Result of an exact one-sided paired sign test for `a > b`.
#[derive(Debug, Clone)]
pub struct SignTest {
    pub greater: usize,
    pub less: usize,
    pub ties: usize,
    /// P(wins >= observed) under a fair coin on the non-tied pairs.
    pub p_value: f64,
}

/// Exact binomial sign test on paired observations; ties are dropped.
pub fn paired_sign_test(a: &[f64], b: &[f64]) -> SignTest {
    assert_eq!(a.len(), b.len(), "sign test needs paired samples");
    let mut greater = 0usize;
    let mut less = 0usize;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            greater += 1;
        } else if x < y {
            less += 1;
        }
    }
    let n = greater + less;
    let p_value = if n == 0 {
        1.0
    } else {
        binomial_upper_tail(n, greater)
    };
    SignTest {
        greater,
        less,
        ties: a.len() - n,
        p_value,
    }
}

fn binomial_upper_tail(n: usize, x: usize) -> f64 {
    if n > 1000 {
        // normal approximation with continuity correction
        let mean = n as f64 / 2.0;
        let sd = (n as f64 / 4.0).sqrt();
        let z = (x as f64 - 0.5 - mean) / sd;
        return 0.5 * erfc_approx(z / std::f64::consts::SQRT_2);
    }
    // exact: pmf(k) for Bin(n, 1/2) via the multiplicative recurrence
    let mut pmf = 0.5f64.powi(n as i32);
    let mut tail = if x == 0 { pmf } else { 0.0 };
    for k in 1..=n {
        pmf *= (n - k + 1) as f64 / k as f64;
        if k >= x {
            tail += pmf;
        }
    }
    tail.min(1.0)
}

fn erfc_approx(x: f64) -> f64 {
    // Abramowitz-Stegun 7.1.26 style rational approximation
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let ax = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * ax);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-ax * ax).exp();
    1.0 - sign * erf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::GuidanceParams;
    use crate::fields::{EmbedMap, GaussianMixtureField, LinearEmbeddingField, TimeGain};
    use crate::numerics::RealMat;

    fn nested_mixture(map: EmbedMap) -> GaussianMixtureField {
        GaussianMixtureField::new(
            vec![RealVec::new(vec![0.0, 0.0]), RealVec::new(vec![0.5, 0.0])],
            vec![0.25, 4.0],
            vec![0.5, 0.5],
            map,
        )
        .unwrap()
    }

    fn mixture_cfg(steps: usize) -> SamplerConfig {
        SamplerConfig::new(
            steps,
            GuidanceParams::default(),
            Embedding::one_hot(0, 2),
            Embedding::uniform(2),
            &MaskPolicy::All,
        )
        .unwrap()
    }

    #[test]
    fn first_order_is_exact_on_embedding_linear_field() {
        let field = LinearEmbeddingField::new(
            RealMat::zeros(2, 2),
            RealVec::new(vec![0.2, -0.3]),
            RealMat::from_rows(&[vec![1.0, 0.4], vec![-0.3, 0.9]]),
            TimeGain::Constant(1.0),
        )
        .unwrap();
        let c_text = Embedding::from_values(vec![0.9, -0.4]);
        let cfg = SamplerConfig::new(
            10,
            GuidanceParams {
                s_high: 3.5,
                beta_high: 0.7,
                s_low: 0.0,
                beta_low: 0.3,
                ..GuidanceParams::default()
            },
            c_text.clone(),
            Embedding::zeros(2),
            &MaskPolicy::All,
        )
        .unwrap();
        let objective = field.alignment_objective(&c_text, &Embedding::zeros(2)).unwrap();
        let report = check_first_order(&field, &objective, &cfg, 50, 3).unwrap();
        assert!(report.ascent_precondition);
        assert!(
            report.proportionality_residual <= 1e-10,
            "residual {}",
            report.proportionality_residual
        );
        assert_eq!(report.ascent_fraction, 1.0);
        assert!(report.cosine > 0.999999);
    }

    #[test]
    fn first_order_zero_coefficient_gives_vanishing_displacement() {
        // symmetric high/low states on a state-independent field
        let field = LinearEmbeddingField::new(
            RealMat::zeros(2, 2),
            RealVec::new(vec![0.4, 0.1]),
            RealMat::from_rows(&[vec![0.8, 0.0], vec![0.1, 0.5]]),
            TimeGain::Constant(1.0),
        )
        .unwrap();
        let c_text = Embedding::from_values(vec![1.0, 0.2]);
        let c_uncond = Embedding::from_values(vec![-0.3, 0.5]);
        let cfg = SamplerConfig::new(
            10,
            GuidanceParams {
                s_high: 1.7,
                beta_high: 0.4,
                s_low: 1.7,
                beta_low: 0.4,
                ..GuidanceParams::default()
            },
            c_text.clone(),
            c_uncond.clone(),
            &MaskPolicy::All,
        )
        .unwrap();
        let objective = field.alignment_objective(&c_text, &c_uncond).unwrap();
        let report = check_first_order(&field, &objective, &cfg, 40, 9).unwrap();
        assert!(!report.ascent_precondition);
        assert!(report.max_displacement_norm <= 1e-12);
    }

    #[test]
    fn first_order_mixture_mostly_ascends() {
        let field = nested_mixture(EmbedMap::Softmax { sharpness: 2.0 });
        let objective = field.posterior_objective(0).unwrap();
        let cfg = mixture_cfg(16);
        let report = check_first_order(&field, &objective, &cfg, 100, 11).unwrap();
        assert!(report.ascent_precondition);
        assert!(report.ascent_fraction >= 0.9, "{}", report.ascent_fraction);
        assert!(report.velocity_gap_score_ratio > 0.0);
    }

    #[test]
    fn remainder_is_exact_on_linear_field_and_quadratic_on_mixture() {
        let field = LinearEmbeddingField::new(
            RealMat::from_rows(&[vec![-0.2, 0.1], vec![0.0, -0.3]]),
            RealVec::new(vec![0.3, 0.0]),
            RealMat::from_rows(&[vec![1.0, 0.2], vec![0.1, 0.7]]),
            TimeGain::Constant(1.0),
        )
        .unwrap();
        let gentle = GuidanceParams {
            s_high: 2.0,
            s_low: 0.0,
            ..GuidanceParams::default()
        };
        let cfg = SamplerConfig::new(
            10,
            gentle.clone(),
            Embedding::from_values(vec![0.8, 0.1]),
            Embedding::zeros(2),
            &MaskPolicy::All,
        )
        .unwrap();
        let scales = [1.0, 0.5, 0.25, 0.125];
        let report = check_remainder_scaling(&field, &cfg, &scales, 16, 5).unwrap();
        assert!(report.exact_floor, "residuals {:?}", report.residuals);
        assert!(report.slope.is_none());

        let field = nested_mixture(EmbedMap::Softmax { sharpness: 2.0 });
        let cfg = SamplerConfig::new(
            16,
            gentle,
            Embedding::one_hot(0, 2),
            Embedding::uniform(2),
            &MaskPolicy::All,
        )
        .unwrap();
        let report = check_remainder_scaling(&field, &cfg, &scales, 24, 5).unwrap();
        let slope = report.slope.expect("nonlinear field has a real slope");
        assert!(
            (slope - 2.0).abs() <= 0.3,
            "slope {slope}, residuals {:?}",
            report.residuals
        );
    }

    #[test]
    fn remainder_rejects_bad_scales() {
        let field = nested_mixture(EmbedMap::Softmax { sharpness: 2.0 });
        let cfg = mixture_cfg(16);
        assert!(check_remainder_scaling(&field, &cfg, &[1.0], 4, 1).is_err());
        assert!(check_remainder_scaling(&field, &cfg, &[0.5, 1.0], 4, 1).is_err());
    }

    #[test]
    fn second_order_hand_example() {
        // J = -x^2/2 at x = 1 along d = -1/2: gamma* = 2
        let j = |x: &RealVec| -0.5 * x[0] * x[0];
        let x = RealVec::new(vec![1.0]);
        let d = RealVec::new(vec![-0.5]);
        let grid: Vec<f64> = (0..=16).map(|i| 0.25 * i as f64).collect();
        let report = check_second_order(j, &x, &d, &grid).unwrap();
        assert!(report.concave);
        let closed = report.gamma_star_closed.unwrap();
        assert!((closed - 2.0).abs() < 1e-5, "{closed}");
        assert!((report.gamma_star_empirical - 2.0).abs() <= 0.25 + 1e-12);
        assert!(report.quadratic_fit_r2 >= 0.999999);
    }

    #[test]
    fn second_order_flags_linear_objective() {
        let j = |x: &RealVec| 3.0 * x[0];
        let report = check_second_order(
            j,
            &RealVec::new(vec![0.0]),
            &RealVec::new(vec![1.0]),
            &[0.0, 0.5, 1.0, 1.5],
        )
        .unwrap();
        assert!(!report.concave);
        assert!(report.gamma_star_closed.is_none());
    }

    #[test]
    fn second_order_mixture_has_interior_maximum() {
        let field = nested_mixture(EmbedMap::Softmax { sharpness: 2.0 });
        let cfg = mixture_cfg(16);
        let t = TimePoint::at_step(8, 16).unwrap();
        let x = Latent::from_values(vec![0.9, 0.4]);
        let d = reflective_displacement(&field, &x, 8, &cfg).unwrap();
        let j = |p: &RealVec| field.gm_log_posterior(p, t, 0).unwrap();
        let grid: Vec<f64> = (0..=20).map(|i| 4.0 * i as f64).collect();
        let report = check_second_order(j, x.vec(), &d, &grid).unwrap();
        let last = *report.delta_j.last().unwrap();
        let best = report
            .delta_j
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(best > 0.0, "reflective direction should improve J");
        assert!(best > last, "curve should fall after the optimum");
    }

    #[test]
    fn sweep_gamma_zero_row_equals_standard_sampling() {
        let field = nested_mixture(EmbedMap::Softmax { sharpness: 2.0 });
        let objective = field.posterior_objective(0).unwrap();
        let spec = SweepSpec {
            steps: 12,
            guidance: GuidanceParams::default(),
            c_text: Embedding::one_hot(0, 2),
            c_uncond: Embedding::uniform(2),
            mask: MaskPolicy::All,
        };
        let seeds: Vec<u64> = (100..140).collect();
        let table = sweep(
            &field,
            &objective,
            &spec,
            SweepAxis::Gamma,
            &[0.0, 0.5],
            &seeds,
            1,
        )
        .unwrap();
        assert_eq!(table.rows.len(), 2);
        let cfg = spec.config_for(SweepAxis::Gamma, 0.0).unwrap();
        let end = TimePoint::new(1.0).unwrap();
        for (i, seed) in seeds.iter().enumerate() {
            let mut rng = Rng::new(*seed, NOISE_STREAM);
            let noise = Latent::new(rng.normal_vec(2));
            let traj = standard_sample(&field, &noise, &cfg).unwrap();
            let j = objective.value(traj.final_latent().vec(), end);
            assert_eq!(table.final_j[0][i], j);
        }
    }

    #[test]
    fn sweep_is_deterministic_across_schedulers() {
        let field = nested_mixture(EmbedMap::Softmax { sharpness: 2.0 });
        let objective = field.posterior_objective(0).unwrap();
        let spec = SweepSpec {
            steps: 8,
            guidance: GuidanceParams::default(),
            c_text: Embedding::one_hot(0, 2),
            c_uncond: Embedding::uniform(2),
            mask: MaskPolicy::All,
        };
        let seeds: Vec<u64> = (0..32).collect();
        let a = sweep(&field, &objective, &spec, SweepAxis::Gamma, &[0.0, 0.5, 1.0], &seeds, 1)
            .unwrap();
        let b = sweep(&field, &objective, &spec, SweepAxis::Gamma, &[0.0, 0.5, 1.0], &seeds, 0)
            .unwrap();
        for (ra, rb) in a.final_j.iter().zip(&b.final_j) {
            assert_eq!(ra, rb);
        }
    }

    #[test]
    fn sweep_steps_axis_rebuilds_the_schedule() {
        let field = nested_mixture(EmbedMap::Softmax { sharpness: 2.0 });
        let objective = field.posterior_objective(0).unwrap();
        let spec = SweepSpec {
            steps: 8,
            guidance: GuidanceParams::default(),
            c_text: Embedding::one_hot(0, 2),
            c_uncond: Embedding::uniform(2),
            mask: MaskPolicy::All,
        };
        let seeds: Vec<u64> = (0..32).collect();
        let table = sweep(&field, &objective, &spec, SweepAxis::Steps, &[8.0, 16.0], &seeds, 1)
            .unwrap();
        // fully masked at alpha = 1: 3 evaluations per step
        assert_eq!(table.rows[0].nfe, 24);
        assert_eq!(table.rows[1].nfe, 48);
        assert!(spec.config_for(SweepAxis::Steps, 12.5).is_err());
        assert!(spec.config_for(SweepAxis::Steps, 0.0).is_err());
    }

    #[test]
    fn sweep_enforces_preconditions() {
        let field = nested_mixture(EmbedMap::Softmax { sharpness: 2.0 });
        let objective = field.posterior_objective(0).unwrap();
        let spec = SweepSpec {
            steps: 8,
            guidance: GuidanceParams::default(),
            c_text: Embedding::one_hot(0, 2),
            c_uncond: Embedding::uniform(2),
            mask: MaskPolicy::All,
        };
        let few_seeds: Vec<u64> = (0..10).collect();
        assert!(sweep(&field, &objective, &spec, SweepAxis::Gamma, &[0.0, 1.0], &few_seeds, 1)
            .is_err());
        let seeds: Vec<u64> = (0..32).collect();
        assert!(sweep(&field, &objective, &spec, SweepAxis::Gamma, &[0.5], &seeds, 1).is_err());
    }

    #[test]
    fn sign_test_hand_values() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 0.0];
        let b = vec![0.0; 10];
        let t = paired_sign_test(&a, &b);
        assert_eq!(t.greater, 9);
        assert_eq!(t.less, 0);
        assert_eq!(t.ties, 1);
        // P(Bin(9, 1/2) >= 9) = 1/512
        assert!((t.p_value - 1.0 / 512.0).abs() < 1e-12);
    }

    #[test]
    fn sign_test_large_n_uses_normal_tail() {
        let n = 2000;
        let a: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let b = vec![0.5; n];
        let t = paired_sign_test(&a, &b);
        assert!((t.p_value - 0.5).abs() < 0.05, "{}", t.p_value);
    }
}
