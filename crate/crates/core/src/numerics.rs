//! Dense vector/matrix arithmetic, a seeded counter-based RNG, and
//! finite-difference utilities shared by every other module.
//!
//! Everything is `f64`. Dimensions stay small (<= 64), so the kernels are
//! plain loops with no layout tricks. Values are immutable after
//! construction and all operations are pure, so they can be called from any
//! number of worker threads.

use crate::error::{Error, Result};

/// Default central-difference step for gradients.
pub const GRAD_STEP: f64 = 1e-5;
/// Default step for directional second differences.
pub const HESSIAN_STEP: f64 = 1e-3;

/// Dense vector of finite 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct RealVec {
    values: Vec<f64>,
}

impl RealVec {
    /// Wraps a value list. Panics on NaN/Inf entries: non-finite state is a
    /// bug at the call site, not a runtime condition.
    pub fn new(values: Vec<f64>) -> Self {
        assert!(
            values.iter().all(|v| v.is_finite()),
            "RealVec entries must be finite"
        );
        RealVec { values }
    }

    pub fn zeros(dim: usize) -> Self {
        RealVec {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dot(&self, other: &RealVec) -> f64 {
        dot(self, other)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, a: f64) -> RealVec {
        RealVec::new(self.values.iter().map(|v| a * v).collect())
    }

    pub fn add(&self, other: &RealVec) -> RealVec {
        axpy(1.0, other, self)
    }

    pub fn sub(&self, other: &RealVec) -> RealVec {
        axpy(-1.0, other, self)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for RealVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Returns `a*x + y` elementwise. Panics on dimension mismatch.
pub fn axpy(a: f64, x: &RealVec, y: &RealVec) -> RealVec {
    assert_eq!(x.dim(), y.dim(), "axpy: dimension mismatch");
    RealVec::new(
        x.values
            .iter()
            .zip(&y.values)
            .map(|(xi, yi)| a * xi + yi)
            .collect(),
    )
}

/// Euclidean inner product. Panics on dimension mismatch.
pub fn dot(x: &RealVec, y: &RealVec) -> f64 {
    assert_eq!(x.dim(), y.dim(), "dot: dimension mismatch");
    x.values.iter().zip(&y.values).map(|(a, b)| a * b).sum()
}

/// Dense row-major matrix of finite 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMat {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl RealMat {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(rows * cols, values.len(), "RealMat shape mismatch");
        assert!(
            values.iter().all(|v| v.is_finite()),
            "RealMat entries must be finite"
        );
        RealMat { rows, cols, values }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        RealMat {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = RealMat::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        RealMat::new(r, c, rows.iter().flatten().copied().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        assert!(v.is_finite(), "RealMat entries must be finite");
        self.values[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Matrix-vector product. Panics on dimension mismatch.
    pub fn matvec(&self, x: &RealVec) -> RealVec {
        assert_eq!(self.cols, x.dim(), "matvec: dimension mismatch");
        let mut out = vec![0.0; self.rows];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.values[r * self.cols..(r + 1) * self.cols];
            *o = row.iter().zip(x.as_slice()).map(|(a, b)| a * b).sum();
        }
        RealVec::new(out)
    }
}

const PCG_MUL: u128 = 0x2360_ED05_1FC6_5DA4_4385_DF64_9FCC_F645;
const TWO_NEG_53: f64 = 1.0 / 9007199254740992.0; // 2^-53

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded PCG64 (XSL-RR 128/64) stream.
///
/// `(seed, stream)` fully determines the draw sequence; the 128-bit integer
/// arithmetic is exact on every platform, so the uniform stream is
/// bit-for-bit reproducible. Standard normals come from the two-uniform
/// Box-Muller transform (no ziggurat tables), so the normal stream is a pure
/// function of the uniform stream. Each worker owns its stream; parallel
/// code hands out distinct stream ids instead of sharing a generator.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u128,
    inc: u128,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut s = seed;
        let init_state = ((splitmix64(&mut s) as u128) << 64) | splitmix64(&mut s) as u128;
        let mut t = stream ^ 0x9E37_79B9_7F4A_7C15;
        let seq = ((splitmix64(&mut t) as u128) << 64) | splitmix64(&mut t) as u128;
        let mut rng = Rng {
            state: 0,
            inc: (seq << 1) | 1,
            spare_normal: None,
        };
        rng.advance();
        rng.state = rng.state.wrapping_add(init_state);
        rng.advance();
        rng
    }

    fn advance(&mut self) {
        self.state = self.state.wrapping_mul(PCG_MUL).wrapping_add(self.inc);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.advance();
        let rot = (self.state >> 122) as u32;
        let xored = ((self.state >> 64) as u64) ^ (self.state as u64);
        xored.rotate_right(rot)
    }

    /// Uniform draw strictly inside (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * TWO_NEG_53
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw via Box-Muller; the second value of each pair is
    /// cached so draws come in a fixed order.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_vec(&mut self, dim: usize) -> RealVec {
        RealVec::new((0..dim).map(|_| self.normal()).collect())
    }

    /// Samples an index proportional to the given non-negative weights.
    pub fn pick_weighted(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            u -= w;
            if u <= 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }
}

/// Central-difference gradient: per-coordinate `(f(x+h e_i) - f(x-h e_i)) / 2h`.
pub fn central_diff_grad<F>(f: F, x: &RealVec, h: f64) -> Result<RealVec>
where
    F: Fn(&RealVec) -> f64,
{
    if h <= 0.0 {
        return Err(Error::OutOfRange {
            what: "finite-difference step h",
            value: h,
            min: f64::MIN_POSITIVE,
            max: f64::INFINITY,
        });
    }
    let mut grad = vec![0.0; x.dim()];
    let mut probe = x.as_slice().to_vec();
    for i in 0..x.dim() {
        let xi = probe[i];
        probe[i] = xi + h;
        let fp = f(&RealVec::new(probe.clone()));
        probe[i] = xi - h;
        let fm = f(&RealVec::new(probe.clone()));
        probe[i] = xi;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                context: format!("f at probe x[{i}] +/- {h} (f+ = {fp}, f- = {fm})"),
            });
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(RealVec::new(grad))
}

/// Directional second difference `(f(x+hd) - 2f(x) + f(x-hd)) / h^2`,
/// approximating `d^T (grad^2 f)(x) d`.
pub fn directional_hessian<F>(f: F, x: &RealVec, d: &RealVec, h: f64) -> Result<f64>
where
    F: Fn(&RealVec) -> f64,
{
    if h <= 0.0 {
        return Err(Error::OutOfRange {
            what: "finite-difference step h",
            value: h,
            min: f64::MIN_POSITIVE,
            max: f64::INFINITY,
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
    let fp = f(&axpy(h, d, x));
    let f0 = f(x);
    let fm = f(&axpy(-h, d, x));
    if !fp.is_finite() || !f0.is_finite() || !fm.is_finite() {
        return Err(Error::NonFinite {
            context: format!("f at probes x +/- {h}*d (f+ = {fp}, f0 = {f0}, f- = {fm})"),
        });
    }
    Ok((fp - 2.0 * f0 + fm) / (h * h))
}
