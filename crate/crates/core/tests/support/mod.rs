//! Test-only oracles, independent of the closed forms they check.
//!
//! The kernel regression here estimates the conditional expectation
//! `E[y - z | x_tau = x0]` straight from simulated path draws, so it can
//! bracket the analytic mixture velocity without sharing any code with it.

use rfs_core::fields::{GaussianMixtureField, VelocityField};
use rfs_core::numerics::Rng;

/// Local-linear kernel regression estimate at one probe point.
pub struct RegressionEstimate {
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    pub effective_samples: f64,
}

#[allow(clippy::needless_range_loop)]
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|i, j| {
            a[*i][col]
                .abs()
                .partial_cmp(&a[*j][col].abs())
                .expect("finite")
        })?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let factor = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn invert_small(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cols.push(solve_small(a.to_vec(), e)?);
    }
    // cols[j] is the j-th column of the inverse
    let mut inv = vec![vec![0.0; n]; n];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            inv[i][j] = col[i];
        }
    }
    Some(inv)
}

/// Estimates the class-conditional path velocity at `x0` by simulating `n`
/// fresh `(z, y)` pairs, forming `x = (1-tau) z + tau y` and `g = y - z`,
/// and fitting a kernel-weighted local-linear model of `g` on `x` around
/// `x0`. Standard errors come from the weighted-residual sandwich, so the
/// 3-sigma band is honest under heteroskedastic noise.
pub fn mc_velocity_estimate(
    field: &GaussianMixtureField,
    class: usize,
    tau: f64,
    x0: &[f64],
    n: usize,
    bandwidth: f64,
    rng: &mut Rng,
) -> RegressionEstimate {
    let dim = x0.len();
    let p = dim + 1; // intercept + linear terms
    let mut design = vec![vec![0.0; p]; p]; // sum w * phi phi^T
    let mut rhs = vec![vec![0.0; p]; dim]; // per output coordinate
    let mut rows: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new(); // (w, phi, g)

    for _ in 0..n {
        let z = rng.normal_vec(dim);
        let y = field.sample_data(class, rng);
        let mut phi = vec![1.0; p];
        let mut g = vec![0.0; dim];
        let mut sq = 0.0;
        for i in 0..dim {
            let x = (1.0 - tau) * z[i] + tau * y[i];
            let centered = (x - x0[i]) / bandwidth;
            sq += centered * centered;
            phi[1 + i] = x - x0[i];
            g[i] = y[i] - z[i];
        }
        if sq > 25.0 {
            continue; // negligible kernel weight
        }
        let w = (-0.5 * sq).exp();
        for a in 0..p {
            for b in 0..p {
                design[a][b] += w * phi[a] * phi[b];
            }
        }
        for (j, gj) in g.iter().enumerate() {
            for a in 0..p {
                rhs[j][a] += w * phi[a] * gj;
            }
        }
        rows.push((w, phi, g));
    }

    let inv = invert_small(&design).expect("design matrix is invertible with enough draws");
    let beta: Vec<Vec<f64>> = (0..dim)
        .map(|j| {
            (0..p)
                .map(|a| (0..p).map(|b| inv[a][b] * rhs[j][b]).sum())
                .collect()
        })
        .collect();

    // HC0 sandwich: Var(beta0) = [M^-1 (sum w^2 r^2 phi phi^T) M^-1]_{00}
    let mut stderr = vec![0.0; dim];
    for j in 0..dim {
        let mut meat = vec![vec![0.0; p]; p];
        for (w, phi, g) in &rows {
            let fit: f64 = (0..p).map(|a| beta[j][a] * phi[a]).sum();
            let r = g[j] - fit;
            let w2r2 = w * w * r * r;
            for a in 0..p {
                for b in 0..p {
                    meat[a][b] += w2r2 * phi[a] * phi[b];
                }
            }
        }
        let mut var0 = 0.0;
        for a in 0..p {
            for b in 0..p {
                var0 += inv[0][a] * meat[a][b] * inv[b][0];
            }
        }
        stderr[j] = var0.max(0.0).sqrt();
    }

    let sum_w: f64 = rows.iter().map(|(w, _, _)| w).sum();
    let sum_w2: f64 = rows.iter().map(|(w, _, _)| w * w).sum();
    RegressionEstimate {
        value: beta.iter().map(|b| b[0]).collect(),
        stderr,
        effective_samples: if sum_w2 > 0.0 { sum_w * sum_w / sum_w2 } else { 0.0 },
    }
}

/// Marginal standard deviation of `x_tau` for one class; used to pick
/// probe-relative bandwidths.
pub fn path_sd(field: &GaussianMixtureField, class: usize, tau: f64) -> f64 {
    let a = 1.0 - tau;
    let b = tau;
    (a * a + b * b * field.vars()[class]).sqrt()
}

/// Draws an in-support probe point: one fresh path sample for the class.
pub fn sample_probe(
    field: &GaussianMixtureField,
    class: usize,
    tau: f64,
    rng: &mut Rng,
) -> Vec<f64> {
    let dim = field.state_dim();
    let z = rng.normal_vec(dim);
    let y = field.sample_data(class, rng);
    (0..dim)
        .map(|i| (1.0 - tau) * z[i] + tau * y[i])
        .collect()
}
