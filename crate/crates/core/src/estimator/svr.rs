//! ε-insensitive support-vector regression, dual solved by SMO with
//! second-order working-set selection.

use crate::error::{Error, Result};
use crate::estimator::EstimatorDataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrConfig {
    /// Box constraint.
    pub c: f64,
    /// Tube half-width.
    pub epsilon: f64,
    /// RBF bandwidth; `None` means `1 / (dim · var(all feature entries))`.
    pub gamma: Option<f64>,
    /// Stop once the maximal KKT violation falls below this.
    pub tolerance: f64,
    /// Iteration cap is this many sweeps over the `2n` dual variables.
    pub max_sweeps: usize,
    /// Z-score every feature column with training statistics before the kernel.
    pub standardize: bool,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.01,
            gamma: None,
            tolerance: 1e-3,
            max_sweeps: 10_000,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrModel {
    /// `α_i − α_i*` for each retained support vector.
    pub coefficients: Vec<f64>,
    pub support_vectors: Vec<Vec<f64>>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    pub epsilon: f64,
    /// Column shift and scale applied to raw features before the kernel.
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

impl SvrModel {
    fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (s, k))| (v - s) * k)
            .collect()
    }

    pub fn raw_predict(&self, x: &[f64]) -> f64 {
        let t = self.transform(x);
        self.bias
            + self
                .coefficients
                .iter()
                .zip(&self.support_vectors)
                .map(|(c, sv)| c * rbf(self.gamma, sv, &t))
                .sum::<f64>()
    }
}

pub fn fit_svr(train: &EstimatorDataset, config: &SvrConfig) -> Result<SvrModel> {
    let n = train.len();
    if n < 1 {
        return Err(Error::Estimator("SVR needs at least one training row".into()));
    }
    if !(config.c > 0.0 && config.epsilon >= 0.0) {
        return Err(Error::Config(format!("invalid SVR parameters C={} eps={}", config.c, config.epsilon)));
    }
    let d = train.dim();
    let (shift, scale) = if config.standardize {
        column_standardizer(train)
    } else {
        (vec![0.0; d], vec![1.0; d])
    };
    let xs: Vec<Vec<f64>> = train
        .rows()
        .iter()
        .map(|r| r.features.0.iter().zip(shift.iter().zip(&scale)).map(|(v, (s, k))| (v - s) * k).collect())
        .collect();
    let gamma = config.gamma.unwrap_or_else(|| default_gamma(&xs, d));

    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = rbf(gamma, &xs[i], &xs[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let z: Vec<f64> = train.rows().iter().map(|r| r.z).collect();
    let sol = solve_dual(&k, &z, config);
    let mut coefficients = Vec::new();
    let mut support_vectors = Vec::new();
    for i in 0..n {
        let c = sol.beta[i] - sol.beta[i + n];
        if c != 0.0 {
            coefficients.push(c);
            support_vectors.push(xs[i].clone());
        }
    }
    if !sol.converged {
        log::warn!("svr: stopped after {} iterations without meeting tolerance {}", sol.iterations, config.tolerance);
    }
    Ok(SvrModel {
        coefficients,
        support_vectors,
        bias: -sol.rho,
        gamma,
        c: config.c,
        epsilon: config.epsilon,
        shift,
        scale,
        converged: sol.converged,
        iterations: sol.iterations,
    })
}

fn column_standardizer(train: &EstimatorDataset) -> (Vec<f64>, Vec<f64>) {
    let d = train.dim();
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    for r in train.rows() {
        for (m, v) in mean.iter_mut().zip(r.features.as_slice()) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for r in train.rows() {
        for ((s, v), m) in var.iter_mut().zip(r.features.as_slice()).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    // constant columns carry no information; scaling them by 1 keeps them at zero
    let scale = var.iter().map(|v| if *v > 1e-24 { 1.0 / v.sqrt() } else { 1.0 }).collect();
    (mean, scale)
}

fn default_gamma(xs: &[Vec<f64>], d: usize) -> f64 {
    let count = (xs.len() * d) as f64;
    let mean = xs.iter().flatten().sum::<f64>() / count;
    let var = xs.iter().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    if var > 0.0 && d > 0 {
        1.0 / (d as f64 * var)
    } else {
        1.0 / d.max(1) as f64
    }
}

pub(crate) struct DualSolution {
    pub beta: Vec<f64>,
    pub rho: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Minimises `½βᵀQβ + pᵀβ` s.t. `yᵀβ = 0`, `0 ≤ β ≤ C`, where the `2n` variables are
/// `(α, α*)`, `y = (+1…, −1…)`, `Q_st = y_s y_t K(s mod n, t mod n)` and
/// `p = (ε − z, ε + z)`.
pub(crate) fn solve_dual(k: &[f64], z: &[f64], config: &SvrConfig) -> DualSolution {
    let n = z.len();
    let m = 2 * n;
    let c = config.c;
    let y = |t: usize| if t < n { 1.0 } else { -1.0 };
    let kk = |s: usize, t: usize| k[(s % n) * n + (t % n)];
    let q = |s: usize, t: usize| y(s) * y(t) * kk(s, t);
    let mut beta = vec![0.0; m];
    let mut grad: Vec<f64> = (0..m)
        .map(|t| if t < n { config.epsilon - z[t] } else { config.epsilon + z[t - n] })
        .collect();
    let max_iter = config.max_sweeps.saturating_mul(m).max(100);
    let tau = 1e-12;
    let mut iterations = 0;
    let mut converged = false;
    let is_up = |b: f64, yt: f64| (yt > 0.0 && b < c) || (yt < 0.0 && b > 0.0);
    let is_low = |b: f64, yt: f64| (yt > 0.0 && b > 0.0) || (yt < 0.0 && b < c);
    while iterations < max_iter {
        // first index: maximal violator in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..m {
            if is_up(beta[t], y(t)) {
                let v = -y(t) * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for t in 0..m {
            if is_low(beta[t], y(t)) {
                let yg = y(t) * grad[t];
                if yg > gmax2 {
                    gmax2 = yg;
                }
                if i_sel != usize::MAX {
                    let b = gmax + yg;
                    if b > 0.0 {
                        let a = kk(i_sel, i_sel) + kk(t, t) - 2.0 * kk(i_sel, t);
                        let a = if a > 0.0 { a } else { tau };
                        let obj = -(b * b) / a;
                        if obj <= obj_min {
                            obj_min = obj;
                            j_sel = t;
                        }
                    }
                }
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || gmax + gmax2 < config.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (beta[i], beta[j]);
        let qij = q(i, j);
        if y(i) != y(j) {
            let quad = {
                let a = kk(i, i) + kk(j, j) + 2.0 * qij;
                if a > 0.0 { a } else { tau }
            };
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = beta[i] - beta[j];
            beta[i] += delta;
            beta[j] += delta;
            if diff > 0.0 {
                if beta[j] < 0.0 {
                    beta[j] = 0.0;
                    beta[i] = diff;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = -diff;
            }
            if diff > 0.0 {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = c - diff;
                }
            } else if beta[j] > c {
                beta[j] = c;
                beta[i] = c + diff;
            }
        } else {
            let quad = {
                let a = kk(i, i) + kk(j, j) - 2.0 * qij;
                if a > 0.0 { a } else { tau }
            };
            let delta = (grad[i] - grad[j]) / quad;
            let sum = beta[i] + beta[j];
            beta[i] -= delta;
            beta[j] += delta;
            if sum > c {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = sum - c;
                }
            } else if beta[j] < 0.0 {
                beta[j] = 0.0;
                beta[i] = sum;
            }
            if sum > c {
                if beta[j] > c {
                    beta[j] = c;
                    beta[i] = sum - c;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = sum;
            }
        }
        let (di, dj) = (beta[i] - old_i, beta[j] - old_j);
        for t in 0..m {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }
    let rho = compute_rho(&beta, &grad, c, n);
    DualSolution {
        beta,
        rho,
        converged,
        iterations,
    }
}

fn compute_rho(beta: &[f64], grad: &[f64], c: f64, n: usize) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum_free = 0.0;
    let mut n_free = 0usize;
    for t in 0..beta.len() {
        let yt = if t < n { 1.0 } else { -1.0 };
        let yg = yt * grad[t];
        if beta[t] >= c {
            if yt < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if beta[t] <= 0.0 {
            if yt > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}
