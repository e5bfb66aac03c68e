//! Epsilon-insensitive support-vector regression with an RBF kernel.
//!
//! The dual is solved with sequential minimal optimisation using second-order
//! working-set selection, over the usual 2n-variable formulation:
//! `min ½ aᵀQa + pᵀa` s.t. `yᵀa = 0`, `0 ≤ a ≤ C`, with `a = [α; α*]`,
//! `y = [+1; −1]`, `p = [ε − z; ε + z]` and `Q_ij = y_i y_j K(x_i, x_j)`.
//! Inputs are standardised per column with fit-time statistics.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::EnsembleError;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    /// RBF width; `None` uses `1 / (n_features · var(X_std))`.
    pub gamma: Option<f64>,
    /// KKT violation tolerance of the stopping rule.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self { c: 1.0, epsilon: 0.1, gamma: None, tol: 1e-3, max_iter: 1_000_000 }
    }
}

impl SvrParams {
    pub(super) fn from_hyper(hyper: &BTreeMap<String, f64>) -> Result<Self, EnsembleError> {
        let mut p = Self::default();
        for (k, &v) in hyper {
            match k.as_str() {
                "c" => p.c = v,
                "epsilon" => p.epsilon = v,
                "gamma" => p.gamma = Some(v),
                "tol" => p.tol = v,
                "max_iter" => p.max_iter = v as usize,
                _ => return Err(EnsembleError::UnknownHyper { kind: "svr", key: k.clone() }),
            }
        }
        let bad = |message: String| EnsembleError::InvalidHyper { kind: "svr", message };
        if !(p.c > 0.0 && p.c.is_finite()) {
            return Err(bad(format!("c must be positive, got {}", p.c)));
        }
        if !(p.epsilon >= 0.0 && p.epsilon.is_finite()) {
            return Err(bad(format!("epsilon must be non-negative, got {}", p.epsilon)));
        }
        if let Some(g) = p.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(bad(format!("gamma must be positive, got {g}")));
            }
        }
        if !(p.tol > 0.0) || p.max_iter == 0 {
            return Err(bad("tol and max_iter must be positive".into()));
        }
        Ok(p)
    }

    pub(super) fn to_hyper(&self) -> BTreeMap<String, f64> {
        let mut h = BTreeMap::new();
        h.insert("c".into(), self.c);
        h.insert("epsilon".into(), self.epsilon);
        if let Some(g) = self.gamma {
            h.insert("gamma".into(), g);
        }
        h.insert("tol".into(), self.tol);
        h.insert("max_iter".into(), self.max_iter as f64);
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub gamma: f64,
    /// Standardised support vectors, row-major.
    pub support: Vec<Vec<f64>>,
    /// `α_i − α*_i` for each support vector.
    pub dual_coef: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Column means and population standard deviations (zero spread → scale 1).
pub(super) fn standardizer(x: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let (n, p) = x.dim();
    let mut means = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    for j in 0..p {
        let col = x.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        means.push(mean);
        scales.push(if sd > 0.0 { sd } else { 1.0 });
    }
    (means, scales)
}

struct Problem<'a> {
    q: &'a [Vec<f64>],
    n: usize,
    c: f64,
}

impl Problem<'_> {
    fn y(&self, t: usize) -> f64 {
        if t < self.n { 1.0 } else { -1.0 }
    }

    /// `Q_ts = y_t y_s K(t mod n, s mod n)`
    fn q(&self, t: usize, s: usize) -> f64 {
        self.y(t) * self.y(s) * self.q[t % self.n][s % self.n]
    }
}

impl SvrModel {
    pub fn fit(x: &Array2<f64>, z: &[f64], params: &SvrParams) -> Result<Self, EnsembleError> {
        let (n, p) = x.dim();
        let (means, scales) = standardizer(x);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..p).map(|j| (x[[i, j]] - means[j]) / scales[j]).collect())
            .collect();
        let gamma = params.gamma.unwrap_or_else(|| {
            let all: Vec<f64> = xs.iter().flatten().copied().collect();
            let m = all.iter().sum::<f64>() / all.len() as f64;
            let var = all.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / all.len() as f64;
            if var > 0.0 { 1.0 / (p as f64 * var) } else { 1.0 }
        });
        let kernel: Vec<Vec<f64>> =
            (0..n).map(|i| (0..n).map(|j| rbf(&xs[i], &xs[j], gamma)).collect()).collect();

        let prob = Problem { q: &kernel, n, c: params.c };
        let l = 2 * n;
        let mut alpha = vec![0.0; l];
        let mut grad: Vec<f64> =
            (0..l).map(|t| if t < n { params.epsilon - z[t] } else { params.epsilon + z[t - n] }).collect();
        let qd: Vec<f64> = (0..l).map(|t| prob.q(t, t)).collect();
        let upper = |a: f64| a >= prob.c;
        let lower = |a: f64| a <= 0.0;

        let mut iterations = 0;
        while iterations < params.max_iter {
            // i: maximal violating index among the "up" set
            let mut gmax = f64::NEG_INFINITY;
            let mut gmax_idx = None;
            for t in 0..l {
                if prob.y(t) > 0.0 {
                    if !upper(alpha[t]) && -grad[t] >= gmax {
                        gmax = -grad[t];
                        gmax_idx = Some(t);
                    }
                } else if !lower(alpha[t]) && grad[t] >= gmax {
                    gmax = grad[t];
                    gmax_idx = Some(t);
                }
            }
            let Some(i) = gmax_idx else { break };
            // j: largest second-order decrease of the objective
            let mut gmax2 = f64::NEG_INFINITY;
            let mut best_j = None;
            let mut obj_diff_min = f64::INFINITY;
            for t in 0..l {
                let (ok, grad_diff, g2) = if prob.y(t) > 0.0 {
                    (!lower(alpha[t]), gmax + grad[t], grad[t])
                } else {
                    (!upper(alpha[t]), gmax - grad[t], -grad[t])
                };
                if !ok {
                    continue;
                }
                if g2 >= gmax2 {
                    gmax2 = g2;
                }
                if grad_diff > 0.0 {
                    let quad = qd[i] + qd[t] - 2.0 * prob.y(i) * prob.q(i, t) * prob.y(t);
                    let quad = if quad > 0.0 { quad } else { TAU };
                    let obj_diff = -(grad_diff * grad_diff) / quad;
                    if obj_diff <= obj_diff_min {
                        best_j = Some(t);
                        obj_diff_min = obj_diff;
                    }
                }
            }
            let j = match best_j {
                Some(j) if gmax + gmax2 >= params.tol => j,
                _ => break,
            };
            iterations += 1;

            let (old_i, old_j) = (alpha[i], alpha[j]);
            let c = prob.c;
            let qij = prob.q(i, j);
            if prob.y(i) != prob.y(j) {
                let quad = (qd[i] + qd[j] + 2.0 * qij).max(TAU);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let quad = (qd[i] + qd[j] - 2.0 * qij).max(TAU);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
            for (t, g) in grad.iter_mut().enumerate() {
                *g += prob.q(i, t) * di + prob.q(j, t) * dj;
            }
        }
        if iterations >= params.max_iter {
            log::warn!("svr: reached max_iter={} before convergence", params.max_iter);
        }

        // offset from free variables, else midpoint of the feasible interval
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut n_free, mut sum_free) = (0usize, 0.0);
        for t in 0..l {
            let yg = prob.y(t) * grad[t];
            if upper(alpha[t]) {
                if prob.y(t) < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
            } else if lower(alpha[t]) {
                if prob.y(t) > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };

        let mut support = Vec::new();
        let mut dual_coef = Vec::new();
        for i in 0..n {
            let coef = alpha[i] - alpha[i + n];
            if coef != 0.0 {
                support.push(xs[i].clone());
                dual_coef.push(coef);
            }
        }
        Ok(Self { means, scales, gamma, support, dual_coef, rho, iterations })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let xs: Vec<f64> = row
            .iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        self.support
            .iter()
            .zip(&self.dual_coef)
            .map(|(sv, c)| c * rbf(sv, &xs, self.gamma))
            .sum::<f64>()
            - self.rho
    }
}
