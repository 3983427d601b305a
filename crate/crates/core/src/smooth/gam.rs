//! Multinomial-link additive model for the ratio function.
//!
//! Items `1..T-1` get a penalized cubic spline predictor `eta_t(x)`; item `T`
//! is the reference with `eta_T = 1`. Ratios are the softmax of the
//! predictors, and coefficients minimize
//! `sum_i ||x_i R(x_i) - y_i||^2 + lambda * sum_t theta_t' S theta_t`
//! by penalized Gauss-Newton with step halving. The penalty is chosen by GCV
//! over a log-spaced grid.

use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;
use serde::Serialize;

use super::bspline::CubicBasis;
use super::{cholesky_with_ridge, lambda_grid, SmoothConfig};
use crate::error::{Error, Result};

const SHARE_FLOOR: f64 = 1e-6;
const MAX_HALVINGS: usize = 40;

/// Softmax of `(eta_1, ..., eta_{T-1}, 1)`.
pub fn softmax_with_reference(eta: &[f64]) -> Vec<f64> {
    let max = eta.iter().copied().fold(1.0f64, f64::max);
    let mut out: Vec<f64> = eta.iter().map(|&e| (e - max).exp()).collect();
    out.push((1.0 - max).exp());
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Penalized least-squares problem for a fixed penalty, exposed for
/// derivative checks.
#[derive(Debug, Clone)]
pub struct GamProblem<'a> {
    basis: &'a CubicBasis,
    x: &'a [f64],
    y: ArrayView2<'a, f64>,
    evals: Vec<(usize, [f64; 4])>,
    penalty: DMatrix<f64>,
    pub lambda: f64,
}

struct Normal {
    jtj: DMatrix<f64>,
    jtr: DVector<f64>,
}

struct Solve {
    theta: DVector<f64>,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

impl<'a> GamProblem<'a> {
    pub fn new(basis: &'a CubicBasis, x: &'a [f64], y: ArrayView2<'a, f64>, lambda: f64) -> Self {
        let evals = x.iter().map(|&xi| basis.eval(xi)).collect();
        GamProblem {
            basis,
            x,
            y,
            evals,
            penalty: basis.penalty(),
            lambda,
        }
    }

    pub fn num_items(&self) -> usize {
        self.y.ncols()
    }

    pub fn num_params(&self) -> usize {
        (self.num_items() - 1) * self.basis.dim()
    }

    fn eta(&self, theta: &[f64], obs: usize) -> Vec<f64> {
        let k = self.basis.dim();
        let (first, v) = self.evals[obs];
        (0..self.num_items() - 1)
            .map(|s| (0..4).map(|a| v[a] * theta[s * k + first + a]).sum())
            .collect()
    }

    pub fn ratios(&self, theta: &[f64], obs: usize) -> Vec<f64> {
        softmax_with_reference(&self.eta(theta, obs))
    }

    pub fn rss(&self, theta: &[f64]) -> f64 {
        (0..self.x.len())
            .map(|i| {
                let r = self.ratios(theta, i);
                r.iter()
                    .enumerate()
                    .map(|(t, rt)| (self.x[i] * rt - self.y[[i, t]]).powi(2))
                    .sum::<f64>()
            })
            .sum()
    }

    fn roughness(&self, theta: &[f64]) -> f64 {
        let k = self.basis.dim();
        (0..self.num_items() - 1)
            .map(|s| {
                let th = DVector::from_column_slice(&theta[s * k..(s + 1) * k]);
                (th.transpose() * &self.penalty * &th)[(0, 0)]
            })
            .sum()
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        self.rss(theta) + self.lambda * self.roughness(theta)
    }

    fn penalty_times(&self, theta: &[f64]) -> DVector<f64> {
        let k = self.basis.dim();
        let mut out = DVector::zeros(theta.len());
        for s in 0..self.num_items() - 1 {
            let th = DVector::from_column_slice(&theta[s * k..(s + 1) * k]);
            out.rows_mut(s * k, k).copy_from(&(&self.penalty * th));
        }
        out
    }

    fn normal_equations(&self, theta: &[f64]) -> Normal {
        let t_all = self.num_items();
        let m = t_all - 1;
        let k = self.basis.dim();
        let p = m * k;
        let mut jtj = DMatrix::zeros(p, p);
        let mut jtr = DVector::zeros(p);
        let mut g = vec![0.0; t_all * m];
        let mut gg = vec![0.0; m * m];
        let mut c = vec![0.0; m];
        for i in 0..self.x.len() {
            let xi = self.x[i];
            let r = self.ratios(theta, i);
            for t in 0..t_all {
                for s in 0..m {
                    let kron = if t == s { 1.0 } else { 0.0 };
                    g[t * m + s] = r[t] * (kron - r[s]);
                }
            }
            for s in 0..m {
                c[s] = (0..t_all)
                    .map(|t| (xi * r[t] - self.y[[i, t]]) * g[t * m + s])
                    .sum::<f64>()
                    * xi;
                for s2 in 0..m {
                    gg[s * m + s2] = xi
                        * xi
                        * (0..t_all)
                            .map(|t| g[t * m + s] * g[t * m + s2])
                            .sum::<f64>();
                }
            }
            let (first, v) = self.evals[i];
            for s in 0..m {
                for a in 0..4 {
                    jtr[s * k + first + a] += c[s] * v[a];
                }
                for s2 in 0..m {
                    let w = gg[s * m + s2];
                    for a in 0..4 {
                        let row = s * k + first + a;
                        for b in 0..4 {
                            jtj[(row, s2 * k + first + b)] += w * v[a] * v[b];
                        }
                    }
                }
            }
        }
        Normal { jtj, jtr }
    }

    fn penalty_block(&self) -> DMatrix<f64> {
        let k = self.basis.dim();
        let m = self.num_items() - 1;
        let mut out = DMatrix::zeros(m * k, m * k);
        for s in 0..m {
            out.view_mut((s * k, s * k), (k, k))
                .copy_from(&self.penalty);
        }
        out
    }

    /// Analytic gradient of [`GamProblem::objective`].
    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let ne = self.normal_equations(theta);
        let g = (ne.jtr + self.penalty_times(theta) * self.lambda) * 2.0;
        g.iter().copied().collect()
    }

    fn solve(&self, start: &DVector<f64>, config: &SmoothConfig) -> Solve {
        let sblk = self.penalty_block();
        let mut theta = start.clone();
        let mut obj = self.objective(theta.as_slice());
        let mut trace = vec![obj];
        for iter in 1..=config.max_iter {
            let ne = self.normal_equations(theta.as_slice());
            let a = &ne.jtj + &sblk * self.lambda;
            let grad = &ne.jtr + &sblk * &theta * self.lambda;
            let Some(chol) = cholesky_with_ridge(&a) else {
                return Solve {
                    theta,
                    trace,
                    converged: false,
                    iterations: iter,
                };
            };
            let step = -chol.solve(&grad);
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let cand = &theta + &step * scale;
                let val = self.objective(cand.as_slice());
                if val.is_finite() && val <= obj {
                    accepted = Some((cand, val));
                    break;
                }
                scale *= 0.5;
            }
            let Some((cand, val)) = accepted else {
                // No descent left at machine precision.
                return Solve {
                    theta,
                    trace,
                    converged: true,
                    iterations: iter,
                };
            };
            debug_assert!(val <= obj);
            let change = (obj - val).abs() / obj.abs().max(f64::MIN_POSITIVE);
            theta = cand;
            obj = val;
            trace.push(obj);
            if change < config.tol {
                return Solve {
                    theta,
                    trace,
                    converged: true,
                    iterations: iter,
                };
            }
        }
        Solve {
            theta,
            trace,
            converged: false,
            iterations: config.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GamDiagnostics {
    pub method: String,
    pub lambda: f64,
    pub rank: usize,
    pub edf: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized objective after each accepted step at the selected penalty.
    pub objective_trace: Vec<f64>,
    /// `(lambda, gcv)` for every grid value; non-converged fits score `inf`.
    pub gcv: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GamFit {
    pub basis: CubicBasis,
    /// `coef[t][k]` for items `t < T - 1`.
    pub coef: Vec<Vec<f64>>,
    pub diagnostics: GamDiagnostics,
}

impl GamFit {
    pub fn num_items(&self) -> usize {
        self.coef.len() + 1
    }

    pub fn predict_ratio(&self, x: f64) -> Vec<f64> {
        let (first, v) = self.basis.eval(x);
        let eta: Vec<f64> = self
            .coef
            .iter()
            .map(|c| (0..4).map(|a| v[a] * c[first + a]).sum())
            .collect();
        softmax_with_reference(&eta)
    }
}

/// Constant-ratio starting point: `R(x)` equal to the pooled item shares.
pub fn initial_coefficients(x: &[f64], y: ArrayView2<f64>, dim: usize) -> DVector<f64> {
    let t_all = y.ncols();
    let total_x: f64 = x.iter().sum();
    let share = |t: usize| (y.column(t).sum() / total_x).max(SHARE_FLOOR);
    let reference = share(t_all - 1);
    let mut theta = DVector::zeros((t_all - 1) * dim);
    for s in 0..t_all - 1 {
        let v = (share(s) / reference).ln() + 1.0;
        theta.rows_mut(s * dim, dim).fill(v);
    }
    theta
}

/// Fit the multinomial additive model to respondent data `(x, y)`.
pub fn fit_gam_multinomial(
    basis: CubicBasis,
    x: &[f64],
    y: ArrayView2<f64>,
    config: &SmoothConfig,
) -> Result<GamFit> {
    let t_all = y.ncols();
    if t_all < 2 {
        return Err(Error::Fit(
            "the ratio model needs at least two items".into(),
        ));
    }
    if x.len() != y.nrows() || x.is_empty() {
        return Err(Error::Fit("GAM data must be nonempty and aligned".into()));
    }
    let k = basis.dim();
    let n_obs = (x.len() * (t_all - 1)) as f64;
    let theta0 = initial_coefficients(x, y, k);

    let base = GamProblem::new(&basis, x, y, 0.0);
    let jtj0 = base.normal_equations(theta0.as_slice()).jtj;
    let scale = jtj0.trace() / (base.penalty.trace() * (t_all - 1) as f64);
    let scale = if scale.is_finite() && scale > 0.0 {
        scale
    } else {
        1.0
    };
    let sblk = base.penalty_block();

    let mut grid = lambda_grid(scale);
    grid.reverse();
    let mut gcv = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, Solve, f64)> = None;
    let mut warm = theta0.clone();
    for lambda in grid {
        let problem = GamProblem {
            lambda,
            ..base.clone()
        };
        let sol = problem.solve(&warm, config);
        if !sol.converged {
            gcv.push((lambda, f64::INFINITY));
            continue;
        }
        warm = sol.theta.clone();
        let jtj = problem.normal_equations(sol.theta.as_slice()).jtj;
        let a = &jtj + &sblk * lambda;
        let edf = match cholesky_with_ridge(&a) {
            Some(chol) => chol.solve(&jtj).trace(),
            None => {
                gcv.push((lambda, f64::INFINITY));
                continue;
            }
        };
        let rss = problem.rss(sol.theta.as_slice());
        let denom = n_obs - edf;
        let score = if denom > 0.0 {
            n_obs * rss / (denom * denom)
        } else {
            f64::INFINITY
        };
        gcv.push((lambda, score));
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, lambda, sol, edf));
        }
    }
    gcv.reverse();
    let Some((score, lambda, sol, edf)) = best else {
        return Err(Error::NonConvergence(format!(
            "multinomial GAM failed to converge for all {} penalty values (rank {k}, {} observations)",
            gcv.len(),
            x.len()
        )));
    };
    if !score.is_finite() {
        return Err(Error::NonConvergence(
            "no penalty value gave a finite GCV score".into(),
        ));
    }
    let coef = (0..t_all - 1)
        .map(|s| sol.theta.rows(s * k, k).iter().copied().collect())
        .collect();
    Ok(GamFit {
        basis,
        coef,
        diagnostics: GamDiagnostics {
            method: "nonparam".into(),
            lambda,
            rank: k,
            edf,
            iterations: sol.iterations,
            converged: sol.converged,
            objective_trace: sol.trace,
            gcv,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stage};
    use ndarray::Array2;
    use rand::Rng;

    fn constant_ratio_data(n: usize, seed: u64) -> (Vec<f64>, Array2<f64>) {
        let mut rng = substream(seed, Stage::Test, &[]);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..200.0)).collect();
        let mut y = Array2::zeros((n, 2));
        for (i, &xi) in x.iter().enumerate() {
            y[[i, 0]] = 0.6 * xi;
            y[[i, 1]] = 0.4 * xi;
        }
        (x, y)
    }

    #[test]
    fn softmax_is_on_simplex() {
        let r = softmax_with_reference(&[800.0, -3.0, 0.5]);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.iter().all(|&v| v >= 0.0));
        let r = softmax_with_reference(&[1.0]);
        assert_eq!(r, vec![0.5, 0.5]);
    }

    #[test]
    fn recovers_constant_ratios() {
        let (x, y) = constant_ratio_data(200, 3);
        let basis = CubicBasis::at_quantiles(5.0, 200.0, &x, 10).unwrap();
        let fit = fit_gam_multinomial(basis, &x, y.view(), &SmoothConfig::default()).unwrap();
        for i in 0..=50 {
            let r = fit.predict_ratio(5.0 + 195.0 * i as f64 / 50.0);
            assert!((r[0] - 0.6).abs() < 0.01 && (r[1] - 0.4).abs() < 0.01);
        }
    }

    #[test]
    fn trace_is_monotone_and_gcv_argmin_selected() {
        let mut rng = substream(9, Stage::Test, &[]);
        let n = 120;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..100.0)).collect();
        let mut y = Array2::zeros((n, 3));
        for (i, &xi) in x.iter().enumerate() {
            let a = rng.random_range(0.0..1.0) * (0.3 + 0.4 * xi / 100.0);
            let b = rng.random_range(0.0..(1.0 - a));
            y[[i, 0]] = a * xi;
            y[[i, 1]] = b * xi;
            y[[i, 2]] = xi - y[[i, 0]] - y[[i, 1]];
        }
        let basis = CubicBasis::at_quantiles(1.0, 100.0, &x, 8).unwrap();
        let fit = fit_gam_multinomial(basis, &x, y.view(), &SmoothConfig::default()).unwrap();
        let d = &fit.diagnostics;
        assert!(d.converged);
        assert!(d.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        let argmin = d.gcv.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(argmin.0, d.lambda);
        assert_eq!(d.gcv.len(), 20);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = substream(21, Stage::Test, &[]);
        for case in 0..5 {
            let n = 30;
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..10.0)).collect();
            let mut y = Array2::zeros((n, 3));
            for (i, &xi) in x.iter().enumerate() {
                let a = rng.random_range(0.0..1.0);
                let b = rng.random_range(0.0..(1.0 - a));
                y[[i, 0]] = a * xi;
                y[[i, 1]] = b * xi;
                y[[i, 2]] = (1.0 - a - b) * xi;
            }
            let basis = CubicBasis::at_quantiles(1.0, 10.0, &x, 6).unwrap();
            let problem = GamProblem::new(&basis, &x, y.view(), 0.3 + case as f64);
            let theta: Vec<f64> = (0..problem.num_params())
                .map(|_| rng.random_range(-1.0..2.0))
                .collect();
            let g = problem.gradient(&theta);
            for j in 0..theta.len() {
                let h = 1e-6 * (1.0 + theta[j].abs());
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (problem.objective(&up) - problem.objective(&dn)) / (2.0 * h);
                let rel = (fd - g[j]).abs() / g[j].abs().max(1e-3);
                assert!(rel < 1e-5, "param {j}: fd {fd} vs analytic {}", g[j]);
            }
        }
    }
}
