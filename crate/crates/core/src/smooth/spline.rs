//! Penalized regression spline for a single Gaussian response, with the
//! penalty chosen by generalized cross-validation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::bspline::CubicBasis;
use super::{cholesky_with_ridge, lambda_grid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedSpline {
    pub basis: CubicBasis,
    pub coef: Vec<f64>,
    pub diagnostics: SplineDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplineDiagnostics {
    pub lambda: f64,
    pub rank: usize,
    pub edf: f64,
    /// `(lambda, gcv)` for every grid value tried.
    pub gcv: Vec<(f64, f64)>,
}

impl PenalizedSpline {
    /// Fit `y ~ s(x)` on the given basis.
    pub fn fit(basis: CubicBasis, x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::Fit(
                "spline data must be nonempty and aligned".into(),
            ));
        }
        let k = basis.dim();
        let n = x.len();
        let mut btb = DMatrix::<f64>::zeros(k, k);
        let mut bty = DVector::<f64>::zeros(k);
        for (&xi, &yi) in x.iter().zip(y) {
            let (first, v) = basis.eval(xi);
            for a in 0..4 {
                bty[first + a] += v[a] * yi;
                for c in 0..4 {
                    btb[(first + a, first + c)] += v[a] * v[c];
                }
            }
        }
        let s = basis.penalty();
        let scale = btb.trace() / s.trace();
        let mut best: Option<(f64, f64, DVector<f64>, f64)> = None;
        let mut gcv = Vec::new();
        for lambda in lambda_grid(scale) {
            let Some(chol) = cholesky_with_ridge(&(&btb + &s * lambda)) else {
                gcv.push((lambda, f64::INFINITY));
                continue;
            };
            let beta = chol.solve(&bty);
            let edf = chol.solve(&btb).trace();
            let rss: f64 = x
                .iter()
                .zip(y)
                .map(|(&xi, &yi)| {
                    let (first, v) = basis.eval(xi);
                    let fit: f64 = (0..4).map(|a| v[a] * beta[first + a]).sum();
                    (yi - fit).powi(2)
                })
                .sum();
            let denom = n as f64 - edf;
            let score = if denom > 0.0 {
                n as f64 * rss / (denom * denom)
            } else {
                f64::INFINITY
            };
            gcv.push((lambda, score));
            if best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, lambda, beta, edf));
            }
        }
        let (score, lambda, beta, edf) =
            best.ok_or_else(|| Error::Fit("penalized spline system is singular".into()))?;
        if !score.is_finite() {
            return Err(Error::Fit(
                "no penalty value gave a finite GCV score".into(),
            ));
        }
        Ok(PenalizedSpline {
            basis,
            coef: beta.iter().copied().collect(),
            diagnostics: SplineDiagnostics {
                lambda,
                rank: k,
                edf,
                gcv,
            },
        })
    }

    pub fn predict(&self, x: f64) -> f64 {
        let (first, v) = self.basis.eval(x);
        (0..4).map(|a| v[a] * self.coef[first + a]).sum()
    }
}
