//! Smooth estimates of the ratio function `R(x)` and of the residual variance
//! `sigma^2(x)` used by the variance estimators.

pub mod bspline;
pub mod gam;
pub mod spline;

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, Dyn};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::design::Sample;
use crate::error::{Error, Result};
use crate::stats::pairwise_sum;
use bspline::{basis_dimension, CubicBasis};
use gam::{fit_gam_multinomial, GamFit};
use spline::PenalizedSpline;

pub const LAMBDA_GRID_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothConfig {
    /// Requested spline basis dimension.
    pub rank: usize,
    pub max_iter: usize,
    /// Relative objective change that counts as converged.
    pub tol: f64,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        SmoothConfig {
            rank: 10,
            max_iter: 200,
            tol: 1e-8,
        }
    }
}

/// Log-spaced penalties over `[1e-6, 1e4] * scale`, ascending.
pub fn lambda_grid(scale: f64) -> Vec<f64> {
    let n = LAMBDA_GRID_LEN;
    (0..n)
        .map(|j| scale * 10f64.powf(-6.0 + 10.0 * j as f64 / (n - 1) as f64))
        .collect()
}

/// Cholesky factor of a symmetric positive semi-definite matrix, adding a
/// small ridge when the matrix is numerically singular.
pub(crate) fn cholesky_with_ridge(a: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Some(c);
    }
    let base = (a.trace() / a.nrows() as f64).abs().max(f64::MIN_POSITIVE);
    [1e-12, 1e-10, 1e-8, 1e-6]
        .iter()
        .find_map(|eps| Cholesky::new(a + DMatrix::identity(a.nrows(), a.ncols()) * (eps * base)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioMethod {
    /// One pooled ratio per item.
    Param1,
    /// One ratio per item and stratum.
    Param2,
    /// Multinomial penalized spline.
    Nonparam,
}

impl RatioMethod {
    pub const ALL: [RatioMethod; 3] = [
        RatioMethod::Param1,
        RatioMethod::Param2,
        RatioMethod::Nonparam,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RatioMethod::Param1 => "PARAM1",
            RatioMethod::Param2 => "PARAM2",
            RatioMethod::Nonparam => "NONPARAM",
        }
    }
}

impl fmt::Display for RatioMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RatioMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "param1" => Ok(RatioMethod::Param1),
            "param2" => Ok(RatioMethod::Param2),
            "nonparam" => Ok(RatioMethod::Nonparam),
            other => Err(Error::Config(format!("unknown ratio method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaMethod {
    /// Squared respondent residuals.
    Direct,
    /// `x beta (1 - beta)` from the pooled ratio.
    Param1M,
    /// Per-stratum OLS of squared residuals on `x`.
    Param2M,
    /// Penalized spline of squared residuals on `x`.
    NonparamM,
}

impl SigmaMethod {
    pub fn modeled_for(ratio: RatioMethod) -> Self {
        match ratio {
            RatioMethod::Param1 => SigmaMethod::Param1M,
            RatioMethod::Param2 => SigmaMethod::Param2M,
            RatioMethod::Nonparam => SigmaMethod::NonparamM,
        }
    }

    pub fn is_direct(self) -> bool {
        self == SigmaMethod::Direct
    }

    pub fn label(self) -> &'static str {
        match self {
            SigmaMethod::Direct => "DIRECT",
            SigmaMethod::Param1M => "PARAM1(M)",
            SigmaMethod::Param2M => "PARAM2(M)",
            SigmaMethod::NonparamM => "NONPARAM(M)",
        }
    }

    fn ratio(self) -> Option<RatioMethod> {
        match self {
            SigmaMethod::Direct => None,
            SigmaMethod::Param1M => Some(RatioMethod::Param1),
            SigmaMethod::Param2M => Some(RatioMethod::Param2),
            SigmaMethod::NonparamM => Some(RatioMethod::Nonparam),
        }
    }
}

impl fmt::Display for SigmaMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RatioFit {
    Param1 {
        beta: Vec<f64>,
    },
    /// `None` for strata without sampled units.
    Param2 {
        beta: Vec<Option<Vec<f64>>>,
    },
    Nonparam(Box<GamFit>),
}

impl RatioFit {
    pub fn method(&self) -> RatioMethod {
        match self {
            RatioFit::Param1 { .. } => RatioMethod::Param1,
            RatioFit::Param2 { .. } => RatioMethod::Param2,
            RatioFit::Nonparam(_) => RatioMethod::Nonparam,
        }
    }

    /// `R(x)` for a unit in `stratum` (0-based).
    pub fn predict_ratio(&self, x: f64, stratum: usize) -> Vec<f64> {
        match self {
            RatioFit::Param1 { beta } => beta.clone(),
            RatioFit::Param2 { beta } => beta[stratum]
                .clone()
                .expect("ratio requested for a stratum without sampled units"),
            RatioFit::Nonparam(g) => g.predict_ratio(x),
        }
    }

    pub fn gam(&self) -> Option<&GamFit> {
        match self {
            RatioFit::Nonparam(g) => Some(g),
            _ => None,
        }
    }
}

fn respondents(delta: &[bool]) -> Vec<usize> {
    (0..delta.len()).filter(|&i| delta[i]).collect()
}

fn ratio_of_totals(sample: &Sample, units: &[usize]) -> Option<Vec<f64>> {
    let den = pairwise_sum(
        &units
            .iter()
            .map(|&i| sample.weights[i] * sample.x[i])
            .collect::<Vec<_>>(),
    );
    if !(den > 0.0) {
        return None;
    }
    Some(
        (0..sample.num_items())
            .map(|t| {
                let num: Vec<f64> = units
                    .iter()
                    .map(|&i| sample.weights[i] * sample.y[[i, t]])
                    .collect();
                pairwise_sum(&num) / den
            })
            .collect(),
    )
}

/// Weighted ratio of respondent totals, pooled over the whole sample.
pub fn fit_param1(sample: &Sample, delta: &[bool]) -> Result<RatioFit> {
    let beta = ratio_of_totals(sample, &respondents(delta))
        .ok_or_else(|| Error::Fit("no respondents with a positive total".into()))?;
    Ok(RatioFit::Param1 { beta })
}

/// Weighted ratio of respondent totals within each stratum.
pub fn fit_param2(sample: &Sample, delta: &[bool]) -> Result<RatioFit> {
    let beta = sample
        .stratum_members()
        .iter()
        .enumerate()
        .map(|(h, members)| {
            if members.is_empty() {
                return Ok(None);
            }
            let resp: Vec<usize> = members.iter().copied().filter(|&i| delta[i]).collect();
            ratio_of_totals(sample, &resp).map(Some).ok_or_else(|| {
                Error::Fit(format!(
                    "stratum {} has no respondents with a positive total",
                    sample.strata_info[h].label
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RatioFit::Param2 { beta })
}

/// Spline basis over the range of all sampled `x`, knots at respondent
/// quantiles, dimension shrunk to what the respondents support.
fn respondent_basis(sample: &Sample, resp_x: &[f64], config: &SmoothConfig) -> Result<CubicBasis> {
    let lo = sample.x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sample.x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut distinct = resp_x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let dim = basis_dimension(config.rank, resp_x.len()).min(distinct.len());
    CubicBasis::at_quantiles(lo, hi, resp_x, dim)
}

pub fn fit_nonparam(sample: &Sample, delta: &[bool], config: &SmoothConfig) -> Result<RatioFit> {
    let resp = respondents(delta);
    let x: Vec<f64> = resp.iter().map(|&i| sample.x[i]).collect();
    let y = sample.y.select(ndarray::Axis(0), &resp);
    let basis = respondent_basis(sample, &x, config)?;
    let g = fit_gam_multinomial(basis, &x, y.view(), config)?;
    Ok(RatioFit::Nonparam(Box::new(g)))
}

pub fn fit_ratio(
    method: RatioMethod,
    sample: &Sample,
    delta: &[bool],
    config: &SmoothConfig,
) -> Result<RatioFit> {
    match method {
        RatioMethod::Param1 => fit_param1(sample, delta),
        RatioMethod::Param2 => fit_param2(sample, delta),
        RatioMethod::Nonparam => fit_nonparam(sample, delta, config),
    }
}

/// `m_i = x_i R(x_i)` for every sampled unit.
pub fn predict_m(fit: &RatioFit, sample: &Sample) -> Array2<f64> {
    let mut m = Array2::zeros((sample.len(), sample.num_items()));
    for i in 0..sample.len() {
        let r = fit.predict_ratio(sample.x[i], sample.strata[i]);
        for (t, rt) in r.iter().enumerate() {
            m[[i, t]] = sample.x[i] * rt;
        }
    }
    m
}

/// `y_i - m_i` for respondents; zero rows for nonrespondents.
pub fn residuals(sample: &Sample, delta: &[bool], m: &Array2<f64>) -> Array2<f64> {
    let mut e = Array2::zeros(m.raw_dim());
    for i in (0..sample.len()).filter(|&i| delta[i]) {
        for t in 0..sample.num_items() {
            e[[i, t]] = sample.y[[i, t]] - m[[i, t]];
        }
    }
    e
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaFit {
    pub method: SigmaMethod,
    /// `sigma^2(x_i)` per unit and item. For [`SigmaMethod::Direct`] this holds
    /// squared residuals and is zero for nonrespondents.
    pub sigma2: Array2<f64>,
    /// Predictions that came out negative and were set to zero.
    pub floored: usize,
}

fn ols_line(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Residual variance model for every sampled unit.
///
/// `e` are respondent residuals from `fit` (see [`residuals`]).
pub fn fit_sigma(
    method: SigmaMethod,
    fit: &RatioFit,
    sample: &Sample,
    delta: &[bool],
    e: &Array2<f64>,
    config: &SmoothConfig,
) -> Result<SigmaFit> {
    if let Some(r) = method.ratio() {
        if r != fit.method() {
            return Err(Error::Config(format!(
                "{} residual model needs a {} ratio fit, got {}",
                method.label(),
                r.label(),
                fit.method().label()
            )));
        }
    }
    let (n, t_all) = (sample.len(), sample.num_items());
    let mut sigma2 = Array2::zeros((n, t_all));
    match (method, fit) {
        (SigmaMethod::Direct, _) => {
            sigma2 = e.mapv(|v| v * v);
        }
        (SigmaMethod::Param1M, RatioFit::Param1 { beta }) => {
            for i in 0..n {
                for t in 0..t_all {
                    sigma2[[i, t]] = sample.x[i] * beta[t] * (1.0 - beta[t]);
                }
            }
        }
        (SigmaMethod::Param2M, RatioFit::Param2 { .. }) => {
            for members in sample.stratum_members() {
                let resp: Vec<usize> = members.iter().copied().filter(|&i| delta[i]).collect();
                let rx: Vec<f64> = resp.iter().map(|&i| sample.x[i]).collect();
                for t in 0..t_all {
                    let re2: Vec<f64> = resp.iter().map(|&i| e[[i, t]].powi(2)).collect();
                    let (a0, a1) = ols_line(&rx, &re2).unwrap_or_else(|| {
                        let mean = if re2.is_empty() {
                            0.0
                        } else {
                            re2.iter().sum::<f64>() / re2.len() as f64
                        };
                        (mean, 0.0)
                    });
                    for &i in &members {
                        sigma2[[i, t]] = a0 + a1 * sample.x[i];
                    }
                }
            }
        }
        (SigmaMethod::NonparamM, RatioFit::Nonparam(_)) => {
            let resp = respondents(delta);
            let rx: Vec<f64> = resp.iter().map(|&i| sample.x[i]).collect();
            let basis = respondent_basis(sample, &rx, config)?;
            for t in 0..t_all {
                let re2: Vec<f64> = resp.iter().map(|&i| e[[i, t]].powi(2)).collect();
                let s = PenalizedSpline::fit(basis.clone(), &rx, &re2)?;
                for i in 0..n {
                    sigma2[[i, t]] = s.predict(sample.x[i]);
                }
            }
        }
        _ => unreachable!("method pairing checked above"),
    }
    let mut floored = 0;
    sigma2.mapv_inplace(|v| {
        if v < 0.0 {
            floored += 1;
            0.0
        } else {
            v
        }
    });
    if floored > 0 {
        log::debug!("{} residual variance predictions floored at zero", floored);
    }
    Ok(SigmaFit {
        method,
        sigma2,
        floored,
    })
}
