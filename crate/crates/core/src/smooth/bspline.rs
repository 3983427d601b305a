//! Clamped cubic B-spline basis on a fixed interval with an exact
//! second-derivative penalty.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const ORDER: usize = 4;
const DEGREE: usize = 3;

/// Cubic B-spline basis of dimension `dim` on `[lo, hi]`.
///
/// Evaluation works on the unit scale `u = (x - lo) / (hi - lo)`; inputs
/// outside the interval are clamped to its ends.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicBasis {
    lo: f64,
    hi: f64,
    /// Full clamped knot vector on the unit scale, length `dim + 4`.
    knots: Vec<f64>,
}

impl CubicBasis {
    /// `interior` knots are on the unit scale, strictly increasing and inside
    /// `(0, 1)`.
    pub fn new(lo: f64, hi: f64, interior: &[f64]) -> Result<Self> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Fit(format!("spline range [{lo}, {hi}] is empty")));
        }
        let ok = interior.windows(2).all(|w| w[0] < w[1])
            && interior.iter().all(|&k| k > 0.0 && k < 1.0);
        if !ok {
            return Err(Error::Fit(
                "interior knots must increase within (0, 1)".into(),
            ));
        }
        let mut knots = vec![0.0; ORDER];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(1.0, ORDER));
        Ok(CubicBasis { lo, hi, knots })
    }

    /// Basis of dimension `dim` with interior knots at quantiles of the
    /// distinct values of `data`.
    pub fn at_quantiles(lo: f64, hi: f64, data: &[f64], dim: usize) -> Result<Self> {
        if dim < ORDER {
            return Err(Error::Fit(format!("basis dimension {dim} is below 4")));
        }
        let mut u: Vec<f64> = data
            .iter()
            .map(|&x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect();
        u.sort_by(f64::total_cmp);
        u.dedup();
        if u.len() < dim {
            return Err(Error::Fit(format!(
                "{} distinct values cannot support a basis of dimension {dim}",
                u.len()
            )));
        }
        let m = dim - ORDER;
        let interior: Vec<f64> = (1..=m)
            .map(|j| {
                let pos = j as f64 / (m + 1) as f64 * (u.len() - 1) as f64;
                let a = pos.floor() as usize;
                let frac = pos - a as f64;
                if a + 1 < u.len() {
                    u[a] + frac * (u[a + 1] - u[a])
                } else {
                    u[a]
                }
            })
            .collect();
        Self::new(lo, hi, &interior)
    }

    pub fn dim(&self) -> usize {
        self.knots.len() - ORDER
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn to_unit(&self, x: f64) -> f64 {
        ((x - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    fn span(&self, u: f64) -> usize {
        let n = self.dim();
        if u >= 1.0 {
            return n - 1;
        }
        (self.knots.partition_point(|&k| k <= u) - 1).clamp(DEGREE, n - 1)
    }

    /// Nonzero basis values at `x`: index of the first one and the four values.
    pub fn eval(&self, x: f64) -> (usize, [f64; 4]) {
        let u = self.to_unit(x);
        let span = self.span(u);
        let d = self.derivatives(span, u, 0);
        (span - DEGREE, d[0])
    }

    pub fn eval_dense(&self, x: f64) -> Vec<f64> {
        let (first, v) = self.eval(x);
        let mut out = vec![0.0; self.dim()];
        out[first..first + ORDER].copy_from_slice(&v);
        out
    }

    /// Basis values and derivatives (w.r.t. `u`) up to order `nd` on `span`.
    fn derivatives(&self, span: usize, u: f64, nd: usize) -> Vec<[f64; 4]> {
        let t = &self.knots;
        let p = DEGREE;
        let mut ndu = [[0.0f64; ORDER]; ORDER];
        let mut left = [0.0f64; ORDER];
        let mut right = [0.0f64; ORDER];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = u - t[span + 1 - j];
            right[j] = t[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![[0.0f64; 4]; nd + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = [[0.0f64; ORDER]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0] = [0.0; ORDER];
            a[0][0] = 1.0;
            for k in 1..=nd {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                a[s2] = [0.0; ORDER];
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize {
                    k - 1
                } else {
                    p - r
                };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for (k, row) in ders.iter_mut().enumerate().skip(1) {
            for v in row.iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }

    /// Second derivatives (w.r.t. `u`) of the nonzero functions on `span`.
    pub fn second_derivative(&self, x: f64) -> (usize, [f64; 4]) {
        let u = self.to_unit(x);
        let span = self.span(u);
        (span - DEGREE, self.derivatives(span, u, 2)[2])
    }

    /// `S[k][l] = integral over [0, 1] of b_k''(u) b_l''(u) du`.
    ///
    /// Second derivatives of a cubic spline are linear between knots, so the
    /// integral on each knot interval is exact from the endpoint values.
    pub fn penalty(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut s = DMatrix::zeros(n, n);
        for span in DEGREE..n {
            let (a, b) = (self.knots[span], self.knots[span + 1]);
            let h = b - a;
            if h <= 0.0 {
                continue;
            }
            let fa = self.derivatives(span, a, 2)[2];
            let fb = self.derivatives(span, b, 2)[2];
            let first = span - DEGREE;
            for i in 0..ORDER {
                for j in 0..ORDER {
                    let v = h / 6.0
                        * (2.0 * fa[i] * fa[j]
                            + fa[i] * fb[j]
                            + fb[i] * fa[j]
                            + 2.0 * fb[i] * fb[j]);
                    s[(first + i, first + j)] += v;
                }
            }
        }
        s
    }
}

/// Default basis dimension, shrunk when respondents are scarce.
pub fn basis_dimension(requested: usize, num_obs: usize) -> usize {
    requested.min((num_obs / 4).max(ORDER))
}
