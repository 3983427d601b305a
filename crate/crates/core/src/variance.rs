//! Variance components for the imputed total, all on the total scale.
//!
//! The variance of the imputed total splits into a sampling part `Vm`,
//! estimated by applying the complete-data design variance to the smoothed
//! predictions `m_i`, and an imputation part `Ve` driven by the residual
//! variance `sigma^2(x)` and the donor weights `kappa`.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::design::{jackknife_replicates, replicate_variance, Sample};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::stats::{normal_quantile, pairwise_sum, sample_variance};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VeMode {
    /// Keeps the `w_i` correction terms needed with non-negligible sampling
    /// fractions.
    #[default]
    Full,
    /// Drops the terms that vanish as sampling fractions go to zero.
    NegligibleF,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VmMode {
    /// Stratified SRS-WOR formula.
    #[default]
    Analytic,
    /// Delete-one jackknife with finite population correction.
    Jackknife,
}

/// `sum_h N_h^2 (1 - f_h) s_h^2 / n_h` for each column of `values`.
pub fn vm_stratified(sample: &Sample, values: ArrayView2<f64>) -> Result<Vec<f64>> {
    let members = sample.stratum_members();
    let mut per_stratum = vec![Vec::with_capacity(members.len()); values.ncols()];
    for (h, idx) in members.iter().enumerate() {
        let info = &sample.strata_info[h];
        if idx.is_empty() || info.is_certainty() {
            continue;
        }
        let n_h = idx.len();
        if n_h < 2 {
            return Err(Error::Design(format!(
                "stratum {} has a single sampled unit; its variance is not estimable",
                info.label
            )));
        }
        let big_n = info.population_size as f64;
        let f_h = n_h as f64 / big_n;
        for (t, acc) in per_stratum.iter_mut().enumerate() {
            let col: Vec<f64> = idx.iter().map(|&i| values[[i, t]]).collect();
            acc.push(big_n * big_n * (1.0 - f_h) * sample_variance(&col) / n_h as f64);
        }
    }
    Ok(per_stratum.iter().map(|v| pairwise_sum(v)).collect())
}

/// Jackknife counterpart of [`vm_stratified`].
pub fn vm_jackknife(sample: &Sample, values: ArrayView2<f64>, exec: Execution) -> Result<Vec<f64>> {
    let reps = jackknife_replicates(sample)?;
    Ok((0..values.ncols())
        .map(|t| {
            let col = values.column(t);
            replicate_variance(
                sample,
                &reps,
                |w| {
                    pairwise_sum(
                        &w.iter()
                            .zip(col.iter())
                            .map(|(a, b)| a * b)
                            .collect::<Vec<_>>(),
                    )
                },
                exec,
            )
        })
        .collect())
}

pub fn vm(
    sample: &Sample,
    values: ArrayView2<f64>,
    mode: VmMode,
    exec: Execution,
) -> Result<Vec<f64>> {
    match mode {
        VmMode::Analytic => vm_stratified(sample, values),
        VmMode::Jackknife => vm_jackknife(sample, values, exec),
    }
}

fn weighted_column_sums(values: &Array2<f64>, factor: impl Fn(usize) -> f64) -> Vec<f64> {
    (0..values.ncols())
        .map(|t| {
            let terms: Vec<f64> = (0..values.nrows())
                .map(|i| {
                    let f = factor(i);
                    if f == 0.0 {
                        0.0
                    } else {
                        f * values[[i, t]]
                    }
                })
                .collect();
            pairwise_sum(&terms)
        })
        .collect()
}

/// Per-unit factor `w^2 delta (1+kappa)^2 - w delta (1+kappa)`.
pub fn direct_factor(w: f64, delta: bool, kappa: f64) -> f64 {
    if !delta {
        return 0.0;
    }
    let a = w * (1.0 + kappa);
    a * a - a
}

/// Per-unit factor `w^2 delta (1+kappa)^2 + w - 2 w delta (1+kappa)`.
pub fn modeled_factor(w: f64, delta: bool, kappa: f64) -> f64 {
    let a = if delta { w * (1.0 + kappa) } else { 0.0 };
    a * a + w - 2.0 * a
}

/// Per-unit factor `delta w^2 (1+kappa)^2`.
pub fn negligible_factor(w: f64, delta: bool, kappa: f64) -> f64 {
    if !delta {
        return 0.0;
    }
    let a = w * (1.0 + kappa);
    a * a
}

/// Imputation variance from squared respondent residuals `e`.
pub fn ve_direct(sample: &Sample, delta: &[bool], kappa: &[f64], e: &Array2<f64>) -> Vec<f64> {
    let e2 = e.mapv(|v| v * v);
    weighted_column_sums(&e2, |i| {
        direct_factor(sample.weights[i], delta[i], kappa[i])
    })
}

/// Imputation variance from a modeled `sigma^2(x_i)` for every sampled unit.
pub fn ve_modeled(
    sample: &Sample,
    delta: &[bool],
    kappa: &[f64],
    sigma2: &Array2<f64>,
) -> Vec<f64> {
    weighted_column_sums(sigma2, |i| {
        modeled_factor(sample.weights[i], delta[i], kappa[i])
    })
}

/// Negligible-fraction form; `values` holds squared residuals or `sigma^2`.
pub fn ve_negligible(
    sample: &Sample,
    delta: &[bool],
    kappa: &[f64],
    values: &Array2<f64>,
) -> Vec<f64> {
    weighted_column_sums(values, |i| {
        negligible_factor(sample.weights[i], delta[i], kappa[i])
    })
}

/// `estimate -/+ z * sqrt(variance)` at the given two-sided level.
pub fn confidence_interval(estimate: f64, variance: f64, level: f64) -> (f64, f64) {
    let half = normal_quantile(level) * variance.max(0.0).sqrt();
    (estimate - half, estimate + half)
}

/// `100 sqrt(V) / |estimate|`, undefined at a zero estimate.
pub fn coefficient_of_variation(estimate: f64, variance: f64) -> Option<f64> {
    if estimate == 0.0 {
        None
    } else {
        Some(100.0 * variance.max(0.0).sqrt() / estimate.abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::StratumInfo;
    use ndarray::array;

    fn one_stratum(big_n: usize, x: &[f64], w: &[f64]) -> Sample {
        let n = x.len();
        Sample {
            ids: (1..=n as u64).collect(),
            strata: vec![0; n],
            cells: vec![0; n],
            weights: w.to_vec(),
            x: x.to_vec(),
            y: Array2::zeros((n, 2)),
            strata_info: vec![StratumInfo {
                label: "1".into(),
                population_size: big_n,
                sample_size: n,
            }],
            cell_labels: vec!["1".into()],
            item_labels: vec!["y1".into(), "y2".into()],
        }
    }

    #[test]
    fn vm_hand_cases() {
        let s = one_stratum(6, &[1.0, 2.0, 3.0], &[2.0; 3]);
        let m = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        let v = vm_stratified(&s, m.view()).unwrap();
        assert!((v[0] - 6.0).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
        let census = one_stratum(3, &[1.0, 2.0, 3.0], &[1.0; 3]);
        assert_eq!(vm_stratified(&census, m.view()).unwrap(), vec![0.0, 0.0]);
        let single = one_stratum(6, &[1.0], &[6.0]);
        assert!(vm_stratified(&single, array![[1.0, 1.0]].view()).is_err());
    }

    #[test]
    fn jackknife_agrees_with_analytic() {
        let s = one_stratum(20, &[1.0, 4.0, 2.0, 8.0, 5.0], &[4.0; 5]);
        let m = array![[1.0, 0.2], [3.0, 0.1], [2.5, 0.0], [7.0, 1.0], [4.0, 0.5]];
        let a = vm_stratified(&s, m.view()).unwrap();
        let j = vm_jackknife(&s, m.view(), Execution::Sequential).unwrap();
        for (x, y) in a.iter().zip(&j) {
            assert!((x - y).abs() <= 1e-9 * x.abs());
        }
    }

    #[test]
    fn ve_direct_hand_case() {
        let s = one_stratum(6, &[1.0, 2.0, 3.0], &[2.0; 3]);
        let delta = [true, false, true];
        let kappa = [2.0, 0.0, 0.0];
        let e = array![[0.2, 0.0], [9.0, 9.0], [0.1, 0.0]];
        let v = ve_direct(&s, &delta, &kappa, &e);
        assert!((v[0] - 1.22).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn ve_vanishes_without_imputation_at_unit_weights() {
        let s = one_stratum(3, &[1.0, 2.0, 3.0], &[1.0; 3]);
        let e = array![[0.5, 0.1], [0.2, 0.3], [1.0, 2.0]];
        assert_eq!(ve_direct(&s, &[true; 3], &[0.0; 3], &e), vec![0.0, 0.0]);
        assert_eq!(ve_modeled(&s, &[true; 3], &[0.0; 3], &e), vec![0.0, 0.0]);
    }

    #[test]
    fn ve_modeled_constant_sigma_brute_force() {
        let w = [1.5, 2.0, 3.0, 1.0, 4.0];
        let s = one_stratum(30, &[1.0, 2.0, 3.0, 4.0, 5.0], &w);
        let delta = [true, false, true, true, false];
        let kappa = [0.5, 0.0, 1.25, 0.0, 0.0];
        let c = 0.7;
        let sigma2 = Array2::from_elem((5, 2), c);
        let v = ve_modeled(&s, &delta, &kappa, &sigma2);
        let mut brute = 0.0;
        for i in 0..5 {
            let d = if delta[i] { 1.0 } else { 0.0 };
            brute += w[i] * w[i] * d * (1.0 + kappa[i]).powi(2) + w[i]
                - 2.0 * w[i] * d * (1.0 + kappa[i]);
        }
        assert!((v[0] - c * brute).abs() < 1e-12);
        assert_eq!(
            ve_modeled(&s, &delta, &kappa, &Array2::zeros((5, 2))),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn interval_and_cv() {
        let (lo, hi) = confidence_interval(100.0, 4.0, 0.95);
        assert!((lo - 96.080_072).abs() < 1e-6 && (hi - 103.919_928).abs() < 1e-6);
        assert_eq!(confidence_interval(5.0, 0.0, 0.95), (5.0, 5.0));
        assert_eq!(coefficient_of_variation(100.0, 4.0), Some(2.0));
        assert_eq!(coefficient_of_variation(100.0, 0.0), Some(0.0));
        assert_eq!(coefficient_of_variation(0.0, 1.0), None);
        let a = coefficient_of_variation(3.0, 2.0).unwrap();
        let b = coefficient_of_variation(30.0, 200.0).unwrap();
        assert!((a - b).abs() < 1e-12);
        // A cv above 1/z puts zero inside the interval.
        let v = (0.52 * 50.0f64).powi(2);
        assert!(confidence_interval(50.0, v, 0.95).0 < 0.0);
    }
}
