//! Nearest-neighbor ratio imputation.
//!
//! A recipient takes the detail *ratio* vector `y_d / x_d` of the respondent
//! `d` in its imputation cell whose total `x_d` is closest to its own, and
//! scales it by its own total. Ties go to the smaller `x_d`, then to the
//! smaller unit id.
//!
//! The donor map is summarized by the `kappa` weights
//! `kappa_i = sum_j (w_j x_j) / (w_i x_i) * (1 - delta_j) * d_ij`, which turn the
//! imputed total into a weighted sum over respondents only and satisfy
//! `sum delta_i w_i (1 + kappa_i) x_i = sum w_i x_i` exactly.

use std::cmp::Ordering;

use ndarray::Array2;

use crate::design::{ht_total, Sample};
use crate::error::{Error, Result};
use crate::stats::pairwise_sum;

#[derive(Debug, Clone, PartialEq)]
pub struct DonorAssignment {
    /// Donor index for each recipient; `None` for respondents.
    pub donor_of: Vec<Option<usize>>,
    /// Donor weights; zero for recipients and for respondents that donate to
    /// nobody.
    pub kappa: Vec<f64>,
}

impl DonorAssignment {
    pub fn num_recipients(&self) -> usize {
        self.donor_of.iter().filter(|d| d.is_some()).count()
    }

    /// `|x_i - x_donor|` for every recipient, in unit order.
    pub fn discrepancies(&self, sample: &Sample) -> Vec<f64> {
        self.donor_of
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.map(|d| (sample.x[i] - sample.x[d]).abs()))
            .collect()
    }
}

/// Ordering key for a candidate donor `j` of a recipient at `x`.
fn donor_key(sample: &Sample, x: f64, j: usize) -> (f64, f64, u64) {
    ((x - sample.x[j]).abs(), sample.x[j], sample.ids[j])
}

fn cmp_key(a: &(f64, f64, u64), b: &(f64, f64, u64)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.total_cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

fn eligible(sample: &Sample, delta: &[bool], j: usize) -> bool {
    delta[j] && sample.x[j] > 0.0
}

fn check_inputs(sample: &Sample, delta: &[bool]) -> Result<()> {
    if delta.len() != sample.len() {
        return Err(Error::Data(format!(
            "response vector has {} entries for {} units",
            delta.len(),
            sample.len()
        )));
    }
    Ok(())
}

/// Per-cell sorted search: O(n log n).
pub fn match_donors(sample: &Sample, delta: &[bool]) -> Result<DonorAssignment> {
    check_inputs(sample, delta)?;
    let mut donor_of = vec![None; sample.len()];
    let mut donorless = Vec::new();
    for (c, members) in sample.cell_members().iter().enumerate() {
        let recipients: Vec<usize> = members.iter().copied().filter(|&i| !delta[i]).collect();
        if recipients.is_empty() {
            continue;
        }
        let mut donors: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&j| eligible(sample, delta, j))
            .collect();
        if donors.is_empty() {
            donorless.push(sample.cell_labels[c].clone());
            continue;
        }
        donors.sort_by(|&a, &b| {
            sample.x[a]
                .total_cmp(&sample.x[b])
                .then(sample.ids[a].cmp(&sample.ids[b]))
        });
        let dx: Vec<f64> = donors.iter().map(|&j| sample.x[j]).collect();
        // First position of the run of equal x values containing `p`.
        let run_start = |p: usize| dx.partition_point(|&v| v < dx[p]);

        for &i in &recipients {
            let x = sample.x[i];
            let pos = dx.partition_point(|&v| v < x);
            let mut best: Option<usize> = None;
            if pos > 0 {
                let mut p = run_start(pos - 1);
                let d = x - dx[p];
                // Rounding can make a farther run tie at the same distance.
                while p > 0 && x - dx[p - 1] == d {
                    p = run_start(p - 1);
                }
                best = Some(p);
            }
            if pos < dx.len() {
                let right = pos;
                best = match best {
                    None => Some(right),
                    Some(l) => {
                        let kl = donor_key(sample, x, donors[l]);
                        let kr = donor_key(sample, x, donors[right]);
                        if cmp_key(&kr, &kl) == Ordering::Less {
                            Some(right)
                        } else {
                            Some(l)
                        }
                    }
                };
            }
            donor_of[i] = best.map(|p| donors[p]);
        }
    }
    if !donorless.is_empty() {
        return Err(Error::NoDonors { cells: donorless });
    }
    let kappa = compute_kappa(sample, delta, &donor_of);
    Ok(DonorAssignment { donor_of, kappa })
}

/// Exhaustive O(n^2) matcher applying the same tie rule; kept as an oracle.
pub fn match_donors_exhaustive(sample: &Sample, delta: &[bool]) -> Result<DonorAssignment> {
    check_inputs(sample, delta)?;
    let mut donor_of = vec![None; sample.len()];
    for i in 0..sample.len() {
        if delta[i] {
            continue;
        }
        let mut best: Option<(usize, (f64, f64, u64))> = None;
        for j in 0..sample.len() {
            if sample.cells[j] != sample.cells[i] || !eligible(sample, delta, j) {
                continue;
            }
            let key = donor_key(sample, sample.x[i], j);
            if best
                .as_ref()
                .is_none_or(|(_, b)| cmp_key(&key, b) == Ordering::Less)
            {
                best = Some((j, key));
            }
        }
        match best {
            Some((j, _)) => donor_of[i] = Some(j),
            None => {
                return Err(Error::NoDonors {
                    cells: vec![sample.cell_labels[sample.cells[i]].clone()],
                })
            }
        }
    }
    let kappa = compute_kappa(sample, delta, &donor_of);
    Ok(DonorAssignment { donor_of, kappa })
}

/// Donor weights from a recipient-to-donor map.
pub fn compute_kappa(sample: &Sample, delta: &[bool], donor_of: &[Option<usize>]) -> Vec<f64> {
    let mut mass = vec![0.0; sample.len()];
    for (j, d) in donor_of.iter().enumerate() {
        if let (Some(i), false) = (d, delta[j]) {
            mass[*i] += sample.weights[j] * sample.x[j];
        }
    }
    mass.iter()
        .enumerate()
        .map(|(i, &m)| {
            if m == 0.0 {
                0.0
            } else {
                m / (sample.weights[i] * sample.x[i])
            }
        })
        .collect()
}

/// Sample after imputation: observed rows for respondents, scaled donor
/// ratios for recipients.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedSample {
    pub sample: Sample,
    pub delta: Vec<bool>,
    pub assignment: DonorAssignment,
    /// Final detail values.
    pub values: Array2<f64>,
}

impl ImputedSample {
    pub fn num_respondents(&self) -> usize {
        self.delta.iter().filter(|&&d| d).count()
    }
}

pub fn impute(
    sample: &Sample,
    delta: &[bool],
    assignment: &DonorAssignment,
) -> Result<ImputedSample> {
    check_inputs(sample, delta)?;
    let mut values = sample.y.clone();
    for (i, d) in assignment.donor_of.iter().enumerate() {
        if delta[i] {
            continue;
        }
        let d =
            d.ok_or_else(|| Error::Data(format!("recipient {} has no donor", sample.ids[i])))?;
        let scale = sample.x[i] / sample.x[d];
        for t in 0..sample.num_items() {
            values[[i, t]] = scale * sample.y[[d, t]];
        }
    }
    Ok(ImputedSample {
        sample: sample.clone(),
        delta: delta.to_vec(),
        assignment: assignment.clone(),
        values,
    })
}

/// Match, weight and impute in one call.
pub fn nnri(sample: &Sample, delta: &[bool]) -> Result<ImputedSample> {
    let assignment = match_donors(sample, delta)?;
    impute(sample, delta, &assignment)
}

/// The imputed total computed two ways.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedTotals {
    /// `sum w_i {delta_i y_i + (1 - delta_i) y*_i}`
    pub filled: Vec<f64>,
    /// `sum delta_i w_i (1 + kappa_i) y_i`
    pub kappa_weighted: Vec<f64>,
}

impl ImputedTotals {
    pub fn max_relative_gap(&self) -> f64 {
        self.filled
            .iter()
            .zip(&self.kappa_weighted)
            .map(|(a, b)| {
                let scale = a.abs().max(b.abs());
                if scale == 0.0 {
                    0.0
                } else {
                    (a - b).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }
}

pub fn imputed_total(imp: &ImputedSample) -> ImputedTotals {
    let s = &imp.sample;
    let filled = ht_total(&s.weights, imp.values.view());
    let kappa_weighted = (0..s.num_items())
        .map(|t| {
            let terms: Vec<f64> = (0..s.len())
                .filter(|&i| imp.delta[i])
                .map(|i| s.weights[i] * (1.0 + imp.assignment.kappa[i]) * s.y[[i, t]])
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    let totals = ImputedTotals {
        filled,
        kappa_weighted,
    };
    debug_assert!(totals.max_relative_gap() < 1e-9);
    totals
}

/// Left and right sides of the calibration identity for `x`.
pub fn calibration_sides(sample: &Sample, delta: &[bool], kappa: &[f64]) -> (f64, f64) {
    let lhs: Vec<f64> = (0..sample.len())
        .filter(|&i| delta[i])
        .map(|i| sample.weights[i] * (1.0 + kappa[i]) * sample.x[i])
        .collect();
    let rhs: Vec<f64> = sample
        .weights
        .iter()
        .zip(&sample.x)
        .map(|(w, x)| w * x)
        .collect();
    (pairwise_sum(&lhs), pairwise_sum(&rhs))
}
