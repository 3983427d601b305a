//! Stratified SRS-WOR samples, Horvitz-Thompson totals and delete-1 jackknife
//! replication.

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::popgen::FinitePopulation;
use crate::rng::{substream, Stage};
use crate::stats::pairwise_sum;

/// Population and sample counts for one stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumInfo {
    pub label: String,
    pub population_size: usize,
    pub sample_size: usize,
}

impl StratumInfo {
    pub fn fraction(&self) -> f64 {
        if self.population_size == 0 {
            return 1.0;
        }
        self.sample_size as f64 / self.population_size as f64
    }

    /// All population units are in the sample.
    pub fn is_certainty(&self) -> bool {
        self.sample_size >= self.population_size
    }

    pub fn weight(&self) -> f64 {
        self.population_size as f64 / self.sample_size as f64
    }
}

/// Per-stratum sampling fractions. A fraction of 1 marks a certainty stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDesign {
    pub fractions: Vec<f64>,
}

impl SampleDesign {
    pub fn new(fractions: Vec<f64>) -> Self {
        SampleDesign { fractions }
    }

    /// Fractions 1/10, 1/4, 1/2 and a certainty top stratum.
    pub fn business_survey() -> Self {
        SampleDesign::new(vec![0.1, 0.25, 0.5, 1.0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::Config("design needs at least one stratum".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::Config(format!(
                "sampling fraction {f} is outside (0, 1]"
            )));
        }
        Ok(())
    }

    /// Realized sample sizes: `N_h` for certainty strata, otherwise
    /// `max(2, round(f_h N_h))` so every sampled stratum supports the jackknife.
    pub fn allocation(&self, strata_sizes: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        if strata_sizes.len() != self.fractions.len() {
            return Err(Error::Config(format!(
                "design has {} fractions but the population has {} strata",
                self.fractions.len(),
                strata_sizes.len()
            )));
        }
        strata_sizes
            .iter()
            .zip(&self.fractions)
            .enumerate()
            .map(|(h, (&big_n, &f))| {
                if big_n == 0 {
                    return Ok(0);
                }
                if f >= 1.0 {
                    return Ok(big_n);
                }
                let n = ((f * big_n as f64).round() as usize).max(2);
                if n > big_n {
                    return Err(Error::Allocation {
                        stratum: (h + 1).to_string(),
                        requested: n,
                        available: big_n,
                    });
                }
                Ok(n)
            })
            .collect()
    }
}

/// A sample with design weights. Unit order is by stratum, then frame order.
///
/// `y` holds the detail vectors row-wise; rows of nonrespondents are carried
/// along but must not be read by estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub ids: Vec<u64>,
    /// 0-based index into `strata_info`.
    pub strata: Vec<usize>,
    /// 0-based index into `cell_labels`.
    pub cells: Vec<usize>,
    pub weights: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Array2<f64>,
    pub strata_info: Vec<StratumInfo>,
    pub cell_labels: Vec<String>,
    pub item_labels: Vec<String>,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_items(&self) -> usize {
        self.y.ncols()
    }

    pub fn num_strata(&self) -> usize {
        self.strata_info.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cell_labels.len()
    }

    /// Population size implied by the strata table.
    pub fn population_size(&self) -> usize {
        self.strata_info.iter().map(|s| s.population_size).sum()
    }

    /// Unit indices grouped by stratum.
    pub fn stratum_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_strata()];
        for (i, &h) in self.strata.iter().enumerate() {
            out[h].push(i);
        }
        out
    }

    /// Unit indices grouped by imputation cell.
    pub fn cell_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_cells()];
        for (i, &c) in self.cells.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// Copy with the same units but different weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Sample {
        assert_eq!(weights.len(), self.len());
        Sample {
            weights,
            ..self.clone()
        }
    }

    pub fn default_item_labels(num_items: usize) -> Vec<String> {
        (1..=num_items).map(|t| format!("y{t}")).collect()
    }
}

/// Draw a stratified simple random sample without replacement.
pub fn draw_sample(pop: &FinitePopulation, design: &SampleDesign, seed: u64) -> Result<Sample> {
    let alloc = design.allocation(&pop.strata_sizes)?;
    let num_strata = alloc.len();
    let mut by_stratum: Vec<Vec<usize>> = vec![Vec::new(); num_strata];
    for (i, u) in pop.units.iter().enumerate() {
        by_stratum[u.stratum - 1].push(i);
    }

    let t = pop.num_items;
    let n: usize = alloc.iter().sum();
    let mut ids = Vec::with_capacity(n);
    let mut strata = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut y = Array2::<f64>::zeros((n, t));
    let mut strata_info = Vec::with_capacity(num_strata);

    let mut row = 0;
    for (h, members) in by_stratum.iter().enumerate() {
        let big_n = members.len();
        let n_h = alloc[h];
        strata_info.push(StratumInfo {
            label: (h + 1).to_string(),
            population_size: big_n,
            sample_size: n_h,
        });
        if n_h == 0 {
            continue;
        }
        let mut picked: Vec<usize> = if n_h == big_n {
            (0..big_n).collect()
        } else {
            let mut rng = substream(seed, Stage::Sample, &[h as u64]);
            index::sample(&mut rng, big_n, n_h).into_vec()
        };
        picked.sort_unstable();
        let w = big_n as f64 / n_h as f64;
        for j in picked {
            let unit = &pop.units[members[j]];
            ids.push(unit.id);
            strata.push(h);
            weights.push(w);
            x.push(unit.x);
            for (k, v) in unit.y.iter().enumerate() {
                y[[row, k]] = *v;
            }
            row += 1;
        }
    }

    let cell_labels = strata_info.iter().map(|s| s.label.clone()).collect();
    Ok(Sample {
        ids,
        cells: strata.clone(),
        strata,
        weights,
        x,
        y,
        strata_info,
        cell_labels,
        item_labels: Sample::default_item_labels(t),
    })
}

/// Horvitz-Thompson totals `sum_i w_i v_it` for each column of `values`.
pub fn ht_total(weights: &[f64], values: ArrayView2<f64>) -> Vec<f64> {
    assert_eq!(weights.len(), values.nrows());
    (0..values.ncols())
        .map(|t| {
            let terms: Vec<f64> = weights
                .iter()
                .zip(values.column(t))
                .map(|(w, v)| w * v)
                .collect();
            pairwise_sum(&terms)
        })
        .collect()
}

/// Delete-1 jackknife replicate weights with their variance factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateWeights {
    /// One full weight vector per replicate.
    pub weights: Vec<Vec<f64>>,
    /// `c_k = (n_h - 1) / n_h * (1 - f_h)` for a deletion in stratum `h`.
    pub factors: Vec<f64>,
    /// Index of the deleted unit per replicate.
    pub deleted: Vec<usize>,
}

impl ReplicateWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Build stratified delete-1 jackknife replicates. Certainty strata are never
/// deleted because their contribution to the variance is zero.
pub fn jackknife_replicates(sample: &Sample) -> Result<ReplicateWeights> {
    let members = sample.stratum_members();
    let mut reps = ReplicateWeights {
        weights: Vec::new(),
        factors: Vec::new(),
        deleted: Vec::new(),
    };
    for (h, info) in sample.strata_info.iter().enumerate() {
        let idx = &members[h];
        if idx.is_empty() || info.is_certainty() {
            continue;
        }
        let n_h = idx.len();
        if n_h < 2 {
            return Err(Error::Design(format!(
                "stratum {} has a single sampled unit; the jackknife needs at least 2",
                info.label
            )));
        }
        let scale = n_h as f64 / (n_h - 1) as f64;
        let factor = (n_h - 1) as f64 / n_h as f64 * (1.0 - info.fraction());
        for &k in idx {
            let mut w = sample.weights.clone();
            for &i in idx {
                w[i] *= scale;
            }
            w[k] = 0.0;
            reps.weights.push(w);
            reps.factors.push(factor);
            reps.deleted.push(k);
        }
    }
    Ok(reps)
}

/// `sum_k c_k (theta_k - theta)^2` on the scale of the statistic.
pub fn replicate_variance<F>(
    sample: &Sample,
    reps: &ReplicateWeights,
    statistic: F,
    exec: Execution,
) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let full = statistic(&sample.weights);
    let terms = exec.map(reps.len(), |k| {
        let d = statistic(&reps.weights[k]) - full;
        reps.factors[k] * d * d
    });
    pairwise_sum(&terms)
}
