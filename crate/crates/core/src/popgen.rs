//! Synthetic stratified finite populations with compositional detail items.
//!
//! Each unit carries a size variable `x`, a stratum label from half-open
//! boundaries, a count `c` of nonzero detail items drawn from a per-stratum
//! table, and a detail vector `y` drawn as a multinomial split of `x`.

use rand::Rng;
use rand_distr::{Binomial, Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{substream, Stage, StreamRng};
use crate::stats::pairwise_sum;

/// Size-variable distribution of the three simulated populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// `x ~ 100000 * U(0, 1)`
    Uniform100k,
    /// `x ~ Lognormal(4.1, 0.66)`
    LognormalSmall,
    /// `x ~ Lognormal(12, 1.72)`
    LognormalLarge,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::Uniform100k,
        Scenario::LognormalSmall,
        Scenario::LognormalLarge,
    ];

    pub fn default_boundaries(self) -> Vec<f64> {
        match self {
            Scenario::Uniform100k => vec![25_000.0, 50_000.0, 75_000.0],
            Scenario::LognormalSmall => vec![55.0, 85.0, 150.0],
            Scenario::LognormalLarge => vec![40_000.0, 150_000.0, 500_000.0],
        }
    }

    /// Short label used in reports ("scenario1", ...).
    pub fn label(self) -> &'static str {
        match self {
            Scenario::Uniform100k => "scenario1",
            Scenario::LognormalSmall => "scenario2",
            Scenario::LognormalLarge => "scenario3",
        }
    }

    pub fn parse(s: &str) -> Option<Scenario> {
        match s.to_ascii_lowercase().as_str() {
            "uniform100k" | "uniform-100k" | "scenario1" | "1" => Some(Scenario::Uniform100k),
            "lognormal-small" | "lognormalsmall" | "scenario2" | "2" => {
                Some(Scenario::LognormalSmall)
            }
            "lognormal-large" | "lognormallarge" | "scenario3" | "3" => {
                Some(Scenario::LognormalLarge)
            }
            _ => None,
        }
    }

    fn draw(self, rng: &mut StreamRng) -> f64 {
        match self {
            Scenario::Uniform100k => loop {
                let u: f64 = rng.random();
                if u > 0.0 {
                    return 100_000.0 * u;
                }
            },
            Scenario::LognormalSmall => LogNormal::new(4.1, 0.66).unwrap().sample(rng),
            Scenario::LognormalLarge => LogNormal::new(12.0, 1.72).unwrap().sample(rng),
        }
    }
}

/// Probability of `c = 1..=5` nonzero details, one row per stratum.
pub const DEFAULT_COUNT_PROBS: [[f64; 5]; 4] = [
    [0.0, 0.91, 0.03, 0.03, 0.03],
    [0.0, 0.50, 0.40, 0.05, 0.05],
    [0.0, 0.20, 0.20, 0.30, 0.30],
    [0.0, 0.05, 0.15, 0.40, 0.40],
];

/// Multinomial cell probabilities for `c = 2..=5`.
pub const DEFAULT_DETAIL_PROBS: [[f64; 5]; 4] = [
    [0.60, 0.40, 0.00, 0.00, 0.00],
    [0.60, 0.30, 0.10, 0.00, 0.00],
    [0.60, 0.25, 0.10, 0.05, 0.00],
    [0.60, 0.20, 0.10, 0.05, 0.05],
];

/// Redraw budget for enforcing the nonzero pattern of a detail vector.
pub const MAX_PATTERN_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub scenario: Scenario,
    pub population_size: usize,
    pub num_items: usize,
    pub strata_boundaries: Vec<f64>,
    pub seed: u64,
    /// `count_probs[h][c - 1]` = P(c nonzero details | stratum h + 1).
    pub count_probs: Vec<Vec<f64>>,
    /// `detail_probs[c - 2]` = multinomial probabilities given `c`.
    pub detail_probs: Vec<Vec<f64>>,
}

impl PopulationConfig {
    /// Five-item configuration with the scenario's default strata.
    pub fn new(scenario: Scenario, population_size: usize, seed: u64) -> Self {
        PopulationConfig {
            scenario,
            population_size,
            num_items: 5,
            strata_boundaries: scenario.default_boundaries(),
            seed,
            count_probs: DEFAULT_COUNT_PROBS.iter().map(|r| r.to_vec()).collect(),
            detail_probs: DEFAULT_DETAIL_PROBS.iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn num_strata(&self) -> usize {
        self.strata_boundaries.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.num_items;
        if t < 2 {
            return Err(Error::Config(format!("num_items must be >= 2, got {t}")));
        }
        if self.strata_boundaries.windows(2).any(|w| !(w[0] < w[1]))
            || self.strata_boundaries.iter().any(|b| !b.is_finite())
        {
            return Err(Error::Config(
                "strata_boundaries must be finite and strictly increasing".into(),
            ));
        }
        let h = self.num_strata();
        if self.population_size < h {
            return Err(Error::Config(format!(
                "population_size {} is smaller than the number of strata {h}",
                self.population_size
            )));
        }
        if self.count_probs.len() != h {
            return Err(Error::Config(format!(
                "count_probs has {} rows but there are {h} strata",
                self.count_probs.len()
            )));
        }
        for (i, row) in self.count_probs.iter().enumerate() {
            check_prob_row(row, t, &format!("count_probs[{i}]"))?;
            if row[0] != 0.0 {
                return Err(Error::Config(format!(
                    "count_probs[{i}]: probability of a single nonzero detail must be 0"
                )));
            }
        }
        if self.detail_probs.len() != t - 1 {
            return Err(Error::Config(format!(
                "detail_probs needs {} rows (c = 2..={t}), got {}",
                t - 1,
                self.detail_probs.len()
            )));
        }
        for (i, row) in self.detail_probs.iter().enumerate() {
            let c = i + 2;
            check_prob_row(row, t, &format!("detail_probs[c={c}]"))?;
            let support_ok = row.iter().enumerate().all(|(j, &p)| (p > 0.0) == (j < c));
            if !support_ok {
                return Err(Error::Config(format!(
                    "detail_probs[c={c}] must be positive exactly in the first {c} items"
                )));
            }
        }
        Ok(())
    }
}

fn check_prob_row(row: &[f64], len: usize, name: &str) -> Result<()> {
    if row.len() != len {
        return Err(Error::Config(format!(
            "{name} has {} entries, expected {len}",
            row.len()
        )));
    }
    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Config(format!("{name} has entries outside [0, 1]")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationUnit {
    pub id: u64,
    /// 1-based stratum label.
    pub stratum: usize,
    pub x: f64,
    pub y: Vec<f64>,
    /// Number of nonzero detail items drawn for this unit.
    pub nonzero: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinitePopulation {
    pub units: Vec<PopulationUnit>,
    pub strata_sizes: Vec<usize>,
    pub true_totals: Vec<f64>,
    pub num_items: usize,
}

impl FinitePopulation {
    /// Build from units, deriving strata sizes and item totals.
    pub fn from_units(units: Vec<PopulationUnit>, num_strata: usize, num_items: usize) -> Self {
        let mut strata_sizes = vec![0usize; num_strata];
        for u in &units {
            strata_sizes[u.stratum - 1] += 1;
        }
        let true_totals = (0..num_items)
            .map(|t| pairwise_sum(&units.iter().map(|u| u.y[t]).collect::<Vec<_>>()))
            .collect();
        FinitePopulation {
            units,
            strata_sizes,
            true_totals,
            num_items,
        }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn total_x(&self) -> f64 {
        pairwise_sum(&self.units.iter().map(|u| u.x).collect::<Vec<_>>())
    }
}

fn size_stream(seed: u64, unit: u64) -> StreamRng {
    substream(seed, Stage::SizeVariable, &[unit])
}

/// Draw `N` size values i.i.d. from the scenario distribution.
pub fn draw_size_variable(config: &PopulationConfig, exec: Execution) -> Vec<f64> {
    exec.map(config.population_size, |i| {
        config
            .scenario
            .draw(&mut size_stream(config.seed, i as u64))
    })
}

/// 1-based stratum labels for half-open intervals `[b_{k-1}, b_k)`.
pub fn assign_strata(x: &[f64], boundaries: &[f64]) -> Vec<usize> {
    x.iter().map(|&v| stratum_of(v, boundaries)).collect()
}

pub fn stratum_of(x: f64, boundaries: &[f64]) -> usize {
    1 + boundaries.partition_point(|&b| b <= x)
}

/// Draw the number of nonzero details for a unit in `stratum` (1-based).
pub fn draw_detail_count(
    stratum: usize,
    count_probs: &[Vec<f64>],
    rng: &mut impl Rng,
) -> Result<usize> {
    let row = stratum
        .checked_sub(1)
        .and_then(|h| count_probs.get(h))
        .ok_or_else(|| Error::Config(format!("no detail-count table for stratum {stratum}")))?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = j;
        acc += p;
        if u < acc {
            return Ok(j + 1);
        }
    }
    Ok(last + 1)
}

fn multinomial(trials: u64, probs: &[f64], rng: &mut impl Rng) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut rest = trials;
    let mut mass = 1.0f64;
    let last = probs.iter().rposition(|&p| p > 0.0);
    for (t, &p) in probs.iter().enumerate() {
        if rest == 0 {
            break;
        }
        if p <= 0.0 {
            continue;
        }
        if Some(t) == last {
            out[t] = rest;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let k = Binomial::new(rest, q).unwrap().sample(rng);
        out[t] = k;
        rest -= k;
        mass -= p;
    }
    out
}

/// Split `x` over the items with a multinomial draw of `round(x)` trials,
/// using at least one trial for any positive `x`.
///
/// When `round(x) >= c` the draw is repeated until exactly the first `c`
/// components are nonzero; after [`MAX_PATTERN_ATTEMPTS`] failures one trial is
/// placed in each of those components and the remainder is drawn
/// multinomially. With fewer trials than `c` the single draw is kept as is.
pub fn draw_details(
    x: f64,
    c: usize,
    detail_probs: &[Vec<f64>],
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::DegenerateSize(x));
    }
    let trials = x.round().max(1.0) as u64;
    let probs = c
        .checked_sub(2)
        .and_then(|i| detail_probs.get(i))
        .ok_or_else(|| Error::Config(format!("no detail probabilities for c = {c}")))?;

    let pattern_ok = |k: &[u64]| k.iter().enumerate().all(|(j, &v)| (v > 0) == (j < c));
    let mut counts = multinomial(trials, probs, rng);
    if trials >= c as u64 && !pattern_ok(&counts) {
        let mut found = false;
        for _ in 1..MAX_PATTERN_ATTEMPTS {
            counts = multinomial(trials, probs, rng);
            if pattern_ok(&counts) {
                found = true;
                break;
            }
        }
        if !found {
            counts = multinomial(trials - c as u64, probs, rng);
            for v in counts.iter_mut().take(c) {
                *v += 1;
            }
        }
    }
    let n = trials as f64;
    Ok(counts.iter().map(|&k| x * (k as f64) / n).collect())
}

fn generate_unit(config: &PopulationConfig, i: usize) -> Result<PopulationUnit> {
    let key = i as u64;
    let x = config.scenario.draw(&mut size_stream(config.seed, key));
    let stratum = stratum_of(x, &config.strata_boundaries);
    let mut crng = substream(config.seed, Stage::DetailCount, &[key]);
    let c = draw_detail_count(stratum, &config.count_probs, &mut crng)?;
    let mut drng = substream(config.seed, Stage::Details, &[key]);
    let y = draw_details(x, c, &config.detail_probs, &mut drng)?;
    Ok(PopulationUnit {
        id: key + 1,
        stratum,
        x,
        y,
        nonzero: c,
    })
}

/// Generate the full population. Output is identical for every [`Execution`].
pub fn generate_population(config: &PopulationConfig, exec: Execution) -> Result<FinitePopulation> {
    config.validate()?;
    let units = exec
        .map(config.population_size, |i| generate_unit(config, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(FinitePopulation::from_units(
        units,
        config.num_strata(),
        config.num_items,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn test_rng(k: u64) -> StreamRng {
        substream(42, Stage::Test, &[k])
    }

    #[test]
    fn lognormal_small_median() {
        let cfg = PopulationConfig::new(Scenario::LognormalSmall, 100_000, 11);
        let mut x = draw_size_variable(&cfg, Execution::Sequential);
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = 0.5 * (x[49_999] + x[50_000]);
        let truth = 4.1f64.exp();
        assert!((median / truth - 1.0).abs() < 0.02, "median {median}");
    }

    #[test]
    fn uniform_support_and_determinism() {
        let cfg = PopulationConfig::new(Scenario::Uniform100k, 20_000, 3);
        let a = draw_size_variable(&cfg, Execution::Sequential);
        let b = draw_size_variable(&cfg, Execution::Parallel);
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| v > 0.0 && v <= 100_000.0));
    }

    #[test]
    fn strata_half_open() {
        let b2 = Scenario::LognormalSmall.default_boundaries();
        assert_eq!(stratum_of(54.9, &b2), 1);
        assert_eq!(stratum_of(55.0, &b2), 2);
        assert_eq!(stratum_of(149.999, &b2), 3);
        assert_eq!(stratum_of(150.0, &b2), 4);
        let b3 = Scenario::LognormalLarge.default_boundaries();
        assert_eq!(stratum_of(1e9, &b3), 4);
        assert_eq!(
            assign_strata(&[1.0, 60.0, 90.0, 200.0], &b2),
            vec![1, 2, 3, 4]
        );
    }

    #[test]
    fn detail_count_frequencies() {
        let probs: Vec<Vec<f64>> = DEFAULT_COUNT_PROBS.iter().map(|r| r.to_vec()).collect();
        let mut rng = test_rng(1);
        let n = 100_000;
        let mut hits = [0usize; 4];
        let mut ones = 0;
        for _ in 0..n {
            let c1 = draw_detail_count(1, &probs, &mut rng).unwrap();
            let c4 = draw_detail_count(4, &probs, &mut rng).unwrap();
            hits[0] += (c1 == 2) as usize;
            hits[3] += (c4 == 2) as usize;
            ones += (c1 == 1) as usize + (c4 == 1) as usize;
        }
        assert!((hits[0] as f64 / n as f64 - 0.91).abs() < 0.02);
        assert!((hits[3] as f64 / n as f64 - 0.05).abs() < 0.02);
        assert_eq!(ones, 0);
        assert!(draw_detail_count(5, &probs, &mut rng).is_err());
        assert!(draw_detail_count(0, &probs, &mut rng).is_err());
    }

    #[test]
    fn details_respect_pattern_and_sum() {
        let probs: Vec<Vec<f64>> = DEFAULT_DETAIL_PROBS.iter().map(|r| r.to_vec()).collect();
        let mut rng = test_rng(2);
        let y = draw_details(1234.5, 2, &probs, &mut rng).unwrap();
        assert_eq!(&y[2..], &[0.0, 0.0, 0.0]);
        assert!(y[0] > 0.0 && y[1] > 0.0);
        assert!((y.iter().sum::<f64>() - 1234.5).abs() <= 1e-9 * 1234.5);

        let mut share = 0.0;
        let reps = 2000;
        for _ in 0..reps {
            let y = draw_details(500.0, 5, &probs, &mut rng).unwrap();
            assert!(y.iter().all(|&v| v > 0.0));
            share += y[0] / 500.0;
        }
        assert!((share / reps as f64 - 0.60).abs() < 0.01);
    }

    #[test]
    fn single_trial_split() {
        let probs: Vec<Vec<f64>> = DEFAULT_DETAIL_PROBS.iter().map(|r| r.to_vec()).collect();
        for k in 0..50 {
            let y = draw_details(1.0, 2, &probs, &mut test_rng(100 + k)).unwrap();
            assert!(y == vec![1.0, 0.0, 0.0, 0.0, 0.0] || y == vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        }
        let y = draw_details(0.4, 2, &probs, &mut test_rng(0)).unwrap();
        assert!((y.iter().sum::<f64>() - 0.4).abs() < 1e-15);
        assert_eq!(y.iter().filter(|&&v| v > 0.0).count(), 1);
        assert!(matches!(
            draw_details(0.0, 2, &probs, &mut test_rng(0)),
            Err(Error::DegenerateSize(_))
        ));
    }

    #[test]
    fn tiny_population_is_additive() {
        for s in Scenario::ALL {
            let cfg = PopulationConfig::new(s, 4, 9);
            let pop = generate_population(&cfg, Execution::Sequential).unwrap();
            assert_eq!(pop.len(), 4);
            for u in &pop.units {
                let sum: f64 = u.y.iter().sum();
                assert!((sum - u.x).abs() <= 1e-9 * u.x);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_across_execution_modes() {
        let cfg = PopulationConfig::new(Scenario::LognormalLarge, 3000, 77);
        let a = generate_population(&cfg, Execution::Sequential).unwrap();
        let b = generate_population(&cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.strata_sizes.iter().sum::<usize>(), 3000);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = PopulationConfig::new(Scenario::Uniform100k, 10, 1);
        cfg.strata_boundaries = vec![5.0, 5.0, 7.0];
        assert!(cfg.validate().is_err());
        let mut cfg = PopulationConfig::new(Scenario::Uniform100k, 3, 1);
        assert!(cfg.validate().is_err());
        cfg.population_size = 10;
        cfg.num_items = 4;
        assert!(cfg.validate().is_err());
    }
}
