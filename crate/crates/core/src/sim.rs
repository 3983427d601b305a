//! Monte Carlo evaluation of the variance estimators.
//!
//! Each replicate draws a fresh finite population, a stratified sample and a
//! response pattern, imputes, and records the point estimate, every requested
//! variance estimate and the replicate's own population total. The study then
//! reports relative bias against the Monte Carlo variance of the estimation
//! error and the coverage of the normal-theory intervals.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::design::{draw_sample, SampleDesign};
use crate::error::{Error, Result};
use crate::estimate::{estimate, EstimationConfig, Estimator};
use crate::exec::Execution;
use crate::imputation::nnri;
use crate::popgen::{generate_population, PopulationConfig, Scenario};
use crate::response::{draw_response, ResponseMechanism};
use crate::rng::{derive_seed, Stage};
use crate::stats::{mean, normal_quantile, sample_variance};

/// Number of failure messages kept in a report.
const KEPT_FAILURES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub population: PopulationConfig,
    pub design: SampleDesign,
    pub mechanism: ResponseMechanism,
    pub replicates: usize,
    pub methods: Vec<Estimator>,
    /// Master seed; per-replicate streams are derived from it.
    pub seed: u64,
    #[serde(default)]
    pub estimation: EstimationConfig,
}

impl StudyConfig {
    /// Five items, default strata and design, all seven estimators.
    pub fn new(
        scenario: Scenario,
        population_size: usize,
        mechanism: ResponseMechanism,
        replicates: usize,
        seed: u64,
    ) -> Self {
        StudyConfig {
            population: PopulationConfig::new(scenario, population_size, seed),
            design: SampleDesign::business_survey(),
            mechanism,
            replicates,
            methods: Estimator::all(),
            seed,
            estimation: EstimationConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::Config(format!(
                "replicates must be at least 2, got {}",
                self.replicates
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        self.population.validate()?;
        self.design.validate()?;
        if self.design.fractions.len() != self.population.num_strata() {
            return Err(Error::Config(format!(
                "design has {} sampling fractions for {} strata",
                self.design.fractions.len(),
                self.population.num_strata()
            )));
        }
        self.mechanism.validate(self.population.num_strata())?;
        let level = self.estimation.level;
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Config(format!(
                "confidence level {level} is outside (0, 1)"
            )));
        }
        Ok(())
    }

    /// Seed shared by every stage of replicate `b`.
    pub fn replicate_seed(&self, b: usize) -> u64 {
        derive_seed(self.seed, &[Stage::Replicate as u64, b as u64])
    }
}

/// Everything recorded from one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    /// Population totals `T_y` per item.
    pub true_totals: Vec<f64>,
    /// Imputed totals per item.
    pub estimates: Vec<f64>,
    /// `variances[method][item]`, methods in config order.
    pub variances: Vec<Vec<f64>>,
    /// Floored residual-variance predictions per method.
    pub floored: Vec<usize>,
    pub sample_size: usize,
    pub respondents: usize,
}

/// Run replicate `b`. Output depends only on `(config, b)`.
pub fn run_replicate(config: &StudyConfig, b: usize) -> Result<ReplicateOutcome> {
    let seed = config.replicate_seed(b);
    let pop_config = PopulationConfig {
        seed,
        ..config.population.clone()
    };
    let pop = generate_population(&pop_config, Execution::Sequential)?;
    let sample = draw_sample(&pop, &config.design, seed)?;
    let delta = draw_response(&sample, &config.mechanism, seed)?;
    let imp = nnri(&sample, &delta)?;
    let report = estimate(
        &imp,
        &config.methods,
        &config.estimation,
        Execution::Sequential,
    )?;
    Ok(ReplicateOutcome {
        index: b,
        true_totals: pop.true_totals.clone(),
        estimates: report.totals.clone(),
        variances: report.methods.iter().map(|m| m.variances()).collect(),
        floored: report.methods.iter().map(|m| m.floored).collect(),
        sample_size: sample.len(),
        respondents: imp.num_respondents(),
    })
}

/// `mean(estimates) / empirical - 1`; undefined when `empirical` is zero.
pub fn relative_bias(estimates: &[f64], empirical: f64) -> Option<f64> {
    if empirical == 0.0 || estimates.is_empty() {
        None
    } else {
        Some(mean(estimates) / empirical - 1.0)
    }
}

/// Share of intervals containing their own truth, with the binomial
/// half-width at the same confidence level.
pub fn coverage(intervals: &[(f64, f64)], truths: &[f64], level: f64) -> (f64, f64) {
    let b = intervals.len() as f64;
    let hits = intervals
        .iter()
        .zip(truths)
        .filter(|((lo, hi), t)| lo <= *t && *t <= hi)
        .count() as f64;
    let p = hits / b;
    (p, normal_quantile(level) * (p * (1.0 - p) / b).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub item: String,
    pub mean_estimate: f64,
    pub mean_true_total: f64,
    /// Mean of `T_hat - T_y`.
    pub mean_error: f64,
    /// Monte Carlo standard error of `mean_error`.
    pub error_se: f64,
    /// Variance of `T_hat - T_y` across replicates.
    pub empirical_variance: f64,
}

impl ItemSummary {
    /// Whether the point estimate is unbiased within `k` standard errors.
    pub fn unbiased_within(&self, k: f64) -> bool {
        self.mean_error.abs() <= k * self.error_se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Estimator,
    pub item: String,
    pub mean_variance: f64,
    pub empirical_variance: f64,
    pub relative_bias: Option<f64>,
    /// Approximate Monte Carlo standard error of the relative bias.
    pub relative_bias_se: Option<f64>,
    pub coverage: f64,
    pub coverage_halfwidth: f64,
    /// Floored residual-variance predictions over all replicates, counted on
    /// the first item's row.
    pub floored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub scenario: String,
    pub mechanism: String,
    pub population_size: usize,
    pub replicates: usize,
    pub seed: u64,
    pub completed: usize,
    pub failed: usize,
    pub failures: Vec<String>,
    pub items: Vec<ItemSummary>,
    pub methods: Vec<MethodSummary>,
}

/// Monte Carlo SE of `mean(v) / s2 - 1` where `s2` is the sample variance of
/// `d`, treating the two as independent.
fn relative_bias_se(v: &[f64], d: &[f64], s2: f64) -> Option<f64> {
    let b = d.len() as f64;
    if s2 == 0.0 || b < 4.0 {
        return None;
    }
    let mv = mean(v);
    let var_mean_v = sample_variance(v) / b;
    let md = mean(d);
    let m4 = d.iter().map(|x| (x - md).powi(4)).sum::<f64>() / b;
    let var_s2 = ((m4 - s2 * s2 * (b - 3.0) / (b - 1.0)) / b).max(0.0);
    let ratio = mv / s2;
    Some((var_mean_v / (s2 * s2) + ratio * ratio * var_s2 / (s2 * s2)).sqrt())
}

/// Run all replicates and summarize.
pub fn run_study(config: &StudyConfig, exec: Execution) -> Result<StudyReport> {
    config.validate()?;
    let results = exec.map(config.replicates, |b| run_replicate(config, b));
    summarize(config, results)
}

pub fn summarize(
    config: &StudyConfig,
    results: Vec<Result<ReplicateOutcome>>,
) -> Result<StudyReport> {
    let mut ok = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    let mut failed = 0;
    for (b, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => ok.push(o),
            Err(e) => {
                failed += 1;
                if failures.len() < KEPT_FAILURES {
                    failures.push(format!("replicate {b}: {e}"));
                }
            }
        }
    }
    if ok.len() < 2 {
        return Err(Error::Data(format!(
            "only {} of {} replicates completed; first failure: {}",
            ok.len(),
            config.replicates,
            failures.first().map(String::as_str).unwrap_or("none")
        )));
    }
    let t_all = config.population.num_items;
    let labels = crate::design::Sample::default_item_labels(t_all);
    let level = config.estimation.level;
    let bsz = ok.len() as f64;

    let mut items = Vec::with_capacity(t_all);
    let mut errors = Vec::with_capacity(t_all);
    for t in 0..t_all {
        let est: Vec<f64> = ok.iter().map(|o| o.estimates[t]).collect();
        let tru: Vec<f64> = ok.iter().map(|o| o.true_totals[t]).collect();
        let err: Vec<f64> = est.iter().zip(&tru).map(|(a, b)| a - b).collect();
        let var = sample_variance(&err);
        items.push(ItemSummary {
            item: labels[t].clone(),
            mean_estimate: mean(&est),
            mean_true_total: mean(&tru),
            mean_error: mean(&err),
            error_se: (var / bsz).sqrt(),
            empirical_variance: var,
        });
        errors.push(err);
    }

    let mut methods = Vec::new();
    for (k, &method) in config.methods.iter().enumerate() {
        for t in 0..t_all {
            let v: Vec<f64> = ok.iter().map(|o| o.variances[k][t]).collect();
            let intervals: Vec<(f64, f64)> = ok
                .iter()
                .map(|o| {
                    crate::variance::confidence_interval(o.estimates[t], o.variances[k][t], level)
                })
                .collect();
            let truths: Vec<f64> = ok.iter().map(|o| o.true_totals[t]).collect();
            let (cov, half) = coverage(&intervals, &truths, level);
            let s2 = items[t].empirical_variance;
            methods.push(MethodSummary {
                method,
                item: labels[t].clone(),
                mean_variance: mean(&v),
                empirical_variance: s2,
                relative_bias: relative_bias(&v, s2),
                relative_bias_se: relative_bias_se(&v, &errors[t], s2),
                coverage: cov,
                coverage_halfwidth: half,
                floored: if t == 0 {
                    ok.iter().map(|o| o.floored[k]).sum()
                } else {
                    0
                },
            });
        }
    }

    Ok(StudyReport {
        scenario: config.population.scenario.label().into(),
        mechanism: config.mechanism.label(),
        population_size: config.population.population_size,
        replicates: config.replicates,
        seed: config.seed,
        completed: ok.len(),
        failed,
        failures,
        items,
        methods,
    })
}

/// Relative bias in table style: negatives in parentheses, two decimals.
pub fn format_relative_bias(rb: Option<f64>) -> String {
    match rb {
        None => "NA".into(),
        Some(v) if v < 0.0 => format!("({:.2})", -v),
        Some(v) => format!("{v:.2}"),
    }
}

impl StudyReport {
    pub fn summary(&self, method: Estimator, item: usize) -> Option<&MethodSummary> {
        self.methods.iter().filter(|m| m.method == method).nth(item)
    }

    pub fn relative_biases(&self, method: Estimator) -> Vec<Option<f64>> {
        self.methods
            .iter()
            .filter(|m| m.method == method)
            .map(|m| m.relative_bias)
            .collect()
    }

    pub fn coverages(&self, method: Estimator) -> Vec<f64> {
        self.methods
            .iter()
            .filter(|m| m.method == method)
            .map(|m| m.coverage)
            .collect()
    }

    fn method_order(&self) -> Vec<Estimator> {
        let mut seen = Vec::new();
        for m in &self.methods {
            if !seen.contains(&m.method) {
                seen.push(m.method);
            }
        }
        seen
    }

    /// Relative-bias table, one row per method and one column per item.
    pub fn relative_bias_table(&self) -> String {
        let mut out = format!("{:<12}", "method");
        for it in &self.items {
            out.push_str(&format!("{:>9}", it.item));
        }
        out.push('\n');
        for m in self.method_order() {
            out.push_str(&format!("{:<12}", m.label()));
            for rb in self.relative_biases(m) {
                out.push_str(&format!("{:>9}", format_relative_bias(rb)));
            }
            out.push('\n');
        }
        out
    }

    /// One row per method and item.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "scenario",
            "mechanism",
            "population_size",
            "replicates",
            "completed",
            "method",
            "item",
            "mean_variance",
            "empirical_variance",
            "relative_bias",
            "relative_bias_se",
            "coverage",
            "coverage_halfwidth",
            "mean_estimate",
            "mean_true_total",
        ])?;
        for m in &self.methods {
            let it = self
                .items
                .iter()
                .find(|i| i.item == m.item)
                .expect("item summary");
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.write_record([
                self.scenario.clone(),
                self.mechanism.clone(),
                self.population_size.to_string(),
                self.replicates.to_string(),
                self.completed.to_string(),
                m.method.label(),
                m.item.clone(),
                m.mean_variance.to_string(),
                m.empirical_variance.to_string(),
                opt(m.relative_bias),
                opt(m.relative_bias_se),
                m.coverage.to_string(),
                m.coverage_halfwidth.to_string(),
                it.mean_estimate.to_string(),
                it.mean_true_total.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Coverage in percent with Monte Carlo bounds, ready for plotting.
    pub fn write_coverage_csv<W: Write>(&self, w: W, level: f64) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "scenario",
            "mechanism",
            "method",
            "item",
            "coverage_pct",
            "lower_pct",
            "upper_pct",
            "nominal_pct",
        ])?;
        for m in &self.methods {
            out.write_record([
                self.scenario.clone(),
                self.mechanism.clone(),
                m.method.label(),
                m.item.clone(),
                (100.0 * m.coverage).to_string(),
                (100.0 * (m.coverage - m.coverage_halfwidth).max(0.0)).to_string(),
                (100.0 * (m.coverage + m.coverage_halfwidth).min(1.0)).to_string(),
                (100.0 * level).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
