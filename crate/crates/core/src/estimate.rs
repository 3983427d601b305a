//! Point and variance estimates for an imputed sample under each variance
//! estimator, and their tabular report.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::imputation::{imputed_total, ImputedSample};
use crate::smooth::{
    fit_ratio, fit_sigma, predict_m, residuals, RatioFit, RatioMethod, SigmaMethod, SmoothConfig,
};
use crate::variance::{
    coefficient_of_variation, confidence_interval, ve_direct, ve_modeled, ve_negligible, vm,
    VeMode, VmMode,
};

/// A variance estimator for the imputed total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    /// Complete-data design variance applied to the imputed values.
    Naive,
    Smooth {
        ratio: RatioMethod,
        sigma: SigmaMethod,
    },
}

impl Estimator {
    pub fn direct(ratio: RatioMethod) -> Self {
        Estimator::Smooth {
            ratio,
            sigma: SigmaMethod::Direct,
        }
    }

    pub fn modeled(ratio: RatioMethod) -> Self {
        Estimator::Smooth {
            ratio,
            sigma: SigmaMethod::modeled_for(ratio),
        }
    }

    /// The six model-based estimators: each ratio model with direct and
    /// modeled residuals.
    pub fn six() -> Vec<Estimator> {
        RatioMethod::ALL
            .iter()
            .flat_map(|&r| [Estimator::direct(r), Estimator::modeled(r)])
            .collect()
    }

    /// Naive followed by the six model-based estimators.
    pub fn all() -> Vec<Estimator> {
        std::iter::once(Estimator::Naive)
            .chain(Self::six())
            .collect()
    }

    pub fn ratio(self) -> Option<RatioMethod> {
        match self {
            Estimator::Naive => None,
            Estimator::Smooth { ratio, .. } => Some(ratio),
        }
    }

    /// Table label: `NAIVE`, `PARAM2`, `PARAM2(M)` and so on.
    pub fn label(self) -> String {
        match self {
            Estimator::Naive => "NAIVE".into(),
            Estimator::Smooth { ratio, sigma } if sigma.is_direct() => ratio.label().into(),
            Estimator::Smooth { sigma, .. } => sigma.label().into(),
        }
    }

    pub fn ratio_label(self) -> &'static str {
        match self {
            Estimator::Naive => "NAIVE",
            Estimator::Smooth { ratio, .. } => ratio.label(),
        }
    }

    pub fn sigma_label(self) -> &'static str {
        match self {
            Estimator::Naive => "NONE",
            Estimator::Smooth { sigma, .. } => sigma.label(),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    /// Accepts `naive`, `param2`, `param2-direct`, `param2-modeled`,
    /// `param2m` and the table labels.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase().replace("(m)", "-modeled");
        if lower == "naive" {
            return Ok(Estimator::Naive);
        }
        let (ratio, modeled) = if let Some(r) = lower.strip_suffix("-modeled") {
            (r, true)
        } else if let Some(r) = lower.strip_suffix("-direct") {
            (r, false)
        } else if let Some(r) = lower
            .strip_suffix('m')
            .filter(|r| r.parse::<RatioMethod>().is_ok())
        {
            (r, true)
        } else {
            (lower.as_str(), false)
        };
        let ratio: RatioMethod = ratio
            .parse()
            .map_err(|_| Error::Config(format!("unknown variance method `{s}`")))?;
        Ok(if modeled {
            Estimator::modeled(ratio)
        } else {
            Estimator::direct(ratio)
        })
    }
}

impl Serialize for Estimator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Estimator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub ve_mode: VeMode,
    pub vm_mode: VmMode,
    pub smooth: SmoothConfig,
    /// Two-sided confidence level.
    pub level: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            ve_mode: VeMode::Full,
            vm_mode: VmMode::Analytic,
            smooth: SmoothConfig::default(),
            level: 0.95,
        }
    }
}

/// One row of a variance report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEstimate {
    pub item: String,
    pub method_r: String,
    pub method_sigma: String,
    pub estimate: f64,
    pub vm: f64,
    pub ve: f64,
    pub v_total: f64,
    pub cv_pct: Option<f64>,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEstimate {
    pub estimator: Estimator,
    pub items: Vec<ItemEstimate>,
    /// Residual-variance predictions floored at zero.
    pub floored: usize,
}

impl MethodEstimate {
    pub fn variances(&self) -> Vec<f64> {
        self.items.iter().map(|r| r.v_total).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub item_labels: Vec<String>,
    /// Imputed totals per item.
    pub totals: Vec<f64>,
    /// Weighted total of `x` over the whole sample.
    pub total_x: f64,
    pub methods: Vec<MethodEstimate>,
    /// Diagnostics of the nonparametric ratio fit, when one was made.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gam: Option<serde_json::Value>,
}

impl VarianceReport {
    pub fn method(&self, estimator: Estimator) -> Option<&MethodEstimate> {
        self.methods.iter().find(|m| m.estimator == estimator)
    }

    pub fn rows(&self) -> impl Iterator<Item = &ItemEstimate> {
        self.methods.iter().flat_map(|m| m.items.iter())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "item",
            "method_R",
            "method_sigma",
            "estimate",
            "vm",
            "ve",
            "v_total",
            "cv_pct",
            "ci_lo",
            "ci_hi",
        ])?;
        for r in self.rows() {
            out.write_record([
                r.item.clone(),
                r.method_r.clone(),
                r.method_sigma.clone(),
                r.estimate.to_string(),
                r.vm.to_string(),
                r.ve.to_string(),
                r.v_total.to_string(),
                r.cv_pct.map(|v| v.to_string()).unwrap_or_default(),
                r.ci_lo.to_string(),
                r.ci_hi.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Estimates for every requested estimator. Ratio fits, predictions and
/// `Vm` are computed once per ratio model and shared.
pub fn estimate(
    imp: &ImputedSample,
    estimators: &[Estimator],
    config: &EstimationConfig,
    exec: Execution,
) -> Result<VarianceReport> {
    if estimators.is_empty() {
        return Err(Error::Config("no variance estimators requested".into()));
    }
    let s = &imp.sample;
    let delta = &imp.delta;
    let kappa = &imp.assignment.kappa;
    let totals = imputed_total(imp).filled;

    struct RatioPieces {
        fit: RatioFit,
        e: Array2<f64>,
        vm: Vec<f64>,
    }
    let mut pieces: HashMap<RatioMethod, RatioPieces> = HashMap::new();
    for r in RatioMethod::ALL {
        if !estimators.iter().any(|e| e.ratio() == Some(r)) {
            continue;
        }
        let fit = fit_ratio(r, s, delta, &config.smooth)?;
        let m = predict_m(&fit, s);
        let e = residuals(s, delta, &m);
        let vm = vm(s, m.view(), config.vm_mode, exec)?;
        pieces.insert(r, RatioPieces { fit, e, vm });
    }

    let mut methods = Vec::with_capacity(estimators.len());
    for &est in estimators {
        let (vm_t, ve_t, floored) = match est {
            Estimator::Naive => (
                vm(s, imp.values.view(), config.vm_mode, exec)?,
                vec![0.0; s.num_items()],
                0,
            ),
            Estimator::Smooth { ratio, sigma } => {
                let p = &pieces[&ratio];
                let sf = fit_sigma(sigma, &p.fit, s, delta, &p.e, &config.smooth)?;
                let ve_t = match (config.ve_mode, sigma.is_direct()) {
                    (VeMode::Full, true) => ve_direct(s, delta, kappa, &p.e),
                    (VeMode::Full, false) => ve_modeled(s, delta, kappa, &sf.sigma2),
                    (VeMode::NegligibleF, _) => ve_negligible(s, delta, kappa, &sf.sigma2),
                };
                (p.vm.clone(), ve_t, sf.floored)
            }
        };
        let items = (0..s.num_items())
            .map(|t| {
                let v_total = vm_t[t] + ve_t[t];
                let (ci_lo, ci_hi) = confidence_interval(totals[t], v_total, config.level);
                ItemEstimate {
                    item: s.item_labels[t].clone(),
                    method_r: est.ratio_label().into(),
                    method_sigma: est.sigma_label().into(),
                    estimate: totals[t],
                    vm: vm_t[t],
                    ve: ve_t[t],
                    v_total,
                    cv_pct: coefficient_of_variation(totals[t], v_total),
                    ci_lo,
                    ci_hi,
                }
            })
            .collect();
        methods.push(MethodEstimate {
            estimator: est,
            items,
            floored,
        });
    }

    let total_x = crate::stats::pairwise_sum(
        &s.weights
            .iter()
            .zip(&s.x)
            .map(|(w, x)| w * x)
            .collect::<Vec<_>>(),
    );
    let gam = pieces
        .get(&RatioMethod::Nonparam)
        .and_then(|p| p.fit.gam())
        .map(|g| serde_json::to_value(&g.diagnostics).expect("diagnostics serialize"));
    Ok(VarianceReport {
        item_labels: s.item_labels.clone(),
        totals,
        total_x,
        methods,
        gam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_names_round_trip() {
        for e in Estimator::all() {
            assert_eq!(e.label().parse::<Estimator>().unwrap(), e);
        }
        assert_eq!(
            "param2-modeled".parse::<Estimator>().unwrap(),
            Estimator::modeled(RatioMethod::Param2)
        );
        assert_eq!(
            "nonparam-direct".parse::<Estimator>().unwrap(),
            Estimator::direct(RatioMethod::Nonparam)
        );
        assert_eq!(
            "param1m".parse::<Estimator>().unwrap(),
            Estimator::modeled(RatioMethod::Param1)
        );
        assert!("param3".parse::<Estimator>().is_err());
        assert_eq!(Estimator::all().len(), 7);
    }
}
