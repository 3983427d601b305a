//! Response indicators under MCAR and stratum-level MAR mechanisms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::Sample;
use crate::error::{Error, Result};
use crate::rng::{substream, Stage};

/// Redraw budget when a draw leaves an imputation cell without respondents.
pub const MAX_RESPONSE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ResponseMechanism {
    /// Same response probability for every unit.
    Mcar { probability: f64 },
    /// One response probability per stratum.
    StratumMar { propensities: Vec<f64> },
}

impl ResponseMechanism {
    pub fn mcar(p: f64) -> Self {
        ResponseMechanism::Mcar { probability: p }
    }

    /// Small units respond more often.
    pub fn negative_mar() -> Self {
        ResponseMechanism::StratumMar {
            propensities: vec![0.85, 0.65, 0.45, 0.25],
        }
    }

    /// Large units respond more often.
    pub fn positive_mar() -> Self {
        ResponseMechanism::StratumMar {
            propensities: vec![0.25, 0.45, 0.65, 0.85],
        }
    }

    pub fn label(&self) -> String {
        match self {
            ResponseMechanism::Mcar { probability } => {
                format!("mcar{}", (probability * 100.0).round() as i64)
            }
            ResponseMechanism::StratumMar { propensities } => {
                if *self == Self::negative_mar() {
                    "negative-mar".into()
                } else if *self == Self::positive_mar() {
                    "positive-mar".into()
                } else {
                    let parts: Vec<String> = propensities.iter().map(|p| p.to_string()).collect();
                    format!("mar[{}]", parts.join(","))
                }
            }
        }
    }

    pub fn probability(&self, stratum: usize) -> f64 {
        match self {
            ResponseMechanism::Mcar { probability } => *probability,
            ResponseMechanism::StratumMar { propensities } => propensities[stratum],
        }
    }

    pub fn validate(&self, num_strata: usize) -> Result<()> {
        let probs: &[f64] = match self {
            ResponseMechanism::Mcar { probability } => std::slice::from_ref(probability),
            ResponseMechanism::StratumMar { propensities } => {
                if propensities.len() < num_strata {
                    return Err(Error::Config(format!(
                        "response propensities cover {} strata, sample has {num_strata}",
                        propensities.len()
                    )));
                }
                propensities
            }
        };
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::Config(format!(
                "response probability {p} is outside (0, 1]"
            )));
        }
        Ok(())
    }
}

/// Independent Bernoulli response indicators depending only on the stratum.
///
/// A draw that leaves some nonempty imputation cell without a respondent is
/// discarded and redrawn, up to [`MAX_RESPONSE_ATTEMPTS`] times.
pub fn draw_response(
    sample: &Sample,
    mechanism: &ResponseMechanism,
    seed: u64,
) -> Result<Vec<bool>> {
    mechanism.validate(sample.num_strata())?;
    let probs: Vec<f64> = sample
        .strata
        .iter()
        .map(|&h| mechanism.probability(h))
        .collect();
    let cells = sample.cell_members();
    let mut worst = 0;
    for attempt in 0..MAX_RESPONSE_ATTEMPTS {
        let mut rng = substream(seed, Stage::Response, &[attempt as u64]);
        let delta: Vec<bool> = probs.iter().map(|&p| rng.random::<f64>() < p).collect();
        match cells
            .iter()
            .position(|m| !m.is_empty() && !m.iter().any(|&i| delta[i]))
        {
            None => return Ok(delta),
            Some(c) => worst = c,
        }
    }
    Err(Error::EmptyCell {
        cell: sample.cell_labels[worst].clone(),
        attempts: MAX_RESPONSE_ATTEMPTS,
    })
}
