//! TOML study configuration and the bundled presets.

use serde::Deserialize;
use toml::Spanned;

use nnri::design::SampleDesign;
use nnri::estimate::{EstimationConfig, Estimator};
use nnri::popgen::{PopulationConfig, Scenario};
use nnri::response::ResponseMechanism;
use nnri::sim::StudyConfig;
use nnri::smooth::SmoothConfig;
use nnri::variance::{VeMode, VmMode};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenario: Spanned<String>,
    population_size: usize,
    replicates: usize,
    seed: u64,
    num_items: Option<usize>,
    methods: Option<Vec<Spanned<String>>>,
    #[serde(default)]
    strata: StrataSection,
    response: ResponseSection,
    #[serde(default)]
    estimation: EstimationSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StrataSection {
    boundaries: Option<Vec<f64>>,
    fractions: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseSection {
    mechanism: Spanned<String>,
    probability: Option<f64>,
    propensities: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
struct EstimationSection {
    ve_mode: Option<VeMode>,
    vm_mode: Option<VmMode>,
    level: Option<f64>,
    rank: Option<usize>,
    max_iter: Option<usize>,
    tol: Option<f64>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn field_error(text: &str, origin: &str, span: std::ops::Range<usize>, msg: String) -> String {
    format!("{origin}:{}: {msg}", line_of(text, span.start))
}

/// Parse a study configuration. `origin` names the source in messages.
pub fn parse_config(text: &str, origin: &str) -> Result<StudyConfig, String> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| format!("{origin}: {e}"))?;

    let scenario = Scenario::parse(file.scenario.get_ref()).ok_or_else(|| {
        field_error(
            text,
            origin,
            file.scenario.span(),
            format!(
                "field `scenario`: unknown scenario `{}` (expected scenario1, scenario2 or scenario3)",
                file.scenario.get_ref()
            ),
        )
    })?;

    let r = &file.response;
    let mechanism = match r.mechanism.get_ref().to_ascii_lowercase().as_str() {
        "mcar" => ResponseMechanism::mcar(r.probability.ok_or_else(|| {
            field_error(
                text,
                origin,
                r.mechanism.span(),
                "field `response.probability` is required for mcar".into(),
            )
        })?),
        "mar" => ResponseMechanism::StratumMar {
            propensities: r.propensities.clone().ok_or_else(|| {
                field_error(
                    text,
                    origin,
                    r.mechanism.span(),
                    "field `response.propensities` is required for mar".into(),
                )
            })?,
        },
        other => return Err(field_error(
            text,
            origin,
            r.mechanism.span(),
            format!(
                "field `response.mechanism`: unknown mechanism `{other}` (expected mcar or mar)"
            ),
        )),
    };

    let mut population = PopulationConfig::new(scenario, file.population_size, file.seed);
    if let Some(b) = file.strata.boundaries {
        population.strata_boundaries = b;
    }
    if let Some(t) = file.num_items {
        population.num_items = t;
    }
    let design = match file.strata.fractions {
        Some(f) => SampleDesign::new(f),
        None => SampleDesign::business_survey(),
    };

    let methods = match &file.methods {
        None => Estimator::all(),
        Some(list) => list
            .iter()
            .map(|m| {
                m.get_ref().parse::<Estimator>().map_err(|e| {
                    field_error(text, origin, m.span(), format!("field `methods`: {e}"))
                })
            })
            .collect::<Result<_, _>>()?,
    };

    let e = &file.estimation;
    let defaults = SmoothConfig::default();
    let estimation = EstimationConfig {
        ve_mode: e.ve_mode.unwrap_or_default(),
        vm_mode: e.vm_mode.unwrap_or_default(),
        level: e.level.unwrap_or(0.95),
        smooth: SmoothConfig {
            rank: e.rank.unwrap_or(defaults.rank),
            max_iter: e.max_iter.unwrap_or(defaults.max_iter),
            tol: e.tol.unwrap_or(defaults.tol),
        },
    };

    Ok(StudyConfig {
        population,
        design,
        mechanism,
        replicates: file.replicates,
        methods,
        seed: file.seed,
        estimation,
    })
}

macro_rules! presets {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../presets/", $name, ".toml")))),*]
    };
}

/// Every shipped preset: three scenarios, four response mechanisms and two
/// population sizes.
pub const PRESETS: &[(&str, &str)] = presets![
    "scenario1-mcar75-n1000",
    "scenario1-mcar75-n500",
    "scenario1-mcar50-n1000",
    "scenario1-mcar50-n500",
    "scenario1-negative-mar-n1000",
    "scenario1-negative-mar-n500",
    "scenario1-positive-mar-n1000",
    "scenario1-positive-mar-n500",
    "scenario2-mcar75-n1000",
    "scenario2-mcar75-n500",
    "scenario2-mcar50-n1000",
    "scenario2-mcar50-n500",
    "scenario2-negative-mar-n1000",
    "scenario2-negative-mar-n500",
    "scenario2-positive-mar-n1000",
    "scenario2-positive-mar-n500",
    "scenario3-mcar75-n1000",
    "scenario3-mcar75-n500",
    "scenario3-mcar50-n1000",
    "scenario3-mcar50-n500",
    "scenario3-negative-mar-n1000",
    "scenario3-negative-mar-n500",
    "scenario3-positive-mar-n1000",
    "scenario3-positive-mar-n500",
];

/// Look up a preset. `paper-<scenario>-<mechanism>` is shorthand for the
/// N = 1000 version.
pub fn preset(name: &str) -> Option<&'static str> {
    let name = name.trim().to_ascii_lowercase();
    let name = match name.strip_prefix("paper-") {
        Some(rest) if !rest.ends_with("-n500") && !rest.ends_with("-n1000") => {
            format!("{rest}-n1000")
        }
        Some(rest) => rest.to_string(),
        None => name,
    };
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
