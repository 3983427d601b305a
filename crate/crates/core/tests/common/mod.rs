#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;

use nnri::design::{draw_sample, Sample, SampleDesign, StratumInfo};
use nnri::exec::Execution;
use nnri::popgen::{generate_population, PopulationConfig, Scenario};
use nnri::response::{draw_response, ResponseMechanism};
use nnri::rng::{substream, Stage};

/// One hand-built unit: cell, x, weight, respondent flag, detail shares.
pub type UnitSpec = (usize, f64, f64, bool, [f64; 3]);

/// Build a sample whose strata coincide with cells. Every cell that has a
/// recipient gets its first unit turned into a respondent, so a donor exists.
pub fn build_sample(units: &[UnitSpec]) -> (Sample, Vec<bool>) {
    let n = units.len();
    let num_cells = units.iter().map(|u| u.0).max().unwrap_or(0) + 1;
    let mut delta: Vec<bool> = units.iter().map(|u| u.3).collect();
    for c in 0..num_cells {
        let members: Vec<usize> = (0..n).filter(|&i| units[i].0 == c).collect();
        if members.iter().any(|&i| !delta[i]) && !members.iter().any(|&i| delta[i]) {
            delta[members[0]] = true;
        }
    }
    let mut y = Array2::zeros((n, 3));
    for (i, u) in units.iter().enumerate() {
        let s: f64 = u.4.iter().sum();
        for t in 0..3 {
            y[[i, t]] = u.1 * u.4[t] / s;
        }
    }
    let strata_info = (0..num_cells)
        .map(|c| {
            let members: Vec<usize> = (0..n).filter(|&i| units[i].0 == c).collect();
            let sum_w: f64 = members.iter().map(|&i| units[i].2).sum();
            StratumInfo {
                label: format!("c{c}"),
                population_size: (sum_w.round() as usize).max(members.len()),
                sample_size: members.len(),
            }
        })
        .collect();
    let sample = Sample {
        ids: (0..n).map(|i| 1000 + (i as u64 * 7919) % 10007).collect(),
        strata: units.iter().map(|u| u.0).collect(),
        cells: units.iter().map(|u| u.0).collect(),
        weights: units.iter().map(|u| u.2).collect(),
        x: units.iter().map(|u| u.1).collect(),
        y,
        strata_info,
        cell_labels: (0..num_cells).map(|c| format!("c{c}")).collect(),
        item_labels: Sample::default_item_labels(3),
    };
    (sample, delta)
}

/// Random (sample, response) pair from the full generating pipeline, cycling
/// through the three scenarios with population sizes 100..400 and MCAR
/// response between 0.3 and 0.9.
pub fn pipeline_instance(k: u64) -> (Sample, Vec<bool>) {
    let mut rng = substream(0xACCE, Stage::Test, &[k]);
    let scenario = Scenario::ALL[(k % 3) as usize];
    let population_size = rng.random_range(100..=400);
    let p = rng.random_range(0.3..0.9);
    let seed: u64 = rng.random();
    let pop = generate_population(
        &PopulationConfig::new(scenario, population_size, seed),
        Execution::Sequential,
    )
    .expect("population");
    let sample = draw_sample(&pop, &SampleDesign::business_survey(), seed).expect("sample");
    let delta = draw_response(&sample, &ResponseMechanism::mcar(p), seed).expect("response");
    (sample, delta)
}
