use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use nnri::design::{draw_sample, SampleDesign};
use nnri::exec::Execution;
use nnri::popgen::{generate_population, PopulationConfig, Scenario};
use nnri::response::ResponseMechanism;
use nnri::sim::{run_study, StudyConfig};
use nnri::variance::vm_jackknife;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn population(c: &mut Criterion) {
    let config = PopulationConfig::new(Scenario::LognormalLarge, 50_000, 1);
    let mut g = c.benchmark_group("population_50k");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_population(&config, exec).unwrap())
        });
    }
    g.finish();
}

fn jackknife(c: &mut Criterion) {
    let pop = generate_population(
        &PopulationConfig::new(Scenario::Uniform100k, 20_000, 2),
        Execution::Parallel,
    )
    .unwrap();
    let sample = draw_sample(&pop, &SampleDesign::business_survey(), 2).unwrap();
    let mut g = c.benchmark_group("jackknife");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| vm_jackknife(&sample, sample.y.view(), exec).unwrap())
        });
    }
    g.finish();
}

fn study(c: &mut Criterion) {
    let config = StudyConfig::new(
        Scenario::Uniform100k,
        500,
        ResponseMechanism::mcar(0.75),
        16,
        3,
    );
    let mut g = c.benchmark_group("study_b16");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_study(&config, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, population, jackknife, study);
criterion_main!(benches);
