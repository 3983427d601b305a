//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Failing criteria are reported but do not fail the run unless
//! `ACCEPTANCE_STRICT=1` is set.

mod common;

use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use common::pipeline_instance;
use nnri::design::{draw_sample, ht_total, SampleDesign};
use nnri::estimate::{estimate, EstimationConfig, Estimator};
use nnri::exec::Execution;
use nnri::imputation::{
    calibration_sides, imputed_total, match_donors, match_donors_exhaustive, nnri,
};
use nnri::popgen::{generate_population, PopulationConfig, Scenario};
use nnri::response::{draw_response, ResponseMechanism};
use nnri::rng::{substream, Stage};
use nnri::sim::{format_relative_bias, run_study, StudyConfig, StudyReport};
use nnri::smooth::bspline::CubicBasis;
use nnri::smooth::gam::GamProblem;
use nnri::smooth::spline::PenalizedSpline;
use nnri::smooth::{fit_ratio, RatioMethod, SmoothConfig};
use nnri::variance::{vm_jackknife, vm_stratified};

/// Master seed for every Monte Carlo study below, fixed before any run.
const STUDY_SEED: u64 = 2024;
const STUDY_REPLICATES: usize = 500;
const STUDY_N: usize = 1000;

struct Outcome {
    results: Vec<(String, bool)>,
}

impl Outcome {
    fn report(&mut self, id: &str, pass: bool, text: String) {
        println!(
            "criterion {id:<3} {} {text}",
            if pass { "PASS" } else { "FAIL" }
        );
        self.results.push((id.to_string(), pass));
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn fmt_rbs(rbs: &[Option<f64>]) -> String {
    rbs.iter()
        .map(|r| format_relative_bias(*r))
        .collect::<Vec<_>>()
        .join(" ")
}

fn calibration_and_forms(out: &mut Outcome) {
    let start = Instant::now();
    let mut worst_cal = 0.0f64;
    let mut worst_form = 0.0f64;
    for k in 0..1000 {
        let (s, delta) = pipeline_instance(k);
        let imp = nnri(&s, &delta).expect("imputation");
        let (lhs, rhs) = calibration_sides(&s, &delta, &imp.assignment.kappa);
        worst_cal = worst_cal.max((lhs - rhs).abs() / rhs);
        worst_form = worst_form.max(imputed_total(&imp).max_relative_gap());
    }
    let secs = start.elapsed().as_secs_f64();
    out.report(
        "1",
        worst_cal <= 1e-9 && secs < 10.0,
        format!("calibration identity on 1000 instances: max rel gap {worst_cal:.2e} (tol 1e-9), {secs:.2} s (limit 10 s)"),
    );
    out.report(
        "2",
        worst_form <= 1e-9,
        format!("filled vs kappa-weighted totals on 1000 instances: max rel gap {worst_form:.2e} (tol 1e-9)"),
    );
}

fn full_response(out: &mut Outcome) {
    let mut exact = true;
    for k in 0..200 {
        let (s, _) = pipeline_instance(k);
        let imp = nnri(&s, &vec![true; s.len()]).expect("imputation");
        exact &= imputed_total(&imp).filled == ht_total(&s.weights, s.y.view());
    }
    let mut max_var = 0.0f64;
    for (k, scenario) in Scenario::ALL.into_iter().enumerate() {
        let pop = generate_population(
            &PopulationConfig::new(scenario, 300, 40 + k as u64),
            Execution::Sequential,
        )
        .expect("population");
        let census = draw_sample(&pop, &SampleDesign::new(vec![1.0; 4]), 1).expect("census");
        let imp = nnri(&census, &vec![true; census.len()]).expect("imputation");
        let report = estimate(
            &imp,
            &Estimator::all(),
            &EstimationConfig::default(),
            Execution::Parallel,
        )
        .expect("estimates");
        for r in report.rows() {
            max_var = max_var.max(r.v_total.abs());
        }
    }
    out.report(
        "3",
        exact && max_var == 0.0,
        format!("full response equals HT total exactly on 200 samples: {exact}; census variances max {max_var:e}"),
    );
}

fn jackknife_identity(out: &mut Outcome) {
    let mut worst = 0.0f64;
    for k in 0..100 {
        let (s, _) = pipeline_instance(5000 + k);
        let a = vm_stratified(&s, s.y.view()).expect("analytic");
        let j = vm_jackknife(&s, s.y.view(), Execution::Parallel).expect("jackknife");
        for (x, y) in a.iter().zip(&j) {
            worst = worst.max(relative_gap(*x, *y));
        }
    }
    out.report(
        "4",
        worst <= 1e-9,
        format!("jackknife vs analytic stratified variance on 100 designs: max rel gap {worst:.2e} (tol 1e-9)"),
    );
}

fn study(scenario: Scenario, mechanism: ResponseMechanism) -> StudyReport {
    let config = StudyConfig::new(scenario, STUDY_N, mechanism, STUDY_REPLICATES, STUDY_SEED);
    let start = Instant::now();
    let report = run_study(&config, Execution::Parallel).expect("study");
    eprintln!(
        "  ran {} {} B={} in {:.1} s ({} failed)",
        report.scenario,
        report.mechanism,
        report.replicates,
        start.elapsed().as_secs_f64(),
        report.failed
    );
    report
}

fn scenario1_relative_bias(out: &mut Outcome, r: &StudyReport) {
    let target = [-0.00, -0.04, -0.07, -0.07, -0.05];
    let param2 = r.relative_biases(Estimator::direct(RatioMethod::Param2));
    let naive = r.relative_biases(Estimator::Naive);
    let param1 = r.relative_biases(Estimator::direct(RatioMethod::Param1));
    let p2_ok = param2
        .iter()
        .zip(target)
        .all(|(rb, p)| rb.is_some_and(|v| (v - p).abs() <= 0.10));
    let naive_ok = naive[1..].iter().all(|rb| rb.is_some_and(|v| v <= -0.5));
    let p1_ok = param1[2..4].iter().all(|rb| rb.is_some_and(|v| v >= 0.2));
    println!(
        "    PARAM2 RB {} (target within 0.10 of (0.00) (0.04) (0.07) (0.07) (0.05)): {}",
        fmt_rbs(&param2),
        ok(p2_ok)
    );
    println!(
        "    NAIVE  RB {} (target <= -0.5 for y2..y5): {}",
        fmt_rbs(&naive),
        ok(naive_ok)
    );
    println!(
        "    PARAM1 RB {} (target >= 0.2 for y3, y4): {}",
        fmt_rbs(&param1),
        ok(p1_ok)
    );
    out.report(
        "5",
        p2_ok && naive_ok && p1_ok,
        "scenario1 N=1000 MCAR(0.75) B=500 relative-bias pattern".into(),
    );
}

fn scenario3_modeled_relative_bias(out: &mut Outcome, r: &StudyReport) {
    let target = [0.04, 0.10, 0.34, 0.00, 0.05];
    let p2m = r.relative_biases(Estimator::modeled(RatioMethod::Param2));
    let p1m = r.relative_biases(Estimator::modeled(RatioMethod::Param1));
    let p2m_ok = p2m
        .iter()
        .zip(target)
        .all(|(rb, p)| rb.is_some_and(|v| (v - p).abs() <= 0.20));
    let p1m_ok = p1m[1..].iter().all(|rb| rb.is_some_and(|v| v <= -0.9));
    println!(
        "    PARAM2(M) RB {} (target within 0.20 of 0.04 0.10 0.34 0.00 0.05): {}",
        fmt_rbs(&p2m),
        ok(p2m_ok)
    );
    println!(
        "    PARAM1(M) RB {} (target <= -0.9 for y2..y5): {}",
        fmt_rbs(&p1m),
        ok(p1m_ok)
    );
    out.report(
        "6",
        p2m_ok && p1m_ok,
        "scenario3 N=1000 MCAR(0.75) B=500 relative-bias pattern".into(),
    );
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "miss"
    }
}

fn coverage(out: &mut Outcome, reports: &[StudyReport]) {
    let mut all = true;
    for r in reports {
        let cov = r.coverages(Estimator::direct(RatioMethod::Param2));
        let good = cov[..3].iter().all(|c| (0.91..=0.975).contains(c));
        all &= good;
        let shown: Vec<String> = cov[..3].iter().map(|c| format!("{c:.3}")).collect();
        println!(
            "    {} {:<13} PARAM2 coverage y1..y3 {}: {}",
            r.scenario,
            r.mechanism,
            shown.join(" "),
            ok(good)
        );
    }
    out.report(
        "7",
        all,
        "PARAM2 95% coverage in [0.91, 0.975] for y1..y3, scenarios 1-2, all mechanisms".into(),
    );
}

fn unbiasedness(out: &mut Outcome, reports: &[StudyReport]) {
    let mut all = true;
    let mut worst = 0.0f64;
    for r in reports {
        for it in &r.items {
            all &= it.unbiased_within(3.0);
            if it.error_se > 0.0 {
                worst = worst.max(it.mean_error.abs() / it.error_se);
            }
        }
    }
    out.report(
        "8",
        all,
        format!(
            "|mean error| <= 3 MC s.e. in all {} configurations: worst {worst:.2} s.e.",
            reports.len()
        ),
    );
}

fn mean_discrepancy(population_size: usize, seeds: u64) -> f64 {
    let mut total = 0.0;
    for seed in 0..seeds {
        let pop = generate_population(
            &PopulationConfig::new(Scenario::Uniform100k, population_size, seed),
            Execution::Parallel,
        )
        .expect("population");
        let s = draw_sample(&pop, &SampleDesign::business_survey(), seed).expect("sample");
        let delta = draw_response(&s, &ResponseMechanism::mcar(0.5), seed).expect("response");
        let d = match_donors(&s, &delta).expect("donors").discrepancies(&s);
        total += d.iter().sum::<f64>() / d.len() as f64;
    }
    total / seeds as f64
}

fn discrepancy_scaling(out: &mut Outcome) {
    let small = mean_discrepancy(1000, 200);
    let large = mean_discrepancy(2000, 200);
    let ratio = small / large;
    out.report(
        "9",
        (1.6..=2.6).contains(&ratio),
        format!("mean matching discrepancy n vs 2n over 200 seeds: {small:.2} / {large:.2} = {ratio:.3} (target [1.6, 2.6])"),
    );
}

fn gradient_check() -> f64 {
    let mut rng = substream(1010, Stage::Test, &[]);
    let mut worst = 0.0f64;
    for case in 0..10 {
        let n = 25 + case * 3;
        let t = 2 + case % 3;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..50.0)).collect();
        let mut y = Array2::zeros((n, t));
        for (i, &xi) in x.iter().enumerate() {
            let w: Vec<f64> = (0..t).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = w.iter().sum();
            for k in 0..t {
                y[[i, k]] = xi * w[k] / s;
            }
        }
        let basis = CubicBasis::at_quantiles(1.0, 50.0, &x, 6).expect("basis");
        let problem = GamProblem::new(&basis, &x, y.view(), 10f64.powi(case as i32 % 5 - 2));
        let theta: Vec<f64> = (0..problem.num_params())
            .map(|_| rng.random_range(-1.5..1.5))
            .collect();
        let g = problem.gradient(&theta);
        for j in 0..theta.len() {
            let h = 1e-6 * (1.0 + theta[j].abs());
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[j] += h;
            dn[j] -= h;
            let fd = (problem.objective(&up) - problem.objective(&dn)) / (2.0 * h);
            worst = worst.max((fd - g[j]).abs() / g[j].abs().max(1e-3));
        }
    }
    worst
}

fn toy_smoother_mse() -> (f64, f64) {
    let x: Vec<f64> = (1..=10).map(f64::from).collect();
    let truth: Vec<f64> = x
        .iter()
        .map(|&v| v.abs().sqrt() + (v - 5.0).abs().powi(2) + v.abs().ln())
        .collect();
    let noise = Normal::new(0.0, 10.0).unwrap();
    let mse = |draw: u64| {
        let mut rng = substream(2, Stage::Test, &[draw]);
        let y: Vec<f64> = truth.iter().map(|t| t + noise.sample(&mut rng)).collect();
        let basis = CubicBasis::at_quantiles(1.0, 10.0, &x, 10).expect("basis");
        let fit = PenalizedSpline::fit(basis, &x, &y).expect("fit");
        x.iter()
            .zip(&truth)
            .map(|(&v, t)| (fit.predict(v) - t).powi(2))
            .sum::<f64>()
            / x.len() as f64
    };
    let mean = (0..100).map(mse).sum::<f64>() / 100.0;
    (mse(0), mean)
}

fn simplex_check() -> f64 {
    let mut worst = 0.0f64;
    let mut rng = substream(3030, Stage::Test, &[]);
    for k in 0..5 {
        let (s, delta) = pipeline_instance(9000 + k);
        let fit =
            fit_ratio(RatioMethod::Nonparam, &s, &delta, &SmoothConfig::default()).expect("gam");
        let gam = fit.gam().expect("nonparametric fit");
        let lo = s.x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s.x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for _ in 0..1000 {
            let r = gam.predict_ratio(rng.random_range(lo..=hi));
            if r.iter().any(|&v| v < 0.0) {
                return f64::INFINITY;
            }
            worst = worst.max((r.iter().sum::<f64>() - 1.0).abs());
        }
    }
    worst
}

fn gam_correctness(out: &mut Outcome) {
    let grad = gradient_check();
    let (single, mean) = toy_smoother_mse();
    let simplex = simplex_check();
    println!("    gradient vs central differences: max rel error {grad:.2e} (tol 1e-5)");
    println!("    toy smoother MSE against truth: mean of 100 draws {mean:.2}, single draw {single:.2} (bound 100)");
    println!("    simplex: max |sum R - 1| {simplex:.2e} over 5000 points (tol 1e-12)");
    out.report(
        "10",
        grad <= 1e-5 && mean < 100.0 && simplex <= 1e-12,
        "GAM gradient, toy fit and simplex checks".into(),
    );
}

fn oracle_matcher(out: &mut Outcome) {
    let mut agree = 0;
    let mut recipients = 0;
    for k in 0..500 {
        let (s, delta) = pipeline_instance(20_000 + k);
        let fast = match_donors(&s, &delta).expect("fast");
        let slow = match_donors_exhaustive(&s, &delta).expect("exhaustive");
        recipients += fast.num_recipients();
        if fast.donor_of == slow.donor_of {
            agree += 1;
        }
    }
    out.report(
        "11",
        agree == 500,
        format!("fast matcher equals exhaustive matcher on {agree}/500 instances ({recipients} recipients)"),
    );
}

fn main() {
    let start = Instant::now();
    let mut out = Outcome {
        results: Vec::new(),
    };

    calibration_and_forms(&mut out);
    full_response(&mut out);
    jackknife_identity(&mut out);

    let mechanisms = [
        ResponseMechanism::mcar(0.75),
        ResponseMechanism::mcar(0.5),
        ResponseMechanism::negative_mar(),
        ResponseMechanism::positive_mar(),
    ];
    let mut reports = Vec::new();
    for scenario in [Scenario::Uniform100k, Scenario::LognormalSmall] {
        for m in &mechanisms {
            reports.push(study(scenario, m.clone()));
        }
    }
    let s3 = study(Scenario::LognormalLarge, ResponseMechanism::mcar(0.75));

    scenario1_relative_bias(&mut out, &reports[0]);
    scenario3_modeled_relative_bias(&mut out, &s3);
    coverage(&mut out, &reports);
    reports.push(s3);
    unbiasedness(&mut out, &reports);
    discrepancy_scaling(&mut out);
    gam_correctness(&mut out);
    oracle_matcher(&mut out);

    out.results
        .sort_by_key(|(id, _)| id.parse::<u32>().unwrap_or(0));
    let passed = out.results.iter().filter(|r| r.1).count();
    let failed: Vec<&str> = out
        .results
        .iter()
        .filter(|r| !r.1)
        .map(|r| r.0.as_str())
        .collect();
    println!(
        "acceptance: {passed}/{} criteria passed{} ({:.0} s)",
        out.results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failing: {}", failed.join(", "))
        },
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
