mod analysis;
mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nnri::design::draw_sample;
use nnri::estimate::{estimate, EstimationConfig, Estimator};
use nnri::exec::{with_threads, Execution};
use nnri::imputation::nnri as run_nnri;
use nnri::io::{
    read_dataset_csv, write_dataset_csv, write_imputed_csv, write_population_csv, EmpiricalDataset,
    DEFAULT_ADDITIVITY_TOLERANCE,
};
use nnri::popgen::{generate_population, PopulationConfig};
use nnri::response::draw_response;
use nnri::sim::{run_study, StudyConfig};
use nnri::variance::{VeMode, VmMode};

#[derive(Parser)]
#[command(
    name = "nnri",
    version,
    about = "Nearest-neighbor ratio imputation and variance estimation"
)]
struct Cli {
    /// Worker threads (0 uses every core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo study from a config file or preset.
    Simulate {
        #[command(flatten)]
        source: ConfigSource,
        /// Override the number of replicates.
        #[arg(long)]
        replicates: Option<usize>,
        #[command(flatten)]
        est: EstimationArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Impute a dataset and report detail ratios, variance ratios and CVs.
    Analyze {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        est: EstimationArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Impute a dataset and write the filled values with donor ids.
    Impute {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Impute a dataset and write the variance report.
    Variance {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        est: EstimationArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Draw one population, sample and response pattern and write them as CSV.
    Generate {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// List the bundled presets.
    Presets,
}

#[derive(Args)]
struct ConfigSource {
    /// TOML study configuration.
    config: Option<PathBuf>,
    /// Bundled configuration, e.g. scenario1-mcar75-n1000 or paper-scenario1-mcar75.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset CSV: unit_id, cell, stratum, weight, x, detail items, respondent.
    data: PathBuf,
    /// Allowed relative gap between a respondent's details and its total.
    #[arg(long, default_value_t = DEFAULT_ADDITIVITY_TOLERANCE)]
    tolerance: f64,
}

#[derive(Args)]
struct EstimationArgs {
    /// Variance estimators, e.g. param2-direct or nonparam-modeled (repeatable).
    #[arg(long = "method")]
    methods: Vec<String>,
    #[arg(long, value_enum)]
    ve_mode: Option<VeModeArg>,
    #[arg(long, value_enum)]
    vm_mode: Option<VmModeArg>,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum VeModeArg {
    Full,
    NegligibleF,
}

#[derive(Clone, Copy, ValueEnum)]
enum VmModeArg {
    Analytic,
    Jackknife,
}

/// A failure with its process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }
}

impl From<nnri::Error> for Failure {
    fn from(e: nnri::Error) -> Self {
        use nnri::Error as E;
        let code = match &e {
            E::Config(_) | E::Allocation { .. } => 2,
            E::Fit(_) | E::NonConvergence(_) => 4,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::data(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_failure(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_failure(path, e))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| io_failure(path, e))
}

fn prepare_out_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn load_config(source: &ConfigSource) -> Result<StudyConfig, Failure> {
    let (text, origin) = match (&source.config, &source.preset) {
        (Some(path), _) => (
            fs::read_to_string(path)
                .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?,
            path.display().to_string(),
        ),
        (None, Some(name)) => (
            config::preset(name)
                .ok_or_else(|| {
                    Failure::config(format!("unknown preset `{name}`; run `nnri presets`"))
                })?
                .to_string(),
            format!("preset {name}"),
        ),
        (None, None) => return Err(Failure::config("give a config file or --preset")),
    };
    let mut config = config::parse_config(&text, &origin).map_err(Failure::config)?;
    if let Some(seed) = source.seed {
        config.seed = seed;
        config.population.seed = seed;
    }
    Ok(config)
}

fn apply_estimation(args: &EstimationArgs, base: &mut EstimationConfig) {
    if let Some(m) = args.ve_mode {
        base.ve_mode = match m {
            VeModeArg::Full => VeMode::Full,
            VeModeArg::NegligibleF => VeMode::NegligibleF,
        };
    }
    if let Some(m) = args.vm_mode {
        base.vm_mode = match m {
            VmModeArg::Analytic => VmMode::Analytic,
            VmModeArg::Jackknife => VmMode::Jackknife,
        };
    }
}

fn parse_methods(args: &EstimationArgs) -> Result<Option<Vec<Estimator>>, Failure> {
    if args.methods.is_empty() {
        return Ok(None);
    }
    let mut out = Vec::new();
    for m in &args.methods {
        let e: Estimator = m
            .parse()
            .map_err(|e: nnri::Error| Failure::config(format!("--method: {e}")))?;
        if !out.contains(&e) {
            out.push(e);
        }
    }
    Ok(Some(out))
}

fn load_dataset(args: &DataArgs) -> Result<EmpiricalDataset, Failure> {
    let f = File::open(&args.data).map_err(|e| io_failure(&args.data, e))?;
    read_dataset_csv(BufReader::new(f), args.tolerance).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", args.data.display(), f.message);
        f
    })
}

fn impute_dataset(ds: &EmpiricalDataset) -> Result<nnri::imputation::ImputedSample, Failure> {
    if !ds.demoted.is_empty() {
        eprintln!(
            "{} respondent(s) failed the additivity check and were imputed",
            ds.demoted.len()
        );
    }
    Ok(run_nnri(&ds.sample, &ds.respondent)?)
}

fn simulate(
    source: &ConfigSource,
    replicates: Option<usize>,
    est: &EstimationArgs,
    out: &OutputArgs,
) -> Result<(), Failure> {
    let mut config = load_config(source)?;
    if let Some(b) = replicates {
        config.replicates = b;
    }
    if let Some(m) = parse_methods(est)? {
        config.methods = m;
    }
    apply_estimation(est, &mut config.estimation);
    config.validate()?;
    prepare_out_dir(&out.out_dir)?;

    let report = run_study(&config, Execution::Parallel)?;
    match out.format {
        Format::Csv => {
            report.write_csv(create(&out.out_dir.join("study.csv"))?)?;
            report.write_coverage_csv(
                create(&out.out_dir.join("coverage.csv"))?,
                config.estimation.level,
            )?;
        }
        Format::Json => write_json(&out.out_dir.join("study.json"), &report)?,
    }
    println!(
        "{} {} N={} B={} completed={} failed={}",
        report.scenario,
        report.mechanism,
        report.population_size,
        report.replicates,
        report.completed,
        report.failed
    );
    for f in &report.failures {
        eprintln!("replicate failure: {f}");
    }
    println!(
        "\nrelative bias of the variance estimators\n{}",
        report.relative_bias_table()
    );
    Ok(())
}

fn with_naive(methods: Option<Vec<Estimator>>) -> Vec<Estimator> {
    let mut m = methods.unwrap_or_else(Estimator::all);
    if !m.contains(&Estimator::Naive) {
        m.insert(0, Estimator::Naive);
    }
    m
}

fn analyze(data: &DataArgs, est: &EstimationArgs, out: &OutputArgs) -> Result<(), Failure> {
    let methods = with_naive(parse_methods(est)?);
    let mut cfg = EstimationConfig::default();
    apply_estimation(est, &mut cfg);
    let ds = load_dataset(data)?;
    let imp = impute_dataset(&ds)?;
    let report = estimate(&imp, &methods, &cfg, Execution::Parallel)?;
    let result = analysis::analyze(
        report,
        ds.sample.len(),
        imp.num_respondents(),
        ds.demoted.clone(),
    );
    prepare_out_dir(&out.out_dir)?;
    match out.format {
        Format::Csv => {
            let path = out.out_dir.join("analysis.csv");
            result
                .write_csv(create(&path)?)
                .map_err(|e| io_failure(&path, e))?;
        }
        Format::Json => write_json(&out.out_dir.join("analysis.json"), &result)?,
    }
    println!(
        "n={} respondents={} demoted={}",
        result.sample_size,
        result.respondents,
        result.demoted.len()
    );
    println!(
        "\ndetail ratios and variance ratios to NAIVE\n{}",
        result.ratio_table()
    );
    println!("coefficients of variation (%)\n{}", result.cv_table());
    Ok(())
}

fn impute(data: &DataArgs, out_dir: &Path) -> Result<(), Failure> {
    let ds = load_dataset(data)?;
    let imp = impute_dataset(&ds)?;
    prepare_out_dir(out_dir)?;
    write_imputed_csv(&imp, create(&out_dir.join("imputed.csv"))?)?;
    println!(
        "n={} respondents={} imputed={}",
        ds.sample.len(),
        imp.num_respondents(),
        imp.assignment.num_recipients()
    );
    Ok(())
}

fn variance(data: &DataArgs, est: &EstimationArgs, out: &OutputArgs) -> Result<(), Failure> {
    let methods = parse_methods(est)?.unwrap_or_else(Estimator::all);
    let mut cfg = EstimationConfig::default();
    apply_estimation(est, &mut cfg);
    let ds = load_dataset(data)?;
    let imp = impute_dataset(&ds)?;
    let report = estimate(&imp, &methods, &cfg, Execution::Parallel)?;
    prepare_out_dir(&out.out_dir)?;
    match out.format {
        Format::Csv => report.write_csv(create(&out.out_dir.join("variance.csv"))?)?,
        Format::Json => write_json(&out.out_dir.join("variance.json"), &report)?,
    }
    for r in report.rows() {
        println!(
            "{:<10} {:<12} {:<10} {:>16.2} {:>16.6e}",
            r.item, r.method_r, r.method_sigma, r.estimate, r.v_total
        );
    }
    Ok(())
}

fn generate(source: &ConfigSource, out_dir: &Path) -> Result<(), Failure> {
    let config = load_config(source)?;
    config.validate()?;
    let pop = generate_population(
        &PopulationConfig {
            seed: config.seed,
            ..config.population.clone()
        },
        Execution::Parallel,
    )?;
    let sample = draw_sample(&pop, &config.design, config.seed)?;
    let delta = draw_response(&sample, &config.mechanism, config.seed)?;
    prepare_out_dir(out_dir)?;
    write_population_csv(&pop, create(&out_dir.join("population.csv"))?)?;
    write_dataset_csv(&sample, &delta, create(&out_dir.join("dataset.csv"))?)?;
    let totals: Vec<String> = pop.true_totals.iter().map(|t| t.to_string()).collect();
    println!(
        "N={} n={} true totals: {}",
        pop.len(),
        sample.len(),
        totals.join(", ")
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Simulate {
            source,
            replicates,
            est,
            out,
        } => simulate(source, *replicates, est, out),
        Command::Analyze { data, est, out } => analyze(data, est, out),
        Command::Impute { data, out_dir } => impute(data, out_dir),
        Command::Variance { data, est, out } => variance(data, est, out),
        Command::Generate { source, out_dir } => generate(source, out_dir),
        Command::Presets => {
            for (name, _) in config::PRESETS {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads;
    match with_threads(threads, move || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
