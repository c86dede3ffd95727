use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cmdesign::channels::generate_channels;
use cmdesign::harness::{
    evaluate, evaluate_random_baseline, records_to_csv, rip_report, run_experiment, Algorithm, ExperimentConfig,
};
use cmdesign::lbcs::{mc_lbcs, McLbcsConfig};
use cmdesign::learner::{random_search, Hyperparameters, Init, SearchSpace, SphereTargets, TrainConfig};
use cmdesign::matrix_file::MatrixFile;
use cmdesign::{ChannelModel, ChannelModelSpec, ChannelSet, Dictionary, KernelSpec, Normalization, SeededRng};

#[derive(Parser)]
#[command(name = "cmdesign", version, about = "Constant-modulus measurement matrix design and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw channels from a model and write them to a binary file.
    GenData(GenData),
    /// Learn a matrix by MMD minimization with random hyperparameter search.
    Train(Train),
    /// Monte-Carlo LBCS matrix for one SNR.
    Lbcs(Lbcs),
    /// Relative MSE of OMP recovery over an SNR sweep.
    Evaluate(Evaluate),
    /// Full experiment from a TOML config and/or flags; writes CSV and metadata.
    RunExperiment(RunExperiment),
    /// Norm statistics of A h over normalized probe channels.
    RipReport(RipReportArgs),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    model: ChannelModel,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    /// Dictionary grid size for multipath channels (default 16n).
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    seed: u64,
    /// Stream label, so sets drawn with one seed stay independent.
    #[arg(long, default_value = "data")]
    stream: String,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    trials: usize,
    #[arg(long, num_args = 2, default_values_t = [150, 1500])]
    batch_size: Vec<usize>,
    #[arg(long, num_args = 2, default_values_t = [1e-6, 5e-3])]
    learning_rate: Vec<f64>,
    #[arg(long, num_args = 2, default_values_t = [0.94, 1.0])]
    decay: Vec<f64>,
    #[arg(long, default_value_t = 20_000)]
    max_iterations: usize,
    #[arg(long, default_value_t = 100)]
    validation_interval: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value = "average")]
    normalization: Normalization,
    #[arg(long, default_value = "fresh", value_parser = parse_sphere_targets)]
    sphere_targets: SphereTargets,
    /// Kernel bandwidths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 5.0, 10.0, 20.0, 40.0, 80.0])]
    bandwidths: Vec<f64>,
    /// Start from the phases of this matrix file.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the training report of the selected trial as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct Lbcs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    snr: f64,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct Evaluate {
    /// Matrix file; omit and pass --random-m for the random baseline.
    #[arg(long, conflicts_with = "random_m")]
    matrix: Option<PathBuf>,
    /// Draw a fresh m-row Steinhaus matrix per test channel.
    #[arg(long)]
    random_m: Option<usize>,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    snr: Vec<f64>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "matrix")]
    label: String,
    /// CSV destination; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunExperiment {
    /// TOML file with ExperimentConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    model: Option<ChannelModel>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<Algorithm>>,
    #[arg(long)]
    test_count: Option<usize>,
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    val_count: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
    /// Print the resolved config as TOML and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct RipReportArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    probe: PathBuf,
}

fn parse_sphere_targets(s: &str) -> Result<SphereTargets, String> {
    match s {
        "fresh" => Ok(SphereTargets::Fresh),
        "fixed" => Ok(SphereTargets::Fixed),
        _ => Err(format!("expected 'fresh' or 'fixed', got '{s}'")),
    }
}

fn read_channels(path: &Path) -> Result<ChannelSet> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ChannelSet::read_from(BufReader::new(file)).with_context(|| format!("reading channels from {}", path.display()))
}

fn write_channels(set: &ChannelSet, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    set.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

fn pair(v: &[f64]) -> (f64, f64) {
    (v[0], v[1])
}

fn gen_data(args: GenData) -> Result<()> {
    let mut spec = ChannelModelSpec::new(args.model, args.n, args.p);
    if let Some(g) = args.grid {
        spec = spec.with_grid(g);
    }
    let set = generate_channels(&spec, args.count, &SeededRng::new(args.seed).substream(&args.stream))?;
    write_channels(&set, &args.out)
}

fn train(args: Train) -> Result<()> {
    let train_set = read_channels(&args.train)?;
    let val = read_channels(&args.val)?;
    let kernel = KernelSpec::new(args.bandwidths)?;
    let space = SearchSpace {
        batch_size: (args.batch_size[0], args.batch_size[1]),
        learning_rate: pair(&args.learning_rate),
        decay: pair(&args.decay),
        trials: args.trials,
    };
    let hyper = Hyperparameters { batch_size: space.batch_size.0, learning_rate: space.learning_rate.0, decay: space.decay.0 };
    let mut base = TrainConfig::new(hyper, SeededRng::new(args.seed).substream("learned"));
    base.max_iterations = args.max_iterations;
    base.validation_interval = args.validation_interval;
    base.patience = args.patience;
    base.normalization = args.normalization;
    base.sphere_targets = args.sphere_targets;
    if let Some(path) = &args.init {
        base.init = Init::FromPhases(MatrixFile::load(path)?.phases);
    }
    let outcome = random_search(&train_set, &val, &space, &base, &kernel, args.m)?;
    MatrixFile::learned("learned", outcome.best.phases.clone()).save(&args.out)?;
    if let Some(path) = &args.report {
        outcome.best.save(path)?;
    }
    eprintln!(
        "trial {} of {}: validation MMD² {:.6e} (initial {:.6e}) after {} iterations",
        outcome.best_trial,
        outcome.trials.len(),
        outcome.best.best_validation,
        outcome.best.initial_validation,
        outcome.best.iterations
    );
    Ok(())
}

fn lbcs(args: Lbcs) -> Result<()> {
    let train_set = read_channels(&args.train)?;
    let val = read_channels(&args.val)?;
    let dictionary = Dictionary::for_model(&val.spec);
    let config = McLbcsConfig { snr_db: args.snr, m: args.m, iterations: args.iterations, sparsity: val.spec.p };
    let result = mc_lbcs(&train_set, &val, config, &dictionary, &SeededRng::new(args.seed).substream("lbcs"))?;
    MatrixFile::from_matrix("lbcs", &result.matrix, Some(args.snr))?.save(&args.out)?;
    eprintln!(
        "candidate {} of {}: validation relative MSE {:.6e}",
        result.best_iteration,
        result.candidate_mses.len(),
        result.validation_mse
    );
    Ok(())
}

fn evaluate_cmd(args: Evaluate) -> Result<()> {
    let test = read_channels(&args.test)?;
    let dictionary = Dictionary::for_model(&test.spec);
    let p = test.spec.p;
    let root = SeededRng::new(args.seed).substream("eval");
    let matrix = args.matrix.as_deref().map(MatrixFile::load).transpose()?;
    let mut records = Vec::new();
    for (k, &snr) in args.snr.iter().enumerate() {
        let rng = root.indexed(k as u64);
        let mut record = match (&matrix, args.random_m) {
            (Some(file), None) => evaluate(&file.to_matrix(), &test, snr, p, &dictionary, &rng)?,
            (None, Some(m)) => evaluate_random_baseline(&test, snr, p, &dictionary, m, &rng)?,
            _ => bail!("pass exactly one of --matrix and --random-m"),
        };
        record.algorithm = if args.random_m.is_some() { "random".into() } else { args.label.clone() };
        records.push(record);
    }
    let csv = records_to_csv(&records);
    match &args.out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

/// Merges the optional config file with command-line overrides.
fn resolve_config(args: &RunExperiment) -> Result<ExperimentConfig> {
    let mut table: toml::Table = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => toml::Table::new(),
    };
    let set = |t: &mut toml::Table, key: &str, v: toml::Value| {
        t.insert(key.to_string(), v);
    };
    set(&mut table, "seed", toml::Value::Integer(i64::try_from(args.seed).context("seed too large for TOML")?));
    if let Some(model) = args.model {
        set(&mut table, "model", toml::Value::String(model.name().into()));
    }
    for (key, value) in [("n", args.n), ("m", args.m), ("p", args.p), ("grid", args.grid), ("threads", args.threads)] {
        if let Some(v) = value {
            set(&mut table, key, toml::Value::Integer(v as i64));
        }
    }
    if let Some(snr) = &args.snr {
        set(&mut table, "snr_db", toml::Value::Array(snr.iter().map(|&s| toml::Value::Float(s)).collect()));
    }
    if let Some(algs) = &args.algorithms {
        set(&mut table, "algorithms", toml::Value::Array(algs.iter().map(|a| toml::Value::String(a.name().into())).collect()));
    }
    if let Some(dir) = &args.output_dir {
        set(&mut table, "output_dir", toml::Value::String(dir.to_string_lossy().into_owned()));
    }
    for (key, value) in [("test", args.test_count), ("train", args.train_count), ("val", args.val_count)] {
        if let Some(v) = value {
            let counts = table.entry("counts").or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let toml::Value::Table(c) = counts {
                c.insert(key.into(), toml::Value::Integer(v as i64));
            }
        }
    }
    if let Some(trials) = args.trials {
        let search = table.entry("search").or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if let toml::Value::Table(s) = search {
            s.insert("trials".into(), toml::Value::Integer(trials as i64));
        }
    }
    let config: ExperimentConfig = table.try_into().context("invalid experiment config")?;
    config.validate()?;
    Ok(config)
}

fn run_experiment_cmd(args: RunExperiment) -> Result<()> {
    let config = resolve_config(&args)?;
    if args.dry_run {
        print!("{}", toml::to_string(&config)?);
        return Ok(());
    }
    let out = run_experiment(&config)?;
    println!("{}", out.csv_path.display());
    println!("{}", out.metadata_path.display());
    Ok(())
}

fn rip_report_cmd(args: RipReportArgs) -> Result<()> {
    let a = MatrixFile::load(&args.matrix)?.to_matrix();
    let probe = cmdesign::channels::normalize_per_sample(&read_channels(&args.probe)?)?;
    let report = rip_report(&a, &probe)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Lbcs(a) => lbcs(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::RunExperiment(a) => run_experiment_cmd(a),
        Command::RipReport(a) => rip_report_cmd(a),
    }
}
