//! Evaluation protocol, random-matrix baseline, RIP diagnostics and the
//! experiment driver that writes CSV results.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{generate_channels, ChannelModel, ChannelModelSpec, ChannelSet, Dictionary, DictionaryKind, Normalization};
use crate::error::{Error, Result};
use crate::lbcs::{mc_lbcs, McLbcsConfig};
use crate::learner::{random_search, Init, SearchOutcome, SearchSpace, SphereTargets, TrainConfig, TrainReport};
use crate::matrix_file::MatrixFile;
use crate::mmd::KernelSpec;
use crate::numeric::{complex_normal, mat_vec, norm_sqr, phases_to_matrix, sample_steinhaus_matrix, ComplexMatrix, PhaseMatrix};
use crate::recovery::{omp_with, OmpOptions};
use crate::rng::SeededRng;

/// Noise standard deviation giving `‖Ah‖² / (m σ²) = 10^(snr_db/10)`.
pub fn noise_std_for_snr(a: &ComplexMatrix, h: &[Complex64], snr_db: f64) -> Result<f64> {
    if a.ncols() != h.len() {
        return Err(Error::dim(format!("A has {} columns, h has length {}", a.ncols(), h.len())));
    }
    noise_std_from_energy(norm_sqr(&mat_vec(a, h)), a.nrows(), snr_db)
}

fn noise_std_from_energy(energy: f64, m: usize, snr_db: f64) -> Result<f64> {
    if energy <= 0.0 {
        return Err(Error::ZeroSignal);
    }
    if snr_db.is_nan() {
        return Err(Error::invalid("SNR is NaN"));
    }
    Ok((energy / (m as f64 * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// What an estimator sees for one test channel.
pub struct Observation<'a> {
    /// `A Ψ`.
    pub effective: &'a ComplexMatrix,
    pub dictionary: &'a Dictionary,
    pub sparsity: usize,
    pub y: &'a [Complex64],
    /// The true channel; only test stubs may look at it.
    pub truth: &'a [Complex64],
}

pub trait ChannelEstimator: Sync {
    fn estimate(&self, obs: &Observation<'_>) -> Result<Vec<Complex64>>;
}

/// `ĥ = Ψ · OMP(AΨ, y, p)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct OmpEstimator {
    pub options: OmpOptions,
}

impl ChannelEstimator for OmpEstimator {
    fn estimate(&self, obs: &Observation<'_>) -> Result<Vec<Complex64>> {
        let s = omp_with(obs.effective, obs.y, obs.sparsity, self.options)?;
        if obs.dictionary.kind == DictionaryKind::Identity {
            return Ok(s.coefficients);
        }
        let psi = &obs.dictionary.matrix;
        let mut h = vec![Complex64::new(0.0, 0.0); psi.nrows()];
        for &j in &s.support {
            let c = s.coefficients[j];
            for (k, hk) in h.iter_mut().enumerate() {
                *hk += psi[(k, j)] * c;
            }
        }
        Ok(h)
    }
}

/// Returns the true channel.
#[derive(Clone, Copy, Debug, Default)]
pub struct PerfectEstimator;

impl ChannelEstimator for PerfectEstimator {
    fn estimate(&self, obs: &Observation<'_>) -> Result<Vec<Complex64>> {
        Ok(obs.truth.to_vec())
    }
}

/// Always estimates zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroEstimator;

impl ChannelEstimator for ZeroEstimator {
    fn estimate(&self, obs: &Observation<'_>) -> Result<Vec<Complex64>> {
        Ok(vec![Complex64::new(0.0, 0.0); obs.truth.len()])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub algorithm: String,
    pub snr: f64,
    /// `Σ‖ĥ − h‖² / Σ‖h‖²`.
    pub mean: f64,
    pub aux: BTreeMap<String, String>,
    /// Measurement matrices used; one for a fixed matrix, one per channel
    /// for the random baseline.
    pub matrices_drawn: usize,
}

fn effective_matrix(a: &ComplexMatrix, dictionary: &Dictionary) -> ComplexMatrix {
    match dictionary.kind {
        DictionaryKind::Identity => a.clone(),
        _ => a * &dictionary.matrix,
    }
}

fn check_eval_inputs(n: usize, data: &ChannelSet, dictionary: &Dictionary) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("no test channels"));
    }
    if data.dim() != n || dictionary.rows() != n {
        return Err(Error::dim(format!(
            "matrix has {n} columns, channels have dimension {}, dictionary has {} rows",
            data.dim(),
            dictionary.rows()
        )));
    }
    Ok(())
}

/// Squared error and energy of one noisy measurement and its estimate.
/// Noise for channel `i` comes from `rng.indexed(i).substream("noise")`.
#[allow(clippy::too_many_arguments)]
fn sample_error(
    a: &ComplexMatrix,
    effective: &ComplexMatrix,
    h: &[Complex64],
    i: usize,
    snr_db: f64,
    p: usize,
    dictionary: &Dictionary,
    rng: &SeededRng,
    estimator: &dyn ChannelEstimator,
) -> Result<(f64, f64)> {
    let clean = mat_vec(a, h);
    let sigma = noise_std_from_energy(norm_sqr(&clean), a.nrows(), snr_db)?;
    let mut g = rng.indexed(i as u64).substream("noise").generator();
    let y: Vec<Complex64> = clean.iter().map(|z| z + complex_normal(&mut g) * sigma).collect();
    let h_hat = estimator.estimate(&Observation {
        effective,
        dictionary,
        sparsity: p,
        y: &y,
        truth: h,
    })?;
    let err: f64 = h_hat.iter().zip(h).map(|(e, t)| (e - t).norm_sqr()).sum();
    Ok((err, norm_sqr(h)))
}

fn ratio_of_sums(parts: Vec<(f64, f64)>) -> Result<f64> {
    let (err, energy) = parts.into_iter().fold((0.0, 0.0), |(e, s), (de, ds)| (e + de, s + ds));
    if energy <= 0.0 {
        return Err(Error::ZeroSignal);
    }
    Ok(err / energy)
}

/// Relative MSE of OMP recovery with one fixed matrix `A`.
pub fn evaluate(a: &ComplexMatrix, data: &ChannelSet, snr_db: f64, p: usize, dictionary: &Dictionary, rng: &SeededRng) -> Result<EvalRecord> {
    evaluate_with(a, data, snr_db, p, dictionary, rng, &OmpEstimator::default())
}

pub fn evaluate_with(
    a: &ComplexMatrix,
    data: &ChannelSet,
    snr_db: f64,
    p: usize,
    dictionary: &Dictionary,
    rng: &SeededRng,
    estimator: &dyn ChannelEstimator,
) -> Result<EvalRecord> {
    check_eval_inputs(a.ncols(), data, dictionary)?;
    let effective = effective_matrix(a, dictionary);
    let parts = data
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, h)| sample_error(a, &effective, h, i, snr_db, p, dictionary, rng, estimator))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalRecord {
        algorithm: "fixed".into(),
        snr: snr_db,
        mean: ratio_of_sums(parts)?,
        aux: BTreeMap::new(),
        matrices_drawn: 1,
    })
}

/// Relative MSE with a fresh Steinhaus matrix per channel, drawn from
/// `rng.indexed(i).substream("matrix")`.
pub fn evaluate_random_baseline(data: &ChannelSet, snr_db: f64, p: usize, dictionary: &Dictionary, m: usize, rng: &SeededRng) -> Result<EvalRecord> {
    evaluate_random_baseline_with(data, snr_db, p, dictionary, m, rng, &OmpEstimator::default())
}

pub fn evaluate_random_baseline_with(
    data: &ChannelSet,
    snr_db: f64,
    p: usize,
    dictionary: &Dictionary,
    m: usize,
    rng: &SeededRng,
    estimator: &dyn ChannelEstimator,
) -> Result<EvalRecord> {
    check_eval_inputs(data.dim(), data, dictionary)?;
    let parts = data
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            let a = sample_steinhaus_matrix(m, data.dim(), &rng.indexed(i as u64).substream("matrix"))?;
            let effective = effective_matrix(&a, dictionary);
            sample_error(&a, &effective, h, i, snr_db, p, dictionary, rng, estimator)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalRecord {
        algorithm: Algorithm::Random.name().into(),
        snr: snr_db,
        mean: ratio_of_sums(parts)?,
        aux: BTreeMap::new(),
        matrices_drawn: data.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RipReport {
    /// `max_i |‖A h̃_i‖² − 1|`.
    pub delta: f64,
    /// Mean of `‖A h̃_i‖`.
    pub mean: f64,
    pub quantiles: Quantiles,
}

/// Norm statistics of `A h̃` over per-sample normalized probes.
pub fn rip_report(a: &ComplexMatrix, probe: &ChannelSet) -> Result<RipReport> {
    if probe.is_empty() {
        return Err(Error::invalid("empty probe set"));
    }
    if probe.dim() != a.ncols() {
        return Err(Error::dim("probe dimension does not match A"));
    }
    let mut norms: Vec<f64> = probe.samples.par_iter().map(|h| norm_sqr(&mat_vec(a, h)).sqrt()).collect();
    let delta = norms.iter().map(|r| (r * r - 1.0).abs()).fold(0.0, f64::max);
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    norms.sort_by(f64::total_cmp);
    let q = |f: f64| {
        let pos = f * (norms.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        norms[lo] + (norms[hi] - norms[lo]) * (pos - lo as f64)
    };
    Ok(RipReport {
        delta,
        mean,
        quantiles: Quantiles { min: q(0.0), q25: q(0.25), median: q(0.5), q75: q(0.75), max: q(1.0) },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Random,
    Lbcs,
    Learned,
    LearnedLbcsInit,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Random => "random",
            Algorithm::Lbcs => "lbcs",
            Algorithm::Learned => "learned",
            Algorithm::LearnedLbcsInit => "learned-lbcs-init",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Algorithm::Random, Algorithm::Lbcs, Algorithm::Learned, Algorithm::LearnedLbcsInit]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Counts {
    pub test: usize,
    pub train: usize,
    pub val: usize,
    pub lbcs_train: usize,
    pub lbcs_val: usize,
    pub lbcs_iterations: usize,
}

impl Default for Counts {
    fn default() -> Self {
        Self {
            test: 10_000,
            train: 50_000,
            val: 1_000,
            lbcs_train: 100_000,
            lbcs_val: 1_000,
            lbcs_iterations: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMetric {
    /// Validation MMD² of each trial's best phases.
    #[default]
    Mmd,
    /// Validation relative MSE at `selection_snr_db`.
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    pub trials: usize,
    pub batch_size: [usize; 2],
    pub learning_rate: [f64; 2],
    pub decay: [f64; 2],
    pub max_iterations: usize,
    pub validation_interval: usize,
    pub patience: usize,
    pub sphere_targets: SphereTargets,
    pub normalization: Normalization,
    pub selection: SelectionMetric,
    pub selection_snr_db: f64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        let space = SearchSpace::default();
        Self {
            trials: space.trials,
            batch_size: [space.batch_size.0, space.batch_size.1],
            learning_rate: [space.learning_rate.0, space.learning_rate.1],
            decay: [space.decay.0, space.decay.1],
            max_iterations: 20_000,
            validation_interval: 100,
            patience: 20,
            sphere_targets: SphereTargets::Fresh,
            normalization: Normalization::Average,
            selection: SelectionMetric::Mmd,
            selection_snr_db: 20.0,
        }
    }
}

impl SearchSettings {
    pub fn space(&self) -> SearchSpace {
        SearchSpace {
            batch_size: (self.batch_size[0], self.batch_size[1]),
            learning_rate: (self.learning_rate[0], self.learning_rate[1]),
            decay: (self.decay[0], self.decay[1]),
            trials: self.trials,
        }
    }
}

fn default_bandwidths() -> Vec<f64> {
    KernelSpec::default().bandwidths().to_vec()
}

fn default_init_snr() -> f64 {
    20.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// One experiment: a channel model, matrix shape and SNR sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ChannelModel,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// Dictionary grid size for multipath channels; defaults to `16 n`.
    #[serde(default)]
    pub grid: Option<usize>,
    pub snr_db: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub counts: Counts,
    #[serde(default = "default_bandwidths")]
    pub kernel_bandwidths: Vec<f64>,
    #[serde(default)]
    pub search: SearchSettings,
    /// SNR of the Monte-Carlo LBCS run that initializes `learned-lbcs-init`.
    #[serde(default = "default_init_snr")]
    pub lbcs_init_snr_db: f64,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Written to a `tag` column of every CSV row when set.
    #[serde(default)]
    pub tag: Option<String>,
}

impl ExperimentConfig {
    pub fn new(model: ChannelModel, n: usize, m: usize, p: usize, seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            model,
            n,
            m,
            p,
            grid: None,
            snr_db: vec![-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            algorithms: vec![Algorithm::Random, Algorithm::Lbcs, Algorithm::Learned],
            counts: Counts::default(),
            kernel_bandwidths: default_bandwidths(),
            search: SearchSettings::default(),
            lbcs_init_snr_db: default_init_snr(),
            seed,
            output_dir: output_dir.into(),
            threads: None,
            tag: None,
        }
    }

    pub fn channel_spec(&self) -> ChannelModelSpec {
        let spec = ChannelModelSpec::new(self.model, self.n, self.p);
        match self.grid {
            Some(g) => spec.with_grid(g),
            None => spec,
        }
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.kernel_bandwidths.clone())
    }

    pub fn stem(&self) -> String {
        format!("{}_n{}_p{}_m{}", self.model.name(), self.n, self.p, self.m)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel_spec().validate()?;
        if self.m == 0 || self.m > self.n {
            return Err(Error::invalid(format!("m = {} must lie in 1..={}", self.m, self.n)));
        }
        if self.p > self.m {
            return Err(Error::invalid(format!("sparsity p = {} exceeds m = {}", self.p, self.m)));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| s.is_nan()) {
            return Err(Error::invalid("SNR grid must be non-empty and free of NaN"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::invalid("no algorithms selected"));
        }
        let unique: BTreeSet<_> = self.algorithms.iter().collect();
        if unique.len() != self.algorithms.len() {
            return Err(Error::invalid("algorithm listed twice"));
        }
        let c = &self.counts;
        if [c.test, c.train, c.val, c.lbcs_train, c.lbcs_val, c.lbcs_iterations].contains(&0) {
            return Err(Error::invalid("all counts must be positive"));
        }
        if self.threads == Some(0) {
            return Err(Error::invalid("threads must be positive"));
        }
        self.kernel()?;
        self.search.space().validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub algorithm: Algorithm,
    /// SNR the matrix was selected at; absent for SNR-independent matrices.
    pub snr_db: Option<f64>,
    pub path: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentMetadata {
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub csv: PathBuf,
    pub matrices: Vec<MatrixEntry>,
    pub training: BTreeMap<String, TrainingSummary>,
    pub lbcs_validation_mse: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub best_trial: usize,
    pub best_validation: f64,
    pub initial_validation: f64,
    pub iterations: usize,
    pub hyper: crate::learner::Hyperparameters,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub records: Vec<EvalRecord>,
    pub csv_path: PathBuf,
    pub metadata_path: PathBuf,
    pub matrices: Vec<MatrixEntry>,
    pub reports: BTreeMap<Algorithm, TrainReport>,
}

/// Runs every configured algorithm over the SNR grid and writes the CSV,
/// metadata and matrix files. On failure every file written so far is
/// removed and the error names the failing stage.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let run = || {
        let mut written = Vec::new();
        let result = run_stages(config, &mut written);
        if result.is_err() {
            for path in &written {
                let _ = std::fs::remove_file(path);
            }
        }
        result
    };
    match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

struct Datasets {
    train: ChannelSet,
    val: ChannelSet,
    test: ChannelSet,
}

fn run_stages(config: &ExperimentConfig, written: &mut Vec<PathBuf>) -> Result<ExperimentOutput> {
    let root = SeededRng::new(config.seed);
    let spec = config.channel_spec();
    let dictionary = Dictionary::for_model(&spec);
    let kernel = config.kernel()?;
    let counts = config.counts;
    let wants = |a: Algorithm| config.algorithms.contains(&a);
    let needs_learning = wants(Algorithm::Learned) || wants(Algorithm::LearnedLbcsInit);
    let needs_lbcs = wants(Algorithm::Lbcs) || wants(Algorithm::LearnedLbcsInit);

    stage("create output directory", std::fs::create_dir_all(&config.output_dir).map_err(Error::from))?;
    let out = |name: String| config.output_dir.join(name);
    let stem = config.stem();

    let data = stage("generate data", (|| -> Result<Datasets> {
        Ok(Datasets {
            train: if needs_learning { generate_channels(&spec, counts.train, &root.substream("train"))? } else { empty(&spec)? },
            val: if needs_learning { generate_channels(&spec, counts.val, &root.substream("val"))? } else { empty(&spec)? },
            test: generate_channels(&spec, counts.test, &root.substream("test"))?,
        })
    })())?;
    let (lbcs_train, lbcs_val) = if needs_lbcs {
        stage("generate LBCS data", (|| -> Result<(ChannelSet, ChannelSet)> {
            Ok((
                generate_channels(&spec, counts.lbcs_train, &root.substream("lbcs-train"))?,
                generate_channels(&spec, counts.lbcs_val, &root.substream("lbcs-val"))?,
            ))
        })())?
    } else {
        (empty(&spec)?, empty(&spec)?)
    };

    let mut matrices = Vec::new();
    let mut reports = BTreeMap::new();
    let mut training = BTreeMap::new();
    let mut lbcs_validation = Vec::new();
    let mut save_matrix = |entry: MatrixEntry, file: &MatrixFile, written: &mut Vec<PathBuf>| -> Result<()> {
        written.push(entry.path.clone());
        file.save(&entry.path)?;
        matrices.push(entry);
        Ok(())
    };

    // Monte-Carlo LBCS, one matrix per SNR
    let lbcs_rng = |snr_index: usize| root.substream("lbcs").indexed(snr_index as u64);
    let run_lbcs = |snr: f64, rng: &SeededRng| {
        let cfg = McLbcsConfig {
            snr_db: snr,
            m: config.m,
            iterations: counts.lbcs_iterations,
            sparsity: config.p,
        };
        mc_lbcs(&lbcs_train, &lbcs_val, cfg, &dictionary, rng)
    };
    let mut lbcs_matrices: Vec<Option<ComplexMatrix>> = vec![None; config.snr_db.len()];
    if wants(Algorithm::Lbcs) {
        for (k, &snr) in config.snr_db.iter().enumerate() {
            let result = stage(&format!("lbcs at {snr} dB"), run_lbcs(snr, &lbcs_rng(k)))?;
            let entry = MatrixEntry {
                algorithm: Algorithm::Lbcs,
                snr_db: Some(snr),
                path: out(format!("{stem}_lbcs_snr{snr}.mat")),
            };
            let file = stage("write lbcs matrix", MatrixFile::from_matrix("lbcs", &result.matrix, Some(snr)))?;
            stage("write lbcs matrix", save_matrix(entry, &file, written))?;
            lbcs_validation.push((snr, result.validation_mse));
            lbcs_matrices[k] = Some(result.matrix);
        }
    }

    let base = |rng: SeededRng, init: Init| {
        let s = &config.search;
        let mut c = TrainConfig::new(
            crate::learner::Hyperparameters { batch_size: s.batch_size[0], learning_rate: s.learning_rate[0], decay: s.decay[0] },
            rng,
        );
        c.max_iterations = s.max_iterations;
        c.validation_interval = s.validation_interval;
        c.patience = s.patience;
        c.sphere_targets = s.sphere_targets;
        c.normalization = s.normalization;
        c.init = init;
        c
    };
    let search = |rng: SeededRng, init: Init| -> Result<SearchOutcome> {
        let space = config.search.space();
        let base = base(rng.clone(), init);
        match config.search.selection {
            SelectionMetric::Mmd => random_search(&data.train, &data.val, &space, &base, &kernel, config.m),
            SelectionMetric::Mse => {
                let snr = config.search.selection_snr_db;
                let scorer_rng = rng.substream("selection-noise");
                crate::learner::random_search_scored(&data.train, &data.val, &space, &base, &kernel, config.m, |r| {
                    Ok(evaluate(&phases_to_matrix(&r.phases), &data.val, snr, config.p, &dictionary, &scorer_rng)?.mean)
                })
            }
        }
    };

    let mut learned: Vec<(Algorithm, ComplexMatrix)> = Vec::new();
    for algorithm in [Algorithm::Learned, Algorithm::LearnedLbcsInit] {
        if !wants(algorithm) {
            continue;
        }
        let init = if algorithm == Algorithm::LearnedLbcsInit {
            let snr = config.lbcs_init_snr_db;
            let cached = config.snr_db.iter().position(|&s| s == snr).and_then(|k| lbcs_matrices[k].clone());
            let matrix = match cached {
                Some(a) => a,
                None => {
                    let k = config.snr_db.iter().position(|&s| s == snr);
                    let rng = k.map_or_else(|| root.substream("lbcs-init"), lbcs_rng);
                    stage("lbcs initialization", run_lbcs(snr, &rng))?.matrix
                }
            };
            Init::FromPhases(stage("lbcs initialization", PhaseMatrix::from_matrix(&matrix))?)
        } else {
            Init::UniformRandom
        };
        let outcome = stage(&format!("{} training", algorithm.name()), search(root.substream(algorithm.name()), init))?;
        let report = outcome.best;
        let entry = MatrixEntry {
            algorithm,
            snr_db: None,
            path: out(format!("{stem}_{}.mat", algorithm.name())),
        };
        let file = MatrixFile::learned(algorithm.name(), report.phases.clone());
        stage("write learned matrix", save_matrix(entry, &file, written))?;
        training.insert(
            algorithm.name().to_string(),
            TrainingSummary {
                best_trial: outcome.best_trial,
                best_validation: report.best_validation,
                initial_validation: report.initial_validation,
                iterations: report.iterations,
                hyper: report.hyper,
            },
        );
        learned.push((algorithm, phases_to_matrix(&report.phases)));
        reports.insert(algorithm, report);
    }

    let mut records = Vec::new();
    for (k, &snr) in config.snr_db.iter().enumerate() {
        let eval_rng = root.substream("eval").indexed(k as u64);
        let snr_stage = |name: &str| format!("evaluate {name} at {snr} dB");
        for &algorithm in &config.algorithms {
            let mut record = match algorithm {
                Algorithm::Random => stage(
                    &snr_stage("random"),
                    evaluate_random_baseline(&data.test, snr, config.p, &dictionary, config.m, &eval_rng),
                )?,
                Algorithm::Lbcs => {
                    let a = lbcs_matrices[k].as_ref().expect("lbcs matrix per SNR");
                    stage(&snr_stage("lbcs"), evaluate(a, &data.test, snr, config.p, &dictionary, &eval_rng))?
                }
                Algorithm::Learned | Algorithm::LearnedLbcsInit => {
                    let a = &learned.iter().find(|(alg, _)| *alg == algorithm).expect("trained").1;
                    stage(&snr_stage(algorithm.name()), evaluate(a, &data.test, snr, config.p, &dictionary, &eval_rng))?
                }
            };
            record.algorithm = algorithm.name().to_string();
            if let Some(tag) = &config.tag {
                record.aux.insert("tag".into(), tag.clone());
            }
            records.push(record);
        }
    }

    let csv_path = out(format!("{stem}.csv"));
    written.push(csv_path.clone());
    stage("write csv", std::fs::write(&csv_path, records_to_csv(&records)).map_err(Error::from))?;

    let metadata_path = out(format!("{stem}.meta.json"));
    let metadata = ExperimentMetadata {
        version: crate::VERSION.to_string(),
        seed: config.seed,
        config: config.clone(),
        csv: csv_path.clone(),
        matrices: matrices.clone(),
        training,
        lbcs_validation_mse: lbcs_validation,
    };
    written.push(metadata_path.clone());
    stage(
        "write metadata",
        serde_json::to_string_pretty(&metadata)
            .map_err(Error::from)
            .and_then(|s| std::fs::write(&metadata_path, s).map_err(Error::from)),
    )?;

    Ok(ExperimentOutput { records, csv_path, metadata_path, matrices, reports })
}

fn empty(spec: &ChannelModelSpec) -> Result<ChannelSet> {
    ChannelSet::new(Vec::new(), *spec)
}

/// `algorithm,snr,mean` followed by one column per auxiliary key.
pub fn records_to_csv(records: &[EvalRecord]) -> String {
    let keys: BTreeSet<&String> = records.iter().flat_map(|r| r.aux.keys()).collect();
    let mut out = String::from("algorithm,snr,mean");
    for k in &keys {
        let _ = write!(out, ",{k}");
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{}", r.algorithm, r.snr, r.mean);
        for k in &keys {
            let _ = write!(out, ",{}", r.aux.get(*k).map(String::as_str).unwrap_or(""));
        }
        out.push('\n');
    }
    out
}

/// Path-independent view used by the matrix-count checks.
pub fn matrices_for(entries: &[MatrixEntry], algorithm: Algorithm) -> Vec<&Path> {
    entries.iter().filter(|e| e.algorithm == algorithm).map(|e| e.path.as_path()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::random_unitary;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn test_set(model: ChannelModel, n: usize, p: usize, count: usize, seed: u64) -> ChannelSet {
        generate_channels(&ChannelModelSpec::new(model, n, p), count, &SeededRng::new(seed)).unwrap()
    }

    #[test]
    fn noise_std_examples() {
        let a = ComplexMatrix::identity(2, 2);
        let h = [c(1.0, 0.0), c(0.0, 1.0)];
        assert!((noise_std_for_snr(&a, &h, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let h = [c(2.0f64.sqrt(), 0.0), c(0.0, 2.0f64.sqrt())];
        assert!((noise_std_for_snr(&a, &h, 10.0).unwrap().powi(2) - 0.2).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for snr in [0.0, 10.0, 40.0, 100.0, 300.0] {
            let s = noise_std_for_snr(&a, &h, snr).unwrap();
            assert!(s < last);
            last = s;
        }
        assert_eq!(noise_std_for_snr(&a, &h, f64::INFINITY).unwrap(), 0.0);
        assert!(matches!(noise_std_for_snr(&a, &[c(0.0, 0.0); 2], 0.0), Err(Error::ZeroSignal)));
    }

    #[test]
    fn stub_estimators_give_zero_and_one() {
        let data = test_set(ChannelModel::Multipath, 8, 2, 40, 1);
        let dict = Dictionary::for_model(&data.spec);
        let a = sample_steinhaus_matrix(4, 8, &SeededRng::new(2)).unwrap();
        let rng = SeededRng::new(3);
        assert_eq!(evaluate_with(&a, &data, 10.0, 2, &dict, &rng, &PerfectEstimator).unwrap().mean, 0.0);
        assert_eq!(evaluate_with(&a, &data, 10.0, 2, &dict, &rng, &ZeroEstimator).unwrap().mean, 1.0);
    }

    #[test]
    fn noiseless_canonical_recovery_is_exact() {
        let data = test_set(ChannelModel::CanonicalSparse, 32, 1, 500, 4);
        let dict = Dictionary::for_model(&data.spec);
        let a = sample_steinhaus_matrix(8, 32, &SeededRng::new(5)).unwrap();
        let effective = effective_matrix(&a, &dict);
        let exact = (0..data.len())
            .filter(|&i| {
                let (err, energy) = sample_error(
                    &a, &effective, &data.samples[i], i, f64::INFINITY, 1, &dict, &SeededRng::new(6), &OmpEstimator::default(),
                )
                .unwrap();
                err <= 1e-20 * energy
            })
            .count();
        assert!(exact as f64 >= 0.95 * data.len() as f64, "{exact} exact recoveries");
    }

    #[test]
    fn random_baseline_draws_one_matrix_per_channel() {
        let data = test_set(ChannelModel::CanonicalSparse, 32, 1, 200, 7);
        let dict = Dictionary::for_model(&data.spec);
        let rng = SeededRng::new(8);
        let r = evaluate_random_baseline(&data, 20.0, 1, &dict, 8, &rng).unwrap();
        assert_eq!(r.matrices_drawn, 200);
        assert!(r.mean > 0.0 && r.mean < 1.0, "{}", r.mean);
        assert_eq!(evaluate_random_baseline(&data, 20.0, 1, &dict, 8, &rng).unwrap(), r);

        let a = sample_steinhaus_matrix(8, 32, &SeededRng::new(9)).unwrap();
        assert_eq!(evaluate(&a, &data, 20.0, 1, &dict, &rng).unwrap().matrices_drawn, 1);
    }

    #[test]
    fn single_channel_baseline_matches_fixed_matrix() {
        let data = test_set(ChannelModel::DftSparse, 16, 2, 1, 10);
        let dict = Dictionary::for_model(&data.spec);
        let rng = SeededRng::new(11);
        let a = sample_steinhaus_matrix(6, 16, &rng.indexed(0).substream("matrix")).unwrap();
        let fixed = evaluate(&a, &data, 5.0, 2, &dict, &rng).unwrap();
        let random = evaluate_random_baseline(&data, 5.0, 2, &dict, 6, &rng).unwrap();
        assert_eq!(fixed.mean, random.mean);
    }

    #[test]
    fn rip_report_of_isometries() {
        let spec = ChannelModelSpec::new(ChannelModel::CanonicalSparse, 1, 1);
        let probe = ChannelSet::new(vec![vec![c(1.0, 0.0)], vec![c(0.6, 0.8)]], spec).unwrap();
        let r = rip_report(&ComplexMatrix::identity(1, 1), &probe).unwrap();
        assert_eq!(r.delta, 0.0);

        let u = random_unitary(6, &SeededRng::new(12)).unwrap();
        let probe = crate::channels::normalize_per_sample(&test_set(ChannelModel::Multipath, 6, 2, 50, 13)).unwrap();
        let r = rip_report(&u, &probe).unwrap();
        assert!(r.delta < 1e-12);
        assert!((r.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_has_aux_columns() {
        let mut aux = BTreeMap::new();
        aux.insert("tag".to_string(), "avg".to_string());
        let records = vec![
            EvalRecord { algorithm: "random".into(), snr: -5.0, mean: 0.5, aux: BTreeMap::new(), matrices_drawn: 3 },
            EvalRecord { algorithm: "learned".into(), snr: 10.0, mean: 0.125, aux, matrices_drawn: 1 },
        ];
        assert_eq!(records_to_csv(&records), "algorithm,snr,mean,tag\nrandom,-5,0.5,\nlearned,10,0.125,avg\n");
    }

    #[test]
    fn full_scale_config_is_accepted() {
        for p in [1, 5, 10] {
            let mut cfg = ExperimentConfig::new(ChannelModel::Multipath, 128, 16, p, 1, "out");
            cfg.snr_db = (0..8).map(|i| -5.0 + 5.0 * i as f64).collect();
            cfg.algorithms = vec![Algorithm::Random, Algorithm::Lbcs, Algorithm::Learned, Algorithm::LearnedLbcsInit];
            cfg.validate().unwrap();
            assert_eq!(cfg.channel_spec().grid, 2048);
        }
        let mut bad = ExperimentConfig::new(ChannelModel::Multipath, 16, 4, 1, 1, "out");
        bad.snr_db.clear();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn random_only_experiment_writes_one_row_per_snr() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::new(ChannelModel::CanonicalSparse, 16, 4, 1, 3, dir.path());
        cfg.algorithms = vec![Algorithm::Random];
        cfg.counts.test = 50;
        let out = run_experiment(&cfg).unwrap();
        let csv = std::fs::read_to_string(&out.csv_path).unwrap();
        assert_eq!(csv.lines().count(), 1 + cfg.snr_db.len());
        assert!(csv.lines().skip(1).all(|l| l.starts_with("random,")));
        assert!(out.matrices.is_empty());
    }

    #[test]
    fn failed_stage_is_named_and_outputs_removed() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::new(ChannelModel::CanonicalSparse, 8, 4, 1, 3, dir.path());
        cfg.algorithms = vec![Algorithm::Lbcs];
        cfg.snr_db = vec![10.0];
        cfg.counts = Counts { test: 10, train: 40, val: 10, lbcs_train: 40, lbcs_val: 10, lbcs_iterations: 2 };
        let blocker = dir.path().join(format!("{}.csv", cfg.stem()));
        std::fs::create_dir(&blocker).unwrap();
        match run_experiment(&cfg) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "write csv"),
            other => panic!("unexpected {other:?}"),
        }
        let left: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
        assert_eq!(left, vec![blocker]);
    }
}
