//! Stochastic training of the phases `Φ` with Adam, per-epoch learning-rate
//! decay, early stopping on a held-out MMD², and random hyperparameter
//! search.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{normalize_average, normalize_per_sample, ChannelSet, Normalization};
use crate::error::{Error, Result};
use crate::mmd::{mmd2_biased, mmd2_objective, phase_gradient, KernelSpec, SampleBatch};

type Batch = (Vec<Vec<Complex64>>, Vec<Vec<Complex64>>);
use crate::numeric::{sample_sphere, PhaseMatrix, StackedMap};
use crate::rng::SeededRng;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates of Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: DMatrix<f64>,
    pub second: DMatrix<f64>,
    /// Number of steps taken so far.
    pub step: usize,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            first: DMatrix::zeros(rows, cols),
            second: DMatrix::zeros(rows, cols),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adaptive_moment_step(
    params: &mut DMatrix<f64>,
    gradient: &DMatrix<f64>,
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    if params.shape() != gradient.shape() || params.shape() != state.first.shape() {
        return Err(Error::dim(format!(
            "parameters {:?}, gradient {:?}, optimizer state {:?}",
            params.shape(),
            gradient.shape(),
            state.first.shape()
        )));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { iteration: state.step });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(gradient.iter())
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Default)]
pub enum Init {
    #[default]
    UniformRandom,
    FromPhases(PhaseMatrix),
}

/// Where the sphere targets of a training batch come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SphereTargets {
    /// New uniform sphere points for every batch.
    #[default]
    Fresh,
    /// One sphere point per training channel, drawn once and batched with it.
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay: f64,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub hyper: Hyperparameters,
    pub max_iterations: usize,
    pub validation_interval: usize,
    pub patience: usize,
    pub init: Init,
    pub normalization: Normalization,
    pub sphere_targets: SphereTargets,
    pub rng: SeededRng,
}

impl TrainConfig {
    pub fn new(hyper: Hyperparameters, rng: SeededRng) -> Self {
        Self {
            hyper,
            max_iterations: 20_000,
            validation_interval: 100,
            patience: 20,
            init: Init::UniformRandom,
            normalization: Normalization::Average,
            sphere_targets: SphereTargets::Fresh,
            rng,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        if h.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        // zero is accepted so that training can be checked as the identity map
        if !(h.learning_rate >= 0.0 && h.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be a finite non-negative number"));
        }
        if !(h.decay > 0.0 && h.decay <= 1.0) {
            return Err(Error::invalid("decay must lie in (0, 1]"));
        }
        if self.patience == 0 || self.validation_interval == 0 {
            return Err(Error::invalid("patience and validation interval must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    /// MMD² on the batch that the iteration trains on.
    pub train_objective: f64,
    pub validation_objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Phases with the smallest recorded validation objective.
    pub phases: PhaseMatrix,
    pub best_validation: f64,
    pub best_iteration: usize,
    pub initial_validation: f64,
    /// Gradient steps taken.
    pub iterations: usize,
    pub hyper: Hyperparameters,
    pub normalization: Normalization,
    pub trace: Vec<TracePoint>,
}

impl TrainReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Training and validation data after the configured normalization. The
/// average normalization divides both sets by the training RMS norm.
pub fn normalize_pair(train: &ChannelSet, val: &ChannelSet, normalization: Normalization) -> Result<(ChannelSet, ChannelSet)> {
    match normalization {
        Normalization::Raw => Ok((train.clone(), val.clone())),
        Normalization::PerSample => Ok((normalize_per_sample(train)?, normalize_per_sample(val)?)),
        Normalization::Average => {
            let (t, factor) = normalize_average(train)?;
            let mut v = val.scaled(1.0 / factor);
            v.normalization = Normalization::Average;
            Ok((t, v))
        }
    }
}

/// Visits training indices through a fresh permutation per epoch.
struct EpochSampler {
    len: usize,
    rng: SeededRng,
    epoch: usize,
    order: Vec<usize>,
}

impl EpochSampler {
    fn new(len: usize, rng: SeededRng) -> Self {
        let mut s = Self { len, rng, epoch: usize::MAX, order: Vec::new() };
        s.load(0);
        s
    }

    fn load(&mut self, epoch: usize) {
        if epoch != self.epoch {
            self.order = (0..self.len).collect();
            self.order.shuffle(&mut self.rng.indexed(epoch as u64).generator());
            self.epoch = epoch;
        }
    }

    /// Indices at stream positions `start..start + count`.
    fn batch(&mut self, start: usize, count: usize) -> Vec<usize> {
        (start..start + count)
            .map(|pos| {
                self.load(pos / self.len);
                self.order[pos % self.len]
            })
            .collect()
    }
}

/// Trains `m × n` phases on `train`, selecting by MMD² on `val`.
pub fn train(train: &ChannelSet, val: &ChannelSet, config: &TrainConfig, kernel: &KernelSpec, m: usize) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation data must be non-empty"));
    }
    if train.dim() != val.dim() {
        return Err(Error::dim("training and validation channels differ in dimension"));
    }
    if m == 0 {
        return Err(Error::invalid("m must be positive"));
    }
    let n = train.dim();
    let (train_set, val_set) = normalize_pair(train, val, config.normalization)?;
    let rng = &config.rng;
    let hyper = config.hyper;

    let mut phases = match &config.init {
        Init::UniformRandom => PhaseMatrix::uniform(m, n, &rng.substream("init")),
        Init::FromPhases(p) => {
            if (p.rows(), p.cols()) != (m, n) {
                return Err(Error::dim(format!(
                    "initial phases are {} x {}, expected {m} x {n}",
                    p.rows(),
                    p.cols()
                )));
            }
            p.clone()
        }
    };

    let val_sphere = sample_sphere(m, val_set.len(), &rng.substream("val-sphere"))?;
    let fixed_sphere = match config.sphere_targets {
        SphereTargets::Fixed => Some(sample_sphere(m, train_set.len(), &rng.substream("train-sphere"))?),
        SphereTargets::Fresh => None,
    };
    let mut sampler = EpochSampler::new(train_set.len(), rng.substream("train-batch"));
    let batch_at = |sampler: &mut EpochSampler, t: usize| -> Result<Batch> {
        let idx = sampler.batch(t * hyper.batch_size, hyper.batch_size);
        let channels: Vec<Vec<Complex64>> = idx.iter().map(|&i| train_set.samples[i].clone()).collect();
        let sphere = match &fixed_sphere {
            Some(u) => idx.iter().map(|&i| u[i].clone()).collect(),
            None => sample_sphere(m, hyper.batch_size, &rng.substream("noise").indexed(t as u64))?,
        };
        Ok((channels, sphere))
    };

    let mut state = AdamState::new(m, n);
    let mut trace = Vec::new();
    let mut best = (f64::INFINITY, phases.clone(), 0usize);
    let mut since_best = 0usize;
    let mut iterations = 0usize;

    for t in 0..=config.max_iterations {
        let (channels, sphere) = batch_at(&mut sampler, t)?;
        let map = StackedMap::new(&phases);
        let x = SampleBatch::from_map(&map, &channels)?;
        let y = SampleBatch::from_complex(&sphere)?;

        if t % config.validation_interval == 0 || t == config.max_iterations {
            let validation = mmd2_objective(&phases, &val_set.samples, &val_sphere, kernel)?;
            trace.push(TracePoint {
                iteration: t,
                train_objective: mmd2_biased(&x, &y, kernel)?,
                validation_objective: validation,
            });
            if validation < best.0 {
                best = (validation, phases.clone(), t);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
        if t == config.max_iterations {
            break;
        }

        let gradient = phase_gradient(&phases, &channels, &x, &y, kernel);
        let epoch = t * hyper.batch_size / train_set.len();
        let rate = hyper.learning_rate * hyper.decay.powi(epoch.min(i32::MAX as usize) as i32);
        let mut raw = phases.as_matrix().clone();
        adaptive_moment_step(&mut raw, &gradient, &mut state, rate).map_err(|e| match e {
            Error::NonFiniteGradient { .. } => Error::NonFiniteGradient { iteration: t },
            other => other,
        })?;
        phases = PhaseMatrix::new(raw)?;
        iterations = t + 1;
    }

    Ok(TrainReport {
        phases: best.1,
        best_validation: best.0,
        best_iteration: best.2,
        initial_validation: trace[0].validation_objective,
        iterations,
        hyper,
        normalization: config.normalization,
        trace,
    })
}

/// Closed intervals for the random hyperparameter search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub batch_size: (usize, usize),
    pub learning_rate: (f64, f64),
    pub decay: (f64, f64),
    pub trials: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            batch_size: (150, 1500),
            learning_rate: (1e-6, 5e-3),
            decay: (0.94, 1.0),
            trials: 64,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let (b0, b1) = self.batch_size;
        let (l0, l1) = self.learning_rate;
        let (d0, d1) = self.decay;
        if b0 < 2 || b0 > b1 {
            return Err(Error::invalid(format!("bad batch size range [{b0}, {b1}]")));
        }
        if !(l0 > 0.0 && l0 <= l1 && l1.is_finite()) {
            return Err(Error::invalid(format!("bad learning rate range [{l0}, {l1}]")));
        }
        if !(d0 > 0.0 && d0 <= d1 && d1 <= 1.0) {
            return Err(Error::invalid(format!("bad decay range [{d0}, {d1}]")));
        }
        if self.trials == 0 {
            return Err(Error::invalid("at least one search trial is required"));
        }
        Ok(())
    }

    /// Batch size integer-uniform, learning rate log-uniform, decay uniform.
    pub fn sample(&self, rng: &SeededRng) -> Hyperparameters {
        let mut g = rng.generator();
        let batch_size = g.random_range(self.batch_size.0..=self.batch_size.1);
        let (l0, l1) = self.learning_rate;
        let learning_rate = if l0 == l1 { l0 } else { g.random_range(l0.ln()..=l1.ln()).exp() };
        let (d0, d1) = self.decay;
        let decay = if d0 == d1 { d0 } else { g.random_range(d0..=d1) };
        Hyperparameters { batch_size, learning_rate, decay }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialSummary {
    pub hyper: Hyperparameters,
    /// Selection score; absent when the trial failed.
    pub score: Option<f64>,
    pub best_validation: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: TrainReport,
    pub best_trial: usize,
    pub trials: Vec<TrialSummary>,
}

/// Random search selecting the trial with the smallest validation MMD².
pub fn random_search(
    train_set: &ChannelSet,
    val: &ChannelSet,
    space: &SearchSpace,
    base: &TrainConfig,
    kernel: &KernelSpec,
    m: usize,
) -> Result<SearchOutcome> {
    random_search_scored(train_set, val, space, base, kernel, m, |r| Ok(r.best_validation))
}

/// Random search with a caller-supplied selection score (smaller wins).
/// Trial `i` samples its hyperparameters and trains with
/// `base.rng.substream("search").indexed(i)`; the base hyperparameters are
/// ignored.
pub fn random_search_scored<F>(
    train_set: &ChannelSet,
    val: &ChannelSet,
    space: &SearchSpace,
    base: &TrainConfig,
    kernel: &KernelSpec,
    m: usize,
    score: F,
) -> Result<SearchOutcome>
where
    F: Fn(&TrainReport) -> Result<f64> + Sync,
{
    space.validate()?;
    let results: Vec<(Hyperparameters, Result<(TrainReport, f64)>)> = (0..space.trials)
        .into_par_iter()
        .map(|i| {
            let trial_rng = base.rng.substream("search").indexed(i as u64);
            let hyper = space.sample(&trial_rng.substream("hyper"));
            let config = TrainConfig { hyper, rng: trial_rng, ..base.clone() };
            let outcome = train(train_set, val, &config, kernel, m).and_then(|r| {
                let s = score(&r)?;
                Ok((r, s))
            });
            (hyper, outcome)
        })
        .collect();

    let trials: Vec<TrialSummary> = results
        .iter()
        .map(|(hyper, r)| match r {
            Ok((report, s)) => TrialSummary {
                hyper: *hyper,
                score: Some(*s),
                best_validation: Some(report.best_validation),
                error: None,
            },
            Err(e) => TrialSummary {
                hyper: *hyper,
                score: None,
                best_validation: None,
                error: Some(e.to_string()),
            },
        })
        .collect();

    let mut best_trial: Option<usize> = None;
    for (i, t) in trials.iter().enumerate() {
        if let Some(s) = t.score {
            if best_trial.is_none_or(|b| s < trials[b].score.unwrap_or(f64::INFINITY)) {
                best_trial = Some(i);
            }
        }
    }
    let Some(best_trial) = best_trial else {
        let causes: Vec<String> = trials
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.error.as_ref().map(|e| format!("trial {i}: {e}")))
            .collect();
        return Err(Error::SearchFailed { trials: space.trials, causes: causes.join("; ") });
    };
    let best = results
        .into_iter()
        .nth(best_trial)
        .and_then(|(_, r)| r.ok())
        .map(|(r, _)| r)
        .expect("best trial succeeded");
    Ok(SearchOutcome { best, best_trial, trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{generate_channels, ChannelModel, ChannelModelSpec};

    fn data(n: usize, count: usize, seed: u64) -> (ChannelSet, ChannelSet) {
        let spec = ChannelModelSpec::new(ChannelModel::CanonicalSparse, n, 1);
        let rng = SeededRng::new(seed);
        (
            generate_channels(&spec, count, &rng.substream("train")).unwrap(),
            generate_channels(&spec, count / 4, &rng.substream("val")).unwrap(),
        )
    }

    fn config(lr: f64, iterations: usize) -> TrainConfig {
        let mut c = TrainConfig::new(
            Hyperparameters { batch_size: 32, learning_rate: lr, decay: 0.99 },
            SeededRng::new(9),
        );
        c.max_iterations = iterations;
        c.validation_interval = 10;
        c
    }

    #[test]
    fn single_adam_step_from_rest() {
        let mut p = DMatrix::from_element(1, 1, 0.0);
        let g = DMatrix::from_element(1, 1, 1.0);
        let mut s = AdamState::new(1, 1);
        adaptive_moment_step(&mut p, &g, &mut s, 0.1).unwrap();
        assert!((p[(0, 0)] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = DMatrix::from_element(2, 3, 0.7);
        let g = DMatrix::zeros(2, 3);
        let mut s = AdamState::new(2, 3);
        for _ in 0..5 {
            adaptive_moment_step(&mut p, &g, &mut s, 0.5).unwrap();
        }
        assert_eq!(p, DMatrix::from_element(2, 3, 0.7));
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut p = DMatrix::zeros(1, 2);
        let g = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
        let mut s = AdamState::new(1, 2);
        assert!(matches!(
            adaptive_moment_step(&mut p, &g, &mut s, 0.1),
            Err(Error::NonFiniteGradient { .. })
        ));
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let (t, v) = data(8, 200, 1);
        let c = config(1e-2, 0);
        let report = train(&t, &v, &c, &KernelSpec::default(), 3).unwrap();
        assert_eq!(report.phases, PhaseMatrix::uniform(3, 8, &c.rng.substream("init")));
        assert_eq!(report.iterations, 0);
        assert_eq!(report.trace.len(), 1);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (t, v) = data(8, 200, 2);
        let phi0 = PhaseMatrix::uniform(3, 8, &SeededRng::new(77));
        let mut c = config(0.0, 40);
        c.init = Init::FromPhases(phi0.clone());
        let report = train(&t, &v, &c, &KernelSpec::default(), 3).unwrap();
        assert_eq!(report.phases, phi0);
    }

    #[test]
    fn desk_training_improves_validation() {
        let (t, v) = data(16, 2000, 3);
        let report = train(&t, &v, &config(5e-3, 300), &KernelSpec::default(), 4).unwrap();
        assert!(report.best_validation <= report.initial_validation);
        let min = report
            .trace
            .iter()
            .map(|p| p.validation_objective)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_validation, min);
    }

    #[test]
    fn training_is_deterministic() {
        let (t, v) = data(8, 300, 4);
        let c = config(1e-2, 50);
        let a = train(&t, &v, &c, &KernelSpec::default(), 2).unwrap();
        let b = train(&t, &v, &c, &KernelSpec::default(), 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn average_normalization_uses_training_scale() {
        let (t, v) = data(8, 200, 8);
        let big = t.scaled(3.0);
        let (tn, vn) = normalize_pair(&big, &v.scaled(3.0), Normalization::Average).unwrap();
        assert!((tn.mean_square_norm() - 1.0).abs() < 1e-12);
        let expected = v.mean_square_norm() / t.mean_square_norm();
        assert!((vn.mean_square_norm() - expected).abs() < 1e-12);
    }

    #[test]
    fn epoch_sampler_covers_each_epoch() {
        let mut s = EpochSampler::new(7, SeededRng::new(1));
        let mut first = s.batch(0, 7);
        first.sort_unstable();
        assert_eq!(first, (0..7).collect::<Vec<_>>());
        let mut span = s.batch(5, 7);
        span.truncate(2);
        assert!(span.iter().all(|&i| i < 7));
    }

    #[test]
    fn search_with_one_trial_is_one_training_run() {
        let (t, v) = data(8, 200, 5);
        let space = SearchSpace { batch_size: (16, 64), learning_rate: (1e-3, 1e-2), decay: (0.95, 1.0), trials: 1 };
        let base = config(0.0, 30);
        let outcome = random_search(&t, &v, &space, &base, &KernelSpec::default(), 3).unwrap();
        let trial_rng = base.rng.substream("search").indexed(0);
        let hyper = space.sample(&trial_rng.substream("hyper"));
        let direct = train(&t, &v, &TrainConfig { hyper, rng: trial_rng, ..base }, &KernelSpec::default(), 3).unwrap();
        assert_eq!(outcome.best, direct);
    }

    #[test]
    fn search_best_is_minimum_over_trials() {
        let (t, v) = data(8, 200, 6);
        let space = SearchSpace { batch_size: (16, 64), learning_rate: (1e-4, 5e-2), decay: (0.9, 1.0), trials: 4 };
        let outcome = random_search(&t, &v, &space, &config(0.0, 30), &KernelSpec::default(), 3).unwrap();
        for trial in &outcome.trials {
            assert!(outcome.best.best_validation <= trial.best_validation.unwrap());
        }
    }

    #[test]
    fn hyperparameters_stay_in_range() {
        let space = SearchSpace::default();
        for i in 0..500 {
            let h = space.sample(&SeededRng::new(i));
            assert!((150..=1500).contains(&h.batch_size));
            assert!((1e-6..=5e-3).contains(&h.learning_rate));
            assert!((0.94..=1.0).contains(&h.decay));
        }
    }

    #[test]
    fn report_json_roundtrip() {
        let (t, v) = data(6, 100, 7);
        let report = train(&t, &v, &config(1e-2, 20), &KernelSpec::default(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        report.save(&path).unwrap();
        assert_eq!(TrainReport::load(&path).unwrap(), report);
    }
}
