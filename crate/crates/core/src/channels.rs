//! Channel data models, sparsifying dictionaries and the two training-data
//! normalizations.
//!
//! Three models are supported:
//!
//! * `canonical-sparse`: `h = s` with `p` nonzero CN(0, 1/p) entries,
//! * `dft-sparse`: `h = F s` with the unitary DFT matrix `F`,
//! * `multipath`: `h = Σ_k s_k a(θ_k)` with uniform angles and CN(0, 1/p)
//!   gains; recovered on an oversampled steering grid.
//!
//! Sample `i` of a generated set is drawn from `rng.indexed(i)`, so sets can
//! be generated in parallel without changing their contents.

use std::f64::consts::TAU;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::index;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{complex_normal, norm_sqr, ComplexMatrix};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelModel {
    CanonicalSparse,
    DftSparse,
    Multipath,
}

impl ChannelModel {
    pub fn name(self) -> &'static str {
        match self {
            ChannelModel::CanonicalSparse => "canonical-sparse",
            ChannelModel::DftSparse => "dft-sparse",
            ChannelModel::Multipath => "multipath",
        }
    }

    fn code(self) -> u8 {
        match self {
            ChannelModel::CanonicalSparse => 0,
            ChannelModel::DftSparse => 1,
            ChannelModel::Multipath => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(ChannelModel::CanonicalSparse),
            1 => Ok(ChannelModel::DftSparse),
            2 => Ok(ChannelModel::Multipath),
            _ => Err(Error::Format(format!("unknown channel model code {code}"))),
        }
    }
}

impl fmt::Display for ChannelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChannelModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical-sparse" | "canonical" => Ok(ChannelModel::CanonicalSparse),
            "dft-sparse" | "dft" => Ok(ChannelModel::DftSparse),
            "multipath" => Ok(ChannelModel::Multipath),
            _ => Err(Error::invalid(format!("unknown channel model '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelModelSpec {
    pub model: ChannelModel,
    pub n: usize,
    pub p: usize,
    /// Dictionary grid size; only meaningful for the multipath model.
    pub grid: usize,
}

impl ChannelModelSpec {
    pub fn new(model: ChannelModel, n: usize, p: usize) -> Self {
        let grid = match model {
            ChannelModel::Multipath => 16 * n,
            _ => n,
        };
        Self { model, n, p, grid }
    }

    pub fn with_grid(mut self, grid: usize) -> Self {
        self.grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("ambient dimension n must be positive"));
        }
        if self.p == 0 || self.p > self.n {
            return Err(Error::invalid(format!(
                "sparsity p = {} must lie in 1..={}",
                self.p, self.n
            )));
        }
        if self.model == ChannelModel::Multipath && self.grid < self.n {
            return Err(Error::invalid(format!(
                "grid size L = {} must be at least n = {}",
                self.grid, self.n
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Raw,
    PerSample,
    Average,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::Raw => "raw",
            Normalization::PerSample => "per-sample",
            Normalization::Average => "average",
        }
    }

    fn code(self) -> u8 {
        match self {
            Normalization::Raw => 0,
            Normalization::PerSample => 1,
            Normalization::Average => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Normalization::Raw),
            1 => Ok(Normalization::PerSample),
            2 => Ok(Normalization::Average),
            _ => Err(Error::Format(format!("unknown normalization code {code}"))),
        }
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Normalization::Raw),
            "per-sample" => Ok(Normalization::PerSample),
            "average" => Ok(Normalization::Average),
            _ => Err(Error::invalid(format!("unknown normalization '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DictionaryKind {
    Identity,
    Dft,
    SteeringGrid,
}

/// Sparsifying dictionary `Ψ` (n × L) with unit-norm columns.
#[derive(Clone, Debug)]
pub struct Dictionary {
    pub matrix: ComplexMatrix,
    pub kind: DictionaryKind,
    /// Grid angles, steering-grid dictionaries only.
    pub angles: Vec<f64>,
}

impl Dictionary {
    pub fn identity(n: usize) -> Self {
        Self {
            matrix: ComplexMatrix::identity(n, n),
            kind: DictionaryKind::Identity,
            angles: Vec::new(),
        }
    }

    pub fn dft(n: usize) -> Self {
        Self {
            matrix: dft_matrix(n),
            kind: DictionaryKind::Dft,
            angles: Vec::new(),
        }
    }

    pub fn for_model(spec: &ChannelModelSpec) -> Self {
        match spec.model {
            ChannelModel::CanonicalSparse => Self::identity(spec.n),
            ChannelModel::DftSparse => Self::dft(spec.n),
            ChannelModel::Multipath => build_dictionary(spec.n, spec.grid),
        }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn atoms(&self) -> usize {
        self.matrix.ncols()
    }
}

/// `a(θ) = [exp(i·0·θ), …, exp(i(n−1)θ)]ᵀ / √n`.
pub fn steering_vector(theta: f64, n: usize) -> Vec<Complex64> {
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|k| Complex64::from_polar(scale, k as f64 * theta))
        .collect()
}

/// Steering vectors on the grid `θ_ℓ = 2π ℓ / L`, `ℓ = 0..L`.
pub fn build_dictionary(n: usize, grid: usize) -> Dictionary {
    let angles: Vec<f64> = (0..grid).map(|l| TAU * l as f64 / grid as f64).collect();
    let mut matrix = ComplexMatrix::zeros(n, grid);
    for (l, &theta) in angles.iter().enumerate() {
        for (k, z) in steering_vector(theta, n).into_iter().enumerate() {
            matrix[(k, l)] = z;
        }
    }
    Dictionary {
        matrix,
        kind: DictionaryKind::SteeringGrid,
        angles,
    }
}

/// Unitary DFT matrix, `F_kl = exp(−2πi kl / n) / √n`.
pub fn dft_matrix(n: usize) -> ComplexMatrix {
    let scale = 1.0 / (n as f64).sqrt();
    ComplexMatrix::from_fn(n, n, |k, l| {
        // reduce kl mod n before scaling to keep the angle small
        let idx = (k * l) % n;
        Complex64::from_polar(scale, -TAU * idx as f64 / n as f64)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub samples: Vec<Vec<Complex64>>,
    pub spec: ChannelModelSpec,
    pub normalization: Normalization,
}

impl ChannelSet {
    pub fn new(samples: Vec<Vec<Complex64>>, spec: ChannelModelSpec) -> Result<Self> {
        if let Some((i, h)) = samples.iter().enumerate().find(|(_, h)| h.len() != spec.n) {
            return Err(Error::dim(format!(
                "sample {i} has dimension {}, expected {}",
                h.len(),
                spec.n
            )));
        }
        Ok(Self {
            samples,
            spec,
            normalization: Normalization::Raw,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.spec.n
    }

    pub fn mean_square_norm(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|h| norm_sqr(h)).sum::<f64>() / self.samples.len() as f64
    }

    /// Every sample multiplied by `factor`; normalization tag unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|h| h.iter().map(|z| z * factor).collect())
            .collect();
        Self {
            samples,
            spec: self.spec,
            normalization: self.normalization,
        }
    }

    /// Binary container: magic, header, then little-endian `f64` pairs
    /// `(re, im)` for every entry of every sample.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHANNEL_MAGIC)?;
        w.write_all(&[self.spec.model.code(), self.normalization.code()])?;
        for v in [self.spec.n, self.spec.p, self.spec.grid, self.samples.len()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(16 * self.spec.n);
        for h in &self.samples {
            buf.clear();
            for z in h {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHANNEL_MAGIC {
            return Err(Error::Format("not a channel set file".into()));
        }
        let mut codes = [0u8; 2];
        r.read_exact(&mut codes)?;
        let mut header = [0usize; 4];
        for v in header.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = usize::try_from(u64::from_le_bytes(b))
                .map_err(|_| Error::Format("header value overflows usize".into()))?;
        }
        let [n, p, grid, count] = header;
        let spec = ChannelModelSpec {
            model: ChannelModel::from_code(codes[0])?,
            n,
            p,
            grid,
        };
        let mut samples = Vec::with_capacity(count);
        let mut buf = vec![0u8; 16 * n];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            let h = buf
                .chunks_exact(16)
                .map(|c| {
                    let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                    let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                    Complex64::new(re, im)
                })
                .collect();
            samples.push(h);
        }
        Ok(Self {
            samples,
            spec,
            normalization: Normalization::from_code(codes[1])?,
        })
    }
}

const CHANNEL_MAGIC: &[u8; 8] = b"CMCHAN01";

fn sparse_coefficients(spec: &ChannelModelSpec, rng: &SeededRng) -> Vec<(usize, Complex64)> {
    let mut g = rng.generator();
    let gain = (1.0 / spec.p as f64).sqrt();
    let mut support = index::sample(&mut g, spec.n, spec.p).into_vec();
    support.sort_unstable();
    support
        .into_iter()
        .map(|j| (j, complex_normal(&mut g) * gain))
        .collect()
}

fn generate<F>(spec: ChannelModelSpec, count: usize, rng: &SeededRng, draw: F) -> Result<ChannelSet>
where
    F: Fn(&SeededRng) -> Vec<Complex64> + Sync,
{
    spec.validate()?;
    let samples = (0..count)
        .into_par_iter()
        .map(|i| draw(&rng.indexed(i as u64)))
        .collect();
    ChannelSet::new(samples, spec)
}

fn expect_model(spec: &ChannelModelSpec, model: ChannelModel) -> Result<()> {
    if spec.model != model {
        return Err(Error::invalid(format!(
            "spec describes {}, generator produces {}",
            spec.model, model
        )));
    }
    Ok(())
}

/// `h = s`, `p` nonzero CN(0, 1/p) entries on a uniformly drawn support.
pub fn gen_canonical_sparse(spec: &ChannelModelSpec, count: usize, rng: &SeededRng) -> Result<ChannelSet> {
    expect_model(spec, ChannelModel::CanonicalSparse)?;
    let n = spec.n;
    generate(*spec, count, rng, |r| {
        let mut h = vec![Complex64::new(0.0, 0.0); n];
        for (j, s) in sparse_coefficients(spec, r) {
            h[j] = s;
        }
        h
    })
}

/// `h = F s` with the unitary DFT matrix.
pub fn gen_dft_sparse(spec: &ChannelModelSpec, count: usize, rng: &SeededRng) -> Result<ChannelSet> {
    expect_model(spec, ChannelModel::DftSparse)?;
    let n = spec.n;
    let f = dft_matrix(n);
    generate(*spec, count, rng, |r| {
        let mut h = vec![Complex64::new(0.0, 0.0); n];
        for (j, s) in sparse_coefficients(spec, r) {
            for (k, hk) in h.iter_mut().enumerate() {
                *hk += f[(k, j)] * s;
            }
        }
        h
    })
}

/// `h = Σ_k s_k a(θ_k)`, `θ_k ~ U[0, 2π)`, `s_k ~ CN(0, 1/p)`.
pub fn gen_multipath(spec: &ChannelModelSpec, count: usize, rng: &SeededRng) -> Result<ChannelSet> {
    expect_model(spec, ChannelModel::Multipath)?;
    let (n, p) = (spec.n, spec.p);
    let gain = (1.0 / p as f64).sqrt();
    let angle = Uniform::new(0.0, TAU).expect("valid range");
    generate(*spec, count, rng, |r| {
        let mut g = r.generator();
        let mut h = vec![Complex64::new(0.0, 0.0); n];
        for _ in 0..p {
            let theta = angle.sample(&mut g);
            let s = complex_normal(&mut g) * gain;
            for (hk, a) in h.iter_mut().zip(steering_vector(theta, n)) {
                *hk += s * a;
            }
        }
        h
    })
}

/// Dispatches on `spec.model`.
pub fn generate_channels(spec: &ChannelModelSpec, count: usize, rng: &SeededRng) -> Result<ChannelSet> {
    match spec.model {
        ChannelModel::CanonicalSparse => gen_canonical_sparse(spec, count, rng),
        ChannelModel::DftSparse => gen_dft_sparse(spec, count, rng),
        ChannelModel::Multipath => gen_multipath(spec, count, rng),
    }
}

/// `h̃_i = h_i / ‖h_i‖`.
pub fn normalize_per_sample(set: &ChannelSet) -> Result<ChannelSet> {
    let mut samples = Vec::with_capacity(set.len());
    for (index, h) in set.samples.iter().enumerate() {
        let norm = norm_sqr(h).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNormSample { index });
        }
        samples.push(h.iter().map(|z| z / norm).collect());
    }
    Ok(ChannelSet {
        samples,
        spec: set.spec,
        normalization: Normalization::PerSample,
    })
}

/// Divides every sample by `sqrt(mean_i ‖h_i‖²)` and returns that factor.
pub fn normalize_average(set: &ChannelSet) -> Result<(ChannelSet, f64)> {
    let factor = set.mean_square_norm().sqrt();
    if factor == 0.0 || !factor.is_finite() {
        return Err(Error::AllZero);
    }
    let mut out = set.scaled(1.0 / factor);
    out.normalization = Normalization::Average;
    Ok((out, factor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn steering_examples() {
        for z in steering_vector(0.0, 4) {
            assert!((z - c(0.5, 0.0)).norm() < 1e-15);
        }
        let a = steering_vector(PI, 2);
        assert!((a[0] - c(FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
        assert!((a[1] - c(-FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
        for k in 0..20 {
            let norm = norm_sqr(&steering_vector(0.37 * k as f64, 16)).sqrt();
            assert!((norm - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn small_grid() {
        let d = build_dictionary(2, 4);
        let expected = [0.0, PI / 2.0, PI, 3.0 * PI / 2.0];
        for (a, b) in d.angles.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((d.matrix[(0, 2)] - c(FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
        assert!((d.matrix[(1, 2)] - c(-FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn full_size_grid_has_unit_columns() {
        let spec = ChannelModelSpec::new(ChannelModel::Multipath, 128, 5);
        let d = Dictionary::for_model(&spec);
        assert_eq!(d.atoms(), 2048);
        for col in d.matrix.column_iter() {
            assert!((col.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn dft_is_unitary_with_flat_first_column() {
        let f = dft_matrix(16);
        let gram = f.adjoint() * &f;
        for i in 0..16 {
            for j in 0..16 {
                let t = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - c(t, 0.0)).norm() < 1e-12);
            }
            assert!((f[(i, 0)] - c(0.25, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn canonical_support_sizes() {
        let rng = SeededRng::new(1);
        let spec = ChannelModelSpec::new(ChannelModel::CanonicalSparse, 8, 1);
        for h in gen_canonical_sparse(&spec, 50, &rng).unwrap().samples {
            assert_eq!(h.iter().filter(|z| z.norm() > 0.0).count(), 1);
        }
        let spec = ChannelModelSpec::new(ChannelModel::CanonicalSparse, 6, 6);
        for h in gen_canonical_sparse(&spec, 20, &rng).unwrap().samples {
            assert!(h.iter().all(|z| z.norm() > 0.0));
        }
    }

    #[test]
    fn unit_energy_on_average() {
        let rng = SeededRng::new(2);
        for model in [ChannelModel::CanonicalSparse, ChannelModel::DftSparse, ChannelModel::Multipath] {
            let spec = ChannelModelSpec::new(model, 128, 5);
            let set = generate_channels(&spec, 100_000, &rng).unwrap();
            let ms = set.mean_square_norm();
            assert!((ms - 1.0).abs() <= 0.02, "{model}: {ms}");
        }
    }

    #[test]
    fn dft_sparse_preserves_norm_and_inverts() {
        let rng = SeededRng::new(3);
        let spec = ChannelModelSpec::new(ChannelModel::DftSparse, 32, 1);
        let canon = ChannelModelSpec::new(ChannelModel::CanonicalSparse, 32, 1);
        let h_set = gen_dft_sparse(&spec, 20, &rng).unwrap();
        // same rng draws the same sparse coefficients for both models
        let s_set = gen_canonical_sparse(&canon, 20, &rng).unwrap();
        let f = dft_matrix(32);
        for (h, s) in h_set.samples.iter().zip(&s_set.samples) {
            assert!((norm_sqr(h) - norm_sqr(s)).abs() <= 1e-12);
            let coeffs = f.adjoint() * nalgebra::DVector::from_vec(h.clone());
            let big = coeffs.iter().filter(|z| z.norm() > 1e-10).count();
            assert_eq!(big, 1);
        }
    }

    #[test]
    fn single_path_norm_is_gain_modulus() {
        let spec = ChannelModelSpec::new(ChannelModel::Multipath, 16, 1);
        let set = gen_multipath(&spec, 10, &SeededRng::new(4)).unwrap();
        for (i, h) in set.samples.iter().enumerate() {
            // replay the draw to recover the gain
            let mut g = SeededRng::new(4).indexed(i as u64).generator();
            let _theta: f64 = Uniform::new(0.0, TAU).unwrap().sample(&mut g);
            let s = complex_normal(&mut g);
            assert!((norm_sqr(h).sqrt() - s.norm()).abs() <= 1e-12);
        }
    }

    #[test]
    fn coincident_paths_are_collinear() {
        let a = steering_vector(1.1, 8);
        let (s1, s2) = (c(0.3, -0.2), c(-1.0, 0.5));
        let h: Vec<Complex64> = a.iter().map(|z| s1 * z + s2 * z).collect();
        for (hk, ak) in h.iter().zip(&a) {
            assert!((hk - (s1 + s2) * ak).norm() < 1e-15);
        }
    }

    #[test]
    fn generator_rejects_wrong_model() {
        let spec = ChannelModelSpec::new(ChannelModel::Multipath, 8, 1);
        assert!(gen_canonical_sparse(&spec, 1, &SeededRng::new(0)).is_err());
        let bad = ChannelModelSpec::new(ChannelModel::CanonicalSparse, 8, 9);
        assert!(gen_canonical_sparse(&bad, 1, &SeededRng::new(0)).is_err());
    }

    fn set_of(samples: Vec<Vec<Complex64>>) -> ChannelSet {
        let n = samples[0].len();
        ChannelSet::new(samples, ChannelModelSpec::new(ChannelModel::CanonicalSparse, n, 1)).unwrap()
    }

    #[test]
    fn per_sample_examples() {
        let set = set_of(vec![vec![c(2.0, 0.0), c(0.0, 0.0)]]);
        let out = normalize_per_sample(&set).unwrap();
        assert_eq!(out.samples[0], vec![c(1.0, 0.0), c(0.0, 0.0)]);

        let spec = ChannelModelSpec::new(ChannelModel::Multipath, 16, 3);
        let set = gen_multipath(&spec, 100, &SeededRng::new(5)).unwrap();
        let once = normalize_per_sample(&set).unwrap();
        for h in &once.samples {
            assert!((norm_sqr(h).sqrt() - 1.0).abs() <= 1e-14);
        }
        let twice = normalize_per_sample(&once).unwrap();
        for (a, b) in once.samples.iter().zip(&twice.samples) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).norm() <= 1e-15);
            }
        }
    }

    #[test]
    fn per_sample_reports_zero_index() {
        let set = set_of(vec![vec![c(1.0, 0.0)], vec![c(0.0, 0.0)]]);
        assert!(matches!(normalize_per_sample(&set), Err(Error::ZeroNormSample { index: 1 })));
    }

    #[test]
    fn average_examples() {
        let unit = set_of(vec![vec![c(1.0, 0.0)], vec![c(0.0, 1.0)]]);
        let (out, factor) = normalize_average(&unit).unwrap();
        assert_eq!(factor, 1.0);
        assert_eq!(out.samples, unit.samples);

        let set = set_of(vec![vec![c(0.0, 0.0)], vec![c(2.0, 0.0)]]);
        let (out, factor) = normalize_average(&set).unwrap();
        assert!((factor - 2f64.sqrt()).abs() < 1e-15);
        assert!((out.samples[1][0].re - 2f64.sqrt()).abs() < 1e-15);

        let zero = set_of(vec![vec![c(0.0, 0.0)]]);
        assert!(matches!(normalize_average(&zero), Err(Error::AllZero)));

        let spec = ChannelModelSpec::new(ChannelModel::Multipath, 16, 3);
        let set = gen_multipath(&spec, 300, &SeededRng::new(6)).unwrap();
        let (out, _) = normalize_average(&set).unwrap();
        assert!((out.mean_square_norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn binary_roundtrip_is_exact() {
        let spec = ChannelModelSpec::new(ChannelModel::Multipath, 8, 2);
        let set = normalize_per_sample(&gen_multipath(&spec, 7, &SeededRng::new(9)).unwrap()).unwrap();
        let mut buf = Vec::new();
        set.write_to(&mut buf).unwrap();
        let back = ChannelSet::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, set);
        assert!(ChannelSet::read_from(&b"garbage!"[..]).is_err());
    }
}
