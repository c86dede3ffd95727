//! Learning-based compressive subsampling and its constant-modulus
//! Monte-Carlo variant.
//!
//! [`lbcs_select`] keeps the `m` rows of a square matrix `V` that capture
//! the most energy `Σ_i |(V h̃_i)_r|²` of the per-sample normalized training
//! channels. [`mc_lbcs`] repeats this for random unitaries projected onto
//! constant modulus and keeps the candidate with the smallest validation
//! relative MSE at one SNR.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::channels::{normalize_per_sample, ChannelSet, Dictionary};
use crate::error::{Error, Result};
use crate::harness::evaluate;
use crate::numeric::{random_unitary, ComplexMatrix};
use crate::rng::SeededRng;

const SCORE_CHUNK: usize = 2048;

#[derive(Clone, Debug, PartialEq)]
pub struct LbcsSelection {
    /// Selected row indices, ascending.
    pub rows: Vec<usize>,
    /// Captured energy per row of `V`.
    pub scores: Vec<f64>,
}

/// Row selection of `V` by captured training energy. Returns the selection
/// and the `m × n` matrix `P_Ω V`.
pub fn lbcs_select(v: &ComplexMatrix, data: &ChannelSet, m: usize) -> Result<(LbcsSelection, ComplexMatrix)> {
    let (rows, n) = v.shape();
    if data.is_empty() {
        return Err(Error::invalid("LBCS needs training data"));
    }
    if n != data.dim() {
        return Err(Error::dim(format!("V has {n} columns, channels have dimension {}", data.dim())));
    }
    if m == 0 || m > rows {
        return Err(Error::invalid(format!("cannot select {m} of {rows} rows")));
    }
    let normalized = normalize_per_sample(data)?;
    let scores = row_energies(v, &normalized.samples);
    let selected = top_rows(&scores, m);
    let sub = v.select_rows(selected.iter());
    Ok((LbcsSelection { rows: selected, scores }, sub))
}

fn row_energies(v: &ComplexMatrix, samples: &[Vec<Complex64>]) -> Vec<f64> {
    let (rows, n) = v.shape();
    let partials: Vec<Vec<f64>> = samples
        .par_chunks(SCORE_CHUNK)
        .map(|chunk| {
            let h = ComplexMatrix::from_fn(n, chunk.len(), |l, i| chunk[i][l]);
            let vh = v * h;
            (0..rows)
                .map(|r| vh.row(r).iter().map(|z| z.norm_sqr()).sum())
                .collect()
        })
        .collect();
    let mut scores = vec![0.0; rows];
    for part in partials {
        for (s, p) in scores.iter_mut().zip(part) {
            *s += p;
        }
    }
    scores
}

/// Indices of the `m` largest scores, ties to the lower index, ascending.
fn top_rows(scores: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(m).collect();
    chosen.sort_unstable();
    chosen
}

/// Divides each entry by its modulus, then scales every row to unit norm.
pub fn constant_modulus_project(v: &ComplexMatrix) -> Result<ComplexMatrix> {
    let mut out = v.clone();
    for ((row, col), z) in v.iter().enumerate().map(|(i, z)| ((i % v.nrows(), i / v.nrows()), z)) {
        let norm = z.norm();
        if norm == 0.0 {
            return Err(Error::ZeroEntry { row, col });
        }
        out[(row, col)] = z / norm;
    }
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        row /= Complex64::new(norm, 0.0);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct McLbcsResult {
    pub matrix: ComplexMatrix,
    pub selection: LbcsSelection,
    pub validation_mse: f64,
    /// Validation MSE of every candidate, in iteration order.
    pub candidate_mses: Vec<f64>,
    pub best_iteration: usize,
}

/// Settings shared by all candidates of one Monte-Carlo LBCS search.
#[derive(Clone, Copy, Debug)]
pub struct McLbcsConfig {
    pub snr_db: f64,
    pub m: usize,
    pub iterations: usize,
    pub sparsity: usize,
}

/// Monte-Carlo LBCS search at one SNR. Candidate `i` uses the unitary drawn
/// from `rng.substream("unitary").indexed(i)`; all candidates are scored on
/// the same validation noise, drawn from `rng.substream("noise")`.
pub fn mc_lbcs(
    train: &ChannelSet,
    val: &ChannelSet,
    config: McLbcsConfig,
    dictionary: &Dictionary,
    rng: &SeededRng,
) -> Result<McLbcsResult> {
    if config.iterations == 0 {
        return Err(Error::invalid("Monte-Carlo LBCS needs at least one iteration"));
    }
    let n = train.dim();
    let train = normalize_per_sample(train)?;
    let noise = rng.substream("noise");
    let candidates: Vec<(ComplexMatrix, LbcsSelection, f64)> = (0..config.iterations)
        .into_par_iter()
        .map(|i| {
            let v = random_unitary(n, &rng.substream("unitary").indexed(i as u64))?;
            let projected = constant_modulus_project(&v)?;
            let (selection, a) = lbcs_select(&projected, &train, config.m)?;
            let mse = evaluate(&a, val, config.snr_db, config.sparsity, dictionary, &noise)?.mean;
            Ok((a, selection, mse))
        })
        .collect::<Result<_>>()?;

    let candidate_mses: Vec<f64> = candidates.iter().map(|c| c.2).collect();
    // strict comparison keeps the lowest iteration on ties
    let mut best_iteration = 0;
    for (i, mse) in candidate_mses.iter().enumerate() {
        if *mse < candidate_mses[best_iteration] {
            best_iteration = i;
        }
    }
    let (matrix, selection, validation_mse) = candidates.into_iter().nth(best_iteration).expect("non-empty");
    Ok(McLbcsResult {
        matrix,
        selection,
        validation_mse,
        candidate_mses,
        best_iteration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{ChannelModel, ChannelModelSpec, generate_channels};
    use crate::numeric::norm_sqr;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn picks_the_energetic_coordinate() {
        let spec = ChannelModelSpec::new(ChannelModel::CanonicalSparse, 5, 1);
        let mut e3 = vec![c(0.0); 5];
        e3[2] = c(1.0);
        let data = ChannelSet::new(vec![e3; 10], spec).unwrap();
        let (sel, a) = lbcs_select(&ComplexMatrix::identity(5, 5), &data, 1).unwrap();
        assert_eq!(sel.rows, vec![2]);
        assert_eq!(a.shape(), (1, 5));
    }

    #[test]
    fn scores_of_a_unit_sample_sum_to_one_for_unitary_v() {
        let spec = ChannelModelSpec::new(ChannelModel::Multipath, 6, 2);
        let data = generate_channels(&spec, 1, &SeededRng::new(1)).unwrap();
        let v = random_unitary(6, &SeededRng::new(2)).unwrap();
        let (sel, _) = lbcs_select(&v, &data, 3).unwrap();
        assert!((sel.scores.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn rejects_too_many_rows() {
        let spec = ChannelModelSpec::new(ChannelModel::CanonicalSparse, 4, 1);
        let data = generate_channels(&spec, 3, &SeededRng::new(1)).unwrap();
        assert!(lbcs_select(&ComplexMatrix::identity(4, 4), &data, 5).is_err());
    }

    #[test]
    fn ties_prefer_lower_rows() {
        assert_eq!(top_rows(&[1.0, 2.0, 2.0, 2.0, 0.5], 2), vec![1, 2]);
    }

    #[test]
    fn projection_examples() {
        let mut v = ComplexMatrix::from_element(2, 2, c(1.0));
        v[(0, 0)] = Complex64::new(3.0, 4.0);
        let out = constant_modulus_project(&v).unwrap();
        let expected = Complex64::new(0.6, 0.8) / 2f64.sqrt();
        assert!((out[(0, 0)] - expected).norm() < 1e-15);

        let u = random_unitary(7, &SeededRng::new(3)).unwrap();
        let p = constant_modulus_project(&u).unwrap();
        for row in p.row_iter() {
            let norms: Vec<f64> = row.iter().map(|z| z.norm()).collect();
            let row_vec: Vec<Complex64> = row.iter().copied().collect();
            assert!((norm_sqr(&row_vec).sqrt() - 1.0).abs() <= 1e-12);
            for x in norms {
                assert!((x - 1.0 / 7f64.sqrt()).abs() <= 1e-12);
            }
        }

        v[(1, 1)] = c(0.0);
        assert!(matches!(constant_modulus_project(&v), Err(Error::ZeroEntry { row: 1, col: 1 })));
    }

    #[test]
    fn single_iteration_returns_its_candidate() {
        let spec = ChannelModelSpec::new(ChannelModel::DftSparse, 16, 1);
        let rng = SeededRng::new(4);
        let train = generate_channels(&spec, 200, &rng.substream("train")).unwrap();
        let val = generate_channels(&spec, 50, &rng.substream("val")).unwrap();
        let dict = Dictionary::for_model(&spec);
        let cfg = McLbcsConfig { snr_db: 20.0, m: 4, iterations: 1, sparsity: 1 };
        let res = mc_lbcs(&train, &val, cfg, &dict, &rng).unwrap();
        assert_eq!(res.best_iteration, 0);
        assert_eq!(res.candidate_mses.len(), 1);
        assert_eq!(res.validation_mse, res.candidate_mses[0]);

        let cfg = McLbcsConfig { iterations: 6, ..cfg };
        let res = mc_lbcs(&train, &val, cfg, &dict, &rng).unwrap();
        assert!(res.candidate_mses.iter().all(|m| res.validation_mse <= *m));
        let again = mc_lbcs(&train, &val, cfg, &dict, &rng).unwrap();
        assert_eq!(again.matrix, res.matrix);
    }
}
