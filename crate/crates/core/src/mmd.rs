//! Gaussian mixture kernels, the biased (V-statistic) MMD² estimate and its
//! exact gradient with respect to the phases of a constant-modulus matrix.
//!
//! For batches `X = {x_i}` (M points) and `Y = {y_j}` (N points)
//!
//! ```text
//! MMD²(X, Y) = Σ_ij k(x_i, x_j)/M² − 2 Σ_ij k(x_i, y_j)/(MN) + Σ_ij k(y_i, y_j)/N²
//! ```
//!
//! with `k = Σ_σ exp(−‖x − y‖² / 2σ²)`. All kernel sums are reduced row by
//! row: each row is summed sequentially and the row totals are then added in
//! index order, so the result does not depend on the number of threads.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{stack, PhaseMatrix, StackedMap};

/// Bandwidths `S` of the kernel `Σ_{σ∈S} k_σ`.
///
/// When `(σ_a/σ_b)²` is a small integer `r`, `k_σb = k_σa^r` is computed by
/// repeated multiplication instead of a second exponential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "KernelRepr", try_from = "KernelRepr")]
pub struct KernelSpec {
    bandwidths: Vec<f64>,
    plan: Vec<Term>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct KernelRepr {
    bandwidths: Vec<f64>,
}

impl From<KernelSpec> for KernelRepr {
    fn from(k: KernelSpec) -> Self {
        Self { bandwidths: k.bandwidths }
    }
}

impl TryFrom<KernelRepr> for KernelSpec {
    type Error = Error;

    fn try_from(r: KernelRepr) -> Result<Self> {
        Self::new(r.bandwidths)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Source {
    /// `exp(−d² / 2σ²)`, holding `2σ²`.
    Exp(f64),
    /// `value[index]^power`.
    Pow(usize, u32),
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Term {
    source: Source,
    inv_s2: f64,
}

const MAX_POWER: u32 = 16;
const MAX_CHAIN: usize = 4;
const MAX_TERMS: usize = 16;

fn plan_terms(bandwidths: &[f64]) -> Vec<Term> {
    let mut order: Vec<usize> = (0..bandwidths.len()).collect();
    order.sort_by(|&a, &b| bandwidths[b].total_cmp(&bandwidths[a]));
    let mut plan: Vec<Term> = Vec::with_capacity(bandwidths.len());
    let mut depth: Vec<usize> = Vec::with_capacity(bandwidths.len());
    for &i in &order {
        let s = bandwidths[i];
        let mut source = Source::Exp(2.0 * s * s);
        let mut d = 0;
        if plan.len() < MAX_TERMS {
            let mut best_r = u32::MAX;
            for (j, &prev) in order[..plan.len()].iter().enumerate() {
                let ratio = (bandwidths[prev] / s).powi(2);
                let r = ratio.round();
                if (2.0..=MAX_POWER as f64).contains(&r)
                    && (ratio - r).abs() <= 1e-12 * r
                    && depth[j] < MAX_CHAIN
                    && (r as u32) < best_r
                {
                    best_r = r as u32;
                    source = Source::Pow(j, best_r);
                    d = depth[j] + 1;
                }
            }
        }
        plan.push(Term { source, inv_s2: 1.0 / (s * s) });
        depth.push(d);
    }
    plan
}

#[inline]
fn power(x: f64, r: u32) -> f64 {
    match r {
        2 => x * x,
        4 => {
            let x2 = x * x;
            x2 * x2
        }
        _ => x.powi(r as i32),
    }
}

impl KernelSpec {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() {
            return Err(Error::invalid("kernel needs at least one bandwidth"));
        }
        if bandwidths.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("bandwidths must be positive and finite"));
        }
        let plan = plan_terms(&bandwidths);
        Ok(Self { bandwidths, plan })
    }

    pub fn single(sigma: f64) -> Result<Self> {
        Self::new(vec![sigma])
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    #[inline]
    fn terms(&self, d2: f64, out: &mut [f64; MAX_TERMS]) -> usize {
        let n = self.plan.len().min(MAX_TERMS);
        for t in 0..n {
            out[t] = match self.plan[t].source {
                Source::Exp(two_s2) => (-d2 / two_s2).exp(),
                Source::Pow(j, r) => power(out[j], r),
            };
        }
        n
    }

    /// Kernel value from a squared distance.
    #[inline]
    fn value(&self, d2: f64) -> f64 {
        if self.plan.len() > MAX_TERMS {
            return self.bandwidths.iter().map(|s| (-d2 / (2.0 * s * s)).exp()).sum();
        }
        let mut buf = [0.0; MAX_TERMS];
        let n = self.terms(d2, &mut buf);
        buf[..n].iter().sum()
    }

    /// `w = Σ_σ k_σ / σ²`, so that `∂k/∂x = −w (x − y)`.
    #[inline]
    fn weight(&self, d2: f64) -> f64 {
        if self.plan.len() > MAX_TERMS {
            return self.bandwidths.iter().map(|s| (-d2 / (2.0 * s * s)).exp() / (s * s)).sum();
        }
        let mut buf = [0.0; MAX_TERMS];
        let n = self.terms(d2, &mut buf);
        buf[..n].iter().zip(&self.plan).map(|(e, t)| e * t.inv_s2).sum()
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::new(vec![2.0, 5.0, 10.0, 20.0, 40.0, 80.0]).expect("valid bandwidths")
    }
}

/// Real points of a common dimension, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    dim: usize,
    data: Vec<f64>,
}

impl SampleBatch {
    pub fn new(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(Vec::len).ok_or_else(|| Error::invalid("empty batch"))?;
        if dim == 0 {
            return Err(Error::invalid("points must have positive dimension"));
        }
        let mut data = Vec::with_capacity(dim * points.len());
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::dim(format!("point {i} has dimension {}, expected {dim}", p.len())));
            }
            data.extend_from_slice(p);
        }
        Ok(Self { dim, data })
    }

    /// Stacked real images of complex vectors.
    pub fn from_complex(points: &[Vec<Complex64>]) -> Result<Self> {
        let stacked: Vec<Vec<f64>> = points.iter().map(|z| stack(z)).collect();
        Self::new(&stacked)
    }

    /// `{stack(A(Φ) h)}` for every channel.
    pub fn from_map(map: &StackedMap, channels: &[Vec<Complex64>]) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let dim = 2 * map.rows();
        let mut data = vec![0.0; dim * channels.len()];
        data.par_chunks_mut(dim)
            .zip(channels.par_iter())
            .try_for_each(|(out, h)| map.apply_into(h, out))?;
        Ok(Self { dim, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[inline]
fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::dim(format!("kernel arguments have dimensions {} and {}", x.len(), y.len())));
    }
    Ok(())
}

/// `exp(−‖x − y‖² / 2σ²)`.
pub fn gaussian_kernel(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    check_dims(x, y)?;
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::invalid("bandwidth must be positive"));
    }
    Ok((-squared_distance(x, y) / (2.0 * sigma * sigma)).exp())
}

pub fn mixture_kernel(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    check_dims(x, y)?;
    Ok(spec.value(squared_distance(x, y)))
}

/// `Σ_i Σ_j k(x_i, y_j)`.
fn cross_sum(x: &SampleBatch, y: &SampleBatch, spec: &KernelSpec) -> f64 {
    let rows: Vec<f64> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let xi = x.point(i);
            (0..y.len())
                .map(|j| spec.value(squared_distance(xi, y.point(j))))
                .sum()
        })
        .collect();
    rows.iter().sum()
}

/// `Σ_i Σ_j k(x_i, x_j)` using symmetry; the diagonal contributes `|S|` per point.
fn self_sum(x: &SampleBatch, spec: &KernelSpec) -> f64 {
    let rows: Vec<f64> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let xi = x.point(i);
            ((i + 1)..x.len())
                .map(|j| spec.value(squared_distance(xi, x.point(j))))
                .sum()
        })
        .collect();
    2.0 * rows.iter().sum::<f64>() + spec.bandwidths.len() as f64 * x.len() as f64
}

/// Biased empirical MMD².
pub fn mmd2_biased(x: &SampleBatch, y: &SampleBatch, spec: &KernelSpec) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::dim(format!("batches have dimensions {} and {}", x.dim(), y.dim())));
    }
    let (m, n) = (x.len() as f64, y.len() as f64);
    Ok(self_sum(x, spec) / (m * m) - 2.0 * cross_sum(x, y, spec) / (m * n) + self_sum(y, spec) / (n * n))
}

fn check_objective_inputs(phi: &PhaseMatrix, channels: &[Vec<Complex64>], sphere: &[Vec<Complex64>]) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::invalid("empty channel batch"));
    }
    if channels.len() != sphere.len() {
        return Err(Error::dim(format!(
            "{} channels but {} sphere points",
            channels.len(),
            sphere.len()
        )));
    }
    if let Some(u) = sphere.iter().find(|u| u.len() != phi.rows()) {
        return Err(Error::dim(format!(
            "sphere point has dimension {}, matrix has {} rows",
            u.len(),
            phi.rows()
        )));
    }
    if let Some(h) = channels.iter().find(|h| h.len() != phi.cols()) {
        return Err(Error::dim(format!(
            "channel has dimension {}, matrix has {} columns",
            h.len(),
            phi.cols()
        )));
    }
    Ok(())
}

/// `MMD²({stack(A(Φ) h̃_t)}, {stack(u_t)})`.
pub fn mmd2_objective(
    phi: &PhaseMatrix,
    channels: &[Vec<Complex64>],
    sphere: &[Vec<Complex64>],
    spec: &KernelSpec,
) -> Result<f64> {
    check_objective_inputs(phi, channels, sphere)?;
    let x = SampleBatch::from_map(&StackedMap::new(phi), channels)?;
    let y = SampleBatch::from_complex(sphere)?;
    mmd2_biased(&x, &y, spec)
}

/// Gradient of [`mmd2_objective`] with respect to `Φ`.
pub fn mmd2_gradient_phases(
    phi: &PhaseMatrix,
    channels: &[Vec<Complex64>],
    sphere: &[Vec<Complex64>],
    spec: &KernelSpec,
) -> Result<DMatrix<f64>> {
    check_objective_inputs(phi, channels, sphere)?;
    let map = StackedMap::new(phi);
    let x = SampleBatch::from_map(&map, channels)?;
    let y = SampleBatch::from_complex(sphere)?;
    Ok(phase_gradient(phi, channels, &x, &y, spec))
}

/// Chain rule through the stacked map. With `g_i = ∂MMD²/∂x_i` read as a
/// complex vector `g_i = g_re + i g_im`, and `∂(A h)_k/∂φ_kl = i A_kl h_l`,
///
/// ```text
/// ∂MMD²/∂φ_kl = Im( conj(A_kl) Σ_i [g_i]_k conj(h_il) ).
/// ```
pub(crate) fn phase_gradient(
    phi: &PhaseMatrix,
    channels: &[Vec<Complex64>],
    x: &SampleBatch,
    y: &SampleBatch,
    spec: &KernelSpec,
) -> DMatrix<f64> {
    let (m, n) = (phi.rows(), phi.cols());
    let grads = point_gradients(x, y, spec);
    let scale = 1.0 / (m as f64).sqrt();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|k| {
            let mut acc = vec![Complex64::new(0.0, 0.0); n];
            for (gi, h) in grads.chunks_exact(2 * m).zip(channels) {
                let g = Complex64::new(gi[k], gi[m + k]);
                if g == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (a, hl) in acc.iter_mut().zip(h) {
                    *a += g * hl.conj();
                }
            }
            acc.iter()
                .enumerate()
                .map(|(l, a)| {
                    let conj_a = Complex64::from_polar(scale, -phi.as_matrix()[(k, l)]);
                    (conj_a * a).im
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(m, n, |k, l| rows[k][l])
}

/// `∂MMD²/∂x_i` for every point of `x`, flattened.
///
/// ```text
/// g_i = 2/M² Σ_j w(x_i, x_j)(x_j − x_i) − 2/(MN) Σ_j w(x_i, y_j)(y_j − x_i)
/// ```
///
/// evaluated as `W X − diag(W 1) X` with the pair weights `W` collected
/// first; the symmetric `x`–`x` weights are computed once per pair.
fn point_gradients(x: &SampleBatch, y: &SampleBatch, spec: &KernelSpec) -> Vec<f64> {
    let (mx, ny, dim) = (x.len(), y.len(), x.dim());
    let upper: Vec<Vec<f64>> = (0..mx)
        .into_par_iter()
        .map(|i| {
            let xi = x.point(i);
            ((i + 1)..mx).map(|j| spec.weight(squared_distance(xi, x.point(j)))).collect()
        })
        .collect();
    let mut wxx = DMatrix::<f64>::zeros(mx, mx);
    for (i, row) in upper.iter().enumerate() {
        for (k, &w) in row.iter().enumerate() {
            let j = i + 1 + k;
            wxx[(i, j)] = w;
            wxx[(j, i)] = w;
        }
    }
    let cross: Vec<Vec<f64>> = (0..mx)
        .into_par_iter()
        .map(|i| {
            let xi = x.point(i);
            (0..ny).map(|j| spec.weight(squared_distance(xi, y.point(j)))).collect()
        })
        .collect();
    let wxy = DMatrix::from_fn(mx, ny, |i, j| cross[i][j]);

    let xs = DMatrix::from_row_slice(mx, dim, &x.data);
    let ys = DMatrix::from_row_slice(ny, dim, &y.data);
    let self_coef = 2.0 / (mx as f64 * mx as f64);
    let cross_coef = 2.0 / (mx as f64 * ny as f64);
    let pulled = (&wxx * &xs) * self_coef - (&wxy * &ys) * cross_coef;
    let mut out = vec![0.0; dim * mx];
    for i in 0..mx {
        let shrink = self_coef * wxx.row(i).sum() - cross_coef * wxy.row(i).sum();
        for d in 0..dim {
            out[i * dim + d] = pulled[(i, d)] - shrink * xs[(i, d)];
        }
    }
    out
}
