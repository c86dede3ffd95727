//! Complex primitives shared by every other module: the phase
//! parameterization of constant-modulus matrices, the real stacking map,
//! and the random draws (sphere points, Steinhaus matrices, Haar unitaries).

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

/// Real phases `Φ` (m × n, radians) of the constant-modulus matrix
/// `A(Φ) = exp(iΦ) / √m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PhaseRows", try_from = "PhaseRows")]
pub struct PhaseMatrix {
    phases: DMatrix<f64>,
}

/// Row-major serialized form of [`PhaseMatrix`].
#[derive(Serialize, Deserialize)]
struct PhaseRows(Vec<Vec<f64>>);

impl From<PhaseMatrix> for PhaseRows {
    fn from(p: PhaseMatrix) -> Self {
        PhaseRows(p.to_rows())
    }
}

impl TryFrom<PhaseRows> for PhaseMatrix {
    type Error = Error;

    fn try_from(rows: PhaseRows) -> Result<Self> {
        PhaseMatrix::from_rows(&rows.0)
    }
}

impl PhaseMatrix {
    pub fn new(phases: DMatrix<f64>) -> Result<Self> {
        if phases.nrows() == 0 || phases.ncols() == 0 {
            return Err(Error::invalid("phase matrix must have positive dimensions"));
        }
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("phase matrix contains non-finite entries"));
        }
        Ok(Self { phases })
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            phases: DMatrix::zeros(m.max(1), n.max(1)),
        }
    }

    /// Independent phases uniform on `[0, 2π)`.
    pub fn uniform(m: usize, n: usize, rng: &SeededRng) -> Self {
        let mut g = rng.generator();
        let dist = Uniform::new(0.0, TAU).expect("valid range");
        Self {
            phases: DMatrix::from_fn(m, n, |_, _| dist.sample(&mut g)),
        }
    }

    /// Phases (arguments) of an arbitrary complex matrix. Used to start the
    /// learner from a constant-modulus matrix obtained elsewhere.
    pub fn from_matrix(a: &ComplexMatrix) -> Result<Self> {
        Self::new(a.map(|z| z.arg()))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::dim("phase rows have unequal lengths"));
        }
        Self::new(DMatrix::from_fn(m, n, |k, l| rows[k][l]))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.phases
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    pub fn rows(&self) -> usize {
        self.phases.nrows()
    }

    pub fn cols(&self) -> usize {
        self.phases.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.phases
    }
}

/// `A(Φ)` with entries `exp(iφ_kl) / √m`.
pub fn phases_to_matrix(phi: &PhaseMatrix) -> ComplexMatrix {
    let scale = 1.0 / (phi.rows() as f64).sqrt();
    phi.phases.map(|p| Complex64::from_polar(scale, p))
}

/// `[Re(z); Im(z)]`.
pub fn stack(z: &[Complex64]) -> Vec<f64> {
    z.iter().map(|c| c.re).chain(z.iter().map(|c| c.im)).collect()
}

/// Inverse of [`stack`].
pub fn unstack(x: &[f64]) -> Result<Vec<Complex64>> {
    if !x.len().is_multiple_of(2) {
        return Err(Error::dim(format!("stacked vector has odd length {}", x.len())));
    }
    let m = x.len() / 2;
    Ok((0..m).map(|k| Complex64::new(x[k], x[m + k])).collect())
}

/// The real block map `[cos Φ, -sin Φ; sin Φ, cos Φ] / √m` acting on
/// `[Re h; Im h]`. Holding the trigonometric tables lets a batch of channels
/// reuse them.
#[derive(Clone, Debug)]
pub struct StackedMap {
    m: usize,
    n: usize,
    // row-major m × n tables, already divided by √m
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl StackedMap {
    pub fn new(phi: &PhaseMatrix) -> Self {
        let (m, n) = (phi.rows(), phi.cols());
        let scale = 1.0 / (m as f64).sqrt();
        let mut cos = Vec::with_capacity(m * n);
        let mut sin = Vec::with_capacity(m * n);
        for k in 0..m {
            for l in 0..n {
                let (s, c) = phi.phases[(k, l)].sin_cos();
                cos.push(c * scale);
                sin.push(s * scale);
            }
        }
        Self { m, n, cos, sin }
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    /// Writes `stack(A(Φ) h)` into `out` (length 2m).
    pub fn apply_into(&self, h: &[Complex64], out: &mut [f64]) -> Result<()> {
        if h.len() != self.n {
            return Err(Error::dim(format!(
                "channel has dimension {}, matrix expects {}",
                h.len(),
                self.n
            )));
        }
        if out.len() != 2 * self.m {
            return Err(Error::dim("output buffer must have length 2m"));
        }
        for k in 0..self.m {
            let cos = &self.cos[k * self.n..(k + 1) * self.n];
            let sin = &self.sin[k * self.n..(k + 1) * self.n];
            let (mut re, mut im) = (0.0, 0.0);
            for ((c, s), z) in cos.iter().zip(sin).zip(h) {
                re += c * z.re - s * z.im;
                im += s * z.re + c * z.im;
            }
            out[k] = re;
            out[self.m + k] = im;
        }
        Ok(())
    }

    pub fn apply(&self, h: &[Complex64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; 2 * self.m];
        self.apply_into(h, &mut out)?;
        Ok(out)
    }
}

/// `stack(A(Φ) h)` computed through the real block map.
pub fn apply_stacked(phi: &PhaseMatrix, h: &[Complex64]) -> Result<Vec<f64>> {
    StackedMap::new(phi).apply(h)
}

/// One draw from CN(0, 1): real and imaginary parts independent N(0, 1/2).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Haar-distributed unitary: QR of a complex Gaussian matrix with the
/// diagonal of R rotated onto the positive reals.
pub fn random_unitary(n: usize, rng: &SeededRng) -> Result<ComplexMatrix> {
    if n == 0 {
        return Err(Error::invalid("unitary dimension must be positive"));
    }
    let mut g = rng.generator();
    let z = ComplexMatrix::from_fn(n, n, |_, _| complex_normal(&mut g));
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let norm = d.norm();
        // zero diagonal has probability zero; leave the column as is
        if norm > 0.0 {
            let phase = d / norm;
            q.column_mut(j).iter_mut().for_each(|x| *x *= phase);
        }
    }
    Ok(q)
}

/// Points uniform on the unit sphere of C^m, as normalized CN(0, I) draws.
pub fn sample_sphere(m: usize, count: usize, rng: &SeededRng) -> Result<Vec<Vec<Complex64>>> {
    if m == 0 || count == 0 {
        return Err(Error::invalid("sphere dimension and count must be positive"));
    }
    let mut g = rng.generator();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v: Vec<Complex64> = (0..m).map(|_| complex_normal(&mut g)).collect();
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        out.push(v.into_iter().map(|z| z / norm).collect());
    }
    Ok(out)
}

/// Random constant-modulus matrix with i.i.d. entries `exp(iφ)/√m`,
/// `φ ~ U[0, 2π)`.
pub fn sample_steinhaus_matrix(m: usize, n: usize, rng: &SeededRng) -> Result<ComplexMatrix> {
    if m == 0 || n == 0 {
        return Err(Error::invalid("matrix dimensions must be positive"));
    }
    Ok(phases_to_matrix(&PhaseMatrix::uniform(m, n, rng)))
}

pub(crate) fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

pub(crate) fn mat_vec(a: &ComplexMatrix, h: &[Complex64]) -> Vec<Complex64> {
    let (m, n) = a.shape();
    debug_assert_eq!(n, h.len());
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    for (l, hl) in h.iter().enumerate() {
        if *hl == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (k, o) in out.iter_mut().enumerate() {
            *o += a[(k, l)] * hl;
        }
    }
    out
}
