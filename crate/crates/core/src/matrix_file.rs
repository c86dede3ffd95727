//! Plain-text storage for constant-modulus matrices `A = scale · exp(iΦ)`.
//!
//! ```text
//! # cmdesign matrix v1
//! # label=learned
//! # rows=2 cols=3 scale=0.7071067811865476
//! # snr_db=20
//! 0.1 2.5 -1.25
//! 3.0 0.0 1e-3
//! ```
//!
//! The `snr_db` line is present only for matrices selected at one SNR.
//! Values are written in shortest round-trip form, so reading back a file
//! reproduces the phases bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numeric::{ComplexMatrix, PhaseMatrix};

const HEADER: &str = "# cmdesign matrix v1";

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFile {
    pub label: String,
    pub scale: f64,
    pub phases: PhaseMatrix,
    pub snr_db: Option<f64>,
}

impl MatrixFile {
    /// Learned matrices use the `1/√m` scaling of `A(Φ)`.
    pub fn learned(label: impl Into<String>, phases: PhaseMatrix) -> Self {
        let scale = 1.0 / (phases.rows() as f64).sqrt();
        Self {
            label: label.into(),
            scale,
            phases,
            snr_db: None,
        }
    }

    /// Stores a constant-modulus matrix by its common modulus and phases.
    pub fn from_matrix(label: impl Into<String>, a: &ComplexMatrix, snr_db: Option<f64>) -> Result<Self> {
        let scale = a.iter().next().map(|z| z.norm()).unwrap_or(0.0);
        if scale.is_nan() || scale <= 0.0 {
            return Err(Error::invalid("matrix has no nonzero entries"));
        }
        let spread = a.iter().map(|z| (z.norm() - scale).abs()).fold(0.0, f64::max);
        if spread > 1e-9 * scale {
            return Err(Error::invalid("matrix does not have constant modulus"));
        }
        Ok(Self {
            label: label.into(),
            scale,
            phases: PhaseMatrix::from_matrix(a)?,
            snr_db,
        })
    }

    pub fn to_matrix(&self) -> ComplexMatrix {
        self.phases
            .as_matrix()
            .map(|p| Complex64::from_polar(self.scale, p))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(out, "# label={}", self.label);
        let _ = writeln!(
            out,
            "# rows={} cols={} scale={}",
            self.phases.rows(),
            self.phases.cols(),
            self.scale
        );
        if let Some(snr) = self.snr_db {
            let _ = writeln!(out, "# snr_db={snr}");
        }
        for row in self.phases.as_matrix().row_iter() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(HEADER) {
            return Err(Error::Format("missing matrix file header".into()));
        }
        let mut label = None;
        let mut dims = None;
        let mut scale = None;
        let mut snr_db = None;
        let mut rows = Vec::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                for field in meta.split_whitespace() {
                    let (key, value) = field
                        .split_once('=')
                        .ok_or_else(|| Error::Format(format!("bad header field '{field}'")))?;
                    match key {
                        "label" => label = Some(value.to_string()),
                        "rows" => dims = Some((parse_num::<usize>(value)?, dims.map_or(0, |d: (usize, usize)| d.1))),
                        "cols" => dims = Some((dims.map_or(0, |d| d.0), parse_num::<usize>(value)?)),
                        "scale" => scale = Some(parse_num::<f64>(value)?),
                        "snr_db" => snr_db = Some(parse_num::<f64>(value)?),
                        _ => {}
                    }
                }
                continue;
            }
            let row = line
                .split_whitespace()
                .map(parse_num::<f64>)
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let (m, n) = dims.ok_or_else(|| Error::Format("missing dimensions".into()))?;
        if rows.len() != m || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Format(format!("expected a {m} x {n} phase table")));
        }
        Ok(Self {
            label: label.unwrap_or_default(),
            scale: scale.ok_or_else(|| Error::Format("missing scale".into()))?,
            phases: PhaseMatrix::from_rows(&rows)?,
            snr_db,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Format(format!("cannot parse '{s}' as a number")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::phases_to_matrix;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn text_roundtrip_is_exact(seed in any::<u64>(), m in 1usize..5, n in 1usize..7, snr in proptest::option::of(-10.0f64..40.0)) {
            let phases = PhaseMatrix::uniform(m, n, &SeededRng::new(seed));
            let mut file = MatrixFile::learned("learned", phases);
            file.snr_db = snr;
            let back = MatrixFile::parse(&file.to_text()).unwrap();
            prop_assert_eq!(back, file);
        }
    }

    #[test]
    fn learned_file_reproduces_matrix() {
        let phases = PhaseMatrix::uniform(3, 5, &SeededRng::new(1));
        let file = MatrixFile::learned("x", phases.clone());
        assert_eq!(file.to_matrix(), phases_to_matrix(&phases));
    }

    #[test]
    fn rejects_non_constant_modulus() {
        let mut a = phases_to_matrix(&PhaseMatrix::zeros(2, 2));
        a[(0, 0)] *= 2.0;
        assert!(MatrixFile::from_matrix("bad", &a, None).is_err());
    }

    #[test]
    fn rejects_truncated_table() {
        let text = "# cmdesign matrix v1\n# rows=2 cols=2 scale=1\n0 1\n";
        assert!(MatrixFile::parse(text).is_err());
    }
}
