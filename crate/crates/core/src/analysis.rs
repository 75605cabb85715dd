//! Singular-value spectrum of a feature matrix and the entropy of its normalized
//! singular values, `H = -Σ p_i ln p_i` with `p_i = σ_i / Σσ`.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Tensor, TensorFile};

/// Name of the feature tensor inside a feature dump.
pub const FEATURES_TENSOR: &str = "features";

/// `N × D` row-major feature matrix with `D ≤ N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} feature matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if cols == 0 || cols > rows {
            return Err(Error::Shape(format!(
                "feature matrix must have 0 < D <= N, got N={rows}, D={cols}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("feature matrix contains non-finite values".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("feature rows differ in length".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Copy with each column's mean subtracted.
    pub fn centered(&self) -> Self {
        let mut means = vec![0.0; self.cols];
        for row in self.values.chunks_exact(self.cols) {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= self.rows as f64;
        }
        let values = self
            .values
            .chunks_exact(self.cols)
            .flat_map(|row| row.iter().zip(&means).map(|(v, m)| v - m))
            .collect();
        Self { values, ..*self }
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = TensorFile::default();
        f.meta.insert("kind".into(), "features".into());
        f.tensors.push(Tensor {
            name: FEATURES_TENSOR.into(),
            shape: vec![self.rows, self.cols],
            data: self.values.clone(),
        });
        f
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        let t = file.require(FEATURES_TENSOR)?;
        match t.shape[..] {
            [n, d] => Self::new(n, d, t.data.clone()),
            _ => Err(Error::Shape(format!("feature tensor must be 2-D, got {:?}", t.shape))),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::load(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    #[default]
    Raw,
    Centered,
}

/// Singular values, descending, via one-sided (Hestenes) Jacobi rotations on the columns.
pub fn svd_spectrum(f: &FeatureMatrix, centering: Centering) -> Vec<f64> {
    let f = match centering {
        Centering::Raw => f.clone(),
        Centering::Centered => f.centered(),
    };
    let (n, d) = (f.rows, f.cols);
    // column-major working copy
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..n).map(|i| f.values[i * d + j]).collect())
        .collect();
    const TOL: f64 = 1e-15;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..d {
            for q in p + 1..d {
                let (alpha, beta, gamma) = {
                    let (a, b) = (&cols[p], &cols[q]);
                    let mut s = (0.0, 0.0, 0.0);
                    for (x, y) in a.iter().zip(b) {
                        s.0 += x * x;
                        s.1 += y * y;
                        s.2 += x * y;
                    }
                    s
                };
                if gamma == 0.0 || gamma.abs() <= TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    sigma
}

/// `-Σ p ln p` over the normalized spectrum; zero entries contribute nothing.
pub fn nsv_entropy(sigma: &[f64]) -> Result<f64> {
    if sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::InvalidInput("singular values must be finite and non-negative".into()));
    }
    let total: f64 = sigma.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("entropy of an all-zero spectrum is undefined".into()));
    }
    Ok(sigma
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|&s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Leading singular values, at most `top_k`.
    pub top: Vec<f64>,
    /// Entropy of the full spectrum.
    pub entropy: f64,
    pub dims: usize,
}

pub const DEFAULT_TOP_K: usize = 50;

pub fn spectrum_report(f: &FeatureMatrix, top_k: usize, centering: Centering) -> Result<SpectrumReport> {
    let sigma = svd_spectrum(f, centering);
    let entropy = nsv_entropy(&sigma)?;
    Ok(SpectrumReport {
        top: sigma.iter().copied().take(top_k).collect(),
        entropy,
        dims: f.cols,
    })
}

impl SpectrumReport {
    /// `# nsv_entropy=<H>` comment line, then `rank,sigma` rows (rank from 1).
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# nsv_entropy={}", self.entropy)?;
        writeln!(w, "rank,sigma")?;
        for (i, s) in self.top.iter().enumerate() {
            writeln!(w, "{},{s}", i + 1)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}
