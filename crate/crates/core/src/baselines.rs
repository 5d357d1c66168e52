//! Comparison scorers: mean absolute error between aligned raw twin and real
//! windows, and PCA reconstruction error.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::clustering::matrix_rows;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::synthgen::{Channel, TimeSeriesFrame};

pub const EIGENVALUE_FLOOR: f64 = 1e-12;

/// Mean over channels and time steps of `|twin - real|`. Both inputs are
/// lists of equally long channel slices.
pub fn mae_score(twin: &[&[f64]], real: &[&[f64]]) -> Result<f64> {
    if twin.len() != real.len() {
        return Err(Error::DimensionMismatch {
            expected: twin.len(),
            actual: real.len(),
        });
    }
    if twin.is_empty() {
        return Err(Error::EmptyInput("mae needs at least one channel"));
    }
    let len = twin[0].len();
    let mut total = 0.0;
    for (a, b) in twin.iter().zip(real) {
        if a.len() != len || b.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: if a.len() != len { a.len() } else { b.len() },
            });
        }
        total += a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>();
    }
    if len == 0 {
        return Err(Error::EmptyInput("mae needs nonempty windows"));
    }
    Ok(total / (len * twin.len()) as f64)
}

/// MAE score of every feature window of `real` against the time-aligned
/// twin frame, over the configured variables. Cumulative channels are
/// compared through their per-minute increments.
pub fn mae_window_scores(twin: &TimeSeriesFrame, real: &TimeSeriesFrame, config: &FeatureConfig) -> Result<Vec<f64>> {
    if twin.start != real.start || twin.len() != real.len() {
        return Err(Error::Format {
            what: "mae input",
            detail: "twin and real frames must cover the same minutes".into(),
        });
    }
    let n_windows = config.window_count(real.len()).ok_or(Error::FrameTooShort {
        len: real.len(),
        window: config.window_length_minutes,
    })?;
    let prepare = |frame: &TimeSeriesFrame, c: Channel| -> Vec<f64> {
        let v = frame.channel(c);
        if c.is_cumulative() {
            std::iter::once(0.0).chain(v.windows(2).map(|p| p[1] - p[0])).collect()
        } else {
            v.to_vec()
        }
    };
    let twin_ch: Vec<Vec<f64>> = config.variables.iter().map(|&c| prepare(twin, c)).collect();
    let real_ch: Vec<Vec<f64>> = config.variables.iter().map(|&c| prepare(real, c)).collect();
    let len = config.window_length_minutes;
    (0..n_windows)
        .map(|w| {
            let s = w * config.window_stride_minutes;
            let t: Vec<&[f64]> = twin_ch.iter().map(|c| &c[s..s + len]).collect();
            let r: Vec<&[f64]> = real_ch.iter().map(|c| &c[s..s + len]).collect();
            mae_score(&t, &r)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaRank {
    Components(usize),
    /// Smallest q whose leading eigenvalues hold this share of the variance.
    VarianceRetained(f64),
}

impl Default for PcaRank {
    fn default() -> Self {
        PcaRank::VarianceRetained(0.95)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `q x n_features`, orthonormal rows.
    #[serde(with = "matrix_rows")]
    pub components: Array2<f64>,
    /// All covariance eigenvalues, descending, floored.
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn q(&self) -> usize {
        self.components.nrows()
    }

    pub fn reconstruct(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mean = ArrayView1::from(&self.mean[..]);
        let centered = &x - &mean;
        let coords = self.components.dot(&centered);
        self.components.t().dot(&coords) + mean
    }

    pub fn score(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                actual: x.len(),
            });
        }
        Ok((&x - &self.reconstruct(x)).mapv(|v| v * v).sum())
    }

    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        x.rows().into_iter().map(|r| self.score(r)).collect()
    }
}

/// Principal components of the training covariance. Each component's
/// largest-magnitude entry is made positive so the result does not depend
/// on the eigensolver's sign choice. `q` is clamped to `1..n_features`.
pub fn fit_pca(normals: ArrayView2<f64>, rank: PcaRank) -> Result<PcaModel> {
    let (n, d) = normals.dim();
    if d < 2 {
        return Err(Error::config("pca needs at least two features"));
    }
    if n <= d {
        return Err(Error::NotEnoughSamples {
            what: "pca samples",
            requested: d + 1,
            available: n,
        });
    }
    let mean = normals.mean_axis(Axis(0)).expect("n > 0");
    let centered = &normals - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(EIGENVALUE_FLOOR)).collect();
    let q = match rank {
        PcaRank::Components(q) => q,
        PcaRank::VarianceRetained(share) => {
            if !(share > 0.0 && share <= 1.0) {
                return Err(Error::config("variance share must lie in (0, 1]"));
            }
            let total: f64 = eigenvalues.iter().sum();
            let mut acc = 0.0;
            let mut q = d;
            for (i, v) in eigenvalues.iter().enumerate() {
                acc += v;
                if acc >= share * total - 1e-12 * total {
                    q = i + 1;
                    break;
                }
            }
            q
        }
    }
    .clamp(1, d - 1);
    let mut components = Array2::zeros((q, d));
    for (r, &i) in order.iter().take(q).enumerate() {
        let v = eig.eigenvectors.column(i);
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        let norm = v.norm();
        for j in 0..d {
            components[[r, j]] = sign * v[j] / norm;
        }
    }
    Ok(PcaModel {
        mean: mean.to_vec(),
        components,
        eigenvalues,
    })
}
