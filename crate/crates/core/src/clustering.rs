//! k-means over normal feature vectors and the distance-based scores built
//! on it.
//!
//! The cluster-center score of `x` is its distance to the nearest center
//! plus `eta / (min_a d(x, x_a) + zeta)` over the labeled anomalies `x_a`.
//! The penalty vanishes when `eta` is 0 or no anomalies are labeled, leaving
//! the unsupervised score. Labeling more anomalies never refits the centers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{average_precision, ScoredSet};

pub const MAX_ITERATIONS: usize = 300;
pub const TOLERANCE: f64 = 1e-6;

#[inline]
fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Index and squared distance of the nearest row of `centers`.
fn nearest(x: ArrayView1<f64>, centers: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.rows().into_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centers: Array2<f64>,
    pub iterations: usize,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia: Vec<f64>,
}

fn kmeans_plus_plus<R: Rng + ?Sized>(data: ArrayView2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = data.nrows();
    let mut centers = Array2::zeros((k, data.ncols()));
    centers.row_mut(0).assign(&data.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = data.rows().into_iter().map(|x| sq_dist(x, centers.row(0))).collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(j).assign(&data.row(pick));
        for (i, x) in data.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, centers.row(j)));
        }
    }
    centers
}

/// k-means++ seeding followed by Lloyd iterations until no center moves by
/// `TOLERANCE` or more, or `MAX_ITERATIONS` is reached. A cluster that ends
/// up empty is moved onto the point farthest from its current center.
pub fn fit_kmeans(data: ArrayView2<f64>, n_clusters: usize, seed: u64) -> Result<KMeansFit> {
    let n = data.nrows();
    if n_clusters == 0 {
        return Err(Error::config("n_clusters must be at least 1"));
    }
    if n_clusters > n {
        return Err(Error::NotEnoughSamples {
            what: "k-means samples",
            requested: n_clusters,
            available: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus(data, n_clusters, &mut rng);
    let mut assignment = vec![0usize; n];
    let mut dist = vec![0.0; n];
    let mut inertia = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        for (i, x) in data.rows().into_iter().enumerate() {
            let (j, d) = nearest(x, &centers);
            assignment[i] = j;
            dist[i] = d;
        }
        inertia.push(dist.iter().sum());

        let mut sums = Array2::<f64>::zeros(centers.raw_dim());
        let mut counts = vec![0usize; n_clusters];
        for (i, x) in data.rows().into_iter().enumerate() {
            let mut row = sums.row_mut(assignment[i]);
            row += &x;
            counts[assignment[i]] += 1;
        }
        let mut updated = centers.clone();
        for j in 0..n_clusters {
            if counts[j] > 0 {
                let mean = &sums.row(j) / counts[j] as f64;
                updated.row_mut(j).assign(&mean);
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]))
                    .expect("n > 0");
                updated.row_mut(j).assign(&data.row(far));
                dist[far] = 0.0;
            }
        }
        let shift = centers
            .rows()
            .into_iter()
            .zip(updated.rows())
            .map(|(a, b)| euclidean(a, b))
            .fold(0.0, f64::max);
        centers = updated;
        if shift < TOLERANCE {
            break;
        }
    }
    Ok(KMeansFit {
        centers,
        iterations,
        inertia,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    #[serde(with = "matrix_rows")]
    pub centers: Array2<f64>,
    pub eta: f64,
    pub zeta: f64,
    #[serde(with = "matrix_rows")]
    pub anomalies: Array2<f64>,
}

impl ClusterModel {
    pub fn new(centers: Array2<f64>, eta: f64, zeta: f64, anomalies: Array2<f64>) -> Result<Self> {
        if centers.nrows() == 0 {
            return Err(Error::NotFitted("cluster model has no centers"));
        }
        if !(zeta > 0.0) || !(eta >= 0.0) {
            return Err(Error::config("need eta >= 0 and zeta > 0"));
        }
        if anomalies.nrows() > 0 && anomalies.ncols() != centers.ncols() {
            return Err(Error::DimensionMismatch {
                expected: centers.ncols(),
                actual: anomalies.ncols(),
            });
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("cluster centers must be finite"));
        }
        Ok(Self {
            centers,
            eta,
            zeta,
            anomalies,
        })
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    /// Replaces the labeled anomaly set; the centers stay as they are.
    pub fn with_anomalies(&self, anomalies: Array2<f64>) -> Result<Self> {
        Self::new(self.centers.clone(), self.eta, self.zeta, anomalies)
    }

    pub fn nearest_center_distance(&self, x: ArrayView1<f64>) -> f64 {
        nearest(x, &self.centers).1.sqrt()
    }

    pub fn penalty(&self, x: ArrayView1<f64>) -> f64 {
        if self.eta == 0.0 || self.anomalies.nrows() == 0 {
            return 0.0;
        }
        let nearest_anomaly = nearest(x, &self.anomalies).1.sqrt();
        self.eta / (nearest_anomaly + self.zeta)
    }

    pub fn score(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(self.nearest_center_distance(x) + self.penalty(x))
    }

    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        x.rows().into_iter().map(|r| self.score(r)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub n_clusters: usize,
    pub validation_ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSelection {
    pub n_clusters: usize,
    pub candidates: Vec<CandidateScore>,
}

/// Fits one model per candidate cluster count and keeps the one with the
/// highest validation AP (the earliest candidate on ties). Candidates larger
/// than the training set are skipped.
pub fn choose_n_clusters(
    normals: ArrayView2<f64>,
    validation: ArrayView2<f64>,
    validation_labels: &[bool],
    candidates: &[usize],
    eta: f64,
    zeta: f64,
    anomalies: ArrayView2<f64>,
    seed: u64,
) -> Result<(ClusterModel, ClusterSelection)> {
    if candidates.is_empty() {
        return Err(Error::config("no cluster-count candidates"));
    }
    if candidates.len() == 1 {
        let fit = fit_kmeans(normals, candidates[0], seed)?;
        let model = ClusterModel::new(fit.centers, eta, zeta, anomalies.to_owned())?;
        let ap = ScoredSet::new(model.scores(validation)?, validation_labels.to_vec())
            .and_then(|s| average_precision(&s))
            .unwrap_or(f64::NAN);
        let selection = ClusterSelection {
            n_clusters: candidates[0],
            candidates: vec![CandidateScore {
                n_clusters: candidates[0],
                validation_ap: ap,
            }],
        };
        return Ok((model, selection));
    }
    let mut best: Option<(f64, ClusterModel, usize)> = None;
    let mut scored = Vec::new();
    for &k in candidates {
        if k > normals.nrows() {
            log::warn!("skipping {k} clusters: only {} training samples", normals.nrows());
            continue;
        }
        let fit = fit_kmeans(normals, k, seed)?;
        let model = ClusterModel::new(fit.centers, eta, zeta, anomalies.to_owned())?;
        let set = ScoredSet::new(model.scores(validation)?, validation_labels.to_vec())?;
        let ap = average_precision(&set)?;
        scored.push(CandidateScore {
            n_clusters: k,
            validation_ap: ap,
        });
        if best.as_ref().is_none_or(|(b, _, _)| ap > *b) {
            best = Some((ap, model, k));
        }
    }
    let (_, model, k) = best.ok_or(Error::NotEnoughSamples {
        what: "k-means samples",
        requested: *candidates.iter().min().expect("nonempty"),
        available: normals.nrows(),
    })?;
    Ok((
        model,
        ClusterSelection {
            n_clusters: k,
            candidates: scored,
        },
    ))
}

/// Mean distance to the `k` nearest training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    #[serde(with = "matrix_rows")]
    pub train: Array2<f64>,
    pub k: usize,
}

impl KnnModel {
    pub fn new(train: Array2<f64>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if k > train.nrows() {
            return Err(Error::NotEnoughSamples {
                what: "knn training samples",
                requested: k,
                available: train.nrows(),
            });
        }
        Ok(Self { train, k })
    }

    pub fn score(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.train.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.train.ncols(),
                actual: x.len(),
            });
        }
        let mut d: Vec<f64> = self.train.rows().into_iter().map(|t| sq_dist(x, t)).collect();
        let k = self.k;
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, f64::total_cmp);
        }
        let mut nearest: Vec<f64> = d[..k].iter().map(|v| v.sqrt()).collect();
        nearest.sort_by(f64::total_cmp);
        Ok(nearest.iter().sum::<f64>() / k as f64)
    }

    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        x.rows().into_iter().map(|r| self.score(r)).collect()
    }
}

pub fn knn_score(train: ArrayView2<f64>, x: ArrayView1<f64>, k: usize) -> Result<f64> {
    KnnModel::new(train.to_owned(), k)?.score(x)
}

/// Serializes a matrix as a list of rows.
pub(crate) mod matrix_rows {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
        (m.ncols(), rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let (cols, rows): (usize, Vec<Vec<f64>>) = Deserialize::deserialize(d)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Array2::from_shape_vec((n, cols), rows.concat()).map_err(serde::de::Error::custom)
    }
}

/// Mean of each column.
pub fn column_means(x: ArrayView2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()))
}
