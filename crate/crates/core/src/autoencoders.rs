//! Feedforward and Siamese autoencoders over standardized window features.
//!
//! Pairs always take their left element from the normal (twin) set. With
//! `B` pairs in a batch, `d` the Euclidean distance between the two
//! embeddings, `m` the margin and `y = 1` for an anomalous right element:
//!
//! ```text
//! rec  = 1/B    * sum ||dec(enc(left)) - left||^2
//! cl   = 1/(2B) * sum (1 - y) d^2 + y max(0, m - d)^2
//! pcl  = 1/(2B) * sum y max(0, m - d)
//! ```
//!
//! The Siamese model minimizes `rec + cl + pcl`; the plain autoencoder only
//! `rec`. The Siamese anomaly score adds the mean embedding distance to `N'`
//! stored reference embeddings to the reconstruction error.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_blob, write_blob};
use crate::nn::{train_loop, Activation, DenseNet, EpochRecord, LayerSpec, TrainConfig, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoencoderKind {
    /// Reconstruction plus both contrastive terms.
    Siamese,
    /// Reconstruction loss only, no labeled anomalies.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub kind: AutoencoderKind,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub activation: Activation,
    pub margin: f64,
    pub n_references: usize,
    pub anomaly_pair_fraction: f64,
    pub train: TrainConfig,
}

impl AutoencoderConfig {
    pub fn sae() -> Self {
        Self {
            kind: AutoencoderKind::Siamese,
            hidden: vec![128, 64, 32, 16],
            embedding_dim: 2,
            activation: Activation::Relu,
            margin: 1.0,
            n_references: 256,
            anomaly_pair_fraction: 0.5,
            train: TrainConfig {
                batch_size: 128,
                learning_rate: 1e-3,
                ..TrainConfig::default()
            },
        }
    }

    pub fn ffae() -> Self {
        Self {
            kind: AutoencoderKind::Plain,
            hidden: vec![64, 32, 16],
            embedding_dim: 3,
            activation: Activation::Tanh,
            margin: 1.0,
            n_references: 256,
            anomaly_pair_fraction: 0.0,
            train: TrainConfig {
                batch_size: 64,
                learning_rate: 1e-4,
                ..TrainConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.margin > 0.0) {
            return Err(Error::config("margin must be positive"));
        }
        if self.embedding_dim == 0 || self.n_references == 0 {
            return Err(Error::config("embedding_dim and n_references must be positive"));
        }
        if !(0.0..=1.0).contains(&self.anomaly_pair_fraction) {
            return Err(Error::config("anomaly_pair_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    fn networks<R: Rng + ?Sized>(&self, input_dim: usize, rng: &mut R) -> Result<(DenseNet, DenseNet)> {
        let mut widths = vec![input_dim];
        widths.extend(&self.hidden);
        widths.push(self.embedding_dim);
        let mut acts = vec![self.activation; self.hidden.len()];
        acts.push(Activation::Linear);
        let encoder = DenseNet::new(&widths, &acts, rng)?;
        widths.reverse();
        let decoder = DenseNet::new(&widths, &acts, rng)?;
        Ok((encoder, decoder))
    }
}

/// Left elements are normal samples; `anomalous[i]` tells whether `right[i]`
/// came from the labeled anomalies.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub left: Array2<f64>,
    pub right: Array2<f64>,
    pub anomalous: Vec<bool>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.anomalous.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anomalous.is_empty()
    }
}

/// Indices into the normal set and, per pair, the right element's source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairIndex {
    Normal(usize),
    Anomaly(usize),
}

/// Samples `n_pairs` (left, right) index pairs. The right element comes
/// from the anomalies with probability `anomaly_pair_fraction` (never when
/// there are none).
pub fn sample_pair_indices<R: Rng + ?Sized>(
    n_normals: usize,
    n_anomalies: usize,
    n_pairs: usize,
    anomaly_pair_fraction: f64,
    rng: &mut R,
) -> Result<Vec<(usize, PairIndex)>> {
    if n_normals == 0 {
        return Err(Error::EmptyInput("pairs need at least one normal sample"));
    }
    Ok((0..n_pairs)
        .map(|_| {
            let left = rng.random_range(0..n_normals);
            let right = if n_anomalies > 0 && rng.random::<f64>() < anomaly_pair_fraction {
                PairIndex::Anomaly(rng.random_range(0..n_anomalies))
            } else {
                PairIndex::Normal(rng.random_range(0..n_normals))
            };
            (left, right)
        })
        .collect())
}

fn materialize(normals: ArrayView2<f64>, anomalies: ArrayView2<f64>, idx: &[(usize, PairIndex)]) -> PairBatch {
    let d = normals.ncols();
    let mut left = Array2::zeros((idx.len(), d));
    let mut right = Array2::zeros((idx.len(), d));
    let mut anomalous = Vec::with_capacity(idx.len());
    for (i, &(l, r)) in idx.iter().enumerate() {
        left.row_mut(i).assign(&normals.row(l));
        match r {
            PairIndex::Normal(j) => {
                right.row_mut(i).assign(&normals.row(j));
                anomalous.push(false);
            }
            PairIndex::Anomaly(j) => {
                right.row_mut(i).assign(&anomalies.row(j));
                anomalous.push(true);
            }
        }
    }
    PairBatch { left, right, anomalous }
}

/// A reproducible batch of `n_pairs` pairs.
pub fn make_pairs(
    normals: ArrayView2<f64>,
    anomalies: ArrayView2<f64>,
    n_pairs: usize,
    anomaly_pair_fraction: f64,
    seed: u64,
) -> Result<PairBatch> {
    if anomalies.nrows() > 0 && anomalies.ncols() != normals.ncols() {
        return Err(Error::DimensionMismatch {
            expected: normals.ncols(),
            actual: anomalies.ncols(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = sample_pair_indices(normals.nrows(), anomalies.nrows(), n_pairs, anomaly_pair_fraction, &mut rng)?;
    Ok(materialize(normals, anomalies, &idx))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub cl: f64,
    pub pcl: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.rec + self.cl + self.pcl
    }
}

/// Which loss terms contribute to a gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub rec: bool,
    pub cl: bool,
    pub pcl: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms {
        rec: true,
        cl: true,
        pcl: true,
    };
    pub const REC: LossTerms = LossTerms {
        rec: true,
        cl: false,
        pcl: false,
    };
    pub const CL: LossTerms = LossTerms {
        rec: false,
        cl: true,
        pcl: false,
    };
    pub const PCL: LossTerms = LossTerms {
        rec: false,
        cl: false,
        pcl: true,
    };

    fn contrastive(&self) -> bool {
        self.cl || self.pcl
    }
}

/// Encoder and decoder with shared weights across both pair elements.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderNets {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub margin: f64,
    pub terms: LossTerms,
}

fn row_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl AutoencoderNets {
    pub fn losses(&self, batch: &PairBatch) -> Result<LossBreakdown> {
        let el = self.encoder.predict(batch.left.view())?;
        let recon = self.decoder.predict(el.view())?;
        let b = batch.len() as f64;
        let rec = (&recon - &batch.left).mapv(|v| v * v).sum() / b;
        let mut out = LossBreakdown {
            rec,
            ..LossBreakdown::default()
        };
        if self.terms.contrastive() {
            let er = self.encoder.predict(batch.right.view())?;
            for (i, &y) in batch.anomalous.iter().enumerate() {
                let d = row_distance(el.row(i), er.row(i));
                let hinge = (self.margin - d).max(0.0);
                if y {
                    out.cl += hinge * hinge;
                    out.pcl += hinge;
                } else {
                    out.cl += d * d;
                }
            }
            out.cl /= 2.0 * b;
            out.pcl /= 2.0 * b;
        }
        Ok(LossBreakdown {
            rec: if self.terms.rec { out.rec } else { 0.0 },
            cl: if self.terms.cl { out.cl } else { 0.0 },
            pcl: if self.terms.pcl { out.pcl } else { 0.0 },
        })
    }

    /// Loss terms and the flat gradient (encoder parameters, then decoder)
    /// of the sum of the selected terms.
    pub fn gradient<R: Rng + ?Sized>(
        &self,
        batch: &PairBatch,
        terms: LossTerms,
        dropout: f64,
        rng: &mut R,
    ) -> Result<(LossBreakdown, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty pair batch"));
        }
        let b = batch.len() as f64;
        let left = self.encoder.forward(batch.left.view(), dropout, rng)?;
        let el = left.output();
        let mut losses = LossBreakdown::default();
        let mut d_el = Array2::<f64>::zeros(el.raw_dim());
        let mut dec_grads = None;

        if terms.rec {
            let dec = self.decoder.forward(el.view(), dropout, rng)?;
            let resid = dec.output() - &batch.left;
            losses.rec = resid.mapv(|v| v * v).sum() / b;
            let (g, d_in) = self.decoder.backward(&dec, &(resid * (2.0 / b)));
            d_el += &d_in;
            dec_grads = Some(g);
        }

        let mut right_pass = None;
        if terms.contrastive() {
            let right = self.encoder.forward(batch.right.view(), dropout, rng)?;
            let er = right.output();
            let mut d_er = Array2::<f64>::zeros(er.raw_dim());
            for (i, &y) in batch.anomalous.iter().enumerate() {
                let diff = &el.row(i) - &er.row(i);
                let d = diff.dot(&diff).sqrt();
                let hinge = (self.margin - d).max(0.0);
                // coefficient c such that d loss / d el = c * diff
                let mut c = 0.0;
                if y {
                    if terms.cl {
                        losses.cl += hinge * hinge;
                        if hinge > 0.0 && d > 0.0 {
                            c -= hinge / (b * d);
                        }
                    }
                    if terms.pcl {
                        losses.pcl += hinge;
                        if hinge > 0.0 && d > 0.0 {
                            c -= 1.0 / (2.0 * b * d);
                        }
                    }
                } else if terms.cl {
                    losses.cl += d * d;
                    c += 1.0 / b;
                }
                if c != 0.0 {
                    let g = diff * c;
                    let mut row = d_el.row_mut(i);
                    row += &g;
                    let mut row = d_er.row_mut(i);
                    row -= &g;
                }
            }
            losses.cl /= 2.0 * b;
            losses.pcl /= 2.0 * b;
            right_pass = Some((right, d_er));
        }

        let (mut enc_grads, _) = self.encoder.backward(&left, &d_el);
        if let Some((right, d_er)) = right_pass {
            let (g, _) = self.encoder.backward(&right, &d_er);
            for ((w, bias), (gw, gb)) in enc_grads.layers.iter_mut().zip(g.layers) {
                *w += &gw;
                *bias += &gb;
            }
        }
        let mut flat = Vec::with_capacity(self.encoder.n_params() + self.decoder.n_params());
        enc_grads.flatten_into(&mut flat);
        match dec_grads {
            Some(g) => g.flatten_into(&mut flat),
            None => flat.resize(flat.len() + self.decoder.n_params(), 0.0),
        }
        Ok((losses, flat))
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.encoder.n_params() + self.decoder.n_params());
        self.encoder.flatten_params_into(&mut out);
        self.decoder.flatten_params_into(&mut out);
        out
    }
}

impl Trainable for AutoencoderNets {
    type Batch = PairBatch;

    fn n_params(&self) -> usize {
        self.encoder.n_params() + self.decoder.n_params()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.encoder.param_slices_mut();
        s.extend(self.decoder.param_slices_mut());
        s
    }

    fn loss_and_gradient(&self, batch: &PairBatch, dropout: f64, rng: &mut ChaCha8Rng) -> Result<(f64, Vec<f64>)> {
        let (l, g) = self.gradient(batch, self.terms, dropout, rng)?;
        Ok((l.total(), g))
    }

    fn evaluation_loss(&self, batch: &PairBatch) -> Result<f64> {
        Ok(self.losses(batch)?.total())
    }
}

/// A trained autoencoder plus the reference embeddings used for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModel {
    pub config: AutoencoderConfig,
    pub nets: AutoencoderNets,
    /// `N' x embedding_dim` encoder outputs of twin training samples.
    pub references: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedAutoencoder {
    pub model: SiameseModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Trains on standardized features. `validation` holds held-out normal
/// samples; the validation pairs are drawn once and reused every epoch.
/// For [`AutoencoderKind::Plain`] the anomalies are ignored.
pub fn train_autoencoder(
    normals: ArrayView2<f64>,
    validation: ArrayView2<f64>,
    anomalies: ArrayView2<f64>,
    config: &AutoencoderConfig,
) -> Result<TrainedAutoencoder> {
    config.validate()?;
    if normals.nrows() == 0 || validation.nrows() == 0 {
        return Err(Error::EmptyInput("autoencoder training needs normal and validation samples"));
    }
    let dim = normals.ncols();
    for other in [validation.ncols(), anomalies.ncols()] {
        if other != dim && !(other == 0 && anomalies.nrows() == 0) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: other,
            });
        }
    }
    let (anomalies, fraction, terms) = match config.kind {
        AutoencoderKind::Siamese => (anomalies, config.anomaly_pair_fraction, LossTerms::ALL),
        AutoencoderKind::Plain => (anomalies.slice_move(ndarray::s![0..0, ..]), 0.0, LossTerms::REC),
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.train.seed ^ 0x5eed_0001);
    let (encoder, decoder) = config.networks(dim, &mut init_rng)?;
    let nets = AutoencoderNets {
        encoder,
        decoder,
        margin: config.margin,
        terms,
    };
    let val_batch = make_pairs(validation, anomalies, validation.nrows(), fraction, config.train.seed ^ 0x5eed_0002)?;
    let n_pairs = normals.nrows();
    let batch_size = config.train.batch_size;
    let outcome = train_loop(
        nets,
        |_, rng| {
            let idx = sample_pair_indices(normals.nrows(), anomalies.nrows(), n_pairs, fraction, rng)
                .expect("normals checked nonempty");
            idx.chunks(batch_size)
                .map(|chunk| materialize(normals, anomalies, chunk))
                .collect()
        },
        &val_batch,
        &config.train,
    )?;
    let nets = outcome.model;
    let mut ref_rng = ChaCha8Rng::seed_from_u64(config.train.seed ^ 0x5eed_0003);
    let n_ref = config.n_references.min(normals.nrows());
    let picks = rand::seq::index::sample(&mut ref_rng, normals.nrows(), n_ref).into_vec();
    let references = nets.encoder.predict(normals.select(Axis(0), &picks).view())?;
    Ok(TrainedAutoencoder {
        model: SiameseModel {
            config: config.clone(),
            nets,
            references,
        },
        history: outcome.history,
        best_epoch: outcome.best_epoch,
    })
}

impl SiameseModel {
    pub fn input_dim(&self) -> usize {
        self.nets.encoder.input_width()
    }

    pub fn reconstruction_errors(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let emb = self.nets.encoder.predict(x)?;
        let recon = self.nets.decoder.predict(emb.view())?;
        Ok((&recon - &x).mapv(|v| v * v).sum_axis(Axis(1)).to_vec())
    }

    /// Mean Euclidean distance from each embedding to the references.
    pub fn embedding_distances(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if self.references.nrows() == 0 {
            return Err(Error::NotFitted("autoencoder has no reference embeddings"));
        }
        let emb = self.nets.encoder.predict(x)?;
        let n_ref = self.references.nrows() as f64;
        Ok(emb
            .rows()
            .into_iter()
            .map(|e| {
                self.references
                    .rows()
                    .into_iter()
                    .map(|r| row_distance(e, r))
                    .sum::<f64>()
                    / n_ref
            })
            .collect())
    }

    /// Siamese models score reconstruction error plus mean reference
    /// distance; plain autoencoders score reconstruction error alone.
    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let mut s = self.reconstruction_errors(x)?;
        if self.config.kind == AutoencoderKind::Siamese {
            for (v, e) in s.iter_mut().zip(self.embedding_distances(x)?) {
                *v += e;
            }
        }
        Ok(s)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = AutoencoderManifest {
            format: MANIFEST_FORMAT.into(),
            config: self.config.clone(),
            encoder: self.nets.encoder.spec(),
            decoder: self.nets.decoder.spec(),
            n_references: self.references.nrows(),
            embedding_dim: self.references.ncols(),
            blob: "params.bin".into(),
            layout: "encoder layers, decoder layers (each: weights fan_in x fan_out row-major, then bias), \
                     then references n_references x embedding_dim row-major; f64 little-endian"
                .into(),
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        let mut blob = self.nets.flatten_params();
        blob.extend(self.references.iter());
        write_blob(&dir.join("params.bin"), &blob)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let m: AutoencoderManifest = serde_json::from_reader(BufReader::new(file))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Format {
                what: "autoencoder manifest",
                detail: format!("unknown format {:?}", m.format),
            });
        }
        let blob = read_blob(&dir.join(&m.blob))?;
        let (encoder, used) = DenseNet::from_spec(&m.encoder, &blob)?;
        let (decoder, used2) = DenseNet::from_spec(&m.decoder, &blob[used..])?;
        let rest = &blob[used + used2..];
        if rest.len() != m.n_references * m.embedding_dim {
            return Err(Error::Format {
                what: "autoencoder parameter blob",
                detail: format!("{} trailing values, expected {}", rest.len(), m.n_references * m.embedding_dim),
            });
        }
        let references = Array2::from_shape_vec((m.n_references, m.embedding_dim), rest.to_vec()).expect("checked");
        let terms = match m.config.kind {
            AutoencoderKind::Siamese => LossTerms::ALL,
            AutoencoderKind::Plain => LossTerms::REC,
        };
        Ok(Self {
            nets: AutoencoderNets {
                encoder,
                decoder,
                margin: m.config.margin,
                terms,
            },
            config: m.config,
            references,
        })
    }
}

const MANIFEST_FORMAT: &str = "twinguard-autoencoder-1";

#[derive(Debug, Serialize, Deserialize)]
struct AutoencoderManifest {
    format: String,
    config: AutoencoderConfig,
    encoder: Vec<LayerSpec>,
    decoder: Vec<LayerSpec>,
    n_references: usize,
    embedding_dim: usize,
    blob: String,
    layout: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_nets(seed: u64, act: Activation) -> AutoencoderNets {
        let cfg = AutoencoderConfig {
            hidden: vec![5, 4],
            embedding_dim: 2,
            activation: act,
            ..AutoencoderConfig::sae()
        };
        let (encoder, decoder) = cfg.networks(3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        AutoencoderNets {
            encoder,
            decoder,
            margin: 1.0,
            terms: LossTerms::ALL,
        }
    }

    fn grid(n: usize, d: usize, scale: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |(i, j)| ((i * 7 + j * 3) % 11) as f64 * scale - 1.0)
    }

    #[test]
    fn pairs_respect_fraction() {
        let normals = grid(50, 3, 0.1);
        let anomalies = grid(10, 3, 0.5);
        let none = make_pairs(normals.view(), anomalies.view(), 1000, 0.0, 1).unwrap();
        assert!(none.anomalous.iter().all(|&y| !y));
        let half = make_pairs(normals.view(), anomalies.view(), 10_000, 0.5, 2).unwrap();
        let k = half.anomalous.iter().filter(|&&y| y).count() as f64;
        assert!((k - 5000.0).abs() < 150.0, "anomaly pairs {k}");
        assert_eq!(half, make_pairs(normals.view(), anomalies.view(), 10_000, 0.5, 2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let idx = sample_pair_indices(50, 10, 10_000, 0.5, &mut rng).unwrap();
        let mut counts = [0usize; 10];
        for (_, r) in idx {
            if let PairIndex::Anomaly(j) = r {
                counts[j] += 1;
            }
        }
        // each anomaly expected 500 times, sd about 21
        assert!(counts.iter().all(|&c| (c as f64 - 500.0).abs() < 100.0), "{counts:?}");
        assert!(make_pairs(Array2::zeros((0, 3)).view(), anomalies.view(), 5, 0.5, 0).is_err());
    }

    #[test]
    fn loss_examples() {
        // identity-like nets are awkward to build, so check the formulas on
        // hand-set embeddings through a linear single-layer encoder
        let encoder = DenseNet::from_layers(vec![crate::nn::Layer {
            weights: Array2::eye(2),
            bias: ndarray::Array1::zeros(2),
            activation: Activation::Linear,
        }])
        .unwrap();
        let decoder = DenseNet::from_layers(vec![crate::nn::Layer {
            weights: Array2::zeros((2, 2)),
            bias: ndarray::Array1::zeros(2),
            activation: Activation::Linear,
        }])
        .unwrap();
        let nets = AutoencoderNets {
            encoder,
            decoder,
            margin: 1.0,
            terms: LossTerms::ALL,
        };
        // x_DT = (1, 0) reconstructed as (0, 0): rec = 1
        let batch = PairBatch {
            left: array![[1.0, 0.0]],
            right: array![[1.0, 0.0]],
            anomalous: vec![true],
        };
        let l = nets.losses(&batch).unwrap();
        assert_eq!(l.rec, 1.0);
        assert_eq!(l.cl, 0.5);
        assert_eq!(l.pcl, 0.5);
        let batch = PairBatch {
            left: array![[0.0, 0.0]],
            right: array![[0.25, 0.0]],
            anomalous: vec![true],
        };
        assert_eq!(nets.losses(&batch).unwrap().pcl, 0.375);
        let far = PairBatch {
            left: array![[0.0, 0.0]],
            right: array![[3.0, 0.0]],
            anomalous: vec![true],
        };
        let l = nets.losses(&far).unwrap();
        assert_eq!((l.cl, l.pcl), (0.0, 0.0));
        let same = PairBatch {
            left: array![[0.3, 0.2]],
            right: array![[0.3, 0.2]],
            anomalous: vec![false],
        };
        assert_eq!(nets.losses(&same).unwrap().cl, 0.0);
        // rec ignores the right element
        let mut moved = same.clone();
        moved.right = array![[9.0, -4.0]];
        assert_eq!(nets.losses(&moved).unwrap().rec, nets.losses(&same).unwrap().rec);
    }

    /// Central differences of the selected loss terms.
    fn numeric_gradient(nets: &AutoencoderNets, batch: &PairBatch, terms: LossTerms) -> Vec<f64> {
        let h = 1e-6;
        let probe = AutoencoderNets {
            terms,
            ..nets.clone()
        };
        let n = nets.encoder.n_params() + nets.decoder.n_params();
        (0..n)
            .map(|k| {
                let eval = |delta: f64| {
                    let mut p = probe.clone();
                    let mut slices = p.param_slices_mut();
                    let mut idx = k;
                    for s in slices.iter_mut() {
                        if idx < s.len() {
                            s[idx] += delta;
                            break;
                        }
                        idx -= s.len();
                    }
                    p.losses(batch).unwrap().total()
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (seed, act) in [(1, Activation::Tanh), (2, Activation::Sigmoid), (3, Activation::Tanh)] {
            let nets = small_nets(seed, act);
            let batch = PairBatch {
                left: grid(6, 3, 0.2),
                right: grid(6, 3, 0.15) * 0.3,
                anomalous: vec![true, false, true, false, true, true],
            };
            for terms in [LossTerms::REC, LossTerms::CL, LossTerms::PCL, LossTerms::ALL] {
                let (_, analytic) = nets.gradient(&batch, terms, 0.0, &mut rng).unwrap();
                let numeric = numeric_gradient(&nets, &batch, terms);
                for (a, n) in analytic.iter().zip(&numeric) {
                    let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                    assert!(rel < 1e-4, "{terms:?}: analytic {a} numeric {n}");
                }
            }
        }
    }

    #[test]
    fn plain_mode_has_no_contrastive_terms() {
        let mut nets = small_nets(4, Activation::Tanh);
        nets.terms = LossTerms::REC;
        let batch = PairBatch {
            left: grid(4, 3, 0.2),
            right: grid(4, 3, 0.3),
            anomalous: vec![true; 4],
        };
        let l = nets.losses(&batch).unwrap();
        assert_eq!((l.cl, l.pcl), (0.0, 0.0));
        assert!(l.rec > 0.0);
    }

    #[test]
    fn score_example_with_one_reference() {
        // E(x) = (3, 4), reference at the origin, perfect reconstruction
        let encoder = DenseNet::from_layers(vec![crate::nn::Layer {
            weights: Array2::eye(2),
            bias: ndarray::Array1::zeros(2),
            activation: Activation::Linear,
        }])
        .unwrap();
        let model = SiameseModel {
            config: AutoencoderConfig::sae(),
            nets: AutoencoderNets {
                decoder: encoder.clone(),
                encoder,
                margin: 1.0,
                terms: LossTerms::ALL,
            },
            references: Array2::zeros((1, 2)),
        };
        assert_eq!(model.scores(array![[3.0, 4.0]].view()).unwrap(), vec![5.0]);
        let at_ref = SiameseModel {
            references: array![[3.0, 4.0], [3.0, 4.0]],
            ..model.clone()
        };
        assert_eq!(at_ref.scores(array![[3.0, 4.0]].view()).unwrap(), vec![0.0]);
        let plain = SiameseModel {
            config: AutoencoderConfig::ffae(),
            ..model
        };
        assert_eq!(plain.scores(array![[3.0, 4.0]].view()).unwrap(), vec![0.0]);
    }

    #[test]
    fn toy_plain_autoencoder_converges() {
        // points on a 2-D plane inside R^4 are exactly representable
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = Array2::from_shape_fn((400, 2), |_| rng.random_range(-1.0..1.0));
        let basis = array![[1.0, 0.5, -0.5, 0.0], [0.0, 0.5, 0.5, 1.0]];
        let x = data.dot(&basis);
        let config = AutoencoderConfig {
            kind: AutoencoderKind::Plain,
            hidden: vec![],
            embedding_dim: 2,
            activation: Activation::Linear,
            n_references: 8,
            train: TrainConfig {
                batch_size: 32,
                learning_rate: 1e-2,
                max_epochs: 200,
                early_stopping_patience: 20,
                seed: 1,
                ..TrainConfig::default()
            },
            ..AutoencoderConfig::ffae()
        };
        let out = train_autoencoder(x.view(), x.slice(ndarray::s![..100, ..]), Array2::zeros((0, 4)).view(), &config).unwrap();
        let mse = out.model.reconstruction_errors(x.view()).unwrap().iter().sum::<f64>() / (400.0 * 4.0);
        assert!(mse < 1e-3, "mse {mse}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let normals = grid(40, 3, 0.1);
        let anomalies = grid(5, 3, 0.6) + 2.0;
        let config = AutoencoderConfig {
            hidden: vec![6, 4],
            n_references: 10,
            train: TrainConfig {
                max_epochs: 3,
                batch_size: 8,
                seed: 4,
                ..TrainConfig::default()
            },
            ..AutoencoderConfig::sae()
        };
        let trained = train_autoencoder(normals.view(), normals.view(), anomalies.view(), &config).unwrap();
        let again = train_autoencoder(normals.view(), normals.view(), anomalies.view(), &config).unwrap();
        assert_eq!(trained.model, again.model);
        let dir = tempfile::tempdir().unwrap();
        trained.model.save(dir.path()).unwrap();
        let back = SiameseModel::load(dir.path()).unwrap();
        assert_eq!(back, trained.model);
        assert_eq!(back.scores(anomalies.view()).unwrap(), trained.model.scores(anomalies.view()).unwrap());
    }
}
