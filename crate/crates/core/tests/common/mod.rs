//! Slow, obviously-correct reference implementations used as test oracles.
#![allow(dead_code, clippy::needless_range_loop)]

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use twinguard::autoencoders::SiameseModel;
use twinguard::clustering::ClusterModel;
use twinguard::nn::{Activation, DenseNet};

/// Mean over positives of the precision among all samples scoring at
/// least as high as that positive.
pub fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count();
    let mut total = 0.0;
    for i in 0..scores.len() {
        if !labels[i] {
            continue;
        }
        let mut above = 0usize;
        let mut hits = 0usize;
        for j in 0..scores.len() {
            if scores[j] >= scores[i] {
                above += 1;
                if labels[j] {
                    hits += 1;
                }
            }
        }
        total += hits as f64 / above as f64;
    }
    total / positives as f64
}

/// Fraction of (positive, negative) pairs ranked correctly, ties half.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// F2 with "flagged iff score > threshold".
pub fn brute_f2(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (s, &l) in scores.iter().zip(labels) {
        match (*s > threshold, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    let p = tp / (tp + fp);
    let r = tp / (tp + fn_);
    5.0 * p * r / (4.0 * p + r)
}

/// Random scored set of size `2..=max_n` with at least one positive and
/// one negative. Scores are drawn from a few levels so ties are common.
pub fn random_scored_set<R: Rng>(rng: &mut R, max_n: usize) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=max_n);
    let levels = rng.random_range(1..=n.min(50));
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.37 - 1.0).collect();
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    labels[0] = true;
    labels[1] = false;
    (scores, labels)
}

fn euclid(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s.sqrt()
}

/// Nearest-center distance plus the anomaly-proximity penalty, by loops.
pub fn brute_cc_score(model: &ClusterModel, x: ArrayView1<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for c in model.centers.rows() {
        best = best.min(euclid(c, x));
    }
    if model.eta == 0.0 || model.anomalies.nrows() == 0 {
        return best;
    }
    let mut near = f64::INFINITY;
    for a in model.anomalies.rows() {
        near = near.min(euclid(a, x));
    }
    best + model.eta / (near + model.zeta)
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Tanh => z.tanh(),
        Activation::Relu => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        Activation::Linear => z,
    }
}

/// Forward pass with explicit loops.
pub fn brute_forward(net: &DenseNet, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in &net.layers {
        let mut out = vec![0.0; l.fan_out()];
        for j in 0..l.fan_out() {
            let mut z = l.bias[j];
            for i in 0..l.fan_in() {
                z += h[i] * l.weights[[i, j]];
            }
            out[j] = act(l.activation, z);
        }
        h = out;
    }
    h
}

/// Reconstruction error plus mean embedding distance to the references.
pub fn brute_sae_score(model: &SiameseModel, x: ArrayView1<f64>) -> f64 {
    let xs = x.to_vec();
    let e = brute_forward(&model.nets.encoder, &xs);
    let r = brute_forward(&model.nets.decoder, &e);
    let mut rec = 0.0;
    for k in 0..xs.len() {
        rec += (r[k] - xs[k]) * (r[k] - xs[k]);
    }
    let mut dist = 0.0;
    for q in model.references.rows() {
        let mut s = 0.0;
        for k in 0..e.len() {
            s += (e[k] - q[k]) * (e[k] - q[k]);
        }
        dist += s.sqrt();
    }
    rec + dist / model.references.nrows() as f64
}

pub fn random_matrix<R: Rng>(rng: &mut R, n: usize, d: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-scale..scale))
}

/// Pre-activation values of every layer for one input, by loops.
pub fn pre_activations(net: &DenseNet, x: &[f64]) -> Vec<(Activation, Vec<f64>)> {
    let mut h = x.to_vec();
    let mut out = Vec::new();
    for l in &net.layers {
        let mut z = vec![0.0; l.fan_out()];
        for j in 0..l.fan_out() {
            z[j] = l.bias[j];
            for i in 0..l.fan_in() {
                z[j] += h[i] * l.weights[[i, j]];
            }
        }
        h = z.iter().map(|&v| act(l.activation, v)).collect();
        out.push((l.activation, z));
    }
    out
}
