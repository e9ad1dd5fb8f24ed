use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{Label, LabeledPair};
use super::{pair_features, Method, RankError, RankedEntry, RankedList, VariantStats};

const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softsign,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Softsign => x / (1.0 + x.abs()),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softsign => {
                let d = 1.0 + x.abs();
                1.0 / (d * d)
            }
        }
    }
}

/// Fully connected pairwise judge. Layer `l` maps `dims[l]` inputs to
/// `dims[l + 1]` outputs; hidden layers use `activations`, the output layer
/// a softmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankerModel {
    pub version: u32,
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    /// Row-major `dims[l + 1] x dims[l]`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub theta: f64,
}

impl RankerModel {
    pub const DIMS: [usize; 6] = [8, 64, 32, 16, 8, 2];
    pub const ACTIVATIONS: [Activation; 4] =
        [Activation::Relu, Activation::Relu, Activation::Softsign, Activation::Relu];

    /// Uniform weights in `±sqrt(6 / fan_in)`, zero biases.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Self::DIMS.to_vec();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let r = (6.0 / dims[l] as f64).sqrt();
            weights.push((0..dims[l] * dims[l + 1]).map(|_| rng.gen_range(-r..r)).collect());
            biases.push(vec![0.0; dims[l + 1]]);
        }
        RankerModel { version: MODEL_VERSION, dims, activations: Self::ACTIVATIONS.to_vec(), weights, biases, theta: 0.6 }
    }

    /// All weights and biases zero.
    pub fn zeros() -> Self {
        let mut m = Self::new(0);
        m.weights.iter_mut().flatten().for_each(|w| *w = 0.0);
        m
    }

    pub fn validate(&self) -> Result<(), RankError> {
        let bad = |m: &str| Err(RankError::Model(m.to_string()));
        if self.version != MODEL_VERSION {
            return bad("unsupported model version");
        }
        if !(self.theta > 0.5 && self.theta <= 1.0) {
            return bad("theta must lie in (0.5, 1]");
        }
        let layers = self.dims.len().saturating_sub(1);
        if layers == 0
            || self.dims[0] != 8
            || self.dims[layers] != 2
            || self.weights.len() != layers
            || self.biases.len() != layers
            || self.activations.len() + 1 != layers
        {
            return bad("inconsistent layer structure");
        }
        for l in 0..layers {
            if self.weights[l].len() != self.dims[l] * self.dims[l + 1] || self.biases[l].len() != self.dims[l + 1] {
                return bad("inconsistent layer sizes");
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RankError> {
        let m: RankerModel = serde_json::from_str(text).map_err(|e| RankError::Model(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    fn layers(&self) -> usize {
        self.dims.len() - 1
    }
}

/// Pre-activations and outputs of every layer for one input.
struct Pass {
    /// `outs[0]` is the input; `outs[l + 1]` the output of layer `l`.
    outs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn run(model: &RankerModel, x: &[f64]) -> Result<Pass, RankError> {
    let mut outs = vec![x.to_vec()];
    let mut pre = Vec::new();
    for l in 0..model.layers() {
        let z = dense(&model.weights[l], &model.biases[l], &outs[l]);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(RankError::NonFinite(l));
        }
        let a = match model.activations.get(l) {
            Some(act) => z.iter().map(|&v| act.apply(v)).collect(),
            None => softmax(&z),
        };
        pre.push(z);
        outs.push(a);
    }
    Ok(Pass { outs, pre })
}

/// Softmax output `(p1, p2)` for a feature vector.
pub fn forward(model: &RankerModel, features: &[f64; 8]) -> Result<[f64; 2], RankError> {
    let p = run(model, features)?;
    let o = p.outs.last().expect("output layer");
    Ok([o[0], o[1]])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Judgment {
    Win1,
    Win2,
    Draw,
}

/// `Win1` iff `p1 > θ`, `Win2` iff `p2 > θ`, otherwise a draw.
pub fn judge_probs(p: [f64; 2], theta: f64) -> Judgment {
    if p[0] > theta {
        Judgment::Win1
    } else if p[1] > theta {
        Judgment::Win2
    } else {
        Judgment::Draw
    }
}

pub fn dnn_judge(model: &RankerModel, v1: &VariantStats, v2: &VariantStats) -> Result<Judgment, RankError> {
    let p = forward(model, &pair_features(v1, v2).to_f64())?;
    Ok(judge_probs(p, model.theta))
}

/// Round robin over all unordered pairs, lower id first; with
/// `both_directions` every pair is also played in reverse and wins summed.
/// Ranked by descending wins, ties by ascending id.
pub fn tournament_rank(
    model: &RankerModel,
    stats: &[VariantStats],
    both_directions: bool,
) -> Result<RankedList, RankError> {
    if stats.len() < 2 {
        return Err(RankError::TooFew(2));
    }
    let mut sorted: Vec<&VariantStats> = stats.iter().collect();
    sorted.sort_by_key(|s| s.id);
    let pairs: Vec<(usize, usize)> =
        (0..sorted.len()).flat_map(|a| (a + 1..sorted.len()).map(move |b| (a, b))).collect();
    let results: Vec<(usize, usize, Judgment, Option<Judgment>)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let fwd = dnn_judge(model, sorted[a], sorted[b])?;
            let rev = if both_directions { Some(dnn_judge(model, sorted[b], sorted[a])?) } else { None };
            Ok((a, b, fwd, rev))
        })
        .collect::<Result<_, RankError>>()?;
    let mut wins = vec![0u64; sorted.len()];
    for (a, b, fwd, rev) in results {
        match fwd {
            Judgment::Win1 => wins[a] += 1,
            Judgment::Win2 => wins[b] += 1,
            Judgment::Draw => {}
        }
        match rev {
            Some(Judgment::Win1) => wins[b] += 1,
            Some(Judgment::Win2) => wins[a] += 1,
            _ => {}
        }
    }
    let mut order: Vec<usize> = (0..sorted.len()).collect();
    order.sort_by(|&x, &y| wins[y].cmp(&wins[x]).then(sorted[x].id.cmp(&sorted[y].id)));
    Ok(RankedList {
        method: Method::Dnn,
        entries: order.into_iter().map(|k| RankedEntry { id: sorted[k].id, score: wins[k] as f64, exact: None }).collect(),
    })
}

/// Same shapes as the model's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

fn target(label: Label) -> [f64; 2] {
    match label {
        Label::First => [1.0, 0.0],
        Label::Second => [0.0, 1.0],
    }
}

/// Mean cross-entropy over `batch` and its gradient.
pub fn loss_and_grad(model: &RankerModel, batch: &[([f64; 8], Label)]) -> Result<(f64, Gradients), RankError> {
    let layers = model.layers();
    let mut g = Gradients {
        weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
        biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
    };
    let mut loss = 0.0;
    let scale = 1.0 / batch.len().max(1) as f64;
    for (x, label) in batch {
        let pass = run(model, x)?;
        let y = target(*label);
        let p = &pass.outs[layers];
        loss -= y.iter().zip(p).map(|(t, q)| t * q.max(1e-300).ln()).sum::<f64>();
        // softmax with cross-entropy: dL/dz = p - y
        let mut delta: Vec<f64> = p.iter().zip(&y).map(|(q, t)| q - t).collect();
        for l in (0..layers).rev() {
            let input = &pass.outs[l];
            let n_in = input.len();
            for (o, d) in delta.iter().enumerate() {
                g.biases[l][o] += d * scale;
                let row = &mut g.weights[l][o * n_in..(o + 1) * n_in];
                for (gw, xi) in row.iter_mut().zip(input) {
                    *gw += d * xi * scale;
                }
            }
            if l == 0 {
                break;
            }
            let act = model.activations[l - 1];
            let w = &model.weights[l];
            delta = (0..n_in)
                .map(|i| {
                    let back: f64 = delta.iter().enumerate().map(|(o, d)| d * w[o * n_in + i]).sum();
                    back * act.derivative(pass.pre[l - 1][i])
                })
                .collect();
        }
    }
    Ok((loss * scale, g))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fraction of pairs used for training; the rest is held out.
    pub train_fraction: f64,
    pub theta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 200, batch_size: 32, learning_rate: 0.05, seed: 1, train_fraction: 0.7, theta: 0.6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainOutcome {
    #[serde(skip)]
    pub model: RankerModel,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    pub final_loss: f64,
    pub train_size: usize,
    pub validation_size: usize,
}

/// Share of pairs whose larger softmax output matches the label.
pub fn accuracy(model: &RankerModel, data: &[([f64; 8], Label)]) -> Result<f64, RankError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut right = 0usize;
    for (x, label) in data {
        let p = forward(model, x)?;
        let guess = if p[0] >= p[1] { Label::First } else { Label::Second };
        right += usize::from(guess == *label);
    }
    Ok(right as f64 / data.len() as f64)
}

/// Mini-batch SGD on cross-entropy; deterministic in `cfg.seed`.
pub fn train_ranker(dataset: &[LabeledPair], cfg: &TrainConfig) -> Result<TrainOutcome, RankError> {
    if dataset.is_empty() {
        return Err(RankError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows: Vec<([f64; 8], Label)> =
        dataset.iter().map(|p| (pair_features(&p.first, &p.second).to_f64(), p.label)).collect();
    rows.shuffle(&mut rng);
    let n_train = ((rows.len() as f64 * cfg.train_fraction).round() as usize).clamp(1, rows.len());
    let held = rows.split_off(n_train);
    let mut train = rows;

    let mut model = RankerModel::new(rng.gen());
    model.theta = cfg.theta;
    let batch = cfg.batch_size.max(1);
    let mut last = f64::NAN;
    for epoch in 0..cfg.epochs {
        train.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in train.chunks(batch) {
            let (loss, g) = loss_and_grad(&model, chunk).map_err(|_| RankError::Diverged(epoch))?;
            if !loss.is_finite() {
                return Err(RankError::Diverged(epoch));
            }
            total += loss * chunk.len() as f64;
            for (w, gw) in model.weights.iter_mut().zip(&g.weights) {
                w.iter_mut().zip(gw).for_each(|(a, d)| *a -= cfg.learning_rate * d);
            }
            for (b, gb) in model.biases.iter_mut().zip(&g.biases) {
                b.iter_mut().zip(gb).for_each(|(a, d)| *a -= cfg.learning_rate * d);
            }
        }
        last = total / train.len() as f64;
    }
    Ok(TrainOutcome {
        train_accuracy: accuracy(&model, &train)?,
        validation_accuracy: accuracy(&model, &held)?,
        final_loss: last,
        train_size: train.len(),
        validation_size: held.len(),
        model,
    })
}
