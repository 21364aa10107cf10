use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::CurveNet;
use crate::autodiff::checkpoint::round_to_f32;
use crate::autodiff::{bind_params, collect_grads, Ctx, Graph, Tensor, Var};
use crate::error::{arg_err, Error, Result};
use crate::geometry::{Augmentation, PointCloud};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Cosine annealing from the initial rate to `lr_floor`.
    Cosine,
    /// ×0.1 at 70% and again at 90% of the epochs.
    Step,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_floor: f64,
    pub schedule: Schedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub augment: bool,
    /// Votes used by the final evaluation (training-time validation is
    /// always a single pass).
    pub votes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            lr: 0.1,
            lr_floor: 0.001,
            schedule: Schedule::Cosine,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            augment: true,
            votes: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) || self.lr_floor < 0.0 {
            return arg_err("TrainConfig", "learning rates must be finite and non-negative");
        }
        if self.batch_size == 0 || self.votes == 0 {
            return arg_err("TrainConfig", "batch size and votes must be positive");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Cosine => cosine_schedule(epoch, self.epochs.saturating_sub(1), self.lr, self.lr_floor),
            Schedule::Step => step_schedule(epoch, self.epochs, self.lr),
        }
    }
}

/// `floor + (lr0 − floor)(1 + cos(π step / total)) / 2`.
pub fn cosine_schedule(step: usize, total: usize, lr0: f64, lr_floor: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = step.min(total) as f64 / total as f64;
    lr_floor + (lr0 - lr_floor) * 0.5 * (1.0 + (PI * t).cos())
}

pub fn step_schedule(epoch: usize, total: usize, lr0: f64) -> f64 {
    let drops = [0.7, 0.9].iter().filter(|&&f| epoch as f64 >= f * total as f64).count();
    lr0 * 0.1f64.powi(drops as i32)
}

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((w, &d), m) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *m = self.momentum * *m + d + self.weight_decay * *w;
                *w -= lr * *m;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Training accuracy; `None` for pointwise heads.
    pub train_acc: Option<f64>,
    /// Accuracy for classifiers, mean cosine error for pointwise heads.
    pub val_metric: f64,
}

/// Independent random stream for `(a, b)` under `seed`.
pub fn stream_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream((a << 32) ^ b);
    r
}

const SHUFFLE_STREAM: u64 = 0xffff_fffe;
const VOTE_STREAM: u64 = 0xffff_fffd;

/// Forward and backward for one cloud; returns `(loss, gradients, score)`
/// where `score` is 1/0 correctness for classifiers and the cosine error
/// for pointwise heads.
pub fn sample_gradient(model: &CurveNet, cloud: &PointCloud, rng: ChaCha8Rng) -> Result<(f64, Vec<Tensor>, f64)> {
    let mut g = Graph::new();
    let bound = bind_params(&mut g, &model.store);
    let (loss, score) = {
        let mut cx = Ctx::new(&mut g, &bound, true, rng);
        sample_loss(model, &mut cx, cloud)?
    };
    let value = g.value(loss).data()[0];
    g.backward(loss)?;
    Ok((value, collect_grads(&g, &model.store, &bound), score))
}

fn sample_loss(model: &CurveNet, cx: &mut Ctx, cloud: &PointCloud) -> Result<(Var, f64)> {
    if model.is_classifier() {
        let label = cloud.class().ok_or_else(|| Error::Dataset("cloud without a class label".into()))?;
        let logits = model.forward_classify(cx, cloud)?;
        let v = cx.g.value(logits).data();
        let pred = argmax(v);
        let loss = cx.g.cross_entropy(logits, &[label])?;
        Ok((loss, f64::from(u8::from(pred == label))))
    } else {
        let normals = cloud.normals_tensor().ok_or_else(|| Error::Dataset("cloud without normals".into()))?;
        let pred = model.forward_pointwise(cx, cloud)?;
        let target = cx.g.constant(normals);
        let loss = cx.g.cosine_error(pred, target)?;
        let e = cx.g.value(loss).data()[0];
        Ok((loss, e))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Trains `model` in place. `on_epoch` sees every epoch's metrics, the
/// model and whether the validation metric improved.
pub fn train(
    model: &mut CurveNet,
    train_set: &[PointCloud],
    val_set: &[PointCloud],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &CurveNet, bool) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return arg_err("train", "empty training set");
    }
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<f64> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut stream_rng(cfg.seed, SHUFFLE_STREAM, epoch as u64));
        let (mut loss_sum, mut score_sum) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let results = par::map(batch, |&i| {
                let mut rng = stream_rng(cfg.seed, epoch as u64 + 1, i as u64);
                let cloud = if cfg.augment { Augmentation::sample(&mut rng).apply(&train_set[i]) } else { train_set[i].clone() };
                sample_gradient(model, &cloud, rng)
            });
            let mut total: Option<Vec<Tensor>> = None;
            for r in results {
                let (loss, grads, score) = match r {
                    Err(Error::NonFinite { .. }) => return Err(Error::Divergence { epoch, loss: f64::NAN }),
                    other => other?,
                };
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, loss });
                }
                loss_sum += loss;
                score_sum += score;
                match &mut total {
                    None => total = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let mut grads = total.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= inv));
            sgd.step(model.store.values_mut(), &grads, lr);
            round_to_f32(model.store.values_mut());
            if model.store.values().iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence { epoch, loss: f64::NAN });
            }
        }
        let n = train_set.len() as f64;
        let val_metric = if val_set.is_empty() { f64::NAN } else { evaluate(model, val_set, 1, cfg.seed)? };
        let m = EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / n,
            train_acc: model.is_classifier().then_some(score_sum / n),
            val_metric,
        };
        let improved = match best {
            None => true,
            Some(b) if model.is_classifier() => val_metric > b,
            Some(b) => val_metric < b,
        };
        if improved {
            best = Some(val_metric);
        }
        on_epoch(&m, model, improved)?;
        history.push(m);
    }
    Ok(history)
}

/// Eval-mode forward with the parameters as constants; returns the output
/// value (class logits or per-point predictions).
pub fn predict(model: &CurveNet, cloud: &PointCloud) -> Result<Tensor> {
    let mut g = Graph::new();
    let consts: Vec<Var> = model.store.values().iter().map(|t| g.constant(t.clone())).collect();
    let mut cx = Ctx::new(&mut g, &consts, false, ChaCha8Rng::seed_from_u64(0));
    let out =
        if model.is_classifier() { model.forward_classify(&mut cx, cloud)? } else { model.forward_pointwise(&mut cx, cloud)? };
    Ok(g.value(out).clone())
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Class probabilities averaged over `votes` passes; the first pass is
/// always the unmodified cloud only when `votes == 1`, otherwise every pass
/// uses a random per-axis rescaling.
pub fn vote_probs(model: &CurveNet, cloud: &PointCloud, votes: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if votes <= 1 {
        return Ok(softmax(predict(model, cloud)?.data()));
    }
    let mut acc: Vec<f64> = Vec::new();
    for _ in 0..votes {
        let p = softmax(predict(model, &Augmentation::sample_scale(rng).apply(cloud))?.data());
        if acc.is_empty() {
            acc = p;
        } else {
            acc.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        }
    }
    Ok(acc.into_iter().map(|a| a / votes as f64).collect())
}

/// Accuracy (classifier, with voting) or mean cosine error (pointwise).
pub fn evaluate(model: &CurveNet, data: &[PointCloud], votes: usize, seed: u64) -> Result<f64> {
    if data.is_empty() {
        return arg_err("evaluate", "empty evaluation set");
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let scores = par::map(&idx, |&i| -> Result<f64> {
        let cloud = &data[i];
        if model.is_classifier() {
            let label = cloud.class().ok_or_else(|| Error::Dataset("cloud without a class label".into()))?;
            let probs = vote_probs(model, cloud, votes, &mut stream_rng(seed, VOTE_STREAM, i as u64))?;
            Ok(f64::from(u8::from(argmax(&probs) == label)))
        } else {
            let normals = cloud.normals.as_ref().ok_or_else(|| Error::Dataset("cloud without normals".into()))?;
            let pred = predict(model, cloud)?;
            Ok(mean_cosine_error(&pred, normals))
        }
    });
    let mut total = 0.0;
    for s in scores {
        total += s?;
    }
    Ok(total / data.len() as f64)
}

/// Mean of `1 − |cos|` between the columns of `pred: 3×P` and `normals`.
pub fn mean_cosine_error(pred: &Tensor, normals: &[crate::geometry::Point]) -> f64 {
    let p = normals.len();
    let d = pred.data();
    let mut total = 0.0;
    for (j, n) in normals.iter().enumerate() {
        let v = [d[j], d[p + j], d[2 * p + j]];
        let (nv, nn) = (v.iter().map(|x| x * x).sum::<f64>().sqrt(), n.iter().map(|x| x * x).sum::<f64>().sqrt());
        let cos = if nv == 0.0 || nn == 0.0 { 0.0 } else { (v[0] * n[0] + v[1] * n[1] + v[2] * n[2]) / (nv * nn) };
        total += 1.0 - cos.abs();
    }
    total / p as f64
}
