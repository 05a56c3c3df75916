//! Masked reconstruction objective, gradients, AdamW and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::{PatchSequence, Raster};
use crate::masking::{MaskPlan, MaskSpec, Strategy};
use crate::model::{Mae, ModelConfig, ModelParams};
use crate::nn::{Mat, Scalar, Tensor};
use crate::rng::derive_seed;

/// Seed stream offsets so shuffling and mask sampling never share draws.
const SHUFFLE_STREAM: u64 = 0x5348_5546;
const MASK_STREAM: u64 = 0x4D41_534B;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Mean squared error over every value of every masked patch.
    pub loss: f64,
    pub n_masked_values: usize,
    pub step: u64,
}

/// Mean over all pixel values of the masked patches of the squared
/// prediction error. Visible patches do not contribute; with nothing
/// masked the loss is zero.
pub fn masked_mse(pred: &PatchSequence, target: &PatchSequence, plan: &MaskPlan) -> Result<LossReport> {
    if pred.grid() != target.grid() || pred.channels() != target.channels() || pred.grid() != plan.grid {
        return Err(Error::GeometryMismatch(
            "prediction, target and plan disagree on geometry".into(),
        ));
    }
    plan.validate()?;
    let mut sum = 0.0f64;
    for &i in &plan.masked {
        for (&p, &t) in pred.patch(i).iter().zip(target.patch(i)) {
            let d = p as f64 - t as f64;
            sum += d * d;
        }
    }
    let n = plan.masked.len() * pred.patch_dim();
    Ok(LossReport {
        loss: if n == 0 { 0.0 } else { sum / n as f64 },
        n_masked_values: n,
        step: 0,
    })
}

/// Masked MSE on patch matrices, with `d(weight * loss)/d pred`.
pub fn masked_mse_mat<T: Scalar>(pred: &Mat<T>, target: &Mat<T>, masked: &[usize], weight: T) -> (T, Mat<T>) {
    let mut dpred = Mat::zeros(pred.rows, pred.cols);
    let n = masked.len() * pred.cols;
    if n == 0 {
        return (T::zero(), dpred);
    }
    let inv = T::one() / T::of(n as f64);
    let coef = T::of(2.0) * weight * inv;
    let mut sum = T::zero();
    for &i in masked {
        let (p, t) = (pred.row(i), target.row(i));
        let d = dpred.row_mut(i);
        for j in 0..p.len() {
            let r = p[j] - t[j];
            sum += r * r;
            d[j] = coef * r;
        }
    }
    (sum * inv, dpred)
}

/// Mean masked MSE over a batch and its exact gradient with respect to
/// every parameter. `scale` multiplies the objective (and so every
/// gradient entry).
pub fn loss_and_grad<T: Scalar>(
    model: &Mae<T>,
    patches: &[&Mat<T>],
    plans: &[MaskPlan],
    scale: T,
) -> Result<(T, ModelParams<T>)> {
    if patches.len() != plans.len() || patches.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} images with {} plans",
            patches.len(),
            plans.len()
        )));
    }
    let weight = scale / T::of(patches.len() as f64);
    let mut grads = model.params.zeros_like();
    let mut total = T::zero();
    for (x, plan) in patches.iter().zip(plans) {
        let (pred, cache) = model.forward(x, plan)?;
        let (loss, dpred) = masked_mse_mat(&pred, x, &plan.masked, weight);
        total += loss;
        model.backward(&cache, &dpred, &mut grads);
    }
    Ok((total * weight, grads))
}

/// Gradient of the mean masked MSE over a batch of images.
pub fn grad<T: Scalar>(model: &Mae<T>, batch: &[Raster], plans: &[MaskPlan]) -> Result<(T, ModelParams<T>)> {
    let mats = batch
        .iter()
        .map(|img| model.image_patches(img))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Mat<T>> = mats.iter().collect();
    loss_and_grad(model, &refs, plans, T::one())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.5e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// One decoupled-weight-decay Adam update of a single tensor. `step` is
/// the 1-based update count used for bias correction.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    lr: T,
    hyper: &AdamWConfig,
    decay: bool,
) {
    let (b1, b2) = (T::of(hyper.beta1), T::of(hyper.beta2));
    let eps = T::of(hyper.eps);
    let c1 = T::one() - T::of(hyper.beta1.powi(step as i32));
    let c2 = T::one() - T::of(hyper.beta2.powi(step as i32));
    let shrink = if decay {
        T::one() - lr * T::of(hyper.weight_decay)
    } else {
        T::one()
    };
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        param[i] = param[i] * shrink - lr * mhat / (vhat.sqrt() + eps);
    }
}

/// AdamW moments for every model tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub m: ModelParams<f32>,
    pub v: ModelParams<f32>,
    pub step: u64,
    pub hyper: AdamWConfig,
}

impl OptState {
    pub fn new(params: &ModelParams<f32>, hyper: AdamWConfig) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            hyper,
        }
    }

    /// Applies one update at learning rate `lr`. Weight decay touches
    /// matrices only, never biases, norms or the mask token.
    pub fn step(&mut self, params: &mut ModelParams<f32>, grads: &ModelParams<f32>, lr: f64) -> Result<()> {
        let mut ps = params.tensors_mut();
        let gs = grads.tensors();
        let mut ms = self.m.tensors_mut();
        let mut vs = self.v.tensors_mut();
        let same = |a: &Tensor<f32>, b: &Tensor<f32>| a.shape == b.shape;
        if ps.len() != gs.len() || ps.len() != ms.len() || ps.len() != vs.len() {
            return Err(Error::ShapeMismatch("tensor counts differ".into()));
        }
        for i in 0..ps.len() {
            if !same(ps[i].1, gs[i].1) || !same(ps[i].1, ms[i].1) || !same(ps[i].1, vs[i].1) {
                return Err(Error::ShapeMismatch(format!("tensor {}", ps[i].0)));
            }
        }
        self.step += 1;
        for (((p, (_, g)), (_, m)), (_, v)) in ps.iter_mut().zip(&gs).zip(ms.iter_mut()).zip(vs.iter_mut()) {
            let decay = p.1.shape.len() == 2;
            adamw_update(
                &mut p.1.data,
                &g.data,
                &mut m.data,
                &mut v.data,
                self.step,
                lr as f32,
                &self.hyper,
                decay,
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Total steps; also the length of the learning-rate schedule.
    pub steps: u64,
    pub learning_rate: f64,
    /// Linear warmup length; `None` means 5% of `steps`.
    pub warmup_steps: Option<u64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub mask: MaskSpec,
    pub seed: u64,
    /// Emit a checkpoint every this many steps.
    pub checkpoint_every: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = AdamWConfig::default();
        Self {
            batch_size: 16,
            steps: 1000,
            learning_rate: opt.learning_rate,
            warmup_steps: None,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            weight_decay: opt.weight_decay,
            mask: MaskSpec::new(Strategy::Random, 0.75),
            seed: 0,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::BadConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::BadConfig("learning_rate must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.mask.ratio) {
            return Err(Error::BadRatio(self.mask.ratio));
        }
        if self.mask.strategy == Strategy::Explicit {
            return Err(Error::BadConfig("training needs a masking strategy".into()));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn warmup(&self) -> u64 {
        self.warmup_steps
            .unwrap_or_else(|| (self.steps as f64 * 0.05).round() as u64)
    }

    /// Learning rate for 1-based `step`: linear warmup, then cosine decay
    /// to zero at `steps`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let warm = self.warmup();
        if warm > 0 && step <= warm {
            return self.learning_rate * step as f64 / warm as f64;
        }
        let span = self.steps.saturating_sub(warm).max(1) as f64;
        let progress = ((step - warm) as f64 / span).min(1.0);
        self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    pub realized_ratio: f64,
}

/// `step,loss,realized_ratio` lines with a header.
pub fn history_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("step,loss,realized_ratio\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.step, r.loss, r.realized_ratio));
    }
    out
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<LossRecord>,
}

/// Deterministic sample order: each epoch is a fresh shuffle seeded from
/// `(seed, epoch)`; batches run straight across epoch boundaries.
struct SampleOrder {
    n: usize,
    seed: u64,
    epoch: Option<(u64, Vec<usize>)>,
}

impl SampleOrder {
    fn index(&mut self, position: u64) -> usize {
        let epoch = position / self.n as u64;
        if self.epoch.as_ref().map(|e| e.0) != Some(epoch) {
            let mut perm: Vec<usize> = (0..self.n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed ^ SHUFFLE_STREAM, epoch));
            perm.shuffle(&mut rng);
            self.epoch = Some((epoch, perm));
        }
        self.epoch.as_ref().expect("just set").1[(position % self.n as u64) as usize]
    }
}

/// Trains from scratch (or from `resume`) for `train.steps` steps.
///
/// Each step draws `batch_size` images in [`SampleOrder`], builds one mask
/// plan per image (random plans are reseeded per sample position,
/// geometric plans are fixed), and applies one AdamW update of the mean
/// masked MSE. `on_checkpoint` receives a checkpoint every
/// `checkpoint_every` steps.
pub fn fit(
    config: &ModelConfig,
    train: &TrainConfig,
    corpus: &[Raster],
    resume: Option<Checkpoint>,
    mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<FitOutcome> {
    config.validate()?;
    train.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (mut model, mut opt, start) = match resume {
        Some(ck) => {
            if ck.config != *config {
                return Err(Error::BadConfig(
                    "resume checkpoint has a different model config".into(),
                ));
            }
            if ck.train_seed != train.seed {
                return Err(Error::BadConfig(format!(
                    "resume checkpoint was trained with seed {}, not {}",
                    ck.train_seed, train.seed
                )));
            }
            let opt = ck
                .optimizer
                .unwrap_or_else(|| OptState::new(&ck.params, train.adamw()));
            (Mae::new(*config, ck.params)?, opt, ck.step)
        }
        None => {
            let model = Mae::<f32>::init(*config)?;
            let opt = OptState::new(&model.params, train.adamw());
            (model, opt, 0)
        }
    };
    opt.hyper = train.adamw();

    let patches = corpus
        .iter()
        .map(|img| model.image_patches(img))
        .collect::<Result<Vec<_>>>()?;
    let grid = model.grid();
    let fixed_plan = match train.mask.strategy {
        Strategy::Random => None,
        _ => Some(train.mask.plan(grid)?),
    };
    let mut order = SampleOrder {
        n: patches.len(),
        seed: train.seed,
        epoch: None,
    };
    let bs = train.batch_size as u64;
    let snapshot = |model: &Mae<f32>, opt: &OptState, step: u64| Checkpoint {
        config: *config,
        params: model.params.clone(),
        step,
        train_seed: train.seed,
        optimizer: Some(opt.clone()),
    };

    let mut history = Vec::new();
    for step in start + 1..=train.steps {
        let mut batch = Vec::with_capacity(train.batch_size);
        let mut plans = Vec::with_capacity(train.batch_size);
        for j in 0..bs {
            let position = (step - 1) * bs + j;
            batch.push(&patches[order.index(position)]);
            plans.push(match &fixed_plan {
                Some(p) => p.clone(),
                None => train
                    .mask
                    .with_seed(derive_seed(train.seed ^ MASK_STREAM, position))
                    .plan(grid)?,
            });
        }
        let (loss, grads) = loss_and_grad(&model, &batch, &plans, 1.0f32)?;
        if !loss.is_finite() {
            return Err(Error::ShapeMismatch(format!("non-finite loss at step {step}")));
        }
        let realized = plans.iter().map(|p| p.realized_ratio()).sum::<f64>() / plans.len() as f64;
        history.push(LossRecord {
            step,
            loss: loss as f64,
            realized_ratio: realized,
        });
        opt.step(&mut model.params, &grads, train.lr_at(step))?;
        if let Some(every) = train.checkpoint_every {
            if every > 0 && step % every == 0 && step != train.steps {
                on_checkpoint(&snapshot(&model, &opt, step))?;
            }
        }
    }
    let checkpoint = snapshot(&model, &opt, train.steps.max(start));
    Ok(FitOutcome { checkpoint, history })
}
