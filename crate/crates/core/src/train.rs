//! Mini-batch SGD with momentum, with optional PGD adversarial training.

use std::fmt::Write as _;
use std::path::Path;

use mocse_corrupt::{Image, SeededRng, SplitMix64};
use ndgrad::{GradError, Real, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::attack::{pgd_traced, AttackConfig};
use crate::data::checkpoint::TrainState;
use crate::data::{stack, Dataset};
use crate::error::{invalid, io_err, CoreError, Result};
use crate::eval::accuracy;
use crate::model::{LossOptions, Model, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy of the class scores.
    Ce,
    /// Cross-entropy plus `lambda` times the mean expert binary cross-entropy.
    MocseCombined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Half-cosine decay from the base rate to zero over all epochs.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Shuffle, augmentation and attack streams; set per run, not from files.
    #[serde(skip)]
    pub seed: u64,
    /// Defaults to the combined loss for MoCSE and cross-entropy otherwise.
    pub loss: Option<LossKind>,
    pub lambda: f64,
    pub pos_weight: bool,
    pub schedule: Schedule,
    /// Random horizontal flip and up to 2 px shift per sample.
    pub augment: bool,
    /// Save a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    /// Inner maximisation for adversarial training.
    pub adversarial: Option<AttackConfig>,
    /// Epochs over which the attack radius and step grow linearly from zero
    /// to their configured values (0: full strength from the start).
    pub adversarial_warmup: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
            loss: None,
            lambda: 1.0,
            pos_weight: false,
            schedule: Schedule::Constant,
            augment: false,
            checkpoint_every: 0,
            adversarial: None,
            adversarial_warmup: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(invalid(format!(
                "learning rate {} must be finite and >= 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(invalid(format!(
                "weight decay {} must be finite and >= 0",
                self.weight_decay
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(invalid(format!(
                "lambda {} must be finite and >= 0",
                self.lambda
            )));
        }
        if let Some(a) = &self.adversarial {
            a.validate()?;
        }
        Ok(())
    }

    pub fn loss_kind(&self, model: ModelKind) -> LossKind {
        self.loss.unwrap_or(if model == ModelKind::Mocse {
            LossKind::MocseCombined
        } else {
            LossKind::Ce
        })
    }

    fn loss_options(&self, model: ModelKind) -> LossOptions {
        match self.loss_kind(model) {
            LossKind::MocseCombined => LossOptions {
                lambda: self.lambda,
                pos_weight: self.pos_weight,
            },
            LossKind::Ce => LossOptions {
                lambda: 0.0,
                pos_weight: false,
            },
        }
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Cosine => {
                let t = epoch as f64 / self.epochs.max(1) as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    /// The inner attack used during `epoch` (0-based), after warm-up.
    /// `None` when training is standard or the radius is still zero.
    pub fn attack_at(&self, epoch: usize) -> Option<AttackConfig> {
        let adv = self.adversarial?;
        if epoch >= self.adversarial_warmup {
            return (adv.delta > 0.0).then_some(adv);
        }
        let s = epoch as f64 / self.adversarial_warmup as f64;
        (s > 0.0 && adv.delta > 0.0).then_some(AttackConfig {
            delta: s * adv.delta,
            alpha: s * adv.alpha,
            ..adv
        })
    }
}

/// Optimizer hyperparameters for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// `v <- momentum * v + grad + weight_decay * param; param <- param - lr * v`.
pub fn sgd_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    velocities: &mut [Vec<T>],
    opt: &Sgd,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocities.len() {
        return Err(invalid(format!(
            "sgd_step: {} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            velocities.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(velocities.iter()) {
        if p.shape() != g.shape() || v.len() != p.numel() {
            return Err(GradError::ShapeMismatch {
                op: "sgd_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            }
            .into());
        }
    }
    let (lr, mu, wd) = (
        T::of(opt.learning_rate),
        T::of(opt.momentum),
        T::of(opt.weight_decay),
    );
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocities.iter_mut()) {
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
            *vi = mu * *vi + gi + wd * *pi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// Per-epoch training summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean total training objective on clean batches.
    pub train_loss: f64,
    pub ce_loss: f64,
    /// Mean expert binary cross-entropy (combined loss only).
    pub bce_loss: Option<f64>,
    /// Accuracy on the held-out set, when one is given.
    pub val_acc: Option<f64>,
    /// Mean objective on the adversarial batches (adversarial training only).
    pub robust_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        let mut s =
            String::from("epoch,learning_rate,train_loss,ce_loss,bce_loss,val_acc,robust_loss\n");
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{},{},{}",
                r.epoch,
                r.learning_rate,
                r.train_loss,
                r.ce_loss,
                opt(r.bce_loss),
                opt(r.val_acc),
                opt(r.robust_loss)
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(io_err(path))
    }
}

pub(crate) fn mix(seed: u64, stream: u64) -> u64 {
    SplitMix64::new(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)).next_u64()
}

const SHUFFLE: u64 = 1;
const AUGMENT: u64 = 2;
const ATTACK: u64 = 3;

/// Fisher-Yates permutation of `0..n` for `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = SeededRng::new(mix(mix(seed, SHUFFLE), epoch as u64));
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    order
}

/// Random horizontal flip, then an integer shift in [-2, 2]^2 with
/// clamp-to-edge fill.
pub fn augment(image: &Image, rng: &mut SeededRng) -> Image {
    let flip = rng.uniform() < 0.5;
    let dy = rng.int_in(-2, 2);
    let dx = rng.int_in(-2, 2);
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        let sy = (y as i64 - dy).clamp(0, h as i64 - 1) as usize;
        for x in 0..w {
            let fx = if flip { w - 1 - x } else { x };
            let sx = (fx as i64 - dx).clamp(0, w as i64 - 1) as usize;
            for ch in 0..c {
                data.push(image.get(sy, sx, ch));
            }
        }
    }
    Image::new(h, w, c, data).expect("same shape")
}

fn diverged(epoch: usize, batch: usize) -> impl Fn(CoreError) -> CoreError {
    move |e| match e {
        CoreError::Grad(GradError::NonFinite { .. }) => CoreError::Diverged {
            epoch,
            batch,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Called after each epoch with its record, the model and the optimizer state.
pub type EpochHook<'a> = dyn FnMut(&EpochRecord, &Model<f32>, &TrainState) -> Result<()> + 'a;

/// What a training run produced.
#[derive(Debug, Clone)]
pub struct Trained {
    pub history: History,
    pub state: TrainState,
}

/// Trains `model` in place. With `cfg.adversarial` set, every batch is
/// replaced by PGD examples against the current parameters before the step.
/// `on_epoch` runs after each epoch (for checkpoints and progress output);
/// `resume` continues from a saved optimizer state.
pub fn train(
    model: &mut Model<f32>,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    on_epoch: &mut EpochHook<'_>,
) -> Result<Trained> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid("training set is empty"));
    }
    if data.num_classes() != model.num_classes() {
        return Err(invalid(format!(
            "dataset has {} classes, model {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    let opts = cfg.loss_options(model.kind());
    let mut state = resume.unwrap_or_else(|| TrainState {
        epoch: 0,
        velocities: model
            .params()
            .iter()
            .map(|p| vec![0.0; p.value.numel()])
            .collect(),
    });
    if state.velocities.len() != model.params().len() {
        return Err(invalid("resume state does not match the model"));
    }
    let n = data.len();
    let mut history = History::default();
    for epoch in state.epoch as usize..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let opt = Sgd {
            learning_rate: lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        };
        let order = epoch_order(n, cfg.seed, epoch);
        let (mut total, mut ce, mut bce, mut robust) = (0.0, 0.0, 0.0, 0.0);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = if cfg.augment {
                let aug_seed = mix(mix(cfg.seed, AUGMENT), epoch as u64);
                let imgs: Vec<Image> = idx
                    .iter()
                    .map(|&i| {
                        augment(
                            &data.images()[i],
                            &mut SeededRng::for_image(aug_seed, i as u64),
                        )
                    })
                    .collect();
                stack(&imgs)?
            } else {
                stack(idx.iter().map(|&i| &data.images()[i]))?
            };
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
            let w = idx.len() as f64 / n as f64;

            let step_input = match cfg.attack_at(epoch) {
                Some(adv) => {
                    let a = AttackConfig {
                        seed: mix(mix(cfg.seed ^ adv.seed, ATTACK), epoch as u64),
                        ..adv
                    };
                    let out =
                        pgd_traced(model, &x, &labels, &a, (bi * cfg.batch_size) as u64, false)
                            .map_err(diverged(epoch, bi))?;
                    // Clean objective for the history only.
                    let mut tape = Tape::new();
                    let vars = model.bind(&mut tape, false);
                    let xv = tape.constant(x.clone());
                    let t = model
                        .loss(&mut tape, &vars, xv, &labels, &opts)
                        .map_err(diverged(epoch, bi))?;
                    total += w * tape.value(t.total)?.item()?.as_f64();
                    ce += w * tape.value(t.ce)?.item()?.as_f64();
                    if let Some(b) = t.bce {
                        bce += w * tape.value(b)?.item()?.as_f64();
                    }
                    out.adversarial
                }
                None => x,
            };

            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            let xv = tape.constant(step_input);
            let terms = model
                .loss(&mut tape, &vars, xv, &labels, &opts)
                .map_err(diverged(epoch, bi))?;
            let loss = tape.value(terms.total)?.item()?.as_f64();
            if !loss.is_finite() {
                return Err(CoreError::Diverged {
                    epoch,
                    batch: bi,
                    loss,
                });
            }
            if cfg.adversarial.is_some() {
                robust += w * loss;
            }
            if cfg.attack_at(epoch).is_none() {
                total += w * loss;
                ce += w * tape.value(terms.ce)?.item()?.as_f64();
                if let Some(b) = terms.bce {
                    bce += w * tape.value(b)?.item()?.as_f64();
                }
            }
            let mut grads = tape
                .backward(terms.total)
                .map_err(|e| diverged(epoch, bi)(e.into()))?;
            let grads: Vec<Tensor<f32>> = vars
                .iter()
                .map(|&v| grads.take(v).expect("parameters are leaves"))
                .collect();
            let mut values: Vec<Tensor<f32>> = model
                .params_mut()
                .iter_mut()
                .map(|p| std::mem::replace(&mut p.value, Tensor::scalar(0.0)))
                .collect();
            sgd_step(&mut values, &grads, &mut state.velocities, &opt)?;
            for (p, v) in model.params_mut().iter_mut().zip(values) {
                p.value = v;
            }
        }
        state.epoch = epoch as u64 + 1;
        let record = EpochRecord {
            epoch: epoch + 1,
            learning_rate: lr,
            train_loss: total,
            ce_loss: ce,
            bce_loss: (opts.lambda > 0.0 && model.kind() == ModelKind::Mocse).then_some(bce),
            val_acc: val.map(|v| accuracy(model, v)).transpose()?,
            robust_loss: cfg.adversarial.is_some().then_some(robust),
        };
        on_epoch(&record, model, &state)?;
        history.epochs.push(record);
    }
    Ok(Trained { history, state })
}
