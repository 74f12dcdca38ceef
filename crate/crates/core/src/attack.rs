//! White-box FGSM and PGD attacks under L-infinity and L2 budgets.
//!
//! Every attack ends in [`finalize`], which clamps to the valid pixel range
//! and then nudges coordinates by single ulps until the budget holds exactly
//! when measured in `f64`.

use std::fmt;
use std::str::FromStr;

use mocse_corrupt::SeededRng;
use ndgrad::loss::cross_entropy;
use ndgrad::{Real, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};
use crate::model::{softmax_rows, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "inf")]
    Linf,
    #[serde(rename = "l2")]
    L2,
}

impl Norm {
    /// Norm for an exponent `p`; only infinity and 2 are supported.
    pub fn from_p(p: f64) -> Result<Self> {
        if p == f64::INFINITY {
            Ok(Norm::Linf)
        } else if p == 2.0 {
            Ok(Norm::L2)
        } else {
            Err(invalid(format!("unsupported norm p = {p} (use inf or 2)")))
        }
    }

    /// Norm of `v` in `f64`.
    pub fn measure<T: Real>(self, v: impl IntoIterator<Item = T>) -> f64 {
        match self {
            Norm::Linf => v.into_iter().fold(0.0, |m, x| m.max(x.as_f64().abs())),
            Norm::L2 => v
                .into_iter()
                .map(|x| x.as_f64() * x.as_f64())
                .sum::<f64>()
                .sqrt(),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::Linf => "inf",
            Norm::L2 => "l2",
        })
    }
}

impl FromStr for Norm {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inf" | "linf" => Ok(Norm::Linf),
            "2" | "l2" => Ok(Norm::L2),
            _ => Err(invalid(format!("unsupported norm `{s}` (use inf or l2)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub norm: Norm,
    /// Budget radius, in [0, 1] pixel units.
    pub delta: f64,
    /// Step size.
    pub alpha: f64,
    pub iterations: usize,
    pub random_start: bool,
    /// Target class; untargeted when absent.
    pub target: Option<usize>,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            norm: Norm::Linf,
            delta: 8.0 / 255.0,
            alpha: 2.0 / 255.0,
            iterations: 7,
            random_start: true,
            target: None,
            seed: 0,
        }
    }
}

impl AttackConfig {
    /// A zero radius is accepted: the attack is then the identity.
    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(invalid(format!(
                "attack delta {} must be finite and >= 0",
                self.delta
            )));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(invalid(format!(
                "attack alpha {} must be finite and > 0",
                self.alpha
            )));
        }
        if self.iterations == 0 {
            return Err(invalid("attack needs at least one iteration"));
        }
        Ok(())
    }

    /// Single-step L-infinity attack equivalent to FGSM at `delta`.
    pub fn fgsm(delta: f64) -> Self {
        Self {
            norm: Norm::Linf,
            delta,
            alpha: delta.max(f64::MIN_POSITIVE),
            iterations: 1,
            random_start: false,
            target: None,
            seed: 0,
        }
    }
}

/// Projects `eps` onto the `norm` ball of radius `delta`, exactly: the
/// result's norm, measured in `f64`, never exceeds `delta`.
pub fn project_ball<T: Real>(eps: &[T], norm: Norm, delta: f64) -> Result<Vec<T>> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(invalid(format!(
            "projection radius {delta} must be finite and >= 0"
        )));
    }
    let mut out = eps.to_vec();
    project_in_place(&mut out, norm, delta);
    Ok(out)
}

fn project_in_place<T: Real>(v: &mut [T], norm: Norm, delta: f64) {
    match norm {
        Norm::Linf => {
            let (hi, lo) = (T::of(delta), T::of(-delta));
            for x in v.iter_mut() {
                *x = x.max(lo).min(hi);
                while x.as_f64() > delta {
                    *x = x.next_down();
                }
                while x.as_f64() < -delta {
                    *x = x.next_up();
                }
            }
        }
        Norm::L2 => {
            let mut n = Norm::L2.measure(v.iter().copied());
            if n <= delta {
                return;
            }
            let mut scale = delta / n;
            let ulp = (T::one().next_up() - T::one()).as_f64();
            let orig = v.to_vec();
            loop {
                for (x, &o) in v.iter_mut().zip(&orig) {
                    *x = T::of(o.as_f64() * scale);
                }
                n = Norm::L2.measure(v.iter().copied());
                if n <= delta {
                    return;
                }
                scale *= 1.0 - 2.0 * ulp;
            }
        }
    }
}

/// `clamp(x + eps, 0, 1)`, repaired so that `|| x_hat - x ||` measured in
/// `f64` is within `delta` per sample (`x` and `eps` are `[B, ..]`).
pub fn finalize<T: Real>(x: &Tensor<T>, eps: &[T], norm: Norm, delta: f64) -> Result<Tensor<T>> {
    if eps.len() != x.numel() {
        return Err(invalid(format!(
            "perturbation has {} values, input {}",
            eps.len(),
            x.numel()
        )));
    }
    let per = x.numel() / x.shape()[0].max(1);
    let mut out = Vec::with_capacity(x.numel());
    for (xs, es) in x.data().chunks(per).zip(eps.chunks(per)) {
        let mut es = es.to_vec();
        loop {
            let start = out.len();
            for (&xi, &ei) in xs.iter().zip(&es) {
                let mut v = (xi + ei).max(T::zero()).min(T::one());
                if norm == Norm::Linf {
                    while v.as_f64() - xi.as_f64() > delta {
                        v = v.next_down();
                    }
                    while v.as_f64() - xi.as_f64() < -delta {
                        v = v.next_up();
                    }
                }
                out.push(v);
            }
            if norm == Norm::Linf {
                break;
            }
            let n = Norm::L2.measure(
                out[start..]
                    .iter()
                    .zip(xs)
                    .map(|(&v, &xi)| v.as_f64() - xi.as_f64()),
            );
            if n <= delta {
                break;
            }
            out.truncate(start);
            for e in &mut es {
                *e = T::of(e.as_f64() * (1.0 - 1e-6) * delta / n);
            }
        }
    }
    Ok(Tensor::new(x.shape(), out)?)
}

/// Per-sample loss values and the gradient of the mean loss w.r.t. the input.
fn input_gradient<T: Real>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<(Vec<f64>, Tensor<T>)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let xv = tape.leaf(x.clone().with_grad(true));
    let fwd = model.forward(&mut tape, &vars, xv)?;
    let loss = cross_entropy(&mut tape, fwd.logits, labels)?;
    let per_sample = ndgrad::loss::per_sample_cross_entropy(tape.value(fwd.logits)?, labels);
    let g = tape.backward(loss)?.take(xv).expect("input is a leaf");
    if !g.is_finite() {
        return Err(ndgrad::GradError::NonFinite {
            op: "input_gradient",
        }
        .into());
    }
    Ok((per_sample, g))
}

fn check_labels(model_classes: usize, labels: &[usize], batch: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(invalid(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= model_classes) {
        return Err(invalid(format!(
            "label {y} out of range for {model_classes} classes"
        )));
    }
    Ok(())
}

/// Fast gradient sign method: `clamp(x + delta * sign(grad CE), 0, 1)`.
pub fn fgsm<T: Real>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    delta: f64,
) -> Result<Tensor<T>> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(invalid(format!(
            "fgsm delta {delta} must be finite and >= 0"
        )));
    }
    check_labels(model.num_classes(), labels, x.shape()[0])?;
    let (_, g) = input_gradient(model, x, labels)?;
    let d = T::of(delta);
    let mut eps: Vec<T> = g
        .data()
        .iter()
        .map(|&gi| d * ndgrad::ops_util::sign(gi))
        .collect();
    // Only trims the ulp by which `T::of(delta)` may exceed `delta`.
    project_in_place(&mut eps, Norm::Linf, delta);
    finalize(x, &eps, Norm::Linf, delta)
}

/// PGD output with the loss of every iterate.
#[derive(Debug, Clone)]
pub struct PgdTrace<T: Real> {
    pub adversarial: Tensor<T>,
    /// `losses[i][b]`: cross-entropy of sample `b` (against the attacked
    /// label) at iterate `i`, from the start point through the final output.
    pub losses: Vec<Vec<f64>>,
}

/// Projected gradient descent on the cross-entropy. Untargeted runs ascend
/// the loss of the true label; targeted runs descend the loss of the target.
pub fn pgd<T: Real>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Tensor<T>> {
    Ok(pgd_traced(model, x, labels, cfg, 0, false)?.adversarial)
}

/// [`pgd`] with the random start of sample `b` drawn from the stream for
/// image index `first_index + b`, so results do not depend on batching.
/// With `trace`, the final iterate's losses are evaluated too.
pub fn pgd_traced<T: Real>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
    first_index: u64,
    trace: bool,
) -> Result<PgdTrace<T>> {
    cfg.validate()?;
    let batch = x.shape()[0];
    check_labels(model.num_classes(), labels, batch)?;
    let (attacked, sign): (Vec<usize>, f64) = match cfg.target {
        Some(t) => {
            check_labels(model.num_classes(), &[t], 1)?;
            (vec![t; batch], -1.0)
        }
        None => (labels.to_vec(), 1.0),
    };
    let per = x.numel() / batch.max(1);
    let mut eps = vec![T::zero(); x.numel()];
    if cfg.random_start {
        for (b, chunk) in eps.chunks_mut(per).enumerate() {
            let mut rng = SeededRng::for_image(cfg.seed, first_index + b as u64);
            for e in chunk.iter_mut() {
                *e = T::of(rng.uniform_in(-cfg.delta, cfg.delta));
            }
            project_in_place(chunk, cfg.norm, cfg.delta);
        }
    }
    let mut adv = finalize(x, &eps, cfg.norm, cfg.delta)?;
    let mut losses = Vec::new();
    for _ in 0..cfg.iterations {
        let (loss, g) = input_gradient(model, &adv, &attacked)?;
        losses.push(loss);
        for ((e, gs), (a, xs)) in eps
            .chunks_mut(per)
            .zip(g.data().chunks(per))
            .zip(adv.data().chunks(per).zip(x.data().chunks(per)))
        {
            let step = step_direction(gs, cfg.norm);
            for (((ei, &ai), &xi), si) in e.iter_mut().zip(a).zip(xs).zip(step) {
                *ei = (ai - xi) + T::of(sign * cfg.alpha * si);
            }
            project_in_place(e, cfg.norm, cfg.delta);
        }
        adv = finalize(x, &eps, cfg.norm, cfg.delta)?;
    }
    if trace {
        losses.push(input_gradient(model, &adv, &attacked)?.0);
    }
    Ok(PgdTrace {
        adversarial: adv,
        losses,
    })
}

/// Steepest-ascent unit step: the sign for L-infinity, the normalised
/// gradient for L2 (zero where the gradient vanishes).
fn step_direction<T: Real>(g: &[T], norm: Norm) -> Vec<f64> {
    match norm {
        Norm::Linf => g
            .iter()
            .map(|&v| ndgrad::ops_util::sign(v).as_f64())
            .collect(),
        Norm::L2 => {
            let n = Norm::L2.measure(g.iter().copied());
            if n == 0.0 {
                vec![0.0; g.len()]
            } else {
                g.iter().map(|&v| v.as_f64() / n).collect()
            }
        }
    }
}

/// Softmax confidence of the attacked class per sample: of the true label
/// when untargeted (lower means a stronger attack), of the target otherwise
/// (higher means stronger).
pub fn attack_objective<T: Real>(
    model: &Model<T>,
    x_adv: &Tensor<T>,
    labels: &[usize],
    target: Option<usize>,
) -> Result<Vec<f64>> {
    check_labels(model.num_classes(), labels, x_adv.shape()[0])?;
    if let Some(t) = target {
        check_labels(model.num_classes(), &[t], 1)?;
    }
    let probs = softmax_rows(&model.logits(x_adv)?);
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| p[target.unwrap_or(y)])
        .collect())
}
