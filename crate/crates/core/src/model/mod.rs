//! Classifiers: a plain CNN, a mixture of class-specific binary experts with a
//! parameter-free aggregator, and a linearly gated sparse mixture of experts.

mod trunk;

use std::fmt;
use std::str::FromStr;

use mocse_corrupt::SeededRng;
use ndgrad::loss::{cross_entropy, weighted_nll};
use ndgrad::ops_util::softmax_in_place;
use ndgrad::{Real, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, CoreError, Result};
pub use trunk::TRUNK_PARAMS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Standard,
    Mocse,
    Moe,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Standard => "standard",
            ModelKind::Mocse => "mocse",
            ModelKind::Moe => "moe",
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        [ModelKind::Standard, ModelKind::Mocse, ModelKind::Moe]
            .get(usize::from(tag))
            .copied()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(ModelKind::Standard),
            "mocse" => Ok(ModelKind::Mocse),
            "moe" => Ok(ModelKind::Moe),
            _ => Err(invalid(format!(
                "unknown model kind `{s}` (expected standard, mocse or moe)"
            ))),
        }
    }
}

/// Architecture hyperparameters. `width` is the trunk base width: of the whole
/// network for `Standard`, of each class expert for `Mocse`, of each gated
/// expert for `Moe`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub width: usize,
    /// Channels of the second and third conv layers: `2 * width` except for
    /// parameter-matched experts.
    pub mid_width: usize,
    pub num_classes: usize,
    /// Input height, width, channels.
    pub input: [usize; 3],
    /// Gated experts (`Moe` only).
    pub experts: usize,
    /// Experts evaluated per sample (`Moe` only).
    pub top_k: usize,
}

impl ModelConfig {
    pub fn standard(width: usize, num_classes: usize, input: [usize; 3]) -> Self {
        Self {
            kind: ModelKind::Standard,
            width,
            mid_width: 2 * width,
            num_classes,
            input,
            experts: 0,
            top_k: 0,
        }
    }

    pub fn mocse(expert_width: usize, num_classes: usize, input: [usize; 3]) -> Self {
        Self {
            kind: ModelKind::Mocse,
            width: expert_width,
            mid_width: 2 * expert_width,
            num_classes,
            input,
            experts: 0,
            top_k: 0,
        }
    }

    pub fn moe(
        experts: usize,
        width: usize,
        top_k: usize,
        num_classes: usize,
        input: [usize; 3],
    ) -> Self {
        Self {
            kind: ModelKind::Moe,
            width,
            mid_width: 2 * width,
            num_classes,
            input,
            experts,
            top_k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w, c] = self.input;
        if self.width == 0 || self.mid_width == 0 {
            return Err(invalid("model widths must be > 0"));
        }
        if self.num_classes < 2 {
            return Err(invalid("need at least 2 classes"));
        }
        if h == 0 || w == 0 || c == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(invalid(format!(
                "input {h}x{w}x{c}: height and width must be positive multiples of 8"
            )));
        }
        if self.kind == ModelKind::Moe {
            if self.experts == 0 {
                return Err(invalid("moe needs at least one expert"));
            }
            if self.top_k == 0 || self.top_k > self.experts {
                return Err(invalid(format!(
                    "top_k {} must lie in 1..={}",
                    self.top_k, self.experts
                )));
            }
        }
        Ok(())
    }

    pub fn with_mid_width(self, mid_width: usize) -> Self {
        Self { mid_width, ..self }
    }

    /// Number of independently evaluated trunks.
    pub fn trunks(&self) -> usize {
        match self.kind {
            ModelKind::Standard => 1,
            ModelKind::Mocse => self.num_classes,
            ModelKind::Moe => self.experts,
        }
    }
}

/// Name, shape and initialisation of one trainable tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// `Some(fan_in)` for uniform(-sqrt(6/fan_in), sqrt(6/fan_in)); `None` for zeros.
    pub fan_in: Option<usize>,
}

impl ParamSpec {
    fn weight(name: String, shape: Vec<usize>, fan_in: usize) -> Self {
        Self {
            name,
            shape,
            fan_in: Some(fan_in),
        }
    }

    fn bias(name: String, len: usize) -> Self {
        Self {
            name,
            shape: vec![len],
            fan_in: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Every trainable tensor of `config`, in binding order. The MoCSE
/// aggregator contributes nothing.
pub fn layout(config: &ModelConfig) -> Vec<ParamSpec> {
    match config.kind {
        ModelKind::Standard => trunk::layout(
            "",
            config.input,
            config.width,
            config.mid_width,
            config.num_classes,
        ),
        ModelKind::Mocse => (0..config.num_classes)
            .flat_map(|n| {
                trunk::layout(
                    &format!("expert{n}."),
                    config.input,
                    config.width,
                    config.mid_width,
                    2,
                )
            })
            .collect(),
        ModelKind::Moe => {
            let d: usize = config.input.iter().product();
            let mut specs = vec![ParamSpec::weight(
                "gate.w".into(),
                vec![d, config.experts],
                d,
            )];
            for m in 0..config.experts {
                specs.extend(trunk::layout(
                    &format!("expert{m}."),
                    config.input,
                    config.width,
                    config.mid_width,
                    config.num_classes,
                ));
            }
            specs
        }
    }
}

pub fn param_count(config: &ModelConfig) -> usize {
    layout(config).iter().map(ParamSpec::numel).sum()
}

/// Expert channel widths `(width, mid_width)` whose MoCSE parameter count
/// matches a standard network of `standard_width`, with the relative gap.
///
/// The standard shape `(e, 2e)` is kept when some `e` lands within 10%;
/// otherwise the closest pair with `mid_width <= 2 * standard_width` wins.
/// Integer widths alone are too coarse for some class counts.
pub fn matched_expert_width(
    standard_width: usize,
    num_classes: usize,
    input: [usize; 3],
) -> (usize, usize, f64) {
    let target = param_count(&ModelConfig::standard(standard_width, num_classes, input)) as f64;
    let gap = |w: usize, m: usize| {
        let p = param_count(&ModelConfig::mocse(w, num_classes, input).with_mid_width(m)) as f64;
        (p - target).abs() / target
    };
    let max = standard_width.max(1);
    let best = |pairs: Vec<(usize, usize)>| {
        pairs
            .into_iter()
            .map(|(w, m)| (w, m, gap(w, m)))
            .min_by(|a, b| a.2.total_cmp(&b.2))
            .expect("non-empty range")
    };
    let proportional = best((1..=max).map(|w| (w, 2 * w)).collect());
    if proportional.2 < 0.10 {
        return proportional;
    }
    best(
        (1..=max)
            .flat_map(|w| (1..=2 * max).map(move |m| (w, m)))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Result of a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[B, N]` class scores.
    pub logits: Var,
    /// `[B, N, 2]` expert outputs (not-belongs, belongs), MoCSE only.
    pub experts: Option<Var>,
    /// Gate probabilities and selected experts per sample, gated MoE only.
    pub gate: Option<Gate>,
}

#[derive(Debug, Clone)]
pub struct Gate {
    /// `[B, M]` softmax gate values.
    pub probs: Var,
    /// Selected expert indices per sample, best first.
    pub selected: Vec<Vec<usize>>,
}

/// Loss mixing options for the MoCSE combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    /// Weight of the mean per-expert binary cross-entropy.
    pub lambda: f64,
    /// Weight positives by `N - 1` in the expert terms.
    pub pos_weight: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            pos_weight: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub ce: Var,
    /// Mean expert binary cross-entropy (MoCSE only).
    pub bce: Option<Var>,
}

/// Index of the belongs logit in an expert's output.
pub const BELONGS: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real> {
    config: ModelConfig,
    params: Vec<Param<T>>,
}

impl<T: Real> Model<T> {
    /// Fan-in scaled uniform weights and zero biases, drawn in layout order
    /// from one stream seeded by `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(seed);
        let params = layout(&config)
            .into_iter()
            .map(|spec| {
                let n = spec.numel();
                let data = match spec.fan_in {
                    Some(fan) => {
                        let bound = (6.0 / fan as f64).sqrt();
                        (0..n)
                            .map(|_| T::of(rng.uniform_in(-bound, bound)))
                            .collect()
                    }
                    None => vec![T::zero(); n],
                };
                Ok(Param {
                    value: Tensor::new(&spec.shape, data)?,
                    name: spec.name,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, params })
    }

    /// Rebuilds a model from named tensors, checking them against the layout.
    pub fn from_params(config: ModelConfig, params: Vec<Param<T>>) -> Result<Self> {
        config.validate()?;
        let specs = layout(&config);
        if specs.len() != params.len() {
            return Err(invalid(format!(
                "expected {} tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.name != p.name || s.shape != p.value.shape() {
                return Err(invalid(format!(
                    "tensor `{}` {:?} does not match layout `{}` {:?}",
                    p.name,
                    p.value.shape(),
                    s.name,
                    s.shape
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in p.value.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Places every parameter on the tape, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.value.clone().with_grad(true))
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    fn check_input(&self, tape: &Tape<T>, x: Var) -> Result<usize> {
        let shape = tape.shape(x)?;
        let [h, w, c] = self.config.input;
        if shape.len() != 4 || shape[1..] != [h, w, c] {
            return Err(ndgrad::GradError::ShapeMismatch {
                op: "model_input",
                lhs: shape.to_vec(),
                rhs: vec![0, h, w, c],
            }
            .into());
        }
        Ok(shape[0])
    }

    /// Forward pass on `[B, H, W, C]` input with parameters bound by [`Model::bind`].
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Forward> {
        let batch = self.check_input(tape, x)?;
        match self.config.kind {
            ModelKind::Standard => Ok(Forward {
                logits: trunk::forward(tape, vars, x)?,
                experts: None,
                gate: None,
            }),
            ModelKind::Mocse => {
                let trunks: Vec<&[Var]> = vars.chunks(TRUNK_PARAMS).collect();
                let firsts = trunk::fused_first_blocks(tape, &trunks, x)?;
                let outs = trunks
                    .iter()
                    .zip(firsts)
                    .map(|(p, h)| trunk::tail(tape, p, h))
                    .collect::<Result<Vec<_>>>()?;
                let (experts, scores) = mocse_aggregate(tape, &outs, self.config.num_classes)?;
                Ok(Forward {
                    logits: scores,
                    experts: Some(experts),
                    gate: None,
                })
            }
            ModelKind::Moe => {
                let gate = moe_gate(tape, vars[0], x, self.config.top_k)?;
                let mut out: Option<Var> = None;
                for (m, p) in vars[1..].chunks(TRUNK_PARAMS).enumerate() {
                    let rows: Vec<usize> = (0..batch)
                        .filter(|&b| gate.selected[b].contains(&m))
                        .collect();
                    if rows.is_empty() {
                        continue;
                    }
                    let xm = tape.gather_rows(x, &rows)?;
                    let fm = trunk::forward(tape, p, xm)?;
                    let pi = tape.gather_rows(gate.probs, &rows)?;
                    let pi = tape.slice(pi, 1, m, 1)?;
                    let weighted = tape.mul(fm, pi)?;
                    let placed = tape.scatter_rows(weighted, &rows, batch)?;
                    out = Some(match out {
                        Some(acc) => tape.add(acc, placed)?,
                        None => placed,
                    });
                }
                let logits = out.expect("every sample selects at least one expert");
                Ok(Forward {
                    logits,
                    experts: None,
                    gate: Some(gate),
                })
            }
        }
    }

    /// Training objective: mean cross-entropy, plus `lambda` times the mean
    /// per-expert binary cross-entropy for MoCSE.
    pub fn loss(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        labels: &[usize],
        opts: &LossOptions,
    ) -> Result<LossTerms> {
        let n = self.config.num_classes;
        if let Some(&bad) = labels.iter().find(|&&y| y >= n) {
            return Err(invalid(format!("label {bad} out of range for {n} classes")));
        }
        let fwd = self.forward(tape, vars, x)?;
        match fwd.experts {
            Some(experts) => combined_loss(tape, experts, fwd.logits, labels, opts),
            None => {
                let ce = cross_entropy(tape, fwd.logits, labels)?;
                Ok(LossTerms {
                    total: ce,
                    ce,
                    bce: None,
                })
            }
        }
    }

    /// Class scores for a `[B, H, W, C]` batch, no gradients.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let fwd = self.forward(&mut tape, &vars, xv)?;
        Ok(tape.value(fwd.logits)?.clone())
    }

    /// Output of class expert `n` alone, `[B, 2]` (MoCSE only).
    pub fn expert_logits(&self, n: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.config.kind != ModelKind::Mocse || n >= self.config.num_classes {
            return Err(invalid(format!(
                "no class expert {n} in a {} model",
                self.config.kind
            )));
        }
        let mut tape = Tape::new();
        let p = &self.params[n * TRUNK_PARAMS..(n + 1) * TRUNK_PARAMS];
        let vars: Vec<Var> = p.iter().map(|p| tape.constant(p.value.clone())).collect();
        let xv = tape.constant(x.clone());
        self.check_input(&tape, xv)?;
        let out = trunk::forward(&mut tape, &vars, xv)?;
        Ok(tape.value(out)?.clone())
    }
}

/// Non-parametric aggregator: stacks the `[B, 2]` outputs of the `n` experts
/// into `[B, N, 2]` and returns it with the `[B, N]` belongs-logit scores.
pub fn mocse_aggregate<T: Real>(
    tape: &mut Tape<T>,
    expert_outputs: &[Var],
    n: usize,
) -> Result<(Var, Var)> {
    if expert_outputs.len() != n {
        return Err(invalid(format!(
            "aggregator expects {n} expert outputs, got {}",
            expert_outputs.len()
        )));
    }
    let batch = tape.shape(expert_outputs[0])?[0];
    let joined = tape.concat(expert_outputs, 1)?;
    let experts = tape.reshape(joined, &[batch, n, 2])?;
    let belongs = tape.slice(experts, 2, BELONGS, 1)?;
    let scores = tape.reshape(belongs, &[batch, n])?;
    Ok((experts, scores))
}

/// `CE(softmax(scores), y) + lambda * mean_n BCE(expert_n, 1[y == n])` from
/// the `[B, N, 2]` expert outputs and `[B, N]` aggregated scores.
pub fn combined_loss<T: Real>(
    tape: &mut Tape<T>,
    experts: Var,
    scores: Var,
    labels: &[usize],
    opts: &LossOptions,
) -> Result<LossTerms> {
    let n = tape.shape(scores)?[1];
    if let Some(&bad) = labels.iter().find(|&&y| y >= n) {
        return Err(invalid(format!("label {bad} out of range for {n} classes")));
    }
    let ce = cross_entropy(tape, scores, labels)?;
    let bce = expert_bce(tape, experts, labels, n, opts.pos_weight)?;
    let weighted = tape.scale(bce, T::of(opts.lambda))?;
    let total = tape.add(ce, weighted)?;
    Ok(LossTerms {
        total,
        ce,
        bce: Some(bce),
    })
}

/// Mean over batch and experts of the two-class cross-entropy of each expert
/// against `1[y == n]`.
fn expert_bce<T: Real>(
    tape: &mut Tape<T>,
    experts: Var,
    labels: &[usize],
    n: usize,
    pos_weight: bool,
) -> Result<Var> {
    let batch = labels.len();
    let pairs = tape.reshape(experts, &[batch * n, 2])?;
    let pos = if pos_weight {
        T::of((n - 1) as f64)
    } else {
        T::one()
    };
    let mut w = vec![T::zero(); batch * n * 2];
    for (b, &y) in labels.iter().enumerate() {
        for k in 0..n {
            let row = (b * n + k) * 2;
            if k == y {
                w[row + BELONGS] = pos;
            } else {
                w[row + 1 - BELONGS] = T::one();
            }
        }
    }
    let weights = tape.constant(Tensor::new(&[batch * n, 2], w)?);
    Ok(weighted_nll(tape, pairs, weights, batch * n)?)
}

/// Linear gate without bias over the flattened input: softmax probabilities
/// and the `top_k` most probable experts per sample (ties to the lower index).
pub fn moe_gate<T: Real>(tape: &mut Tape<T>, gate_w: Var, x: Var, top_k: usize) -> Result<Gate> {
    let shape = tape.shape(x)?.to_vec();
    let m = tape.shape(gate_w)?[1];
    if top_k == 0 || top_k > m {
        return Err(invalid(format!("top_k {top_k} must lie in 1..={m}")));
    }
    let flat = tape.reshape(x, &[shape[0], shape[1..].iter().product()])?;
    let z = tape.matmul(flat, gate_w)?;
    let probs = tape.softmax(z)?;
    let selected = tape
        .value(probs)?
        .data()
        .chunks(m)
        .map(|row| top_k_indices(row, top_k))
        .collect();
    Ok(Gate { probs, selected })
}

/// Indices of the `k` largest values, best first, ties to the lower index.
pub fn top_k_indices<T: Real>(row: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Row-wise softmax of a `[.., 2]` or `[.., N]` tensor.
pub fn softmax_rows<T: Real>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    let n = *t.shape().last().unwrap_or(&1);
    t.data()
        .chunks(n)
        .map(|row| {
            let mut r = row.to_vec();
            softmax_in_place(&mut r);
            r.into_iter().map(|v| v.as_f64()).collect()
        })
        .collect()
}

/// Probability that the input belongs to the expert's class: softmax of the
/// two logits at [`BELONGS`].
pub fn true_probability(expert_output: &[f64; 2]) -> f64 {
    1.0 / (1.0 + (expert_output[1 - BELONGS] - expert_output[BELONGS]).exp())
}

/// Index of the largest score, ties to the lower index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
