use mocse_core::model::*;
use ndgrad::{grad_check, Tape, Tensor, Var};
use proptest::prelude::*;

const INPUT: [usize; 3] = [8, 8, 3];

fn ramp(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = mocse_corrupt::SeededRng::new(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform()).collect()).unwrap()
}

fn logits_f64(model: &Model<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    model.logits(x).unwrap()
}

#[test]
fn fresh_standard_logits_are_finite_and_pure() {
    let m = Model::<f32>::init(ModelConfig::standard(4, 10, [16, 16, 3]), 3).unwrap();
    let one = ramp(&[1, 16, 16, 3], 1);
    let mut data = one.data().to_vec();
    data.extend_from_slice(one.data());
    let x = Tensor::<f64>::new(&[2, 16, 16, 3], data)
        .unwrap()
        .cast::<f32>();
    let out = m.logits(&x).unwrap();
    assert_eq!(out.shape(), &[2, 10]);
    assert!(out.is_finite());
    assert_eq!(out.data()[..10], out.data()[10..]);
    for row in softmax_rows(&out) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn input_shape_is_checked() {
    let m = Model::<f32>::init(ModelConfig::standard(2, 10, INPUT), 0).unwrap();
    let err = m.logits(&Tensor::zeros(&[1, 16, 8, 3])).unwrap_err();
    assert!(err.to_string().contains("model_input"), "{err}");
}

#[test]
fn expert_outputs_two_normalised_logits() {
    let m = Model::<f64>::init(ModelConfig::mocse(2, 4, INPUT), 5).unwrap();
    let x = ramp(&[3, 8, 8, 3], 2);
    for n in 0..4 {
        let out = m.expert_logits(n, &x).unwrap();
        assert_eq!(out.shape(), &[3, 2]);
        for row in out.data().chunks(2) {
            let p = true_probability(&[row[0], row[1]]);
            assert!(p > 0.0 && p < 1.0);
            let q = softmax_rows(&Tensor::<f64>::from_f64(&[2], row).unwrap());
            assert!((q[0].iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!((q[0][BELONGS] - p).abs() < 1e-12);
        }
    }
    assert_eq!(true_probability(&[0.0, 0.0]), 0.5);
    assert!(m.expert_logits(4, &x).is_err());
}

fn aggregate(outputs: &[[f64; 2]]) -> Vec<f64> {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = outputs
        .iter()
        .map(|o| tape.constant(Tensor::from_f64(&[1, 2], o).unwrap()))
        .collect();
    let (_, scores) = mocse_aggregate(&mut tape, &vars, outputs.len()).unwrap();
    tape.value(scores).unwrap().data().to_vec()
}

#[test]
fn aggregator_returns_belongs_logits() {
    let outs = [[0.2, 3.0], [0.0, -1.0], [1.0, 0.5], [-2.0, -0.5]];
    let scores = aggregate(&outs);
    assert_eq!(scores, vec![3.0, -1.0, 0.5, -0.5]);
    assert_eq!(argmax(&scores), 0);

    let perm = [2, 0, 3, 1];
    let permuted: Vec<[f64; 2]> = perm.iter().map(|&i| outs[i]).collect();
    assert_eq!(
        aggregate(&permuted),
        perm.iter().map(|&i| scores[i]).collect::<Vec<_>>()
    );

    let mut tape = Tape::<f64>::new();
    let v = tape.constant(Tensor::zeros(&[1, 2]));
    assert!(mocse_aggregate(&mut tape, &[v, v], 3).is_err());
}

#[test]
fn aggregator_has_no_parameters() {
    let cfg = ModelConfig::mocse(3, 10, [32, 32, 3]);
    let specs = layout(&cfg);
    assert!(specs.iter().all(|s| s.name.starts_with("expert")));
    let per_expert: usize = layout(&ModelConfig {
        num_classes: 2,
        ..ModelConfig::standard(3, 2, [32, 32, 3])
    })
    .iter()
    .map(ParamSpec::numel)
    .sum();
    assert_eq!(param_count(&cfg), 10 * per_expert);
}

fn combined(outputs: &[Vec<[f64; 2]>], labels: &[usize]) -> (f64, f64, f64) {
    let mut tape = Tape::<f64>::new();
    let n = outputs[0].len();
    let b = outputs.len();
    let flat: Vec<f64> = outputs.iter().flatten().flatten().copied().collect();
    let experts = tape.constant(Tensor::from_f64(&[b, n, 2], &flat).unwrap());
    let s = tape.slice(experts, 2, BELONGS, 1).unwrap();
    let scores = tape.reshape(s, &[b, n]).unwrap();
    let t = combined_loss(&mut tape, experts, scores, labels, &LossOptions::default()).unwrap();
    let v = |x: Var| tape.value(x).unwrap().item().unwrap();
    (v(t.total), v(t.ce), v(t.bce.unwrap()))
}

#[test]
fn uniform_experts_give_analytic_losses() {
    let (total, ce, bce) = combined(&[vec![[0.0, 0.0]; 10], vec![[0.0, 0.0]; 10]], &[3, 7]);
    assert!((ce - 10f64.ln()).abs() < 1e-12);
    assert!((bce - 2f64.ln()).abs() < 1e-12);
    assert!((total - ce - bce).abs() < 1e-12);

    // The same through a model whose parameters are all zero.
    let cfg = ModelConfig::mocse(2, 10, INPUT);
    let zero: Vec<Param<f64>> = layout(&cfg)
        .into_iter()
        .map(|s| Param {
            value: Tensor::zeros(&s.shape),
            name: s.name,
        })
        .collect();
    let m = Model::from_params(cfg, zero).unwrap();
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape, false);
    let x = tape.constant(ramp(&[2, 8, 8, 3], 9));
    let t = m
        .loss(&mut tape, &vars, x, &[0, 9], &LossOptions::default())
        .unwrap();
    assert!((tape.value(t.ce).unwrap().item().unwrap() - 10f64.ln()).abs() < 1e-12);
    assert!((tape.value(t.bce.unwrap()).unwrap().item().unwrap() - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn perfect_experts_drive_the_loss_to_zero() {
    let mut last = f64::INFINITY;
    for k in [2.0, 5.0, 10.0, 20.0] {
        let outs: Vec<[f64; 2]> = (0..10)
            .map(|n| if n == 4 { [-k, k] } else { [k, -k] })
            .collect();
        let (total, _, _) = combined(&[outs], &[4]);
        assert!(total < last);
        last = total;
    }
    assert!(last < 1e-8, "{last}");
}

#[test]
fn labels_are_validated() {
    let m = Model::<f64>::init(ModelConfig::mocse(2, 3, INPUT), 1).unwrap();
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape, false);
    let x = tape.constant(ramp(&[1, 8, 8, 3], 1));
    assert!(m
        .loss(&mut tape, &vars, x, &[3], &LossOptions::default())
        .is_err());
}

#[test]
fn pos_weight_scales_the_positive_term() {
    let outs = [[0.0, 0.0]; 5];
    let mut tape = Tape::<f64>::new();
    let flat: Vec<f64> = outs.iter().flatten().copied().collect();
    let experts = tape.constant(Tensor::from_f64(&[1, 5, 2], &flat).unwrap());
    let s = tape.slice(experts, 2, BELONGS, 1).unwrap();
    let scores = tape.reshape(s, &[1, 5]).unwrap();
    let opts = LossOptions {
        lambda: 1.0,
        pos_weight: true,
    };
    let t = combined_loss(&mut tape, experts, scores, &[0], &opts).unwrap();
    // (4 ln2 + 4 ln2) / 5 with the single positive weighted by 4.
    let bce = tape.value(t.bce.unwrap()).unwrap().item().unwrap();
    assert!((bce - 8.0 * 2f64.ln() / 5.0).abs() < 1e-12);
}

/// Relative gradient error of the training loss with respect to every
/// parameter tensor and the input.
fn end_to_end_error(model: &Model<f64>, x: &Tensor<f64>, labels: &[usize]) -> f64 {
    let opts = LossOptions::default();
    let mut worst = 0.0f64;
    for k in 0..model.params().len() {
        let e = grad_check(
            |tape, v| {
                let mut vars = model.bind(tape, false);
                vars[k] = v;
                let xv = tape.constant(x.clone());
                Ok(model
                    .loss(tape, &vars, xv, labels, &opts)
                    .map_err(|_| ndgrad::GradError::ForeignVar)?
                    .total)
            },
            &model.params()[k].value,
            1e-6,
        )
        .unwrap();
        worst = worst.max(e);
    }
    let e = grad_check(
        |tape, v| {
            let vars = model.bind(tape, false);
            Ok(model
                .loss(tape, &vars, v, labels, &opts)
                .map_err(|_| ndgrad::GradError::ForeignVar)?
                .total)
        },
        x,
        1e-6,
    )
    .unwrap();
    worst.max(e)
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let x = ramp(&[2, 8, 8, 3], 11);
    for cfg in [
        ModelConfig::standard(3, 10, INPUT),
        ModelConfig::mocse(2, 10, INPUT),
        ModelConfig::moe(3, 2, 2, 10, INPUT),
    ] {
        let mut m = Model::<f64>::init(cfg, 7).unwrap();
        // Zero biases leave dead patches exactly on the ReLU kink.
        mocse_core::selftest::jitter(&mut m, 0.05, 8);
        let err = end_to_end_error(&m, &x, &[1, 6]);
        assert!(err < 1e-4, "{:?}: {err}", cfg.kind);
    }
}

#[test]
fn zero_gate_is_uniform_and_top_k_all_selects_everything() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(ramp(&[3, 8, 8, 3], 4));
    let w = tape.constant(Tensor::zeros(&[192, 4]));
    let g = moe_gate(&mut tape, w, x, 4).unwrap();
    for row in tape.value(g.probs).unwrap().data().chunks(4) {
        assert!(row.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }
    for s in &g.selected {
        assert_eq!(s, &vec![0, 1, 2, 3]);
    }
    let g1 = moe_gate(&mut tape, w, x, 1).unwrap();
    assert!(g1.selected.iter().all(|s| s == &vec![0]));
    assert!(moe_gate(&mut tape, w, x, 5).is_err());
    assert!(moe_gate(&mut tape, w, x, 0).is_err());
}

#[test]
fn gate_matches_direct_softmax() {
    let xs = ramp(&[2, 8, 8, 3], 5);
    let ws = ramp(&[192, 3], 6).map(|v| v - 0.5);
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(xs.clone());
    let w = tape.constant(ws.clone());
    let g = moe_gate(&mut tape, w, x, 2).unwrap();
    let probs = tape.value(g.probs).unwrap().data().to_vec();
    for b in 0..2 {
        let z: Vec<f64> = (0..3)
            .map(|m| {
                (0..192)
                    .map(|d| xs.data()[b * 192 + d] * ws.data()[d * 3 + m])
                    .sum()
            })
            .collect();
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        for m in 0..3 {
            assert!((probs[b * 3 + m] - z[m].exp() / denom).abs() < 1e-7);
        }
        assert_eq!(g.selected[b], top_k_indices(&probs[b * 3..b * 3 + 3], 2));
    }
}

#[test]
fn top_k_breaks_ties_towards_lower_index() {
    assert_eq!(top_k_indices(&[0.2, 0.4, 0.4, 0.0], 2), vec![1, 2]);
    assert_eq!(top_k_indices(&[0.5, 0.5], 1), vec![0]);
    assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
}

/// Standard network whose parameters are the trunk of gated expert `m`.
fn expert_as_standard(moe: &Model<f64>, m: usize) -> Model<f64> {
    let cfg = ModelConfig::standard(moe.config().width, moe.num_classes(), moe.config().input);
    let p = &moe.params()[1 + m * TRUNK_PARAMS..1 + (m + 1) * TRUNK_PARAMS];
    let params = layout(&cfg)
        .into_iter()
        .zip(p)
        .map(|(s, q)| Param {
            name: s.name,
            value: q.value.clone(),
        })
        .collect();
    Model::from_params(cfg, params).unwrap()
}

#[test]
fn single_expert_moe_is_that_expert() {
    let moe = Model::<f64>::init(ModelConfig::moe(1, 2, 1, 5, INPUT), 3).unwrap();
    let x = ramp(&[3, 8, 8, 3], 3);
    let a = logits_f64(&moe, &x);
    let b = logits_f64(&expert_as_standard(&moe, 0), &x);
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn identical_experts_with_full_top_k_reproduce_the_expert() {
    let mut moe = Model::<f64>::init(ModelConfig::moe(3, 2, 3, 5, INPUT), 4).unwrap();
    for m in 1..3 {
        for k in 0..TRUNK_PARAMS {
            let v = moe.params()[1 + k].value.clone();
            moe.params_mut()[1 + m * TRUNK_PARAMS + k].value = v;
        }
    }
    let x = ramp(&[2, 8, 8, 3], 8);
    let a = logits_f64(&moe, &x);
    let b = logits_f64(&expert_as_standard(&moe, 0), &x);
    for (u, v) in a.data().iter().zip(b.data()) {
        assert!((u - v).abs() < 1e-6);
    }
}

#[test]
fn full_top_k_equals_brute_force_mixture() {
    let moe = Model::<f64>::init(ModelConfig::moe(3, 2, 3, 5, INPUT), 12).unwrap();
    let x = ramp(&[2, 8, 8, 3], 13);
    let out = logits_f64(&moe, &x);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w = tape.constant(moe.params()[0].value.clone());
    let g = moe_gate(&mut tape, w, xv, 3).unwrap();
    let pi = tape.value(g.probs).unwrap().data().to_vec();
    let experts: Vec<Tensor<f64>> = (0..3)
        .map(|m| logits_f64(&expert_as_standard(&moe, m), &x))
        .collect();
    for b in 0..2 {
        for c in 0..5 {
            let brute: f64 = (0..3)
                .map(|m| pi[b * 3 + m] * experts[m].data()[b * 5 + c])
                .sum();
            assert!((out.data()[b * 5 + c] - brute).abs() < 1e-6);
        }
    }
}

#[test]
fn unselected_experts_are_not_evaluated() {
    let mut moe = Model::<f64>::init(ModelConfig::moe(3, 2, 1, 5, INPUT), 2).unwrap();
    moe.params_mut()[0].value = Tensor::zeros(&[192, 3]);
    for k in TRUNK_PARAMS + 1..moe.params().len() {
        let p = &mut moe.params_mut()[k].value;
        *p = p.map(|_| f64::NAN);
    }
    let out = moe.logits(&ramp(&[2, 8, 8, 3], 1)).unwrap();
    assert!(out.is_finite());
}

#[test]
fn init_is_deterministic_and_counts_are_pure() {
    let cfg = ModelConfig::mocse(2, 10, [32, 32, 3]);
    let a = Model::<f32>::init(cfg, 42).unwrap();
    let b = Model::<f32>::init(cfg, 42).unwrap();
    let c = Model::<f32>::init(cfg, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.param_hash(), c.param_hash());
    assert_eq!(a.param_count(), param_count(&cfg));
    assert_eq!(
        param_count(&ModelConfig::standard(6, 10, [32, 32, 3])),
        4066
    );
    assert_eq!(param_count(&cfg), 4100);
    for p in a.params() {
        if p.name.ends_with(".b") {
            assert!(p.value.data().iter().all(|&v| v == 0.0));
        }
    }
    assert!(Model::<f32>::init(ModelConfig::standard(0, 10, [32, 32, 3]), 1).is_err());
    assert!("resnet".parse::<ModelKind>().is_err());
}

#[test]
fn matched_width_is_within_ten_percent() {
    for (w, n) in [(6, 10), (8, 10), (12, 10), (6, 5)] {
        let (ew, mid, gap) = matched_expert_width(w, n, [32, 32, 3]);
        let std = param_count(&ModelConfig::standard(w, n, [32, 32, 3])) as f64;
        let moc = param_count(&ModelConfig::mocse(ew, n, [32, 32, 3]).with_mid_width(mid)) as f64;
        assert!((moc - std).abs() / std < 0.10, "w={w} n={n}: {gap}");
        assert_eq!((moc - std).abs() / std, gap);
    }
    // The desk-scale pairing keeps the standard (e, 2e) shape.
    assert_eq!(
        matched_expert_width(6, 10, [32, 32, 3]),
        (2, 4, (4100.0 - 4066.0) / 4066.0)
    );
}

proptest! {
    #[test]
    fn argmax_survives_increasing_transforms(scores in prop::collection::vec(-5.0f64..5.0, 2..12), a in 0.1f64..3.0, b in -2.0f64..2.0) {
        let t: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
        prop_assert_eq!(argmax(&scores), argmax(&t));
    }

    #[test]
    fn gate_probabilities_form_a_simplex(seed in 0u64..1000) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(ramp(&[2, 8, 8, 3], seed));
        let w = tape.constant(ramp(&[192, 4], seed + 1).map(|v| 2.0 * v - 1.0));
        let g = moe_gate(&mut tape, w, x, 2).unwrap();
        for row in tape.value(g.probs).unwrap().data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
        prop_assert!(g.selected.iter().all(|s| s.len() == 2));
    }
}
