use mocse_core::attack::*;
use mocse_core::model::{Model, ModelConfig};
use mocse_corrupt::SeededRng;
use ndgrad::Tensor;
use proptest::prelude::*;

const INPUT: [usize; 3] = [8, 8, 3];

fn batch(b: usize, seed: u64) -> Tensor<f32> {
    let mut rng = SeededRng::new(seed);
    Tensor::new(
        &[b, 8, 8, 3],
        (0..b * 192).map(|_| rng.uniform() as f32).collect(),
    )
    .unwrap()
}

fn model(seed: u64) -> Model<f32> {
    Model::init(ModelConfig::standard(2, 4, INPUT), seed).unwrap()
}

#[test]
fn projection_examples() {
    let inside = [0.01f64, -0.02, 0.03];
    assert_eq!(
        project_ball(&inside, Norm::Linf, 0.1).unwrap(),
        inside.to_vec()
    );
    assert_eq!(
        project_ball(&inside, Norm::L2, 0.1).unwrap(),
        inside.to_vec()
    );
    assert_eq!(
        project_ball(&[0.5f64, -0.05], Norm::Linf, 0.1).unwrap(),
        vec![0.1, -0.05]
    );
    assert!(project_ball(&[0.5f64], Norm::Linf, -1.0).is_err());
    assert!(Norm::from_p(1.0).is_err());
    assert_eq!(Norm::from_p(f64::INFINITY).unwrap(), Norm::Linf);
    assert_eq!("l2".parse::<Norm>().unwrap(), Norm::L2);
}

#[test]
fn l2_projection_recomputes_to_min_norm_delta() {
    let mut rng = SeededRng::new(77);
    for _ in 0..1000 {
        let n = 1 + rng.below(50) as usize;
        let scale = rng.uniform_in(0.0, 3.0);
        let v: Vec<f64> = (0..n).map(|_| scale * rng.gaussian()).collect();
        let delta = rng.uniform_in(0.01, 2.0);
        let before = Norm::L2.measure(v.iter().copied());
        let after = Norm::L2.measure(project_ball(&v, Norm::L2, delta).unwrap());
        assert!((after - before.min(delta)).abs() < 1e-6);
        assert!(after <= delta);
    }
}

#[test]
fn fgsm_steps_by_exactly_delta() {
    let m = model(1);
    let x = batch(4, 2).map(|v| 0.1 + 0.8 * v);
    let adv = fgsm(&m, &x, &[0, 1, 2, 3], 0.05).unwrap();
    for (a, b) in adv.data().iter().zip(x.data()) {
        let d = f64::from(*a) - f64::from(*b);
        assert!(d.abs() <= 0.05);
        assert!(d.abs() < 1e-6 || (d.abs() - 0.05).abs() < 1e-6, "{d}");
    }
    assert_eq!(fgsm(&m, &x, &[0, 1, 2, 3], 0.0).unwrap(), x);
    assert!(fgsm(&m, &x, &[0, 1, 2, 9], 0.1).is_err());
}

#[test]
fn single_step_pgd_is_fgsm() {
    let m = model(3);
    for seed in 0..20 {
        let x = batch(3, seed);
        let y = [0, 2, 3];
        let delta = 0.002 + 0.1 * SeededRng::new(seed).uniform();
        let cfg = AttackConfig {
            norm: Norm::Linf,
            delta,
            alpha: delta,
            iterations: 1,
            random_start: false,
            target: None,
            seed,
        };
        assert_eq!(
            pgd(&m, &x, &y, &cfg).unwrap(),
            fgsm(&m, &x, &y, delta).unwrap()
        );
    }
}

#[test]
fn random_start_is_seeded() {
    let m = model(4);
    let x = batch(2, 9);
    let cfg = AttackConfig {
        seed: 5,
        ..AttackConfig::default()
    };
    let a = pgd(&m, &x, &[1, 2], &cfg).unwrap();
    assert_eq!(a, pgd(&m, &x, &[1, 2], &cfg).unwrap());
    assert_ne!(
        a,
        pgd(&m, &x, &[1, 2], &AttackConfig { seed: 6, ..cfg }).unwrap()
    );
}

#[test]
fn config_validation() {
    assert!(AttackConfig::default().validate().is_ok());
    assert!(AttackConfig {
        delta: 0.0,
        ..Default::default()
    }
    .validate()
    .is_ok());
    assert!(AttackConfig {
        alpha: 0.0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(AttackConfig {
        iterations: 0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(AttackConfig {
        delta: f64::NAN,
        ..Default::default()
    }
    .validate()
    .is_err());
}

#[test]
fn objective_is_clean_confidence_at_the_clean_point() {
    let m = model(8);
    let x = batch(5, 1);
    let y = [0, 1, 2, 3, 0];
    let obj = attack_objective(&m, &x, &y, None).unwrap();
    let probs = mocse_core::model::softmax_rows(&m.logits(&x).unwrap());
    for ((o, p), &yi) in obj.iter().zip(&probs).zip(&y) {
        assert_eq!(*o, p[yi]);
        assert!((0.0..=1.0).contains(o));
    }
    let t = attack_objective(&m, &x, &y, Some(2)).unwrap();
    assert!(t.iter().zip(&probs).all(|(o, p)| *o == p[2]));
}

#[test]
fn targeted_attack_raises_target_confidence() {
    let m = model(10);
    let x = batch(6, 4);
    let y = [0, 1, 2, 3, 0, 1];
    let cfg = AttackConfig {
        target: Some(3),
        delta: 0.1,
        alpha: 0.02,
        iterations: 10,
        random_start: false,
        ..Default::default()
    };
    let adv = pgd(&m, &x, &y, &cfg).unwrap();
    let before: f64 = attack_objective(&m, &x, &y, Some(3)).unwrap().iter().sum();
    let after: f64 = attack_objective(&m, &adv, &y, Some(3))
        .unwrap()
        .iter()
        .sum();
    assert!(after > before, "{before} -> {after}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pgd_output_is_feasible(seed in 0u64..10_000, l2 in any::<bool>(), iters in 1usize..4, rs in any::<bool>()) {
        let mut rng = SeededRng::new(seed);
        let m = model(seed % 3);
        let x = batch(2, seed);
        let delta = rng.uniform_in(0.0, if l2 { 2.0 } else { 0.3 });
        let cfg = AttackConfig {
            norm: if l2 { Norm::L2 } else { Norm::Linf },
            delta,
            alpha: rng.uniform_in(1e-3, 0.5),
            iterations: iters,
            random_start: rs,
            target: None,
            seed,
        };
        let adv = pgd(&m, &x, &[0, 3], &cfg).unwrap();
        for (a, b) in adv.data().chunks(192).zip(x.data().chunks(192)) {
            let d = cfg.norm.measure(a.iter().zip(b).map(|(u, v)| f64::from(*u) - f64::from(*v)));
            prop_assert!(d <= delta, "norm {d} > {delta}");
            prop_assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
