//! Release-gate property suite: gradients, metric oracles, attack
//! feasibility, corruption invariants and dual-path evaluation.

use std::path::PathBuf;
use std::time::Instant;

use mocse_corrupt::{
    apply_with_manifest, CorruptionKind, CorruptionSpec, Family, Image, Manifest, SeededRng,
};
use ndgrad::{fault, grad_check, suite, GradError, Primitive, Tensor};

use crate::attack::{fgsm, pgd, AttackConfig, Norm};
use crate::data::checkpoint::{decode, encode};
use crate::data::synth::synth_dataset;
use crate::data::{Dataset, Split};
use crate::error::Result;
use crate::eval::{
    corruption_matrices, export_corruptions, overall_average, per_corruption_average,
    CorruptionSource, SEVERITIES,
};
use crate::model::{LossOptions, Model, ModelConfig};
use crate::train::{train, TrainConfig};

/// Gradient tolerance (max relative error) for every check.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Allowed overshoot of `||x_adv - x||_p` over the radius.
pub const FEASIBILITY_SLACK: f64 = 1e-7;

/// Published per-corruption accuracies (percent) of a PreAct-ResNet-18 on
/// CIFAR-10, in `CorruptionKind::ALL` order. Columns: standard training,
/// MoCSE, adversarial training, adversarially trained MoCSE.
pub const REFERENCE_RESULTS: [[f64; 4]; 19] = [
    [17.63, 26.37, 52.96, 59.83],
    [17.66, 25.66, 50.51, 56.81],
    [25.53, 33.17, 52.06, 57.79],
    [25.43, 35.77, 60.12, 64.73],
    [16.68, 17.87, 30.33, 29.85],
    [20.18, 23.71, 39.64, 38.56],
    [30.69, 31.87, 38.40, 38.29],
    [71.48, 77.18, 75.75, 76.61],
    [19.74, 24.12, 36.33, 35.99],
    [70.35, 67.22, 51.37, 53.07],
    [74.40, 67.60, 40.73, 42.21],
    [43.51, 43.10, 17.41, 17.67],
    [88.94, 85.54, 64.11, 66.13],
    [82.67, 82.90, 72.28, 75.55],
    [52.08, 41.88, 22.14, 21.90],
    [19.59, 19.70, 40.98, 40.95],
    [28.10, 36.73, 66.55, 67.33],
    [52.00, 55.87, 76.08, 77.70],
    [86.08, 83.00, 74.29, 75.78],
];
/// The stated averages of the four columns above.
pub const REFERENCE_AVERAGES: [f64; 4] = [44.35, 46.28, 50.63, 52.46];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Worst value observed, or the first failing property.
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} {:<22} {:>7.1}s  {}",
            self.name, self.seconds, self.detail
        )
    }
}

fn timed(name: &'static str, body: impl FnOnce() -> std::result::Result<String, String>) -> Check {
    let t = Instant::now();
    let (passed, detail) = match body() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Check {
        name,
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn uniform(seed: u64) -> impl FnMut() -> f64 {
    let mut r = SeededRng::new(seed);
    move || r.uniform()
}

/// Worst relative gradient error of the training loss of `model` with
/// respect to each parameter tensor and the input.
pub fn end_to_end_grad_error(
    model: &Model<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
) -> ndgrad::Result<f64> {
    let opts = LossOptions::default();
    let lift = |e: crate::CoreError| GradError::InvalidArgument {
        op: "model_loss",
        msg: e.to_string(),
    };
    let mut worst = 0.0f64;
    for k in 0..model.params().len() {
        let e = grad_check(
            |tape, v| {
                let mut vars = model.bind(tape, false);
                vars[k] = v;
                let xv = tape.constant(x.clone());
                Ok(model
                    .loss(tape, &vars, xv, labels, &opts)
                    .map_err(lift)?
                    .total)
            },
            &model.params()[k].value,
            1e-6,
        )?;
        worst = worst.max(e);
    }
    let e = grad_check(
        |tape, v| {
            let vars = model.bind(tape, false);
            Ok(model
                .loss(tape, &vars, v, labels, &opts)
                .map_err(lift)?
                .total)
        },
        x,
        1e-6,
    )?;
    Ok(worst.max(e))
}

/// Adds uniform noise in `[-amount, amount]` to every parameter. Zero-init
/// biases otherwise leave pre-activations of dead patches exactly on the
/// ReLU kink, where central differences are meaningless.
pub fn jitter(model: &mut Model<f64>, amount: f64, seed: u64) {
    let mut r = SeededRng::new(seed);
    for p in model.params_mut() {
        for v in p.value.data_mut() {
            *v += r.uniform_in(-amount, amount);
        }
    }
}

/// Finite-difference checks of every primitive and of the end-to-end loss
/// of all three model kinds (two-sample batches, `f64`). `fault` corrupts
/// one backward rule first, as a negative control.
pub fn gradients(fault: Option<Primitive>) -> Check {
    timed("gradients", || {
        let _guard = fault.map(fault::inject);
        let prims = suite::primitive_grad_checks(&mut uniform(11)).map_err(|e| e.to_string())?;
        let mut worst = 0.0f64;
        for (p, e) in &prims {
            if !(*e < GRAD_TOLERANCE) {
                return Err(format!("primitive {p}: relative error {e:.3e}"));
            }
            worst = worst.max(*e);
        }
        let input = [8, 8, 3];
        let mut r = uniform(5);
        let x = Tensor::new(&[2, 8, 8, 3], (0..2 * 8 * 8 * 3).map(|_| r()).collect())
            .expect("shape matches");
        for cfg in [
            ModelConfig::standard(3, 10, input),
            ModelConfig::mocse(2, 10, input),
            ModelConfig::moe(3, 2, 2, 10, input),
        ] {
            let mut m = Model::<f64>::init(cfg, 7).map_err(|e| e.to_string())?;
            jitter(&mut m, 0.05, 8);
            let e = end_to_end_grad_error(&m, &x, &[1, 6]).map_err(|e| e.to_string())?;
            if !(e < GRAD_TOLERANCE) {
                return Err(format!("{} loss: relative error {e:.3e}", cfg.kind));
            }
            worst = worst.max(e);
        }
        Ok(format!(
            "{} primitives + 3 models, worst {worst:.2e}",
            prims.len()
        ))
    })
}

/// Averages against a brute-force recount on random matrices, and the
/// published averages from their per-corruption rows.
pub fn metric_oracles(matrices: usize) -> Check {
    timed("metric oracles", || {
        let mut r = SeededRng::new(2024);
        let mut worst = 0.0f64;
        for i in 0..matrices {
            let m: Vec<Vec<f64>> = (0..19)
                .map(|_| (0..5).map(|_| r.uniform()).collect())
                .collect();
            let ours = overall_average(&per_corruption_average(&m).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            let mut total = 0.0;
            for row in &m {
                for v in row {
                    total += v;
                }
            }
            let err = (ours - total / 95.0).abs();
            if err > 1e-12 {
                return Err(format!(
                    "matrix {i}: differs from the brute-force mean by {err:.3e}"
                ));
            }
            worst = worst.max(err);
        }
        let mut gaps = Vec::new();
        for (col, stated) in REFERENCE_AVERAGES.iter().enumerate() {
            let per: Vec<f64> = REFERENCE_RESULTS.iter().map(|row| row[col]).collect();
            let avg = overall_average(&per).map_err(|e| e.to_string())?;
            if (avg - stated).abs() > 0.01 {
                return Err(format!(
                    "reference column {col}: {avg:.4} vs stated {stated}"
                ));
            }
            gaps.push(format!("{avg:.4}"));
        }
        Ok(format!(
            "{matrices} matrices (worst {worst:.1e}); reference averages {}",
            gaps.join(", ")
        ))
    })
}

/// Random PGD invocations (mixed norms, radii, steps, iterations, random
/// starts) must land inside the ball and the unit box; one-step PGD from
/// the clean point with `alpha = delta` must equal FGSM bitwise.
pub fn attack_feasibility(invocations: usize) -> Check {
    timed("attack feasibility", || {
        let input = [8, 8, 3];
        let model = Model::<f32>::init(ModelConfig::standard(2, 10, input), 3)
            .map_err(|e| e.to_string())?;
        let mut r = SeededRng::new(99);
        let mut worst = f64::NEG_INFINITY;
        for i in 0..invocations {
            let data: Vec<f32> = (0..2 * 8 * 8 * 3).map(|_| r.uniform() as f32).collect();
            let x = Tensor::new(&[2, 8, 8, 3], data).expect("shape matches");
            let labels = [r.below(10) as usize, r.below(10) as usize];
            let norm = if r.below(2) == 0 {
                Norm::Linf
            } else {
                Norm::L2
            };
            let delta = match norm {
                Norm::Linf => r.uniform_in(0.0, 0.3),
                Norm::L2 => r.uniform_in(0.0, 3.0),
            };
            let cfg = AttackConfig {
                norm,
                delta,
                alpha: r.uniform_in(1e-3, 0.5),
                iterations: 1 + r.below(5) as usize,
                random_start: r.below(2) == 0,
                target: None,
                seed: i as u64,
            };
            let adv = pgd(&model, &x, &labels, &cfg).map_err(|e| format!("invocation {i}: {e}"))?;
            if adv.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(format!("invocation {i}: output leaves [0, 1]"));
            }
            for b in 0..2 {
                let n = 8 * 8 * 3;
                let d = norm.measure(
                    adv.data()[b * n..(b + 1) * n]
                        .iter()
                        .zip(&x.data()[b * n..(b + 1) * n])
                        .map(|(a, c)| f64::from(*a) - f64::from(*c)),
                );
                if d > delta + FEASIBILITY_SLACK {
                    return Err(format!(
                        "invocation {i} sample {b}: {norm} distance {d} > delta {delta}"
                    ));
                }
                worst = worst.max(d - delta);
            }
            if i % 50 == 0 {
                let one = AttackConfig {
                    norm: Norm::Linf,
                    alpha: delta,
                    iterations: 1,
                    random_start: false,
                    ..cfg
                };
                let a = pgd(
                    &model,
                    &x,
                    &labels,
                    &AttackConfig {
                        delta: delta.min(0.3),
                        ..one
                    },
                )
                .map_err(|e| e.to_string())?;
                let f = fgsm(&model, &x, &labels, delta.min(0.3)).map_err(|e| e.to_string())?;
                if a.data()
                    .iter()
                    .zip(f.data())
                    .any(|(p, q)| p.to_bits() != q.to_bits())
                {
                    return Err(format!("invocation {i}: one-step PGD differs from FGSM"));
                }
            }
        }
        Ok(format!(
            "{invocations} invocations, max (distance - delta) {worst:.2e}"
        ))
    })
}

/// Random 32x32 RGB image with piecewise-smooth structure: colour
/// gradients, sharp-edged discs and mild texture.
pub fn random_scene(seed: u64) -> Image {
    let mut r = SeededRng::new(seed ^ 0x5CE4E);
    let (h, w) = (32, 32);
    let coef: Vec<f64> = (0..9).map(|_| r.uniform()).collect();
    let texture = 0.15 * r.uniform();
    let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..4)
        .map(|_| {
            let (cy, cx, rad) = (
                r.uniform() * 32.0,
                r.uniform() * 32.0,
                3.0 + 8.0 * r.uniform(),
            );
            (cy, cx, rad, [r.uniform(), r.uniform(), r.uniform()])
        })
        .collect();
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f64 / 31.0, x as f64 / 31.0);
            for c in 0..3 {
                let mut v = 0.6 * (coef[c] * fy + coef[c + 3] * fx) + 0.4 * coef[c + 6];
                for &(cy, cx, rad, col) in &discs {
                    if (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) < rad * rad {
                        v = col[c];
                    }
                }
                v += texture * (r.uniform() - 0.5);
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Image::new(h, w, 3, data).expect("shape matches")
}

/// Determinism, range and severity-0 identity for every kind, and
/// monotone pixel deviation for the noise and blur kinds, on `images`
/// random 32x32 images per kind.
pub fn corruption_suite(images: usize, manifest: &Manifest) -> Check {
    timed("corruption suite", || {
        let scenes: Vec<Image> = (0..images as u64).map(random_scene).collect();
        for kind in CorruptionKind::ALL {
            let monotone = matches!(kind.family(), Family::Noise | Family::Blur);
            for (i, img) in scenes.iter().enumerate() {
                let i = i as u64;
                let run = |s: u8| -> std::result::Result<Image, String> {
                    let spec = CorruptionSpec::new(kind, s, 17).map_err(|e| e.to_string())?;
                    apply_with_manifest(img, &spec, i, manifest)
                        .map_err(|e| format!("{kind} s{s}: {e}"))
                };
                if run(0)? != *img {
                    return Err(format!("{kind} severity 0 changes image {i}"));
                }
                let mut last = 0.0;
                for s in SEVERITIES {
                    let a = run(s)?;
                    let b = run(s)?;
                    if a.data()
                        .iter()
                        .zip(b.data())
                        .any(|(p, q)| p.to_bits() != q.to_bits())
                    {
                        return Err(format!("{kind} s{s} image {i}: not deterministic"));
                    }
                    if a.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                        return Err(format!("{kind} s{s} image {i}: value outside [0, 1]"));
                    }
                    let dev = a.mean_abs_diff(img);
                    if monotone && dev < last {
                        return Err(format!(
                            "{kind} image {i}: deviation falls from {last:.5} to {dev:.5} at s{s}"
                        ));
                    }
                    last = dev;
                }
            }
        }
        Ok(format!(
            "19 kinds x {images} images; 9 noise/blur kinds monotone"
        ))
    })
}

type Matrix3 = Vec<Vec<Vec<f64>>>;

/// Exports the full corruption tree of `dataset` into a scratch directory
/// and compares the resulting matrix with on-the-fly evaluation, bitwise.
pub fn dual_path(
    model: &Model<f32>,
    dataset: &Dataset,
    manifest: &Manifest,
    seed: u64,
    threads: usize,
) -> Check {
    timed("dual-path evaluation", || {
        let dir = scratch_dir();
        let out = (|| -> Result<(Matrix3, Matrix3)> {
            export_corruptions(
                dataset,
                manifest,
                seed,
                &dir,
                &CorruptionKind::ALL,
                &SEVERITIES,
                threads,
            )?;
            let fly = corruption_matrices(
                &[model],
                dataset,
                CorruptionSource::OnTheFly { manifest, seed },
                &CorruptionKind::ALL,
                &SEVERITIES,
                threads,
            )?;
            let disk = corruption_matrices(
                &[model],
                dataset,
                CorruptionSource::Directory(&dir),
                &CorruptionKind::ALL,
                &SEVERITIES,
                threads,
            )?;
            Ok((fly, disk))
        })();
        let _ = std::fs::remove_dir_all(&dir);
        let (fly, disk) = out.map_err(|e| e.to_string())?;
        for (k, (a, b)) in fly[0].iter().zip(&disk[0]).enumerate() {
            for (s, (x, y)) in a.iter().zip(b).enumerate() {
                if x.to_bits() != y.to_bits() {
                    return Err(format!(
                        "{} s{}: on-the-fly {x} vs exported {y}",
                        CorruptionKind::ALL[k],
                        s + 1
                    ));
                }
            }
        }
        Ok(format!(
            "19 x 5 cells over {} images agree bitwise",
            dataset.len()
        ))
    })
}

fn scratch_dir() -> PathBuf {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos());
    std::env::temp_dir().join(format!("mocse-selftest-{}-{nanos}", std::process::id()))
}

/// A small StandardNet trained for two epochs on synthetic data and passed
/// through the checkpoint codec, with its held-out split.
pub fn small_trained_model() -> Result<(Model<f32>, Dataset)> {
    let train_set = synth_dataset(10, 20, 32, 5, Split::Train)?;
    let test = synth_dataset(10, 5, 32, 5, Split::Test)?;
    let mut model = Model::init(ModelConfig::standard(4, 10, [32, 32, 3]), 5)?;
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 20,
        seed: 5,
        ..TrainConfig::default()
    };
    train(&mut model, &train_set, None, &cfg, None, &mut |_, _, _| {
        Ok(())
    })?;
    Ok((decode(&encode(&model, None))?.model, test))
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    /// Corrupt this primitive's backward rule during the gradient checks.
    pub fault: Option<Primitive>,
    pub threads: usize,
}

/// Runs every check in order.
pub fn run(opts: &Options) -> Vec<Check> {
    let manifest = Manifest::builtin();
    let mut checks = vec![
        gradients(opts.fault),
        metric_oracles(1000),
        attack_feasibility(1000),
        corruption_suite(50, manifest),
    ];
    checks.push(match small_trained_model() {
        Ok((model, test)) => dual_path(&model, &test, manifest, 1, opts.threads.max(1)),
        Err(e) => Check {
            name: "dual-path evaluation",
            passed: false,
            detail: e.to_string(),
            seconds: 0.0,
        },
    });
    checks
}
