use mocse_core::attack::AttackConfig;
use mocse_core::data::synth::synth_dataset;
use mocse_core::data::{Dataset, Split};
use mocse_core::eval::*;
use mocse_core::model::{argmax, Model, ModelConfig, ModelKind};
use mocse_corrupt::{CorruptionKind, Manifest};
use proptest::prelude::*;

#[test]
fn accuracy_counts_matches() {
    assert_eq!(accuracy_of(&[0, 1, 2, 3], &[0, 1, 0, 0]).unwrap(), 0.5);
    assert_eq!(accuracy_of(&[4], &[4]).unwrap(), 1.0);
    assert_eq!(accuracy_of(&[4], &[3]).unwrap(), 0.0);
    assert!(accuracy_of(&[], &[]).is_err());
    assert!(accuracy_of(&[1, 2], &[1]).is_err());
}

fn small() -> (Model<f32>, Dataset) {
    let ds = synth_dataset(10, 13, 16, 4, Split::Test).unwrap();
    let q = ds.images().iter().map(|im| im.quantized()).collect();
    let ds = ds.with_images(q, "quantized").unwrap();
    (
        Model::init(ModelConfig::standard(3, 10, [16, 16, 3]), 8).unwrap(),
        ds,
    )
}

#[test]
fn accuracy_agrees_with_a_per_image_recount() {
    let (m, ds) = small();
    let mut hits = 0;
    for (i, &y) in ds.labels().iter().enumerate() {
        let (x, _) = ds.subset(&[i]).unwrap().batch::<f32>(&[0]).unwrap();
        if argmax(m.logits(&x).unwrap().data()) == y {
            hits += 1;
        }
    }
    assert_eq!(accuracy(&m, &ds).unwrap(), hits as f64 / ds.len() as f64);
}

#[test]
fn averages_follow_their_definition() {
    let matrix: Vec<Vec<f64>> = (0..19)
        .map(|k| (0..5).map(|s| (k * 5 + s) as f64 / 100.0).collect())
        .collect();
    let per = per_corruption_average(&matrix).unwrap();
    for (k, &p) in per.iter().enumerate() {
        assert!((p - (k * 5 + 2) as f64 / 100.0).abs() < 1e-12);
    }
    assert!((overall_average(&per).unwrap() - 0.47).abs() < 1e-12);
    assert!(per_corruption_average(&matrix[..18]).is_err());
    assert!(overall_average(&per[..18]).is_err());
}

/// Published per-corruption accuracies (percent) of a PreAct-ResNet-18 on
/// CIFAR-10 and their stated averages, in the standard corruption order.
const REFERENCE_RESULTS: [(&str, [f64; 2]); 19] = [
    ("gaussian_noise", [17.63, 26.37]),
    ("shot_noise", [17.66, 25.66]),
    ("impulse_noise", [25.53, 33.17]),
    ("speckle_noise", [25.43, 35.77]),
    ("defocus_blur", [16.68, 17.87]),
    ("glass_blur", [20.18, 23.71]),
    ("motion_blur", [30.69, 31.87]),
    ("zoom_blur", [71.48, 77.18]),
    ("gaussian_blur", [19.74, 24.12]),
    ("snow", [70.35, 67.22]),
    ("frost", [74.40, 67.60]),
    ("fog", [43.51, 43.10]),
    ("brightness", [88.94, 85.54]),
    ("spatter", [82.67, 82.90]),
    ("contrast", [52.08, 41.88]),
    ("elastic_transform", [19.59, 19.70]),
    ("pixelate", [28.10, 36.73]),
    ("jpeg_compression", [52.00, 55.87]),
    ("saturate", [86.08, 83.00]),
];

#[test]
fn overall_average_reproduces_published_averages() {
    for (col, stated) in [(0, 44.35), (1, 46.28)] {
        let per: Vec<f64> = REFERENCE_RESULTS.iter().map(|(_, v)| v[col]).collect();
        let avg = overall_average(&per).unwrap();
        assert!((avg - stated).abs() <= 0.005 + 1e-9, "column {col}: {avg}");
    }
    let names: Vec<&str> = CorruptionKind::ALL.iter().map(|k| k.name()).collect();
    let ours: Vec<&str> = REFERENCE_RESULTS.iter().map(|(n, _)| *n).collect();
    assert_eq!(names, ours);
}

proptest! {
    #[test]
    fn overall_average_is_linear(a in prop::collection::vec(0.0f64..1.0, 19), b in prop::collection::vec(0.0f64..1.0, 19), t in 0.0f64..1.0) {
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let lhs = overall_average(&mix).unwrap();
        let rhs = t * overall_average(&a).unwrap() + (1.0 - t) * overall_average(&b).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }
}

fn meta(id: &str, classes: usize) -> ReportMeta {
    ReportMeta {
        model_id: id.into(),
        model_kind: ModelKind::Standard,
        dataset_id: "synth".into(),
        manifest_hash: Manifest::builtin().hash().to_string(),
        seed: 1,
        num_classes: classes,
    }
}

fn flat(v: f64) -> Vec<Vec<f64>> {
    vec![vec![v; 5]; 19]
}

#[test]
fn reports_round_trip_and_validate() {
    let robust = RobustResult {
        attack: AttackConfig::default(),
        accuracy: 0.25,
        objective: 0.3,
    };
    let mut m = flat(0.5);
    m[3][4] = 0.1;
    let r = EvalReport::new(meta("a", 10), 0.9, &m, Some(robust)).unwrap();
    assert!((r.overall_avg - (0.5 - 0.4 / 95.0)).abs() < 1e-12);
    let back = EvalReport::from_toml(&r.to_toml().unwrap()).unwrap();
    assert_eq!(back, r);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.toml");
    emit_report(&r, &path).unwrap();
    assert_eq!(EvalReport::load(&path).unwrap(), r);
    assert!(std::fs::read_to_string(path.with_extension("txt"))
        .unwrap()
        .contains("Natural Samples"));
    assert!(std::fs::read_to_string(path.with_extension("csv"))
        .unwrap()
        .starts_with("group,row,a\n"));

    let mut tampered = r.clone();
    tampered.overall_avg += 1e-6;
    assert!(tampered.validate().is_err());
    let mut tampered = r.clone();
    tampered.corruption[2].average = 0.2;
    assert!(tampered.validate().is_err());
    let mut tampered = r.clone();
    tampered.corruption.swap(0, 1);
    assert!(tampered.validate().is_err());
    let mut tampered = r;
    tampered.clean_acc = 1.5;
    assert!(tampered.validate().is_err());
}

#[test]
fn comparison_table_rows_follow_the_family_order() {
    let a = EvalReport::new(meta("std", 10), 0.9, &flat(0.5), None).unwrap();
    let b = EvalReport::new(meta("mocse", 10), 0.8, &flat(0.6), None).unwrap();
    let table = comparison_table(&[("std", &a), ("mocse", &b)]).unwrap();
    let body: Vec<&str> = table.lines().filter(|l| l.contains('%')).collect();
    assert_eq!(body.len(), 21);
    assert!(body[0].contains("Natural Samples"));
    for (line, kind) in body[1..20].iter().zip(CorruptionKind::ALL) {
        assert!(line.contains(kind.title()), "{line}");
    }
    assert!(body[20].contains("Average of 19 Corruptions"));
    assert!(body[20].contains("60.00%*") && body[20].contains("(+10.00)"));
    assert!(body[0].contains("90.00%*") && body[0].contains("(-10.00)"));
    let csv = comparison_csv(&[("std", &a), ("mocse", &b)]).unwrap();
    assert_eq!(csv.lines().count(), 22);
    assert!(csv.starts_with("group,row,std,mocse,delta_mocse\n"));

    let c = EvalReport::new(meta("other", 5), 0.8, &flat(0.6), None).unwrap();
    assert!(comparison_table(&[("std", &a), ("other", &c)]).is_err());
    assert!(comparison_table(&[]).is_err());
    let fams = families();
    assert_eq!(fams.len(), 4);
    assert_eq!(fams.iter().map(|(_, k)| k.len()).sum::<usize>(), 19);
}

#[test]
fn severity_zero_reproduces_clean_accuracy_and_leaves_the_model_alone() {
    let (m, ds) = small();
    let hash = m.param_hash();
    let manifest = Manifest::builtin();
    let src = CorruptionSource::OnTheFly { manifest, seed: 3 };
    let kinds = [CorruptionKind::GaussianNoise, CorruptionKind::Fog];
    let out = corruption_matrices(&[&m], &ds, src, &kinds, &[0, 1], 2).unwrap();
    let clean = accuracy(&m, &ds).unwrap();
    assert_eq!(out[0][0][0], clean);
    assert_eq!(out[0][1][0], clean);
    assert_eq!(m.param_hash(), hash);
    let again = corruption_matrices(&[&m], &ds, src, &kinds, &[0, 1], 1).unwrap();
    assert_eq!(again, out);
}

#[test]
fn exported_and_on_the_fly_corruptions_agree() {
    let (m, ds) = small();
    let manifest = Manifest::builtin();
    let src = CorruptionSource::OnTheFly { manifest, seed: 9 };
    let dir = tempfile::tempdir().unwrap();
    let kinds = [CorruptionKind::ShotNoise, CorruptionKind::JpegCompression];
    for &k in &kinds {
        for s in [2u8, 5] {
            for (i, im) in corrupted_images(&ds, src, k, s).unwrap().iter().enumerate() {
                let path = export_path(dir.path(), k, s, i);
                std::fs::create_dir_all(path.parent().unwrap()).unwrap();
                mocse_core::data::ppm::write_ppm(&path, im).unwrap();
            }
        }
    }
    let a = corruption_matrices(&[&m], &ds, src, &kinds, &[2, 5], 1).unwrap();
    let b = corruption_matrices(
        &[&m],
        &ds,
        CorruptionSource::Directory(dir.path()),
        &kinds,
        &[2, 5],
        1,
    )
    .unwrap();
    assert_eq!(a, b);
    let missing = corruption_matrices(
        &[&m],
        &ds,
        CorruptionSource::Directory(dir.path()),
        &[CorruptionKind::Fog],
        &[1],
        1,
    );
    assert!(missing.is_err());
}

#[test]
fn robust_accuracy_at_zero_budget_is_clean_accuracy() {
    let (m, ds) = small();
    let cfg = AttackConfig {
        delta: 0.0,
        ..AttackConfig::default()
    };
    let r = robust_accuracy(&m, &ds, &cfg).unwrap();
    assert_eq!(r.accuracy, accuracy(&m, &ds).unwrap());
    let strong = robust_accuracy(&m, &ds, &AttackConfig::default()).unwrap();
    assert!(strong.accuracy <= r.accuracy);
    assert!(strong.objective <= r.objective + 1e-9);
}
