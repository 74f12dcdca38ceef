use mocse_corrupt::filter::{disk_kernel, gaussian_kernel, motion_kernel};
use mocse_corrupt::plasma::diamond_square;
use mocse_corrupt::*;
use proptest::prelude::*;

/// Random 32x32 RGB test image with natural-image structure: random colour
/// gradients, a few discs with sharp edges, and mild pixel texture.
fn random_image(seed: u64) -> Image {
    let mut r = SeededRng::new(seed ^ 0xA5A5);
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
    Image::new(h, w, 3, data).unwrap()
}

/// iid uniform noise image.
fn noise_image(seed: u64) -> Image {
    let mut r = SeededRng::new(seed);
    Image::new(
        32,
        32,
        3,
        (0..32 * 32 * 3).map(|_| r.uniform() as f32).collect(),
    )
    .unwrap()
}

fn gray(h: usize, w: usize) -> Image {
    Image::filled(h, w, 3, 0.5).unwrap()
}

fn spec(kind: CorruptionKind, severity: u8, seed: u64) -> CorruptionSpec {
    CorruptionSpec::new(kind, severity, seed).unwrap()
}

#[test]
fn there_are_nineteen_named_kinds() {
    assert_eq!(CorruptionKind::ALL.len(), 19);
    for k in CorruptionKind::ALL {
        assert_eq!(k.name().parse::<CorruptionKind>().unwrap(), k);
    }
    let families: Vec<usize> = [
        Family::Noise,
        Family::Blur,
        Family::Weather,
        Family::Digital,
    ]
    .iter()
    .map(|f| {
        CorruptionKind::ALL
            .iter()
            .filter(|k| k.family() == *f)
            .count()
    })
    .collect();
    assert_eq!(families, [4, 5, 5, 5]);
}

#[test]
fn invalid_requests_are_rejected() {
    assert_eq!(
        CorruptionSpec::parse("rain", 1, 0).unwrap_err(),
        CorruptError::UnknownKind("rain".into())
    );
    assert_eq!(
        CorruptionSpec::new(CorruptionKind::Fog, 6, 0).unwrap_err(),
        CorruptError::InvalidSeverity(6)
    );
    let bad = CorruptionSpec {
        kind: CorruptionKind::Fog,
        severity: 9,
        seed: 0,
    };
    assert_eq!(
        apply_corruption(&gray(8, 8), &bad, 0).unwrap_err(),
        CorruptError::InvalidSeverity(9)
    );
    let mut rng = SeededRng::new(0);
    assert!(gaussian_noise(&gray(4, 4), -0.1, &mut rng).is_err());
    assert!(pixelate(&gray(4, 4), 0.0).is_err());
    assert!(pixelate(&gray(4, 4), -2.0).is_err());
    assert!(matches!(
        jpeg_compression(&gray(7, 12), 50, true),
        Err(CorruptError::ImageTooSmall {
            height: 7,
            width: 12,
            ..
        })
    ));
}

#[test]
fn every_kind_is_deterministic_in_range_and_identity_at_zero() {
    for i in 0..50u64 {
        let img = if i % 2 == 0 {
            random_image(i)
        } else {
            noise_image(i)
        };
        for kind in CorruptionKind::ALL {
            assert_eq!(
                apply_corruption(&img, &spec(kind, 0, i), i).unwrap(),
                img,
                "{kind} s0"
            );
            for s in 1..=5 {
                let sp = spec(kind, s, 1000 + i);
                let a = apply_corruption(&img, &sp, i).unwrap();
                let b = apply_corruption(&img, &sp, i).unwrap();
                assert_eq!(a.shape(), img.shape());
                assert!(
                    a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits()),
                    "{kind} s{s} not deterministic"
                );
                assert!(
                    a.data().iter().all(|v| (0.0..=1.0).contains(v)),
                    "{kind} s{s} out of range"
                );
            }
        }
    }
}

#[test]
fn noise_and_blur_distortion_is_monotone_in_severity() {
    let kinds = CorruptionKind::ALL
        .iter()
        .filter(|k| matches!(k.family(), Family::Noise | Family::Blur));
    for &kind in kinds {
        for i in 0..64u64 {
            let img = random_image(i);
            let devs: Vec<f64> = (1..=5)
                .map(|s| {
                    apply_corruption(&img, &spec(kind, s, 77), i)
                        .unwrap()
                        .mean_abs_diff(&img)
                })
                .collect();
            for s in 1..5 {
                assert!(devs[s] >= devs[s - 1], "{kind} image {i}: {devs:?}");
            }
        }
    }
}

#[test]
fn gaussian_noise_gets_worse_with_severity_on_average() {
    let img = gray(32, 32);
    let mut prev = 0.0;
    for s in 1..=5 {
        let mean: f64 = (0..100u64)
            .map(|i| {
                apply_corruption(&img, &spec(CorruptionKind::GaussianNoise, s, 5), i)
                    .unwrap()
                    .mean_abs_diff(&img)
            })
            .sum::<f64>()
            / 100.0;
        assert!(mean > prev, "severity {s}: {mean} <= {prev}");
        prev = mean;
    }
}

#[test]
fn gaussian_noise_standard_deviation() {
    let img = gray(64, 64);
    for sigma in [0.04, 0.1] {
        let out = gaussian_noise(&img, sigma, &mut SeededRng::new(11)).unwrap();
        let d: Vec<f64> = out.data().iter().map(|&v| f64::from(v) - 0.5).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((sd / sigma - 1.0).abs() < 0.05, "{sigma}: {sd}");
    }
    assert_eq!(
        gaussian_noise(&img, 0.0, &mut SeededRng::new(1)).unwrap(),
        img
    );
}

#[test]
fn severity_schedule_for_gaussian_noise() {
    let m = Manifest::builtin();
    let sigmas: Vec<f64> = (1..=5)
        .map(|s| m.params(CorruptionKind::GaussianNoise, s).unwrap()[0])
        .collect();
    assert_eq!(sigmas, [0.04, 0.06, 0.08, 0.09, 0.10]);
}

#[test]
fn impulse_noise_extremes() {
    let img = random_image(3);
    assert_eq!(
        impulse_noise(&img, 0.0, &mut SeededRng::new(2)).unwrap(),
        img
    );
    let all = impulse_noise(&img, 1.0, &mut SeededRng::new(2)).unwrap();
    assert!(all.data().iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn shot_noise_concentrates_at_high_photon_counts() {
    // Poisson(x * lambda) / lambda has mean absolute deviation close to
    // sqrt(2 / pi) * sqrt(x / lambda) for large counts.
    let img = gray(64, 64);
    let mut prev = f64::INFINITY;
    for lambda in [50.0, 500.0, 5000.0] {
        let mad = shot_noise(&img, lambda, &mut SeededRng::new(4))
            .unwrap()
            .mean_abs_diff(&img);
        let expect = (2.0 / std::f64::consts::PI).sqrt() * (0.5f64 / lambda).sqrt();
        assert!(
            (mad / expect - 1.0).abs() < 0.05,
            "{lambda}: {mad} vs {expect}"
        );
        assert!(mad < prev);
        prev = mad;
    }
    assert!(prev < 0.02);
    let out = shot_noise(&img, 500.0, &mut SeededRng::new(4)).unwrap();
    let bias =
        out.data().iter().map(|&v| f64::from(v) - 0.5).sum::<f64>() / out.data().len() as f64;
    assert!(bias.abs() < 0.002, "{bias}");
}

#[test]
fn blurs_with_zero_parameters_are_identity() {
    let img = random_image(5);
    assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
    assert_eq!(defocus_blur(&img, 0.0, 0.0).unwrap(), img);
    assert_eq!(zoom_blur(&img, 1.0, 0.01).unwrap(), img);
    assert_eq!(motion_blur(&img, 0.0, &mut SeededRng::new(1)).unwrap(), img);
}

#[test]
fn blurs_leave_constant_images_unchanged() {
    let img = Image::filled(32, 32, 3, 0.3).unwrap();
    let mut rng = SeededRng::new(8);
    let outs = [
        gaussian_blur(&img, 1.3).unwrap(),
        defocus_blur(&img, 2.5, 0.5).unwrap(),
        glass_blur(&img, 0.7, 2, 2, &mut rng).unwrap(),
        motion_blur(&img, 7.0, &mut rng).unwrap(),
        zoom_blur(&img, 1.26, 0.01).unwrap(),
    ];
    for out in outs {
        assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }
}

#[test]
fn blur_kernels_have_unit_mass() {
    let m = Manifest::builtin();
    for s in 1..=5 {
        let d = m.params(CorruptionKind::DefocusBlur, s).unwrap();
        assert!((disk_kernel(d[0]).sum() - 1.0).abs() < 1e-6);
        assert!((gaussian_kernel(d[1]).sum() - 1.0).abs() < 1e-6);
        let g = m.params(CorruptionKind::GaussianBlur, s).unwrap();
        assert!((gaussian_kernel(g[0]).sum() - 1.0).abs() < 1e-6);
        let l = m.params(CorruptionKind::MotionBlur, s).unwrap();
        for a in [-0.7, 0.0, 0.4] {
            assert!((motion_kernel(l[0], a).sum() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn gaussian_blur_impulse_response_is_the_kernel() {
    let sigma = 1.0;
    let k = gaussian_kernel(sigma);
    let mut img = Image::filled(21, 21, 1, 0.0).unwrap();
    img.set(10, 10, 0, 1.0);
    let out = gaussian_blur(&img, sigma).unwrap();
    let r = k.height / 2;
    for y in 0..21 {
        for x in 0..21 {
            let (dy, dx) = (y as i64 - 10 + r as i64, x as i64 - 10 + r as i64);
            let expect = if (0..k.height as i64).contains(&dy) && (0..k.width as i64).contains(&dx)
            {
                k.weights[dy as usize * k.width + dx as usize]
            } else {
                0.0
            };
            assert!((f64::from(out.get(y, x, 0)) - expect).abs() < 1e-6);
        }
    }
}

#[test]
fn weather_identity_parameters() {
    let img = random_image(7);
    assert_eq!(brightness(&img, 0.0).unwrap(), img);
    assert_eq!(
        fog(&img, 0.0, 2.0, 1.0, &mut SeededRng::new(3)).unwrap(),
        img
    );
}

#[test]
fn brightness_adds_and_clamps() {
    let img = Image::new(1, 2, 1, vec![0.2, 0.9]).unwrap();
    let out = brightness(&img, 0.3).unwrap();
    assert!((out.data()[0] - 0.5).abs() < 1e-6);
    assert_eq!(out.data()[1], 1.0);
}

#[test]
fn diamond_square_field_properties() {
    for seed in 0..10 {
        let a = diamond_square(5, 2.5, &mut SeededRng::new(seed));
        assert_eq!(a, diamond_square(5, 2.5, &mut SeededRng::new(seed)));
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn digital_identity_parameters() {
    let img = random_image(9);
    assert_eq!(contrast(&img, 1.0).unwrap(), img);
    assert_eq!(pixelate(&img, 1.0).unwrap(), img);
    assert_eq!(
        elastic_transform(&img, 0.0, 3.0, &mut SeededRng::new(5)).unwrap(),
        img
    );
    assert_eq!(saturate(&img, 1.0, 0.0).unwrap(), img);
}

#[test]
fn contrast_pulls_towards_channel_mean() {
    let img = Image::new(1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let out = contrast(&img, 0.5).unwrap();
    assert_eq!(out.data(), &[0.25, 0.75, 0.75, 0.25]);
    assert!(contrast(&img, 0.0)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.5));
}

#[test]
fn pixelate_makes_constant_blocks() {
    let img = random_image(2);
    let out = pixelate(&img, 2.0).unwrap();
    for y in (0..32).step_by(2) {
        for x in (0..32).step_by(2) {
            for c in 0..3 {
                let v = out.get(y, x, c);
                assert_eq!(out.get(y + 1, x + 1, c), v);
                let mean = (img.get(y, x, c)
                    + img.get(y + 1, x, c)
                    + img.get(y, x + 1, c)
                    + img.get(y + 1, x + 1, c))
                    / 4.0;
                assert!((v - mean).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn jpeg_high_quality_is_near_lossless_on_smooth_images() {
    let mut data = Vec::new();
    for y in 0..32 {
        for x in 0..32 {
            data.extend([x as f32 / 31.0, y as f32 / 31.0, (x + y) as f32 / 62.0]);
        }
    }
    let img = Image::new(32, 32, 3, data).unwrap();
    let out = jpeg_compression(&img, 100, true).unwrap();
    let max = img
        .data()
        .iter()
        .zip(out.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f32::max);
    assert!(max < 0.02, "{max}");
    let low = jpeg_compression(&img, 10, true).unwrap();
    assert!(low.mean_abs_diff(&img) > out.mean_abs_diff(&img));
}

#[test]
fn jpeg_output_is_eight_bit() {
    let out = jpeg_compression(&random_image(4), 40, true).unwrap();
    assert!(out
        .data()
        .iter()
        .all(|&v| (v * 255.0 - (v * 255.0).round()).abs() < 1e-3));
}

#[test]
fn saturate_on_gray_is_identity() {
    let img = gray(8, 8);
    let out = saturate(&img, 5.0, 0.0).unwrap();
    assert_eq!(out, img);
}

#[test]
fn per_image_streams_differ_across_indices() {
    let img = gray(16, 16);
    let sp = spec(CorruptionKind::GaussianNoise, 3, 1);
    assert_ne!(
        apply_corruption(&img, &sp, 0).unwrap(),
        apply_corruption(&img, &sp, 1).unwrap()
    );
}

#[test]
fn works_on_grayscale_images() {
    let img = Image::new(16, 16, 1, (0..256).map(|i| i as f32 / 255.0).collect()).unwrap();
    for kind in CorruptionKind::ALL {
        let out = apply_corruption(&img, &spec(kind, 3, 2), 0).unwrap();
        assert_eq!(out.shape(), img.shape());
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outputs_stay_in_unit_range(seed in any::<u64>(), k in 0usize..19, s in 0u8..=5, h in 8usize..24, w in 8usize..24) {
        let mut r = SeededRng::new(seed);
        let img = Image::new(h, w, 3, (0..h * w * 3).map(|_| r.uniform() as f32).collect()).unwrap();
        let out = apply_corruption(&img, &spec(CorruptionKind::ALL[k], s, seed), seed).unwrap();
        prop_assert_eq!(out.shape(), img.shape());
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn quantisation_round_trips(bytes in proptest::collection::vec(any::<u8>(), 12)) {
        let img = Image::from_bytes(2, 2, 3, &bytes).unwrap();
        prop_assert_eq!(img.to_bytes(), bytes);
        prop_assert_eq!(img.quantized(), img);
    }
}
