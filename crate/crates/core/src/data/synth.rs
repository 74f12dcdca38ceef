//! Procedural 10-class image dataset.
//!
//! Each sample draws a background and a foreground colour with a minimum
//! luminance contrast, a jittered centre, scale and rotation, renders one
//! class pattern with 2x2 supersampling, and adds mild Gaussian noise.

use std::f64::consts::PI;

use mocse_corrupt::{Image, SeededRng};

use super::{Dataset, Split};
use crate::error::{invalid, Result};

pub const CLASS_NAMES: [&str; 10] = [
    "disk", "ring", "cross", "bars_0", "bars_45", "bars_90", "bars_135", "checker", "gradient",
    "blob",
];

/// Per-sample geometry and colours.
struct Draw {
    cx: f64,
    cy: f64,
    scale: f64,
    period: f64,
    phase: f64,
    angle: f64,
    lobes: [(f64, f64); 3],
    bg: [f64; 3],
    fg: [f64; 3],
}

fn luminance(c: &[f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn colours(rng: &mut SeededRng) -> ([f64; 3], [f64; 3]) {
    loop {
        let bg = [rng.uniform(), rng.uniform(), rng.uniform()];
        let fg = [rng.uniform(), rng.uniform(), rng.uniform()];
        if (luminance(&bg) - luminance(&fg)).abs() >= 0.25 {
            return (bg, fg);
        }
    }
}

impl Draw {
    fn sample(rng: &mut SeededRng) -> Self {
        let (bg, fg) = colours(rng);
        let mut lobes = [(0.0, 0.0); 3];
        for l in &mut lobes {
            *l = (rng.uniform_in(-0.35, 0.35), rng.uniform_in(-0.35, 0.35));
        }
        Self {
            cx: rng.uniform_in(-0.15, 0.15),
            cy: rng.uniform_in(-0.15, 0.15),
            scale: rng.uniform_in(0.75, 1.25),
            period: rng.uniform_in(0.35, 0.55),
            phase: rng.uniform(),
            angle: rng.uniform_in(-PI / 12.0, PI / 12.0),
            lobes,
            bg,
            fg,
        }
    }

    /// Foreground weight in [0, 1] at normalised coordinates (u right, v down).
    fn coverage(&self, class: usize, u: f64, v: f64) -> f64 {
        let (du, dv) = (u - self.cx, v - self.cy);
        let (sa, ca) = (self.angle.sin(), self.angle.cos());
        let (ru, rv) = (
            (ca * du + sa * dv) / self.scale,
            (-sa * du + ca * dv) / self.scale,
        );
        let r = (ru * ru + rv * rv).sqrt();
        let stripes = |theta: f64| {
            let t = (u * theta.cos() + v * theta.sin()) / self.period + self.phase;
            if t - t.floor() < 0.5 {
                1.0
            } else {
                0.0
            }
        };
        let on = |b: bool| if b { 1.0 } else { 0.0 };
        match class {
            0 => on(r < 0.5),
            1 => on(r > 0.32 && r < 0.58),
            2 => on((ru.abs() < 0.14 && rv.abs() < 0.62) || (rv.abs() < 0.14 && ru.abs() < 0.62)),
            3 => stripes(PI / 2.0),
            4 => stripes(3.0 * PI / 4.0),
            5 => stripes(0.0),
            6 => stripes(PI / 4.0),
            7 => {
                let p = self.period * 0.7;
                let (a, b) = (
                    (ru / p + self.phase).floor() as i64,
                    (rv / p).floor() as i64,
                );
                on((a + b).rem_euclid(2) == 0)
            }
            8 => ((ru * 0.7 + 1.0) / 2.0).clamp(0.0, 1.0),
            _ => {
                let field: f64 = self
                    .lobes
                    .iter()
                    .map(|&(lu, lv)| {
                        (-((ru - lu).powi(2) + (rv - lv).powi(2)) / (2.0 * 0.16 * 0.16)).exp()
                    })
                    .sum();
                on(field > 0.55)
            }
        }
    }
}

/// Renders one sample of `class`.
pub fn render(class: usize, size: usize, rng: &mut SeededRng) -> Image {
    let d = Draw::sample(rng);
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let mut cov = 0.0;
            for (oy, ox) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                let u = 2.0 * (x as f64 + ox) / size as f64 - 1.0;
                let v = 2.0 * (y as f64 + oy) / size as f64 - 1.0;
                cov += d.coverage(class, u, v) / 4.0;
            }
            for c in 0..3 {
                let v = d.bg[c] + cov * (d.fg[c] - d.bg[c]) + 0.03 * rng.gaussian();
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Image::new(size, size, 3, data).expect("rendered shape")
}

/// `per_class` samples of each of the ten classes, interleaved by class, from
/// a stream seeded by `(seed, split)`.
pub fn synth_dataset(
    num_classes: usize,
    per_class: usize,
    image_size: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if num_classes == 0 || num_classes > CLASS_NAMES.len() {
        return Err(invalid(format!(
            "synthetic data has 1..={} classes, asked for {num_classes}",
            CLASS_NAMES.len()
        )));
    }
    if image_size < 16 {
        return Err(invalid(format!(
            "synthetic image size {image_size} is below 16"
        )));
    }
    let stream = match split {
        Split::Train => 0x7261_696e,
        Split::Test => 0x7465_7374,
    };
    let mut images = Vec::with_capacity(num_classes * per_class);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for i in 0..per_class {
        for class in 0..num_classes {
            let mut rng = SeededRng::for_image(seed ^ stream, (i * num_classes + class) as u64);
            images.push(render(class, image_size, &mut rng));
            labels.push(class);
        }
    }
    let names = CLASS_NAMES[..num_classes]
        .iter()
        .map(|s| s.to_string())
        .collect();
    Dataset::new(
        images,
        labels,
        names,
        split,
        format!("synth:c{num_classes}:n{per_class}:s{image_size}:seed{seed}:{split}"),
    )
}
