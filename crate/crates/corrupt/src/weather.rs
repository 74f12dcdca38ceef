use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use crate::error::{invalid, Result};
use crate::filter::{self, convolve, motion_kernel};
use crate::image::Image;
use crate::plasma::{diamond_square, value_noise};
use crate::rng::SeededRng;

fn luma(image: &Image, y: usize, x: usize) -> f64 {
    if image.channels() >= 3 {
        0.299 * f64::from(image.get(y, x, 0))
            + 0.587 * f64::from(image.get(y, x, 1))
            + 0.114 * f64::from(image.get(y, x, 2))
    } else {
        f64::from(image.get(y, x, 0))
    }
}

fn plane_image(plane: Vec<f64>, h: usize, w: usize) -> Image {
    Image::new(h, w, 1, plane.into_iter().map(|v| v as f32).collect()).expect("plane shape")
}

/// Snow parameters, in manifest order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnowParams {
    pub loc: f64,
    pub scale: f64,
    pub zoom: f64,
    pub threshold: f64,
    pub length: f64,
    pub blend: f64,
}

/// Gaussian flake field, zoomed and thresholded, streaked by a motion kernel
/// pointing roughly downwards, then added twice (as is and rotated 180°)
/// over a whitened copy of the image.
pub fn snow(image: &Image, p: SnowParams, rng: &mut SeededRng) -> Result<Image> {
    if !(p.scale >= 0.0 && p.zoom >= 1.0 && p.length >= 0.0 && (0.0..=1.0).contains(&p.blend)) {
        return Err(invalid(
            "snow",
            "need std >= 0, zoom >= 1, length >= 0, blend in [0, 1]",
        ));
    }
    let [h, w, c] = image.shape();
    let flakes: Vec<f64> = (0..h * w)
        .map(|_| p.loc + p.scale * rng.gaussian())
        .collect();
    let flakes = filter::zoom_plane(&flakes, h, w, p.zoom);
    let flakes: Vec<f64> = flakes
        .into_iter()
        .map(|v| if v < p.threshold { 0.0 } else { v })
        .collect();
    let angle = FRAC_PI_2 + rng.uniform_in(-FRAC_PI_4, FRAC_PI_4);
    let layer = convolve(&plane_image(flakes, h, w), &motion_kernel(p.length, angle));
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let whitened = luma(image, y, x) * 1.5 + 0.5;
            let s = f64::from(layer.get(y, x, 0)) + f64::from(layer.get(h - 1 - y, w - 1 - x, 0));
            for ch in 0..c {
                let v = f64::from(image.get(y, x, ch));
                let base = p.blend * v + (1.0 - p.blend) * v.max(whitened);
                out.push((base + s) as f32);
            }
        }
    }
    Ok(image.with_data(out).clamped())
}

/// `c_image * x + c_frost * frost`, where frost is thresholded value noise with
/// thin bright ridges along its mid level set, tinted pale blue.
pub fn frost(image: &Image, c_image: f64, c_frost: f64, rng: &mut SeededRng) -> Result<Image> {
    if !(c_image >= 0.0 && c_frost >= 0.0) {
        return Err(invalid("frost", "weights must be >= 0"));
    }
    let [h, w, c] = image.shape();
    let v = value_noise(h, w, 4, 4, rng);
    let tint = [0.90, 0.95, 1.0];
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let n = v[y * w + x];
            let sheet = ((n - 0.4) / 0.6).clamp(0.0, 1.0);
            let ridge = libm::pow(1.0 - (2.0 * n - 1.0).abs(), 6.0);
            let f = sheet.max(0.8 * ridge);
            for ch in 0..c {
                let t = if c >= 3 { tint[ch.min(2)] } else { 0.95 };
                out.push((c_image * f64::from(image.get(y, x, ch)) + c_frost * f * t) as f32);
            }
        }
    }
    Ok(image.with_data(out).clamped())
}

/// `clamp(x * (1 - t) + t * (0.5 + 0.5 F) * brightness)` with F a diamond-square
/// field cropped from the smallest covering grid.
pub fn fog(
    image: &Image,
    t: f64,
    decay: f64,
    brightness: f64,
    rng: &mut SeededRng,
) -> Result<Image> {
    if !((0.0..=1.0).contains(&t) && decay > 0.0 && brightness >= 0.0) {
        return Err(invalid(
            "fog",
            "need t in [0, 1], decay > 0, brightness >= 0",
        ));
    }
    let [h, w, c] = image.shape();
    let mut k = 0;
    while (1usize << k) + 1 < h.max(w) {
        k += 1;
    }
    let field = diamond_square(k, decay, rng);
    let n = (1usize << k) + 1;
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let haze = t * (0.5 + 0.5 * field[y * n + x]) * brightness;
            for ch in 0..c {
                out.push((f64::from(image.get(y, x, ch)) * (1.0 - t) + haze) as f32);
            }
        }
    }
    Ok(image.with_data(out).clamped())
}

/// `clamp(x + b)`.
pub fn brightness(image: &Image, b: f64) -> Result<Image> {
    if !b.is_finite() {
        return Err(invalid("brightness", "offset must be finite"));
    }
    let out = image
        .data()
        .iter()
        .map(|&v| (f64::from(v) + b) as f32)
        .collect();
    Ok(image.with_data(out).clamped())
}

/// Spatter parameters, in manifest order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatterParams {
    pub loc: f64,
    pub scale: f64,
    pub sigma: f64,
    pub threshold: f64,
    pub opacity: f64,
    pub mud: bool,
}

const WATER: [f64; 3] = [0.55, 0.68, 0.82];
const MUD: [f64; 3] = [0.25, 0.17, 0.09];

/// Blob mask from a smoothed Gaussian field (re-standardised after smoothing,
/// so `scale` keeps its meaning), soft-thresholded and composited with a
/// water or mud colour at `opacity`.
pub fn spatter(image: &Image, p: SpatterParams, rng: &mut SeededRng) -> Result<Image> {
    if !(p.scale >= 0.0 && p.sigma >= 0.0 && (0.0..=1.0).contains(&p.opacity)) {
        return Err(invalid(
            "spatter",
            "need std >= 0, sigma >= 0, opacity in [0, 1]",
        ));
    }
    let [h, w, c] = image.shape();
    let raw: Vec<f64> = (0..h * w).map(|_| rng.gaussian()).collect();
    let smooth = filter::gaussian_blur(&plane_image(raw, h, w), p.sigma);
    let field: Vec<f64> = smooth.data().iter().map(|&v| f64::from(v)).collect();
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let sd =
        libm::sqrt(field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / field.len() as f64);
    let colour = if p.mud { MUD } else { WATER };
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let z = if sd > 0.0 {
                (field[y * w + x] - mean) / sd
            } else {
                0.0
            };
            let layer = p.loc + p.scale * z;
            let a = p.opacity * ((layer - p.threshold) / 0.05).clamp(0.0, 1.0);
            for ch in 0..c {
                let col = if c >= 3 {
                    colour[ch.min(2)]
                } else {
                    colour.iter().sum::<f64>() / 3.0
                };
                out.push(((1.0 - a) * f64::from(image.get(y, x, ch)) + a * col) as f32);
            }
        }
    }
    Ok(image.with_data(out).clamped())
}
