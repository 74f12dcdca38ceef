use crate::error::{invalid, Result};
use crate::filter::{self, sample_bilinear};
use crate::image::Image;
use crate::rng::SeededRng;

/// `clamp((x - m) * c + m)` with `m` the per-channel image mean.
pub fn contrast(image: &Image, c: f64) -> Result<Image> {
    if !(c >= 0.0) {
        return Err(invalid("contrast", "factor must be >= 0"));
    }
    if c == 1.0 {
        return Ok(image.clone());
    }
    let ch = image.channels();
    let mut means = vec![0.0f64; ch];
    for (i, &v) in image.data().iter().enumerate() {
        means[i % ch] += f64::from(v);
    }
    let pixels = (image.height() * image.width()) as f64;
    means.iter_mut().for_each(|m| *m /= pixels);
    let out = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let m = means[i % ch];
            ((f64::from(v) - m) * c + m) as f32
        })
        .collect();
    Ok(image.with_data(out).clamped())
}

/// Bilinear warp by a displacement field: uniform noise in [-1, 1], Gaussian
/// smoothed with `sigma`, scaled by `alpha`. The row field is drawn first.
pub fn elastic_transform(
    image: &Image,
    alpha: f64,
    sigma: f64,
    rng: &mut SeededRng,
) -> Result<Image> {
    if !(alpha >= 0.0 && sigma >= 0.0) {
        return Err(invalid("elastic_transform", "alpha and sigma must be >= 0"));
    }
    let [h, w, c] = image.shape();
    let mut field = || {
        let raw = (0..h * w)
            .map(|_| rng.uniform_in(-1.0, 1.0) as f32)
            .collect();
        let plane = Image::new(h, w, 1, raw).expect("plane shape");
        filter::gaussian_blur(&plane, sigma).into_data()
    };
    let dy = field();
    let dx = field();
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let sy = y as f64 + alpha * f64::from(dy[y * w + x]);
            let sx = x as f64 + alpha * f64::from(dx[y * w + x]);
            for ch in 0..c {
                out.push(sample_bilinear(image, sy, sx, ch) as f32);
            }
        }
    }
    Ok(image.with_data(out).clamped())
}

/// Area weights mapping `n` source cells onto `m` destination cells.
fn area_weights(n: usize, m: usize) -> Vec<Vec<(usize, f64)>> {
    let s = n as f64 / m as f64;
    (0..m)
        .map(|j| {
            let (lo, hi) = (j as f64 * s, (j + 1) as f64 * s);
            let first = libm::floor(lo) as usize;
            let last = (libm::ceil(hi) as usize).min(n);
            (first..last)
                .filter_map(|i| {
                    let overlap = hi.min((i + 1) as f64) - lo.max(i as f64);
                    (overlap > 0.0).then_some((i, overlap / s))
                })
                .collect()
        })
        .collect()
}

/// Box-average down by factor `k`, then nearest-neighbour back up.
pub fn pixelate(image: &Image, k: f64) -> Result<Image> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(invalid("pixelate", format!("factor {k} must be positive")));
    }
    let [h, w, c] = image.shape();
    let lh = (libm::round(h as f64 / k) as usize).max(1);
    let lw = (libm::round(w as f64 / k) as usize).max(1);
    let wy = area_weights(h, lh);
    let wx = area_weights(w, lw);
    let mut small = vec![0.0f64; lh * lw * c];
    for (j, rows) in wy.iter().enumerate() {
        for (i, cols) in wx.iter().enumerate() {
            for &(y, a) in rows {
                for &(x, b) in cols {
                    for ch in 0..c {
                        small[(j * lw + i) * c + ch] += a * b * f64::from(image.get(y, x, ch));
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        let j = (y * lh / h).min(lh - 1);
        for x in 0..w {
            let i = (x * lw / w).min(lw - 1);
            for ch in 0..c {
                out.push(small[(j * lw + i) * c + ch] as f32);
            }
        }
    }
    Ok(image.with_data(out).clamped())
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    (h, s, max)
}

/// `h` in sextants [0, 6).
fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

/// HSV saturation `clamp(s * scale + add)`; single-channel images pass through.
pub fn saturate(image: &Image, scale: f64, add: f64) -> Result<Image> {
    if !(scale >= 0.0) || !add.is_finite() {
        return Err(invalid("saturate", "scale must be >= 0 and offset finite"));
    }
    let c = image.channels();
    if c < 3 || (scale == 1.0 && add == 0.0) {
        return Ok(image.clone());
    }
    let mut out = image.data().to_vec();
    for px in out.chunks_mut(c) {
        let (h, s, v) = rgb_to_hsv(f64::from(px[0]), f64::from(px[1]), f64::from(px[2]));
        let (r, g, b) = hsv_to_rgb(h, (s * scale + add).clamp(0.0, 1.0), v);
        px[0] = r as f32;
        px[1] = g as f32;
        px[2] = b as f32;
    }
    Ok(image.with_data(out).clamped())
}
