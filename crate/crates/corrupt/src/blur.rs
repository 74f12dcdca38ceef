use std::f64::consts::FRAC_PI_4;

use crate::error::{invalid, Result};
use crate::filter::{self, convolve, disk_kernel, motion_kernel};
use crate::image::Image;
use crate::rng::SeededRng;

/// Disk kernel followed by a light Gaussian against aliasing.
pub fn defocus_blur(image: &Image, radius: f64, alias_sigma: f64) -> Result<Image> {
    if !(radius >= 0.0 && alias_sigma >= 0.0) {
        return Err(invalid("defocus_blur", "radius and sigma must be >= 0"));
    }
    let disk = convolve(image, &disk_kernel(radius));
    Ok(filter::gaussian_blur(&disk, alias_sigma).clamped())
}

/// Blur, swap each pixel with a random neighbour within `delta`, blur again.
/// Each iteration draws two uniforms per pixel whatever `delta` is, and the
/// offsets scale with `delta`, so stronger settings extend weaker ones on the
/// same stream.
pub fn glass_blur(
    image: &Image,
    sigma: f64,
    delta: usize,
    iterations: usize,
    rng: &mut SeededRng,
) -> Result<Image> {
    if !(sigma >= 0.0) {
        return Err(invalid("glass_blur", "sigma must be >= 0"));
    }
    let [h, w, c] = image.shape();
    let mut x = filter::gaussian_blur(image, sigma);
    let span = (2 * delta + 1) as f64;
    let offset = |u: f64| (libm::floor(u * span) as i64) - delta as i64;
    let data = x.data_mut();
    for _ in 0..iterations {
        for y in (0..h).rev() {
            for xx in (0..w).rev() {
                let dy = offset(rng.uniform());
                let dx = offset(rng.uniform());
                let ty = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                let tx = (xx as i64 + dx).clamp(0, w as i64 - 1) as usize;
                for ch in 0..c {
                    data.swap((y * w + xx) * c + ch, (ty * w + tx) * c + ch);
                }
            }
        }
    }
    Ok(filter::gaussian_blur(&x, sigma).clamped())
}

/// Line kernel of `length` pixels at an angle drawn uniformly from ±45°.
pub fn motion_blur(image: &Image, length: f64, rng: &mut SeededRng) -> Result<Image> {
    if !(length >= 0.0) {
        return Err(invalid("motion_blur", "length must be >= 0"));
    }
    let angle = rng.uniform_in(-FRAC_PI_4, FRAC_PI_4);
    Ok(convolve(image, &motion_kernel(length, angle)).clamped())
}

/// Mean of centre zooms at factors `1, 1 + step, ...` up to `max_factor`.
pub fn zoom_blur(image: &Image, max_factor: f64, step: f64) -> Result<Image> {
    if !(max_factor >= 1.0 && step > 0.0) {
        return Err(invalid(
            "zoom_blur",
            "need largest factor >= 1 and step > 0",
        ));
    }
    let n = libm::round((max_factor - 1.0) / step) as usize;
    let mut acc: Vec<f64> = image.data().iter().map(|&v| f64::from(v)).collect();
    for i in 1..=n {
        let z = filter::zoom(image, 1.0 + step * i as f64);
        for (a, &v) in acc.iter_mut().zip(z.data()) {
            *a += f64::from(v);
        }
    }
    let k = (n + 1) as f64;
    Ok(image
        .with_data(acc.into_iter().map(|a| (a / k) as f32).collect())
        .clamped())
}

pub fn gaussian_blur(image: &Image, sigma: f64) -> Result<Image> {
    if !(sigma >= 0.0) {
        return Err(invalid("gaussian_blur", "sigma must be >= 0"));
    }
    Ok(filter::gaussian_blur(image, sigma).clamped())
}
