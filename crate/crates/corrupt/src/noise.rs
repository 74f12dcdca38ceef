use crate::error::{invalid, Result};
use crate::image::Image;
use crate::rng::SeededRng;

/// `clamp(x + sigma * z)` with one standard normal per value.
pub fn gaussian_noise(image: &Image, sigma: f64, rng: &mut SeededRng) -> Result<Image> {
    if !(sigma >= 0.0) {
        return Err(invalid(
            "gaussian_noise",
            format!("sigma {sigma} must be >= 0"),
        ));
    }
    let out = image
        .data()
        .iter()
        .map(|&v| (f64::from(v) + sigma * rng.gaussian()) as f32)
        .collect();
    Ok(image.with_data(out).clamped())
}

/// `clamp(Poisson(x * lambda) / lambda)`.
pub fn shot_noise(image: &Image, lambda: f64, rng: &mut SeededRng) -> Result<Image> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid(
            "shot_noise",
            format!("lambda {lambda} must be positive"),
        ));
    }
    let out = image
        .data()
        .iter()
        .map(|&v| (rng.poisson(f64::from(v.max(0.0)) * lambda) as f64 / lambda) as f32)
        .collect();
    Ok(image.with_data(out).clamped())
}

/// Each value independently becomes 0 or 1 (fair coin) with probability `p`.
/// Two uniforms are drawn per value whatever `p` is, so a larger `p` corrupts
/// a superset of the values a smaller one does.
pub fn impulse_noise(image: &Image, p: f64, rng: &mut SeededRng) -> Result<Image> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(
            "impulse_noise",
            format!("fraction {p} must lie in [0, 1]"),
        ));
    }
    let out = image
        .data()
        .iter()
        .map(|&v| {
            let hit = rng.uniform() < p;
            let salt = rng.uniform() < 0.5;
            match (hit, salt) {
                (false, _) => v,
                (true, true) => 1.0,
                (true, false) => 0.0,
            }
        })
        .collect();
    Ok(image.with_data(out).clamped())
}

/// `clamp(x * (1 + sigma * z))`.
pub fn speckle_noise(image: &Image, sigma: f64, rng: &mut SeededRng) -> Result<Image> {
    if !(sigma >= 0.0) {
        return Err(invalid(
            "speckle_noise",
            format!("sigma {sigma} must be >= 0"),
        ));
    }
    let out = image
        .data()
        .iter()
        .map(|&v| (f64::from(v) * (1.0 + sigma * rng.gaussian())) as f32)
        .collect();
    Ok(image.with_data(out).clamped())
}
