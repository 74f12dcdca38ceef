//! Seeded common corruptions for [0, 1] images.
//!
//! Nineteen kinds in four families, five severity levels each, plus an
//! identity level 0. Parameters come from a versioned manifest; randomness
//! comes from a per-image [`SeededRng`] stream derived from `(seed, index)`,
//! so corrupting images one by one or in parallel gives the same result.
//!
//! ```
//! use mocse_corrupt::{apply_corruption, CorruptionKind, CorruptionSpec, Image};
//!
//! let img = Image::filled(32, 32, 3, 0.5).unwrap();
//! let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, 3, 7).unwrap();
//! let a = apply_corruption(&img, &spec, 0).unwrap();
//! assert_eq!(a, apply_corruption(&img, &spec, 0).unwrap());
//! assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
//! ```

// NaN must fail these range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod blur;
mod digital;
mod error;
pub mod filter;
mod image;
mod jpeg;
mod kind;
mod manifest;
mod noise;
pub mod plasma;
mod rng;
mod weather;

pub use blur::{defocus_blur, gaussian_blur, glass_blur, motion_blur, zoom_blur};
pub use digital::{contrast, elastic_transform, pixelate, saturate};
pub use error::{CorruptError, Result};
pub use image::Image;
pub use jpeg::jpeg_compression;
pub use kind::{validate_params, CorruptionKind, Family};
pub use manifest::{Manifest, MANIFEST_VERSION};
pub use noise::{gaussian_noise, impulse_noise, shot_noise, speckle_noise};
pub use rng::{SeededRng, SplitMix64, Xoshiro256pp};
pub use weather::{brightness, fog, frost, snow, spatter, SnowParams, SpatterParams};

/// One corruption request: kind, severity in 0..=5, stream seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        if severity > 5 {
            return Err(CorruptError::InvalidSeverity(severity));
        }
        Ok(Self {
            kind,
            severity,
            seed,
        })
    }

    /// Parses the kind by name.
    pub fn parse(kind: &str, severity: u8, seed: u64) -> Result<Self> {
        Self::new(kind.parse()?, severity, seed)
    }
}

/// Applies `spec` to image number `index` using the built-in manifest.
pub fn apply_corruption(image: &Image, spec: &CorruptionSpec, index: u64) -> Result<Image> {
    apply_with_manifest(image, spec, index, Manifest::builtin())
}

pub fn apply_with_manifest(
    image: &Image,
    spec: &CorruptionSpec,
    index: u64,
    manifest: &Manifest,
) -> Result<Image> {
    if spec.severity > 5 {
        return Err(CorruptError::InvalidSeverity(spec.severity));
    }
    if spec.severity == 0 {
        return Ok(image.clone());
    }
    let params = manifest.params(spec.kind, spec.severity)?;
    let mut rng = SeededRng::for_image(spec.seed, index);
    apply_params(image, spec.kind, params, &mut rng)
}

/// Runs `kind` with explicit parameters (manifest layout) on a given stream.
pub fn apply_params(
    image: &Image,
    kind: CorruptionKind,
    p: &[f64],
    rng: &mut SeededRng,
) -> Result<Image> {
    use CorruptionKind::*;
    validate_params(kind, p)?;
    match kind {
        GaussianNoise => gaussian_noise(image, p[0], rng),
        ShotNoise => shot_noise(image, p[0], rng),
        ImpulseNoise => impulse_noise(image, p[0], rng),
        SpeckleNoise => speckle_noise(image, p[0], rng),
        DefocusBlur => defocus_blur(image, p[0], p[1]),
        GlassBlur => glass_blur(image, p[0], p[1] as usize, p[2] as usize, rng),
        MotionBlur => motion_blur(image, p[0], rng),
        ZoomBlur => zoom_blur(image, p[0], p[1]),
        GaussianBlur => gaussian_blur(image, p[0]),
        Snow => snow(
            image,
            SnowParams {
                loc: p[0],
                scale: p[1],
                zoom: p[2],
                threshold: p[3],
                length: p[4],
                blend: p[5],
            },
            rng,
        ),
        Frost => frost(image, p[0], p[1], rng),
        Fog => fog(image, p[0], p[1], p[2], rng),
        Brightness => brightness(image, p[0]),
        Spatter => spatter(
            image,
            SpatterParams {
                loc: p[0],
                scale: p[1],
                sigma: p[2],
                threshold: p[3],
                opacity: p[4],
                mud: p[5] == 1.0,
            },
            rng,
        ),
        Contrast => contrast(image, p[0]),
        ElasticTransform => elastic_transform(image, p[0], p[1], rng),
        Pixelate => pixelate(image, p[0]),
        JpegCompression => jpeg_compression(image, p[0] as u32, true),
        Saturate => saturate(image, p[0], p[1]),
    }
}
