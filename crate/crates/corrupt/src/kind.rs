use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, CorruptError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Noise,
    Blur,
    Weather,
    Digital,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Noise => "Noise",
            Family::Blur => "Blur",
            Family::Weather => "Weather",
            Family::Digital => "Digital",
        }
    }
}

macro_rules! kinds {
    ($($variant:ident => $name:literal, $title:literal, $family:ident, $arity:literal;)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum CorruptionKind {
            $($variant,)*
        }

        impl CorruptionKind {
            /// All kinds in reporting order.
            pub const ALL: [CorruptionKind; 19] = [$(CorruptionKind::$variant,)*];

            pub fn name(self) -> &'static str {
                match self { $(CorruptionKind::$variant => $name,)* }
            }

            /// Human-readable label for tables.
            pub fn title(self) -> &'static str {
                match self { $(CorruptionKind::$variant => $title,)* }
            }

            pub fn family(self) -> Family {
                match self { $(CorruptionKind::$variant => Family::$family,)* }
            }

            /// Number of parameters per severity level in the manifest.
            pub fn arity(self) -> usize {
                match self { $(CorruptionKind::$variant => $arity,)* }
            }
        }

        impl FromStr for CorruptionKind {
            type Err = CorruptError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(CorruptionKind::$variant),)*
                    _ => Err(CorruptError::UnknownKind(s.to_string())),
                }
            }
        }
    };
}

kinds! {
    GaussianNoise => "gaussian_noise", "Gaussian Noise", Noise, 1;
    ShotNoise => "shot_noise", "Shot Noise", Noise, 1;
    ImpulseNoise => "impulse_noise", "Impulse Noise", Noise, 1;
    SpeckleNoise => "speckle_noise", "Speckle Noise", Noise, 1;
    DefocusBlur => "defocus_blur", "Defocus Blur", Blur, 2;
    GlassBlur => "glass_blur", "Glass Blur", Blur, 3;
    MotionBlur => "motion_blur", "Motion Blur", Blur, 1;
    ZoomBlur => "zoom_blur", "Zoom Blur", Blur, 2;
    GaussianBlur => "gaussian_blur", "Gaussian Blur", Blur, 1;
    Snow => "snow", "Snow", Weather, 6;
    Frost => "frost", "Frost", Weather, 2;
    Fog => "fog", "Fog", Weather, 3;
    Brightness => "brightness", "Brightness", Weather, 1;
    Spatter => "spatter", "Spatter", Weather, 6;
    Contrast => "contrast", "Contrast", Digital, 1;
    ElasticTransform => "elastic_transform", "Elastic Transform", Digital, 2;
    Pixelate => "pixelate", "Pixelate", Digital, 1;
    JpegCompression => "jpeg_compression", "JPEG Compression", Digital, 1;
    Saturate => "saturate", "Saturate", Digital, 2;
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn require(ok: bool, kind: CorruptionKind, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(invalid(kind.name(), msg))
    }
}

fn unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

fn whole(v: f64) -> bool {
    v >= 0.0 && v.fract() == 0.0
}

/// Checks one severity level's parameters for `kind`.
pub fn validate_params(kind: CorruptionKind, p: &[f64]) -> Result<()> {
    use CorruptionKind::*;
    require(
        p.len() == kind.arity(),
        kind,
        &format!("expected {} parameters, got {}", kind.arity(), p.len()),
    )?;
    require(
        p.iter().all(|v| v.is_finite()),
        kind,
        "parameters must be finite",
    )?;
    match kind {
        GaussianNoise | SpeckleNoise | GaussianBlur | MotionBlur => {
            require(p[0] >= 0.0, kind, "must be >= 0")
        }
        ShotNoise => require(p[0] > 0.0, kind, "photon count must be > 0"),
        ImpulseNoise => require(unit(p[0]), kind, "fraction must lie in [0, 1]"),
        DefocusBlur | ElasticTransform => require(p[0] >= 0.0 && p[1] >= 0.0, kind, "must be >= 0"),
        GlassBlur => require(
            p[0] >= 0.0 && whole(p[1]) && whole(p[2]),
            kind,
            "need sigma >= 0 and whole displacement/iterations",
        ),
        ZoomBlur => require(
            p[0] >= 1.0 && p[1] > 0.0,
            kind,
            "need largest factor >= 1 and step > 0",
        ),
        Snow => require(
            p[1] >= 0.0 && p[2] >= 1.0 && p[4] >= 0.0 && unit(p[5]),
            kind,
            "need std >= 0, zoom >= 1, length >= 0, blend in [0, 1]",
        ),
        Frost => require(p[0] >= 0.0 && p[1] >= 0.0, kind, "weights must be >= 0"),
        Fog => require(
            unit(p[0]) && p[1] > 0.0 && p[2] >= 0.0,
            kind,
            "need t in [0, 1], decay > 0, brightness >= 0",
        ),
        Brightness => Ok(()),
        Spatter => require(
            p[1] >= 0.0 && p[2] >= 0.0 && unit(p[4]) && (p[5] == 0.0 || p[5] == 1.0),
            kind,
            "need std >= 0, sigma >= 0, opacity in [0, 1], mud flag 0 or 1",
        ),
        Contrast => require(p[0] >= 0.0, kind, "factor must be >= 0"),
        Pixelate => require(p[0] > 0.0, kind, "factor must be > 0"),
        JpegCompression => require(
            (1.0..=100.0).contains(&p[0]) && p[0].fract() == 0.0,
            kind,
            "quality must be a whole number in 1..=100",
        ),
        Saturate => require(p[0] >= 0.0, kind, "scale must be >= 0"),
    }
}
