//! Baseline JPEG round trip without entropy coding: 8-bit samples, JFIF
//! YCbCr, optional 4:2:0 chroma, 8x8 DCT, quality-scaled standard tables.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{invalid, CorruptError, Result};
use crate::image::{quantize, Image};

const LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

const CHROMA: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// IJG quality scaling of a base table.
pub fn scaled_table(base: &[u16; 64], quality: u32) -> [f64; 64] {
    let q = quality.clamp(1, 100);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

/// Orthonormal DCT-II basis, `basis[u * 8 + x]`.
fn basis() -> &'static [f64; 64] {
    static CELL: OnceLock<[f64; 64]> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut b = [0.0; 64];
        for u in 0..8 {
            let a = if u == 0 { libm::sqrt(0.125) } else { 0.5 };
            for x in 0..8 {
                b[u * 8 + x] = a * libm::cos((2 * x + 1) as f64 * u as f64 * PI / 16.0);
            }
        }
        b
    })
}

/// Quantise and dequantise one level-shifted 8x8 block in place.
fn round_trip_block(block: &mut [f64; 64], table: &[f64; 64]) {
    let c = basis();
    let mut tmp = [0.0; 64];
    let mut coef = [0.0; 64];
    // coef = C * B * C^T
    for u in 0..8 {
        for x in 0..8 {
            tmp[u * 8 + x] = (0..8).map(|y| c[u * 8 + y] * block[y * 8 + x]).sum();
        }
    }
    for u in 0..8 {
        for v in 0..8 {
            let f: f64 = (0..8).map(|x| tmp[u * 8 + x] * c[v * 8 + x]).sum();
            coef[u * 8 + v] = libm::round(f / table[u * 8 + v]) * table[u * 8 + v];
        }
    }
    // block = C^T * coef * C
    for y in 0..8 {
        for v in 0..8 {
            tmp[y * 8 + v] = (0..8).map(|u| c[u * 8 + y] * coef[u * 8 + v]).sum();
        }
    }
    for y in 0..8 {
        for x in 0..8 {
            block[y * 8 + x] = (0..8).map(|v| tmp[y * 8 + v] * c[v * 8 + x]).sum();
        }
    }
}

/// Plane padded by edge replication to `ph x pw`.
fn pad(plane: &[f64], h: usize, w: usize, ph: usize, pw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(ph * pw);
    for y in 0..ph {
        for x in 0..pw {
            out.push(plane[y.min(h - 1) * w + x.min(w - 1)]);
        }
    }
    out
}

fn round_trip_plane(plane: &mut [f64], h: usize, w: usize, table: &[f64; 64]) {
    let mut block = [0.0; 64];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = plane[(by + y) * w + bx + x] - 128.0;
                }
            }
            round_trip_block(&mut block, table);
            for y in 0..8 {
                for x in 0..8 {
                    plane[(by + y) * w + bx + x] = block[y * 8 + x] + 128.0;
                }
            }
        }
    }
}

fn downsample(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(h2 * w2);
    for y in 0..h2 {
        for x in 0..w2 {
            let s = plane[2 * y * w + 2 * x]
                + plane[2 * y * w + 2 * x + 1]
                + plane[(2 * y + 1) * w + 2 * x]
                + plane[(2 * y + 1) * w + 2 * x + 1];
            out.push(s / 4.0);
        }
    }
    out
}

/// Triangle-filter 2x upsampling (weights 3/4 and 1/4 per axis toward the
/// nearer and farther chroma sample), clamp-to-edge.
fn upsample(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let taps = |i: usize, n: usize| -> [(usize, f64); 2] {
        let j = i / 2;
        let other = if i % 2 == 0 {
            j.saturating_sub(1)
        } else {
            (j + 1).min(n - 1)
        };
        [(j, 0.75), (other, 0.25)]
    };
    let mut out = Vec::with_capacity(4 * h * w);
    for y in 0..2 * h {
        let ty = taps(y, h);
        for x in 0..2 * w {
            let tx = taps(x, w);
            let mut v = 0.0;
            for &(yy, a) in &ty {
                for &(xx, b) in &tx {
                    v += a * b * plane[yy * w + xx];
                }
            }
            out.push(v);
        }
    }
    out
}

/// Lossy JPEG round trip at `quality` (1..=100). Grayscale images use the
/// luminance path only.
pub fn jpeg_compression(image: &Image, quality: u32, subsample: bool) -> Result<Image> {
    if !(1..=100).contains(&quality) {
        return Err(invalid(
            "jpeg_compression",
            format!("quality {quality} outside 1..=100"),
        ));
    }
    let [h, w, c] = image.shape();
    if h < 8 || w < 8 {
        return Err(CorruptError::ImageTooSmall {
            kind: "jpeg_compression",
            height: h,
            width: w,
            min: 8,
        });
    }
    let luma_q = scaled_table(&LUMA, quality);
    let chroma_q = scaled_table(&CHROMA, quality);
    let sample = |y: usize, x: usize, ch: usize| f64::from(quantize(image.get(y, x, ch)));
    let unit = if subsample && c >= 3 { 16 } else { 8 };
    let ph = h.div_ceil(unit) * unit;
    let pw = w.div_ceil(unit) * unit;

    if c < 3 {
        let mut out = image.data().to_vec();
        for ch in 0..c {
            let plane: Vec<f64> = (0..h * w).map(|i| sample(i / w, i % w, ch)).collect();
            let mut p = pad(&plane, h, w, ph, pw);
            round_trip_plane(&mut p, ph, pw, &luma_q);
            for i in 0..h * w {
                out[i * c + ch] =
                    f32::from(quantize((p[(i / w) * pw + i % w] / 255.0) as f32)) / 255.0;
            }
        }
        return Ok(image.with_data(out));
    }

    let mut yp = Vec::with_capacity(h * w);
    let mut cb = Vec::with_capacity(h * w);
    let mut cr = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = (sample(y, x, 0), sample(y, x, 1), sample(y, x, 2));
            yp.push(0.299 * r + 0.587 * g + 0.114 * b);
            cb.push(-0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0);
            cr.push(0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0);
        }
    }
    let mut yp = pad(&yp, h, w, ph, pw);
    let mut cb = pad(&cb, h, w, ph, pw);
    let mut cr = pad(&cr, h, w, ph, pw);
    round_trip_plane(&mut yp, ph, pw, &luma_q);
    let (ch_h, ch_w) = if subsample {
        (ph / 2, pw / 2)
    } else {
        (ph, pw)
    };
    if subsample {
        cb = downsample(&cb, ph, pw);
        cr = downsample(&cr, ph, pw);
    }
    round_trip_plane(&mut cb, ch_h, ch_w, &chroma_q);
    round_trip_plane(&mut cr, ch_h, ch_w, &chroma_q);

    if subsample {
        cb = upsample(&cb, ch_h, ch_w);
        cr = upsample(&cr, ch_h, ch_w);
    }
    let mut out = image.data().to_vec();
    for y in 0..h {
        for x in 0..w {
            let l = yp[y * pw + x];
            let b = cb[y * pw + x] - 128.0;
            let r = cr[y * pw + x] - 128.0;
            let rgb = [
                l + 1.402 * r,
                l - 0.344_136 * b - 0.714_136 * r,
                l + 1.772 * b,
            ];
            for (ch, v) in rgb.into_iter().enumerate() {
                out[(y * w + x) * c + ch] = f32::from(quantize((v / 255.0) as f32)) / 255.0;
            }
        }
    }
    Ok(image.with_data(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quality_scaling_matches_ijg() {
        assert_eq!(scaled_table(&LUMA, 50)[0], 16.0);
        assert_eq!(scaled_table(&LUMA, 100), [1.0; 64]);
        // q = 10: scale 500, (16 * 500 + 50) / 100 = 80.
        assert_eq!(scaled_table(&LUMA, 10)[0], 80.0);
        assert_eq!(scaled_table(&CHROMA, 1)[63], 255.0);
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        let c = basis();
        for u in 0..8 {
            for v in 0..8 {
                let d: f64 = (0..8).map(|x| c[u * 8 + x] * c[v * 8 + x]).sum();
                assert!((d - if u == v { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_table_block_round_trip_is_near_lossless() {
        let mut block = [0.0; 64];
        for (i, b) in block.iter_mut().enumerate() {
            *b = (i as f64 * 3.7) % 200.0 - 100.0;
        }
        let orig = block;
        round_trip_block(&mut block, &[1.0; 64]);
        for (a, b) in block.iter().zip(&orig) {
            assert!((a - b).abs() < 4.0);
        }
    }
}
