//! Blur kernels and clamp-to-edge spatial operators.

use crate::image::Image;

/// Odd-sized 2-D kernel anchored at its centre cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub height: usize,
    pub width: usize,
    pub weights: Vec<f64>,
}

impl Kernel {
    pub fn identity() -> Self {
        Self {
            height: 1,
            width: 1,
            weights: vec![1.0],
        }
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn normalized(mut self) -> Self {
        let s = self.sum();
        for w in &mut self.weights {
            *w /= s;
        }
        self
    }
}

/// Truncated 1-D Gaussian of radius `ceil(3 sigma)`, unit mass.
pub fn gaussian_1d(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = libm::ceil(3.0 * sigma) as i64;
    let w: Vec<f64> = (-r..=r)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

pub fn gaussian_kernel(sigma: f64) -> Kernel {
    let k = gaussian_1d(sigma);
    let n = k.len();
    let weights = (0..n * n).map(|i| k[i / n] * k[i % n]).collect();
    Kernel {
        height: n,
        width: n,
        weights,
    }
}

/// Binary disk `x^2 + y^2 <= r^2`, unit mass.
pub fn disk_kernel(radius: f64) -> Kernel {
    let r = libm::ceil(radius.max(0.0)) as i64;
    let n = (2 * r + 1) as usize;
    let r2 = radius * radius;
    let weights = (0..n * n)
        .map(|i| {
            let y = (i / n) as i64 - r;
            let x = (i % n) as i64 - r;
            if ((x * x + y * y) as f64) <= r2 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Kernel {
        height: n,
        width: n,
        weights,
    }
    .normalized()
}

/// Line of `length` pixels through the centre at `angle` radians, rasterised
/// by bilinear splatting of 4 samples per pixel of length.
pub fn motion_kernel(length: f64, angle: f64) -> Kernel {
    if length <= 0.0 {
        return Kernel::identity();
    }
    let r = libm::ceil(length / 2.0) as i64 + 1;
    let n = (2 * r + 1) as usize;
    let mut weights = vec![0.0; n * n];
    let samples = libm::ceil(length * 4.0).max(1.0) as usize;
    let (dy, dx) = (libm::sin(angle), libm::cos(angle));
    for j in 0..samples {
        let t = -length / 2.0 + length * (j as f64 + 0.5) / samples as f64;
        let (py, px) = (t * dy + r as f64, t * dx + r as f64);
        let (y0, x0) = (libm::floor(py), libm::floor(px));
        let (fy, fx) = (py - y0, px - x0);
        for (oy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (ox, wx) in [(0, 1.0 - fx), (1, fx)] {
                let (y, x) = (y0 as usize + oy, x0 as usize + ox);
                weights[y * n + x] += wy * wx;
            }
        }
    }
    Kernel {
        height: n,
        width: n,
        weights,
    }
    .normalized()
}

#[inline]
fn clamp_index(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// Cross-correlation with clamp-to-edge borders.
pub fn convolve(image: &Image, kernel: &Kernel) -> Image {
    let [h, w, c] = image.shape();
    let (ry, rx) = ((kernel.height / 2) as i64, (kernel.width / 2) as i64);
    let src = image.data();
    let mut out = vec![0.0f32; src.len()];
    let mut acc = vec![0.0f64; c];
    for y in 0..h {
        for x in 0..w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for ky in 0..kernel.height {
                let sy = clamp_index(y as i64 + ky as i64 - ry, h);
                for kx in 0..kernel.width {
                    let wgt = kernel.weights[ky * kernel.width + kx];
                    if wgt == 0.0 {
                        continue;
                    }
                    let sx = clamp_index(x as i64 + kx as i64 - rx, w);
                    let base = (sy * w + sx) * c;
                    for ch in 0..c {
                        acc[ch] += wgt * f64::from(src[base + ch]);
                    }
                }
            }
            let base = (y * w + x) * c;
            for ch in 0..c {
                out[base + ch] = acc[ch] as f32;
            }
        }
    }
    image.with_data(out)
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    let k = gaussian_1d(sigma);
    if k.len() == 1 {
        return image.clone();
    }
    let r = (k.len() / 2) as i64;
    let [h, w, c] = image.shape();
    let pass = |src: &[f32], vertical: bool| -> Vec<f32> {
        let mut out = vec![0.0f32; src.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0f64;
                    for (i, &wgt) in k.iter().enumerate() {
                        let o = i as i64 - r;
                        let (sy, sx) = if vertical {
                            (clamp_index(y as i64 + o, h), x)
                        } else {
                            (y, clamp_index(x as i64 + o, w))
                        };
                        acc += wgt * f64::from(src[(sy * w + sx) * c + ch]);
                    }
                    out[(y * w + x) * c + ch] = acc as f32;
                }
            }
        }
        out
    };
    let tmp = pass(image.data(), false);
    image.with_data(pass(&tmp, true))
}

/// Bilinear sample at fractional (y, x) with clamp-to-edge borders.
#[inline]
pub fn sample_bilinear(image: &Image, y: f64, x: f64, ch: usize) -> f64 {
    let [h, w, _] = image.shape();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (libm::floor(y), libm::floor(x));
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as usize, x0 as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let g = |yy, xx| f64::from(image.get(yy, xx, ch));
    let top = (1.0 - fx) * g(y0, x0) + fx * g(y0, x1);
    let bottom = (1.0 - fx) * g(y1, x0) + fx * g(y1, x1);
    (1.0 - fy) * top + fy * bottom
}

/// Centre zoom by `factor` (> 1 magnifies), bilinear, clamp-to-edge.
pub fn zoom(image: &Image, factor: f64) -> Image {
    let [h, w, c] = image.shape();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        let sy = cy + (y as f64 - cy) / factor;
        for x in 0..w {
            let sx = cx + (x as f64 - cx) / factor;
            for ch in 0..c {
                out.push(sample_bilinear(image, sy, sx, ch) as f32);
            }
        }
    }
    image.with_data(out)
}

/// Single-channel plane zoom, used for overlay layers.
pub(crate) fn zoom_plane(plane: &[f64], h: usize, w: usize, factor: f64) -> Vec<f64> {
    let img = Image::new(h, w, 1, plane.iter().map(|&v| v as f32).collect()).expect("plane shape");
    zoom(&img, factor)
        .data()
        .iter()
        .map(|&v| f64::from(v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_have_unit_mass() {
        for s in [0.0, 0.3, 0.7, 1.0, 2.5] {
            assert!((gaussian_kernel(s).sum() - 1.0).abs() < 1e-12);
        }
        for r in [0.0, 0.5, 1.0, 1.5, 3.0] {
            assert!((disk_kernel(r).sum() - 1.0).abs() < 1e-12);
        }
        for (l, a) in [(0.0, 0.0), (3.0, 0.3), (7.5, -0.7), (11.0, 1.2)] {
            assert!((motion_kernel(l, a).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disk_of_radius_one_is_a_plus() {
        let k = disk_kernel(1.0);
        let on: Vec<bool> = k.weights.iter().map(|&w| w > 0.0).collect();
        assert_eq!(
            on,
            [false, true, false, true, true, true, false, true, false]
        );
    }

    #[test]
    fn horizontal_motion_kernel_stays_on_centre_row() {
        let k = motion_kernel(3.0, 0.0);
        let mid = k.height / 2;
        for (i, &w) in k.weights.iter().enumerate() {
            if i / k.width != mid {
                assert_eq!(w, 0.0);
            }
        }
    }

    #[test]
    fn zoom_by_one_is_identity() {
        let img = Image::new(3, 4, 1, (0..12).map(|v| v as f32 / 11.0).collect()).unwrap();
        assert_eq!(zoom(&img, 1.0), img);
    }

    #[test]
    fn bilinear_midpoint() {
        let img = Image::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(sample_bilinear(&img, 0.0, 0.5, 0), 0.5);
        assert_eq!(sample_bilinear(&img, 0.0, 9.0, 0), 1.0);
    }
}
