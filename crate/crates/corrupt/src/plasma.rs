//! Diamond-square fractal fields and multi-octave value noise.

use crate::rng::SeededRng;

/// Diamond-square field on a `(2^k + 1)`-square grid, rescaled to [-1, 1].
/// Displacement amplitude starts at 1 and is divided by `decay` each level.
pub fn diamond_square(k: u32, decay: f64, rng: &mut SeededRng) -> Vec<f64> {
    let n = (1usize << k) + 1;
    let mut g = vec![0.0f64; n * n];
    let at = |y: usize, x: usize| y * n + x;
    for (y, x) in [(0, 0), (0, n - 1), (n - 1, 0), (n - 1, n - 1)] {
        g[at(y, x)] = rng.uniform_in(-1.0, 1.0);
    }
    let mut step = n - 1;
    let mut amp = 1.0;
    while step > 1 {
        let half = step / 2;
        amp /= decay;
        // Diamond: centres of squares.
        for y in (half..n).step_by(step) {
            for x in (half..n).step_by(step) {
                let avg = (g[at(y - half, x - half)]
                    + g[at(y - half, x + half)]
                    + g[at(y + half, x - half)]
                    + g[at(y + half, x + half)])
                    / 4.0;
                g[at(y, x)] = avg + rng.uniform_in(-amp, amp);
            }
        }
        // Square: edge midpoints, averaging the neighbours that exist.
        for y in (0..n).step_by(half) {
            let start = if (y / half) % 2 == 0 { half } else { 0 };
            for x in (start..n).step_by(step) {
                let mut sum = 0.0;
                let mut cnt = 0.0;
                if y >= half {
                    sum += g[at(y - half, x)];
                    cnt += 1.0;
                }
                if y + half < n {
                    sum += g[at(y + half, x)];
                    cnt += 1.0;
                }
                if x >= half {
                    sum += g[at(y, x - half)];
                    cnt += 1.0;
                }
                if x + half < n {
                    sum += g[at(y, x + half)];
                    cnt += 1.0;
                }
                g[at(y, x)] = sum / cnt + rng.uniform_in(-amp, amp);
            }
        }
        step = half;
    }
    rescale(&mut g, -1.0, 1.0);
    g
}

/// Sum of bilinear value-noise octaves on an `h x w` plane, rescaled to [0, 1].
/// Octave `o` uses a `(base << o)` lattice with amplitude `0.5^o`.
pub fn value_noise(h: usize, w: usize, base: usize, octaves: u32, rng: &mut SeededRng) -> Vec<f64> {
    let mut out = vec![0.0f64; h * w];
    let mut amp = 1.0;
    for o in 0..octaves {
        let cells = base << o;
        let m = cells + 1;
        let lattice: Vec<f64> = (0..m * m).map(|_| rng.uniform()).collect();
        for y in 0..h {
            let fy = (y as f64 + 0.5) / h as f64 * cells as f64;
            let (y0, ty) = split(fy, cells);
            for x in 0..w {
                let fx = (x as f64 + 0.5) / w as f64 * cells as f64;
                let (x0, tx) = split(fx, cells);
                let l = |yy: usize, xx: usize| lattice[yy * m + xx];
                let top = l(y0, x0) + (l(y0, x0 + 1) - l(y0, x0)) * tx;
                let bottom = l(y0 + 1, x0) + (l(y0 + 1, x0 + 1) - l(y0 + 1, x0)) * tx;
                out[y * w + x] += amp * (top + (bottom - top) * ty);
            }
        }
        amp *= 0.5;
    }
    rescale(&mut out, 0.0, 1.0);
    out
}

/// Cell index and smoothstep weight.
fn split(f: f64, cells: usize) -> (usize, f64) {
    let i = (libm::floor(f) as usize).min(cells - 1);
    let t = f - i as f64;
    (i, t * t * (3.0 - 2.0 * t))
}

fn rescale(v: &mut [f64], lo: f64, hi: f64) {
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    for x in v.iter_mut() {
        *x = if span > 0.0 {
            lo + (hi - lo) * (*x - min) / span
        } else {
            (lo + hi) / 2.0
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diamond_square_range_and_determinism() {
        for seed in 0..20 {
            let a = diamond_square(5, 2.0, &mut SeededRng::new(seed));
            let b = diamond_square(5, 2.0, &mut SeededRng::new(seed));
            assert_eq!(a.len(), 33 * 33);
            assert_eq!(a, b);
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(a.contains(&-1.0) && a.contains(&1.0));
        }
    }

    #[test]
    fn value_noise_is_in_unit_range() {
        let v = value_noise(32, 32, 4, 4, &mut SeededRng::new(1));
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
    }
}
