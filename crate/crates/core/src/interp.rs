//! Unguided upsamplers: nearest-neighbor, bilinear and bicubic.
//!
//! All three share the pixel-center mapping `x_lr = (x_hr + 0.5) / α − 0.5`
//! and replicate (clamp-to-edge) padding. Bicubic uses the Keys cubic
//! convolution kernel with `a = −0.5` (Catmull–Rom).

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Keys kernel parameter used by [`upsample_bicubic`].
pub const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn keys_kernel(t: f64, a: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Continuous LR coordinate of HR pixel index `x`.
#[inline]
pub fn lr_coord(x: usize, alpha: usize) -> f64 {
    (x as f64 + 0.5) / alpha as f64 - 0.5
}

/// Tap list for one output coordinate along one axis.
#[derive(Debug, Clone)]
struct Taps {
    index: Vec<usize>,
    weight: Vec<f64>,
}

fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

fn linear_taps(out_len: usize, in_len: usize, alpha: usize) -> Vec<Taps> {
    (0..out_len)
        .map(|x| {
            let u = lr_coord(x, alpha);
            let x0 = u.floor();
            let t = u - x0;
            let x0 = x0 as isize;
            Taps {
                index: vec![clamp_index(x0, in_len), clamp_index(x0 + 1, in_len)],
                weight: vec![1.0 - t, t],
            }
        })
        .collect()
}

fn cubic_taps(out_len: usize, in_len: usize, alpha: usize) -> Vec<Taps> {
    (0..out_len)
        .map(|x| {
            let u = lr_coord(x, alpha);
            let x0 = u.floor();
            let t = u - x0;
            let x0 = x0 as isize;
            Taps {
                index: (-1..=2).map(|k| clamp_index(x0 + k, in_len)).collect(),
                weight: vec![
                    keys_kernel(t + 1.0, KEYS_A),
                    keys_kernel(t, KEYS_A),
                    keys_kernel(1.0 - t, KEYS_A),
                    keys_kernel(2.0 - t, KEYS_A),
                ],
            }
        })
        .collect()
}

/// Tensor-product resampling with precomputed per-axis taps.
fn separable(
    source: &Raster,
    alpha: usize,
    row_taps: &[Taps],
    col_taps: &[Taps],
) -> Result<Raster> {
    let (c, h, w) = source.dims();
    let (oh, ow) = (h * alpha, w * alpha);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut horiz = vec![0.0f64; h * ow];
    for k in 0..c {
        let plane = source.channel(k);
        for r in 0..h {
            let src_row = &plane[r * w..(r + 1) * w];
            for (x, taps) in col_taps.iter().enumerate() {
                horiz[r * ow + x] = taps
                    .index
                    .iter()
                    .zip(&taps.weight)
                    .map(|(&i, &wt)| src_row[i] as f64 * wt)
                    .sum();
            }
        }
        for taps in row_taps {
            for x in 0..ow {
                let v: f64 = taps
                    .index
                    .iter()
                    .zip(&taps.weight)
                    .map(|(&i, &wt)| horiz[i * ow + x] * wt)
                    .sum();
                out.push(v as f32);
            }
        }
    }
    Raster::new(c, oh, ow, out, source.units())
}

fn check_alpha(alpha: usize) -> Result<()> {
    if alpha == 0 {
        return Err(Error::Argument("alpha must be at least 1".into()));
    }
    Ok(())
}

/// Exact block replication: output `(i, j)` = `source(⌊i/α⌋, ⌊j/α⌋)`.
pub fn upsample_nearest(source: &Raster, alpha: usize) -> Result<Raster> {
    check_alpha(alpha)?;
    let (c, h, w) = source.dims();
    let (oh, ow) = (h * alpha, w * alpha);
    let mut out = Vec::with_capacity(c * oh * ow);
    for k in 0..c {
        let plane = source.channel(k);
        for i in 0..oh {
            let row = &plane[(i / alpha) * w..(i / alpha + 1) * w];
            for j in 0..ow {
                out.push(row[j / alpha]);
            }
        }
    }
    Raster::new(c, oh, ow, out, source.units())
}

pub fn upsample_bilinear(source: &Raster, alpha: usize) -> Result<Raster> {
    check_alpha(alpha)?;
    let (_, h, w) = source.dims();
    let rows = linear_taps(h * alpha, h, alpha);
    let cols = linear_taps(w * alpha, w, alpha);
    separable(source, alpha, &rows, &cols)
}

/// Catmull–Rom cubic convolution. Needs at least a 2×2 source.
pub fn upsample_bicubic(source: &Raster, alpha: usize) -> Result<Raster> {
    check_alpha(alpha)?;
    let (_, h, w) = source.dims();
    if h < 2 || w < 2 {
        return Err(Error::Size(format!(
            "bicubic upsampling needs a source of at least 2x2, got {h}x{w}"
        )));
    }
    let rows = cubic_taps(h * alpha, h, alpha);
    let cols = cubic_taps(w * alpha, w, alpha);
    separable(source, alpha, &rows, &cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::downsample_avg;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256StarStar;

    fn r(h: usize, w: usize, v: &[f32]) -> Raster {
        Raster::single(h, w, v.to_vec(), "t/px").unwrap()
    }

    fn random(h: usize, w: usize, seed: u64) -> Raster {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        Raster::from_fn(h, w, "t/px", |_, _| rng.random_range(0.0..100.0)).unwrap()
    }

    #[test]
    fn kernel_partition_of_unity() {
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let s = keys_kernel(t + 1.0, KEYS_A)
                + keys_kernel(t, KEYS_A)
                + keys_kernel(1.0 - t, KEYS_A)
                + keys_kernel(2.0 - t, KEYS_A);
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(keys_kernel(0.0, KEYS_A), 1.0);
        assert_eq!(keys_kernel(1.0, KEYS_A), 0.0);
        assert_eq!(keys_kernel(2.5, KEYS_A), 0.0);
    }

    #[test]
    fn nearest_replicates_blocks() {
        let out = upsample_nearest(&r(2, 2, &[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(
            out.values(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
        let x = random(3, 5, 1);
        assert_eq!(upsample_nearest(&x, 1).unwrap(), x);
    }

    #[test]
    fn nearest_pools_back_exactly() {
        let s = random(4, 6, 3);
        for alpha in [2, 3, 8] {
            let back = downsample_avg(&upsample_nearest(&s, alpha).unwrap(), alpha).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn bilinear_two_pixel_row() {
        let out = upsample_bilinear(&r(1, 2, &[0.0, 1.0]), 2).unwrap();
        assert_eq!(out.dims(), (1, 2, 4));
        assert_eq!(&out.values()[..4], &[0.0, 0.25, 0.75, 1.0]);
        assert_eq!(&out.values()[4..], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn bilinear_reproduces_ramp_between_nodes() {
        let s = Raster::from_fn(4, 6, "1", |_, c| 2.0 * c as f32 + 1.0).unwrap();
        let alpha = 4;
        let out = upsample_bilinear(&s, alpha).unwrap();
        for x in 0..out.width() {
            let u = lr_coord(x, alpha).clamp(0.0, 5.0);
            let expected = 2.0 * u + 1.0;
            assert!((out.get(0, 3, x) as f64 - expected).abs() < 1e-5, "x={x}");
        }
    }

    #[test]
    fn bicubic_reproduces_degree_one_interior() {
        let s = Raster::from_fn(6, 7, "1", |r, c| 0.5 * r as f32 - 1.5 * c as f32 + 4.0).unwrap();
        let alpha = 4;
        let out = upsample_bicubic(&s, alpha).unwrap();
        // Interior: all four taps land inside the source on both axes.
        for y in 0..out.height() {
            for x in 0..out.width() {
                let (v, u) = (lr_coord(y, alpha), lr_coord(x, alpha));
                if (1.0..4.0).contains(&v) && (1.0..5.0).contains(&u) {
                    let expected = 0.5 * v - 1.5 * u + 4.0;
                    assert!((out.get(0, y, x) as f64 - expected).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn bicubic_impulse_matches_kernel_products() {
        // Independent oracle: a unit impulse at (2, 2) of a 4×4 source is never
        // reached through clamping, so each output equals w(v − 2)·w(u − 2).
        fn keys_ref(t: f64) -> f64 {
            let a = -0.5;
            let t = t.abs();
            if t <= 1.0 {
                (a + 2.0) * t.powi(3) - (a + 3.0) * t.powi(2) + 1.0
            } else if t < 2.0 {
                a * t.powi(3) - 5.0 * a * t.powi(2) + 8.0 * a * t - 4.0 * a
            } else {
                0.0
            }
        }
        let mut v = vec![0.0f32; 16];
        v[2 * 4 + 2] = 1.0;
        let out = upsample_bicubic(&r(4, 4, &v), 2).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let dy = (y as f64 + 0.5) / 2.0 - 0.5 - 2.0;
                let dx = (x as f64 + 0.5) / 2.0 - 0.5 - 2.0;
                let expected = keys_ref(dy) * keys_ref(dx);
                assert!(
                    (out.get(0, y, x) as f64 - expected).abs() < 1e-6,
                    "({y},{x})"
                );
            }
        }
        // Hand-evaluated 1-D profile values at offsets −1.25 and −0.75.
        assert!((keys_ref(-1.25) + 0.0703125).abs() < 1e-12);
        assert!((keys_ref(-0.75) - 0.2265625).abs() < 1e-12);
    }

    #[test]
    fn bicubic_size_error() {
        assert!(matches!(
            upsample_bicubic(&r(1, 3, &[1.0, 2.0, 3.0]), 2),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn constants_preserved() {
        let s = Raster::filled(1, 5, 3, 42.5, "t/px").unwrap();
        for alpha in [1, 2, 5] {
            for out in [
                upsample_nearest(&s, alpha).unwrap(),
                upsample_bilinear(&s, alpha).unwrap(),
                upsample_bicubic(&s, alpha).unwrap(),
            ] {
                assert!(out.values().iter().all(|&v| (v - 42.5).abs() <= 42.5e-6));
            }
        }
    }

    proptest! {
        #[test]
        fn range_bounds(seed in any::<u64>(), h in 2usize..7, w in 2usize..7, alpha in 1usize..6) {
            let s = random(h, w, seed);
            let (lo, hi) = (s.min(), s.max());
            for out in [upsample_nearest(&s, alpha).unwrap(), upsample_bilinear(&s, alpha).unwrap()] {
                prop_assert!(out.min() >= lo - 1e-4 && out.max() <= hi + 1e-4);
            }
            // Cubic overshoot stays within 25% of the local (4×4 support) range.
            let out = upsample_bicubic(&s, alpha).unwrap();
            for y in 0..out.height() {
                for x in 0..out.width() {
                    let (v, u) = (lr_coord(y, alpha).floor() as isize, lr_coord(x, alpha).floor() as isize);
                    let mut lmin = f32::INFINITY;
                    let mut lmax = f32::NEG_INFINITY;
                    for dy in -1..=2 {
                        for dx in -1..=2 {
                            let val = s.get(0, clamp_index(v + dy, h), clamp_index(u + dx, w));
                            lmin = lmin.min(val);
                            lmax = lmax.max(val);
                        }
                    }
                    let slack = 0.25 * (lmax - lmin) + 1e-4;
                    let o = out.get(0, y, x);
                    prop_assert!(o >= lmin - slack && o <= lmax + slack);
                }
            }
        }
    }
}
