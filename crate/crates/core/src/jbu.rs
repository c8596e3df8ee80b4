//! Joint bilateral upsampling.
//!
//! For every HR pixel `p` with continuous LR coordinate `p↓`:
//!
//! ```text
//! Ŷ_p = (1 / k_p) · Σ_{q↓ ∈ N_p} S_{q↓} · f(‖p↓ − q↓‖₂) · g(‖G_p − G_q‖₂)
//! ```
//!
//! `f` and `g` are Gaussians, `N_p` is the `(2r+1)²` LR window (Chebyshev
//! radius `r`, clipped to the grid) around `round(p↓)`, and `G_q` is the guide
//! at the HR pixel nearest the centre of LR cell `q↓`. The guide is compared
//! in standardized (z-scored) units.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::lr_coord;
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GuideStats {
    /// Per-channel mean and population std. A constant channel gets std 1 so
    /// that it standardizes to zero instead of failing.
    pub fn from_guide(guide: &Raster) -> Self {
        let n = guide.plane_len() as f64;
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for k in 0..guide.channels() {
            let ch = guide.channel(k);
            let m = ch.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = ch.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JbuParams {
    /// Spatial kernel width, in LR pixels.
    pub sigma_spatial: f64,
    /// Range kernel width, in standardized guide units.
    pub sigma_range: f64,
    /// Chebyshev window radius, in LR pixels.
    pub window_radius: usize,
    /// Standardization statistics; computed from the guide itself when absent.
    pub guide_stats: Option<GuideStats>,
}

impl Default for JbuParams {
    fn default() -> Self {
        Self {
            sigma_spatial: 1.0,
            sigma_range: 0.1,
            window_radius: 2,
            guide_stats: None,
        }
    }
}

impl JbuParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_spatial > 0.0 && self.sigma_spatial.is_finite()) {
            return Err(Error::Argument(format!(
                "sigma_spatial must be positive, got {}",
                self.sigma_spatial
            )));
        }
        if !(self.sigma_range > 0.0) || self.sigma_range.is_nan() {
            return Err(Error::Argument(format!(
                "sigma_range must be positive, got {}",
                self.sigma_range
            )));
        }
        if self.window_radius == 0 {
            return Err(Error::Argument("window_radius must be at least 1".into()));
        }
        Ok(())
    }
}

/// Maps guide channel `k` to `(v − mean_k) / std_k`.
pub fn standardize_guide(guide: &Raster, mean: &[f64], std: &[f64]) -> Result<Raster> {
    let c = guide.channels();
    if mean.len() != c || std.len() != c {
        return Err(Error::Argument(format!(
            "standardization stats have {} means and {} stds for {c} channels",
            mean.len(),
            std.len()
        )));
    }
    if let Some(k) = std.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::Argument(format!(
            "channel {k} has non-positive std {}",
            std[k]
        )));
    }
    let mut out = Vec::with_capacity(guide.values().len());
    for k in 0..c {
        out.extend(
            guide
                .channel(k)
                .iter()
                .map(|&v| ((v as f64 - mean[k]) / std[k]) as f32),
        );
    }
    Raster::new(c, guide.height(), guide.width(), out, guide.units())
}

#[derive(Debug, Clone, PartialEq)]
pub struct JbuOutput {
    pub map: Raster,
    /// HR pixels whose normalizer underflowed and fell back to spatial weights.
    pub fallback_pixels: usize,
}

pub fn jbu_upsample(
    source: &Raster,
    guide: &Raster,
    params: &JbuParams,
    alpha: usize,
) -> Result<JbuOutput> {
    params.validate()?;
    if alpha == 0 {
        return Err(Error::Argument("alpha must be at least 1".into()));
    }
    if source.channels() != 1 {
        return Err(Error::Dimension(format!(
            "JBU source must be single-channel, got {}",
            source.channels()
        )));
    }
    let (_, h, w) = source.dims();
    let (oh, ow) = (h * alpha, w * alpha);
    if guide.height() != oh || guide.width() != ow {
        return Err(Error::Dimension(format!(
            "guide is {}x{} but source {h}x{w} at alpha {alpha} needs {oh}x{ow}",
            guide.height(),
            guide.width()
        )));
    }
    let stats = match &params.guide_stats {
        Some(s) => s.clone(),
        None => GuideStats::from_guide(guide),
    };
    let z = standardize_guide(guide, &stats.mean, &stats.std)?;
    let c = z.channels();
    let plane = oh * ow;
    let zv = z.values();

    // Guide vector at the HR pixel nearest each LR cell centre.
    let half = alpha / 2;
    let mut centres = vec![0.0f64; h * w * c];
    for qi in 0..h {
        for qj in 0..w {
            let hr = (qi * alpha + half) * ow + qj * alpha + half;
            for k in 0..c {
                centres[(qi * w + qj) * c + k] = zv[k * plane + hr] as f64;
            }
        }
    }

    let src = source.values();
    let r = params.window_radius as isize;
    let inv_2ss = 1.0 / (2.0 * params.sigma_spatial * params.sigma_spatial);
    let inv_2sr = 1.0 / (2.0 * params.sigma_range * params.sigma_range);
    let window = |centre: f64, len: usize| {
        let c = (centre.round() as isize).clamp(0, len as isize - 1);
        (
            (c - r).max(0) as usize,
            (c + r).min(len as isize - 1) as usize,
        )
    };

    let mut out = vec![0.0f32; plane];
    let fallbacks: usize = out
        .par_chunks_mut(ow)
        .enumerate()
        .map(|(i, row)| {
            let pi = lr_coord(i, alpha);
            let (r0, r1) = window(pi, h);
            let mut gp = vec![0.0f64; c];
            let mut fallback = 0;
            for (j, out_px) in row.iter_mut().enumerate() {
                let pj = lr_coord(j, alpha);
                let (c0, c1) = window(pj, w);
                for (k, g) in gp.iter_mut().enumerate() {
                    *g = zv[k * plane + i * ow + j] as f64;
                }
                let (mut num, mut den) = (0.0f64, 0.0f64);
                let (mut num_s, mut den_s) = (0.0f64, 0.0f64);
                for qi in r0..=r1 {
                    for qj in c0..=c1 {
                        let dy = pi - qi as f64;
                        let dx = pj - qj as f64;
                        let f = (-(dy * dy + dx * dx) * inv_2ss).exp();
                        let gq = &centres[(qi * w + qj) * c..(qi * w + qj + 1) * c];
                        let d2: f64 = gp.iter().zip(gq).map(|(a, b)| (a - b) * (a - b)).sum();
                        let g = (-d2 * inv_2sr).exp();
                        let s = src[qi * w + qj] as f64;
                        num += s * f * g;
                        den += f * g;
                        num_s += s * f;
                        den_s += f;
                    }
                }
                *out_px = if den > 0.0 && den.is_finite() {
                    (num / den) as f32
                } else {
                    fallback += 1;
                    (num_s / den_s) as f32
                };
            }
            fallback
        })
        .sum();

    Ok(JbuOutput {
        map: Raster::single(oh, ow, out, source.units())?,
        fallback_pixels: fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256StarStar;

    fn random(c: usize, h: usize, w: usize, seed: u64, lo: f32, hi: f32) -> Raster {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let v = (0..c * h * w).map(|_| rng.random_range(lo..hi)).collect();
        Raster::new(c, h, w, v, "1").unwrap()
    }

    fn identity_stats(c: usize) -> Option<GuideStats> {
        Some(GuideStats {
            mean: vec![0.0; c],
            std: vec![1.0; c],
        })
    }

    #[test]
    fn standardize_zscores() {
        let g = random(3, 16, 16, 4, -5.0, 20.0);
        let stats = GuideStats::from_guide(&g);
        let z = standardize_guide(&g, &stats.mean, &stats.std).unwrap();
        let zs = GuideStats::from_guide(&z);
        for k in 0..3 {
            assert!(zs.mean[k].abs() < 1e-5);
            assert!((zs.std[k] - 1.0).abs() < 1e-4);
        }
        let same = standardize_guide(&g, &[0.0; 3], &[1.0; 3]).unwrap();
        assert_eq!(same, g);
        let c = Raster::filled(1, 4, 4, 3.5, "1").unwrap();
        let out = standardize_guide(&c, &[1.0], &[1.0]).unwrap();
        assert!(out.values().iter().all(|&v| v == 2.5));
        assert!(matches!(
            standardize_guide(&c, &[0.0], &[0.0]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn constant_source_stays_constant() {
        let s = Raster::filled(1, 4, 5, 17.0, "t/px").unwrap();
        let g = random(3, 16, 20, 1, 0.0, 1.0);
        let out = jbu_upsample(&s, &g, &JbuParams::default(), 4).unwrap();
        assert!(out.map.values().iter().all(|&v| (v - 17.0).abs() < 1e-4));
    }

    /// Spatial-only oracle written directly from the window definition.
    fn spatial_oracle(s: &Raster, alpha: usize, sigma: f64, radius: isize) -> Vec<f64> {
        let (h, w) = (s.height() as isize, s.width() as isize);
        let mut out = Vec::new();
        for i in 0..s.height() * alpha {
            for j in 0..s.width() * alpha {
                let py = (i as f64 + 0.5) / alpha as f64 - 0.5;
                let px = (j as f64 + 0.5) / alpha as f64 - 0.5;
                let cy = (py.round() as isize).clamp(0, h - 1);
                let cx = (px.round() as isize).clamp(0, w - 1);
                let (mut num, mut den) = (0.0, 0.0);
                for qy in cy - radius..=cy + radius {
                    for qx in cx - radius..=cx + radius {
                        if qy < 0 || qx < 0 || qy >= h || qx >= w {
                            continue;
                        }
                        let d2 = (py - qy as f64).powi(2) + (px - qx as f64).powi(2);
                        let f = (-d2 / (2.0 * sigma * sigma)).exp();
                        num += f * s.get(0, qy as usize, qx as usize) as f64;
                        den += f;
                    }
                }
                out.push(num / den);
            }
        }
        out
    }

    #[test]
    fn constant_guide_is_spatial_gaussian() {
        let s = random(1, 5, 4, 8, 0.0, 100.0);
        let g = Raster::filled(2, 20, 16, 0.3, "1").unwrap();
        let out = jbu_upsample(&s, &g, &JbuParams::default(), 4).unwrap();
        let oracle = spatial_oracle(&s, 4, 1.0, 2);
        for (a, b) in out.map.values().iter().zip(&oracle) {
            assert!((*a as f64 - b).abs() < 1e-4 * b.abs().max(1.0));
        }
        assert_eq!(out.fallback_pixels, 0);
    }

    #[test]
    fn step_edge_follows_guide() {
        // 1×2 source [0, 10] at α=2 → 2×4 HR; guide steps between HR columns 1 and 2.
        let s = Raster::single(1, 2, vec![0.0, 10.0], "t/px").unwrap();
        let g = Raster::single(2, 4, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0], "1").unwrap();
        let params = JbuParams {
            sigma_spatial: 1.0,
            sigma_range: 0.1,
            window_radius: 1,
            guide_stats: identity_stats(1),
        };
        let out = jbu_upsample(&s, &g, &params, 2).unwrap();

        // Scripted double sum: both LR cells are in every window; their guide
        // values (HR columns 1 and 3) are 0 and 1.
        let gq = [0.0f64, 1.0];
        let sq = [0.0f64, 10.0];
        for col in 0..4 {
            let px = (col as f64 + 0.5) / 2.0 - 0.5;
            let py = (0.5f64) / 2.0 - 0.5;
            let gp = g.get(0, 0, col) as f64;
            let (mut num, mut den) = (0.0, 0.0);
            for q in 0..2 {
                let f = (-((px - q as f64).powi(2) + py * py) / 2.0).exp();
                let w = f * (-((gp - gq[q]).powi(2)) / (2.0 * 0.01)).exp();
                num += w * sq[q];
                den += w;
            }
            let expected = num / den;
            for row in 0..2 {
                assert!((out.map.get(0, row, col) as f64 - expected).abs() < 1e-4);
            }
            if col < 2 {
                assert!(expected < 1e-6);
            } else {
                assert!(expected > 10.0 - 1e-6);
            }
        }
    }

    #[test]
    fn underflow_falls_back_to_spatial() {
        let s = Raster::single(2, 2, vec![1.0, 2.0, 3.0, 4.0], "t/px").unwrap();
        // HR pixel (0,0) has a guide value far from every LR centre sample.
        let mut gv = vec![0.0f32; 16];
        gv[0] = 1000.0;
        let g = Raster::single(4, 4, gv, "1").unwrap();
        let params = JbuParams {
            sigma_range: 0.1,
            guide_stats: identity_stats(1),
            ..JbuParams::default()
        };
        let out = jbu_upsample(&s, &g, &params, 2).unwrap();
        assert_eq!(out.fallback_pixels, 1);
        let oracle = spatial_oracle(&s, 2, 1.0, 2);
        assert!((out.map.get(0, 0, 0) as f64 - oracle[0]).abs() < 1e-5);
    }

    #[test]
    fn dimension_mismatch() {
        let s = Raster::filled(1, 4, 4, 1.0, "t/px").unwrap();
        let g = Raster::filled(1, 8, 12, 1.0, "1").unwrap();
        assert!(matches!(
            jbu_upsample(&s, &g, &JbuParams::default(), 2),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn huge_range_sigma_matches_constant_guide() {
        let s = random(1, 6, 6, 2, 10.0, 200.0);
        let g = random(4, 24, 24, 3, -1.0, 1.0);
        let params = JbuParams {
            sigma_range: 1e6,
            ..JbuParams::default()
        };
        let a = jbu_upsample(&s, &g, &params, 4).unwrap().map;
        let flat = Raster::filled(4, 24, 24, 0.0, "1").unwrap();
        let b = jbu_upsample(&s, &flat, &params, 4).unwrap().map;
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!(((x - y) / y).abs() < 1e-4);
        }
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let s = random(1, 8, 8, 21, 0.0, 300.0);
        let g = random(15, 64, 64, 22, -2.0, 2.0);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| jbu_upsample(&s, &g, &JbuParams::default(), 8).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    proptest! {
        #[test]
        fn convex_combination(seed in any::<u64>(), alpha in 1usize..5, sr in 0.05f64..5.0) {
            let s = random(1, 4, 5, seed, -50.0, 50.0);
            let g = random(3, 4 * alpha, 5 * alpha, seed ^ 0xabc, 0.0, 1.0);
            let params = JbuParams { sigma_range: sr, ..JbuParams::default() };
            let out = jbu_upsample(&s, &g, &params, alpha).unwrap().map;
            prop_assert!(out.min() >= s.min() - 1e-4 && out.max() <= s.max() + 1e-4);
        }

        #[test]
        fn channel_permutation_invariant(seed in any::<u64>()) {
            let s = random(1, 4, 4, seed, 0.0, 10.0);
            let g = random(3, 12, 12, seed.wrapping_add(1), 0.0, 1.0);
            let mut perm = Vec::new();
            for k in [2, 0, 1] {
                perm.extend_from_slice(g.channel(k));
            }
            let gp = Raster::new(3, 12, 12, perm, "1").unwrap();
            let params = JbuParams { sigma_range: 0.5, ..JbuParams::default() };
            let a = jbu_upsample(&s, &g, &params, 3).unwrap().map;
            let b = jbu_upsample(&s, &gp, &params, 3).unwrap().map;
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() <= 1e-5 * y.abs().max(1.0));
            }
        }
    }
}
