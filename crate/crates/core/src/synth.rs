//! Deterministic synthetic patches: a smooth random target field plus shared
//! high-frequency texture, with multi-channel guides that partially observe it.
//!
//! Construction for one sample, all noise drawn from one xoshiro256** stream
//! seeded with `seed`:
//!
//! ```text
//! base   = z(binomial_lowpass(white, smooth_scale))
//! hf     = z(binomial_lowpass(white, 1))
//! t      = base + texture_gain · hf
//! target = clip(mid + spread · t, value_range)        spread = (max − min) / 6
//! guide_k = a_k · (target − mid) / spread + b_k · z(lowpass(white_k)) + σ_k · white'_k
//! source = downsample_avg(target, alpha)
//! ```
//!
//! `z(·)` standardizes to zero mean and unit variance; `a_k, b_k` are uniform
//! in `[0.3, 1.0]` unless overridden.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{check_divisible, downsample_avg, PatchRecord, Raster, UNITLESS};

pub const DEFAULT_GUIDE_CHANNELS: usize = 15;
const MIXING_RANGE: std::ops::Range<f64> = 0.3..1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub alpha: usize,
    pub guide_channels: usize,
    /// Radius (pixels) of the binomial low-pass that shapes the base field.
    pub smooth_scale: usize,
    pub texture_gain: f64,
    /// One entry per guide channel.
    pub noise_sigma: Vec<f64>,
    pub value_range: (f64, f64),
    /// Optional per-channel `(a_k, b_k)` overrides; `None` entries are drawn.
    pub mixing: Option<Vec<Option<(f64, f64)>>>,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 64,
            width: 64,
            alpha: 8,
            guide_channels: DEFAULT_GUIDE_CHANNELS,
            smooth_scale: 24,
            texture_gain: 0.3,
            noise_sigma: vec![0.05; DEFAULT_GUIDE_CHANNELS],
            value_range: (0.0, 300.0),
            mixing: None,
        }
    }
}

impl SynthParams {
    /// Square patch of `size` pixels with `channels` guide bands and uniform
    /// guide noise.
    pub fn square(size: usize, alpha: usize, channels: usize, noise: f64) -> Self {
        Self {
            height: size,
            width: size,
            alpha,
            guide_channels: channels,
            noise_sigma: vec![noise; channels],
            ..Self::default()
        }
    }

    /// Guide channel 0 is an exact, noise-free copy of the (rescaled) target:
    /// `a_0 = 1`, `b_0 = 0`, `σ_0 = 0`. Other channels keep drawn coefficients.
    pub fn edge_aligned(mut self) -> Self {
        let mut mixing = vec![None; self.guide_channels];
        mixing[0] = Some((1.0, 0.0));
        self.mixing = Some(mixing);
        if let Some(s) = self.noise_sigma.first_mut() {
            *s = 0.0;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_divisible(self.height, self.width, self.alpha)?;
        if self.guide_channels == 0 {
            return Err(Error::Argument("guide_channels must be positive".into()));
        }
        if self.noise_sigma.len() != self.guide_channels {
            return Err(Error::Argument(format!(
                "noise_sigma has {} entries for {} guide channels",
                self.noise_sigma.len(),
                self.guide_channels
            )));
        }
        if self
            .noise_sigma
            .iter()
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(Error::Argument(
                "noise sigmas must be finite and non-negative".into(),
            ));
        }
        let (lo, hi) = self.value_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Argument(format!(
                "value_range must satisfy min < max, got ({lo}, {hi})"
            )));
        }
        if !(self.texture_gain.is_finite() && self.texture_gain >= 0.0) {
            return Err(Error::Argument(
                "texture_gain must be finite and non-negative".into(),
            ));
        }
        if let Some(mixing) = &self.mixing {
            if mixing.len() != self.guide_channels {
                return Err(Error::Argument(format!(
                    "mixing override has {} entries for {} guide channels",
                    mixing.len(),
                    self.guide_channels
                )));
            }
        }
        Ok(())
    }
}

/// Normalized binomial kernel of length `2·radius + 1`.
fn binomial_kernel(radius: usize) -> Vec<f64> {
    let mut k = vec![1.0f64];
    for _ in 0..2 * radius {
        let mut next = vec![0.0; k.len() + 1];
        for (i, v) in k.iter().enumerate() {
            next[i] += 0.5 * v;
            next[i + 1] += 0.5 * v;
        }
        k = next;
    }
    k
}

/// Separable binomial low-pass with replicate padding.
fn lowpass(field: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return field.to_vec();
    }
    let kernel = binomial_kernel(radius);
    let r = radius as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                let xx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * field[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn standardize(field: &mut [f64]) {
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    for v in field.iter_mut() {
        *v = (*v - mean) / std;
    }
}

fn white(rng: &mut Xoshiro256StarStar, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn smooth_field(rng: &mut Xoshiro256StarStar, h: usize, w: usize, radius: usize) -> Vec<f64> {
    let mut f = lowpass(&white(rng, h * w), h, w, radius);
    standardize(&mut f);
    f
}

pub fn gen_sample(params: &SynthParams) -> Result<PatchRecord> {
    gen_with_id(params, format!("synth-{:04}", 0))
}

fn gen_with_id(params: &SynthParams, id: String) -> Result<PatchRecord> {
    params.validate()?;
    let (h, w) = (params.height, params.width);
    let n = h * w;
    let mut rng = Xoshiro256StarStar::seed_from_u64(params.seed);

    let base = smooth_field(&mut rng, h, w, params.smooth_scale);
    let hf = smooth_field(&mut rng, h, w, 1);
    let (lo, hi) = params.value_range;
    let mid = 0.5 * (lo + hi);
    let spread = (hi - lo) / 6.0;
    let target: Vec<f32> = base
        .iter()
        .zip(&hf)
        .map(|(b, t)| (mid + spread * (b + params.texture_gain * t)).clamp(lo, hi) as f32)
        .collect();
    let target = Raster::single(h, w, target, "t/px")?;
    let scaled: Vec<f64> = target
        .values()
        .iter()
        .map(|&v| (v as f64 - mid) / spread)
        .collect();

    let mut guide = Vec::with_capacity(params.guide_channels * n);
    for k in 0..params.guide_channels {
        let drawn = (
            rng.random_range(MIXING_RANGE),
            rng.random_range(MIXING_RANGE),
        );
        let (a, b) = params.mixing.as_ref().and_then(|m| m[k]).unwrap_or(drawn);
        let independent = smooth_field(&mut rng, h, w, params.smooth_scale);
        let noise = white(&mut rng, n);
        let sigma = params.noise_sigma[k];
        guide
            .extend((0..n).map(|i| (a * scaled[i] + b * independent[i] + sigma * noise[i]) as f32));
    }
    let guide = Raster::new(params.guide_channels, h, w, guide, UNITLESS)?;
    let source = downsample_avg(&target, params.alpha)?;
    PatchRecord::new(id, guide, target, source, params.alpha)
}

/// `count` independent samples; sample `i` uses seed `seed + i` and id
/// `synth-{i:04}`.
pub fn gen_dataset(params: &SynthParams, count: usize) -> Result<Vec<PatchRecord>> {
    params.validate()?;
    (0..count)
        .map(|i| {
            let p = SynthParams {
                seed: params.seed.wrapping_add(i as u64),
                ..params.clone()
            };
            gen_with_id(&p, format!("synth-{i:04}"))
        })
        .collect()
}
