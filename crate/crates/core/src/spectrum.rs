//! 2-D Fourier magnitude spectra and their radial profiles.
//!
//! The transform is an unnormalized radix-2 Cooley–Tukey FFT, applied to rows
//! then columns. Only power-of-two sizes are accepted; nothing is padded.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Complex `H × W` spectrum, row-major. Index `(u, v)` holds frequency
/// `u` cycles/image vertically and `v` horizontally (unshifted).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum2d {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum2d {
    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.data[u * self.width + v]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// In-place iterative FFT of a power-of-two length buffer.
fn fft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let step = -2.0 * std::f64::consts::PI / len as f64;
        let half = len / 2;
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, step * k as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len *= 2;
    }
}

/// Unnormalized forward DFT of a single-channel raster.
pub fn fft2d(map: &Raster) -> Result<Spectrum2d> {
    let (c, h, w) = map.dims();
    if c != 1 {
        return Err(Error::Dimension(format!(
            "fft2d expects one channel, got {c}"
        )));
    }
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(Error::Size(format!(
            "fft2d needs power-of-two dims, got {h}x{w}"
        )));
    }
    let mut data: Vec<Complex64> = map
        .values()
        .iter()
        .map(|&v| Complex64::new(v as f64, 0.0))
        .collect();
    for row in data.chunks_exact_mut(w) {
        fft_in_place(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = data[i * w + j];
        }
        fft_in_place(&mut col);
        for i in 0..h {
            data[i * w + j] = col[i];
        }
    }
    Ok(Spectrum2d {
        height: h,
        width: w,
        data,
    })
}

/// Radially averaged magnitude, one bin per integer radius `0..=r_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialSpectrum {
    pub radii: Vec<usize>,
    pub mean_magnitude: Vec<f64>,
    pub count: Vec<usize>,
    /// Across-sample population std, present after aggregation.
    pub std: Option<Vec<f64>>,
}

fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Mean `|F|` per ring `round(√(u² + v²))`, with `u, v` signed frequencies.
/// Rings beyond `⌊min(H, W)/2⌋` are dropped.
pub fn radial_profile(spectrum: &Spectrum2d) -> RadialSpectrum {
    let (h, w) = (spectrum.height, spectrum.width);
    let r_max = h.min(w) / 2;
    let mut sum = vec![0.0f64; r_max + 1];
    let mut count = vec![0usize; r_max + 1];
    for u in 0..h {
        let fu = signed_freq(u, h);
        for v in 0..w {
            let fv = signed_freq(v, w);
            let r = (fu * fu + fv * fv).sqrt().round() as usize;
            if r <= r_max {
                sum[r] += spectrum.get(u, v).norm();
                count[r] += 1;
            }
        }
    }
    RadialSpectrum {
        radii: (0..=r_max).collect(),
        mean_magnitude: sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect(),
        count,
        std: None,
    }
}

/// Per-bin mean and population std of several profiles on the same axis.
pub fn aggregate_profiles(profiles: &[RadialSpectrum]) -> Result<RadialSpectrum> {
    let first = profiles
        .first()
        .ok_or_else(|| Error::Argument("no profiles to aggregate".into()))?;
    if let Some(p) = profiles.iter().find(|p| p.radii != first.radii) {
        return Err(Error::Argument(format!(
            "profiles have mixed radius axes: 0..={} vs 0..={}",
            first.radii.last().copied().unwrap_or(0),
            p.radii.last().copied().unwrap_or(0)
        )));
    }
    let n = profiles.len() as f64;
    let bins = first.radii.len();
    let mut mean = vec![0.0; bins];
    let mut std = vec![0.0; bins];
    for b in 0..bins {
        let m = profiles.iter().map(|p| p.mean_magnitude[b]).sum::<f64>() / n;
        let var = profiles
            .iter()
            .map(|p| (p.mean_magnitude[b] - m).powi(2))
            .sum::<f64>()
            / n;
        mean[b] = m;
        std[b] = var.sqrt();
    }
    Ok(RadialSpectrum {
        radii: first.radii.clone(),
        mean_magnitude: mean,
        count: first.count.clone(),
        std: Some(std),
    })
}

/// Radial profile of a single-channel raster.
pub fn raster_profile(map: &Raster) -> Result<RadialSpectrum> {
    Ok(radial_profile(&fft2d(map)?))
}
