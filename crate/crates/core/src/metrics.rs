//! Evaluation metrics: MAE, RMSE, PSNR, SSIM, residual binning and throughput.

use std::time::{Duration, Instant};

use rand::seq::index;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Default PSNR/SSIM peak for biomass maps in t/px.
pub const DEFAULT_PEAK: f64 = 10330.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(pred: &Raster, reference: &Raster) -> Result<()> {
    if !pred.same_dims(reference) {
        return Err(Error::Dimension(format!(
            "prediction is {:?} but reference is {:?}",
            pred.dims(),
            reference.dims()
        )));
    }
    Ok(())
}

fn diffs<'a>(pred: &'a Raster, reference: &'a Raster) -> impl Iterator<Item = f64> + 'a {
    pred.values()
        .iter()
        .zip(reference.values())
        .map(|(&p, &r)| p as f64 - r as f64)
}

pub fn mae(pred: &Raster, reference: &Raster) -> Result<f64> {
    check_pair(pred, reference)?;
    Ok(diffs(pred, reference).map(f64::abs).sum::<f64>() / pred.values().len() as f64)
}

pub fn rmse(pred: &Raster, reference: &Raster) -> Result<f64> {
    check_pair(pred, reference)?;
    let mse = diffs(pred, reference).map(|d| d * d).sum::<f64>() / pred.values().len() as f64;
    Ok(mse.sqrt())
}

/// `20·log10(peak / rmse)`; positive infinity for a zero error.
pub fn psnr_from_rmse(rmse: f64, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Argument(format!(
            "PSNR peak must be positive, got {peak}"
        )));
    }
    if rmse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (peak / rmse).log10())
}

/// Inverse of [`psnr_from_rmse`]: the peak that maps `rmse` to `psnr_db`.
pub fn peak_from_psnr(rmse: f64, psnr_db: f64) -> f64 {
    rmse * 10f64.powf(psnr_db / 20.0)
}

pub fn psnr(pred: &Raster, reference: &Raster, peak: f64) -> Result<f64> {
    psnr_from_rmse(rmse(pred, reference)?, peak)
}

/// Normalized 1-D Gaussian window.
fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of a `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * plane[y * w + x + i])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM over all fully interior 11×11 Gaussian (σ = 1.5) windows, per
/// channel, averaged over channels. `C1 = (0.01·peak)²`, `C2 = (0.03·peak)²`.
pub fn ssim(pred: &Raster, reference: &Raster, peak: f64) -> Result<f64> {
    check_pair(pred, reference)?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Argument(format!(
            "SSIM peak must be positive, got {peak}"
        )));
    }
    let (c, h, w) = pred.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Size(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = pred.channel(ch).iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = reference.channel(ch).iter().map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mx = filter_valid(&x, h, w, &k);
        let my = filter_valid(&y, h, w, &k);
        let sxx = filter_valid(&xx, h, w, &k);
        let syy = filter_valid(&yy, h, w, &k);
        let sxy = filter_valid(&xy, h, w, &k);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / c as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub peak_used: f64,
    pub n_pixels: usize,
}

pub fn evaluate(pred: &Raster, reference: &Raster, peak: f64) -> Result<MetricReport> {
    let rmse = rmse(pred, reference)?;
    Ok(MetricReport {
        mae: mae(pred, reference)?,
        rmse,
        psnr: psnr_from_rmse(rmse, peak)?,
        ssim: ssim(pred, reference, peak)?,
        peak_used: peak,
        n_pixels: pred.values().len(),
    })
}

/// Text form used in CSV output: `inf`/`-inf` for infinities, shortest
/// round-trip decimal otherwise.
pub fn format_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `(q1, median, q3, mean)`; absent for an empty bin.
    pub summary: Option<(f64, f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBins {
    pub bin_edges: Vec<f64>,
    pub bins: Vec<BinSummary>,
    pub sample_count: usize,
    pub seed: u64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Draws `sample_count` pixels uniformly without replacement from the pooled
/// test set (all of them if fewer exist) and summarises `pred − ref` per
/// ground-truth bin. Bins are `[lo, hi)` except the last, which is closed;
/// pixels outside `[edges[0], edges[last]]` are dropped.
pub fn residual_bins(
    preds: &[Raster],
    refs: &[Raster],
    bin_edges: &[f64],
    sample_count: usize,
    seed: u64,
) -> Result<ResidualBins> {
    if preds.len() != refs.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} references",
            preds.len(),
            refs.len()
        )));
    }
    if bin_edges.len() < 2 || bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Argument(
            "bin edges must be strictly increasing with at least two entries".into(),
        ));
    }
    let mut offsets = Vec::with_capacity(preds.len() + 1);
    offsets.push(0usize);
    for (p, r) in preds.iter().zip(refs) {
        check_pair(p, r)?;
        offsets.push(offsets.last().unwrap() + p.values().len());
    }
    let total = *offsets.last().unwrap();
    let amount = sample_count.min(total);
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, total, amount).into_vec();
    picks.sort_unstable();

    let nbins = bin_edges.len() - 1;
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); nbins];
    let last = bin_edges[nbins];
    for flat in picks {
        let rec = offsets.partition_point(|&o| o <= flat) - 1;
        let local = flat - offsets[rec];
        let truth = refs[rec].values()[local] as f64;
        let err = preds[rec].values()[local] as f64 - truth;
        if truth < bin_edges[0] || truth > last {
            continue;
        }
        let b = if truth == last {
            nbins - 1
        } else {
            bin_edges.partition_point(|&e| e <= truth) - 1
        };
        errors[b].push(err);
    }

    let bins = errors
        .into_iter()
        .enumerate()
        .map(|(b, mut e)| {
            e.sort_by(f64::total_cmp);
            let summary = (!e.is_empty()).then(|| {
                (
                    quantile(&e, 0.25),
                    quantile(&e, 0.5),
                    quantile(&e, 0.75),
                    e.iter().sum::<f64>() / e.len() as f64,
                )
            });
            BinSummary {
                lo: bin_edges[b],
                hi: bin_edges[b + 1],
                count: e.len(),
                summary,
            }
        })
        .collect();
    Ok(ResidualBins {
        bin_edges: bin_edges.to_vec(),
        bins,
        sample_count: amount,
        seed,
    })
}

/// Output pixels per second, in millions.
pub fn mpix_per_sec(pixels: usize, elapsed: Duration) -> f64 {
    pixels as f64 / elapsed.as_secs_f64() / 1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub median_mpix_per_sec: f64,
    pub rates: Vec<f64>,
    pub pixels_per_pass: usize,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Runs `method` over every item once untimed, then `repeats` timed passes.
/// Each pass yields one rate (total output pixels / wall-clock seconds); the
/// report carries their median.
pub fn throughput<T, F>(items: &[T], repeats: usize, mut method: F) -> Result<ThroughputReport>
where
    F: FnMut(&T) -> Result<Raster>,
{
    if items.is_empty() {
        return Err(Error::Argument(
            "throughput needs at least one record".into(),
        ));
    }
    let repeats = repeats.max(1);
    let mut pixels = 0;
    for item in items {
        pixels += method(item)?.plane_len();
    }
    let mut rates = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        for item in items {
            std::hint::black_box(method(item)?);
        }
        rates.push(mpix_per_sec(pixels, start.elapsed()));
    }
    Ok(ThroughputReport {
        median_mpix_per_sec: median(&rates),
        rates,
        pixels_per_pass: pixels,
    })
}
