//! Benchmark harness: configuration, method dispatch, scoring and reports.
//!
//! Every method is called the same way, with the LR source and the HR guide,
//! and returns an HR raster. Only the test split is evaluated.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bundle::{list_bundles, read_dataset, read_prediction, write_json, META_FILE};
use crate::error::{Error, Result};
use crate::interp::{upsample_bicubic, upsample_bilinear, upsample_nearest};
use crate::jbu::{jbu_upsample, JbuParams};
use crate::metrics::{
    evaluate, format_value, residual_bins, throughput, MetricReport, ResidualBins, DEFAULT_PEAK,
};
use crate::p2p::{p2p_upsample, FitDiagnostics, P2pConfig};
use crate::raster::{PatchRecord, Raster};
use crate::spectrum::{aggregate_profiles, raster_profile, RadialSpectrum};
use crate::split::{split_dataset, DatasetSplit, DEFAULT_RATIOS};
use crate::synth::{gen_dataset, SynthParams};

pub const RESULTS_FILE: &str = "results.csv";
pub const RESIDUAL_FILE: &str = "residual_bins.csv";
pub const SPECTRUM_FILE: &str = "spectrum.csv";
pub const THROUGHPUT_FILE: &str = "throughput.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const P2P_FITS_FILE: &str = "p2p_fits.csv";
pub const P2P_CURVE_DIR: &str = "p2p_loss";
/// `sample_id` of the per-method mean row in results.csv.
pub const AGGREGATE_ID: &str = "mean";

pub const TIMING_SCOPE: &str = "single-stream wall clock of the method call on records already in memory; \
one untimed warm-up pass; excludes disk I/O and metric computation; includes per-sample fitting for p2p";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nearest,
    Bilinear,
    Bicubic,
    Jbu,
    P2p,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Nearest,
        Method::Bilinear,
        Method::Bicubic,
        Method::Jbu,
        Method::P2p,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nearest => "nearest",
            Method::Bilinear => "bilinear",
            Method::Bicubic => "bicubic",
            Method::Jbu => "jbu",
            Method::P2p => "p2p",
        }
    }

    pub fn is_guided(self) -> bool {
        matches!(self, Method::Jbu | Method::P2p)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!(
                    "unknown method {s:?}; valid methods are {}",
                    valid.join(", ")
                ))
            })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutput {
    pub map: Raster,
    pub jbu_fallback_pixels: Option<usize>,
    pub p2p: Option<FitDiagnostics>,
}

impl MethodOutput {
    fn plain(map: Raster) -> Self {
        Self {
            map,
            jbu_fallback_pixels: None,
            p2p: None,
        }
    }
}

/// Common interface of all upsamplers: `(S, G) -> Ŷ`. Unguided methods
/// receive the guide too and ignore it.
pub trait Upsampler: Sync {
    fn name(&self) -> &str;
    fn upsample(&self, source: &Raster, guide: &Raster, alpha: usize) -> Result<MethodOutput>;
}

/// A built-in method together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRunner {
    pub method: Method,
    pub jbu: JbuParams,
    pub p2p: P2pConfig,
}

impl MethodRunner {
    pub fn new(method: Method, config: &BenchConfig) -> Self {
        Self {
            method,
            jbu: config.jbu.clone(),
            p2p: config.p2p.clone(),
        }
    }

    pub fn with_defaults(method: Method) -> Self {
        Self {
            method,
            jbu: JbuParams::default(),
            p2p: P2pConfig::default(),
        }
    }
}

impl Upsampler for MethodRunner {
    fn name(&self) -> &str {
        self.method.name()
    }

    fn upsample(&self, source: &Raster, guide: &Raster, alpha: usize) -> Result<MethodOutput> {
        match self.method {
            Method::Nearest => upsample_nearest(source, alpha).map(MethodOutput::plain),
            Method::Bilinear => upsample_bilinear(source, alpha).map(MethodOutput::plain),
            Method::Bicubic => upsample_bicubic(source, alpha).map(MethodOutput::plain),
            Method::Jbu => jbu_upsample(source, guide, &self.jbu, alpha).map(|o| MethodOutput {
                map: o.map,
                jbu_fallback_pixels: Some(o.fallback_pixels),
                p2p: None,
            }),
            Method::P2p => {
                p2p_upsample(source, guide, alpha, &self.p2p).map(|(map, d)| MethodOutput {
                    map,
                    jbu_fallback_pixels: None,
                    p2p: Some(d),
                })
            }
        }
    }
}

/// Where the records come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    /// Directory of sample bundles.
    Path(PathBuf),
    /// Generated on the fly; `params.alpha` is replaced by the config's alpha.
    Synth {
        #[serde(default)]
        params: SynthParams,
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: DEFAULT_RATIOS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub peak: f64,
    pub residual_samples: usize,
    pub residual_seed: u64,
    /// Ground-truth bin edges for the residual summary, in target units.
    pub bin_edges: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            peak: DEFAULT_PEAK,
            residual_samples: 10_000,
            residual_seed: 0,
            bin_edges: vec![0.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0],
        }
    }
}

fn default_alpha() -> usize {
    8
}

fn default_true() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("bench_out")
}

fn default_repeats() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_alpha")]
    pub alpha: usize,
    pub methods: Vec<String>,
    #[serde(default)]
    pub jbu: JbuParams,
    #[serde(default)]
    pub p2p: P2pConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    /// Write radial spectrum profiles (power-of-two patch sizes only).
    #[serde(default = "default_true")]
    pub spectrum: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Timed passes per method; 0 skips throughput measurement.
    #[serde(default = "default_repeats")]
    pub throughput_repeats: usize,
}

impl BenchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks the config and returns the parsed method list.
    pub fn validate(&self) -> Result<Vec<Method>> {
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        let methods = self
            .methods
            .iter()
            .map(|m| m.parse())
            .collect::<Result<Vec<Method>>>()?;
        let mut seen = HashSet::new();
        if let Some(m) = methods.iter().find(|m| !seen.insert(**m)) {
            return Err(Error::Config(format!("method {m} listed twice")));
        }
        if self.alpha == 0 {
            return Err(Error::Config("alpha must be at least 1".into()));
        }
        match &self.dataset {
            DatasetSource::Path(p) if !p.is_dir() => {
                return Err(Error::Config(format!(
                    "dataset directory {} does not exist",
                    p.display()
                )));
            }
            DatasetSource::Synth { count: 0, .. } => {
                return Err(Error::Config(
                    "synthetic dataset count must be positive".into(),
                ));
            }
            _ => {}
        }
        if !(self.metrics.peak > 0.0 && self.metrics.peak.is_finite()) {
            return Err(Error::Config(format!(
                "metrics peak must be positive, got {}",
                self.metrics.peak
            )));
        }
        self.jbu
            .validate()
            .map_err(|e| Error::Config(format!("jbu: {e}")))?;
        self.p2p
            .validate()
            .map_err(|e| Error::Config(format!("p2p: {e}")))?;
        Ok(methods)
    }
}

/// Loads or generates the configured records and checks their scale factor.
pub fn load_dataset(config: &BenchConfig) -> Result<Vec<PatchRecord>> {
    match &config.dataset {
        DatasetSource::Path(p) => {
            let records = read_dataset(p)?;
            if records.is_empty() {
                return Err(Error::Config(format!(
                    "no sample bundles found in {}",
                    p.display()
                )));
            }
            if let Some(r) = records.iter().find(|r| r.alpha != config.alpha) {
                return Err(Error::Config(format!(
                    "sample {} has alpha={} but the config uses alpha={}",
                    r.id, r.alpha, config.alpha
                )));
            }
            Ok(records)
        }
        DatasetSource::Synth { params, count } => {
            let params = SynthParams {
                alpha: config.alpha,
                ..params.clone()
            };
            gen_dataset(&params, *count)
        }
    }
}

/// Splits `records` and returns the split plus the test records in dataset
/// order.
pub fn test_split(
    records: Vec<PatchRecord>,
    split: &SplitConfig,
) -> Result<(DatasetSplit, Vec<PatchRecord>)> {
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let s = split_dataset(&ids, split.ratios, split.seed)?;
    let test: HashSet<&str> = s.test_ids.iter().map(String::as_str).collect();
    let records: Vec<PatchRecord> = records
        .into_iter()
        .filter(|r| test.contains(r.id.as_str()))
        .collect();
    if records.is_empty() {
        return Err(Error::Config(format!(
            "the test split of {} samples is empty",
            ids.len()
        )));
    }
    Ok((s, records))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub method: String,
    pub sample_id: String,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleFailure {
    pub method: String,
    pub sample_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkipNote {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputRow {
    pub method: String,
    pub median_mpix_per_sec: f64,
    pub repeats: usize,
    pub pixels_per_pass: usize,
}

/// What a run produced, besides the files.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub rows: Vec<SampleRow>,
    pub failures: Vec<SampleFailure>,
    pub skipped: Vec<SkipNote>,
    pub residuals: Vec<(String, ResidualBins)>,
    pub spectra: Vec<(String, RadialSpectrum)>,
    pub throughput: Vec<ThroughputRow>,
    pub output_dir: PathBuf,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }

    pub fn rows_for(&self, method: &str) -> impl Iterator<Item = &SampleRow> {
        let method = method.to_string();
        self.rows.iter().filter(move |r| r.method == method)
    }
}

/// Per-method mean of each metric over the scored samples.
pub fn aggregate(rows: &[&SampleRow]) -> Option<MetricReport> {
    let first = rows.first()?;
    let n = rows.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| rows.iter().map(|r| f(&r.report)).sum::<f64>() / n;
    Some(MetricReport {
        mae: mean(|r| r.mae),
        rmse: mean(|r| r.rmse),
        psnr: mean(|r| r.psnr),
        ssim: mean(|r| r.ssim),
        peak_used: first.report.peak_used,
        n_pixels: rows.iter().map(|r| r.report.n_pixels).sum(),
    })
}

/// Scored predictions of one method, kept for the set-level summaries.
struct MethodScores {
    name: String,
    preds: Vec<Raster>,
    refs: Vec<Raster>,
}

fn summarize(scores: &MethodScores, config: &BenchConfig, summary: &mut RunSummary) -> Result<()> {
    if scores.preds.is_empty() {
        return Ok(());
    }
    let m = &config.metrics;
    let bins = residual_bins(
        &scores.preds,
        &scores.refs,
        &m.bin_edges,
        m.residual_samples,
        m.residual_seed,
    )?;
    summary.residuals.push((scores.name.clone(), bins));
    if config.spectrum {
        if let Some(p) = spectrum_of(&scores.preds, &scores.name, summary)? {
            summary.spectra.push((scores.name.clone(), p));
        }
    }
    Ok(())
}

/// Aggregated radial profile of `maps`, or a skip note when the patch size is
/// not a power of two.
fn spectrum_of(
    maps: &[Raster],
    label: &str,
    summary: &mut RunSummary,
) -> Result<Option<RadialSpectrum>> {
    let (h, w) = (maps[0].height(), maps[0].width());
    if !h.is_power_of_two() || !w.is_power_of_two() {
        log::warn!("spectrum skipped for {label}: {h}x{w} is not a power of two");
        summary.skipped.push(SkipNote {
            sample_id: label.to_string(),
            reason: format!("spectrum needs power-of-two patches, got {h}x{w}"),
        });
        return Ok(None);
    }
    let profiles = maps
        .iter()
        .map(raster_profile)
        .collect::<Result<Vec<_>>>()?;
    aggregate_profiles(&profiles).map(Some)
}

/// Runs every configured method on the test split and writes the reports
/// into `config.output_dir`.
pub fn run_benchmark(config: &BenchConfig) -> Result<RunSummary> {
    let methods = config.validate()?;
    let (split, test) = test_split(load_dataset(config)?, &config.split)?;
    log::info!(
        "evaluating {} test samples with {} methods",
        test.len(),
        methods.len()
    );

    let mut summary = RunSummary {
        output_dir: config.output_dir.clone(),
        ..RunSummary::default()
    };
    let mut fits: Vec<(String, FitDiagnostics)> = Vec::new();
    let mut fallbacks: BTreeMap<String, usize> = BTreeMap::new();

    for &method in &methods {
        let runner = MethodRunner::new(method, config);
        log::info!("running {method}");
        let outcomes: Vec<Result<(MethodOutput, MetricReport)>> = test
            .par_iter()
            .map(|r| {
                let out = runner.upsample(&r.source, &r.guide, r.alpha)?;
                let report = evaluate(&out.map, &r.target, config.metrics.peak)?;
                Ok((out, report))
            })
            .collect();

        let mut scores = MethodScores {
            name: method.name().to_string(),
            preds: Vec::new(),
            refs: Vec::new(),
        };
        for (record, outcome) in test.iter().zip(outcomes) {
            match outcome {
                Ok((out, report)) => {
                    summary.rows.push(SampleRow {
                        method: scores.name.clone(),
                        sample_id: record.id.clone(),
                        report,
                    });
                    if let Some(n) = out.jbu_fallback_pixels.filter(|&n| n > 0) {
                        fallbacks.insert(record.id.clone(), n);
                    }
                    if let Some(d) = out.p2p {
                        fits.push((record.id.clone(), d));
                    }
                    scores.preds.push(out.map);
                    scores.refs.push(record.target.clone());
                }
                Err(e) => {
                    log::error!("{method} failed on {}: {e}", record.id);
                    summary.failures.push(SampleFailure {
                        method: scores.name.clone(),
                        sample_id: record.id.clone(),
                        message: e.to_string(),
                    });
                }
            }
        }
        summarize(&scores, config, &mut summary)?;

        if config.throughput_repeats > 0 {
            let timed = throughput(&test, config.throughput_repeats, |r| {
                runner.upsample(&r.source, &r.guide, r.alpha).map(|o| o.map)
            });
            match timed {
                Ok(t) => summary.throughput.push(ThroughputRow {
                    method: scores.name.clone(),
                    median_mpix_per_sec: t.median_mpix_per_sec,
                    repeats: config.throughput_repeats,
                    pixels_per_pass: t.pixels_per_pass,
                }),
                Err(e) => log::warn!("throughput of {method} not measured: {e}"),
            }
        }
    }

    if config.spectrum {
        let targets: Vec<Raster> = test.iter().map(|r| r.target.clone()).collect();
        if let Some(p) = spectrum_of(&targets, "target", &mut summary)? {
            summary.spectra.push(("target".to_string(), p));
        }
    }

    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = vec![RESULTS_FILE, RESIDUAL_FILE];
    write_results(&out.join(RESULTS_FILE), &summary)?;
    write_residuals(&out.join(RESIDUAL_FILE), &summary.residuals)?;
    if config.spectrum {
        write_spectra(&out.join(SPECTRUM_FILE), &summary.spectra)?;
        files.push(SPECTRUM_FILE);
    }
    if config.throughput_repeats > 0 {
        write_throughput(&out.join(THROUGHPUT_FILE), &summary.throughput)?;
        files.push(THROUGHPUT_FILE);
    }
    if methods.contains(&Method::P2p) {
        write_fits(out, &fits)?;
        files.push(P2P_FITS_FILE);
    }
    files.push(MANIFEST_FILE);

    let manifest = json!({
        "command": "bench run",
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "split": split_json(&split),
        "timing_scope": TIMING_SCOPE,
        "failures": summary.failures,
        "skipped": summary.skipped,
        "jbu_fallback_pixels": fallbacks,
        "outputs": files,
    });
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(summary)
}

/// Scores externally produced predictions for the test split with the same
/// metric pipeline as [`run_benchmark`]. Predictions are read from
/// `<pred_dir>/<sample id>/`; test samples without one are skipped and noted.
pub fn score_external(
    pred_dir: impl AsRef<Path>,
    config: &BenchConfig,
    label: &str,
) -> Result<RunSummary> {
    let pred_dir = pred_dir.as_ref();
    if !pred_dir.is_dir() {
        return Err(Error::Config(format!(
            "prediction directory {} does not exist",
            pred_dir.display()
        )));
    }
    let peak = config.metrics.peak;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Config(format!(
            "metrics peak must be positive, got {peak}"
        )));
    }
    let (split, test) = test_split(load_dataset(config)?, &config.split)?;

    let mut summary = RunSummary {
        output_dir: config.output_dir.clone(),
        ..RunSummary::default()
    };
    let mut scores = MethodScores {
        name: label.to_string(),
        preds: Vec::new(),
        refs: Vec::new(),
    };
    for record in &test {
        let dir = pred_dir.join(&record.id);
        if !dir.join(META_FILE).is_file() {
            log::warn!("no prediction for {}", record.id);
            summary.skipped.push(SkipNote {
                sample_id: record.id.clone(),
                reason: format!("no prediction bundle at {}", dir.display()),
            });
            continue;
        }
        let scored = read_prediction(&dir).and_then(|(id, pred)| {
            if id != record.id {
                return Err(Error::format(
                    dir.join(META_FILE),
                    format!("id {id:?} does not match {:?}", record.id),
                ));
            }
            let report = evaluate(&pred, &record.target, peak)?;
            Ok((pred, report))
        });
        match scored {
            Ok((pred, report)) => {
                summary.rows.push(SampleRow {
                    method: label.to_string(),
                    sample_id: record.id.clone(),
                    report,
                });
                scores.preds.push(pred);
                scores.refs.push(record.target.clone());
            }
            Err(e) => {
                log::error!("could not score {}: {e}", record.id);
                summary.failures.push(SampleFailure {
                    method: label.to_string(),
                    sample_id: record.id.clone(),
                    message: e.to_string(),
                });
            }
        }
    }
    summarize(&scores, config, &mut summary)?;
    let extra: Vec<String> = list_bundles(pred_dir)?
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .filter(|n| !test.iter().any(|r| &r.id == n))
        .collect();

    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_results(&out.join(RESULTS_FILE), &summary)?;
    write_residuals(&out.join(RESIDUAL_FILE), &summary.residuals)?;
    let mut files = vec![RESULTS_FILE, RESIDUAL_FILE];
    if config.spectrum {
        write_spectra(&out.join(SPECTRUM_FILE), &summary.spectra)?;
        files.push(SPECTRUM_FILE);
    }
    files.push(MANIFEST_FILE);
    let manifest = json!({
        "command": "bench score",
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "predictions": pred_dir,
        "label": label,
        "split": split_json(&split),
        "failures": summary.failures,
        "skipped": summary.skipped,
        "ignored_predictions": extra,
        "outputs": files,
    });
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(summary)
}

fn split_json(split: &DatasetSplit) -> serde_json::Value {
    let (train, val, test) = split.sizes();
    json!({
        "seed": split.seed,
        "ratios": split.ratios,
        "sizes": [train, val, test],
        "test_ids": split.test_ids,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn metric_fields(r: &MetricReport) -> [String; 5] {
    [
        format_value(r.mae),
        format_value(r.rmse),
        format_value(r.psnr),
        format_value(r.ssim),
        format_value(r.peak_used),
    ]
}

/// results.csv: one row per scored sample, then one aggregate row per method.
pub fn write_results(path: &Path, summary: &RunSummary) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "method",
        "sample_id",
        "mae",
        "rmse",
        "psnr",
        "ssim",
        "peak_used",
    ])?;
    let mut order: Vec<&str> = Vec::new();
    for row in &summary.rows {
        if !order.contains(&row.method.as_str()) {
            order.push(&row.method);
        }
        let [a, b, c, d, e] = metric_fields(&row.report);
        w.write_record([row.method.as_str(), &row.sample_id, &a, &b, &c, &d, &e])?;
    }
    for method in order {
        let rows: Vec<&SampleRow> = summary.rows_for(method).collect();
        if let Some(agg) = aggregate(&rows) {
            let [a, b, c, d, e] = metric_fields(&agg);
            w.write_record([method, AGGREGATE_ID, &a, &b, &c, &d, &e])?;
        }
    }
    finish(w, path)
}

pub fn write_residuals(path: &Path, residuals: &[(String, ResidualBins)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "method", "bin_lo", "bin_hi", "count", "q1", "median", "q3", "mean",
    ])?;
    for (method, bins) in residuals {
        for b in &bins.bins {
            let stats = match b.summary {
                Some((q1, med, q3, mean)) => [q1, med, q3, mean].map(format_value),
                None => Default::default(),
            };
            let [q1, med, q3, mean] = stats;
            w.write_record([
                method.as_str(),
                &format_value(b.lo),
                &format_value(b.hi),
                &b.count.to_string(),
                &q1,
                &med,
                &q3,
                &mean,
            ])?;
        }
    }
    finish(w, path)
}

pub fn write_spectra(path: &Path, spectra: &[(String, RadialSpectrum)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "radius", "mean_mag", "std", "count"])?;
    for (method, p) in spectra {
        write_profile_rows(&mut w, Some(method), p)?;
    }
    finish(w, path)
}

fn write_profile_rows(
    w: &mut csv::Writer<BufWriter<File>>,
    method: Option<&str>,
    p: &RadialSpectrum,
) -> Result<()> {
    for (i, r) in p.radii.iter().enumerate() {
        let std = p
            .std
            .as_ref()
            .map(|s| format_value(s[i]))
            .unwrap_or_default();
        let mut row = Vec::with_capacity(5);
        if let Some(m) = method {
            row.push(m.to_string());
        }
        row.extend([
            r.to_string(),
            format_value(p.mean_magnitude[i]),
            std,
            p.count[i].to_string(),
        ]);
        w.write_record(&row)?;
    }
    Ok(())
}

/// Single-profile CSV with columns radius, mean_mag, std, count.
pub fn write_profile(path: &Path, profile: &RadialSpectrum) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["radius", "mean_mag", "std", "count"])?;
    write_profile_rows(&mut w, None, profile)?;
    finish(w, path)
}

pub fn write_throughput(path: &Path, rows: &[ThroughputRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "method",
        "median_mpix_per_sec",
        "repeats",
        "pixels_per_pass",
    ])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            format_value(r.median_mpix_per_sec),
            r.repeats.to_string(),
            r.pixels_per_pass.to_string(),
        ])?;
    }
    finish(w, path)
}

/// p2p_fits.csv plus one loss curve per sample under `p2p_loss/`.
fn write_fits(out: &Path, fits: &[(String, FitDiagnostics)]) -> Result<()> {
    let path = out.join(P2P_FITS_FILE);
    let mut w = csv_writer(&path)?;
    w.write_record([
        "sample_id",
        "iterations",
        "stop_reason",
        "final_loss",
        "best_loss",
    ])?;
    let curves = out.join(P2P_CURVE_DIR);
    fs::create_dir_all(&curves).map_err(|e| Error::io(&curves, e))?;
    for (id, d) in fits {
        let reason = match d.stop_reason {
            crate::p2p::StopReason::Plateau => "plateau",
            crate::p2p::StopReason::MaxIters => "max_iters",
        };
        w.write_record([
            id.clone(),
            d.iterations.to_string(),
            reason.to_string(),
            format_value(d.final_loss),
            format_value(d.best_loss),
        ])?;
        let curve_path = curves.join(format!("{id}.csv"));
        let mut c = csv_writer(&curve_path)?;
        c.write_record(["iteration", "loss"])?;
        for (i, l) in d.loss_curve.iter().enumerate() {
            c.write_record([i.to_string(), format_value(*l)])?;
        }
        finish(c, &curve_path)?;
    }
    finish(w, &path)
}

/// Aggregated radial profile of a method's outputs (or of the targets when
/// `method` is `None`) over `records`.
pub fn records_profile(
    records: &[PatchRecord],
    method: Option<&dyn Upsampler>,
) -> Result<RadialSpectrum> {
    if records.is_empty() {
        return Err(Error::Argument("no records to profile".into()));
    }
    let profiles = records
        .par_iter()
        .map(|r| match method {
            Some(m) => raster_profile(&m.upsample(&r.source, &r.guide, r.alpha)?.map),
            None => raster_profile(&r.target),
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_profiles(&profiles)
}
