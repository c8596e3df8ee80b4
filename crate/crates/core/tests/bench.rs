use std::fs;
use std::path::Path;

use gsr_core::bench::{
    run_benchmark, score_external, BenchConfig, DatasetSource, Method, MethodRunner, Upsampler,
    AGGREGATE_ID, MANIFEST_FILE, P2P_FITS_FILE, RESIDUAL_FILE, RESULTS_FILE, SPECTRUM_FILE,
    THROUGHPUT_FILE,
};
use gsr_core::bundle::{write_dataset, write_prediction};
use gsr_core::synth::{gen_dataset, SynthParams};
use gsr_core::Error;
use tempfile::TempDir;

/// 25 samples: the default 0.6/0.2/0.2 split leaves 5 for testing.
fn synth_config(out: &Path, methods: &[&str], params: SynthParams) -> BenchConfig {
    let mut cfg =
        BenchConfig::from_json(r#"{"dataset": {"synth": {"count": 25}}, "methods": ["nearest"]}"#)
            .unwrap();
    cfg.alpha = params.alpha;
    cfg.dataset = DatasetSource::Synth { params, count: 25 };
    cfg.methods = methods.iter().map(|m| m.to_string()).collect();
    cfg.output_dir = out.to_path_buf();
    cfg.throughput_repeats = 0;
    cfg
}

fn small() -> SynthParams {
    SynthParams {
        seed: 11,
        ..SynthParams::square(32, 4, 3, 0.05)
    }
}

fn read_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn nearest_on_five_test_samples_gives_five_rows_and_one_aggregate() {
    let dir = TempDir::new().unwrap();
    let cfg = synth_config(dir.path(), &["nearest"], small());
    let summary = run_benchmark(&cfg).unwrap();
    assert_eq!(summary.exit_code(), 0);
    assert_eq!(summary.rows.len(), 5);

    let rows = read_rows(&dir.path().join(RESULTS_FILE));
    assert_eq!(rows.len(), 6);
    assert!(rows[..5]
        .iter()
        .all(|r| r[0] == "nearest" && r[1] != AGGREGATE_ID));
    assert_eq!(
        rows[5][..2],
        ["nearest".to_string(), AGGREGATE_ID.to_string()]
    );
    let mean_mae: f64 = rows[..5]
        .iter()
        .map(|r| r[2].parse::<f64>().unwrap())
        .sum::<f64>()
        / 5.0;
    assert!((rows[5][2].parse::<f64>().unwrap() - mean_mae).abs() < 1e-9 * mean_mae);

    let header = fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
    assert!(header.starts_with("method,sample_id,mae,rmse,psnr,ssim,peak_used\n"));
    let bins = fs::read_to_string(dir.path().join(RESIDUAL_FILE)).unwrap();
    assert!(bins.starts_with("method,bin_lo,bin_hi,count,q1,median,q3,mean\n"));
    let spectra = fs::read_to_string(dir.path().join(SPECTRUM_FILE)).unwrap();
    assert!(spectra.starts_with("method,radius,mean_mag,std,count\n"));
    assert!(spectra.lines().any(|l| l.starts_with("target,")));
    assert!(!dir.path().join(THROUGHPUT_FILE).exists());

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["config"]["alpha"], 4);
    assert_eq!(manifest["config"]["metrics"]["peak"], 10330.0);
    assert_eq!(manifest["split"]["sizes"], serde_json::json!([15, 5, 5]));
    assert!(manifest["timing_scope"].as_str().unwrap().contains("I/O"));
}

#[test]
fn identical_configs_give_identical_reports() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let methods = ["nearest", "bicubic", "jbu", "p2p"];
    let mut ca = synth_config(a.path(), &methods, small());
    ca.p2p.max_iters = 30;
    let mut cb = ca.clone();
    cb.output_dir = b.path().to_path_buf();
    run_benchmark(&ca).unwrap();
    run_benchmark(&cb).unwrap();
    for f in [RESULTS_FILE, RESIDUAL_FILE, SPECTRUM_FILE, P2P_FITS_FILE] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(read_rows(&a.path().join(P2P_FITS_FILE)).len(), 5);
    assert!(a.path().join("p2p_loss").read_dir().unwrap().count() == 5);
}

#[test]
fn throughput_is_written_separately() {
    let dir = TempDir::new().unwrap();
    let mut cfg = synth_config(dir.path(), &["nearest", "bicubic"], small());
    cfg.throughput_repeats = 3;
    let summary = run_benchmark(&cfg).unwrap();
    assert_eq!(summary.throughput.len(), 2);
    assert!(summary
        .throughput
        .iter()
        .all(|t| t.median_mpix_per_sec > 0.0 && t.pixels_per_pass == 5 * 32 * 32));
    let rows = read_rows(&dir.path().join(THROUGHPUT_FILE));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "nearest");
}

#[test]
fn jbu_leads_on_edge_aligned_data() {
    let dir = TempDir::new().unwrap();
    let params = SynthParams {
        seed: 40,
        ..SynthParams::square(64, 8, 1, 0.0).edge_aligned()
    };
    let cfg = synth_config(dir.path(), &["nearest", "bicubic", "jbu"], params);
    run_benchmark(&cfg).unwrap();
    let rows = read_rows(&dir.path().join(RESULTS_FILE));
    let psnr = |m: &str| {
        rows.iter()
            .find(|r| r[0] == m && r[1] == AGGREGATE_ID)
            .map(|r| r[4].parse::<f64>().unwrap())
            .unwrap()
    };
    assert!(psnr("jbu") > psnr("bicubic"));
    assert!(psnr("jbu") > psnr("nearest"));
}

#[test]
fn sample_failures_are_recorded_and_run_continues() {
    let dir = TempDir::new().unwrap();
    let mut cfg = synth_config(dir.path(), &["p2p", "nearest"], small());
    cfg.p2p.step_size = 1e300;
    cfg.p2p.normalize_source = false;
    cfg.p2p.max_iters = 20;
    let summary = run_benchmark(&cfg).unwrap();
    assert_eq!(summary.exit_code(), 1);
    assert_eq!(summary.failures.len(), 5);
    assert!(summary
        .failures
        .iter()
        .all(|f| f.method == "p2p" && f.message.contains("diverged")));
    assert_eq!(summary.rows_for("nearest").count(), 5);
    let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    assert!(manifest.contains("diverged"));
}

#[test]
fn unknown_method_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = synth_config(dir.path(), &["nearest", "sinc"], small());
    match run_benchmark(&cfg) {
        Err(Error::Config(msg)) => assert!(
            msg.contains("nearest, bilinear, bicubic, jbu, p2p"),
            "{msg}"
        ),
        other => panic!("{other:?}"),
    }
}

/// Dataset on disk plus a config pointing at it.
fn disk_setup(root: &Path) -> (BenchConfig, Vec<gsr_core::PatchRecord>) {
    let records = gen_dataset(&small(), 25).unwrap();
    let data = root.join("data");
    write_dataset(&records, &data).unwrap();
    let mut cfg = synth_config(&root.join("out"), &["nearest"], small());
    cfg.dataset = DatasetSource::Path(data);
    (cfg, records)
}

fn test_ids(root: &Path) -> Vec<String> {
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join(MANIFEST_FILE)).unwrap()).unwrap();
    manifest["split"]["test_ids"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect()
}

#[test]
fn scoring_copies_of_targets_is_perfect() {
    let root = TempDir::new().unwrap();
    let (cfg, records) = disk_setup(root.path());
    let preds = root.path().join("preds");
    for r in &records {
        write_prediction(&r.id, &r.target, preds.join(&r.id)).unwrap();
    }
    let summary = score_external(&preds, &cfg, "oracle").unwrap();
    assert_eq!(summary.rows.len(), 5);
    assert!(summary.skipped.is_empty());
    for row in read_rows(&cfg.output_dir.join(RESULTS_FILE)) {
        assert_eq!(row[0], "oracle");
        assert_eq!(row[2], "0");
        assert_eq!(row[4], "inf");
        assert_eq!(row[5], "1");
    }
}

#[test]
fn external_nearest_matches_in_process_nearest() {
    let root = TempDir::new().unwrap();
    let (cfg, records) = disk_setup(root.path());
    run_benchmark(&cfg).unwrap();
    let in_process = fs::read(cfg.output_dir.join(RESULTS_FILE)).unwrap();

    let preds = root.path().join("preds");
    let nearest = MethodRunner::with_defaults(Method::Nearest);
    for r in &records {
        let map = nearest.upsample(&r.source, &r.guide, r.alpha).unwrap().map;
        write_prediction(&r.id, &map, preds.join(&r.id)).unwrap();
    }
    let mut scored = cfg.clone();
    scored.output_dir = root.path().join("scored");
    score_external(&preds, &scored, "nearest").unwrap();
    assert_eq!(
        fs::read(scored.output_dir.join(RESULTS_FILE)).unwrap(),
        in_process
    );
    assert_eq!(
        fs::read(scored.output_dir.join(RESIDUAL_FILE)).unwrap(),
        fs::read(cfg.output_dir.join(RESIDUAL_FILE)).unwrap()
    );
}

#[test]
fn missing_prediction_is_skipped_with_a_note() {
    let root = TempDir::new().unwrap();
    let (cfg, records) = disk_setup(root.path());
    run_benchmark(&cfg).unwrap();
    let ids = test_ids(&cfg.output_dir);
    assert_eq!(ids.len(), 5);
    let preds = root.path().join("preds");
    for r in records.iter().filter(|r| r.id != ids[2]) {
        write_prediction(&r.id, &r.target, preds.join(&r.id)).unwrap();
    }
    let summary = score_external(&preds, &cfg, "external").unwrap();
    assert_eq!(summary.rows.len(), 4);
    assert_eq!(summary.skipped.len(), 1);
    assert_eq!(summary.skipped[0].sample_id, ids[2]);
    assert_eq!(summary.exit_code(), 0);
    assert_eq!(read_rows(&cfg.output_dir.join(RESULTS_FILE)).len(), 5);
    let manifest = fs::read_to_string(cfg.output_dir.join(MANIFEST_FILE)).unwrap();
    assert!(manifest.contains(&ids[2]));
}

#[test]
fn mismatched_prediction_is_a_failure() {
    let root = TempDir::new().unwrap();
    let (cfg, records) = disk_setup(root.path());
    let preds = root.path().join("preds");
    for r in &records {
        write_prediction(&r.id, &r.source, preds.join(&r.id)).unwrap();
    }
    let summary = score_external(&preds, &cfg, "external").unwrap();
    assert_eq!(summary.failures.len(), 5);
    assert_eq!(summary.exit_code(), 1);
}

#[test]
fn dataset_alpha_must_match_config() {
    let root = TempDir::new().unwrap();
    let (mut cfg, _) = disk_setup(root.path());
    cfg.alpha = 8;
    assert!(matches!(run_benchmark(&cfg), Err(Error::Config(_))));
}
