use std::fs;
use std::path::Path;

use approx::assert_relative_eq;
use tabimpute::cli::run_from_args;
use tabimpute::evalkit::MetricReport;
use tabimpute::tabular::{read_csv, read_mask_csv};

fn run(args: &[&str]) -> i32 {
    run_from_args(std::iter::once("tabimpute").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_small_data(dir: &Path) -> std::path::PathBuf {
    let mut text = String::from("a,b,c\n");
    for i in 0..40 {
        let x = i as f64 / 7.0;
        text += &format!("{},{},{}\n", x, 2.0 * x + (i % 3) as f64, (i * 7 % 11) as f64);
    }
    let path = dir.join("data.csv");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn zero_iterations_impute_column_means() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_small_data(dir.path());
    let out = dir.path().join("run");
    let code = run(&[
        "impute", "--data", p(&data), "--profile", "desk", "--iterations", "0", "--out", p(&out),
        "--workers", "1",
    ]);
    assert_eq!(code, 0);
    let imputed = read_csv(&out.join("imputed_train.csv"), None).unwrap().numeric_view();
    let (_, mask) = read_mask_csv(&out.join("masks/train_mask.csv")).unwrap();
    assert!(mask.count_missing() > 0);
    for c in 0..imputed.cols() {
        let obs: Vec<f64> = (0..imputed.rows()).filter(|&r| !mask.is_missing(r, c)).map(|r| imputed.get(r, c)).collect();
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        for r in (0..imputed.rows()).filter(|&r| mask.is_missing(r, c)) {
            assert_relative_eq!(imputed.get(r, c), mean, max_relative = 1e-9);
        }
    }
    for f in ["config.json", "report.json", "imputed_test.csv", "masks/test_mask.csv", "checkpoints/final_params.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn genmask_writes_distinct_masks_per_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_small_data(dir.path());
    let out = dir.path().join("masks");
    assert_eq!(run(&["genmask", "--data", p(&data), "--count", "10", "--seed", "4", "--out", p(&out)]), 0);
    let masks: Vec<_> = (0..10).map(|i| read_mask_csv(&out.join(format!("mask_{i:03}.csv"))).unwrap().1).collect();
    assert!(out.join("mask_009.json").exists());
    for i in 0..10 {
        for j in i + 1..10 {
            assert_ne!(masks[i], masks[j]);
        }
    }
}

#[test]
fn genmask_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_small_data(dir.path());
    let zero = dir.path().join("zero");
    assert_eq!(run(&["genmask", "--data", p(&data), "--ratio", "0", "--out", p(&zero)]), 0);
    assert_eq!(read_mask_csv(&zero.join("mask_000.csv")).unwrap().1.count_missing(), 0);

    let mar = dir.path().join("mar");
    let args = ["genmask", "--data", p(&data), "--mechanism", "mar", "--observed-cols", "a,c", "--out", p(&mar)];
    assert_eq!(run(&args), 0);
    let (header, m) = read_mask_csv(&mar.join("mask_000.csv")).unwrap();
    assert_eq!(header, ["a", "b", "c"]);
    assert!((0..m.rows()).all(|r| !m.is_missing(r, 0) && !m.is_missing(r, 2)));
    assert!(m.count_missing() > 0);

    let bad = ["genmask", "--data", p(&data), "--mechanism", "mar", "--observed-cols", "zz", "--out", p(&mar)];
    assert_eq!(run(&bad), 2);
}

fn eval_fixture(dir: &Path) -> (String, String, String) {
    fs::write(dir.join("truth.csv"), "u,v\n1,2\n3,4\n5,6\n").unwrap();
    fs::write(dir.join("imputed.csv"), "u,v\n1,2.5\n4,4\n5,6\n").unwrap();
    fs::write(dir.join("mask.csv"), "u,v\n0,1\n1,0\n0,0\n").unwrap();
    let s = |f: &str| dir.join(f).to_str().unwrap().to_owned();
    (s("imputed.csv"), s("truth.csv"), s("mask.csv"))
}

fn eval_report(dir: &Path, imputed: &str, truth: &str, mask: &str, scale: &str) -> MetricReport {
    let out = dir.join(format!("eval_{scale}"));
    let args = ["eval", "--imputed", imputed, "--truth", truth, "--mask", mask, "--scale", scale, "--out", p(&out)];
    assert_eq!(run(&args), 0);
    serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn eval_hand_computed_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (imputed, truth, mask) = eval_fixture(dir.path());
    // Unmasked truth: u in {1, 5} (mean 3, std 2), v in {4, 6} (mean 5, std 1).
    let std = eval_report(dir.path(), &imputed, &truth, &mask, "standardized");
    assert_relative_eq!(std.mae.unwrap(), 0.5, epsilon = 1e-12);
    assert_relative_eq!(std.rmse.unwrap(), 0.5, epsilon = 1e-12);
    let raw = eval_report(dir.path(), &imputed, &truth, &mask, "raw");
    assert_relative_eq!(raw.mae.unwrap(), 0.75, epsilon = 1e-12);
    assert_relative_eq!(raw.rmse.unwrap(), (1.25f64 / 2.0).sqrt(), epsilon = 1e-12);
    assert_eq!(raw.accuracy, None);
}

#[test]
fn eval_identity_and_empty_mask() {
    let dir = tempfile::tempdir().unwrap();
    let (_, truth, mask) = eval_fixture(dir.path());
    let r = eval_report(dir.path(), &truth, &truth, &mask, "standardized");
    assert_eq!(r.mae, Some(0.0));
    assert_eq!(r.rmse, Some(0.0));
    fs::write(dir.path().join("none.csv"), "u,v\n0,0\n0,0\n0,0\n").unwrap();
    let none = dir.path().join("none.csv");
    assert_eq!(run(&["eval", "--imputed", &truth, "--truth", &truth, "--mask", p(&none)]), 2);
}

#[test]
fn synth_gaussian_matches_requested_law() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    assert_eq!(run(&["synth", "--dim", "2", "--rho", "0.8", "--rows", "5000", "--seed", "9", "--out", p(&out)]), 0);
    let x = read_csv(&out.join("data.csv"), None).unwrap().numeric_view();
    assert_eq!((x.rows(), x.cols()), (5000, 2));
    let n = x.rows() as f64;
    let x = &x;
    let col = |c: usize| (0..x.rows()).map(move |r| x.get(r, c));
    let (ma, mb) = (col(0).sum::<f64>() / n, col(1).sum::<f64>() / n);
    let cov = col(0).zip(col(1)).map(|(a, b)| (a - ma) * (b - mb)).sum::<f64>() / n;
    let va = col(0).map(|a| (a - ma).powi(2)).sum::<f64>() / n;
    let vb = col(1).map(|b| (b - mb).powi(2)).sum::<f64>() / n;
    let corr = cov / (va * vb).sqrt();
    assert!((corr - 0.8).abs() < 0.03, "corr {corr}");
    let oracle: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("oracle.json")).unwrap()).unwrap();
    for s in oracle["residual_std"].as_array().unwrap() {
        assert_relative_eq!(s.as_f64().unwrap(), 0.6, epsilon = 1e-9);
    }
    for f in ["schema.json", "spec.json"] {
        assert!(out.join(f).exists());
    }
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(run(&["genmask"]), 1);
    assert_eq!(run(&["impute", "--data", "/nonexistent/data.csv"]), 2);
    assert_eq!(run(&["impute"]), 2);
}
