use std::path::{Path, PathBuf};

use serde_json::Value;
use smica::data::write_wav_pcm16;
use smica_cli::main_with;
use smica_cli::report::SeparationReport;

fn smica(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("smica").chain(args.iter().copied());
    let code = main_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_report(dir: &Path) -> SeparationReport {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn report_without_clock(dir: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("wall_clock_seconds");
    v
}

#[test]
fn gen_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let (code, _, err) = smica(&["gen", "--scenario", "4", "--samples", "3000", "--seed", "7", "--out", p(dir)]);
        assert_eq!(code, 0, "{err}");
    }
    for f in ["sources.csv", "mixture.csv", "model.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gen_reference_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, err) =
        smica(&["gen", "--sources", "sine,laplace", "--mixing", "reference", "--samples", "500", "--out", p(tmp.path())]);
    assert_eq!(code, 0, "{err}");
    let model: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("model.json")).unwrap()).unwrap();
    let specs = model["source_specs"].as_array().unwrap();
    assert_eq!(specs.len(), 2);
    assert!(model["mixing"].to_string().contains("0.10054428"));
    let header = std::fs::read_to_string(tmp.path().join("mixture.csv")).unwrap();
    assert_eq!(header.lines().count(), 501);
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = p(tmp.path());
    assert_eq!(smica(&["gen", "--scenario", "9", "--out", out]).0, 1);
    assert_eq!(smica(&["run", "--algo", "easi", "--out", out]).0, 1);
    assert_eq!(smica(&["run", "--algo", "nope", "--scenario", "1", "--out", out]).0, 1);
    assert_eq!(smica(&["run", "--algo", "easi", "--scenario", "1", "--eta", "-1", "--out", out]).0, 1);
    assert_eq!(smica(&["frobnicate"]).0, 1);
    assert_eq!(smica(&["--help"]).0, 0);
}

fn reference_files(dir: &Path) -> (PathBuf, PathBuf) {
    let (code, _, err) =
        smica(&["gen", "--sources", "sine,sawtooth", "--mixing", "reference", "--samples", "5000", "--out", p(dir)]);
    assert_eq!(code, 0, "{err}");
    (dir.join("mixture.csv"), dir.join("sources.csv"))
}

#[test]
fn fobi_on_files_and_metrics_cross_check() {
    let tmp = tempfile::tempdir().unwrap();
    let (mixture, sources) = reference_files(&tmp.path().join("data"));
    let run = tmp.path().join("run");
    let (code, _, err) =
        smica(&["run", "--algo", "fobi", "--input", p(&mixture), "--truth", p(&sources), "--out", p(&run)]);
    assert_eq!(code, 0, "{err}");
    let report = read_report(&run);
    let final_mse = report.final_mse.unwrap();
    assert!(final_mse <= 1e-2, "{final_mse}");
    assert_eq!(report.provenance.len(), 2);

    let (code, stdout, _) = smica(&["metrics", "--truth", p(&sources), "--input", p(&run.join("outputs.csv"))]);
    assert_eq!(code, 0);
    let m: Value = serde_json::from_str(&stdout).unwrap();
    assert!((m["final_mse"].as_f64().unwrap() - final_mse).abs() <= 1e-12);
    assert_eq!(m["alignment"]["permutation"], serde_json::to_value(&report.alignment.unwrap().permutation).unwrap());

    // The final row of curve.csv is the reported error.
    let curve = std::fs::read_to_string(run.join("curve.csv")).unwrap();
    let last = curve.lines().last().unwrap();
    assert!(last.ends_with(",final"));
    let v: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(v, final_mse);
}

#[test]
fn metrics_identical_and_sign_flipped() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    let c = tmp.path().join("c.csv");
    std::fs::write(&a, "s0,s1\n1,0.5\n-1,2\n0.25,-3\n").unwrap();
    std::fs::write(&b, "y0,y1\n-0.5,1\n-2,-1\n3,0.25\n").unwrap();
    std::fs::write(&c, "y0\n1\n2\n3\n").unwrap();
    let (code, out, _) = smica(&["metrics", "--truth", p(&a), "--input", p(&a)]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["final_mse"].as_f64(), Some(0.0));
    let (code, out, _) = smica(&["metrics", "--truth", p(&a), "--input", p(&b)]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["final_mse"].as_f64(), Some(0.0));
    assert_eq!(v["alignment"]["signs"], serde_json::json!([1, -1]));
    assert_eq!(v["alignment"]["permutation"], serde_json::json!([1, 0]));
    assert_eq!(smica(&["metrics", "--truth", p(&a), "--input", p(&c)]).0, 1);
    assert_eq!(smica(&["metrics", "--truth", p(&a), "--input", "/nonexistent.csv"]).0, 3);
}

#[test]
fn easi_fails_scenario_three() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, err) = smica(&["run", "--algo", "easi", "--scenario", "3", "--out", p(tmp.path())]);
    assert_eq!(code, 0, "{err}");
    let r = read_report(tmp.path());
    assert_eq!(r.separated, Some(false));
    assert!(r.final_mse.unwrap() > 0.1);
}

#[test]
fn online_run_report_fields_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let args =
            ["run", "--algo", "smica-online", "--scenario", "1", "--eta", "2e-5", "--tau", "1.5", "--samples", "20000", "--out", p(dir)];
        let (code, _, err) = smica(&args);
        assert_eq!(code, 0, "{err}");
    }
    let r = read_report(&a);
    assert!(r.final_mse.is_some());
    assert_eq!(r.config.eta, Some(2e-5));
    assert_eq!(r.config.tau, Some(1.5));
    assert_eq!(r.config.lambda, Some(vec![1.0, 1.5, 1.8]));
    assert_eq!(r.output_kurtosis.as_ref().unwrap().len(), 3);
    assert_eq!(report_without_clock(&a), report_without_clock(&b));
    assert_eq!(std::fs::read(a.join("outputs.csv")).unwrap(), std::fs::read(b.join("outputs.csv")).unwrap());

    let text = std::fs::read_to_string(a.join("report.json")).unwrap();
    let again = serde_json::to_string_pretty(&r).unwrap() + "\n";
    assert_eq!(text, again);
}

#[test]
fn euler_dynamics_and_inverse_lambda_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "run", "--algo", "smica-online", "--scenario", "2", "--samples", "2000", "--dynamics", "euler", "--gamma", "0.05",
        "--lambda", "1,2,3", "--lambda-is-inverse", "--out", p(tmp.path()),
    ];
    let (code, _, err) = smica(&args);
    assert_eq!(code, 0, "{err}");
    let r = read_report(tmp.path());
    assert!(r.config.lambda_is_inverse);
    assert_eq!(r.config.gamma, Some(0.05));
    assert_eq!(r.config.lambda, Some(vec![1.0, 2.0, 3.0]));
}

#[test]
fn divergence_and_io_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("div");
    let (code, _, _) = smica(&["run", "--algo", "easi", "--scenario", "2", "--samples", "3000", "--eta", "50", "--out", p(&out)]);
    assert_eq!(code, 2);
    let r = read_report(&out);
    assert!(r.error.unwrap().contains("divergence"));
    assert!(!out.join("outputs.csv").exists());
    let out = tmp.path().join("io");
    let (code, _, _) = smica(&["run", "--algo", "fobi", "--input", "/nonexistent/m.csv", "--out", p(&out)]);
    assert_eq!(code, 3);
}

#[test]
fn config_file_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"algo": "easi", "scenario": 2, "samples": 2000, "eta": 3e-4, "epochs": 2}"#).unwrap();
    let out = tmp.path().join("run");
    let (code, _, err) = smica(&["run", "--config", p(&cfg), "--eta", "2e-4", "--out", p(&out)]);
    assert_eq!(code, 0, "{err}");
    let r = read_report(&out);
    assert_eq!(r.config.eta, Some(2e-4));
    assert_eq!(r.config.epochs, 2);
    assert_eq!(r.convergence.samples_seen, 4000);
    std::fs::write(&cfg, r#"{"etaa": 1}"#).unwrap();
    assert_eq!(smica(&["run", "--config", p(&cfg), "--algo", "easi", "--scenario", "1", "--out", p(&out)]).0, 1);
}

fn read_csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn bench_grid_outputs_are_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    let args = ["bench", "--algos", "easi,amari", "--scenarios", "1,2", "--seeds", "2", "--samples", "3000", "--out", p(&out)];
    let (code, _, err) = smica(&args);
    assert_eq!(code, 0, "{err}");
    let rows = read_csv_rows(&out.join("bench.csv"));
    assert_eq!(rows.len(), 8);
    assert!(out.join("scenario1.svg").exists() && out.join("scenario2.svg").exists());
    for row in &rows {
        // algorithm,scenario,seed,status,final_mse,separated,mean,std,curve_file
        let curve = read_csv_rows(&out.join(&row[8]));
        let last = curve.last().unwrap();
        assert_eq!(last[2], "final");
        assert_eq!(last[1], row[4]);
        let group: Vec<f64> = rows
            .iter()
            .filter(|r| r[0] == row[0] && r[1] == row[1])
            .map(|r| read_csv_rows(&out.join(&r[8])).last().unwrap()[1].parse().unwrap())
            .collect();
        let mean = group.iter().sum::<f64>() / group.len() as f64;
        assert!((mean - row[6].parse::<f64>().unwrap()).abs() <= 1e-12 * mean.max(1.0));
    }

    // A single cell reproduces the standalone run.
    let run = tmp.path().join("run");
    let (code, _, _) = smica(&["run", "--algo", "amari", "--scenario", "2", "--seed", "1", "--samples", "3000", "--out", p(&run)]);
    assert_eq!(code, 0);
    let cell = rows.iter().find(|r| r[0] == "amari" && r[1] == "2" && r[2] == "1").unwrap();
    let standalone = read_report(&run).final_mse.unwrap();
    assert_eq!(cell[4].parse::<f64>().unwrap(), standalone);
    let bench_curve = std::fs::read_to_string(out.join(&cell[8])).unwrap();
    assert_eq!(bench_curve, std::fs::read_to_string(run.join("curve.csv")).unwrap());
}

#[test]
fn bench_reports_failed_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    let args = ["bench", "--algos", "easi", "--scenarios", "2", "--seeds", "1", "--samples", "2000", "--eta", "50", "--out", p(&out)];
    let (code, _, _) = smica(&args);
    assert_eq!(code, 2);
    let rows = read_csv_rows(&out.join("bench.csv"));
    assert_eq!(rows[0][3], "failed");
    assert_eq!(rows[0][4], "");
}

/// 8-bit binary PGM.
fn write_pgm(path: &Path, w: usize, h: usize, f: impl Fn(usize, usize) -> u8) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            bytes.push(f(x, y));
        }
    }
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn image_demo_reports_channel_correlation() {
    let tmp = tempfile::tempdir().unwrap();
    let paths: Vec<PathBuf> = (0..3).map(|i| tmp.path().join(format!("img{i}.pgm"))).collect();
    let (w, h) = (128, 64);
    // Distinct pixel histograms: a smooth ramp pattern, a binary checker
    // and a sparse speckle field.
    write_pgm(&paths[0], w, h, |x, y| ((x * 7 + y * 13) % 256) as u8);
    write_pgm(&paths[1], w, h, |x, y| if (x / 4 + y / 4) % 2 == 0 { 40 } else { 210 });
    write_pgm(&paths[2], w, h, |x, y| {
        let k = (x * 2654435761usize ^ y * 40503).wrapping_mul(2246822519) >> 7;
        if k % 19 == 0 { 250 } else { 120 + (k % 7) as u8 }
    });
    let list = paths.iter().map(|q| p(q)).collect::<Vec<_>>().join(",");
    let out = tmp.path().join("run");
    let (code, _, err) = smica(&["run", "--algo", "fobi", "--images", &list, "--out", p(&out)]);
    assert_eq!(code, 0, "{err}");
    let r = read_report(&out);
    let corr = r.channel_correlation.unwrap();
    assert_eq!(corr.len(), 3);
    assert!(corr.iter().all(|&c| c >= 0.95), "{corr:?}");
    assert_eq!(r.provenance.iter().filter(|l| l.contains("sha256=")).count(), 3);
}

#[test]
fn audio_bundle_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.wav");
    let b = tmp.path().join("b.wav");
    let tone: Vec<i16> = (0..8000).map(|t| ((t as f64 * 0.07).sin() * 12_000.0) as i16).collect();
    let saw: Vec<i16> = (0..9000).map(|t| ((t % 90) as i32 * 600 - 27_000) as i16).collect();
    write_wav_pcm16(&a, &tone, 8000).unwrap();
    write_wav_pcm16(&b, &saw, 8000).unwrap();
    let out = tmp.path().join("run");
    let list = format!("{},{}", p(&a), p(&b));
    let (code, _, err) = smica(&["run", "--algo", "fobi", "--audio", &list, "--out", p(&out)]);
    assert_eq!(code, 0, "{err}");
    let r = read_report(&out);
    assert_eq!(r.convergence.samples_seen, 8000);
    assert_eq!(r.channel_correlation.unwrap().len(), 3);
    assert!(r.provenance.iter().any(|l| l.contains("truncated to 8000")));
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_smica");
    let dir = tempfile::tempdir().unwrap();
    let status = |args: &[&str]| std::process::Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(status(&["--help"]), Some(0));
    assert_eq!(status(&["run", "--algo", "nope", "--out", p(dir.path())]), Some(1));
    let missing = dir.path().join("missing.csv");
    assert_eq!(status(&["run", "--algo", "fobi", "--input", p(&missing), "--out", p(dir.path())]), Some(3));
    assert_eq!(status(&["gen", "--scenario", "1", "--samples", "200", "--out", p(dir.path())]), Some(0));
    assert!(dir.path().join("mixture.csv").exists());
}
