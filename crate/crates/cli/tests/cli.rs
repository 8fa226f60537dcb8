//! End-to-end behavior of the `wavefuzz` binary: exit codes, report
//! formats, and the flag/config-file contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wavefuzz"))
}

fn write_sine(path: &Path, freq: f64, amp: f64, len: usize) {
    let clip = wavefuzz_core::AudioClip::new(
        (0..len)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
            .collect(),
        16000,
    )
    .unwrap();
    wavefuzz_core::write_wav(path, &clip).unwrap();
}

fn report_json(output_dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(output_dir.join("report.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

struct Dirs {
    _guard: tempfile::TempDir,
    input: PathBuf,
    output: PathBuf,
}

fn dirs() -> Dirs {
    let guard = tempfile::tempdir().unwrap();
    let input = guard.path().join("in");
    let output = guard.path().join("out");
    std::fs::create_dir(&input).unwrap();
    Dirs {
        _guard: guard,
        input,
        output,
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited")
}

#[test]
fn poison_empty_directory_is_success_with_empty_report() {
    let d = dirs();
    let out = bin()
        .args(["poison", d.input.to_str().unwrap(), d.output.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(report_json(&d.output), serde_json::json!([]));
}

#[test]
fn poison_epsilon_zero_converges_without_iterations() {
    let d = dirs();
    write_sine(&d.input.join("a.wav"), 440.0, 0.5, 8000);
    let out = bin()
        .args([
            "poison",
            d.input.to_str().unwrap(),
            d.output.to_str().unwrap(),
            "--epsilon",
            "0",
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let report = report_json(&d.output);
    assert_eq!(report[0]["iterations_used"], 0);
    assert_eq!(report[0]["converged"], true);
    assert!(d.output.join("a.wav").exists());
}

#[test]
fn poison_unreachable_epsilon_exits_two_with_files_written() {
    let d = dirs();
    write_sine(&d.input.join("a.wav"), 440.0, 0.5, 4000);
    let out = bin()
        .args([
            "poison",
            d.input.to_str().unwrap(),
            d.output.to_str().unwrap(),
            "--epsilon",
            "1e308",
            "--max-iters",
            "3",
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let report = report_json(&d.output);
    assert_eq!(report[0]["converged"], false);
    assert_eq!(report[0]["iterations_used"], 3);
    // Non-convergent clips are still written.
    assert!(d.output.join("a.wav").exists());
}

#[test]
fn poison_unreadable_input_exits_three_with_error_entry() {
    let d = dirs();
    write_sine(&d.input.join("good.wav"), 440.0, 0.5, 4000);
    std::fs::write(d.input.join("bad.wav"), b"definitely not a wav").unwrap();
    let out = bin()
        .args([
            "poison",
            d.input.to_str().unwrap(),
            d.output.to_str().unwrap(),
            "--epsilon",
            "0",
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
    let report = report_json(&d.output);
    // Report ordered by input path: bad.wav first.
    assert!(report[0]["file"].as_str().unwrap().ends_with("bad.wav"));
    assert!(report[0]["error"].as_str().unwrap().contains("RIFF"));
    assert_eq!(report[1]["converged"], true);
    assert!(d.output.join("good.wav").exists());
    assert!(!d.output.join("bad.wav").exists());
}

#[test]
fn baseline_writes_noise_at_target_snr() {
    let d = dirs();
    write_sine(&d.input.join("a.wav"), 440.0, 0.5, 8000);
    let out = bin()
        .args([
            "baseline",
            d.input.to_str().unwrap(),
            d.output.to_str().unwrap(),
            "--target-snr-db",
            "20",
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let report = report_json(&d.output);
    let snr = report[0]["snr_db"].as_f64().unwrap();
    assert!((snr - 20.0).abs() < 0.5, "realized snr {snr}");
    assert_eq!(report[0]["converged"], false);
}

#[test]
fn analyze_file_against_itself() {
    let d = dirs();
    let wav = d.input.join("a.wav");
    write_sine(&wav, 440.0, 0.5, 8000);
    let out = bin()
        .args(["analyze", wav.to_str().unwrap(), wav.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let metric: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(metric["feature_distance"], 0.0);
    assert_eq!(metric["snr_db"], "inf");
}

#[test]
fn analyze_length_mismatch_fails() {
    let d = dirs();
    let a = d.input.join("a.wav");
    let b = d.input.join("b.wav");
    write_sine(&a, 440.0, 0.5, 8000);
    write_sine(&b, 440.0, 0.5, 4000);
    let out = bin()
        .args(["analyze", a.to_str().unwrap(), b.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("length mismatch"));
}

#[test]
fn analyze_spectrogram_has_contract_dimensions() {
    let d = dirs();
    let wav = d.input.join("a.wav");
    write_sine(&wav, 440.0, 0.5, 8000); // 48 frames at 25 ms / 10 ms
    let spec = d.output.join("spec");
    let out = bin()
        .args([
            "analyze",
            wav.to_str().unwrap(),
            wav.to_str().unwrap(),
            "--spectrogram",
            spec.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let pgm = std::fs::read(spec.join("clean_a.pgm")).unwrap();
    let header = b"P5\n48 257\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(pgm.len(), header.len() + 48 * 257);
    let csv = std::fs::read_to_string(spec.join("clean_a.csv")).unwrap();
    assert_eq!(csv.lines().count(), 48);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 257);
}

#[test]
fn analyze_exports_feature_matrices() {
    let d = dirs();
    let wav = d.input.join("a.wav");
    write_sine(&wav, 440.0, 0.5, 8000);
    let feat = d.output.join("features");
    let out = bin()
        .args([
            "analyze",
            wav.to_str().unwrap(),
            wav.to_str().unwrap(),
            "--export-features",
            feat.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(feat.join("clean_a.features.csv")).unwrap();
    assert_eq!(csv.lines().count(), 48);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 39);
}

#[test]
fn calibrate_constant_predictor_exits_four() {
    let d = dirs();
    let cfg = d.input.join("cfg.toml");
    std::fs::write(
        &cfg,
        "[eval]\nn_classes = 2\nclips_per_class = 15\nduration_s = 0.3\npoison_max_iters = 10\n",
    )
    .unwrap();
    let out = bin()
        .args([
            "calibrate",
            "--config",
            cfg.to_str().unwrap(),
            "--train-epochs",
            "0",
            "--calibration-clips",
            "5",
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 4, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("calibration failed"));
}

#[test]
fn calibrate_reports_epsilon_json() {
    let d = dirs();
    let cfg = d.input.join("cfg.toml");
    std::fs::write(
        &cfg,
        "[eval]\nn_classes = 2\nclips_per_class = 15\nduration_s = 0.3\n\
         train_epochs = 150\npoison_max_iters = 300\n",
    )
    .unwrap();
    let out = bin()
        .args([
            "calibrate",
            "--config",
            cfg.to_str().unwrap(),
            "--calibration-clips",
            "5",
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["epsilon"].as_f64().unwrap() > 0.0);
    assert_eq!(
        v["n_flipped"].as_u64().unwrap() + v["n_excluded"].as_u64().unwrap(),
        5
    );
}

#[test]
fn eval_micro_grid_emits_expected_csv_shape() {
    let d = dirs();
    let cfg = d.input.join("cfg.toml");
    std::fs::write(
        &cfg,
        "[eval]\nn_classes = 2\nclips_per_class = 10\nduration_s = 0.3\n\
         train_epochs = 100\npoison_max_iters = 40\nn_seeds = 1\n",
    )
    .unwrap();
    let out_dir = d.output.join("eval");
    let out = bin()
        .args([
            "eval",
            "--config",
            cfg.to_str().unwrap(),
            "--scenario",
            "from-scratch",
            "--pr",
            "10,20",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("eval_table.csv")).unwrap();
    let comments: Vec<&str> = csv.lines().filter(|l| l.starts_with('#')).collect();
    let rows: Vec<&str> = csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("scenario") && !l.is_empty())
        .collect();
    // 2 rates x 2 methods x 1 scenario.
    assert_eq!(rows.len(), 4, "{csv}");
    // Published reference row embedded in the header comments.
    assert!(comments.iter().any(|c| c.contains("24.55") && c.contains("11.15")));
    assert!(out_dir.join("eval_report.json").exists());
}

#[test]
fn sweep_alpha_default_list_gives_three_rows() {
    let d = dirs();
    let cfg = d.input.join("cfg.toml");
    std::fs::write(
        &cfg,
        "[eval]\nn_classes = 2\nclips_per_class = 10\nduration_s = 0.3\n\
         train_epochs = 100\nsweep_budget = 20\nsweep_pr = 10.0\nn_seeds = 1\n",
    )
    .unwrap();
    let out_dir = d.output.join("sweep");
    let out = bin()
        .args([
            "sweep-alpha",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("alpha_sweep.csv")).unwrap();
    let rows: Vec<&str> = csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("scenario") && !l.is_empty())
        .collect();
    assert_eq!(rows.len(), 3, "{csv}");
    assert!(csv.contains("24.55/21.69/21.66"));
}

#[test]
fn poison_refuses_output_directory_equal_to_input() {
    let d = dirs();
    write_sine(&d.input.join("a.wav"), 440.0, 0.5, 4000);
    let out = bin()
        .args([
            "poison",
            d.input.to_str().unwrap(),
            d.input.to_str().unwrap(),
            "--epsilon",
            "0",
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("separate directory"));
    // Input untouched.
    let original = wavefuzz_core::read_wav(d.input.join("a.wav")).unwrap();
    assert_eq!(original.len(), 4000);
}

#[test]
fn seed_flag_changes_poison_output() {
    let d = dirs();
    write_sine(&d.input.join("a.wav"), 440.0, 0.5, 4000);
    let run = |seed: &str, tag: &str| -> Vec<u8> {
        let out_dir = d.output.join(tag);
        let out = bin()
            .args([
                "poison",
                d.input.to_str().unwrap(),
                out_dir.to_str().unwrap(),
                "--epsilon",
                "30",
                "--seed",
                seed,
            ])
            .output()
            .unwrap();
        assert_eq!(code(&out), 0);
        std::fs::read(out_dir.join("a.wav")).unwrap()
    };
    let a = run("1", "s1");
    let b = run("1", "s1-again");
    let c = run("2", "s2");
    assert_eq!(a, b, "same seed must reproduce bytes");
    assert_ne!(a, c, "different seed must change the perturbation");
}
