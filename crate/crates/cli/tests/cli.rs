//! Drives the `ghostsim` binary: outputs, exit codes and error messages.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ghostsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ghostsim"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn ghostsim")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn kv(path: &Path, key: &str) -> f64 {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing"))
        .parse()
        .unwrap()
}

#[test]
fn lists_every_simulation_scenario() {
    let o = ghostsim(&["list-scenarios"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["ghost-image", "ghost-diffraction", "siegert-near", "siegert-far", "conditional", "coherent-reference"] {
        assert_eq!(text.lines().filter(|l| l.split_whitespace().next() == Some(name)).count(), 1, "{name}");
    }
}

#[test]
fn coherent_reference_writes_graymap_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ref");
    let o = ghostsim(&["simulate", "--scenario", "coherent-reference", "--output-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pgm = fs::read(out.join("coherent_image.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n256 256 255\n"));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("scenario = coherent-reference"));
    assert!(manifest.contains("config.source.lambda_um = 0.6328"));
    assert!(manifest.contains("image.coherent_image.pgm.max = "));
    assert!(manifest.contains("sha256.coherent_image_profile.csv = "));
}

#[test]
fn reruns_reproduce_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = ghostsim(&[
            "--threads",
            threads,
            "simulate",
            "--scenario",
            "conditional",
            "--frames",
            "150",
            "--seed",
            "9",
            "--output-dir",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(out.join("manifest.txt"))
            .unwrap()
            .lines()
            .filter(|l| l.starts_with("sha256."))
            .map(String::from)
            .collect::<Vec<_>>()
    };
    let a = run("a", "1");
    assert_eq!(a.len(), 2);
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "3"));
}

#[test]
fn configuration_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "scenario = \"siegert-near\"\n[grid]\npitch = 6.0\n").unwrap();
    let o = ghostsim(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("pitch"), "{}", stderr(&o));

    let o = ghostsim(&["simulate", "--scenario", "siegert-near", "--set", "grid.pitch_um=-2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("grid.pitch_um"), "{}", stderr(&o));

    let o = ghostsim(&["simulate", "--scenario", "no-such-thing"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn under_sampled_speckle_is_a_numerical_error() {
    let o = ghostsim(&["simulate", "--scenario", "siegert-near", "--set", "grid.pitch_um=12"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pitch"), "{}", stderr(&o));
}

fn write_gaussian(path: &Path, sigma: f64) {
    let mut s = String::from("separation_um,value,baseline,stderr\n");
    for k in -40..=40 {
        let x = k as f64 * 2.0;
        s.push_str(&format!("{x},{},1,0\n", 1.0 + (-x * x / (2.0 * sigma * sigma)).exp()));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn analyze_recovers_closed_form_values() {
    let dir = tempfile::tempdir().unwrap();
    let (near, far) = (dir.path().join("near.csv"), dir.path().join("far.csv"));
    write_gaussian(&near, 12.0);
    write_gaussian(&far, 6.0);
    let out = dir.path().join("analysis");
    let o = ghostsim(&[
        "analyze",
        "--near",
        near.to_str().unwrap(),
        "--far",
        far.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = out.join("coherence_report.txt");
    let dxn = 2.0 * 1.2 * 12.0;
    let dq = 2.0 * std::f64::consts::PI * 12.0 / (0.6328 * 80_000.0);
    assert!((kv(&report, "sigma_n_um") - 12.0).abs() < 1e-6);
    assert!((kv(&report, "delta_x_n_um") - dxn).abs() < 1e-6);
    assert!((kv(&report, "delta_q_per_um") - dq).abs() < 1e-6);
    assert!((kv(&report, "product") - dxn * dq).abs() < 1e-6);
    assert!(out.join("fit_near.csv").exists() && out.join("fit_far.csv").exists());
}

#[test]
fn analyze_reports_injected_widths() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("analysis");
    let o = ghostsim(&["analyze", "--sigma-n-um", "14.3", "--sigma-f-um", "7.8", "--output-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!((kv(&out.join("coherence_report.txt"), "product") - 0.066).abs() < 5e-4);
}

#[test]
fn flat_profile_fails_to_fit() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.csv");
    let mut s = String::from("separation_um,value\n");
    for k in -20..=20 {
        s.push_str(&format!("{k},1\n"));
    }
    fs::write(&flat, s).unwrap();
    let o = ghostsim(&[
        "analyze",
        "--near",
        flat.to_str().unwrap(),
        "--sigma-f-um",
        "7.8",
        "--output-dir",
        dir.path().join("a").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn oracle_check_rejects_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = ghostsim(&["oracle-check", "--set", "n_frames=0", "--output-dir", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("0"), "{}", stderr(&o));

    let o = ghostsim(&["oracle-check", "--set", "grid.nx=80", "--set", "grid.ny=80", "--output-dir", out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).to_lowercase().contains("large"), "{}", stderr(&o));
}

#[test]
fn oracle_check_flags_a_mismatched_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["--set", "grid.nx=16", "--set", "grid.ny=16", "--set", "n_frames=3000"];
    let run = |extra: &[&str], name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["oracle-check"];
        args.extend_from_slice(&base);
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--output-dir", out.to_str().unwrap()]);
        (ghostsim(&args), out)
    };
    let (o, out) = run(&[], "matched");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(out.join("oracle_report.txt")).unwrap().contains("verdict = pass"));
    assert!(out.join("oracle_zscores.csv").exists());
    let (o, _) = run(&["--set", "oracle.gamma_width_scale=2"], "mismatched");
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
