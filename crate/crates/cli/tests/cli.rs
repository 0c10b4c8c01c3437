use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spadgate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spadgate"))
        .args(args)
        .output()
        .expect("run spadgate")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = r#"
experiment_id = "cli"
[scene]
ambient_flux = 0.02
sbr = 5.0
[acquisition]
seeds = 3
budget_us = 10.0
[sweep]
sbr = [2.0, 10.0]
"#;

#[test]
fn check_accepts_valid_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = spadgate(&["check", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("bins 500"), "{stdout}");
    assert!(stdout.contains("sweep points 2"), "{stdout}");
}

#[test]
fn unknown_and_missing_keys_exit_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.toml",
        "[scene]\nambient_flux = 0.1\nsbr = 1.0\n[spad]\ndeadtime_nss = 3\nfoo = 1\n",
    );
    let out = spadgate(&["check", "--config", &bad]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("spad.deadtime_nss") && stderr.contains("spad.foo"), "{stderr}");

    let missing = write(dir.path(), "missing.toml", "[scene]\nsbr = 2.0\n");
    let out = spadgate(&["pixel", "--config", &missing]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ambient_flux"));

    let absent = dir.path().join("nope.toml");
    let out = spadgate(&["sweep", "--config", absent.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_output_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let mut files = Vec::new();
    for threads in ["1", "4"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let out = spadgate(&[
            "sweep",
            "--config",
            &cfg,
            "--threads",
            threads,
            "--seed",
            "11",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        files.push((
            fs::read(out_dir.join("sweep.csv")).unwrap(),
            fs::read(out_dir.join("sweep_summary.csv")).unwrap(),
        ));
    }
    assert_eq!(files[0], files[1]);
    let text = String::from_utf8(files[0].0.clone()).unwrap();
    assert!(!text.contains('\r'));
    // header plus 2 points x 2 policies x 3 seeds
    assert_eq!(text.lines().count(), 13);
    assert!(text.starts_with("experiment_id,policy,point,"));
}

#[test]
fn pixel_ignores_sweep_axes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out_dir = dir.path().join("out");
    let out = spadgate(&["pixel", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(out_dir.join("pixel.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3);
}

#[test]
fn failed_rows_exit_with_partial_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "f.toml",
        "[scene]\nambient_flux = 0.01\nmismatch = { kind = \"two_peak\", d1 = 10, flux1 = 0.1, d2 = 900, flux2 = 0.1 }\n[acquisition]\nbudget_us = 5.0\n",
    );
    let out_dir = dir.path().join("out");
    let out = spadgate(&["sweep", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let text = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains(",failed,")).count(), 2);
}

#[test]
fn scan_writes_rows_and_maps() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "depth.txt", "3 2\n1.5 1.5 1.6\n2.0 2.0 2.0\n");
    let cfg = write(
        dir.path(),
        "s.toml",
        "[scene]\nambient_flux = 0.0\nsignal_flux = 1.0\ndepth_file = \"depth.txt\"\n[acquisition]\nbudget_us = 5.0\n[policies]\nlist = [\"adaptive\"]\n",
    );
    let out_dir = dir.path().join("out");
    let out = spadgate(&["scan", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = fs::read_to_string(out_dir.join("scan.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 6);
    let error_map = fs::read_to_string(out_dir.join("error_m_adaptive_seed0.txt")).unwrap();
    let mut lines = error_map.lines();
    assert_eq!(lines.next(), Some("3 2"));
    for v in lines.flat_map(|l| l.split_whitespace()) {
        assert_eq!(v.parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn scan_without_depth_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = spadgate(&["scan", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_passes_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = spadgate(&["oracle", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("[PASS]").count(), 2, "{stdout}");
    let csv = fs::read_to_string(dir.path().join("oracle.csv")).unwrap();
    assert!(csv.starts_with("check,cases,failures,worst,passed\n"));
}

#[test]
fn zero_threads_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = spadgate(&["pixel", "--config", &cfg, "--threads", "0"]);
    assert_eq!(out.status.code(), Some(1));
}
