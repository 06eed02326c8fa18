use std::path::Path;
use std::process::{Command, Output};

fn ssreg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssreg"))
        .args(args)
        .current_dir(dir)
        .env_remove("SSREG_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).expect("utf-8 output")
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

#[test]
fn no_arguments_is_a_usage_error() {
    let d = tmp();
    let o = ssreg(&[], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_and_flag() {
    let d = tmp();
    assert_eq!(ssreg(&["frobnicate"], d.path()).status.code(), Some(2));
    assert_eq!(ssreg(&["build-a", "--bogus"], d.path()).status.code(), Some(2));
    assert_eq!(ssreg(&["verify", "no-such-check"], d.path()).status.code(), Some(2));
}

#[test]
fn build_a_normalized_has_unit_max() {
    let d = tmp();
    let o = ssreg(
        &["build-a", "--family", "fourier", "--mx", "4", "--my", "4", "--w", "8", "--h", "8", "--normalize", "max-abs-one"],
        d.path(),
    );
    assert!(o.status.success());
    let values: Vec<f64> = stdout(&o)
        .lines()
        .flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect();
    assert_eq!(values.len(), 256);
    let max = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert_eq!(max, 1.0);
}

#[test]
fn build_a_triplets_carry_the_legendre_check_value() {
    let d = tmp();
    let o = ssreg(
        &["build-a", "--family", "legendre", "--mx", "3", "--my", "3", "--w", "8", "--h", "8", "--triplets"],
        d.path(),
    );
    let text = stdout(&o);
    assert!(text.starts_with("row,col,value\n"));
    assert!(text.lines().any(|l| l == "1,3,0.09375"));
}

#[test]
fn verify_reports_pass_and_exit_code() {
    let d = tmp();
    let o = ssreg(&["verify", "fourier-exactness", "--seed", "7"], d.path());
    assert_eq!(o.status.code(), Some(0));
    let line = stdout(&o);
    assert!(line.starts_with("PASS fourier-exactness"), "{line}");
    let spectral: f64 = line
        .split_whitespace()
        .find_map(|t| t.strip_prefix("spectral_rel_err="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(spectral <= 1e-8);
}

#[test]
fn seed_flag_and_env_agree_and_are_deterministic() {
    let d = tmp();
    let a = ssreg(&["sample-pairs", "--count", "20", "--seed", "11"], d.path());
    let b = ssreg(&["sample-pairs", "--count", "20", "--seed", "11"], d.path());
    let c = Command::new(env!("CARGO_BIN_EXE_ssreg"))
        .args(["sample-pairs", "--count", "20"])
        .env("SSREG_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    let text = stdout(&a);
    assert_eq!(text.lines().next(), Some("tau1,tau2"));
    for line in text.lines().skip(1) {
        let (t1, t2) = line.split_once(',').unwrap();
        let (t1, t2): (f64, f64) = (t1.parse().unwrap(), t2.parse().unwrap());
        assert!((0.0..6.0).contains(&t1));
        assert!((t2 - t1 - 4.0).abs() < 1e-12);
    }
}

#[test]
fn project_then_reconstruct_roundtrip() {
    let d = tmp();
    std::fs::write(d.path().join("img.csv"), "4,4,1\n1,2,3,4\n5,6,7,8\n1,2,3,4\n5,6,7,8\n").unwrap();
    let basis = ["--family", "fourier", "--mx", "4", "--my", "4", "--w", "4", "--h", "4", "--fourier", "centered"];
    let mut args = vec!["basis", "project"];
    args.extend(basis);
    args.extend(["--in", "img.csv", "--out", "c.csv"]);
    assert!(ssreg(&args, d.path()).status.success());
    let mut args = vec!["basis", "reconstruct"];
    args.extend(basis);
    args.extend(["--in", "c.csv"]);
    let o = ssreg(&args, d.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("4,4,1"));
    // the DC coefficient is the image mean
    let c = std::fs::read_to_string(d.path().join("c.csv")).unwrap();
    let dc: f64 = c.split(',').next().unwrap().parse().unwrap();
    assert!((dc - 4.5).abs() < 1e-12);
}

#[test]
fn blur_writes_images_and_rejects_missing_input() {
    let d = tmp();
    std::fs::write(d.path().join("img.csv"), "2,2,1\n0,1\n1,0\n").unwrap();
    let o = ssreg(&["blur", "--tau", "0", "--in", "img.csv", "--out", "out.csv"], d.path());
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(d.path().join("out.csv")).unwrap(), "2,2,1\n0,1\n1,0\n");
    let o = ssreg(&["blur", "--tau", "1", "--in", "img.csv", "--out", "out.pgm"], d.path());
    assert!(o.status.success());
    assert!(std::fs::read(d.path().join("out.pgm")).unwrap().starts_with(b"P5"));
    let o = ssreg(&["blur", "--tau", "1", "--in", "nothing.csv", "--out", "x.csv"], d.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_emits_one_row_per_state() {
    let d = tmp();
    std::fs::write(d.path().join("img.csv"), "4,4,1\n1,2,3,4\n5,6,7,8\n1,2,3,4\n5,6,7,8\n").unwrap();
    let o = ssreg(
        &["simulate", "--family", "legendre", "--mx", "3", "--my", "3", "--w", "4", "--h", "4", "--in", "img.csv", "--delta", "0.5", "--steps", "3"],
        d.path(),
    );
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().all(|l| l.split(',').count() == 18));
}

#[test]
fn train_and_probe_pipeline() {
    let d = tmp();
    std::fs::write(d.path().join("cfg.json"), r#"{"steps": 40, "seed": 2}"#).unwrap();
    std::fs::write(d.path().join("flat.json"), r#"{"steps": 40, "seed": 2, "centering": false}"#).unwrap();
    for (cfg, model, log) in [("cfg.json", "m.json", "log.csv"), ("flat.json", "u.json", "u.csv")] {
        let o = ssreg(
            &["train", "--config", cfg, "--model", model, "--log", log, "--corpus-size", "8"],
            d.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let log = std::fs::read_to_string(d.path().join("log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("step,branch,total,latent_term,pixel_term,recon_mse"));
    assert_eq!(log.lines().count(), 41);

    let again = ssreg(&["train", "--config", "cfg.json", "--corpus-size", "8"], d.path());
    assert_eq!(stdout(&again), log);

    let o = ssreg(&["probe", "norm", "--model", "m.json", "--uncentered", "u.json", "--corpus-size", "3"], d.path());
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["ratio"].as_f64().unwrap() > 0.0);

    let o = ssreg(&["probe", "trajectory-fit", "--model", "m.json", "--corpus-size", "2"], d.path());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["fits"].as_array().unwrap().len(), 2);

    let o = ssreg(&["probe", "unmask", "--corpus-size", "1", "--order", "1,2,3,4,5"], d.path());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let curve: Vec<f64> = report["curves"][0]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(curve.len(), 6);
    assert!(curve.windows(2).all(|w| w[1] <= w[0] + 1e-12));

    let o = ssreg(&["probe", "unmask", "--corpus-size", "1", "--order", "1,1,2,3,4"], d.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn json_format_for_build_a() {
    let d = tmp();
    let o = ssreg(
        &["build-a", "--family", "hermite", "--mx", "3", "--my", "2", "--w", "6", "--h", "4", "--format", "json"],
        d.path(),
    );
    let m: Vec<Vec<f64>> = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m.len(), 6);
}
