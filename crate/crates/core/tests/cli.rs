use std::path::Path;

use pulselab::cli::run;
use pulselab::harness::CSV_HEADER;

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("pulselab").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn config_round_trip_reproduces_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let cfg = dir.path().join("run.json");
    let (code, out, err) = call(&[
        "scaling",
        "--pulses",
        "RECT",
        "--model",
        "exponential",
        "--gamma",
        "0.01",
        "--inv-v-min",
        "1e-3",
        "--inv-v-max",
        "1e-2",
        "--points",
        "3",
        "--realizations",
        "2048",
        "--steps",
        "64",
        "--seed",
        "9",
        "--out",
        path(&first),
        "--write-config",
        path(&cfg),
    ]);
    assert_eq!(code, 0, "{out}{err}");
    assert!(out.contains("RECT"));
    let (code, _, err) = call(&["scaling", "--config", path(&cfg), "--out", path(&second)]);
    assert_eq!(code, 0, "{err}");

    let a = std::fs::read(first.join("rect.csv")).unwrap();
    let b = std::fs::read(second.join("rect.csv")).unwrap();
    assert_eq!(a, b);
    let csv = String::from_utf8(a).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.split(',').count() == CSV_HEADER.split(',').count()));
    assert!(first.join("rect.dat").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(first.join("summary.json")).unwrap()).unwrap();
    assert!(summary.is_object());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"pulse": "RECT", "grid": 128}"#).unwrap();
    let (code, _, err) = call(&["nogo", "--config", path(&cfg), "--out", path(dir.path())]);
    assert_eq!(code, 3, "RECT is not first order: {err}");
    let (code, out, err) = call(&["nogo", "--config", path(&cfg), "--pulse", "SCORPSE", "--out", path(dir.path())]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("identity residual"));
    assert!(dir.path().join("nogo_scorpse.json").exists());
}

#[test]
fn exit_codes_and_error_lines() {
    let (code, _, err) = call(&["no-such-command"]);
    assert_eq!(code, 1);
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["exit_code"], 1);

    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = call(&["nogo", "--pulse", "NOPE", "--out", path(dir.path())]);
    assert_eq!(code, 2);
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], "config");

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"unknown_key": 1}"#).unwrap();
    let (code, _, _) = call(&["catalog-validate", "--config", path(&cfg)]);
    assert_eq!(code, 2);

    let (code, out, _) = call(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("scaling"));
}

#[test]
fn catalog_validation_reads_a_catalog_file() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(&good, pulselab::PulseCatalog::builtin().to_json()).unwrap();
    let (code, out, err) = call(&["catalog-validate", "--catalog", path(&good), "--out", path(dir.path())]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("SYM2ND"));

    // SCORPSE with its signs flipped rotates by −π.
    let flipped = pulselab::PulseCatalog::builtin()
        .to_json()
        .replace("\"-3.665", "\"+3.665")
        .replace("\"amplitude_taup\": \"3.665", "\"amplitude_taup\": \"-3.665");
    let flipped = flipped.replace("\"+3.665", "\"3.665");
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, flipped).unwrap();
    let (code, out, err) = call(&["catalog-validate", "--catalog", path(&bad), "--out", path(dir.path())]);
    assert_eq!(code, 2, "{err}");
    assert!(out.lines().any(|l| l.starts_with("SCORPSE") && l.ends_with("FAIL")), "{out}");
}
