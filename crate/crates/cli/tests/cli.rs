use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ethd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ethd"))
        .args(args)
        .output()
        .expect("spawn ethd")
}

fn ok(args: &[&str]) -> Output {
    let out = ethd(args);
    assert!(
        out.status.success(),
        "ethd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn identity_device_calibrates_to_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cal");
    ok(&[
        "calibrate",
        "--device",
        "identity",
        "--out",
        out.to_str().unwrap(),
    ]);
    let comp: serde_json::Value = serde_json::from_str(&read(&out, "compensator.json")).unwrap();
    let c: Vec<f64> = comp["coeffs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(c[0].abs() < 1e-6, "{c:?}");
    assert!((c[1] - 1.0).abs() < 1e-3, "{c:?}");
    assert!(c[2].abs() < 1.0, "{c:?}");
    assert!(out.join("manifest.json").exists());
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&[
        "exp1",
        "--plates",
        "P1,P4",
        "--stiffness",
        "400,1200",
        "--seed",
        "11",
        "--out",
        a.to_str().unwrap(),
    ]);
    let manifest = a.join("manifest.json");
    ok(&[
        "exp1",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    for name in ["features.csv", "anova.csv", "sc_by_hardness.csv"] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
    let m: serde_json::Value = serde_json::from_str(&read(&a, "manifest.json")).unwrap();
    assert_eq!(m["seed"], 11);
    assert!(m["config"].get("out").is_none());
}

#[test]
fn single_cell_skips_anova() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("one");
    let o = ok(&[
        "exp1",
        "--plates",
        "P3",
        "--stiffness",
        "1000",
        "--out",
        out.to_str().unwrap(),
    ]);
    let features = read(&out, "features.csv");
    assert_eq!(features.lines().count(), 2);
    assert!(features.lines().nth(1).unwrap().starts_with("P3,1000,"));
    assert!(!out.join("anova.csv").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("ANOVA skipped"));
}

#[test]
fn saved_signal_reanalyses_to_same_features() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("e1");
    let an = tmp.path().join("an");
    ok(&[
        "exp1",
        "--plates",
        "P2",
        "--stiffness",
        "700",
        "--save-signal",
        "P2:700",
        "--out",
        out.to_str().unwrap(),
    ]);
    let sig = out.join("signals/P2_700.csv");
    ok(&[
        "analyze",
        sig.to_str().unwrap(),
        "--out",
        an.to_str().unwrap(),
    ]);
    assert_eq!(read(&out, "features.csv"), read(&an, "features.csv"));
}

#[test]
fn unknown_config_field_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"sed": 3}"#).unwrap();
    let o = ethd(&["calibrate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sed"));
}

#[test]
fn invalid_protocol_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ethd(&[
        "exp1",
        "--plates",
        "P9",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let o = ethd(&["calibrate", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn nonstandard_reference_warns() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ok(&[
        "exp2",
        "--plates",
        "P1",
        "--references",
        "750",
        "--runs",
        "5",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("750"), "{err}");
    assert_eq!(read(tmp.path(), "grid.csv").lines().count(), 6);
}

#[test]
fn stats_one_way_and_two_way() {
    let tmp = tempfile::tempdir().unwrap();
    let one = tmp.path().join("one.csv");
    fs::write(&one, "g,v\na,1\na,2\nb,2\nb,3\nc,3\nc,4\n").unwrap();
    let o = ok(&[
        "stats",
        one.to_str().unwrap(),
        "--n-perm",
        "200",
        "--out",
        tmp.path().join("s1").to_str().unwrap(),
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("g: F(2,3) = 4.00"));
    assert_eq!(
        read(&tmp.path().join("s1"), "pairwise.csv").lines().count(),
        4
    );

    let two = tmp.path().join("two.csv");
    fs::write(&two, "a,b,y\nx,p,1\nx,q,2\ny,p,3\ny,q,5\n").unwrap();
    let o = ethd(&[
        "stats",
        two.to_str().unwrap(),
        "--interaction",
        "--out",
        tmp.path().join("s2").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "interaction needs replicates");
    ok(&[
        "stats",
        two.to_str().unwrap(),
        "--out",
        tmp.path().join("s3").to_str().unwrap(),
    ]);
}
