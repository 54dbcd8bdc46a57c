use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 42

[params]
eps_gamma = 1e-9
v0 = "0 V"
v1 = "3 V"
vs = "-0.306 nV"

[analysis]
threshold = "1 V"
mc_realizations = 200

[[sources]]
id = "c1"
kind = "classical"
count = 400

[[sources]]
id = "q2"
kind = "qubit"
fidelity = 0.99
count = 200

[[sources]]
id = "q3"
kind = "qubit"
fidelity = 0.55
repetitions = 50
count = 100
"#;

fn everett(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_everett")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_sequence_of_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");

    let o = everett(&["generate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("bits_q3.txt").exists());

    let o = everett(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let readings = out.join("readings.csv");
    let key = out.join("sealed").join("blinding_key.csv");
    assert_eq!(fs::read_to_string(&readings).unwrap().lines().count(), 701);

    let o = everett(&["blinded-summary", "--config", s(&cfg), "--readings", s(&readings), "--out", s(&out)]);
    assert!(o.status.success());
    assert!(out.join("blinded_summary.txt").exists());

    let o = everett(&[
        "unblind-fit", "--config", s(&cfg), "--readings", s(&readings), "--key", s(&key), "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["fit.csv", "band.csv", "histogram_c1.csv", "unblinded_report.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = everett(&["report", "--config", s(&cfg), "--out", s(&dir.path().join("a"))]);
    let b = everett(&["report", "--config", s(&cfg), "--out", s(&dir.path().join("b"))]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8_lossy(&a.stdout).contains("eps_gamma"));
    assert_eq!(
        fs::read(dir.path().join("a/readings.csv")).unwrap(),
        fs::read(dir.path().join("b/readings.csv")).unwrap()
    );
}

#[test]
fn blinded_summary_rejects_key_argument() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    assert!(everett(&["run", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let o = everett(&[
        "blinded-summary",
        "--config",
        s(&cfg),
        "--readings",
        s(&out.join("readings.csv")),
        "--key",
        s(&out.join("sealed/blinding_key.csv")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(5));
    assert!(!out.join("blinded_summary.txt").exists());
}

#[test]
fn exit_codes_follow_error_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let bad = write_config(dir.path(), &SMALL.replace("count = 400", "count = 0"));
    assert_eq!(everett(&["run", "--config", s(&bad), "--out", s(&out)]).status.code(), Some(3));

    let unknown = write_config(dir.path(), &SMALL.replace("seed = 42", "seed = 42\ncolour = 1"));
    assert_eq!(everett(&["run", "--config", s(&unknown), "--out", s(&out)]).status.code(), Some(3));

    let bare = write_config(dir.path(), &SMALL.replace("\"3 V\"", "3.0"));
    assert_eq!(everett(&["run", "--config", s(&bare), "--out", s(&out)]).status.code(), Some(3));

    let missing = dir.path().join("absent.toml");
    assert_eq!(everett(&["run", "--config", s(&missing), "--out", s(&out)]).status.code(), Some(4));

    let cfg = write_config(dir.path(), SMALL);
    let o = everett(&["blinded-summary", "--config", s(&cfg), "--readings", s(&dir.path().join("none.csv")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4));

    assert_eq!(everett(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn mismatched_key_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    assert!(everett(&["run", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let fewer = dir.path().join("fewer.toml");
    fs::write(&fewer, SMALL.split("[[sources]]\nid = \"q3\"").next().unwrap()).unwrap();
    let o = everett(&[
        "unblind-fit",
        "--config",
        s(&fewer),
        "--readings",
        s(&out.join("readings.csv")),
        "--key",
        s(&out.join("sealed/blinding_key.csv")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(5), "{}", String::from_utf8_lossy(&o.stderr));
}
