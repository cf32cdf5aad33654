//! End-to-end runs of the `landscape` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use tempfile::TempDir;

fn landscape(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_landscape"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawning landscape")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Sparse iid potential on which the landscape and maximal function disagree
/// by more than the spread cap.
const SPARSE_IID: &str = r#"
[instance]
dim = 3
h = 0.125
half_width = 2.0

[instance.potential]
kind = "random-uniform"
low = 0.0
high = 1000.0
seed = 11
density = 0.05

[run]
experiments = ["landscape", "maximal", "verify"]
test_functions = 10
"#;

#[test]
fn yukawa_smoke_passes_within_a_minute() {
    let dir = TempDir::new().unwrap();
    let start = Instant::now();
    let o = landscape(&["all", "--config", "yukawa-smoke"], dir.path());
    let elapsed = start.elapsed();
    assert_eq!(o.status.code(), Some(0), "{}\n{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    assert!(!stdout(&o).contains("FAIL"));
    for f in ["summary.json", "timings.csv", "landscape-landscape.json", "landscape-u.csv", "spectrum-spectrum.csv"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let entries = summary.as_array().unwrap();
    assert!(!entries.is_empty());
    assert!(entries.iter().all(|e| e["pass"] == true));
}

#[test]
fn example1_magnetic_passes() {
    let dir = TempDir::new().unwrap();
    let o = landscape(&["all", "--config", "example1-magnetic"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}\n{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    for id in ["uncertainty-magnetic", "fefferman-phong-magnetic", "diamagnetic"] {
        assert!(text.contains(&format!("verify/{id}: PASS")), "{text}");
    }
}

#[test]
fn strongly_singular_power_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "singular.toml",
        "[instance]\ndim = 3\nh = 0.125\nhalf_width = 1.0\n[instance.potential]\nkind = \"power\"\nalpha = -2.0\n",
    );
    let o = landscape(&["landscape", "--config", &cfg], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "typo.toml",
        "[instance]\ndim = 2\nh = 0.1\nhalf_width = 1.0\n[instance.potential]\nkind = \"constant\"\nvalue = 1.0\n[run]\nseeed = 3\n",
    );
    let o = landscape(&["landscape", "--config", &cfg], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeed"));
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = landscape(&["landscape", "--config", "no-such-config"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failing_checks_set_exit_status_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "sparse.toml", SPARSE_IID);
    let o = landscape(&["all", "--config", &cfg], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("verify/compare-u-m: FAIL"));
}

#[test]
fn negative_controls_do_not_affect_exit_status() {
    let dir = TempDir::new().unwrap();
    let text = format!("{SPARSE_IID}negative_control = true\n");
    let cfg = write_config(&dir, "control.toml", &text);
    let o = landscape(&["all", "--config", &cfg], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("verify/compare-u-m: FAIL (negative control)"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/verify-compare-u-m.json")).unwrap()).unwrap();
    assert_eq!(report["negative_control"], true);
    assert_eq!(report["pass"], false);
}

#[test]
fn single_threaded_runs_are_bit_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "small.toml",
        r#"
[instance]
dim = 2
h = 0.0625
half_width = 2.0

[instance.potential]
kind = "power"
alpha = 2.0

[run]
test_functions = 20
mu_ladder = [2.0, 4.0, 8.0]
"#,
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = landscape(&["all", "--config", &cfg, "--threads", "1"], out);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 5);
    for name in names {
        if name == "timings.csv" {
            continue;
        }
        let (x, y) = (fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
        assert!(x == y, "{name:?} differs");
    }
}

#[test]
fn format_flag_restricts_outputs() {
    let dir = TempDir::new().unwrap();
    let o = landscape(&["maximal", "--config", "yukawa-smoke", "--format", "json"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let names: Vec<String> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert!(names.iter().any(|n| n.ends_with(".json")));
    assert!(names.iter().all(|n| !n.ends_with(".csv") || n == "timings.csv"), "{names:?}");
}
