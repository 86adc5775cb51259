use std::path::Path;
use std::process::{Command, Output};

fn riemquant(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_riemquant"));
    cmd.current_dir(dir).args(args).env_remove("QUANT_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

const SMALL: &[&str] = &["--restarts", "2", "--opt-n", "3000", "--eval-n", "20000"];

#[test]
fn quantize_writes_table_codebook_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["quantize", "--manifold", "sphere", "--dim", "2", "--measure", "uniform", "--N", "8", "--r", "2", "--seed", "7", "--out", "q.csv"];
    args.extend_from_slice(SMALL);
    let o = riemquant(dir.path(), &args, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let csv = read(&dir.path().join("q.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# command = quantize");
    assert_eq!(lines[1], "# seed = 7");
    assert!(lines[2].starts_with("# config_sha256 = ") && lines[2].len() == "# config_sha256 = ".len() + 64);
    assert!(lines[3].starts_with("# git_revision = "));
    let header = lines.iter().position(|l| !l.starts_with('#')).unwrap();
    assert_eq!(lines[header], "N,V,mc_error,train_V,iterations,converged");
    let row: Vec<&str> = lines[header + 1].split(',').collect();
    assert_eq!(row[0], "8");
    // twelve significant digits
    let mantissa = row[1].split('e').next().unwrap();
    assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 12);
    let v: f64 = row[1].parse().unwrap();
    // eight points on the unit sphere: well below the one-point value
    assert!(v > 0.0 && v < 0.5, "V = {v}");

    let codes = read(&dir.path().join("q.csv.codebook.csv"));
    assert!(codes.contains("N,index,weight,x0,x1,x2"));
    assert_eq!(codes.lines().filter(|l| l.starts_with("8,")).count(), 8);

    let manifest: toml::Table = toml::from_str(&read(&dir.path().join("q.csv.manifest.toml"))).unwrap();
    assert_eq!(manifest["command"].as_str(), Some("quantize"));
    assert_eq!(manifest["seed"].as_integer(), Some(7));
    assert_eq!(manifest["config"]["params"]["manifold"].as_str(), Some("sphere"));
}

#[test]
fn outputs_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = vec!["scaling-law", "--measure", "uniform-square", "--N", "4,9", "--seed", "3"];
    base.extend_from_slice(SMALL);
    let mut one = base.clone();
    one.extend_from_slice(&["--threads", "1", "--out", "a.csv"]);
    let mut env = base.clone();
    env.extend_from_slice(&["--threads", "1", "--out", "b.csv"]);
    assert_eq!(code(&riemquant(dir.path(), &one, &[])), 0);
    assert_eq!(code(&riemquant(dir.path(), &env, &[("QUANT_THREADS", "4")])), 0);
    assert_eq!(read(&dir.path().join("a.csv")), read(&dir.path().join("b.csv")));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "seed = 5\nr = 1.0\nmeasure = \"uniform-interval\"\nN = [2, 4]\n").unwrap();
    let o = riemquant(dir.path(), &["scaling-law", "--config", "run.toml", "--seed", "9", "--out", "s.csv"], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&dir.path().join("s.csv"));
    assert!(csv.contains("# seed = 9"));
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        // r = 1 on [0,1]: N V = 1/4 exactly
        let nv: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!((nv - 0.25).abs() < 1e-9, "{row}");
    }
    let manifest: toml::Table = toml::from_str(&read(&dir.path().join("s.csv.manifest.toml"))).unwrap();
    assert_eq!(manifest["config"]["params"]["r"].as_float(), Some(1.0));
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["quantize", "--N", "4"],
        &["no-such-command", "--seed", "1"],
        &["quantize", "--measure", "nonsense", "--seed", "1"],
        &["quantize", "--manifold", "hyperbolic", "--measure", "uniform", "--seed", "1"],
        &["scaling-law", "--r", "0.5", "--seed", "1"],
        &["quantize", "--config", "missing.toml", "--seed", "1"],
    ];
    for args in cases {
        let o = riemquant(dir.path(), args, &[]);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = riemquant(dir.path(), &["wasserstein-check", "--seed", "1", "--instances", "2"], &[("QUANT_THREADS", "zero")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn failed_criterion_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    // the sequence is still rising between N = 4 and N = 8
    let o = riemquant(dir.path(), &["moment-check", "--N", "4,8", "--seed", "1"], &[]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&dir.path().join("moment-check.csv"));
    assert!(csv.contains("# stable = false"));
    assert!(csv.contains("N,NrV,converged"));
}

#[test]
fn wasserstein_and_sandwich_checks_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = riemquant(dir.path(), &["wasserstein-check", "--seed", "11", "--instances", "12", "--out", "w.csv"], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&dir.path().join("w.csv"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 13);
    for m in ["euclidean", "sphere", "hyperbolic"] {
        assert!(csv.contains(&format!(",{m},")));
    }

    let o = riemquant(dir.path(), &["metric-sandwich", "--seed", "2", "--samples", "4000", "--out", "m.csv"], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&dir.path().join("m.csv"));
    assert!(csv.contains("delta,sup_ratio_dev,C_hat"));
    assert!(csv.contains("# shrinks_linearly = true"));
}
