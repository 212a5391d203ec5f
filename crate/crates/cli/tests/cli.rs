use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use smoothlin_core::catalog;

fn smoothlin(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smoothlin"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

/// (header lines, body) of a CSV report.
fn split_csv(text: &str) -> (Vec<&str>, String) {
    let header: Vec<&str> = text.lines().take_while(|l| l.starts_with('#')).collect();
    let body = text.lines().skip(header.len()).collect::<Vec<_>>().join("\n");
    (header, body)
}

fn column(text: &str, name: &str) -> Vec<f64> {
    let (_, body) = split_csv(text);
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let idx = rdr.headers().unwrap().iter().position(|h| h == name).expect("column");
    rdr.records().map(|r| r.unwrap()[idx].parse().unwrap()).collect()
}

fn write_system(dir: &Path, name: &str, diag: &[f64]) -> String {
    let path = dir.join(name);
    std::fs::write(&path, catalog::linear_diag(diag).to_file().to_json()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn verify_on_a_linear_system_passes_with_zero_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let o = smoothlin(&["verify", "--system", "linear_saddle"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(dir.path(), "verify.json");
    for suite in v["report"].as_array().unwrap() {
        assert_ne!(suite["status"], "fail", "{suite}");
        if let Some(x) = suite["value"].as_f64() {
            if suite["name"] != "frame_contraction" {
                assert!(x < 1e-12, "{suite}");
            }
        }
    }
}

#[test]
fn linearize_reports_small_residuals_for_the_example() {
    let dir = tempfile::tempdir().unwrap();
    let o = smoothlin(&["linearize", "--system", "bump_3d", "--points", "100"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let res = column(&read(dir.path(), "linearize.csv"), "residual");
    assert_eq!(res.len(), 100);
    assert!(res.iter().all(|r| *r < 1e-6));
    let summary = json(dir.path(), "linearize.json");
    assert_eq!(summary["report"]["largest_passing_radius"], 0.05);
}

#[test]
fn check_flags_a_resonant_spectrum_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let sys = write_system(dir.path(), "res.json", &[4.0, 2.0, 0.5]);
    let o = smoothlin(&["check", "--system", &sys], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("[spectrum]"));
    let rep = json(dir.path(), "check.json");
    assert_eq!(rep["report"]["belitskii_ok"], false);
    assert_eq!(rep["report"]["violating_triples"], serde_json::json!([[1, 3, 2]]));
}

#[test]
fn unbunched_spectrum_passes_check_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let sys = write_system(dir.path(), "unb.json", &[8.0, 2.0, 0.5]);
    let o = smoothlin(&["check", "--system", &sys], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("bunching"));
    assert_eq!(json(dir.path(), "check.json")["report"]["bunching_ok"], false);
}

#[test]
fn csv_bodies_are_determined_by_config_and_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let base = ["foliate", "--system", "bernoulli_quadratic", "--points", "2"];
    assert!(smoothlin(&[&base[..], &["--seed", "5"]].concat(), a.path()).status.success());
    assert!(smoothlin(&[&base[..], &["--seed", "5", "--workers", "1"]].concat(), b.path()).status.success());
    assert!(smoothlin(&[&base[..], &["--seed", "6"]].concat(), c.path()).status.success());
    let (ta, tb, tc) = (read(a.path(), "foliate.csv"), read(b.path(), "foliate.csv"), read(c.path(), "foliate.csv"));
    assert_eq!(ta, tb);
    let (ha, ba) = split_csv(&ta);
    let (hc, bc) = split_csv(&tc);
    assert_ne!(ba, bc);
    assert_eq!(ha[2], "# seed: 5");
    assert_eq!(hc[2], "# seed: 6");
    assert_ne!(ha[1], hc[1], "config hash covers the seed");
    assert!(read(a.path(), "foliate.svg").starts_with("<svg"));
}

#[test]
fn every_artifact_carries_version_hash_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = smoothlin(&["normalform", "--system", "coupled_2d", "--seed", "11"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = read(dir.path(), "normalform.csv");
    let (header, _) = split_csv(&text);
    assert!(header[0].starts_with("# tool: smoothlin "));
    assert!(header[1].starts_with("# config_hash: ") && header[1].len() == "# config_hash: ".len() + 64);
    let j = json(dir.path(), "normalform.json");
    assert_eq!(j["header"]["seed"], 11);
    assert!(j["report"]["mixed_derivatives"][0]["before"].as_f64().unwrap() > 0.5);
    assert!(j["report"]["mixed_derivatives"][0]["after"].as_f64().unwrap() < 1e-7);
}

#[test]
fn spectrum_rows_for_a_random_cocycle() {
    let dir = tempfile::tempdir().unwrap();
    let o = smoothlin(&["spectrum", "--system", "bernoulli_diag"], dir.path());
    assert!(o.status.success());
    let text = read(dir.path(), "spectrum.csv");
    assert_eq!(column(&text, "multiplicity"), vec![1.0, 1.0]);
    assert_eq!(column(&text, "block"), vec![1.0, 2.0]);
    let l = column(&text, "exponent");
    assert!(l[0] > 0.0 && l[1] < 0.0);
}

#[test]
fn schema_errors_exit_two_with_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text = catalog::saddle_2d().to_file().to_json().replace("\"rho\": 0.2", "\"rho\": \"wide\"");
    std::fs::write(&path, text).unwrap();
    let o = smoothlin(&["spectrum", "--system", path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("[system]") && err.contains("rho"), "{err}");

    let o = smoothlin(&["spectrum", "--system", "no_such_system"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn strict_radius_fails_where_the_default_shrinks() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["linearize", "--system", "saddle_2d", "--points", "10", "--tol", "1e-15"];
    let o = smoothlin(&[&args[..], &["--strict-radius"]].concat(), dir.path());
    assert_eq!(o.status.code(), Some(1));
    let j = json(dir.path(), "linearize.json");
    assert!(j["report"]["largest_passing_radius"].is_null());
    assert_eq!(j["report"]["attempts"].as_array().unwrap().len(), 1);

    let o = smoothlin(&args, dir.path());
    assert_eq!(o.status.code(), Some(1));
    let j = json(dir.path(), "linearize.json");
    assert_eq!(j["report"]["attempts"].as_array().unwrap().len(), 9);
}

#[test]
fn frame_rows_cover_each_sample_and_pair() {
    let dir = tempfile::tempdir().unwrap();
    let o = smoothlin(&["frame", "--system", "saddle_2d", "--points", "3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = read(dir.path(), "frame.csv");
    let ratios = column(&text, "max_ratio");
    assert_eq!(ratios.len(), 3);
    assert!(ratios.iter().all(|r| *r <= 0.55));
}

#[test]
fn resonant_system_aborts_linearize_as_a_precondition() {
    let dir = tempfile::tempdir().unwrap();
    let o = smoothlin(&["linearize", "--system", "resonant_3d"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
