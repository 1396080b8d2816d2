use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use psem::fixtures::{hvtn_reconstruction, scenario_b_example, FixtureBuilder, HVTN_NU};
use psem::{write_csv, ObservedRecord};
use serde_json::Value;
use tempfile::TempDir;

fn psem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psem"))
        .args(args)
        .output()
        .expect("spawn psem")
}

fn write_records(dir: &Path, name: &str, records: &[ObservedRecord]) -> PathBuf {
    let path = dir.join(name);
    write_csv(fs::File::create(&path).unwrap(), records).unwrap();
    path
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn analyze(config: &Path, out: &Path) -> Vec<csv::StringRecord> {
    let o = psem(&[
        "analyze",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(out.join("intervals.csv")).unwrap();
    assert_eq!(r.headers().unwrap().len(), 16);
    r.records().map(Result::unwrap).collect()
}

fn row<'a>(rows: &'a [csv::StringRecord], region: &str, target: &str) -> &'a csv::StringRecord {
    rows.iter().find(|r| &r[0] == region && &r[3] == target).expect("row")
}

fn num(r: &csv::StringRecord, i: usize) -> f64 {
    r[i].parse().unwrap()
}

#[test]
fn null_region_gives_a_degenerate_interval_for_mu() {
    let dir = TempDir::new().unwrap();
    write_records(dir.path(), "b.csv", &scenario_b_example());
    let cfg = write(
        dir.path(),
        "a.toml",
        "input = \"b.csv\"\nscenario = \"B\"\n[sensitivity]\nregions = [{ beta0 = [0.0, 0.0] }]\n",
    );
    let rows = analyze(&cfg, &dir.path().join("out"));
    let mu = row(&rows, "beta0=[0,0]", "mu");
    for i in [4, 6, 7] {
        assert!((num(mu, i) + 0.4).abs() < 1e-12, "column {i}: {}", &mu[i]);
    }
    assert_eq!(num(mu, 6), num(mu, 7));
    assert_eq!(&mu[14], "0");
    assert_eq!(&mu[15], "1");
}

#[test]
fn c_harm_with_zero_beta1_matches_b() {
    let dir = TempDir::new().unwrap();
    write_records(dir.path(), "b.csv", &scenario_b_example());
    let b = write(
        dir.path(),
        "b.toml",
        "input = \"b.csv\"\nscenario = \"B\"\n[sensitivity]\ngrid = 5\nregions = [{ beta0 = [-1.0, 1.0] }]\n",
    );
    let c = write(
        dir.path(),
        "c.toml",
        "input = \"b.csv\"\nscenario = \"C_harm\"\n[sensitivity]\ngrid = 5\nregions = [{ beta0 = [-1.0, 1.0], beta1_marginal = [0.0, 0.0] }]\n",
    );
    let rb = analyze(&b, &dir.path().join("ob"));
    let rc = analyze(&c, &dir.path().join("oc"));
    assert_eq!(rb.len(), rc.len());
    for (x, y) in rb.iter().zip(&rc) {
        assert_eq!(&x[3], &y[3]);
        for i in 4..13 {
            assert!(
                (num(x, i) - num(y, i)).abs() <= 1e-8,
                "{} column {i}: {} vs {}",
                &x[3],
                &x[i],
                &y[i]
            );
        }
    }
}

#[test]
fn hvtn_ve_point_estimate() {
    let dir = TempDir::new().unwrap();
    write_records(dir.path(), "hvtn.csv", &hvtn_reconstruction());
    let cfg = write(
        dir.path(),
        "h.toml",
        &format!(
            "input = \"hvtn.csv\"\nscenario = \"B\"\ncontrast = \"VE\"\n[weights]\nmodel = \"design_known\"\nnu = {HVTN_NU:?}\n[sensitivity]\ngrid = 5\nregions = [{{}}, {{ beta0 = [-0.5, 0.5] }}, {{ beta0 = [-1.0, 1.0] }}]\n"
        ),
    );
    let out = dir.path().join("out");
    let rows = analyze(&cfg, &out);
    let ve1 = num(row(&rows, "null", "CEP(1,0)"), 4);
    assert!((0.70..=0.86).contains(&ve1), "{ve1}");
    let narrow = row(&rows, "beta0=[-0.5,0.5]", "CEP(1,0)");
    let wide = row(&rows, "beta0=[-1,1]", "CEP(1,0)");
    assert!(num(wide, 6) <= num(narrow, 6) && num(wide, 7) >= num(narrow, 7));
    assert!(num(narrow, 10) <= num(narrow, 6) && num(narrow, 11) >= num(narrow, 7));

    let results: Value = serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(results["regions"].as_array().unwrap().len(), 3);
    assert!(results["regions"][0]["null_fit"]["mixing_residual"].as_f64().unwrap() < 1e-10);
    assert_eq!(results["diagnostics"]["a4pp"], Value::Bool(false));
}

#[test]
fn echoed_config_reproduces_results() {
    let dir = TempDir::new().unwrap();
    write_records(dir.path(), "hvtn.csv", &hvtn_reconstruction());
    let cfg = write(
        dir.path(),
        "h.toml",
        "input = \"hvtn.csv\"\nscenario = \"B\"\ncontrast = \"LogRR\"\n[sensitivity]\ngrid = 3\nregions = [{ beta0 = [-1.0, 1.0] }]\n",
    );
    let first = dir.path().join("first");
    analyze(&cfg, &first);
    let results: Value = serde_json::from_str(&fs::read_to_string(first.join("results.json")).unwrap()).unwrap();
    let elsewhere = TempDir::new().unwrap();
    let echo = write(elsewhere.path(), "echo.json", &results["config"].to_string());
    let second = elsewhere.path().join("second");
    analyze(&echo, &second);
    assert_eq!(
        fs::read_to_string(first.join("intervals.csv")).unwrap(),
        fs::read_to_string(second.join("intervals.csv")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(first.join("results.json")).unwrap(),
        fs::read_to_string(second.join("results.json")).unwrap()
    );
}

#[test]
fn flags_override_the_config() {
    let dir = TempDir::new().unwrap();
    write_records(dir.path(), "b.csv", &scenario_b_example());
    let cfg = write(
        dir.path(),
        "a.toml",
        "input = \"missing.csv\"\nscenario = \"B\"\noutput = \"unused\"\n",
    );
    let out = dir.path().join("flagged");
    let input = dir.path().join("b.csv");
    let o = psem(&[
        "analyze",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--contrast",
        "VE",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let results: Value = serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(results["config"]["contrast"], "VE");
    assert!(!dir.path().join("unused").exists());
}

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        "seed = 11\nreplicates = 50\n[[cells]]\ndesign = \"B\"\nn = 400\nnu = 1.0\ndiff = 0.0\ngamma = 0.0\n",
    );
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let start = std::time::Instant::now();
        let o = psem(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(start.elapsed().as_secs_f64() < 10.0);
        (
            fs::read(out.join("study.csv")).unwrap(),
            fs::read(out.join("study.json")).unwrap(),
        )
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "2"));
    let mut r = csv::Reader::from_reader(a.0.as_slice());
    let rows: Vec<_> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    let power: f64 = rows[0][r.headers().unwrap().iter().position(|h| h == "power").unwrap()]
        .parse()
        .unwrap();
    assert!(power <= 0.05 + 3.0 * (0.05f64 * 0.95 / 50.0).sqrt(), "{power}");

    let o = psem(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("c").to_str().unwrap(),
        "--seed",
        "12",
    ]);
    assert!(o.status.success());
    assert_ne!(fs::read(dir.path().join("c/study.csv")).unwrap(), a.0);
}

#[test]
fn diagnose_reports_the_assumption_checks() {
    let dir = TempDir::new().unwrap();
    let input = write_records(dir.path(), "hvtn.csv", &hvtn_reconstruction());
    let out = dir.path().join("diag");
    let o = psem(&[
        "diagnose",
        "--input",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("fisher_p 0.539"), "{text}");
    assert!(text.contains("(A4''): no"), "{text}");
    assert!(text.contains("recommended scenarios: B"), "{text}");
    let d: Value = serde_json::from_str(&fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    assert!((d["diagnostics"]["arms"][1]["early_event_rate"].as_f64().unwrap() - 0.0112).abs() < 1e-3);
    assert!((d["diagnostics"]["arms"][0]["early_event_rate"].as_f64().unwrap() - 0.0080).abs() < 1e-3);

    let reversed = FixtureBuilder::new()
        .early(1, 10)
        .measured(1, false, 100, 20)
        .measured(1, true, 100, 10)
        .early(0, 40)
        .measured(0, false, 170, 50)
        .build();
    let input = write_records(dir.path(), "rev.csv", &reversed);
    let o = psem(&["diagnose", "--input", input.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("(A4''): yes"), "{text}");
    assert!(text.contains("C_protect"), "{text}");
}

fn assert_exit(o: &Output, code: i32, kind: &str) {
    assert_eq!(o.status.code(), Some(code), "{}", stderr(o));
    let err = stderr(o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error[code={code} kind={kind} ")), "{err}");
}

#[test]
fn error_exit_codes() {
    let dir = TempDir::new().unwrap();
    let empty = write(dir.path(), "empty.csv", "");
    assert_exit(&psem(&["diagnose", "--input", empty.to_str().unwrap()]), 3, "data");
    let header_only = write(dir.path(), "header.csv", "id,z,y_tau,s_star,r,y\n");
    assert_exit(
        &psem(&["diagnose", "--input", header_only.to_str().unwrap()]),
        3,
        "data",
    );

    let bad_key = write(dir.path(), "k.toml", "input = \"x.csv\"\nscenario = \"B\"\nbogus = 1\n");
    assert_exit(&psem(&["analyze", "--config", bad_key.to_str().unwrap()]), 2, "config");
    let illegal = write(
        dir.path(),
        "i.toml",
        "input = \"x.csv\"\nscenario = \"B\"\n[sensitivity]\nregions = [{ beta3 = [0.0, 1.0] }]\n",
    );
    assert_exit(&psem(&["analyze", "--config", illegal.to_str().unwrap()]), 2, "config");
    assert_exit(&psem(&["analyze", "--config", "/nonexistent/config.toml"]), 2, "config");
    assert_exit(&psem(&["simulate"]), 2, "config");
    assert_exit(
        &psem(&["analyze", "--config", bad_key.to_str().unwrap(), "--scenario", "D"]),
        2,
        "config",
    );

    write_records(dir.path(), "b.csv", &scenario_b_example());
    let absurd = write(
        dir.path(),
        "x.toml",
        "input = \"b.csv\"\nscenario = \"B\"\n[sensitivity]\ngrid = 2\nregions = [{ beta0 = [40.0, 50.0] }]\n",
    );
    let o = psem(&[
        "analyze",
        "--config",
        absurd.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    let code = o.status.code().unwrap();
    assert!(code == 4 || code == 5, "{}", stderr(&o));

    let o = psem(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}
