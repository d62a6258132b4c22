use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use converging_cli::compare::compare;
use converging_cli::run::run_experiment;
use converging_cli::ExperimentConfig;

const MINIMAL: &str = r#"
schema_version = 1
rounds = 5
seeds = [1]

[env]
preset = "lin_reach"

[policy]
kind = "linear_affine"

[supervisor]
kind = "synthetic"
schedule = { kind = "harmonic", c = 0.4 }

[player]
kind = "dagger_aggregate"
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_converging"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_cli(config: &Path, out: &Path) -> Output {
    bin()
        .args(["--quiet", "run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

/// Header present, constant width, every nonempty numeric cell finite.
fn check_csv(path: &Path, text_columns: &[&str]) -> Vec<csv::StringRecord> {
    let raw = fs::read(path).unwrap();
    assert!(!raw.windows(2).any(|w| w == b"\r\n"), "{} uses CRLF", path.display());
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().clone();
    assert!(!header.is_empty());
    let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    for row in &rows {
        assert_eq!(row.len(), header.len(), "ragged row in {}", path.display());
        for (name, cell) in header.iter().zip(row.iter()) {
            if cell.is_empty() || text_columns.contains(&name) {
                continue;
            }
            let v: f64 = cell.parse().unwrap_or_else(|_| panic!("{name}={cell} in {}", path.display()));
            assert!(v.is_finite(), "{name}={cell} in {}", path.display());
        }
    }
    rows
}

#[test]
fn minimal_run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.toml", MINIMAL);
    let out = tmp.path().join("out");
    let res = run_cli(&cfg, &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let d = out.join("seed_1");
    for f in [
        "manifest.json",
        "regret.json",
        "timing.json",
        "params_final.json",
        "supervisor_final.json",
    ] {
        let text = fs::read_to_string(d.join(f)).unwrap();
        serde_json::from_str::<serde_json::Value>(&text).unwrap_or_else(|e| panic!("{f}: {e}"));
    }
    for line in fs::read_to_string(d.join("params.jsonl")).unwrap().lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
    assert_eq!(check_csv(&d.join("rounds.csv"), &[]).len(), 5);
    assert_eq!(check_csv(&d.join("round_timing.csv"), &[]).len(), 5);
    assert_eq!(check_csv(&d.join("regret.csv"), &["metric"]).len(), 5 * 9);

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.toml", MINIMAL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_cli(&cfg, &a).status.success());
    assert!(run_cli(&cfg, &b).status.success());
    for f in ["rounds.csv", "regret.csv", "params.jsonl", "manifest.json", "params_final.json"] {
        let x = fs::read(a.join("seed_1").join(f)).unwrap();
        let y = fs::read(b.join("seed_1").join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
}

#[test]
fn golden_seed_fixture_is_reproduced() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
    run_experiment(&cfg, tmp.path(), None, true).unwrap();
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/minimal_seed_1");
    for f in ["rounds.csv", "regret.csv"] {
        let got = fs::read_to_string(tmp.path().join("seed_1").join(f)).unwrap();
        let want = fs::read_to_string(fixtures.join(f)).unwrap();
        assert_eq!(got, want, "{f} drifted from the golden fixture");
    }
}

#[test]
fn equal_elites_and_population_is_a_named_schema_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace(
        "kind = \"synthetic\"\nschedule = { kind = \"harmonic\", c = 0.4 }",
        "kind = \"mpc_cem\"\nplanner = { population = 50, elites = 50 }",
    );
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    let res = run_cli(&cfg, &tmp.path().join("out"));
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("planner.elites") && err.contains("elites < population"), "{err}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn component_failures_name_the_round() {
    let tmp = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace(
        "kind = \"synthetic\"\nschedule = { kind = \"harmonic\", c = 0.4 }",
        "kind = \"mpc_cem\"\nseed_rollouts = 0\ndynamics = { batch_size = 64 }",
    );
    let cfg = write_config(tmp.path(), "small.toml", &text);
    let res = run_cli(&cfg, &tmp.path().join("out"));
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("round 1") && err.contains("buffer too small"), "{err}");
}

#[test]
fn seed_override_runs_only_that_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.toml", &MINIMAL.replace("seeds = [1]", "seeds = [1, 2]"));
    let out = tmp.path().join("out");
    let res = bin()
        .args(["--quiet", "run", "--seed-override", "9", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success());
    let dirs: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(dirs, vec!["seed_9"]);
}

#[test]
fn missing_config_and_checkpoint_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let res = run_cli(&tmp.path().join("nope.toml"), &tmp.path().join("out"));
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("nope.toml"));

    let cfg = write_config(tmp.path(), "min.toml", MINIMAL);
    let res = bin()
        .args(["--quiet", "timing-bench", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("checkpoint missing"));
}

#[test]
fn timing_bench_reads_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.toml", MINIMAL);
    assert!(run_cli(&cfg, &tmp.path().join("out")).status.success());
    let report = tmp.path().join("t.json");
    let res = bin()
        .args(["--quiet", "timing-bench", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(tmp.path().join("out/seed_1"))
        .arg("--out")
        .arg(&report)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert!(v["learner"]["calls"].as_u64().unwrap() >= 1000);
    assert!(v["supervisor"]["calls"].as_u64().unwrap() >= 50);
    assert_eq!(v["supervisor_kind"], "synthetic");
}

#[test]
fn ensemble_policy_runs_without_regret() {
    let tmp = tempfile::tempdir().unwrap();
    let text = MINIMAL
        .replace("rounds = 5", "rounds = 3")
        .replace("kind = \"linear_affine\"", "kind = \"mlp_ensemble\"\nmlp = { members = 2, hidden = [8] }")
        .replace("kind = \"dagger_aggregate\"", "kind = \"dagger_aggregate\"\nmlp_fit = { epochs = 5 }");
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    let runs = run_experiment(&cfg, tmp.path(), None, true).unwrap();
    assert!(runs[0].regret.is_none());
    let d = tmp.path().join("seed_1");
    assert_eq!(check_csv(&d.join("rounds.csv"), &[]).len(), 3);
    assert!(check_csv(&d.join("regret.csv"), &["metric"]).is_empty());
    assert!(fs::read_to_string(d.join("regret.json")).unwrap().contains("unavailable"));
}

#[test]
fn prefix_comparators_are_emitted_on_request() {
    let tmp = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("[env]", "[flags]\nemit_prefix_comparators = true\n\n[env]");
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    run_experiment(&cfg, tmp.path(), None, true).unwrap();
    let lines = fs::read_to_string(tmp.path().join("seed_1/comparators.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2 * 5);
}

fn read_long(path: &Path) -> Vec<(String, usize, String, f64)> {
    check_csv(path, &["run_id", "metric"])
        .iter()
        .map(|r| (r[0].to_string(), r[1].parse().unwrap(), r[2].to_string(), r[3].parse().unwrap()))
        .collect()
}

#[test]
fn compare_with_itself_duplicates_rows_under_distinct_ids() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
    let run = tmp.path().join("runA");
    run_experiment(&cfg, &run, None, true).unwrap();
    let seed_dir = run.join("seed_1");
    compare(&[seed_dir.clone(), seed_dir], &tmp.path().join("cmp")).unwrap();
    let rows = read_long(&tmp.path().join("cmp/merged_long.csv"));
    let ids: std::collections::BTreeSet<_> = rows.iter().map(|r| r.0.clone()).collect();
    assert_eq!(ids.len(), 2);
    let (a, b): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r.0 == "runA/seed_1");
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.1, &x.2, x.3), (y.1, &y.2, y.3));
    }
}

#[test]
fn compare_takes_the_union_of_rounds() {
    let tmp = tempfile::tempdir().unwrap();
    let short = ExperimentConfig::from_toml(MINIMAL).unwrap();
    let long = ExperimentConfig::from_toml(&MINIMAL.replace("rounds = 5", "rounds = 8")).unwrap();
    run_experiment(&short, &tmp.path().join("short"), None, true).unwrap();
    run_experiment(&long, &tmp.path().join("long"), None, true).unwrap();
    compare(
        &[tmp.path().join("short"), tmp.path().join("long")],
        &tmp.path().join("cmp"),
    )
    .unwrap();
    let mut rdr = csv::Reader::from_path(tmp.path().join("cmp/merged_wide.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 8);
    let col = header.iter().position(|h| h == "short/seed_1:loss_vs_psi_i").unwrap();
    let other = header.iter().position(|h| h == "long/seed_1:loss_vs_psi_i").unwrap();
    for row in &rows {
        let round: usize = row[0].parse().unwrap();
        assert_eq!(row[col].is_empty(), round > 5, "round {round}");
        assert!(!row[other].is_empty());
    }
}

#[test]
fn compare_rejects_schema_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
    run_experiment(&cfg, &tmp.path().join("a"), None, true).unwrap();
    run_experiment(&cfg, &tmp.path().join("b"), None, true).unwrap();
    let m = tmp.path().join("b/seed_1/manifest.json");
    let text = fs::read_to_string(&m).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 2");
    fs::write(&m, text).unwrap();
    let res = bin()
        .args(["--quiet", "compare"])
        .arg(tmp.path().join("a"))
        .arg(tmp.path().join("b"))
        .arg("--out")
        .arg(tmp.path().join("cmp"))
        .output()
        .unwrap();
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("schema version mismatch"));
}

#[test]
fn harmonic_and_constant_extra_terms_pull_apart() {
    let tmp = tempfile::tempdir().unwrap();
    let base = MINIMAL.replace("rounds = 5", "rounds = 40");
    let harmonic = ExperimentConfig::from_toml(&base).unwrap();
    let constant = ExperimentConfig::from_toml(&base.replace("\"harmonic\"", "\"constant\"")).unwrap();
    run_experiment(&harmonic, &tmp.path().join("harmonic"), None, true).unwrap();
    run_experiment(&constant, &tmp.path().join("constant"), None, true).unwrap();
    let runs = compare(
        &[tmp.path().join("harmonic"), tmp.path().join("constant")],
        &tmp.path().join("cmp"),
    )
    .unwrap();
    let gap = |i: usize| runs[0].get(i, "extra_term").unwrap() - runs[1].get(i, "extra_term").unwrap();
    for i in 1..=40 {
        assert_eq!(runs[1].get(i, "extra_term"), Some(0.0));
    }
    assert!(gap(10) > 0.0);
    for i in 10..39 {
        assert!(gap(i + 1) > gap(i), "gap shrank at round {i}");
    }
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e:#}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
