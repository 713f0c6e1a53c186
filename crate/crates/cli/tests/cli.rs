use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bne_verify::model::write_dataset;
use bne_verify::priors::PriorModel;
use bne_verify::run::RunConfig;
use bne_verify::strategies::{Strategy, StrategyProfile};
use bne_verify::{Execution, GameConfig, MechanismSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bne-verify"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn verify(config: &Path, out: &Path, extra: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = bin();
    cmd.args(["verify", "--config"]).arg(config).arg("--out").arg(out).args(extra);
    match threads {
        Some(t) => cmd.env("BNE_VERIFY_THREADS", t),
        None => cmd.env_remove("BNE_VERIFY_THREADS"),
    };
    cmd.output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Compares against a checked-in golden file; set `UPDATE_GOLDEN=1` to rewrite.
fn check_golden(actual: &Path, name: &str) {
    let text = fs::read_to_string(actual).unwrap();
    let path = golden(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, &text).unwrap();
    }
    assert_eq!(text, fs::read_to_string(&path).unwrap(), "golden mismatch: {name}");
}

#[test]
fn fpsb_demo_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = verify(&configs().join("fpsb_demo.json"), dir.path(), &["--oracle"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    check_golden(&dir.path().join("ex_interim_agent0_w0.02.json"), "fpsb_demo_agent0.json");
    check_golden(&dir.path().join("ex_interim_agent1_w0.02.json"), "fpsb_demo_agent1.json");
    let r = json(&dir.path().join("ex_interim_agent0_w0.02.json"));
    let est = r["bound"]["empirical"].as_f64().unwrap();
    let oracle = r["oracle"]["analytic_loss"]["value"].as_f64().unwrap();
    assert!((est - oracle).abs() <= 0.02, "{est} vs {oracle}");
    let cells = fs::read_to_string(dir.path().join("ex_interim_agent0_w0.02_cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 1);
}

#[test]
fn correlated_demo_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = verify(&configs().join("correlated_demo.json"), dir.path(), &[], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    check_golden(&dir.path().join("ex_ante_agent0_w0.002.json"), "correlated_demo.json");
    check_golden(&dir.path().join("ex_ante_agent0_w0.002_cells.csv"), "correlated_demo_cells.csv");
    let r = json(&dir.path().join("ex_ante_agent0_w0.002.json"));
    assert!(r["bound"]["total"].as_f64().unwrap() <= 1.0);
}

#[test]
fn delta_out_of_range_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = verify(&configs().join("fpsb_demo.json"), dir.path(), &["--delta", "1.5"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta_total must lie in (0,1)"));
}

#[test]
fn unknown_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    let text = fs::read_to_string(configs().join("fpsb_demo.json"))
        .unwrap()
        .replacen('{', "{\"bogus\": 1,", 1);
    fs::write(&cfg, text).unwrap();
    let out = verify(&cfg, dir.path(), &[], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn grid_sweep_refines() {
    let dir = tempfile::tempdir().unwrap();
    let out = verify(
        &configs().join("fpsb_demo.json"),
        dir.path(),
        &["--grid-sweep", "0.05,0.02,0.01"],
        None,
    );
    assert_eq!(out.status.code(), Some(0));
    let reports = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("ex_interim") && n.ends_with(".json"))
        .count();
    assert_eq!(reports, 6);
    for agent in 0..2 {
        let vals: Vec<f64> = ["0.05", "0.02", "0.01"]
            .iter()
            .map(|w| {
                json(&dir.path().join(format!("ex_interim_agent{agent}_w{w}.json")))["bound"]["empirical"]
                    .as_f64()
                    .unwrap()
            })
            .collect();
        // the finest lattice (step 0.02) contains the other two
        assert!(vals[2] >= vals[0] && vals[2] >= vals[1], "agent {agent}: {vals:?}");
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = configs().join("fpsb_demo.json");
    assert_eq!(verify(&cfg, a.path(), &[], Some("1")).status.code(), Some(0));
    assert_eq!(verify(&cfg, b.path(), &[], Some("8")).status.code(), Some(0));
    for name in [
        "ex_interim_agent0_w0.02.json",
        "ex_interim_agent0_w0.02_plot.csv",
        "ex_interim_agent1_w0.02.json",
        "pushforward_agent0.csv",
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn bad_thread_env_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = verify(&configs().join("fpsb_demo.json"), dir.path(), &[], Some("zero"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn demo_configs_round_trip() {
    for name in ["fpsb_demo.json", "correlated_demo.json"] {
        let cfg = RunConfig::load(&configs().join(name)).unwrap();
        let a = cfg.to_json();
        assert_eq!(a, RunConfig::from_json(&a).unwrap().to_json(), "{name}");
    }
}

#[test]
fn pushforward_diagnostic_below_certified_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("beta.json");
    fs::write(
        &cfg,
        r#"{
          "game": {"n_agents": 2, "mechanism": {"kind": "first_price_single_item"}},
          "prior": {"kind": "independent_product", "kappa": 2.5,
                    "marginals": [[{"dist": "beta", "alpha": 2.0, "beta": 5.0}], [{"dist": "beta", "alpha": 2.0, "beta": 5.0}]]},
          "strategies": [{"agent": 0, "family": "linear_shade", "params": {"c": 0.5}},
                         {"agent": 1, "family": "linear_shade", "params": {"c": 0.5}}],
          "mode": "ex_interim", "grid_w": 0.05, "delta_total": 0.05, "n_samples": 1000, "seed": 1
        }"#,
    )
    .unwrap();
    // N = 1000 leaves the bound itself vacuous (exit 3); only the diagnostic matters here
    assert_eq!(verify(&cfg, dir.path(), &[], None).status.code(), Some(3));
    let csv = fs::read_to_string(dir.path().join("pushforward_agent0.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("bid,density_estimate,certified_bound,tolerance"));
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(f[2], 5.0);
        assert!(f[1] <= f[2], "{line}");
    }
    // rerun with the same seed is byte-identical
    let again = tempfile::tempdir().unwrap();
    assert_eq!(verify(&cfg, again.path(), &[], None).status.code(), Some(3));
    assert_eq!(csv, fs::read_to_string(again.path().join("pushforward_agent0.csv")).unwrap());
}

#[test]
fn bids_only_dataset_is_degraded_and_vacuous() {
    let dir = tempfile::tempdir().unwrap();
    let game = GameConfig::new(2, MechanismSpec::FirstPriceSingleItem).unwrap();
    let profile = StrategyProfile::symmetric(2, Strategy::linear_shade(0.5).unwrap());
    let ds = PriorModel::uniform_iid(2)
        .sample_dataset(&game, &profile, 500, 11, Execution::Sequential)
        .unwrap();
    write_dataset(&ds, &dir.path().join("data.jsonl")).unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{
          "game": {"n_agents": 2, "mechanism": {"kind": "first_price_single_item"}},
          "prior": {"kind": "independent_product", "marginals": [[{"dist": "uniform", "a": 0.0, "b": 1.0}], [{"dist": "uniform", "a": 0.0, "b": 1.0}]]},
          "dataset": "data.jsonl",
          "strategies": "bids-only",
          "mode": "ex_interim", "grid_w": 0.05, "delta_total": 0.05
        }"#,
    )
    .unwrap();
    let out = verify(&cfg, dir.path(), &[], None);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("ex_interim_agent0_w0.05.json"));
    assert!(r["bound"]["flags"]
        .as_array()
        .unwrap()
        .iter()
        .any(|f| f.as_str().unwrap().starts_with("degraded")));
    assert_eq!(r["seed"].as_u64(), Some(11));
}

#[test]
fn missing_config_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = verify(&dir.path().join("nope.json"), dir.path(), &[], None);
    assert_eq!(out.status.code(), Some(1));
}
