use std::path::Path;
use std::process::Command;

use langevin_homog::cli_io::{parse_config_str, Overrides};
use langevin_homog::model_spec::ModelSource;
use proptest::prelude::*;
use serde_json::json;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_langevin-homog"))
}

fn write_config(dir: &Path, exp: serde_json::Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let v = json!({"model": serde_json::to_value(ModelSource::benchmark_1d()).unwrap(), "experiment": exp});
    std::fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn drift_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({"kind": "validate"}));
    let out = dir.path().join("run");
    let status = bin()
        .args(["drift", "--config"])
        .arg(&cfg)
        .args(["--seed", "4", "--out"])
        .arg(&out)
        .env_remove("LH_THREADS")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let rec: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("record.json")).unwrap()).unwrap();
    let s = rec["outputs"]["points"][0]["S"][0].as_f64().unwrap();
    assert!((s + 0.25).abs() < 1e-12);
    assert_eq!(rec["plan"]["experiment"]["seed"], 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // missing seed
    let cfg = write_config(dir.path(), json!({"kind": "drift"}));
    let o = bin().args(["drift", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    // band failure
    let cfg = write_config(
        dir.path(),
        json!({"kind": "ladder-strong", "seed": 1, "paths": 4, "epsilons": [0.1, 0.05, 0.025], "T": 0.1,
               "bands": {"strong": {"lo": 40.0, "hi": 41.0}}}),
    );
    let o =
        bin().args(["ladder-strong", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("b")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().args(["nonsense", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn thread_count_does_not_change_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        json!({"kind": "ladder-integral", "seed": 8, "paths": 12, "epsilons": [0.1, 0.05, 0.025], "T": 0.3,
               "scheme": "semi-implicit", "observation_points": 30}),
    );
    let run = |threads: &str, env: Option<&str>, sub: &str| {
        let mut c = bin();
        c.args(["ladder-integral", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join(sub));
        if !threads.is_empty() {
            c.args(["--threads", threads]);
        }
        match env {
            Some(v) => c.env("LH_THREADS", v),
            None => c.env_remove("LH_THREADS"),
        };
        assert!(matches!(c.status().unwrap().code(), Some(0) | Some(2)));
        std::fs::read(dir.path().join(sub).join("ladder.csv")).unwrap()
    };
    let a = run("1", None, "a");
    assert_eq!(a, run("3", None, "b"));
    assert_eq!(a, run("", Some("2"), "c"));
}

fn experiment() -> impl Strategy<Value = serde_json::Value> {
    (
        prop_oneof![Just("drift"), Just("ladder-strong"), Just("simulate"), Just("cell")],
        any::<u64>(),
        proptest::collection::vec(0.001..1.0f64, 1..6),
        1usize..5000,
        0.01..10.0f64,
        proptest::option::of(1usize..16),
        prop_oneof![Just("euler-maruyama"), Just("semi-implicit")],
    )
        .prop_map(|(kind, seed, mut eps, paths, t, threads, scheme)| {
            eps.sort_by(|a, b| b.partial_cmp(a).unwrap());
            eps.dedup();
            let mut e = json!({"kind": kind, "seed": seed, "epsilons": eps, "paths": paths, "T": t, "scheme": scheme});
            if let Some(th) = threads {
                e["threads"] = json!(th);
            }
            e
        })
}

proptest! {
    #[test]
    fn emitted_plans_parse_back(exp in experiment()) {
        let v = json!({"model": serde_json::to_value(ModelSource::benchmark_1d()).unwrap(), "experiment": exp});
        let plan = parse_config_str(&v.to_string(), &Overrides::default()).unwrap();
        let again = parse_config_str(&plan.emit(), &Overrides::default()).unwrap();
        prop_assert_eq!(&plan, &again);
        prop_assert_eq!(plan.emit(), again.emit());
    }
}
