use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jumpflow::harness::{validate, ExperimentConfig};

const BIN: &str = env!("CARGO_BIN_EXE_jumpflow");

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"))
        .join("cli")
        .join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

fn jumpflow(config: &Path, out: &Path, extra: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.arg(config).arg("--out").arg(out).args(extra);
    match threads {
        Some(n) => cmd.env("JUMPFLOW_THREADS", n),
        None => cmd.env_remove("JUMPFLOW_THREADS"),
    };
    cmd.output().unwrap()
}

fn listing(dir: &Path) -> BTreeSet<String> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const MEANFIELD: &str = r#"
[sim]
dt = 0.01
t_end = 2.0
master_seed = 4

[task]
kind = "meanfield"
n_paths = 400
"#;

#[test]
fn meanfield_defaults_report_closed_form_clock() {
    let dir = scratch("meanfield");
    let out = dir.join("out");
    let o = jumpflow(&write_config(&dir, MEANFIELD), &out, &[], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("mean_curve.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,mean,stderr,h_closed_form"));
    let mut rows = 0;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        // z0 = 1, a = 1, b = 2: h(t) = 1 / (2 - e^{-t})
        let h = 1.0 / (2.0 - (-v[0]).exp());
        assert!((v[3] - h).abs() < 1e-12, "t = {}: {} vs {h}", v[0], v[3]);
        rows += 1;
    }
    assert_eq!(rows, 201);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("meanfield.json")).unwrap()).unwrap();
    assert_eq!(report["mode"], "closed_form");
    assert_eq!(report["params"]["b"], 2.0);
}

#[test]
fn deterministic_drift_gives_straight_line() {
    let dir = scratch("deterministic");
    let out = dir.join("out");
    let cfg = r#"
[model]
gamma0 = "0.5"

[sim]
dt = 0.125
t_end = 2.0
master_seed = 1

[task]
kind = "simulate"
x0 = 1.0
"#;
    let o = jumpflow(&write_config(&dir, cfg), &out, &[], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("path.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 17);
    for (k, row) in rows.iter().enumerate() {
        let t = 0.125 * k as f64;
        let v: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(v[0], t);
        assert_eq!(v[1], 1.0 + 0.5 * t);
        assert_eq!(v[2], 0.0);
    }
}

#[test]
fn missing_seed_exits_two_and_writes_nothing() {
    let dir = scratch("noseed");
    let out = dir.join("out");
    let cfg =
        "[model]\nbuiltin = \"cb(1)\"\n[sim]\ndt = 0.01\n[task]\nkind = \"simulate\"\nx0 = 1.0\n";
    let o = jumpflow(&write_config(&dir, cfg), &out, &[], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sim.master_seed"));
    assert!(!out.exists());

    let o = jumpflow(&write_config(&dir, cfg), &out, &["--seed", "3"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest(&out)["overrides"]["seed"], 3);
}

#[test]
fn syntax_errors_exit_two() {
    let dir = scratch("syntax");
    let out = dir.join("out");
    let o = jumpflow(&write_config(&dir, "[model\nbuiltin = 1"), &out, &[], None);
    assert_eq!(o.status.code(), Some(2));
    let cfg = "[model]\nbuiltin = \"cb(1)\"\n[sim]\nmaster_seed = 1\n[task]\nkind = \"teleport\"\n";
    let o = jumpflow(&write_config(&dir, cfg), &out, &[], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn numerical_failure_exits_three() {
    let dir = scratch("numerical");
    let out = dir.join("out");
    // Every path drops below the absorbing threshold before the horizon.
    let cfg = r#"
[sim]
dt = 0.05
t_end = 40.0
x_absorb = 0.5
master_seed = 2

[task]
kind = "meanfield"
n_paths = 2

[task.params]
z0 = 0.6
a = 1.0
b = 2.0
a_tilde = 1.0
"#;
    let o = jumpflow(&write_config(&dir, cfg), &out, &[], None);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(!out.exists());
}

#[test]
fn occupied_output_dir_is_refused() {
    let dir = scratch("occupied");
    let out = dir.join("out");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    let o = jumpflow(&write_config(&dir, MEANFIELD), &out, &[], None);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(listing(&out), BTreeSet::from(["keep.txt".to_string()]));
}

#[test]
fn check_flag_validates_without_running() {
    let dir = scratch("check");
    let out = dir.join("out");
    let o = jumpflow(&write_config(&dir, MEANFIELD), &out, &["--check"], None);
    assert!(o.status.success());
    assert!(!out.exists());
    let o = jumpflow(
        &write_config(&dir, MEANFIELD),
        &out,
        &["--check", "--dt", "-1"],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = scratch("threads");
    let cfg = r#"
[model]
builtin = "cb(0.5)"

[model.mu]
kind = "exponential"
intensity = 2.0
rate = 1.5

[sim]
dt = 0.01
master_seed = 9

[task]
kind = "coupling"
x0 = 0.5
y0 = 1.5
t_grid = [0.5, 1.0, 2.0]
n_paths = 300
weighted = false
"#;
    let config = write_config(&dir, cfg);
    let (one, two) = (dir.join("one"), dir.join("two"));
    assert!(jumpflow(&config, &one, &[], Some("1")).status.success());
    assert!(jumpflow(&config, &two, &[], Some("2")).status.success());
    assert_eq!(listing(&one), listing(&two));
    for name in listing(&one) {
        if name == "manifest.json" {
            continue;
        }
        assert_eq!(
            fs::read(one.join(&name)).unwrap(),
            fs::read(two.join(&name)).unwrap(),
            "{name}"
        );
    }
    let (m1, m2) = (manifest(&one), manifest(&two));
    assert_eq!(m1["config_hash"], m2["config_hash"]);
    let o = jumpflow(&config, &dir.join("bad"), &[], Some("zero"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn manifest_lists_every_file() {
    let dir = scratch("manifest");
    let cfg = r#"
[model]
builtin = "cb(1)"

[sim]
dt = 0.01
t_end = 1.0
master_seed = 5

[task]
kind = "simulate"
x0 = 1.0
n_paths = 3
"#;
    let out = dir.join("out");
    let o = jumpflow(&write_config(&dir, cfg), &out, &["--paths", "4"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    let listed: BTreeSet<String> = m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert_eq!(listed, listing(&out));
    assert_eq!(listed.len(), 5);
    assert!(listed.contains("manifest.json"));
    assert_eq!(m["task"], "simulate");
    assert_eq!(m["overrides"]["paths"], 4);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
}

fn keys(text: &str) -> Vec<String> {
    let cfg = ExperimentConfig::parse(text).unwrap();
    validate(&cfg).into_iter().map(|d| d.key).collect()
}

#[test]
fn validation_examples() {
    let base = "[sim]\nmaster_seed = 1\n";
    let with = |model: &str, sim: &str, task: &str| {
        format!("{model}\n[sim]\nmaster_seed = 1\n{sim}\n{task}")
    };
    let simulate = "[task]\nkind = \"simulate\"\nx0 = 1.0\n";

    assert!(keys(&with("[model]\nbuiltin = \"cb(1)\"", "", simulate)).is_empty());
    assert_eq!(
        keys(&with("[model]\nbuiltin = \"gompertz(1)\"", "", simulate)),
        ["model.builtin"]
    );
    assert_eq!(
        keys(&with("[model]\nbuiltin = \"logistic(1)\"", "", simulate)),
        ["model.builtin"]
    );
    assert_eq!(
        keys(&with("[model]\nbuiltin = \"cb(1)\"", "dt = 0.0", simulate)),
        ["sim.dt"]
    );
    assert_eq!(
        keys(&with(
            "[model]\nbuiltin = \"cb(1)\"",
            "eps_jump = -1.0",
            simulate
        )),
        ["sim.eps_jump"]
    );
    assert_eq!(keys(&format!("{base}{simulate}")), ["model"]);
    assert_eq!(
        keys(&with("[model]\ngamma1 = \"x + s\"", "", simulate)),
        ["model.gamma1"]
    );
    assert_eq!(
        keys(&with("[model]\ngamma0 = \"x +\"", "", simulate)),
        ["model.gamma0"]
    );

    let atoms = "[model]\nbuiltin = \"cb(1)\"\n[model.mu]\nkind = \"atoms\"\nlocations = [1.0]\nmasses = [2.0]";
    let coupling = "[task]\nkind = \"coupling\"\nx0 = 1.0\ny0 = 2.0\nt_grid = [1.0, 2.0]\nn_paths = 10\nweighted = false\n";
    assert!(keys(&with(atoms, "", simulate)).is_empty());
    assert_eq!(keys(&with(atoms, "", coupling)), ["model.mu"]);

    let as_ext = |d: &str| {
        format!("[task]\nkind = \"criteria\"\n[[task.checks]]\ncheck = \"as_extinction\"\nrho = 0.1\nb_caps = [1.0]\nd = {d}\n")
    };
    let model = "[model]\nbuiltin = \"cb(1)\"";
    assert!(keys(&with(
        model,
        "",
        &as_ext("{ kind = \"constant\", value = 1.0 }")
    ))
    .is_empty());
    assert!(keys(&with(
        model,
        "",
        &as_ext("{ kind = \"expression\", expr = \"1 + s\", diverges = true }")
    ))
    .is_empty());
    assert_eq!(
        keys(&with(
            model,
            "",
            &as_ext("{ kind = \"expression\", expr = \"1 + s\" }")
        )),
        ["task.checks[0].d"]
    );

    let missing_seed = ExperimentConfig::parse(&format!("{model}\n{simulate}")).unwrap();
    assert_eq!(validate(&missing_seed)[0].key, "sim.master_seed");
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::from_file(&path).unwrap();
            assert!(
                validate(&cfg).is_empty(),
                "{}: {:?}",
                path.display(),
                validate(&cfg)
            );
            seen += 1;
        }
    }
    assert_eq!(seen, 7);
}
