use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn fso(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fso-sim"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FSO_SIM_OUT")
        .output()
        .expect("binary runs")
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn run_writes_the_four_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ls");
    let ls = scenario("ls.json");
    let o = fso(
        &["run", "--scenario", ls.to_str().unwrap(), "--seed", "42", "--out", out.to_str().unwrap()],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        listing(&out),
        ["allocator.csv", "energy.csv", "events.csv", "report.json"]
    );
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 42);
    assert_eq!(report["horizon"], 80);
    let events = fs::read_to_string(out.join("events.csv")).unwrap();
    assert!(events.starts_with("tick,kind,level,protocol,signature,levels_spanned,outcome,detail\n"));
}

#[test]
fn env_var_sets_the_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let target = tmp.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_fso-sim"))
        .args(["run", scenario("perm.json").to_str().unwrap(), "--dump-scores"])
        .current_dir(tmp.path())
        .env("FSO_SIM_OUT", &target)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(target.join("scores.csv").exists());
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn horizon_override_and_memoryless() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fso(
        &[
            "run",
            scenario("perm.json").to_str().unwrap(),
            "--horizon",
            "5",
            "--memoryless",
            "--dump-scores",
        ],
        tmp.path(),
    );
    assert!(o.status.success());
    let out = tmp.path().join("out");
    let energy = fs::read_to_string(out.join("energy.csv")).unwrap();
    assert_eq!(energy.lines().count(), 6);
    assert!(!out.join("scores.csv").exists());
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["memoryless"], true);
}

#[test]
fn bad_flags_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let ls = scenario("ls.json");
    for args in [
        vec!["run", "--no-such-flag"],
        vec!["frobnicate"],
        vec![],
        vec!["run", ls.to_str().unwrap(), "--seed", "minus-one"],
        vec!["run", ls.to_str().unwrap(), "--horizon", "0"],
        vec!["run", ls.to_str().unwrap(), "--jobs", "0"],
        vec!["run"],
        vec!["export-dot", ls.to_str().unwrap(), "--what", "sideways"],
        vec!["compare", ls.to_str().unwrap(), "--a", "bed", "--b", "ghost"],
    ] {
        let o = fso(&args, tmp.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(listing(tmp.path()).is_empty());
}

#[test]
fn help_exits_0() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fso(&["--help"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("son-space"));
}

#[test]
fn validate_failure_exits_2_and_names_the_violation() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fso(&["validate", scenario("broken.json").to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("node `a`") && err.contains("ghost"), "{err}");

    let o = fso(&["run", "--scenario", scenario("broken.json").to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = fso(&["validate", "missing.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(listing(tmp.path()).is_empty());
}

#[test]
fn validate_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["ls.json", "perm.json", "fig3.json"] {
        let o = fso(&["validate", "--scenario", scenario(name).to_str().unwrap()], tmp.path());
        assert!(o.status.success());
        assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok: "));
    }
    assert!(listing(tmp.path()).is_empty());
}

fn deep_scenario(levels: usize) -> Value {
    let levels: Vec<Value> = (0..levels)
        .map(|i| {
            let mut l = json!({"members": [{"id": format!("n{i}")}]});
            if i > 0 {
                let host = (i + 1).min(levels - 1);
                l["canon"] = json!(format!("n{host}"));
            }
            l
        })
        .collect();
    json!({"universe": ["f"], "hierarchy": {"levels": levels}, "horizon": 2})
}

#[test]
fn more_than_sixteen_levels_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    for (levels, code) in [(16, 0), (17, 2)] {
        let p = tmp.path().join(format!("deep{levels}.json"));
        fs::write(&p, deep_scenario(levels).to_string()).unwrap();
        let o = fso(&["validate", p.to_str().unwrap()], tmp.path());
        assert_eq!(o.status.code(), Some(code), "{levels} levels");
    }
}

#[test]
fn son_space_prints_count_and_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fso(
        &["son-space", "--scenario", scenario("fig3.json").to_str().unwrap(), "--dot"],
        tmp.path(),
    );
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("count: 9"), "{stdout}");
    let csv = fs::read_to_string(tmp.path().join("out/son_space.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("index,r0[0],r1[0],r2[0],r3[0],r4[0]"));
    assert_eq!(lines.count(), 9);
    let dot = fs::read_to_string(tmp.path().join("out/son_space.dot")).unwrap();
    assert_eq!(dot.lines().filter(|l| l.contains(" -- ")).count(), 18);
}

#[test]
fn export_dot_hierarchy_and_son_space() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fso(&["export-dot", scenario("ls.json").to_str().unwrap()], tmp.path());
    assert!(o.status.success());
    let dot = String::from_utf8_lossy(&o.stdout);
    assert!(dot.starts_with("digraph hierarchy {"));
    assert!(dot.contains("\"pir_bed\" -> \"bedroom\";"));
    assert!(!dot.contains("meter\" -> \"lamp_bed"));

    let file = tmp.path().join("space.dot");
    let o = fso(
        &[
            "export-dot",
            scenario("fig3.json").to_str().unwrap(),
            "--what",
            "son-space",
            "--output",
            file.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let dot = fs::read_to_string(file).unwrap();
    assert!(dot.starts_with("graph son_space {"));
}

#[test]
fn compare_prints_json() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fso(
        &["compare", scenario("ls.json").to_str().unwrap(), "--a", "bedroom", "--b", "kitchen"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["a"], "bedroom");
    assert_eq!(v["analytics"], "Equal");
    assert_eq!(v["children"].as_array().unwrap().len(), 4);
}

#[test]
fn several_scenarios_get_their_own_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fso(
        &[
            "run",
            "--scenario",
            scenario("ls.json").to_str().unwrap(),
            "--scenario",
            scenario("perm.json").to_str().unwrap(),
            "--jobs",
            "2",
        ],
        tmp.path(),
    );
    assert!(o.status.success());
    assert_eq!(listing(&tmp.path().join("out")), ["ls", "perm"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    let names: Vec<&str> = stdout.lines().map(|l| l.split(':').next().unwrap()).collect();
    assert_eq!(names, ["ls", "perm"]);
}
