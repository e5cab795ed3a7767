use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pollflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pollflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path) -> String {
    let out = pollflow(&["synth", "--out", dir.to_str().unwrap(), "--replications", "3", "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("config.json").to_str().unwrap().to_string()
}

#[test]
fn synth_writes_a_loadable_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path());
    let sites = fs::read_to_string(dir.path().join("sites.csv")).unwrap();
    assert_eq!(sites.lines().count(), 14);
    assert!(sites.starts_with("id,name,lat,lon,district,kind"));
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(&config).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 5);
    assert_eq!(cfg["replications"], 3);
}

#[test]
fn compare_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path());
    let runs = ["a", "b"].map(|name| dir.path().join(name));
    for out in &runs {
        let o = pollflow(&["compare", "--config", &config, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("machine-days"));
    }
    for name in ["histogram.csv", "utilization.csv", "resources.csv", "hotspots.csv", "plan.json", "ledger.ndjson"] {
        let a = fs::read(runs[0].join(name)).unwrap();
        let b = fs::read(runs[1].join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }

    let other = dir.path().join("c");
    let o = pollflow(&["compare", "--config", &config, "--seed", "6", "--out", other.to_str().unwrap()]);
    assert!(o.status.success());
    assert_ne!(
        fs::read(runs[0].join("ledger.ndjson")).unwrap(),
        fs::read(other.join("ledger.ndjson")).unwrap()
    );
}

#[test]
fn plan_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path());
    let out = dir.path().join("night1");
    let o = pollflow(&["plan", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let plan = out.join("plan.json");
    let o = pollflow(&["validate", "--config", &config, "--plan", plan.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("plan is valid"));

    // Drop one assignment: the plan no longer covers every open location-day.
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&plan).unwrap()).unwrap();
    v["assignments"].as_array_mut().unwrap().pop();
    let broken = dir.path().join("broken.json");
    fs::write(&broken, v.to_string()).unwrap();
    let o = pollflow(&["validate", "--config", &config, "--plan", broken.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("missing assignment"));
}

#[test]
fn plan_from_observed_day_and_inventory() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path());
    let mut observed = String::from("location,day,hour,count\n");
    for loc in ["D1L1", "D1L2", "D1L3", "D2L1", "D2L2", "D2L3", "D3L1", "D3L2"] {
        for hour in 1..=12 {
            observed.push_str(&format!("{loc},1,{hour},40\n"));
        }
    }
    fs::write(dir.path().join("observed.csv"), observed).unwrap();
    let o = pollflow(&[
        "plan",
        "--config",
        &config,
        "--observed",
        dir.path().join("observed.csv").to_str().unwrap(),
        "--out",
        dir.path().join("night2").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("night 2:"));
    let plan: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("night2/plan.json")).unwrap()).unwrap();
    assert!(plan["assignments"].as_array().unwrap().iter().all(|a| a["day"].as_u64().unwrap() >= 2));

    fs::write(dir.path().join("inventory.csv"), "site,pollpads,bmds,scanners\nW,0,0,0\nD1L1,0,1,0\n").unwrap();
    let o = pollflow(&[
        "plan",
        "--config",
        &config,
        "--inventory",
        dir.path().join("inventory.csv").to_str().unwrap(),
        "--out",
        dir.path().join("starved").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_reports_json() {
    let o = pollflow(&["simulate", "--counts", "10,0,5", "--combo", "1,2,1", "--replications", "4", "--seed", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["voters"], 60);
    assert_eq!(v["combo"], "(1,2,1)");
    assert!(v["robust_wait_min"].as_f64().unwrap() >= 0.0);
    let again = pollflow(&["simulate", "--counts", "10,0,5", "--combo", "1,2,1", "--replications", "4", "--seed", "1"]);
    assert_eq!(o.stdout, again.stdout);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path());
    // Unreadable input.
    let o = pollflow(&["plan", "--config", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    // No combination can reach 99% utilization, so every slot is empty.
    let o = pollflow(&["plan", "--config", &config, "--band", "0.99:1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    // Bad arguments.
    assert_eq!(pollflow(&["simulate", "--rates", "x", "--combo", "1,1,1"]).status.code(), Some(2));
    assert_eq!(pollflow(&["plan"]).status.code(), Some(2));
    assert_eq!(pollflow(&["compare", "--config", &config, "--epsilon", "-1"]).status.code(), Some(2));
}
