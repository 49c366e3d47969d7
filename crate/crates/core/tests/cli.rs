use std::path::Path;
use std::process::{Command, Output};

use rsmp::instances::{check_promises, Instance};

fn rsmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsmp"))
        .args(args)
        .env_remove("RSMP_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_instance(dir: &Path, name: &str, inst: &Instance) -> String {
    let p = dir.join(name);
    std::fs::write(&p, inst.to_json()).unwrap();
    p.to_str().unwrap().to_string()
}

fn sample_one(dir: &Path, n: &str, seed: &str) -> String {
    let out = dir.join(format!("s{n}_{seed}"));
    let o = rsmp(&["sample", "--n", n, "--promised", "--seed", seed, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("instance_0000.json").to_str().unwrap().to_string()
}

#[test]
fn sample_writes_promised_instances_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = rsmp(&["sample", "--n", "64", "--count", "10", "--promised", "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o).lines().count(), 10);
    }
    for k in 0..10 {
        let name = format!("instance_{k:04}.json");
        let bytes = std::fs::read(a.join(&name)).unwrap();
        assert_eq!(bytes, std::fs::read(b.join(&name)).unwrap());
        let inst = Instance::from_json(&bytes).unwrap();
        assert_eq!(inst.n(), 64);
        assert!(check_promises(&inst).ok);
    }
}

#[test]
fn sample_rejects_non_power_of_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = rsmp(&["sample", "--n", "63", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("power of two"));
}

#[test]
fn exact_backend_runs_small_and_refuses_large() {
    let dir = tempfile::tempdir().unwrap();
    let small = sample_one(dir.path(), "4", "1");
    let o = rsmp(&["run", "--instance", &small, "--backend", "exact", "--trials", "3", "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 3);
    let large = sample_one(dir.path(), "64", "1");
    let o = rsmp(&["run", "--instance", &large, "--backend", "exact", "--trials", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("n <= 16"));
}

#[test]
fn trial_records_have_the_documented_fields() {
    let dir = tempfile::tempdir().unwrap();
    let inst = sample_one(dir.path(), "16", "3");
    let o = rsmp(&["run", "--instance", &inst, "--trials", "2", "--seed", "4"]);
    assert!(o.status.success());
    for line in stdout(&o).lines() {
        assert!(line.starts_with("{\"n\":16,\"seed\":"), "{line}");
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["R", "answer", "backend", "bits", "epr", "n", "ok", "seed"]);
        assert_eq!(v["backend"], "analytic");
        let r = v["R"].as_u64().unwrap();
        assert_eq!(v["bits"].as_u64().unwrap(), 2 * r * (5 + 10));
        assert_eq!(v["epr"].as_u64().unwrap(), r * 10);
    }
    let summary: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(summary["trials"], 2);
}

#[test]
fn degenerate_instance_reports_zero_success() {
    // Rows and columns live in disjoint halves of the universe: every cell is empty.
    let n = 4;
    let x: Vec<Vec<u32>> = (0..n).map(|i| (0..4).map(|e| (i * 4 + e) as u32).collect()).collect();
    let y: Vec<Vec<u32>> = (0..n).map(|j| (0..4).map(|e| (32 + j * 4 + e) as u32).collect()).collect();
    let inst = Instance::new(n, x, y).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = write_instance(dir.path(), "empty.json", &inst);
    let o = rsmp(&["run", "--instance", &path, "--reps", "20", "--trials", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for line in stdout(&o).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["answer"], serde_json::json!({"abstain": true}));
        assert_eq!(v["ok"], false);
    }
    let summary: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(summary["rate"], 0.0);
    // Without 2-cells there is no usable-triple rate to size R from.
    let o = rsmp(&["run", "--instance", &path, "--reps", "auto"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_instance_is_a_data_error_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, br#"{"n":2,"x":[[0,1],[2,99]],"y":[[0,1],[2,3]]}"#).unwrap();
    let o = rsmp(&["check", "--instance", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("x[1][1]"), "{}", stderr(&o));
}

#[test]
fn check_reports_promises_and_answers() {
    let dir = tempfile::tempdir().unwrap();
    let inst_path = sample_one(dir.path(), "16", "5");
    let inst = Instance::from_json(&std::fs::read(&inst_path).unwrap()).unwrap();
    let idx = inst.index();
    let cell = idx.cells.iter().find(|c| c.elems.len() == 2).unwrap();
    let s = (cell.elems[0] ^ cell.elems[1]) as u64;
    let c = (1..1024u64).find(|&c| (c & s).count_ones().is_multiple_of(2)).unwrap();
    let other = idx.cells.iter().find(|c| c.elems.len() != 2).unwrap();
    let answer = format!(r#"{{"triples":[[{},{},{c}],[{},{},1]]}}"#, cell.i, cell.j, other.i, other.j);
    let ans_path = dir.path().join("ans.json");
    std::fs::write(&ans_path, answer).unwrap();
    let p11_path = dir.path().join("p11.json");
    std::fs::write(&p11_path, format!(r#"{{"c":{c}}}"#)).unwrap();
    let o = rsmp(&[
        "check",
        "--instance",
        &inst_path,
        "--answer",
        ans_path.to_str().unwrap(),
        "--p11",
        p11_path.to_str().unwrap(),
        "--row",
        &cell.i.to_string(),
        "--col",
        &cell.j.to_string(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["promises"]["ok"], true);
    assert_eq!(v["answer_ok"], true);
    assert_eq!(v["p11_ok"], true);
}

#[test]
fn xcheck_oracle_run_and_negative_control() {
    let o = rsmp(&["xcheck", "--n", "4", "--instances", "3", "--tolerance", "1e-9", "--seed", "8"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.ends_with(" pass")).count(), 3);
    let o = rsmp(&["xcheck", "--n", "4", "--instances", "3", "--seed", "8", "--perturb", "0.01"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("max_tv=1.000e-2"), "{}", stdout(&o));
    let o = rsmp(&["xcheck", "--n", "32"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn reruns_and_thread_counts_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let inst = sample_one(dir.path(), "16", "9");
    let base = rsmp(&["run", "--instance", &inst, "--trials", "12", "--seed", "10"]);
    let again = rsmp(&["run", "--instance", &inst, "--trials", "12", "--seed", "10"]);
    let jobs = rsmp(&["run", "--instance", &inst, "--trials", "12", "--seed", "10", "--jobs", "4"]);
    assert_eq!(base.stdout, again.stdout);
    assert_eq!(base.stdout, jobs.stdout);
    assert_eq!(base.stderr, jobs.stderr);
    let g1 = rsmp(&["game", "--n", "16", "--strategy", "entangled", "--trials", "16", "--seed", "3"]);
    let g2 = rsmp(&["game", "--n", "16", "--strategy", "entangled", "--trials", "16", "--seed", "3", "--jobs", "3"]);
    assert!(g1.status.success());
    assert_eq!(g1.stdout, g2.stdout);
}

#[test]
fn seed_falls_back_to_environment() {
    let with_flag = rsmp(&["game", "--n", "16", "--strategy", "random-guess", "--trials", "50", "--seed", "99"]);
    let with_env = Command::new(env!("CARGO_BIN_EXE_rsmp"))
        .args(["game", "--n", "16", "--strategy", "random-guess", "--trials", "50"])
        .env("RSMP_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(with_flag.stdout, with_env.stdout);
    assert!(stdout(&with_env).trim_end().ends_with(",99"));
}

#[test]
fn config_fills_gaps_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.conf");
    std::fs::write(&cfg, "# experiment\nstrategy = random-guess\ntrials = 40\nseed = 5\nno_header = true\n").unwrap();
    let o = rsmp(&["game", "--n", "16", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1);
    assert!(stdout(&o).starts_with("random_guess,16,40,"));
    let o = rsmp(&["game", "--n", "16", "--config", cfg.to_str().unwrap(), "--trials", "7", "--seed", "6"]);
    assert!(stdout(&o).starts_with("random_guess,16,7,"));
    assert!(stdout(&o).trim_end().ends_with(",6"));
    std::fs::write(&cfg, "trials 40\n").unwrap();
    let o = rsmp(&["game", "--n", "16", "--strategy", "entangled", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&cfg, "colour = blue\n").unwrap();
    let o = rsmp(&["game", "--n", "16", "--strategy", "entangled", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_matches_run_summary() {
    let dir = tempfile::tempdir().unwrap();
    let inst = sample_one(dir.path(), "16", "11");
    let log = dir.path().join("trials.jsonl");
    let o = rsmp(&["run", "--instance", &inst, "--trials", "25", "--seed", "12", "--out", log.to_str().unwrap()]);
    assert!(o.status.success());
    let r = rsmp(&["report", "--input", log.to_str().unwrap()]);
    assert!(r.status.success());
    assert_eq!(stdout(&o), stdout(&r));
    std::fs::write(&log, "{\"ok\": 3}\n").unwrap();
    assert_eq!(rsmp(&["report", "--input", log.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn game_rows_follow_the_csv_interface() {
    let o = rsmp(&["game", "--n", "16", "--strategy", "oneway-prefix", "--trials", "30", "--seed", "1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "strategy,n,trials,wins,rate,ci_lo,ci_hi,mean_bits,seed");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 9);
    assert_eq!(row[0], "oneway_prefix");
    // Default budget ceil(16^(1/4)) = 2 bits cannot carry Bob's reply.
    assert_eq!(row[3], "0");
    assert!(stderr(&o).contains("forfeits: 30 of 30"));
}
