use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_delaylab"))
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn run(cmd: &str, config: &Path, out: &Path) -> Output {
    bin().args([cmd, "--config"]).arg(config).arg("--out").arg(out).output().unwrap()
}

fn corridor(length: usize) -> Value {
    json!({"name": "corridor", "params": {"length": length, "step_cost": 0.0, "goal_reward": 1.0, "gamma": 0.9}})
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_ad_vi_on_corridor_reports_small_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"env": corridor(3), "delta": 2, "delta_tau": 0, "algo": "ad-vi"});
    let o = run("solve", &write_config(dir.path(), "c.json", &cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = read_json(&dir.path().join("out/verification.json"));
    assert!(report["results"][0]["deviation"].as_f64().unwrap() <= 1e-8);
    let q = std::fs::read_to_string(dir.path().join("out/qtable_ad-vi_d2_dt0.csv")).unwrap();
    assert!(q.starts_with("# delaylab qtable v1\naug_index,action,value\n"));
    assert_eq!(q.lines().count(), 2 + 3 * 4 * 2);
}

#[test]
fn solve_rejects_delta_tau_above_delta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"env": corridor(3), "delta": 1, "delta_tau": 2, "algo": "ad-vi"});
    let o = run("solve", &write_config(dir.path(), "c.json", &cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("exceeds delta"));
}

#[test]
fn solve_refuses_oversized_augmented_space() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"env": corridor(7), "delta": 30, "delta_tau": 0, "algo": "ad-vi"});
    let o = run("solve", &write_config(dir.path(), "c.json", &cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("augmented space too large"), "{}", stderr(&o));
}

#[test]
fn budget_can_be_lowered_through_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"env": corridor(5), "delta": 4, "algo": "a-vi"});
    let path = write_config(dir.path(), "c.json", &cfg);
    let o = bin()
        .args(["solve", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("out"))
        .env("DELAYLAB_BUDGET", "10")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("augmented space too large"));
}

#[test]
fn solve_flags_fixed_point_failures_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // the sticky MDP whose optimal actions differ between the two states
    let mdp = json!({
        "num_states": 2, "num_actions": 2, "gamma": 0.9,
        "transition": [[[0.8, 0.2], [0.8, 0.2]], [[0.2, 0.8], [0.2, 0.8]]],
        "reward": [[0.0, 0.5], [1.0, 0.0]],
        "initial_dist": [1.0, 0.0]
    });
    std::fs::write(dir.path().join("mdp.json"), mdp.to_string()).unwrap();
    let cfg = json!({"env": {"name": "file", "params": {"path": "mdp.json"}}, "delta": 2, "delta_tau": 0, "algo": "ad-vi"});
    let o = run("solve", &write_config(dir.path(), "c.json", &cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let report = read_json(&dir.path().join("out/verification.json"));
    assert_eq!(report["all_passed"], json!(false));
}

#[test]
fn train_writes_one_csv_per_seed_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "env": corridor(4), "delta": 2, "delta_tau": 1, "algo": "ad-ql",
        "learner": {"total_steps": 2000, "eval_every": 200}, "seeds": [1, 2, 3]
    });
    let out = dir.path().join("out");
    let o = run("train", &write_config(dir.path(), "c.json", &cfg), &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let runs: Vec<_> = std::fs::read_dir(out.join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 3);
    for seed in [1, 2, 3] {
        let path = out.join(format!("runs/ad-ql_d2_dt1_s{seed}.csv"));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# delaylab run v1\nstep,episode,return,epsilon,algo,delta,delta_tau,seed\n"));
        let records = delaylab::learners::read_records_csv(text.as_bytes()).unwrap();
        assert!(!records.is_empty());
        assert!(records.iter().all(|r| r.seed == seed && r.delta_tau == Some(1)));
    }
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("# delaylab summary v1\n"));
    assert_eq!(summary.lines().count(), 2 + 3);
}

#[test]
fn bpql_rejects_nonzero_delta_tau() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"env": corridor(4), "delta": 3, "delta_tau": 3, "algo": "bpql"});
    let o = run("train", &write_config(dir.path(), "c.json", &cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bpql fixes delta_tau=0"));
}

#[test]
fn ad_algorithms_require_delta_tau() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"env": corridor(4), "delta": 3, "algo": "ad-ql"});
    let o = run("train", &write_config(dir.path(), "c.json", &cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("requires delta_tau"));
}

#[test]
fn bench_needs_two_algorithms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"env": corridor(4), "delta": 2, "algo": ["a-ql"]});
    let o = run("bench", &write_config(dir.path(), "c.json", &cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least 2"));
}

#[test]
fn malformed_configs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(run("solve", &path, &dir.path().join("out")).status.code(), Some(1));
    let unknown = write_config(dir.path(), "u.json", &json!({"env": corridor(3), "delta": 1, "algo": "a-vi", "typo": 1}));
    assert_eq!(run("solve", &unknown, &dir.path().join("out")).status.code(), Some(1));
    let missing = dir.path().join("missing.json");
    assert_eq!(run("train", &missing, &dir.path().join("out")).status.code(), Some(1));
    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn analyze_suites_pass_on_their_reference_instances() {
    let dir = tempfile::tempdir().unwrap();
    let random = json!({"name": "random", "params": {"num_states": 4, "num_actions": 2, "branching": 2, "reward_scale": 1.0, "gamma": 0.9, "seed": 0}});
    let cases = [
        ("lemma51", json!({"env": random, "delta": 2, "delta_tau": [0, 1], "suite": "lemma51", "seeds": [0, 1, 2]})),
        ("bounds", json!({"env": corridor(4), "delta": 2, "delta_tau": [0, 1], "suite": "bounds", "seeds": [0, 1]})),
        ("metrics", json!({"suite": "metrics"})),
        ("gaussian", json!({"suite": "gaussian", "seeds": [3],
            "gaussian": {"l_pi": 1.0, "l_q": 1.0, "sigma": 1.0, "gamma": 0.9, "delta": 4, "delta_tau": 1, "rollouts": 100000}})),
    ];
    for (suite, cfg) in cases {
        let out = dir.path().join(suite);
        let o = run("analyze", &write_config(dir.path(), &format!("{suite}.json"), &cfg), &out);
        assert_eq!(o.status.code(), Some(0), "{suite}: {}", stderr(&o));
        let report = read_json(&out.join(format!("report_{suite}.json")));
        assert_eq!(report["all_hold"], json!(true));
        assert!(report["checks"].as_array().unwrap().iter().all(|c| c["holds"] == json!(true)));
        if suite == "gaussian" {
            let closed = report["values"]["closed_form"].as_f64().unwrap();
            assert!((closed - 7.97885).abs() < 1e-5);
        }
        if suite == "lemma51" {
            assert!(report["max_deviation"].as_f64().unwrap() <= 1e-7);
        }
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical_for_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let noisy = json!({"name": "noisy-corridor", "params": {"length": 5, "step_cost": 0.0, "goal_reward": 1.0, "gamma": 0.9, "noise_prob": 0.2}});
    let learner = json!({"total_steps": 3000, "eval_every": 300, "eval_episodes": 3});
    let cases = [
        ("solve", json!({"env": noisy, "delta": 2, "delta_tau": [0, 2], "algo": ["a-vi", "ad-vi", "ad-spi"]})),
        ("train", json!({"env": noisy, "delta": 3, "delta_tau": [0, 2], "algo": ["ad-ql", "a-ql"], "learner": learner, "seeds": [4, 5]})),
        ("bench", json!({"env": noisy, "delta": 3, "algo": ["a-ql", "bpql", "ad-ql(1)"], "learner": learner, "seeds": [1, 2, 3]})),
        ("analyze", json!({"suite": "gaussian", "seeds": [9],
            "gaussian": {"l_pi": 1.0, "l_q": 1.0, "sigma": 1.0, "gamma": 0.9, "delta": 2, "delta_tau": 0, "rollouts": 5000}})),
    ];
    for (cmd, cfg) in cases {
        let path = write_config(dir.path(), &format!("{cmd}.json"), &cfg);
        let a = dir.path().join(format!("{cmd}_a"));
        let b = dir.path().join(format!("{cmd}_b"));
        assert_eq!(run(cmd, &path, &a).status.code(), Some(0));
        let o = bin().args([cmd, "--jobs", "3", "--config"]).arg(&path).arg("--out").arg(&b).output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let (sa, sb) = (snapshot(&a), snapshot(&b));
        assert!(!sa.is_empty());
        assert_eq!(sa, sb, "{cmd} outputs differ");
    }
}
