use std::path::Path;
use std::process::{Command, Output};

fn starmec(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_starmec"))
        .args(args)
        .current_dir(dir)
        .env("STARMEC_THREADS", "1")
        .output()
        .expect("binary runs")
}

const QUICK: [&str; 6] = ["--slots", "10", "--eval-episodes", "1", "--out", "out"];

#[test]
fn train_writes_one_row_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--episodes", "5"];
    args.extend(QUICK);
    let out = starmec(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/episodes.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "episode,scheme,cumulative_reward,energy_J,mean_backlog_bits,violations"
    );
    assert_eq!(lines.count(), 5);
    assert!(dir.path().join("out/checkpoint.json").exists());
    assert!(!dir.path().join("out/episodes.svg").exists());
}

#[test]
fn missing_scenario_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = starmec(&["train", "--scenario", "no_such_file.toml"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_file.toml"));
}

#[test]
fn manifest_records_the_agent() {
    let dir = tempfile::tempdir().unwrap();
    for agent in ["dqn", "mab"] {
        let mut args = vec!["train", "--episodes", "1", "--agent", agent];
        args.extend(QUICK);
        assert!(starmec(&args, dir.path()).status.success());
        let text = std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
        let m: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(m["config"]["agent"], agent);
        assert_eq!(m["status"], "completed");
        assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn resume_continues_the_episode_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--episodes", "2"];
    args.extend(QUICK);
    assert!(starmec(&args, dir.path()).status.success());
    let mut args = vec!["train", "--episodes", "4", "--resume"];
    args.extend(QUICK);
    let out = starmec(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/episodes.csv")).unwrap();
    let episodes: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(episodes, ["0", "1", "2", "3"]);
}

#[test]
fn trace_and_channel_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--episodes", "1", "--trace-sfp", "--dump-channels", "--plot"];
    args.extend(QUICK);
    assert!(starmec(&args, dir.path()).status.success());
    let trace = std::fs::read_to_string(dir.path().join("out/sfp_trace.csv")).unwrap();
    assert!(trace.starts_with("episode,slot,iteration,energy_J"));
    let channels = std::fs::read_to_string(dir.path().join("out/channels.csv")).unwrap();
    // One evaluation episode, 10 slots, 6 users.
    assert_eq!(channels.lines().count(), 1 + 10 * 6);
    assert!(dir.path().join("out/episodes.svg").exists());
}

#[test]
fn sweep_writes_csv_and_optional_plot() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "sweep", "--sweep", "elements", "--grid", "4,8", "--seeds", "2", "--schemes", "proposed,p_star", "--episodes", "1",
    ];
    args.extend(QUICK);
    let out = starmec(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/sweep_elements.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "scheme,value,seed,energy_J,reward,mean_backlog_bits,error");
    assert_eq!(lines.count(), 8);
    assert!(!dir.path().join("out/sweep_elements.svg").exists());

    args.push("--plot");
    assert!(starmec(&args, dir.path()).status.success());
    let svg = std::fs::read_to_string(dir.path().join("out/sweep_elements.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn input_size_sweep_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "sweep", "--sweep", "input_size", "--grid", "5e4,1e5", "--seeds", "1", "--schemes", "proposed", "--episodes", "1",
    ];
    args.extend(QUICK);
    let out = starmec(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/sweep_input_size.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn unknown_sweep_variable_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = starmec(&["sweep", "--sweep", "colour", "--grid", "1"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown sweep variable"));
}

#[test]
fn verify_reports_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = starmec(&["verify"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 6);
    assert_eq!(text.matches("PASS").count(), text.lines().count());
}

#[test]
fn verify_runs_one_named_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = starmec(&["verify", "--check", "sfp_grid"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("sfp_grid"));
    assert!(!starmec(&["verify", "--check", "nope"], dir.path()).status.success());
}
