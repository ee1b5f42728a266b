use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use fids_core::metrics::{parse_matrix, parse_rounds_csv, MetricSummary, ROUNDS_CSV_HEADER};

const SMALL_GRID: &str = "depths = 2,3\niterations = 10,20\nlearning_rates = 0.5,1.0\n";

fn fids(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fids"));
    cmd.args(args).env_remove("FIDS_CONFIG");
    cmd
}

fn run(args: &[&str]) -> Output {
    fids(args).output().expect("spawn fids")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "fids {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small-grid config into `dir` and returns its path.
fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("fids.conf");
    fs::write(&path, format!("# test settings\n{SMALL_GRID}seed = 4\nn_trees = 20\n{extra}")).unwrap();
    path
}

/// Generated blobs, prepared into `dir/out`.
fn prepared(dir: &Path, per_class: usize) -> (PathBuf, PathBuf) {
    let data = dir.join("data.csv");
    let out = dir.join("out");
    let cfg = small_config(dir, "");
    ok(&["generate", "--classes", "3", "--per-class", &per_class.to_string(), "--seed", "4", "--output", s(&data)]);
    ok(&["prepare", "--config", s(&cfg), "--dataset-path", s(&data), "--output-dir", s(&out)]);
    (cfg, out)
}

#[test]
fn prepare_is_byte_for_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    ok(&["generate", "--classes", "3", "--per-class", "60", "--seed", "2", "--output", s(&data)]);
    let files = ["part1.csv", "part2.csv", "part_server.csv", "prepare_report.txt", "labels.txt"];
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        ok(&[
            "prepare", "--dataset-path", s(&data), "--output-dir", s(&out), "--seed", "8",
            "--smote-targets", "class_1:90", "--n-trees", "20",
        ]);
        runs.push(files.map(|f| fs::read(out.join(f)).unwrap()));
    }
    assert_eq!(runs[0], runs[1]);
    let report = String::from_utf8(runs[0][3].clone()).unwrap();
    assert!(report.contains("[after_smote]\nclass_0=60\nclass_1=90\nclass_2=60\n"), "{report}");
    assert!(report.contains("class_1_removed=4"), "{report}");
}

#[test]
fn without_smote_or_pruning_parts_reassemble_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let out = dir.path().join("out");
    ok(&["generate", "--classes", "4", "--per-class", "25", "--seed", "3", "--output", s(&data)]);
    ok(&["prepare", "--dataset-path", s(&data), "--output-dir", s(&out), "--contamination", "0"]);
    let body = |p: PathBuf| -> Vec<String> { fs::read_to_string(p).unwrap().lines().skip(1).map(String::from).collect() };
    let mut input = body(data);
    let mut parts: Vec<String> = ["part1.csv", "part2.csv", "part_server.csv"]
        .iter()
        .flat_map(|f| body(out.join(f)))
        .collect();
    input.sort();
    parts.sort();
    assert_eq!(input, parts);
}

#[test]
fn before_histogram_matches_the_reference_class_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("traffic.csv");
    let out = dir.path().join("out");
    ok(&["generate", "--seed", "1", "--output", s(&data)]);
    ok(&[
        "prepare", "--dataset-path", s(&data), "--output-dir", s(&out), "--labels", "cic-ids2017",
        "--contamination", "0",
    ]);
    let report = fs::read_to_string(out.join("prepare_report.txt")).unwrap();
    let before = report.split("[before]\n").nth(1).unwrap();
    let expected = "Benign=22728\nBot=1966\nBrute Force=2767\nDoS=18984\nInfiltration=36\nPort Scan=7946\nWeb Attack=2180\ntotal=56607\n";
    assert!(before.starts_with(expected), "{before}");
}

#[test]
fn simulate_writes_rounds_and_models() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = prepared(dir.path(), 60);
    let stdout = ok(&["simulate", "--config", s(&cfg), "--output-dir", s(&out), "--max-rounds", "1"]);
    let csv = fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert_eq!(stdout, csv);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("device,round,accuracy,precision,recall,kappa,stop_reason"));
    assert_eq!(ROUNDS_CSV_HEADER, "device,round,accuracy,precision,recall,kappa,stop_reason");
    let rows = parse_rounds_csv(&csv).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.stop_reason == "max_rounds"));
    for f in ["edge1.fids", "edge2.fids", "server.fids", "global.fids"] {
        assert!(out.join("final_models").join(f).is_file(), "{f}");
    }
}

#[test]
fn tcp_and_in_process_runs_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = prepared(dir.path(), 50);
    let a = ok(&["simulate", "--config", s(&cfg), "--output-dir", s(&out), "--max-rounds", "2"]);
    let b = ok(&[
        "simulate", "--config", s(&cfg), "--output-dir", s(&out), "--max-rounds", "2", "--transport", "tcp",
        "--port", "0",
    ]);
    assert_eq!(a, b);
}

#[test]
fn config_file_env_var_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = prepared(dir.path(), 40);
    let cfg = small_config(dir.path(), &format!("max_rounds = 2\noutput_dir = {}\n", out.display()));
    let from_env = fids(&["simulate"]).env("FIDS_CONFIG", &cfg).output().unwrap();
    assert!(from_env.status.success(), "{}", String::from_utf8_lossy(&from_env.stderr));
    assert_eq!(parse_rounds_csv(&String::from_utf8(from_env.stdout).unwrap()).unwrap().len(), 6);
    let overridden = ok(&["simulate", "--config", s(&cfg), "--max-rounds", "1"]);
    assert_eq!(parse_rounds_csv(&overridden).unwrap().len(), 3);
}

#[test]
fn report_is_deterministic_and_groups_by_device() {
    let dir = tempfile::tempdir().unwrap();
    let rounds = dir.path().join("rounds.csv");
    fs::write(
        &rounds,
        "device,round,accuracy,precision,recall,kappa,stop_reason\n\
         edge1,1,0.965940,0.968900,0.968900,0.960000,max_rounds\n\
         edge2,1,0.962510,0.965300,0.960000,0.955900,max_rounds\n\
         server,1,0.959990,0.960000,0.960000,0.950000,max_rounds\n",
    )
    .unwrap();
    let a = dir.path().join("a.svg");
    let b = dir.path().join("b.svg");
    let table = ok(&["report", "--rounds", s(&rounds), "--output", s(&a)]);
    ok(&["report", "--rounds", s(&rounds), "--output", s(&b)]);
    let svg = fs::read_to_string(&a).unwrap();
    assert_eq!(svg, fs::read_to_string(&b).unwrap());
    assert!(svg.contains(r#"width="800" height="480""#));
    for device in ["edge1 (round 1)", "edge2 (round 1)", "server (round 1)"] {
        assert_eq!(svg.matches(device).count(), 1, "{device}");
    }
    assert!(svg.contains(">96.59%<"));
    assert!(table.contains("96.594"), "{table}");

    fs::write(&rounds, "device,round,accuracy,precision,recall,kappa,stop_reason\nedge1,1,,,,,max_rounds\n").unwrap();
    assert_eq!(code(&["report", "--rounds", s(&rounds), "--output", s(&a)]), 2);
    fs::write(&rounds, "device,round,accuracy,precision,recall,kappa,stop_reason\n").unwrap();
    assert_eq!(code(&["report", "--rounds", s(&rounds), "--output", s(&a)]), 2);
}

/// Two classes a hundred units apart with integer jitter.
fn separable_csv(path: &Path) {
    let mut text = String::from("x,y,Label\n");
    for i in 0..60 {
        let (dx, dy) = (i % 7, i / 7);
        text.push_str(&format!("{dx},{dy},near\n{},{},far\n", 100 + dx, 100 + dy));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn evaluate_prints_metrics_and_a_reparsable_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sep.csv");
    let out = dir.path().join("out");
    separable_csv(&data);
    let cfg = small_config(dir.path(), "contamination = 0\n");
    ok(&["prepare", "--config", s(&cfg), "--dataset-path", s(&data), "--output-dir", s(&out)]);
    ok(&["simulate", "--config", s(&cfg), "--output-dir", s(&out), "--max-rounds", "1"]);
    let models = out.join("final_models");
    let printed = ok(&["evaluate", "--model", s(&models.join("edge1.fids")), "--test", s(&out.join("part1.csv"))]);
    assert!(printed.contains("accuracy_percent=100.000\n"), "{printed}");

    let printed = ok(&["evaluate", "--model", s(&models.join("global.fids")), "--test", s(&data)]);
    let matrix = parse_matrix(&printed[printed.find("truth\\pred").unwrap()..]).unwrap();
    assert_eq!(matrix.total(), 120);
    assert!(printed.starts_with("rows=120\n"));
    assert!(printed.contains(&MetricSummary::from_matrix(&matrix).unwrap().to_kv()), "{printed}");
}

#[test]
fn truncated_or_mismatched_models_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = prepared(dir.path(), 40);
    ok(&["simulate", "--config", s(&cfg), "--output-dir", s(&out), "--max-rounds", "1"]);
    let model = fs::read(out.join("final_models/edge1.fids")).unwrap();
    let cut = dir.path().join("cut.fids");
    fs::write(&cut, &model[..model.len() / 2]).unwrap();
    let res = run(&["evaluate", "--model", s(&cut), "--test", s(&out.join("part1.csv"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("truncated"));

    let other = dir.path().join("sep.csv");
    separable_csv(&other);
    let res = run(&["evaluate", "--model", s(&out.join("final_models/edge1.fids")), "--test", s(&other), "--labels", "auto"]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&["prepare", "--dataset-path", s(&missing), "--output-dir", s(dir.path())]), 3);
    assert_eq!(code(&["prepare"]), 1);
    assert_eq!(code(&["simulate", "--seed", "minus one"]), 1);
    assert_eq!(code(&["simulate", "--max-rounds", "0"]), 1);
    assert_eq!(code(&["no-such-command"]), 1);
    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "colour = blue\n").unwrap();
    assert_eq!(code(&["report", "--config", s(&bad)]), 1);
    let garbage = dir.path().join("garbage.csv");
    fs::write(&garbage, "a,b\n1,2\n").unwrap();
    assert_eq!(code(&["prepare", "--dataset-path", s(&garbage), "--output-dir", s(dir.path())]), 2);
    assert_eq!(code(&["--help"]), 0);
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn spawn(args: &[&str]) -> Child {
    fids(args).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap()
}

fn finish(child: Child) -> String {
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn standalone_server_and_edges_match_the_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = prepared(dir.path(), 50);
    let simulated = ok(&["simulate", "--config", s(&cfg), "--output-dir", s(&out), "--max-rounds", "2"]);

    let port = free_port().to_string();
    let net = dir.path().join("net");
    let common = ["--config", s(&cfg), "--parts-dir", s(&out), "--output-dir", s(&net), "--port", &port, "--max-rounds", "2"];
    let with = |extra: &[&str]| -> Vec<String> { extra.iter().chain(&common).map(|a| a.to_string()).collect() };
    let server = spawn(&with(&["serve"]).iter().map(String::as_str).collect::<Vec<_>>());
    let edges: Vec<Child> = ["1", "2"]
        .iter()
        .map(|id| spawn(&with(&["send-model", "--device-id", id]).iter().map(String::as_str).collect::<Vec<_>>()))
        .collect();
    let edge_rows: Vec<_> = edges.into_iter().map(|e| parse_rounds_csv(&finish(e)).unwrap()).collect();
    let server_rows = parse_rounds_csv(&finish(server)).unwrap();

    let mut merged = Vec::new();
    for round in 0..2 {
        merged.push(edge_rows[0][round].clone());
        merged.push(edge_rows[1][round].clone());
        merged.push(server_rows[round].clone());
    }
    assert_eq!(merged, parse_rounds_csv(&simulated).unwrap());
    assert_eq!(
        fs::read(net.join("final_models/global.fids")).unwrap(),
        fs::read(out.join("final_models/global.fids")).unwrap()
    );
}
