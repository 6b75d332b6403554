use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gms"))
        .args(args)
        .output()
        .expect("spawn gms")
}

fn ok(args: &[&str]) -> String {
    let out = gms(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn csv_header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn solve_writes_a_residual_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solve.csv");
    ok(&[
        "solve",
        "--mdp",
        "gridworld:4",
        "--operator",
        "g",
        "--n",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(csv_header(&out), "iter,residual,wall_ns");
    let rows = fs::read_to_string(&out).unwrap().lines().count() - 1;
    assert!(rows >= 1);
}

#[test]
fn export_then_solve_from_file_matches_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("r.mdp");
    ok(&[
        "export",
        "--env",
        "random:3:6:2:2",
        "--out",
        file.to_str().unwrap(),
    ]);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    ok(&[
        "solve",
        "--mdp",
        "random:3:6:2:2",
        "--operator",
        "b",
        "--out",
        a.to_str().unwrap(),
    ]);
    ok(&[
        "solve",
        "--mdp",
        file.to_str().unwrap(),
        "--operator",
        "b",
        "--out",
        b.to_str().unwrap(),
    ]);
    let residuals = |p: &Path| -> Vec<String> {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().to_string())
            .collect()
    };
    assert_eq!(residuals(&a), residuals(&b));
}

#[test]
fn collect_then_offline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.traj");
    let log = dir.path().join("passes.csv");
    ok(&[
        "collect",
        "--env",
        "chain:6",
        "--episodes",
        "10",
        "--seed",
        "2",
        "--out",
        data.to_str().unwrap(),
    ]);
    ok(&[
        "offline",
        "--env",
        "chain:6",
        "--data",
        data.to_str().unwrap(),
        "--passes",
        "5",
        "--alpha",
        "1",
        "--out",
        log.to_str().unwrap(),
    ]);
    assert_eq!(csv_header(&log), "pass,max_change,solved");
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 6);
}

#[test]
fn train_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        ok(&[
            "train",
            "--env",
            "traceback:6",
            "--episodes",
            "40",
            "--seed",
            "9",
            "--out",
            p.to_str().unwrap(),
        ]);
    }
    assert_eq!(
        csv_header(&a),
        "episode,return,steps,solved,mean_chosen_step"
    );
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn stats_and_bench_produce_csv() {
    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("h.csv");
    ok(&[
        "stats",
        "--env",
        "gridworld:4",
        "--episodes",
        "20",
        "--out",
        hist.to_str().unwrap(),
    ]);
    assert_eq!(csv_header(&hist), "step,count");
    let res = dir.path().join("r.csv");
    let stdout = ok(&[
        "bench",
        "--env",
        "random:1:8:2:3",
        "--operators",
        "b,g",
        "--out",
        res.to_str().unwrap(),
    ]);
    assert!(stdout.contains("slope"));
    assert_eq!(csv_header(&res), "operator,iter,residual");
}

#[test]
fn bench_runs_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let ini = dir.path().join("e.ini");
    let out = dir.path().join("out");
    fs::write(
        &ini,
        "[experiment]\nid = ops\nenv = chain:8\nkind = operators\ntrials = 2\nassert = median g <= 5\n\n\
         [operators]\nlist = b, g\npolicies = chain\nn = 8\n",
    )
    .unwrap();
    ok(&[
        "bench",
        "--config",
        ini.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(out.join("trials.csv").exists() && out.join("summary.csv").exists());

    fs::write(
        &ini,
        "[experiment]\nid = ops\nenv = chain:8\nkind = operators\nassert = median b <= 1\n",
    )
    .unwrap();
    assert_eq!(
        gms(&["bench", "--config", ini.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn props_passes_with_few_pairs() {
    let stdout = ok(&["props", "--pairs", "20"]);
    assert_eq!(
        stdout.lines().filter(|l| l.starts_with("PASS")).count(),
        11,
        "{stdout}"
    );
}

#[test]
fn bad_input_exits_with_code_two() {
    assert_eq!(
        gms(&["solve", "--mdp", "nonsense:3"]).status.code(),
        Some(2)
    );
    assert_eq!(
        gms(&["solve", "--mdp", "/no/such/file"]).status.code(),
        Some(2)
    );
    assert_eq!(
        gms(&["train", "--env", "gridworld:4", "--alpha", "3"])
            .status
            .code(),
        Some(2)
    );
}
