use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn signfed(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signfed"))
        .args(args)
        .env("SIGNFED_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SWEEP: &str = "\
schema_version = 1
name = cons
output_dir = out
repeat = 2
seed = 7
problem.kind = consensus
problem.dim = 8
problem.clients = 6
rounds = 40
participation = 0.5
client_lr = 0.05
compressor.kind = stochastic_sign
compressor.z = 1
sweep.compressor.sigma = 0.1, 1
";

#[test]
fn run_writes_csvs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "exp.cfg", SWEEP);
    let out = signfed(&["run", &file, "--dump-updates"], "2");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out_dir = dir.path().join("out");
    for group in ["cons_sigma-0.1", "cons_sigma-1"] {
        for seed in [7, 8] {
            let csv = fs::read_to_string(out_dir.join(format!("{group}_seed{seed}.csv"))).unwrap();
            assert_eq!(csv.lines().count(), 1 + 41);
            assert!(csv.starts_with("round,"));
            // 3 clients of 8 bits per round.
            let last = csv.lines().last().unwrap();
            assert!(last.starts_with("40,"));
            assert!(last.contains(&format!(",{},", 40 * 3 * 8)));
            let dump = fs::read(out_dir.join(format!("{group}_seed{seed}.updates"))).unwrap();
            // 12-byte header, 1 tag byte, 4 dim bytes, 1 sign byte.
            assert_eq!(dump.len(), 40 * 3 * (12 + 5 + 1));
        }
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["groups"].as_array().unwrap().len(), 2);
    assert_eq!(summary["groups"][0]["runs"].as_array().unwrap().len(), 2);
    assert!(summary["groups"][1]["final_objective_std"].as_f64().unwrap() >= 0.0);
    // No temporary files left behind.
    assert!(fs::read_dir(&out_dir)
        .unwrap()
        .all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn output_is_independent_of_thread_count() {
    let mut csvs = Vec::new();
    for threads in ["1", "4"] {
        let dir = tempfile::tempdir().unwrap();
        let file = write(dir.path(), "exp.cfg", SWEEP);
        assert!(signfed(&["sweep", &file], threads).status.success());
        csvs.push(fs::read(dir.path().join("out/cons_sigma-1_seed8.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.cfg", &SWEEP.replace("rounds = 40", "rounds = -3"));
    let out = signfed(&["run", &bad], "1");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rounds"));

    let plain = write(
        dir.path(),
        "plain.cfg",
        &SWEEP.replace("sweep.compressor.sigma = 0.1, 1\n", "compressor.sigma = 1\n"),
    );
    assert_eq!(signfed(&["sweep", &plain], "1").status.code(), Some(2));
    assert!(signfed(&["run", &plain], "1").status.success());
}

#[test]
fn divergence_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = "\
schema_version = 1
name = boom
output_dir = out
problem.kind = consensus
problem.dim = 4
problem.clients = 2
rounds = 200
client_lr = 5
compressor.kind = identity
";
    let file = write(dir.path(), "boom.cfg", text);
    let out = signfed(&["run", &file], "1");
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn presets_print_and_run() {
    let list = signfed(&["preset"], "1");
    let names = String::from_utf8(list.stdout).unwrap();
    assert!(names.lines().any(|l| l == "consensus-mnist-analog"));
    assert!(names.lines().any(|l| l == "dp-eps1"));

    let text = String::from_utf8(signfed(&["preset", "counterexample"], "1").stdout).unwrap();
    assert!(text.contains("problem.kind = counterexample"));
    assert_eq!(signfed(&["preset", "nope"], "1").status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let file = write(
        dir.path(),
        "p.cfg",
        "preset = counterexample\noutput_dir = out\nrounds = 20\n",
    );
    assert!(signfed(&["run", &file], "1").status.success());
    let csv = fs::read_to_string(dir.path().join("out/counterexample_seed0.csv")).unwrap();
    assert_eq!(csv.lines().count(), 22);
}

#[test]
fn verify_fast_passes() {
    let out = signfed(&["verify", "--fast"], "1");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 7);
}
