use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use llm_budget::trace_io;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_llm-budget"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn fit_reproduces_golden_prefill_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("prefill.toml");
    let res = run(&[
        "fit",
        "--profile",
        path_str(&fixture("profile_prefill.csv")),
        "--kind",
        "quadratic",
        "--out",
        path_str(&out),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(fs::read_to_string(&out).unwrap(), fs::read_to_string(fixture("golden_prefill.toml")).unwrap());
    let c = trace_io::load_model(&out).unwrap().prefill().unwrap();
    assert!((c.a - 2e-6).abs() <= 1e-9 * 2e-6);
    assert!((c.b - 3e-4).abs() <= 1e-9 * 3e-4);
    assert!((c.c - 5.0).abs() <= 1e-9 * 5.0);
}

#[test]
fn fit_linear_kind_writes_decode_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("decode.toml");
    let res = run(&[
        "fit",
        "--profile",
        path_str(&fixture("profile_decode.csv")),
        "--kind",
        "linear",
        "--out",
        path_str(&out),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(fs::read_to_string(&out).unwrap(), fs::read_to_string(fixture("golden_decode.toml")).unwrap());
    let model = trace_io::load_model(&out).unwrap();
    assert_eq!(model.model_kind, trace_io::ModelKind::Linear);
    let d = model.decode().unwrap();
    assert!((d.p - 0.05).abs() < 1e-12 && (d.q - 12.0).abs() < 1e-9);
    assert!(model.prefill().is_err());
}

#[test]
fn malformed_profile_reports_location_and_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.toml");
    let res = run(&[
        "fit",
        "--profile",
        path_str(&fixture("malformed_profile.csv")),
        "--kind",
        "quadratic",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(res.status.code(), Some(3));
    let err = stderr(&res);
    assert!(err.contains("malformed_profile.csv:4:2"), "{err}");
    assert!(err.contains("oops"), "{err}");
    assert!(!out.exists());
}

#[test]
fn non_millisecond_profile_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&[
        "fit",
        "--profile",
        path_str(&fixture("profile_seconds.csv")),
        "--kind",
        "quadratic",
        "--out",
        path_str(&dir.path().join("m.toml")),
    ]);
    assert_eq!(res.status.code(), Some(3));
    assert!(stderr(&res).contains("unit 's'"));
}

#[test]
fn degenerate_profile_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("p.csv");
    fs::write(&profile, "# unit=ms\nn,t_ms\n100,1\n100,1.1\n").unwrap();
    let res = run(&[
        "fit",
        "--profile",
        path_str(&profile),
        "--kind",
        "quadratic",
        "--out",
        path_str(&dir.path().join("m.toml")),
    ]);
    assert_eq!(res.status.code(), Some(3));
    assert!(stderr(&res).contains("degenerate fit"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["fit", "--kind", "cubic"]).status.code(), Some(2));
}

fn simulate_three_jobs(strategy: &str) -> (tempfile::TempDir, Output) {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&[
        "simulate",
        "--manifest",
        path_str(&fixture("three_jobs/manifest.toml")),
        "--strategy",
        strategy,
        "--out",
        path_str(dir.path()),
    ]);
    (dir, res)
}

#[test]
fn kill_on_three_job_fixture_matches_hand_simulation() {
    let (dir, res) = simulate_three_jobs("kill");
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(
        fs::read_to_string(dir.path().join("vanilla_kill.jobs.csv")).unwrap(),
        fs::read_to_string(fixture("three_jobs/expected_kill.jobs.csv")).unwrap()
    );
    let summary = trace_io::load_result(&dir.path().join("vanilla_kill.summary.toml")).unwrap();
    assert_eq!((summary.completed, summary.killed, summary.skipped), (2, 1, 0));
    assert_eq!(summary.completion_rate, Some(2.0 / 3.0));
    assert!(!dir.path().join("vanilla_skip-next.jobs.csv").exists());
}

#[test]
fn skip_next_on_three_job_fixture_matches_hand_simulation() {
    let (dir, res) = simulate_three_jobs("skip-next");
    assert!(res.status.success(), "{}", stderr(&res));
    assert_eq!(
        fs::read_to_string(dir.path().join("vanilla_skip-next.jobs.csv")).unwrap(),
        fs::read_to_string(fixture("three_jobs/expected_skip-next.jobs.csv")).unwrap()
    );
    let summary = trace_io::load_result(&dir.path().join("vanilla_skip-next.summary.toml")).unwrap();
    assert_eq!((summary.completed, summary.killed, summary.skipped, summary.completed_late), (2, 0, 1, 1));
    assert_eq!(summary.completion_rate, Some(2.0 / 3.0));
}

#[test]
fn simulate_prints_completion_table() {
    let (dir, res) = simulate_three_jobs("kill");
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert_eq!(stdout, fs::read_to_string(dir.path().join("completion.csv")).unwrap());
    assert!(stdout.starts_with("policy,strategy,completion_rate,avg_score"));
}

#[test]
fn missing_trace_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("three_jobs/manifest.toml")).unwrap();
    let fixtures = fixture("three_jobs");
    let text = text
        .replace("trace = \"trace.csv\"", "trace = \"no_such_trace.csv\"")
        .replace("\"prefill.toml\"", &format!("{:?}", fixtures.join("prefill.toml")))
        .replace("\"decode.toml\"", &format!("{:?}", fixtures.join("decode.toml")));
    let manifest = dir.path().join("manifest.toml");
    fs::write(&manifest, text).unwrap();
    let res = run(&["simulate", "--manifest", path_str(&manifest)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(stderr(&res).contains("no_such_trace.csv"));
}

#[test]
fn unknown_policy_is_a_usage_error() {
    let res = run(&["simulate", "--manifest", path_str(&fixture("three_jobs/manifest.toml")), "--policy", "fixed-1.5"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn report_on_single_run_is_identity() {
    let (dir, _) = simulate_three_jobs("kill");
    let summary_path = dir.path().join("vanilla_kill.summary.toml");
    let res = run(&["report", "--input", path_str(&summary_path)]);
    assert!(res.status.success(), "{}", stderr(&res));
    let stdout = String::from_utf8(res.stdout).unwrap();
    let summary = trace_io::load_result(&summary_path).unwrap();
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("x,series,value"));
    let rows: Vec<(String, f64)> = lines
        .map(|l| {
            let parts: Vec<&str> = l.split(',').collect();
            assert_eq!(parts[0], "run");
            (parts[1].to_string(), parts[2].parse().unwrap())
        })
        .collect();
    let lookup = |name: &str| {
        rows.iter()
            .find(|(s, _)| s == &format!("vanilla/kill/{name}"))
            .map(|r| r.1)
            .unwrap_or_else(|| panic!("missing {name} in {stdout}"))
    };
    assert_eq!(lookup("completion_rate"), summary.completion_rate.unwrap());
    assert_eq!(lookup("avg_score"), summary.avg_score.unwrap());
}

#[test]
fn k_sweep_report_has_eight_rows_per_series() {
    let dir = tempfile::tempdir().unwrap();
    let sweep_out = dir.path().join("sweep_k.csv");
    let res = run(&[
        "sweep",
        "--manifest",
        path_str(&fixture("three_jobs/manifest.toml")),
        "--axis",
        "k",
        "--values",
        "1,2,3,4,5,6,7,8",
        "--jobs",
        "3",
        "--out",
        path_str(&sweep_out),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let plot = dir.path().join("plot.csv");
    let res = run(&["report", "--input", path_str(&sweep_out), "--out", path_str(&plot)]);
    assert!(res.status.success(), "{}", stderr(&res));
    let text = fs::read_to_string(&plot).unwrap();
    let mut per_series = std::collections::BTreeMap::<String, usize>::new();
    for line in text.lines().skip(1) {
        *per_series.entry(line.split(',').nth(1).unwrap().to_string()).or_default() += 1;
    }
    assert!(!per_series.is_empty());
    assert!(per_series.values().all(|&n| n == 8), "{per_series:?}");
}

#[test]
fn report_on_empty_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(
        &empty,
        "# unit=ms\naxis,x,policy,strategy,completion_rate,avg_score,total,completed,killed,skipped,completed_late\n",
    )
    .unwrap();
    let res = run(&["report", "--input", path_str(&empty)]);
    assert_ne!(res.status.code(), Some(0));
    assert!(stderr(&res).contains("empty input"));
}

#[test]
fn decide_reports_alpha_and_flags_infeasible_requests() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = fixture("three_jobs");
    let write_request = |budget: f64| {
        let path = dir.path().join(format!("req_{budget}.toml"));
        fs::write(
            &path,
            format!(
                "n_x = 24\nbudget_ms = {budget:?}\nn_max = 64\nk = 1.0\nalpha_max = 0.95\npredictor_mode = \"serial\"\n\
                 prefill_model = {:?}\ndecode_model = {:?}\nbucket_size = 1\nn_model = 64\nbucket = 2\n",
                fixtures.join("prefill.toml"),
                fixtures.join("decode.toml"),
            ),
        )
        .unwrap();
        path
    };
    // wcet(α) = 1 + 24(1 - α); a 13 ms budget needs α = 0.5.
    let res = run(&["decide", "--request", path_str(&write_request(13.0))]);
    assert!(res.status.success(), "{}", stderr(&res));
    let doc: toml::Table = toml::from_str(&String::from_utf8(res.stdout).unwrap()).unwrap();
    assert!((doc["alpha_star"].as_float().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(doc["feasible"].as_bool(), Some(true));

    let res = run(&["decide", "--request", path_str(&write_request(2.0))]);
    assert_eq!(res.status.code(), Some(4));
    let doc: toml::Table = toml::from_str(&String::from_utf8(res.stdout).unwrap()).unwrap();
    assert_eq!(doc["feasible"].as_bool(), Some(false));
    assert!((doc["alpha_star"].as_float().unwrap() - 0.95).abs() < 1e-12);
}

#[test]
fn synth_then_predict_with_lookup_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&["synth", "--seed", "5", "--trace-size", "50", "--out", path_str(dir.path())]);
    assert!(res.status.success(), "{}", stderr(&res));
    for f in ["profile_prefill.csv", "profile_decode.csv", "trace.csv", "planted_prefill.toml", "synthetic.toml"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let trace = trace_io::load_trace(&dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.len(), 50);

    let preds = dir.path().join("pred.csv");
    let metrics = dir.path().join("metrics.toml");
    let res = run(&[
        "predict",
        "--trace",
        path_str(&dir.path().join("trace.csv")),
        "--bucket-size",
        "1",
        "--n-model",
        "8192",
        "--n-max",
        "8192",
        "--oracle-sigma",
        "0",
        "--seed",
        "1",
        "--out",
        path_str(&preds),
        "--metrics-out",
        path_str(&metrics),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let m: toml::Table = toml::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(m["MAE"].as_float(), Some(0.0));

    let lookup = dir.path().join("lookup.csv");
    fs::write(&lookup, "prompt_id,bucket\n0,1\n").unwrap();
    let res = run(&[
        "predict",
        "--trace",
        path_str(&dir.path().join("trace.csv")),
        "--bucket-size",
        "16",
        "--n-model",
        "8192",
        "--n-max",
        "8192",
        "--lookup",
        path_str(&lookup),
        "--out",
        path_str(&preds),
    ]);
    assert_eq!(res.status.code(), Some(3));
    assert!(stderr(&res).contains("no lookup entry for prompt id 1"));
}

#[test]
fn oracle_predictor_requires_seed() {
    let res = run(&[
        "predict",
        "--trace",
        path_str(&fixture("three_jobs/trace.csv")),
        "--bucket-size",
        "1",
        "--n-model",
        "64",
        "--n-max",
        "64",
        "--oracle-sigma",
        "2",
        "--out",
        "/dev/null",
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn demo_results_match_committed_golden_files() {
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo");
    let dir = tempfile::tempdir().unwrap();
    let res = run(&["simulate", "--manifest", path_str(&demo.join("manifest.toml")), "--out", path_str(dir.path())]);
    assert!(res.status.success(), "{}", stderr(&res));
    for entry in fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap();
        assert_eq!(
            fs::read(&path).unwrap(),
            fs::read(demo.join("results").join(name)).unwrap(),
            "{}",
            name.to_string_lossy()
        );
    }
}
