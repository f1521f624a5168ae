use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn hitforge(dir: &Path, args: &[&str]) -> Output {
    hitforge_stdin(dir, args, "")
}

fn hitforge_stdin(dir: &Path, args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_hitforge"))
        .args(args)
        .current_dir(dir)
        .env_remove("HITFORGE_LLM_API_KEY")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: PathBuf) -> String {
    p.to_str().unwrap().to_string()
}

fn build_kb(dir: &Path) -> Output {
    let f = fixtures();
    hitforge(
        dir,
        &["build-kb", "--root", &path(f.join("kb/repo")), "--dump", &path(f.join("kb/dump.json"))],
    )
}

fn checksums(out: &str) -> Vec<String> {
    out.lines()
        .filter_map(|l| l.split_once("sha256 ").map(|(_, h)| h.to_string()))
        .collect()
}

/// Knowledge base with every fixture card annotated.
fn annotated_kb() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    assert!(build_kb(dir.path()).status.success());
    let o = hitforge(dir.path(), &["annotate", "--replay", &path(fixtures().join("kb/annotate"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

fn heat_steady_prompt() -> String {
    path(fixtures().join("cases/HeatSteady.txt"))
}

#[test]
fn build_kb_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let first = build_kb(dir.path());
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert!(stdout(&first).contains("records: 12"));
    assert!(stdout(&first).contains("docs: 25"));
    assert!(dir.path().join("kb").is_dir());

    let other = tempfile::tempdir().unwrap();
    let second = build_kb(other.path());
    let again = build_kb(dir.path());
    assert_eq!(checksums(&stdout(&first)).len(), 2);
    assert_eq!(checksums(&stdout(&first)), checksums(&stdout(&second)));
    assert_eq!(checksums(&stdout(&first)), checksums(&stdout(&again)));
}

#[test]
fn build_kb_missing_dump_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-dump.json");
    let o = hitforge(
        dir.path(),
        &["build-kb", "--root", &path(fixtures().join("kb/repo")), "--dump", &path(missing)],
    );
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("no-such-dump.json"));
}

#[test]
fn annotate_with_budget_resumes() {
    let dir = tempfile::tempdir().unwrap();
    assert!(build_kb(dir.path()).status.success());
    let replay = path(fixtures().join("kb/annotate"));

    let o = hitforge(dir.path(), &["annotate", "--budget", "0", "--replay", &replay]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("annotated: 0, failed: 0, remaining: 12"));

    let o = hitforge(dir.path(), &["annotate", "--budget", "2", "--replay", &replay]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("annotated: 2, failed: 0, remaining: 10"));
    assert!(stdout(&o).contains("card index: 2 entries"));

    let o = hitforge(dir.path(), &["annotate", "--replay", &replay]);
    assert!(stdout(&o).contains("annotated: 10, failed: 0, remaining: 0"));
    let o = hitforge(dir.path(), &["annotate", "--replay", &replay]);
    assert!(stdout(&o).contains("annotated: 0, failed: 0, remaining: 0"));
}

#[test]
fn commands_need_a_knowledge_base() {
    let dir = tempfile::tempdir().unwrap();
    let replay = path(fixtures().join("replay/HeatSteady"));
    let o = hitforge(dir.path(), &["run", "heat a rod", "--replay", &replay]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("build-kb"));
}

#[test]
fn live_run_without_key_is_a_config_error() {
    let dir = annotated_kb();
    let o = hitforge(dir.path(), &["run", "heat a rod"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("HITFORGE_LLM_API_KEY"));
}

#[test]
fn replayed_run_succeeds() {
    let dir = annotated_kb();
    let replay = path(fixtures().join("replay/HeatSteady"));
    let o = hitforge(dir.path(), &["run", &heat_steady_prompt(), "--replay", &replay]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("status: success"));
    let run = dir.path().join("runs/run-1");
    for f in ["transcript.json", "ledger.json", "calls.json", "state.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_dir(run.join("cards")).unwrap().count(), 1);

    let o = hitforge(dir.path(), &["run", &heat_steady_prompt(), "--replay", &replay]);
    assert!(stdout(&o).contains("runs/run-2"));
    assert_eq!(
        std::fs::read(dir.path().join("runs/run-1/transcript.json")).unwrap(),
        std::fs::read(dir.path().join("runs/run-2/transcript.json")).unwrap()
    );
}

#[test]
fn aborted_run_exits_5() {
    let dir = annotated_kb();
    let replay = path(fixtures().join("replay/HeatSteady"));
    let o = hitforge_stdin(
        dir.path(),
        &["run", &heat_steady_prompt(), "--interactive", "--replay", &replay],
        "a\n",
    );
    assert_eq!(o.status.code(), Some(5), "{}", stdout(&o));
    assert!(stdout(&o).contains("status: aborted"));
    assert!(stderr(&o).contains("Card plan:"));
}

#[test]
fn repeated_failures_exit_3() {
    let dir = annotated_kb();
    let script = dir.path().join("fail.json");
    std::fs::write(
        &script,
        r#"[
 {"exit_code":1,"stdout":"","stderr":"Nonlinear solve did not converge due to DIVERGED_LINE_SEARCH iterations 8\n"},
 {"exit_code":1,"stdout":"","stderr":"Nonlinear solve did not converge due to DIVERGED_FNORM_NAN iterations 2\n"},
 {"exit_code":1,"stdout":"","stderr":"Nonlinear solve did not converge due to DIVERGED_MAX_IT iterations 50\n"}
]"#,
    )
    .unwrap();
    let replay = path(fixtures().join("replay/HeatSteady"));
    let o = hitforge(
        dir.path(),
        &["run", &heat_steady_prompt(), "--replay", &replay, "--mock-runner", &path(script)],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stdout(&o).contains("status: failed_max_iterations"));
}

#[test]
fn eval_single_case() {
    let dir = annotated_kb();
    let replay = path(fixtures().join("replay"));
    let o = hitforge(dir.path(), &["eval", "--case", "HeatSteady", "--replay", &replay]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("runs/eval-1/report.json")).unwrap()).unwrap();
    let cases = report["cases"].as_array().unwrap();
    assert_eq!(cases.len(), 1);
    assert_eq!(cases[0]["case_id"], "HeatSteady");
    assert_eq!(cases[0]["pass"], 1.0);
    assert!(dir.path().join("runs/eval-1/report.txt").is_file());
    assert!(dir.path().join("runs/eval-1/records.json").is_file());
    assert!(dir.path().join("runs/eval-1/HeatSteady/trial-5").is_dir());
}

#[test]
fn eval_all_cases() {
    let dir = annotated_kb();
    let replay = path(fixtures().join("replay"));
    let o = hitforge(dir.path(), &["eval", "--replay", &replay]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    let rows: Vec<&str> = table.lines().skip(1).take_while(|l| !l.starts_with("report:")).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows[7].starts_with("ThermalMechanic"));
    assert!(table.lines().next().unwrap().starts_with("Case"));
}

#[test]
fn eval_rejects_unknown_case() {
    let dir = annotated_kb();
    let replay = path(fixtures().join("replay"));
    let o = hitforge(dir.path(), &["eval", "--case", "Nope", "--replay", &replay]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ThermalMechanic"));
}

#[test]
fn eval_with_missing_trial_scripts_exits_6() {
    let dir = annotated_kb();
    let replay = dir.path().join("replay");
    let case = replay.join("HeatSteady");
    std::fs::create_dir_all(&case).unwrap();
    std::fs::write(case.join("llm.json"), "not json").unwrap();
    std::fs::write(case.join("runner.json"), "[]").unwrap();
    let o = hitforge(
        dir.path(),
        &["eval", "--case", "HeatSteady", "--trials", "2", "--replay", &path(replay)],
    );
    assert_eq!(o.status.code(), Some(6), "{}", stderr(&o));
    assert!(stderr(&o).contains("HeatSteady"));
}

#[test]
fn config_file_paths_are_relative_to_it() {
    let dir = annotated_kb();
    let conf_dir = dir.path().join("conf");
    std::fs::create_dir(&conf_dir).unwrap();
    let conf = conf_dir.join("hitforge.toml");
    std::fs::write(&conf, "[paths]\nkb_dir = \"../kb\"\nwork_dir = \"out\"\n").unwrap();
    let replay = path(fixtures().join("replay/HeatSteady"));
    let o = hitforge(
        dir.path(),
        &["--config", &path(conf), "run", &heat_steady_prompt(), "--replay", &replay],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(conf_dir.join("out/run-1/state.json").is_file());

    let bad = conf_dir.join("bad.toml");
    std::fs::write(&bad, "[pipeline]\nmax_iterations = 0\n").unwrap();
    let o = hitforge(dir.path(), &["--config", &path(bad), "run", "x"]);
    assert_eq!(o.status.code(), Some(2));
}
