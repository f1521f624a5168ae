use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hitforge::agents::{PipelineConfig, PipelineStatus};
use hitforge::eval::{
    compute_metrics, report, run_suite, CaseId, CaseRecords, PipelineTrials, ReplayDir, Report, TestCase, TokenAggregate,
    TrialDeps, DEFAULT_TRIALS,
};
use hitforge::retrieval::NoReferences;
use hitforge::runner::MarkerTable;
use hitforge::templates::Templates;

fn replay_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/replay")
}

fn suite(cases: &[TestCase], concurrency: usize, out: &Path) -> Vec<CaseRecords> {
    let replay = ReplayDir::new(replay_root());
    let factory = |c: &TestCase, t: usize| -> Result<TrialDeps, String> { replay.deps(c, t) };
    let trials = PipelineTrials {
        deps: &factory,
        retrieval: &NoReferences,
        templates: &Templates::default(),
        markers: &MarkerTable::default(),
        config: &PipelineConfig::default(),
    };
    run_suite(cases, &trials, out, concurrency)
}

fn all_cases() -> Vec<TestCase> {
    CaseId::ALL.iter().map(|&c| TestCase::fixture(c, DEFAULT_TRIALS)).collect()
}

#[test]
fn prompts_match_fixture_files() {
    for c in CaseId::ALL {
        let file = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("fixtures/cases/{c}.txt"));
        assert_eq!(TestCase::fixture(c, 1).prompt, std::fs::read_to_string(file).unwrap());
    }
}

#[test]
fn full_replay_matches_the_design() {
    let design: BTreeMap<String, Vec<PipelineStatus>> =
        serde_json::from_str(&std::fs::read_to_string(replay_root().join("design.json")).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let records = suite(&all_cases(), 4, dir.path());
    assert_eq!(records.len(), 8);
    for case in &records {
        let statuses: Vec<PipelineStatus> = case.trials.iter().map(|t| t.status).collect();
        assert_eq!(statuses, design[case.case_id.as_str()], "{}", case.case_id);
        assert!(case.trials.iter().all(|t| t.completed && t.token_usage > 0));
    }
    let metrics = compute_metrics(&records, TokenAggregate::Mean).unwrap();
    let passes: Vec<usize> = metrics.iter().map(|m| m.passes).collect();
    assert_eq!(passes, vec![5, 4, 5, 3, 3, 3, 5, 2]);
    let r = report(&metrics);
    assert_eq!(r.cases.len(), 8);
    assert_eq!(r.to_text().lines().count(), 9);
}

#[test]
fn trial_order_does_not_matter() {
    let strip = |recs: Vec<CaseRecords>, root: &Path| {
        let mut flat: Vec<_> = recs
            .into_iter()
            .flat_map(|c| c.trials)
            .map(|mut t| {
                t.run_dir = t.run_dir.strip_prefix(root).unwrap().to_path_buf();
                t
            })
            .collect();
        flat.sort_by_key(|t| (t.case_id, t.trial));
        flat
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let forward = strip(suite(&all_cases(), 1, a.path()), a.path());
    let mut reversed_cases = all_cases();
    reversed_cases.reverse();
    let backward = strip(suite(&reversed_cases, 8, b.path()), b.path());
    assert_eq!(forward, backward);
    for t in &forward {
        let x = std::fs::read(a.path().join(&t.run_dir).join("transcript.json")).unwrap();
        let y = std::fs::read(b.path().join(&t.run_dir).join("transcript.json")).unwrap();
        assert_eq!(x, y, "{} trial {}", t.case_id, t.trial);
    }
}

#[test]
fn single_case_report() {
    let dir = tempfile::tempdir().unwrap();
    let records = suite(&[TestCase::fixture(CaseId::HeatSteady, 2)], 2, dir.path());
    let r = report(&compute_metrics(&records, TokenAggregate::Mean).unwrap());
    let (json, text) = r.write(&dir.path().join("report")).unwrap();
    let back: Report = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(back, r);
    assert_eq!(std::fs::read_to_string(text).unwrap().lines().count(), 2);
}

#[test]
fn missing_replay_is_an_incomplete_trial() {
    let dir = tempfile::tempdir().unwrap();
    let replay = ReplayDir::new(dir.path().join("nowhere"));
    let factory = |c: &TestCase, t: usize| -> Result<TrialDeps, String> { replay.deps(c, t) };
    let trials = PipelineTrials {
        deps: &factory,
        retrieval: &NoReferences,
        templates: &Templates::default(),
        markers: &MarkerTable::default(),
        config: &PipelineConfig::default(),
    };
    let recs = run_suite(&[TestCase::fixture(CaseId::Porous, 2)], &trials, dir.path(), 2);
    assert!(recs[0].trials.iter().all(|t| !t.completed && t.status == PipelineStatus::Failed));
}
