//! Repeated pipeline trials over the bundled test cases, and the pass,
//! token and productivity metrics computed from them.

mod replay;

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{run_pipeline, NonInteractive, PipelineConfig, PipelineDeps, PipelineState, PipelineStatus};
use crate::llm::LlmClient;
use crate::retrieval::ReferenceSource;
use crate::runner::{MarkerTable, Runner};
use crate::templates::Templates;

pub use replay::ReplayDir;

/// Five trials per case: every reported pass rate is a multiple of 0.2.
pub const DEFAULT_TRIALS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CaseId {
    HeatSteady,
    HeatTran,
    Elasticity,
    Plasticity,
    PhaseChange,
    Porous,
    PhaseField,
    ThermalMechanic,
}

impl CaseId {
    /// Every case, in report order.
    pub const ALL: [CaseId; 8] = [
        CaseId::HeatSteady,
        CaseId::HeatTran,
        CaseId::Elasticity,
        CaseId::Plasticity,
        CaseId::PhaseChange,
        CaseId::Porous,
        CaseId::PhaseField,
        CaseId::ThermalMechanic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseId::HeatSteady => "HeatSteady",
            CaseId::HeatTran => "HeatTran",
            CaseId::Elasticity => "Elasticity",
            CaseId::Plasticity => "Plasticity",
            CaseId::PhaseChange => "PhaseChange",
            CaseId::Porous => "Porous",
            CaseId::PhaseField => "PhaseField",
            CaseId::ThermalMechanic => "ThermalMechanic",
        }
    }

    /// The bundled natural-language prompt.
    pub fn prompt(self) -> &'static str {
        match self {
            CaseId::HeatSteady => include_str!("../../fixtures/cases/HeatSteady.txt"),
            CaseId::HeatTran => include_str!("../../fixtures/cases/HeatTran.txt"),
            CaseId::Elasticity => include_str!("../../fixtures/cases/Elasticity.txt"),
            CaseId::Plasticity => include_str!("../../fixtures/cases/Plasticity.txt"),
            CaseId::PhaseChange => include_str!("../../fixtures/cases/PhaseChange.txt"),
            CaseId::Porous => include_str!("../../fixtures/cases/Porous.txt"),
            CaseId::PhaseField => include_str!("../../fixtures/cases/PhaseField.txt"),
            CaseId::ThermalMechanic => include_str!("../../fixtures/cases/ThermalMechanic.txt"),
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown case `{0}`; valid cases: HeatSteady, HeatTran, Elasticity, Plasticity, PhaseChange, Porous, PhaseField, ThermalMechanic")]
pub struct UnknownCase(pub String);

impl FromStr for CaseId {
    type Err = UnknownCase;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CaseId::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownCase(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestCase {
    pub case_id: CaseId,
    pub prompt: String,
    pub trials: usize,
}

impl TestCase {
    pub fn fixture(case_id: CaseId, trials: usize) -> Self {
        Self {
            case_id,
            prompt: case_id.prompt().to_string(),
            trials,
        }
    }
}

/// Outcome of one pipeline execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub case_id: CaseId,
    /// 1-based.
    pub trial: usize,
    pub status: PipelineStatus,
    pub token_usage: u64,
    /// Characters of all final cards.
    pub generated_chars: usize,
    /// False when the trial could not be executed at all (setup error or panic).
    pub completed: bool,
    pub cause: Option<String>,
    pub run_dir: PathBuf,
}

impl TrialRecord {
    pub fn passed(&self) -> bool {
        self.status == PipelineStatus::Success
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecords {
    pub case_id: CaseId,
    pub trials: Vec<TrialRecord>,
}

/// Executes one trial of a case in `run_dir`.
pub trait TrialRunner: Sync {
    fn run_trial(&self, case: &TestCase, trial: usize, run_dir: &Path) -> Result<PipelineState, String>;
}

/// Fresh model client and solver runner for one trial.
pub struct TrialDeps {
    pub llm: LlmClient,
    pub runner: Box<dyn Runner>,
}

pub type DepsFactory<'a> = dyn Fn(&TestCase, usize) -> Result<TrialDeps, String> + Sync + 'a;

/// Runs the full pipeline non-interactively with per-trial dependencies.
pub struct PipelineTrials<'a> {
    pub deps: &'a DepsFactory<'a>,
    pub retrieval: &'a dyn ReferenceSource,
    pub templates: &'a Templates,
    pub markers: &'a MarkerTable,
    pub config: &'a PipelineConfig,
}

impl TrialRunner for PipelineTrials<'_> {
    fn run_trial(&self, case: &TestCase, trial: usize, run_dir: &Path) -> Result<PipelineState, String> {
        let deps = (self.deps)(case, trial)?;
        Ok(run_pipeline(
            &case.prompt,
            PipelineDeps {
                llm: &deps.llm,
                retrieval: self.retrieval,
                runner: deps.runner.as_ref(),
                interaction: &mut NonInteractive,
                templates: self.templates,
                markers: self.markers,
                config: self.config,
            },
            run_dir,
        ))
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

fn execute(runner: &dyn TrialRunner, case: &TestCase, trial: usize, run_dir: PathBuf) -> TrialRecord {
    let outcome = std::fs::create_dir_all(&run_dir)
        .map_err(|e| format!("{}: {e}", run_dir.display()))
        .and_then(|_| {
            catch_unwind(AssertUnwindSafe(|| runner.run_trial(case, trial, &run_dir)))
                .map_err(|p| format!("trial panicked: {}", panic_message(p)))
                .and_then(|r| r)
        });
    match outcome {
        Ok(state) => TrialRecord {
            case_id: case.case_id,
            trial,
            status: state.status,
            token_usage: state.token_usage,
            generated_chars: state.generated_chars(),
            completed: true,
            cause: state.cause.clone(),
            run_dir,
        },
        Err(cause) => {
            log::error!("{} trial {trial}: {cause}", case.case_id);
            TrialRecord {
                case_id: case.case_id,
                trial,
                status: PipelineStatus::Failed,
                token_usage: 0,
                generated_chars: 0,
                completed: false,
                cause: Some(cause),
                run_dir,
            }
        }
    }
}

/// Runs `trials` executions of every case, at most `concurrency` at a time.
/// Trial `n` of case `C` writes its run log to `out_dir/C/trial-n`. A trial
/// that errors or panics is recorded as a failure; the suite continues.
pub fn run_suite(cases: &[TestCase], runner: &dyn TrialRunner, out_dir: &Path, concurrency: usize) -> Vec<CaseRecords> {
    let jobs: Vec<(usize, usize)> = cases
        .iter()
        .enumerate()
        .flat_map(|(i, c)| (1..=c.trials).map(move |t| (i, t)))
        .collect();
    let slots: Mutex<Vec<Option<TrialRecord>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = concurrency.max(1).min(jobs.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(ci, trial)) = jobs.get(j) else {
                    break;
                };
                let case = &cases[ci];
                let dir = out_dir.join(case.case_id.as_str()).join(format!("trial-{trial}"));
                let record = execute(runner, case, trial, dir);
                slots.lock().expect("suite results poisoned")[j] = Some(record);
            });
        }
    });
    let mut records = slots.into_inner().expect("suite results poisoned").into_iter().flatten();
    cases
        .iter()
        .map(|c| CaseRecords {
            case_id: c.case_id,
            trials: records.by_ref().take(c.trials).collect(),
        })
        .collect()
}

/// How per-trial ledger totals are combined into one token figure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenAggregate {
    /// Mean over trials, rounded to the nearest token.
    #[default]
    Mean,
    Total,
    LastTrial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: CaseId,
    pub trials: usize,
    pub passes: usize,
    pub success_rate: f64,
    pub token_usage: u64,
    /// Characters of the final cards of the last trial.
    pub generated_chars: usize,
    /// Tokens per generated character; absent when no characters were generated.
    pub productivity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("case {0} has no trial records")]
    NoTrials(CaseId),
    #[error("{0}")]
    Io(String),
}

pub fn compute_metrics(records: &[CaseRecords], aggregate: TokenAggregate) -> Result<Vec<CaseMetrics>, EvalError> {
    records
        .iter()
        .map(|c| {
            let last = c.trials.last().ok_or(EvalError::NoTrials(c.case_id))?;
            let n = c.trials.len();
            let passes = c.trials.iter().filter(|t| t.passed()).count();
            let total: u64 = c.trials.iter().map(|t| t.token_usage).sum();
            let token_usage = match aggregate {
                TokenAggregate::Mean => (total + n as u64 / 2) / n as u64,
                TokenAggregate::Total => total,
                TokenAggregate::LastTrial => last.token_usage,
            };
            let chars = last.generated_chars;
            Ok(CaseMetrics {
                case_id: c.case_id,
                trials: n,
                passes,
                success_rate: passes as f64 / n as f64,
                token_usage,
                generated_chars: chars,
                productivity: (chars > 0).then(|| token_usage as f64 / chars as f64),
            })
        })
        .collect()
}

/// One row of the report, in table column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub case_id: CaseId,
    pub pass: f64,
    pub token: u64,
    pub productivity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub cases: Vec<ReportRow>,
}

pub fn report(metrics: &[CaseMetrics]) -> Report {
    Report {
        cases: metrics
            .iter()
            .map(|m| ReportRow {
                case_id: m.case_id,
                pass: m.success_rate,
                token: m.token_usage,
                productivity: m.productivity,
            })
            .collect(),
    }
}

/// `0.8`, `1`, `0.67`: at most two decimals, trailing zeros dropped.
fn short(x: f64) -> String {
    let s = format!("{x:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned plain-text table; productivity is rounded to a whole number
    /// and shown as `-` when absent.
    pub fn to_text(&self) -> String {
        let header = ["Case", "Pass", "Token", "Productivity"].map(String::from);
        let rows: Vec<[String; 4]> = self
            .cases
            .iter()
            .map(|r| {
                [
                    r.case_id.to_string(),
                    short(r.pass),
                    r.token.to_string(),
                    r.productivity.map_or_else(|| "-".into(), |p| format!("{p:.0}")),
                ]
            })
            .collect();
        let mut widths = header.clone().map(|h| h.len());
        for r in &rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String; 4]| {
            let mut s = format!("{:<w$}", cells[0], w = widths[0]);
            for (cell, w) in cells.iter().zip(widths).skip(1) {
                s.push_str(&format!("  {cell:>w$}"));
            }
            s.push('\n');
            s
        };
        let mut out = line(&header);
        for r in &rows {
            out.push_str(&line(r));
        }
        out
    }

    /// Writes `report.json` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf), EvalError> {
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |e: std::io::Error| EvalError::Io(format!("{}: {e}", p.display()))
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let json = dir.join("report.json");
        let text = dir.join("report.txt");
        std::fs::write(&json, self.to_json()).map_err(io(&json))?;
        std::fs::write(&text, self.to_text()).map_err(io(&text))?;
        Ok((json, text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trial(case_id: CaseId, n: usize, pass: bool, tokens: u64, chars: usize) -> TrialRecord {
        TrialRecord {
            case_id,
            trial: n,
            status: if pass { PipelineStatus::Success } else { PipelineStatus::FailedMaxIterations },
            token_usage: tokens,
            generated_chars: chars,
            completed: true,
            cause: None,
            run_dir: PathBuf::new(),
        }
    }

    #[test]
    fn case_ids_parse() {
        for c in CaseId::ALL {
            assert_eq!(c.as_str().parse::<CaseId>().unwrap(), c);
            assert!(!c.prompt().trim().is_empty());
        }
        assert_eq!("heatsteady".parse::<CaseId>().unwrap(), CaseId::HeatSteady);
        let err = "Heat".parse::<CaseId>().unwrap_err().to_string();
        assert!(err.contains("ThermalMechanic"));
    }

    #[test]
    fn four_of_five() {
        let records = vec![CaseRecords {
            case_id: CaseId::HeatTran,
            trials: (1..=5).map(|n| trial(CaseId::HeatTran, n, n != 3, 100, 10)).collect(),
        }];
        let m = compute_metrics(&records, TokenAggregate::Mean).unwrap();
        assert_eq!(m[0].success_rate, 0.8);
        assert_eq!(m[0].passes, 4);
    }

    #[test]
    fn zero_passes_and_zero_chars() {
        let records = vec![CaseRecords {
            case_id: CaseId::Porous,
            trials: vec![trial(CaseId::Porous, 1, false, 50, 0)],
        }];
        let m = compute_metrics(&records, TokenAggregate::Mean).unwrap();
        assert_eq!(m[0].success_rate, 0.0);
        assert_eq!(m[0].productivity, None);
        assert!(report(&m).to_text().lines().nth(1).unwrap().ends_with('-'));
    }

    #[test]
    fn empty_case_is_an_error() {
        let records = vec![CaseRecords {
            case_id: CaseId::Porous,
            trials: vec![],
        }];
        assert_eq!(
            compute_metrics(&records, TokenAggregate::Mean),
            Err(EvalError::NoTrials(CaseId::Porous))
        );
        assert!(compute_metrics(&[], TokenAggregate::Mean).unwrap().is_empty());
    }

    #[test]
    fn text_row() {
        let m = CaseMetrics {
            case_id: CaseId::HeatSteady,
            trials: 5,
            passes: 5,
            success_rate: 1.0,
            token_usage: 24673,
            generated_chars: 881,
            productivity: Some(24673.0 / 881.0),
        };
        let text = report(&[m]).to_text();
        let row: Vec<&str> = text.lines().nth(1).unwrap().split_whitespace().collect();
        assert_eq!(row, ["HeatSteady", "1", "24673", "28"]);
        let head: Vec<&str> = text.lines().next().unwrap().split_whitespace().collect();
        assert_eq!(head, ["Case", "Pass", "Token", "Productivity"]);
    }

    #[test]
    fn token_aggregates() {
        let records = vec![CaseRecords {
            case_id: CaseId::Elasticity,
            trials: vec![
                trial(CaseId::Elasticity, 1, true, 10, 1),
                trial(CaseId::Elasticity, 2, true, 11, 4),
            ],
        }];
        let get = |a| compute_metrics(&records, a).unwrap()[0].clone();
        assert_eq!(get(TokenAggregate::Mean).token_usage, 11);
        assert_eq!(get(TokenAggregate::Total).token_usage, 21);
        assert_eq!(get(TokenAggregate::LastTrial).token_usage, 11);
        assert_eq!(get(TokenAggregate::Mean).generated_chars, 4);
    }

    struct Scripted(Vec<bool>);

    impl TrialRunner for Scripted {
        fn run_trial(&self, case: &TestCase, trial: usize, _dir: &Path) -> Result<PipelineState, String> {
            if trial == 99 {
                panic!("boom");
            }
            let mut s = PipelineState::new(&case.prompt);
            s.status = if self.0[trial - 1] { PipelineStatus::Success } else { PipelineStatus::FailedMaxIterations };
            s.token_usage = 10 * trial as u64;
            Ok(s)
        }
    }

    #[test]
    fn one_pass_of_two() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [TestCase::fixture(CaseId::HeatSteady, 2)];
        let recs = run_suite(&cases, &Scripted(vec![true, false]), dir.path(), 4);
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].trials.iter().filter(|t| t.passed()).count(), 1);
        assert_eq!(recs[0].trials[1].run_dir, dir.path().join("HeatSteady/trial-2"));
        assert!(run_suite(&[], &Scripted(vec![]), dir.path(), 4).is_empty());
    }

    struct Panicky;

    impl TrialRunner for Panicky {
        fn run_trial(&self, _case: &TestCase, trial: usize, _dir: &Path) -> Result<PipelineState, String> {
            match trial {
                1 => panic!("worker blew up"),
                2 => Err("no replay script".into()),
                _ => Ok(PipelineState::new("x")),
            }
        }
    }

    #[test]
    fn crashes_are_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let recs = run_suite(&[TestCase::fixture(CaseId::Porous, 3)], &Panicky, dir.path(), 2);
        let t = &recs[0].trials;
        assert_eq!(t.len(), 3);
        assert!(!t[0].completed && t[0].cause.as_deref().unwrap().contains("worker blew up"));
        assert!(!t[1].completed && t[1].cause.as_deref() == Some("no replay script"));
        assert!(t[2].completed);
    }

    fn arb_records() -> impl Strategy<Value = Vec<(bool, u64, usize)>> {
        proptest::collection::vec((any::<bool>(), 0u64..200_000, 0usize..5_000), 1..12)
    }

    proptest! {
        #[test]
        fn metrics_match_recomputation(raw in arb_records()) {
            let trials: Vec<TrialRecord> = raw
                .iter()
                .enumerate()
                .map(|(i, &(p, t, c))| trial(CaseId::PhaseField, i + 1, p, t, c))
                .collect();
            let m = &compute_metrics(&[CaseRecords { case_id: CaseId::PhaseField, trials }], TokenAggregate::Mean).unwrap()[0];
            let n = raw.len() as f64;
            let passes = raw.iter().filter(|r| r.0).count() as f64;
            prop_assert!((m.success_rate - passes / n).abs() < 1e-12);
            let mean = raw.iter().map(|r| r.1 as f64).sum::<f64>() / n;
            prop_assert!((m.token_usage as f64 - mean).abs() <= 0.5);
            let chars = raw.last().unwrap().2;
            match m.productivity {
                None => prop_assert_eq!(chars, 0),
                Some(p) => prop_assert!((p - m.token_usage as f64 / chars as f64).abs() < 1e-9),
            }
        }

        #[test]
        fn report_json_round_trips(raw in arb_records()) {
            let trials: Vec<TrialRecord> = raw
                .iter()
                .enumerate()
                .map(|(i, &(p, t, c))| trial(CaseId::Plasticity, i + 1, p, t, c))
                .collect();
            let m = compute_metrics(&[CaseRecords { case_id: CaseId::Plasticity, trials }], TokenAggregate::Mean).unwrap();
            let r = report(&m);
            let back: Report = serde_json::from_str(&r.to_json()).unwrap();
            prop_assert_eq!(back, r);
        }
    }
}
