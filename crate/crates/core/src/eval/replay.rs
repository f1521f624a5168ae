use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{TestCase, TrialDeps};
use crate::llm::{LlmClient, ReplayBackend};
use crate::runner::{MarkerTable, MockRunner};

/// Replay scripts for a suite: `<root>/<CaseId>/llm.json` and `runner.json`,
/// optionally overridden per trial by files in `<root>/<CaseId>/trial-<n>/`.
#[derive(Debug, Clone)]
pub struct ReplayDir {
    pub root: PathBuf,
    /// Runner script used for every trial instead of the per-case one.
    pub runner_override: Option<PathBuf>,
    pub markers: MarkerTable,
}

impl ReplayDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            runner_override: None,
            markers: MarkerTable::default(),
        }
    }

    fn script(&self, case: &TestCase, trial: usize, file: &str) -> Result<PathBuf, String> {
        let case_dir = self.root.join(case.case_id.as_str());
        let specific = case_dir.join(format!("trial-{trial}")).join(file);
        if specific.is_file() {
            return Ok(specific);
        }
        let shared = case_dir.join(file);
        if shared.is_file() {
            return Ok(shared);
        }
        Err(format!("no replay script {}", shared.display()))
    }

    pub fn llm_script(&self, case: &TestCase, trial: usize) -> Result<PathBuf, String> {
        self.script(case, trial, "llm.json")
    }

    pub fn runner_script(&self, case: &TestCase, trial: usize) -> Result<PathBuf, String> {
        match &self.runner_override {
            Some(p) => Ok(p.clone()),
            None => self.script(case, trial, "runner.json"),
        }
    }

    /// Fresh replay client and mock runner for one trial.
    pub fn deps(&self, case: &TestCase, trial: usize) -> Result<TrialDeps, String> {
        let llm = ReplayBackend::from_file(&self.llm_script(case, trial)?).map_err(|e| e.to_string())?;
        let runner = MockRunner::from_file(&self.runner_script(case, trial)?)
            .map_err(|e| e.to_string())?
            .with_markers(self.markers.clone());
        Ok(TrialDeps {
            llm: LlmClient::new(Arc::new(llm)),
            runner: Box::new(runner),
        })
    }

    pub fn has_case(&self, case: &TestCase) -> bool {
        Path::new(&self.root).join(case.case_id.as_str()).is_dir()
    }
}
