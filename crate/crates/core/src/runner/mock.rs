use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{classify, MarkerTable, RunResult, Runner, RunnerError, DEFAULT_EXCERPT_CHARS};

/// Scripted outcome of one attempt.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockStep {
    #[serde(default)]
    pub exit_code: i32,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    #[serde(default)]
    pub sleep_seconds: f64,
}

impl MockStep {
    pub fn ok() -> Self {
        Self::default()
    }

    pub fn fail(stderr: &str) -> Self {
        Self {
            exit_code: 1,
            stderr: stderr.to_string(),
            ..Self::default()
        }
    }
}

/// Replays a script: attempt i gets step i. Running past the end of the
/// script is an error.
pub struct MockRunner {
    steps: Vec<MockStep>,
    next: Mutex<usize>,
    timeout: Option<Duration>,
    markers: MarkerTable,
    excerpt_chars: usize,
}

impl MockRunner {
    pub fn new(steps: Vec<MockStep>) -> Self {
        Self {
            steps,
            next: Mutex::new(0),
            timeout: None,
            markers: MarkerTable::default(),
            excerpt_chars: DEFAULT_EXCERPT_CHARS,
        }
    }

    /// A script file is a JSON array of steps.
    pub fn from_file(path: &Path) -> Result<Self, RunnerError> {
        let io = |source| RunnerError::Io {
            context: format!("reading mock script {}", path.display()),
            source,
        };
        let text = std::fs::read_to_string(path).map_err(io)?;
        let steps = serde_json::from_str(&text).map_err(|e| io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
        Ok(Self::new(steps))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    pub fn with_markers(mut self, markers: MarkerTable) -> Self {
        self.markers = markers;
        self
    }

    pub fn with_excerpt_chars(mut self, n: usize) -> Self {
        self.excerpt_chars = n;
        self
    }

    /// Attempts made so far.
    pub fn attempts(&self) -> usize {
        *self.next.lock().unwrap()
    }
}

impl Runner for MockRunner {
    fn execute(&self, workdir: &Path, main_card: &str) -> Result<RunResult, RunnerError> {
        let card = workdir.join(main_card);
        if !card.is_file() {
            return Err(RunnerError::MissingCard(card));
        }
        let step = {
            let mut next = self.next.lock().unwrap();
            let step = self
                .steps
                .get(*next)
                .cloned()
                .ok_or(RunnerError::ScriptExhausted { attempt: *next + 1 })?;
            *next += 1;
            step
        };
        let start = Instant::now();
        let want = Duration::from_secs_f64(step.sleep_seconds.max(0.0));
        let timed_out = self.timeout.is_some_and(|t| want > t);
        let sleep = match self.timeout {
            Some(t) if timed_out => t,
            _ => want,
        };
        if !sleep.is_zero() {
            std::thread::sleep(sleep);
        }
        let exit_code = if timed_out { -1 } else { step.exit_code };
        Ok(classify(
            &self.markers,
            exit_code,
            timed_out,
            &step.stdout,
            &step.stderr,
            self.excerpt_chars,
            start.elapsed(),
        ))
    }
}
