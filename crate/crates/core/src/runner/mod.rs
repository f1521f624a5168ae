//! Running card sets against a solver (or a scripted stand-in) and turning
//! failures into comparable error signatures.

mod markers;
mod mock;
mod process;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use markers::{default_marker_specs, normalize_line, MarkerError, MarkerSpec, MarkerTable};
pub use mock::{MockRunner, MockStep};
pub use process::{ExecConfig, ProcessRunner};

/// Characters of each stream kept for prompts (the tail).
pub const DEFAULT_EXCERPT_CHARS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    ParseError,
    SetupError,
    ConvergenceFailure,
    RuntimeError,
    Timeout,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Success => "success",
            RunStatus::ParseError => "parse_error",
            RunStatus::SetupError => "setup_error",
            RunStatus::ConvergenceFailure => "convergence_failure",
            RunStatus::RuntimeError => "runtime_error",
            RunStatus::Timeout => "timeout",
        }
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub status: RunStatus,
    /// Process exit code; -1 when the process was killed or has none.
    pub exit_code: i32,
    pub stdout_excerpt: String,
    pub stderr_excerpt: String,
    /// Wall-clock seconds.
    pub duration: f64,
}

/// Two failures are "the same error" when their signatures are equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ErrorSignature {
    pub category: RunStatus,
    pub key_line: String,
}

impl fmt::Display for ErrorSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.category, self.key_line)
    }
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("solver executable not found: {}", .0.display())]
    MissingExecutable(PathBuf),
    #[error("main card {} does not exist", .0.display())]
    MissingCard(PathBuf),
    #[error("mock script has no outcome for attempt {attempt}")]
    ScriptExhausted { attempt: usize },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// Executes the card set in `workdir`, starting from `main_card`.
pub trait Runner: Send + Sync {
    fn execute(&self, workdir: &Path, main_card: &str) -> Result<RunResult, RunnerError>;
}

/// The last `max_chars` characters of `text`.
pub fn excerpt(text: &str, max_chars: usize) -> String {
    let n = text.chars().count();
    if n <= max_chars {
        return text.to_string();
    }
    text.chars().skip(n - max_chars).collect()
}

/// Builds a result from captured streams. A marker match decides the status
/// even when the exit code is 0.
pub fn classify(
    markers: &MarkerTable,
    exit_code: i32,
    timed_out: bool,
    stdout: &str,
    stderr: &str,
    excerpt_chars: usize,
    duration: Duration,
) -> RunResult {
    let stdout_excerpt = excerpt(stdout, excerpt_chars);
    let stderr_excerpt = excerpt(stderr, excerpt_chars);
    let status = if timed_out {
        RunStatus::Timeout
    } else if let Some((category, _)) = markers.classify(&stdout_excerpt, &stderr_excerpt) {
        category
    } else if exit_code == 0 {
        RunStatus::Success
    } else {
        RunStatus::RuntimeError
    };
    RunResult {
        status,
        exit_code,
        stdout_excerpt,
        stderr_excerpt,
        duration: duration.as_secs_f64(),
    }
}

fn last_nonempty(text: &str) -> Option<&str> {
    text.lines().rev().find(|l| !l.trim().is_empty())
}

/// The signature of a failed run; `None` for a successful one.
pub fn extract_error(result: &RunResult, markers: &MarkerTable) -> Option<ErrorSignature> {
    match result.status {
        RunStatus::Success => None,
        RunStatus::Timeout => Some(ErrorSignature {
            category: RunStatus::Timeout,
            key_line: "wall-clock limit exceeded".into(),
        }),
        _ => {
            if let Some((category, line)) = markers.classify(&result.stdout_excerpt, &result.stderr_excerpt) {
                return Some(ErrorSignature {
                    category,
                    key_line: normalize_line(&line),
                });
            }
            let line = last_nonempty(&result.stderr_excerpt)
                .or_else(|| last_nonempty(&result.stdout_excerpt))
                .map(str::to_string)
                .unwrap_or_else(|| format!("exit code {}", result.exit_code));
            Some(ErrorSignature {
                category: RunStatus::RuntimeError,
                key_line: normalize_line(&line),
            })
        }
    }
}

/// Writes `(filename, content)` pairs into `workdir`.
pub fn write_cards<'a>(
    workdir: &Path,
    cards: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> Result<Vec<PathBuf>, RunnerError> {
    std::fs::create_dir_all(workdir).map_err(|source| RunnerError::Io {
        context: format!("creating {}", workdir.display()),
        source,
    })?;
    let mut out = Vec::new();
    for (name, content) in cards {
        let path = workdir.join(name);
        std::fs::write(&path, content).map_err(|source| RunnerError::Io {
            context: format!("writing {}", path.display()),
            source,
        })?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn failed(stdout: &str, stderr: &str, code: i32) -> RunResult {
        classify(&MarkerTable::default(), code, false, stdout, stderr, DEFAULT_EXCERPT_CHARS, Duration::ZERO)
    }

    #[test]
    fn excerpt_keeps_tail() {
        assert_eq!(excerpt("abcdef", 3), "def");
        assert_eq!(excerpt("ab", 3), "ab");
        assert_eq!(excerpt("ééé", 2), "éé");
    }

    #[test]
    fn success_needs_zero_exit_and_no_marker() {
        assert_eq!(failed("done", "", 0).status, RunStatus::Success);
        assert_eq!(failed("Solve Did NOT Converge!", "", 0).status, RunStatus::ConvergenceFailure);
        assert_eq!(failed("", "segfault", 139).status, RunStatus::RuntimeError);
        assert!(extract_error(&failed("done", "", 0), &MarkerTable::default()).is_none());
    }

    #[test]
    fn unused_parameter_signature() {
        let r = failed("", "*** ERROR ***\n/work/run3/input.i:12: unused parameter 'Kernels/diff/kk'\n", 1);
        let sig = extract_error(&r, &MarkerTable::default()).unwrap();
        assert_eq!(sig.category, RunStatus::SetupError);
        assert_eq!(sig.key_line, "input.i:#: unused parameter 'Kernels/diff/kk'");
    }

    #[test]
    fn unmatched_falls_back_to_last_stderr_line() {
        let r = failed("step 1\n", "warning at t=0.5\nSegmentation fault at 0x7ff3\n\n", 139);
        let sig = extract_error(&r, &MarkerTable::default()).unwrap();
        assert_eq!(sig.category, RunStatus::RuntimeError);
        assert_eq!(sig.key_line, "Segmentation fault at #x#ff#");
        let silent = failed("", "", 3);
        assert_eq!(extract_error(&silent, &MarkerTable::default()).unwrap().key_line, "exit code #");
    }

    proptest! {
        #[test]
        fn masking_ignores_numbers_and_paths(
            a in 0u32..100_000, b in 0u32..100_000,
            x in -1.0e6f64..1.0e6, dir1 in "[a-z]{1,8}", dir2 in "[a-z]{1,8}",
        ) {
            let line = |n: u32, v: f64, d: &str| format!(
                "*** ERROR ***\n/home/{d}/case/input.i:{n}: value {v} out of range"
            );
            let s1 = extract_error(&failed("", &line(a, x, &dir1), 1), &MarkerTable::default()).unwrap();
            let s2 = extract_error(&failed("", &line(b, -x * 3.5, &dir2), 1), &MarkerTable::default()).unwrap();
            prop_assert_eq!(s1, s2);
        }

        #[test]
        fn classification_is_deterministic(out in "[ -~\n]{0,200}", err in "[ -~\n]{0,200}", code in -2i32..3) {
            let r1 = failed(&out, &err, code);
            let r2 = failed(&out, &err, code);
            prop_assert_eq!(&r1, &r2);
            let t = MarkerTable::default();
            prop_assert_eq!(extract_error(&r1, &t), extract_error(&r2, &t));
            prop_assert_eq!(r1.status == RunStatus::Success, extract_error(&r1, &t).is_none());
        }
    }
}
