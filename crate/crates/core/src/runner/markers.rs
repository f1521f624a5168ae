use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::RunStatus;

/// One row of the marker table as written in a config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub category: RunStatus,
    pub pattern: String,
    /// The key line is the next non-empty line rather than the match itself
    /// (for banner lines that carry no information of their own).
    #[serde(default)]
    pub key_is_next_line: bool,
}

#[derive(Debug, Clone)]
struct Marker {
    category: RunStatus,
    regex: Regex,
    key_is_next_line: bool,
}

/// Ordered error markers; the first marker with any matching output line
/// decides the category.
#[derive(Debug, Clone)]
pub struct MarkerTable {
    markers: Vec<Marker>,
}

#[derive(Debug, thiserror::Error)]
pub enum MarkerError {
    #[error("marker {index}: {source}")]
    Pattern { index: usize, source: regex::Error },
    #[error("marker {index}: category must be an error category, not {category:?}")]
    Category { index: usize, category: RunStatus },
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

fn spec(category: RunStatus, pattern: &str, key_is_next_line: bool) -> MarkerSpec {
    MarkerSpec {
        category,
        pattern: pattern.to_string(),
        key_is_next_line,
    }
}

/// Parse-stage messages come first so that a parse error reported under the
/// generic fatal banner is still classified as a parse error.
pub fn default_marker_specs() -> Vec<MarkerSpec> {
    use RunStatus::*;
    vec![
        spec(ParseError, r"(?i)\bsyntax error\b", false),
        spec(ParseError, r"(?i)\bparse error\b", false),
        spec(ParseError, r"(?i)missing closing '\[\]'", false),
        spec(ParseError, r"(?i)unexpected (token|character)", false),
        spec(ParseError, r"(?i)unterminated string", false),
        spec(ConvergenceFailure, r"(?i)did not converge", false),
        spec(ConvergenceFailure, r"(?i)\bsolve failed\b", false),
        spec(ConvergenceFailure, r"(?i)\bdiverged", false),
        spec(ConvergenceFailure, r"(?i)time ?step.*(below|less than).*(min|dtmin)", false),
        spec(SetupError, r"^\s*\*\*\* ERROR \*\*\*\s*$", true),
        spec(SetupError, r"\*\*\* ERROR \*\*\*", false),
        spec(SetupError, r"(?i)^\s*error:", false),
        spec(SetupError, r"(?i)unused parameter", false),
    ]
}

static DEFAULT_TABLE: LazyLock<MarkerTable> =
    LazyLock::new(|| MarkerTable::from_specs(&default_marker_specs()).expect("default markers are valid"));

impl Default for MarkerTable {
    fn default() -> Self {
        DEFAULT_TABLE.clone()
    }
}

impl MarkerTable {
    pub fn from_specs(specs: &[MarkerSpec]) -> Result<Self, MarkerError> {
        let markers = specs
            .iter()
            .enumerate()
            .map(|(index, s)| {
                if matches!(s.category, RunStatus::Success | RunStatus::Timeout) {
                    return Err(MarkerError::Category {
                        index,
                        category: s.category,
                    });
                }
                Ok(Marker {
                    category: s.category,
                    regex: Regex::new(&s.pattern).map_err(|source| MarkerError::Pattern { index, source })?,
                    key_is_next_line: s.key_is_next_line,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { markers })
    }

    /// Reads a JSON array of [`MarkerSpec`].
    pub fn load(path: &Path) -> Result<Self, MarkerError> {
        let err = |message: String| MarkerError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let specs: Vec<MarkerSpec> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Self::from_specs(&specs)
    }

    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    /// The category and raw key line of the first matching marker. stderr
    /// lines are scanned before stdout lines.
    pub fn classify(&self, stdout: &str, stderr: &str) -> Option<(RunStatus, String)> {
        let lines: Vec<&str> = stderr.lines().chain(stdout.lines()).collect();
        for m in &self.markers {
            for (i, line) in lines.iter().enumerate() {
                if !m.regex.is_match(line) {
                    continue;
                }
                let key = if m.key_is_next_line {
                    lines[i + 1..]
                        .iter()
                        .find(|l| !l.trim().is_empty())
                        .copied()
                        .unwrap_or(line)
                } else {
                    line
                };
                return Some((m.category, key.to_string()));
            }
        }
        None
    }
}

static ABS_PATH: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(^|[\s'"(=:,\[])(?:[A-Za-z]:)?(?:[/\\][^\s/\\'"():,\[\]]+)*[/\\]([^\s/\\'"():,\[\]]+)"#).unwrap()
});
static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[-+]?\d+(?:\.\d*)?(?:[eE][-+]?\d+)?").unwrap());
static SPACES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+").unwrap());

/// Masks the parts of an error line that vary between otherwise identical
/// failures: absolute paths become their basename, numeric literals `#`.
pub fn normalize_line(line: &str) -> String {
    let no_paths = ABS_PATH.replace_all(line, "$1$2");
    let no_numbers = NUMBER.replace_all(&no_paths, "#");
    SPACES.replace_all(no_numbers.trim(), " ").into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_numbers_and_paths() {
        assert_eq!(
            normalize_line("  /home/a/run/input.i:12.3: unused parameter 'kk' = 1.5e-3 "),
            "input.i:#: unused parameter 'kk' = #"
        );
        assert_eq!(
            normalize_line("/tmp/x/input.i:14: bad"),
            normalize_line("/scratch/other/input.i:99: bad")
        );
        assert_eq!(normalize_line("relative/path.i stays"), "relative/path.i stays");
    }

    #[test]
    fn banner_takes_next_line() {
        let t = MarkerTable::default();
        let (cat, key) = t
            .classify("", "\n*** ERROR ***\n\nunused parameter 'Kernels/diff/kk'\n")
            .unwrap();
        assert_eq!(cat, RunStatus::SetupError);
        assert_eq!(key, "unused parameter 'Kernels/diff/kk'");
    }

    #[test]
    fn parse_error_beats_banner() {
        let t = MarkerTable::default();
        let (cat, key) = t.classify("", "*** ERROR ***\ninput.i:3: syntax error, unexpected ']'\n").unwrap();
        assert_eq!(cat, RunStatus::ParseError);
        assert!(key.starts_with("input.i:3"));
    }

    #[test]
    fn convergence_in_stdout() {
        let t = MarkerTable::default();
        let (cat, _) = t.classify(" 0 Nonlinear |R| = 1\nSolve Did NOT Converge!\n", "").unwrap();
        assert_eq!(cat, RunStatus::ConvergenceFailure);
        assert!(t.classify("Solve Converged!\n", "").is_none());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(
            MarkerTable::from_specs(&[spec(RunStatus::SetupError, "(", false)]),
            Err(MarkerError::Pattern { index: 0, .. })
        ));
        assert!(matches!(
            MarkerTable::from_specs(&[spec(RunStatus::Success, "x", false)]),
            Err(MarkerError::Category { .. })
        ));
    }

    #[test]
    fn loads_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("markers.json");
        std::fs::write(&p, r#"[{"category":"convergence_failure","pattern":"(?i)nan detected"}]"#).unwrap();
        let t = MarkerTable::load(&p).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.classify("NaN detected", "").unwrap().0, RunStatus::ConvergenceFailure);
    }
}
