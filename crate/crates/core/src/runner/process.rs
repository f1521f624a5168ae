use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::{classify, MarkerTable, RunResult, Runner, RunnerError, DEFAULT_EXCERPT_CHARS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecConfig {
    pub executable: PathBuf,
    /// `{main_card}` is replaced by the main card's file name.
    pub args: Vec<String>,
    pub timeout_seconds: f64,
    pub excerpt_chars: usize,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            executable: PathBuf::from("moose-opt"),
            args: vec!["-i".into(), "{main_card}".into()],
            timeout_seconds: 600.0,
            excerpt_chars: DEFAULT_EXCERPT_CHARS,
        }
    }
}

/// Runs a real solver executable in the card directory.
pub struct ProcessRunner {
    config: ExecConfig,
    markers: MarkerTable,
}

impl ProcessRunner {
    pub fn new(config: ExecConfig, markers: MarkerTable) -> Self {
        Self { config, markers }
    }

    fn executable(&self) -> PathBuf {
        let exe = &self.config.executable;
        // a relative path with a directory part is taken relative to our cwd,
        // not the card directory the child runs in
        if exe.is_relative() && exe.components().count() > 1 {
            if let Ok(cwd) = std::env::current_dir() {
                return cwd.join(exe);
            }
        }
        exe.clone()
    }
}

fn drain(stream: Option<impl Read + Send + 'static>) -> std::thread::JoinHandle<Vec<u8>> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut s) = stream {
            let _ = s.read_to_end(&mut buf);
        }
        buf
    })
}

impl Runner for ProcessRunner {
    fn execute(&self, workdir: &Path, main_card: &str) -> Result<RunResult, RunnerError> {
        let card = workdir.join(main_card);
        if !card.is_file() {
            return Err(RunnerError::MissingCard(card));
        }
        let exe = self.executable();
        let args: Vec<String> = self.config.args.iter().map(|a| a.replace("{main_card}", main_card)).collect();
        let start = Instant::now();
        let mut child = Command::new(&exe)
            .args(&args)
            .current_dir(workdir)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| match source.kind() {
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied => {
                    RunnerError::MissingExecutable(exe.clone())
                }
                _ => RunnerError::Io {
                    context: format!("starting {}", exe.display()),
                    source,
                },
            })?;
        let out = drain(child.stdout.take());
        let err = drain(child.stderr.take());

        let io = |source| RunnerError::Io {
            context: format!("waiting for {}", exe.display()),
            source,
        };
        let limit = Duration::from_secs_f64(self.config.timeout_seconds.max(0.0));
        let (exit_code, timed_out) = match child.wait_timeout(limit).map_err(io)? {
            Some(status) => (status.code().unwrap_or(-1), false),
            None => {
                let _ = child.kill();
                child.wait().map_err(io)?;
                (-1, true)
            }
        };
        let stdout = String::from_utf8_lossy(&out.join().unwrap_or_default()).into_owned();
        let stderr = String::from_utf8_lossy(&err.join().unwrap_or_default()).into_owned();
        Ok(classify(
            &self.markers,
            exit_code,
            timed_out,
            &stdout,
            &stderr,
            self.config.excerpt_chars,
            start.elapsed(),
        ))
    }
}
