use super::{RunJob, RunReply, Runner, RunnerError, Termination};
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

/// Runs an external shim speaking the runner protocol: the JSON request
/// goes to its stdin, one JSON reply comes back on stdout. The shim is
/// expected to enforce the suite timeout itself; past `timeout + grace`
/// the child is killed and the outcome is reported as a timeout.
#[derive(Debug, Clone)]
pub struct ProcessRunner {
    pub program: String,
    pub args: Vec<String>,
    pub grace: Duration,
}

impl ProcessRunner {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
            grace: Duration::from_secs(2),
        }
    }

    /// Splits a command line on whitespace: `"python3 shim.py"`.
    pub fn from_command_line(cmd: &str) -> Option<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(Self::new(program, parts.collect()))
    }
}

fn drain<R: Read + Send + 'static>(mut r: R) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        buf
    })
}

impl Runner for ProcessRunner {
    fn execute(&self, job: &RunJob<'_>) -> Result<RunReply, RunnerError> {
        let payload =
            serde_json::to_vec(job.request).map_err(|e| RunnerError::Protocol(e.to_string()))?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .current_dir(job.workdir)
            .env("PYTHONHASHSEED", job.request.seed.to_string())
            .env("TZ", "UTC")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(RunnerError::Spawn)?;

        let started = Instant::now();
        let stdout = drain(child.stdout.take().expect("piped stdout"));
        let stderr = drain(child.stderr.take().expect("piped stderr"));
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            // A runner that exits without reading its input shows up below.
            if let Err(e) = stdin.write_all(&payload) {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    let _ = child.kill();
                    return Err(RunnerError::Io(e));
                }
            }
        }

        let deadline = Duration::from_secs_f64(job.request.timeout) + self.grace;
        let status = loop {
            if let Some(status) = child.try_wait().map_err(RunnerError::Io)? {
                break Some(status);
            }
            if started.elapsed() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            thread::sleep(Duration::from_millis(5));
        };
        let wall_time = started.elapsed().as_secs_f64();

        let Some(status) = status else {
            // Output pipes may be held open by grandchildren; do not wait on them.
            return Ok(RunReply {
                results: Vec::new(),
                wall_time,
                terminated: Termination::Timeout,
                shim_version: None,
            });
        };
        let out = stdout.join().unwrap_or_default();
        let err = String::from_utf8_lossy(&stderr.join().unwrap_or_default()).into_owned();
        match status.code() {
            Some(0) => {}
            Some(code) => return Err(RunnerError::Fault { code, stderr: err }),
            None => {
                log::warn!("runner killed by signal: {err}");
                return Ok(RunReply {
                    results: Vec::new(),
                    wall_time,
                    terminated: Termination::Crash,
                    shim_version: None,
                });
            }
        }
        serde_json::from_slice(&out).map_err(|e| {
            RunnerError::Protocol(format!("{e}; stdout was {}", String::from_utf8_lossy(&out)))
        })
    }
}
