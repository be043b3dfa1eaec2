use std::io::{self, Read};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

/// A fully resolved external command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Invocation {
    pub program: String,
    pub args: Vec<String>,
    pub working_dir: Option<PathBuf>,
    pub env: Vec<(String, String)>,
    pub timeout: Option<Duration>,
}

impl Invocation {
    /// Shell-style rendering, for diagnostics only.
    pub fn display(&self) -> String {
        std::iter::once(&self.program)
            .chain(&self.args)
            .map(|a| shlex::try_quote(a).map(|q| q.into_owned()).unwrap_or_else(|_| a.clone()))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Exited(i32),
    /// Killed by a signal it did not ask for.
    Signaled,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessReport {
    pub termination: Termination,
    pub stdout: String,
    pub stderr: String,
}

impl ProcessReport {
    pub fn success(&self) -> bool {
        self.termination == Termination::Exited(0)
    }
}

/// Launches external processes. Tests substitute counting or scripted
/// launchers.
pub trait ProcessLauncher: Sync {
    fn launch(&self, invocation: &Invocation) -> io::Result<ProcessReport>;
}

/// Runs commands with `std::process`, capturing both output streams.
///
/// On Unix the child leads its own process group so a timeout kills any
/// grandchildren it spawned as well.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemLauncher;

type Sink = Arc<Mutex<Vec<u8>>>;

fn drain<R: Read + Send + 'static>(src: Option<R>) -> (Sink, Option<thread::JoinHandle<()>>) {
    let sink: Sink = Arc::default();
    let handle = src.map(|mut r| {
        let sink = Arc::clone(&sink);
        thread::spawn(move || {
            let mut buf = [0u8; 8192];
            while let Ok(n) = r.read(&mut buf) {
                if n == 0 {
                    break;
                }
                sink.lock().unwrap_or_else(|e| e.into_inner()).extend_from_slice(&buf[..n]);
            }
        })
    });
    (sink, handle)
}

fn collect(sink: &Sink) -> String {
    String::from_utf8_lossy(&sink.lock().unwrap_or_else(|e| e.into_inner())).into_owned()
}

#[cfg(unix)]
fn kill_group(child: &std::process::Child) {
    // SAFETY: kill(2) with a negative pid signals the process group we created.
    unsafe {
        libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
    }
}

#[cfg(not(unix))]
fn kill_group(_child: &std::process::Child) {}

impl ProcessLauncher for SystemLauncher {
    fn launch(&self, inv: &Invocation) -> io::Result<ProcessReport> {
        let mut cmd = Command::new(&inv.program);
        cmd.args(&inv.args)
            .envs(inv.env.iter().map(|(k, v)| (k, v)))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Some(dir) = &inv.working_dir {
            cmd.current_dir(dir);
        }
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }
        let mut child = cmd.spawn()?;
        let (out, out_h) = drain(child.stdout.take());
        let (err, err_h) = drain(child.stderr.take());

        let status = match inv.timeout {
            Some(t) => child.wait_timeout(t)?,
            None => Some(child.wait()?),
        };
        let termination = match status {
            Some(s) => match s.code() {
                Some(code) => Termination::Exited(code),
                None => Termination::Signaled,
            },
            None => {
                kill_group(&child);
                let _ = child.kill();
                child.wait()?;
                Termination::TimedOut
            }
        };

        // A background grandchild may still hold the pipes open; give the
        // readers a moment and then take whatever arrived.
        let deadline = Instant::now() + Duration::from_secs(2);
        for h in [out_h, err_h].into_iter().flatten() {
            while !h.is_finished() && Instant::now() < deadline {
                thread::sleep(Duration::from_millis(5));
            }
            if h.is_finished() {
                let _ = h.join();
            }
        }
        Ok(ProcessReport { termination, stdout: collect(&out), stderr: collect(&err) })
    }
}
