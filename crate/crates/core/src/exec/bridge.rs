use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{self, ClientFrame, ExecErrorInfo, ExecRequest, ExecResult, HostFrame};
use super::{
    list_files, next_session_id, ExecError, ExecOutcome, Session, SessionConfig, SessionFactory, Workdir,
    POLICY_VIOLATION, TIMEOUT,
};
use crate::tools::{ToolContext, ToolHost, ToolOutput};

const STDERR_TAIL_LINES: usize = 50;

enum Incoming {
    Frame(HostFrame),
    Garbage(String),
    Eof,
}

struct HostProcess {
    child: Child,
    stdin: ChildStdin,
    frames: Receiver<Incoming>,
    stderr_tail: Arc<Mutex<VecDeque<String>>>,
    stderr_reader: thread::JoinHandle<()>,
}

impl HostProcess {
    fn spawn(cfg: &SessionConfig, workdir: &Path) -> Result<Self, ExecError> {
        let (program, args) = cfg
            .launch
            .split_first()
            .ok_or_else(|| ExecError::SpawnFailure("no launch command configured".into()))?;
        let mut cmd = Command::new(program);
        cmd.args(args)
            .arg("--workdir")
            .arg(workdir)
            .arg("--allow")
            .arg(cfg.allowlist.join(","))
            .current_dir(workdir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if cfg.allow_subprocess {
            cmd.arg("--allow-subprocess");
        }
        let mut child = cmd
            .spawn()
            .map_err(|e| ExecError::SpawnFailure(format!("{program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");

        let (tx, frames) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            let mut line = String::new();
            loop {
                line.clear();
                match reader.read_line(&mut line) {
                    Ok(0) | Err(_) => {
                        let _ = tx.send(Incoming::Eof);
                        return;
                    }
                    Ok(_) => {
                        let msg = match protocol::decode::<HostFrame>(&line) {
                            Ok(frame) => Incoming::Frame(frame),
                            Err(_) => Incoming::Garbage(line.trim_end().to_owned()),
                        };
                        if tx.send(msg).is_err() {
                            return;
                        }
                    }
                }
            }
        });

        let stderr_tail = Arc::new(Mutex::new(VecDeque::new()));
        let tail = stderr_tail.clone();
        let stderr_reader = thread::spawn(move || {
            let mut buf = String::new();
            let mut reader = BufReader::new(stderr);
            while reader.read_line(&mut buf).unwrap_or(0) > 0 {
                let mut t = tail.lock().unwrap();
                if t.len() == STDERR_TAIL_LINES {
                    t.pop_front();
                }
                t.push_back(buf.trim_end().to_owned());
                buf.clear();
            }
            let _ = reader.read_to_string(&mut buf);
        });

        let mut host = HostProcess { child, stdin, frames, stderr_tail, stderr_reader };
        match host.frames.recv_timeout(cfg.handshake_timeout) {
            Ok(Incoming::Frame(HostFrame::Ready { protocol, .. })) if protocol == protocol::PROTOCOL_VERSION => {
                Ok(host)
            }
            Ok(Incoming::Frame(HostFrame::Ready { protocol, .. })) => {
                host.kill();
                Err(ExecError::SpawnFailure(format!("host speaks protocol {protocol}")))
            }
            Ok(Incoming::Eof) => {
                let _ = host.child.wait();
                host.settle_stderr();
                Err(ExecError::SpawnFailure(format!("host exited during handshake: {}", host.stderr())))
            }
            Ok(_) => {
                host.kill();
                Err(ExecError::SpawnFailure("unexpected frame before ready".into()))
            }
            Err(_) => {
                host.kill();
                Err(ExecError::HandshakeTimeout(cfg.handshake_timeout))
            }
        }
    }

    fn send(&mut self, frame: &ClientFrame) -> std::io::Result<()> {
        self.stdin.write_all(protocol::encode(frame).as_bytes())?;
        self.stdin.flush()
    }

    /// Give the stderr reader a moment to drain after the host exited.
    fn settle_stderr(&self) {
        let deadline = Instant::now() + Duration::from_millis(500);
        while !self.stderr_reader.is_finished() && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(2));
        }
    }

    fn stderr(&self) -> String {
        self.stderr_tail.lock().unwrap().iter().cloned().collect::<Vec<_>>().join("\n")
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A session backed by an external sandbox host process.
pub struct ProcessSession {
    id: String,
    cfg: SessionConfig,
    workdir: Workdir,
    host: Option<HostProcess>,
    next_request: u64,
}

impl ProcessSession {
    pub fn open(cfg: &SessionConfig) -> Result<Self, ExecError> {
        let id = next_session_id("proc");
        let workdir = Workdir::create(cfg.workdir_root.as_deref(), &id)?;
        if cfg.allowlist.iter().any(|m| m == "os") {
            tracing::warn!(session = %id, "allowlist includes `os`; generated code can reach the filesystem");
        }
        let host = HostProcess::spawn(cfg, workdir.path())?;
        Ok(ProcessSession { id, cfg: cfg.clone(), workdir, host: Some(host), next_request: 0 })
    }

    fn restart(&mut self) -> Result<(), ExecError> {
        if let Some(mut host) = self.host.take() {
            host.kill();
        }
        self.host = Some(HostProcess::spawn(&self.cfg, self.workdir.path())?);
        Ok(())
    }

    fn dead(&mut self, why: &str) -> ExecError {
        let detail = match self.host.take() {
            Some(mut host) => {
                host.kill();
                host.settle_stderr();
                let stderr = host.stderr();
                if stderr.is_empty() { why.to_owned() } else { format!("{why}; stderr: {stderr}") }
            }
            None => why.to_owned(),
        };
        ExecError::SessionDead(detail)
    }
}

impl Session for ProcessSession {
    fn id(&self) -> &str {
        &self.id
    }

    fn workdir(&self) -> &Path {
        self.workdir.path()
    }

    fn execute(&mut self, code: &str, tools: &dyn ToolHost) -> Result<ExecOutcome, ExecError> {
        if self.host.is_none() {
            return Err(ExecError::SessionDead("session closed".into()));
        }
        self.next_request += 1;
        let id = format!("r{}", self.next_request);
        if let Some(module) = self.cfg.policy().first_violation(code) {
            let result = ExecResult {
                id,
                error: Some(ExecErrorInfo::new(POLICY_VIOLATION, format!("import of `{module}` is not allowed"))),
                ..Default::default()
            };
            return Ok(ExecOutcome { result, final_answer: None });
        }

        let before = list_files(self.workdir.path());
        let ctx = ToolContext::new(self.workdir.path());
        let started = Instant::now();
        let exec = ClientFrame::Execute(ExecRequest { id: id.clone(), code: code.to_owned() });
        if self.host.as_mut().unwrap().send(&exec).is_err() {
            return Err(self.dead("write to host failed"));
        }

        let mut final_answer = None;
        let mut deadline = Instant::now() + self.cfg.execute_timeout;
        loop {
            let wait = deadline.saturating_duration_since(Instant::now());
            let incoming = self.host.as_ref().unwrap().frames.recv_timeout(wait);
            match incoming {
                Ok(Incoming::Frame(HostFrame::ToolCall { id: call_id, name, args })) => {
                    let tool_started = Instant::now();
                    let reply = match tools.call(&name, &args, &ctx) {
                        Ok(output) => {
                            if let ToolOutput::FinalAnswer(answer) = &output {
                                final_answer = Some(answer.clone());
                            }
                            ClientFrame::tool_ok(call_id, &output)
                        }
                        Err(e) => ClientFrame::tool_err(call_id, e.to_string()),
                    };
                    // time spent in tools does not count against the interpreter
                    deadline += tool_started.elapsed();
                    if self.host.as_mut().unwrap().send(&reply).is_err() {
                        return Err(self.dead("write to host failed"));
                    }
                }
                Ok(Incoming::Frame(HostFrame::Result(mut result))) => {
                    if result.id != id {
                        return Err(self.dead(&format!("result id {} does not match request {id}", result.id)));
                    }
                    let after = list_files(self.workdir.path());
                    let mut created: std::collections::BTreeSet<String> =
                        after.difference(&before).cloned().collect();
                    created.extend(result.files_created.drain(..));
                    result.files_created = created.into_iter().collect();
                    return Ok(ExecOutcome { result, final_answer });
                }
                Ok(Incoming::Frame(HostFrame::Ready { .. })) => {
                    return Err(self.dead("unexpected ready frame"));
                }
                Ok(Incoming::Garbage(line)) => {
                    return Err(self.dead(&format!("protocol desync: {line}")));
                }
                Ok(Incoming::Eof) | Err(RecvTimeoutError::Disconnected) => {
                    return Err(self.dead("host exited"));
                }
                Err(RecvTimeoutError::Timeout) => {
                    let limit = self.cfg.execute_timeout;
                    self.restart()?;
                    let result = ExecResult {
                        id,
                        error: Some(ExecErrorInfo::new(
                            TIMEOUT,
                            format!("execution exceeded {} ms; interpreter restarted and state was reset", limit.as_millis()),
                        )),
                        duration_ms: started.elapsed().as_millis() as u64,
                        state_reset: true,
                        ..Default::default()
                    };
                    return Ok(ExecOutcome { result, final_answer });
                }
            }
        }
    }
}

impl Drop for ProcessSession {
    fn drop(&mut self) {
        if let Some(mut host) = self.host.take() {
            let _ = host.send(&ClientFrame::Shutdown);
            let deadline = Instant::now() + Duration::from_millis(200);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = host.child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(5));
            }
            host.kill();
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProcessFactory {
    pub cfg: SessionConfig,
}

impl ProcessFactory {
    pub fn new(cfg: SessionConfig) -> Self {
        ProcessFactory { cfg }
    }
}

impl SessionFactory for ProcessFactory {
    fn open(&self) -> Result<Box<dyn Session>, ExecError> {
        Ok(Box::new(ProcessSession::open(&self.cfg)?))
    }
}
