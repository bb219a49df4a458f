//! A blocking client for one kernel: launch, execute cells, shut down.

use std::fs;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, warn};
use nbcheck_core::{CellOutput, ExecutionOutcome, ExecutionStatus};
use serde_json::{json, Value};

use crate::connection::ConnectionInfo;
use crate::error::KernelError;
use crate::kernelspec::{InterruptMode, KernelSpec};
use crate::wire::{Message, Signer};

const POLL_SLICE: Duration = Duration::from_millis(50);
const KERNEL_INFO_RETRY: Duration = Duration::from_millis(200);

#[derive(Debug, Clone)]
pub struct ClientOptions {
    /// How long an interrupted cell may take to wind down before the kernel is killed.
    pub interrupt_grace: Duration,
    /// How long a polite shutdown may take before the kernel is killed.
    pub shutdown_grace: Duration,
    pub heartbeat_interval: Duration,
    /// A heartbeat unanswered for this long marks the kernel dead.
    pub heartbeat_timeout: Duration,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            interrupt_grace: Duration::from_secs(5),
            shutdown_grace: Duration::from_secs(5),
            heartbeat_interval: Duration::from_secs(1),
            heartbeat_timeout: Duration::from_secs(10),
        }
    }
}

struct KernelProcess {
    child: Child,
    connection_file: PathBuf,
}

struct Heartbeat {
    alive: Arc<AtomicBool>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Heartbeat {
    fn spawn(
        ctx: &zmq::Context,
        endpoint: &str,
        interval: Duration,
        timeout: Duration,
    ) -> Result<Self, KernelError> {
        let socket = ctx.socket(zmq::REQ)?;
        socket.set_linger(0)?;
        socket.connect(endpoint)?;
        let alive = Arc::new(AtomicBool::new(true));
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let (alive, stop) = (alive.clone(), stop.clone());
            thread::Builder::new()
                .name("kernel-heartbeat".into())
                .spawn(move || heartbeat_loop(socket, &alive, &stop, interval, timeout))?
        };
        Ok(Self {
            alive,
            stop,
            thread: Some(thread),
        })
    }

    fn is_alive(&self) -> bool {
        self.alive.load(Ordering::SeqCst)
    }
}

impl Drop for Heartbeat {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

fn heartbeat_loop(
    socket: zmq::Socket,
    alive: &AtomicBool,
    stop: &AtomicBool,
    interval: Duration,
    timeout: Duration,
) {
    while !stop.load(Ordering::SeqCst) {
        if socket.send(&b"ping"[..], 0).is_err() {
            alive.store(false, Ordering::SeqCst);
            return;
        }
        let sent = Instant::now();
        loop {
            if stop.load(Ordering::SeqCst) {
                return;
            }
            match socket.poll(zmq::POLLIN, POLL_SLICE.as_millis() as i64) {
                Ok(n) if n > 0 => {
                    let _ = socket.recv_bytes(0);
                    break;
                }
                Ok(_) if sent.elapsed() < timeout => {}
                _ => {
                    warn!(
                        "kernel heartbeat unanswered for {:.1}s",
                        timeout.as_secs_f64()
                    );
                    alive.store(false, Ordering::SeqCst);
                    return;
                }
            }
        }
        let rest = Instant::now();
        while rest.elapsed() < interval {
            if stop.load(Ordering::SeqCst) {
                return;
            }
            thread::sleep(POLL_SLICE);
        }
    }
}

/// A connected kernel. Not shared: one cell executes at a time.
pub struct KernelHandle {
    shell: zmq::Socket,
    iopub: zmq::Socket,
    stdin: zmq::Socket,
    control: zmq::Socket,
    heartbeat: Option<Heartbeat>,
    process: Option<KernelProcess>,
    signer: Signer,
    session: String,
    hb_endpoint: String,
    interrupt_mode: InterruptMode,
    options: ClientOptions,
    kernel_info: Value,
    dead: bool,
    closed: bool,
    // Dropped last: sockets must be closed before the context terminates.
    ctx: zmq::Context,
}

impl std::fmt::Debug for KernelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelHandle")
            .field("session", &self.session)
            .field("pid", &self.pid())
            .field("dead", &self.dead)
            .finish_non_exhaustive()
    }
}

fn socket(
    ctx: &zmq::Context,
    kind: zmq::SocketType,
    endpoint: &str,
    identity: Option<&[u8]>,
) -> Result<zmq::Socket, KernelError> {
    let socket = ctx.socket(kind)?;
    socket.set_linger(0)?;
    if let Some(identity) = identity {
        socket.set_identity(identity)?;
    }
    if kind == zmq::SUB {
        socket.set_subscribe(b"")?;
    }
    socket.connect(endpoint)?;
    Ok(socket)
}

/// Drains every message currently queued on `socket`. Messages that fail
/// to decode (bad signature, broken framing) are logged and dropped.
fn drain(socket: &zmq::Socket, signer: &Signer, channel: &str) -> Vec<Message> {
    let mut messages = Vec::new();
    loop {
        match socket.recv_multipart(zmq::DONTWAIT) {
            Ok(frames) => match Message::decode(frames, signer) {
                Ok(msg) => messages.push(msg),
                Err(e) => warn!("dropping {channel} message: {e}"),
            },
            Err(zmq::Error::EAGAIN) => break,
            Err(e) => {
                warn!("{channel} recv failed: {e}");
                break;
            }
        }
    }
    messages
}

impl KernelHandle {
    /// Opens the client sockets for an already running kernel. Does not wait
    /// for the kernel to answer; see [`KernelHandle::wait_for_ready`].
    pub fn connect(info: &ConnectionInfo, options: ClientOptions) -> Result<Self, KernelError> {
        let ctx = zmq::Context::new();
        let session = uuid::Uuid::new_v4().simple().to_string();
        let identity = session.as_bytes();
        // shell and stdin share an identity so the kernel can route input
        // requests back to the client that asked.
        let shell = socket(
            &ctx,
            zmq::DEALER,
            &info.endpoint(info.shell_port),
            Some(identity),
        )?;
        let stdin = socket(
            &ctx,
            zmq::DEALER,
            &info.endpoint(info.stdin_port),
            Some(identity),
        )?;
        let control = socket(
            &ctx,
            zmq::DEALER,
            &info.endpoint(info.control_port),
            Some(identity),
        )?;
        let iopub = socket(&ctx, zmq::SUB, &info.endpoint(info.iopub_port), None)?;
        Ok(Self {
            shell,
            iopub,
            stdin,
            control,
            heartbeat: None,
            process: None,
            signer: Signer::new(info.key_bytes().to_vec()),
            session,
            hb_endpoint: info.endpoint(info.hb_port),
            interrupt_mode: InterruptMode::Message,
            options,
            kernel_info: Value::Null,
            dead: false,
            closed: false,
            ctx,
        })
    }

    pub fn session(&self) -> &str {
        &self.session
    }

    pub fn pid(&self) -> Option<u32> {
        self.process.as_ref().map(|p| p.child.id())
    }

    /// Content of the `kernel_info_reply` received during startup.
    pub fn kernel_info(&self) -> &Value {
        &self.kernel_info
    }

    pub fn is_dead(&self) -> bool {
        self.dead
    }

    fn send(&self, socket: &zmq::Socket, msg: &Message) -> Result<(), KernelError> {
        socket.send_multipart(msg.encode(&self.signer), 0)?;
        Ok(())
    }

    fn exit_status(&mut self) -> Option<String> {
        let process = self.process.as_mut()?;
        match process.child.try_wait() {
            Ok(Some(status)) => Some(status.to_string()),
            Ok(None) => None,
            Err(e) => Some(e.to_string()),
        }
    }

    fn heartbeat_lost(&self) -> bool {
        self.heartbeat.as_ref().is_some_and(|hb| !hb.is_alive())
    }

    /// Repeats `kernel_info_request` until the kernel replies on shell and
    /// something has arrived on iopub (so the subscription is live).
    pub fn wait_for_ready(&mut self, timeout: Duration) -> Result<(), KernelError> {
        let deadline = Instant::now() + timeout;
        let mut sent_ids: Vec<String> = Vec::new();
        let mut last_sent: Option<Instant> = None;
        let mut replied = false;
        let mut iopub_seen = false;

        while !(replied && iopub_seen) {
            if Instant::now() >= deadline {
                return Err(KernelError::StartupTimeout(timeout));
            }
            if let Some(status) = self.exit_status() {
                self.dead = true;
                return Err(KernelError::DiedDuringStartup(status));
            }
            if last_sent.is_none_or(|t| t.elapsed() >= KERNEL_INFO_RETRY) {
                let request = Message::new("kernel_info_request", &self.session, json!({}));
                sent_ids.push(request.header.msg_id.clone());
                self.send(&self.shell, &request)?;
                last_sent = Some(Instant::now());
            }
            let mut items = [
                self.shell.as_poll_item(zmq::POLLIN),
                self.iopub.as_poll_item(zmq::POLLIN),
            ];
            zmq::poll(&mut items, POLL_SLICE.as_millis() as i64)?;
            let (shell_ready, iopub_ready) = (items[0].is_readable(), items[1].is_readable());
            if shell_ready {
                for msg in drain(&self.shell, &self.signer, "shell") {
                    let ours = msg
                        .parent_msg_id()
                        .is_some_and(|id| sent_ids.iter().any(|s| s == id));
                    if ours && msg.msg_type() == "kernel_info_reply" {
                        self.kernel_info = msg.content;
                        replied = true;
                    }
                }
            }
            if iopub_ready && !drain(&self.iopub, &self.signer, "iopub").is_empty() {
                iopub_seen = true;
            }
        }

        self.heartbeat = Some(Heartbeat::spawn(
            &self.ctx,
            &self.hb_endpoint,
            self.options.heartbeat_interval,
            self.options.heartbeat_timeout,
        )?);
        Ok(())
    }

    /// Asks the kernel to abandon the running cell.
    pub fn interrupt(&mut self) -> Result<(), KernelError> {
        if let (InterruptMode::Signal, Some(pid)) = (self.interrupt_mode, self.pid()) {
            // SAFETY: plain kill(2) on a child we spawned and still own.
            let rc = unsafe { libc::kill(pid as libc::pid_t, libc::SIGINT) };
            if rc != 0 {
                return Err(std::io::Error::last_os_error().into());
            }
            return Ok(());
        }
        let request = Message::new("interrupt_request", &self.session, json!({}));
        self.send(&self.control, &request)
    }

    fn kill(&mut self) {
        self.dead = true;
        if let Some(process) = self.process.as_mut() {
            if let Err(e) = process.child.kill() {
                debug!("kill: {e}");
            }
            let _ = process.child.wait();
        }
    }

    /// Runs one cell and collects its outputs. Returns once both the
    /// `execute_reply` and the kernel's return to idle for this request have
    /// arrived, or on timeout or kernel death.
    pub fn execute(&mut self, source: &str, cell_timeout: Duration) -> ExecutionOutcome {
        let started = Instant::now();
        let finish = |status, outcome: ExecutionOutcome| ExecutionOutcome {
            status,
            duration: started.elapsed(),
            ..outcome
        };
        if self.dead || self.closed {
            return finish(
                ExecutionStatus::KernelDied,
                ExecutionOutcome::ok(Vec::new()),
            );
        }

        let request = Message::new(
            "execute_request",
            &self.session,
            json!({
                "code": source,
                "silent": false,
                "store_history": true,
                "user_expressions": {},
                "allow_stdin": false,
                "stop_on_error": true,
            }),
        );
        let request_id = request.header.msg_id.clone();
        if let Err(e) = self.send(&self.shell, &request) {
            warn!("execute_request send failed: {e}");
            self.dead = true;
            return finish(
                ExecutionStatus::KernelDied,
                ExecutionOutcome::ok(Vec::new()),
            );
        }

        let mut collected = Collected::default();
        let deadline = started + cell_timeout;
        let mut grace_deadline: Option<Instant> = None;
        let mut died = false;

        while !(collected.reply_seen && collected.idle_seen) {
            let now = Instant::now();
            if let Some(grace) = grace_deadline {
                if now >= grace {
                    warn!("kernel did not recover from interrupt; killing it");
                    self.kill();
                    break;
                }
            } else if now >= deadline {
                debug!("cell timed out after {:.1}s", cell_timeout.as_secs_f64());
                if let Err(e) = self.interrupt() {
                    warn!("interrupt failed: {e}");
                    self.kill();
                    break;
                }
                grace_deadline = Some(now + self.options.interrupt_grace);
            }
            if self.exit_status().is_some() || self.heartbeat_lost() {
                died = true;
                self.dead = true;
                break;
            }

            let mut items = [
                self.shell.as_poll_item(zmq::POLLIN),
                self.iopub.as_poll_item(zmq::POLLIN),
                self.stdin.as_poll_item(zmq::POLLIN),
            ];
            if let Err(e) = zmq::poll(&mut items, POLL_SLICE.as_millis() as i64) {
                warn!("poll failed: {e}");
                died = true;
                self.dead = true;
                break;
            }
            let ready = [
                items[0].is_readable(),
                items[1].is_readable(),
                items[2].is_readable(),
            ];
            if ready[1] {
                for msg in drain(&self.iopub, &self.signer, "iopub") {
                    if msg.parent_msg_id() == Some(request_id.as_str()) {
                        collected.on_iopub(&msg);
                    }
                }
            }
            if ready[0] {
                for msg in drain(&self.shell, &self.signer, "shell") {
                    if msg.parent_msg_id() == Some(request_id.as_str())
                        && msg.msg_type() == "execute_reply"
                    {
                        collected.on_reply(&msg.content);
                    }
                }
            }
            if ready[2] {
                for msg in drain(&self.stdin, &self.signer, "stdin") {
                    if msg.msg_type() == "input_request" {
                        collected.stdin_requested = true;
                        let reply = Message::reply_to(
                            &msg,
                            "input_reply",
                            json!({
                                "status": "error",
                                "ename": "StdinNotImplementedError",
                                "evalue": "input is not available during validation",
                                "traceback": [],
                                "value": "",
                            }),
                        );
                        if let Err(e) = self.send(&self.stdin, &reply) {
                            warn!("input_reply send failed: {e}");
                        }
                    }
                }
            }
        }

        let status = if grace_deadline.is_some() {
            ExecutionStatus::Timeout
        } else if died {
            ExecutionStatus::KernelDied
        } else if collected.errored() {
            ExecutionStatus::Error
        } else {
            ExecutionStatus::Ok
        };
        finish(status, collected.into_outcome())
    }

    /// Polite shutdown, then kill after the grace period. Idempotent.
    pub fn shutdown(&mut self) {
        if self.closed {
            return;
        }
        self.closed = true;
        self.heartbeat = None;

        if !self.dead && self.exit_status().is_none() {
            let request =
                Message::new("shutdown_request", &self.session, json!({"restart": false}));
            if let Err(e) = self.send(&self.control, &request) {
                debug!("shutdown_request: {e}");
            } else {
                let deadline = Instant::now() + self.options.shutdown_grace;
                'reply: while Instant::now() < deadline {
                    match self
                        .control
                        .poll(zmq::POLLIN, POLL_SLICE.as_millis() as i64)
                    {
                        Ok(n) if n > 0 => {
                            for msg in drain(&self.control, &self.signer, "control") {
                                if msg.parent_msg_id() == Some(request.header.msg_id.as_str()) {
                                    break 'reply;
                                }
                            }
                        }
                        Ok(_) => {
                            if self.process.is_some() && self.exit_status().is_some() {
                                break;
                            }
                        }
                        Err(_) => break,
                    }
                }
            }
        }

        if let Some(mut process) = self.process.take() {
            let deadline = Instant::now() + self.options.shutdown_grace;
            loop {
                match process.child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => thread::sleep(POLL_SLICE),
                    _ => {
                        warn!("kernel still running after shutdown request; killing it");
                        let _ = process.child.kill();
                        let _ = process.child.wait();
                        break;
                    }
                }
            }
            if let Err(e) = fs::remove_file(&process.connection_file) {
                debug!("removing {}: {e}", process.connection_file.display());
            }
        }
        self.dead = true;
    }
}

impl Drop for KernelHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[derive(Default)]
struct Collected {
    outputs: Vec<CellOutput>,
    clear_pending: bool,
    reply_seen: bool,
    idle_seen: bool,
    reply_error: Option<(String, String, Vec<String>)>,
    stdin_requested: bool,
}

impl Collected {
    fn push(&mut self, output: CellOutput) {
        if self.clear_pending {
            self.outputs.clear();
            self.clear_pending = false;
        }
        self.outputs.push(output);
    }

    fn on_iopub(&mut self, msg: &Message) {
        match msg.msg_type() {
            "status" => {
                if msg.content.get("execution_state").and_then(Value::as_str) == Some("idle") {
                    self.idle_seen = true;
                }
            }
            "clear_output" => {
                if msg.content.get("wait").and_then(Value::as_bool) == Some(true) {
                    self.clear_pending = true;
                } else {
                    self.outputs.clear();
                    self.clear_pending = false;
                }
            }
            kind @ ("stream" | "execute_result" | "display_data" | "error") => {
                let mut content = msg.content.clone();
                if let Some(obj) = content.as_object_mut() {
                    obj.insert("output_type".into(), json!(kind));
                }
                match CellOutput::from_json(&content) {
                    Ok(output) => self.push(output),
                    Err(e) => warn!("ignoring malformed {kind} message: {e}"),
                }
            }
            _ => {}
        }
    }

    fn on_reply(&mut self, content: &Value) {
        self.reply_seen = true;
        let status = content
            .get("status")
            .and_then(Value::as_str)
            .unwrap_or("ok");
        if status == "ok" {
            return;
        }
        let text = |key: &str, fallback: &str| {
            content
                .get(key)
                .and_then(Value::as_str)
                .unwrap_or(fallback)
                .to_owned()
        };
        let traceback = content
            .get("traceback")
            .and_then(Value::as_array)
            .map(|lines| {
                lines
                    .iter()
                    .filter_map(|l| l.as_str().map(str::to_owned))
                    .collect()
            })
            .unwrap_or_default();
        let fallback = if status == "aborted" {
            "Aborted"
        } else {
            "Error"
        };
        self.reply_error = Some((text("ename", fallback), text("evalue", ""), traceback));
    }

    fn errored(&self) -> bool {
        self.stdin_requested
            || self.reply_error.is_some()
            || self
                .outputs
                .iter()
                .any(|o| matches!(o, CellOutput::Error { .. }))
    }

    fn into_outcome(self) -> ExecutionOutcome {
        let errored = self.errored();
        let mut outcome = ExecutionOutcome::ok(self.outputs);
        if let Some((ename, evalue, traceback)) = self.reply_error {
            outcome.ename = Some(ename);
            outcome.evalue = Some(evalue);
            outcome.traceback = traceback;
        } else if let Some(CellOutput::Error {
            ename,
            evalue,
            traceback,
        }) = outcome
            .outputs
            .iter()
            .find(|o| matches!(o, CellOutput::Error { .. }))
            .cloned()
        {
            outcome.ename = Some(ename);
            outcome.evalue = Some(evalue);
            outcome.traceback = traceback;
        } else if self.stdin_requested {
            outcome.ename = Some("StdinNotImplementedError".into());
            outcome.evalue = Some("the cell requested input".into());
        }
        if errored {
            outcome.status = ExecutionStatus::Error;
        }
        outcome
    }
}

/// Launches the kernel described by `spec` and waits until it answers.
pub fn start_kernel(
    spec: &KernelSpec,
    startup_timeout: Duration,
    options: ClientOptions,
) -> Result<KernelHandle, KernelError> {
    let info = ConnectionInfo::allocate(&spec.name)?;
    let connection_file = std::env::temp_dir().join(format!(
        "nbcheck-kernel-{}.json",
        uuid::Uuid::new_v4().simple()
    ));
    info.write_to(&connection_file)?;

    let argv = spec.command_line(&connection_file);
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| KernelError::InvalidKernelSpec {
            path: spec.resource_dir.join("kernel.json"),
            reason: "empty argv".into(),
        })?;
    let mut command = Command::new(program);
    command
        .args(args)
        .envs(&spec.env)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        // own process group: a terminal ^C reaches us, not the kernel directly
        command.process_group(0);
    }
    let child = match command.spawn() {
        Ok(child) => child,
        Err(source) => {
            let _ = fs::remove_file(&connection_file);
            return Err(KernelError::SpawnFailure {
                program: program.clone(),
                source,
            });
        }
    };
    debug!("started kernel {} pid {}", spec.name, child.id());

    let mut handle = match KernelHandle::connect(&info, options) {
        Ok(handle) => handle,
        Err(e) => {
            let mut child = child;
            let _ = child.kill();
            let _ = child.wait();
            let _ = fs::remove_file(&connection_file);
            return Err(e);
        }
    };
    handle.interrupt_mode = spec.interrupt_mode;
    handle.process = Some(KernelProcess {
        child,
        connection_file,
    });
    if let Err(e) = handle.wait_for_ready(startup_timeout) {
        handle.kill();
        handle.shutdown();
        return Err(e);
    }
    Ok(handle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iopub(msg_type: &str, content: Value) -> Message {
        Message::new(msg_type, "k", content)
    }

    #[test]
    fn clear_output_discards_earlier_outputs() {
        let mut c = Collected::default();
        c.on_iopub(&iopub("stream", json!({"name": "stdout", "text": "10%"})));
        c.on_iopub(&iopub("clear_output", json!({"wait": false})));
        c.on_iopub(&iopub("stream", json!({"name": "stdout", "text": "50%"})));
        c.on_iopub(&iopub("clear_output", json!({"wait": true})));
        assert_eq!(c.outputs.len(), 1);
        c.on_iopub(&iopub("stream", json!({"name": "stdout", "text": "100%"})));
        assert_eq!(c.outputs, vec![CellOutput::stdout("100%")]);
    }

    #[test]
    fn bookkeeping_messages_are_not_outputs() {
        let mut c = Collected::default();
        c.on_iopub(&iopub("status", json!({"execution_state": "busy"})));
        c.on_iopub(&iopub(
            "execute_input",
            json!({"code": "1", "execution_count": 1}),
        ));
        c.on_iopub(&iopub(
            "execute_result",
            json!({"data": {"text/plain": "1"}, "metadata": {}, "execution_count": 1}),
        ));
        c.on_iopub(&iopub("status", json!({"execution_state": "idle"})));
        assert!(c.idle_seen);
        assert_eq!(
            c.outputs,
            vec![CellOutput::ExecuteResult {
                data: nbcheck_core::RichOutput {
                    text: Some("1".into()),
                    ..Default::default()
                },
                execution_count: Some(1),
            }]
        );
        let outcome = c.into_outcome();
        assert_eq!(outcome.status, ExecutionStatus::Ok);
    }

    #[test]
    fn error_reply_or_output_means_error() {
        let mut c = Collected::default();
        c.on_reply(
            &json!({"status": "error", "ename": "NameError", "evalue": "x", "traceback": ["t"]}),
        );
        let outcome = c.into_outcome();
        assert_eq!(outcome.status, ExecutionStatus::Error);
        assert_eq!(outcome.ename.as_deref(), Some("NameError"));
        assert_eq!(outcome.traceback, vec!["t"]);

        let mut c = Collected::default();
        c.on_iopub(&iopub(
            "error",
            json!({"ename": "ValueError", "evalue": "v", "traceback": []}),
        ));
        c.on_reply(&json!({"status": "ok"}));
        let outcome = c.into_outcome();
        assert_eq!(outcome.status, ExecutionStatus::Error);
        assert_eq!(outcome.error_name(), Some("ValueError"));
    }
}
