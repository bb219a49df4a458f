//! A scripted in-process kernel speaking the wire protocol over loopback TCP.
//!
//! Each `execute_request` is answered by the steps registered for its code,
//! or by a plain busy / ok-reply / idle sequence when none are.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rand::RngCore;
use serde_json::{json, Value};

use crate::connection::{ConnectionInfo, SIGNATURE_SCHEME};
use crate::error::KernelError;
use crate::wire::{Header, Message, Signer};

const SLICE_MS: i64 = 20;

#[derive(Debug, Clone, PartialEq)]
pub enum MockStep {
    Busy,
    Idle,
    Stream {
        name: String,
        text: String,
    },
    /// An `execute_result` with only a `text/plain` entry.
    Result(String),
    /// A `display_data` with the given mime bundle.
    Display(Value),
    Error {
        ename: String,
        evalue: String,
    },
    ClearOutput {
        wait: bool,
    },
    ReplyOk,
    ReplyError {
        ename: String,
        evalue: String,
    },
    /// The inner step, parented to a request this client never sent.
    Foreign(Box<MockStep>),
    /// The inner step, signed with the wrong key.
    Forged(Box<MockStep>),
    Sleep(Duration),
    /// Block until an `interrupt_request` arrives on control.
    WaitForInterrupt,
    /// Send an `input_request` and wait briefly for the answer.
    InputRequest(String),
    /// Stop answering everything, heartbeat included.
    Die,
}

impl MockStep {
    pub fn stdout(text: impl Into<String>) -> Self {
        Self::Stream {
            name: "stdout".into(),
            text: text.into(),
        }
    }

    pub fn error(ename: &str, evalue: &str) -> Self {
        Self::Error {
            ename: ename.into(),
            evalue: evalue.into(),
        }
    }

    pub fn reply_error(ename: &str, evalue: &str) -> Self {
        Self::ReplyError {
            ename: ename.into(),
            evalue: evalue.into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockScript {
    cells: HashMap<String, Vec<MockStep>>,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on(mut self, code: impl Into<String>, steps: Vec<MockStep>) -> Self {
        self.cells.insert(code.into(), steps);
        self
    }

    fn steps_for(&self, code: &str) -> Vec<MockStep> {
        self.cells
            .get(code)
            .cloned()
            .unwrap_or_else(|| vec![MockStep::Busy, MockStep::ReplyOk, MockStep::Idle])
    }
}

/// What the mock saw, for assertions.
#[derive(Debug, Clone, Default)]
pub struct MockLog {
    /// `msg_type` of every request on shell and control, in arrival order.
    pub requests: Vec<String>,
    pub bad_signatures: usize,
    pub input_replies: Vec<Value>,
}

pub struct MockKernel {
    info: ConnectionInfo,
    log: Arc<Mutex<MockLog>>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

struct Sockets {
    shell: zmq::Socket,
    control: zmq::Socket,
    stdin: zmq::Socket,
    iopub: zmq::Socket,
    hb: zmq::Socket,
}

fn bind(ctx: &zmq::Context, kind: zmq::SocketType) -> Result<(zmq::Socket, u16), KernelError> {
    let socket = ctx.socket(kind)?;
    socket.set_linger(0)?;
    socket.bind("tcp://127.0.0.1:*")?;
    let endpoint = socket
        .get_last_endpoint()?
        .map_err(|_| KernelError::Zmq(zmq::Error::EINVAL))?;
    let port = endpoint
        .rsplit(':')
        .next()
        .and_then(|p| p.parse().ok())
        .ok_or(KernelError::Zmq(zmq::Error::EINVAL))?;
    Ok((socket, port))
}

impl MockKernel {
    pub fn start(script: MockScript) -> Result<Self, KernelError> {
        let ctx = zmq::Context::new();
        let (shell, shell_port) = bind(&ctx, zmq::ROUTER)?;
        let (control, control_port) = bind(&ctx, zmq::ROUTER)?;
        let (stdin, stdin_port) = bind(&ctx, zmq::ROUTER)?;
        let (iopub, iopub_port) = bind(&ctx, zmq::PUB)?;
        let (hb, hb_port) = bind(&ctx, zmq::REP)?;

        let mut key = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut key);
        let info = ConnectionInfo {
            shell_port,
            iopub_port,
            stdin_port,
            control_port,
            hb_port,
            ip: "127.0.0.1".into(),
            key: hex::encode(key),
            transport: "tcp".into(),
            signature_scheme: SIGNATURE_SCHEME.into(),
            kernel_name: "mock".into(),
        };

        let log = Arc::new(Mutex::new(MockLog::default()));
        let stop = Arc::new(AtomicBool::new(false));
        let mut server = Server {
            sockets: Sockets {
                shell,
                control,
                stdin,
                iopub,
                hb,
            },
            signer: Signer::new(info.key_bytes().to_vec()),
            forger: Signer::new(b"not-the-key".to_vec()),
            script,
            log: log.clone(),
            stop: stop.clone(),
            session: uuid::Uuid::new_v4().simple().to_string(),
            execution_count: 0,
            _ctx: ctx,
        };
        let thread = thread::Builder::new()
            .name("mock-kernel".into())
            .spawn(move || server.run())?;
        Ok(Self {
            info,
            log,
            stop,
            thread: Some(thread),
        })
    }

    pub fn connection_info(&self) -> &ConnectionInfo {
        &self.info
    }

    pub fn log(&self) -> MockLog {
        self.log.lock().expect("mock log lock").clone()
    }
}

impl Drop for MockKernel {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

struct Server {
    sockets: Sockets,
    signer: Signer,
    forger: Signer,
    script: MockScript,
    log: Arc<Mutex<MockLog>>,
    stop: Arc<AtomicBool>,
    session: String,
    execution_count: u64,
    // Declared last so the sockets close first.
    _ctx: zmq::Context,
}

enum Flow {
    Continue,
    Exit,
}

impl Server {
    fn stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    fn run(&mut self) {
        while !self.stopped() {
            let mut items = [
                self.sockets.shell.as_poll_item(zmq::POLLIN),
                self.sockets.control.as_poll_item(zmq::POLLIN),
                self.sockets.hb.as_poll_item(zmq::POLLIN),
            ];
            if zmq::poll(&mut items, SLICE_MS).is_err() {
                return;
            }
            let ready = [
                items[0].is_readable(),
                items[1].is_readable(),
                items[2].is_readable(),
            ];
            if ready[2] {
                if let Ok(ping) = self.sockets.hb.recv_bytes(0) {
                    let _ = self.sockets.hb.send(ping, 0);
                }
            }
            if ready[1] {
                if let Some(msg) = self.recv(&self.sockets.control) {
                    if let Flow::Exit = self.on_control(&msg) {
                        return;
                    }
                }
            }
            if ready[0] {
                if let Some(msg) = self.recv(&self.sockets.shell) {
                    if let Flow::Exit = self.on_shell(&msg) {
                        return;
                    }
                }
            }
        }
    }

    fn recv(&self, socket: &zmq::Socket) -> Option<Message> {
        let frames = socket.recv_multipart(0).ok()?;
        match Message::decode(frames, &self.signer) {
            Ok(msg) => {
                self.log
                    .lock()
                    .expect("mock log lock")
                    .requests
                    .push(msg.msg_type().to_owned());
                Some(msg)
            }
            Err(_) => {
                self.log.lock().expect("mock log lock").bad_signatures += 1;
                None
            }
        }
    }

    fn send(&self, socket: &zmq::Socket, msg: &Message, signer: &Signer) {
        let _ = socket.send_multipart(msg.encode(signer), 0);
    }

    fn publish(&self, parent: &Message, msg_type: &str, content: Value, signer: &Signer) {
        let mut msg = Message::reply_to(parent, msg_type, content);
        msg.identities = vec![msg_type.as_bytes().to_vec()];
        msg.header.session = self.session.clone();
        self.send(&self.sockets.iopub, &msg, signer);
    }

    fn status(&self, parent: &Message, state: &str) {
        self.publish(
            parent,
            "status",
            json!({"execution_state": state}),
            &self.signer,
        );
    }

    fn on_control(&mut self, msg: &Message) -> Flow {
        match msg.msg_type() {
            "shutdown_request" => {
                let reply = Message::reply_to(
                    msg,
                    "shutdown_reply",
                    json!({"status": "ok", "restart": false}),
                );
                self.send(&self.sockets.control, &reply, &self.signer);
                Flow::Exit
            }
            "interrupt_request" => {
                let reply = Message::reply_to(msg, "interrupt_reply", json!({"status": "ok"}));
                self.send(&self.sockets.control, &reply, &self.signer);
                Flow::Continue
            }
            "kernel_info_request" => {
                self.kernel_info(msg, &self.sockets.control);
                Flow::Continue
            }
            _ => Flow::Continue,
        }
    }

    fn kernel_info(&self, msg: &Message, socket: &zmq::Socket) {
        self.status(msg, "busy");
        let reply = Message::reply_to(
            msg,
            "kernel_info_reply",
            json!({
                "status": "ok",
                "protocol_version": crate::wire::PROTOCOL_VERSION,
                "implementation": "mock",
                "implementation_version": "0",
                "language_info": {"name": "python", "version": "3", "file_extension": ".py"},
                "banner": "",
            }),
        );
        self.send(socket, &reply, &self.signer);
        self.status(msg, "idle");
    }

    fn on_shell(&mut self, msg: &Message) -> Flow {
        match msg.msg_type() {
            "kernel_info_request" => {
                self.kernel_info(msg, &self.sockets.shell);
                Flow::Continue
            }
            "execute_request" => {
                let code = msg
                    .content
                    .get("code")
                    .and_then(Value::as_str)
                    .unwrap_or("");
                self.execution_count += 1;
                let steps = self.script.steps_for(code);
                for step in steps {
                    if let Flow::Exit = self.step(msg, &step, false, false) {
                        return Flow::Exit;
                    }
                }
                Flow::Continue
            }
            _ => Flow::Continue,
        }
    }

    fn step(&mut self, request: &Message, step: &MockStep, foreign: bool, forged: bool) -> Flow {
        let signer = if forged { &self.forger } else { &self.signer };
        let stranger;
        let parent = if foreign {
            let mut other = request.clone();
            other.header = Header::new("execute_request", "someone-else");
            stranger = other;
            &stranger
        } else {
            request
        };
        let count = self.execution_count;
        match step {
            MockStep::Busy => self.publish(parent, "status", json!({"execution_state": "busy"}), signer),
            MockStep::Idle => self.publish(parent, "status", json!({"execution_state": "idle"}), signer),
            MockStep::Stream { name, text } => {
                self.publish(parent, "stream", json!({"name": name, "text": text}), signer)
            }
            MockStep::Result(text) => self.publish(
                parent,
                "execute_result",
                json!({"data": {"text/plain": text}, "metadata": {}, "execution_count": count}),
                signer,
            ),
            MockStep::Display(data) => self.publish(
                parent,
                "display_data",
                json!({"data": data, "metadata": {}, "transient": {}}),
                signer,
            ),
            MockStep::Error { ename, evalue } => self.publish(
                parent,
                "error",
                json!({"ename": ename, "evalue": evalue, "traceback": [format!("{ename}: {evalue}")]}),
                signer,
            ),
            MockStep::ClearOutput { wait } => {
                self.publish(parent, "clear_output", json!({"wait": wait}), signer)
            }
            MockStep::ReplyOk => {
                let reply = Message::reply_to(
                    parent,
                    "execute_reply",
                    json!({"status": "ok", "execution_count": count, "user_expressions": {}}),
                );
                self.send(&self.sockets.shell, &reply, signer);
            }
            MockStep::ReplyError { ename, evalue } => {
                let reply = Message::reply_to(
                    parent,
                    "execute_reply",
                    json!({
                        "status": "error",
                        "execution_count": count,
                        "ename": ename,
                        "evalue": evalue,
                        "traceback": [],
                    }),
                );
                self.send(&self.sockets.shell, &reply, signer);
            }
            MockStep::Foreign(inner) => return self.step(request, inner, true, forged),
            MockStep::Forged(inner) => return self.step(request, inner, foreign, true),
            MockStep::Sleep(duration) => thread::sleep(*duration),
            MockStep::WaitForInterrupt => {
                while !self.stopped() {
                    if self.sockets.control.poll(zmq::POLLIN, SLICE_MS).unwrap_or(0) > 0 {
                        if let Some(msg) = self.recv(&self.sockets.control) {
                            let interrupted = msg.msg_type() == "interrupt_request";
                            if let Flow::Exit = self.on_control(&msg) {
                                return Flow::Exit;
                            }
                            if interrupted {
                                break;
                            }
                        }
                    }
                }
            }
            MockStep::InputRequest(prompt) => {
                let mut ask = Message::reply_to(
                    request,
                    "input_request",
                    json!({"prompt": prompt, "password": false}),
                );
                ask.header.session = self.session.clone();
                self.send(&self.sockets.stdin, &ask, signer);
                let deadline = Instant::now() + Duration::from_secs(5);
                while Instant::now() < deadline && !self.stopped() {
                    if self.sockets.stdin.poll(zmq::POLLIN, SLICE_MS).unwrap_or(0) > 0 {
                        if let Some(answer) = self.recv(&self.sockets.stdin) {
                            self.log
                                .lock()
                                .expect("mock log lock")
                                .input_replies
                                .push(answer.content);
                            break;
                        }
                    }
                }
            }
            MockStep::Die => return Flow::Exit,
        }
        Flow::Continue
    }
}
