use std::io::BufReader;
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::protocol::{read_frame, write_frame, Message};
use super::Denoiser;
use crate::error::{Error, Result};
use crate::noise::NoiseSchedule;
use crate::tensor::{ImageTensor, Shape};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
const EXIT_GRACE: Duration = Duration::from_secs(5);

type Reply = Result<Option<Message>>;

/// A denoiser running in a child process, driven over its stdin/stdout.
///
/// One request is in flight at a time. Replies are read on a helper thread so
/// every wait is bounded by the session timeout. Any protocol violation
/// poisons the session. Dropping the session sends SHUTDOWN and reaps the
/// child.
pub struct ExternalDenoiser {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    replies: Receiver<Reply>,
    shape: Shape,
    timeout: Duration,
    poisoned: bool,
    closed: bool,
}

impl ExternalDenoiser {
    /// Spawns `command` (split with shell quoting rules) and performs the
    /// HELLO / HELLO_ACK exchange. The betas travel as `f32`, so the worker
    /// sees [`NoiseSchedule::quantized_f32`] rather than `sched` itself.
    pub fn handshake(
        command: &str,
        sched: &NoiseSchedule,
        shape: Shape,
        timeout: Duration,
    ) -> Result<Self> {
        let argv = shlex::split(command)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::invalid(format!("cannot parse worker command `{command}`")))?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| Error::Spawn {
                command: command.to_string(),
                source,
            })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, replies) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let reply = read_frame(&mut reader);
                let stop = !matches!(reply, Ok(Some(_)));
                if tx.send(reply).is_err() || stop {
                    break;
                }
            }
        });
        let mut session = Self {
            command: command.to_string(),
            child,
            stdin,
            replies,
            shape,
            timeout,
            poisoned: false,
            closed: false,
        };
        let betas = sched.betas().iter().map(|b| *b as f32).collect();
        debug!("handshake with `{command}`: T={} shape={shape}", sched.timesteps());
        match session.request(&Message::Hello { shape, betas })? {
            Message::HelloAck => Ok(session),
            other => Err(session.violation(format!(
                "expected HELLO_ACK, got {:?}",
                other.msg_type()
            ))),
        }
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    /// Sends SHUTDOWN and waits for the worker to exit.
    pub fn shutdown(mut self) -> Result<ExitStatus> {
        self.close()
    }

    fn violation(&mut self, msg: String) -> Error {
        self.poisoned = true;
        Error::Protocol(format!("worker `{}`: {msg}", self.command))
    }

    fn request(&mut self, msg: &Message) -> Result<Message> {
        if self.poisoned {
            return Err(Error::Protocol(format!(
                "session with `{}` is no longer usable",
                self.command
            )));
        }
        let stdin = self.stdin.as_mut().expect("open session has stdin");
        if let Err(e) = write_frame(stdin, msg) {
            self.poisoned = true;
            return Err(Error::Protocol(format!(
                "worker `{}` stopped accepting input: {e}",
                self.command
            )));
        }
        match self.replies.recv_timeout(self.timeout) {
            Ok(Ok(Some(Message::Error(text)))) => {
                self.poisoned = true;
                Err(Error::Worker(text))
            }
            Ok(Ok(Some(reply))) => Ok(reply),
            Ok(Ok(None)) | Err(RecvTimeoutError::Disconnected) => {
                Err(self.violation("worker closed its output".into()))
            }
            Ok(Err(e)) => Err(self.violation(e.to_string())),
            Err(RecvTimeoutError::Timeout) => {
                self.poisoned = true;
                Err(Error::Timeout(self.timeout))
            }
        }
    }

    fn close(&mut self) -> Result<ExitStatus> {
        self.closed = true;
        if let Some(mut stdin) = self.stdin.take() {
            let _ = write_frame(&mut stdin, &Message::Shutdown);
        }
        let deadline = Instant::now() + EXIT_GRACE;
        loop {
            if let Some(status) = self.child.try_wait()? {
                return Ok(status);
            }
            if Instant::now() >= deadline {
                warn!("worker `{}` ignored SHUTDOWN; killing it", self.command);
                self.child.kill()?;
                return Ok(self.child.wait()?);
            }
            thread::sleep(Duration::from_millis(5));
        }
    }
}

impl Denoiser for ExternalDenoiser {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn epsilon(&mut self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        let reply = self.request(&Message::EpsReq {
            t: t as u32,
            x_t: x_t.data().to_vec(),
        })?;
        match reply {
            Message::EpsResp { eps } if eps.len() == self.shape.len() => {
                ImageTensor::from_vec(self.shape, eps)
            }
            Message::EpsResp { eps } => Err(self.violation(format!(
                "EPS_RESP carries {} values, handshake shape {} needs {}",
                eps.len(),
                self.shape,
                self.shape.len()
            ))),
            other => Err(self.violation(format!(
                "expected EPS_RESP, got {:?}",
                other.msg_type()
            ))),
        }
    }
}

impl Drop for ExternalDenoiser {
    fn drop(&mut self) {
        if !self.closed {
            if let Err(e) = self.close() {
                warn!("failed to stop worker `{}`: {e}", self.command);
            }
        }
    }
}
