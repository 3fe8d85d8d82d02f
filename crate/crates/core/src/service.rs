//! Frame-analysis server and replay client.
//!
//! The protocol is newline-delimited JSON over TCP, one session per
//! connection. The client sends `frame` messages (frame metadata plus inline
//! features) and finally one `end_session`. The server answers every frame
//! with an `action` line, in order, and `end_session` with a `summary` line,
//! then closes. Protocol or data errors produce one `error` line and close
//! the connection; other sessions are unaffected.

use std::collections::HashSet;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::controller::{ActionCommand, Controller, ControllerConfig, ControllerError, Expression, Observation};
use crate::filter::{classify_frame, FilterConfig, FilterError, FilterReport};
use crate::io::{landmarks_from_wire, landmarks_to_wire};
use crate::model::{FeatureVector, FrameRecord, SummaryManifest, NUM_LANDMARKS};
use crate::summarizer::{summarize, SummarizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameMessage {
    pub frame_id: u64,
    pub t: f64,
    pub w: u32,
    pub h: u32,
    pub landmarks: Option<[Option<[f64; 3]>; NUM_LANDMARKS]>,
    pub blur_var: Option<f64>,
    #[serde(default)]
    pub feat_row: Option<u32>,
    pub features: Option<Vec<f32>>,
}

impl From<&FrameRecord> for FrameMessage {
    fn from(f: &FrameRecord) -> Self {
        Self {
            frame_id: f.frame_id,
            t: f.timestamp,
            w: f.width,
            h: f.height,
            landmarks: f.landmarks.as_ref().map(landmarks_to_wire),
            blur_var: f.blur_variance,
            feat_row: f.feat_row,
            features: f.features.as_ref().map(|v| v.to_vec()),
        }
    }
}

impl FrameMessage {
    pub fn into_record(self) -> Result<FrameRecord, String> {
        let landmarks = self
            .landmarks
            .as_ref()
            .map(landmarks_from_wire)
            .transpose()
            .map_err(|e| e.to_string())?;
        let features = self.features.map(FeatureVector::new).transpose().map_err(|e| e.to_string())?;
        let rec = FrameRecord {
            frame_id: self.frame_id,
            timestamp: self.t,
            width: self.w,
            height: self.h,
            landmarks,
            blur_variance: self.blur_var,
            feat_row: self.feat_row,
            features,
        };
        rec.validate().map_err(|e| e.to_string())?;
        Ok(rec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Frame(FrameMessage),
    EndSession { k: usize, h0: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionMessage {
    pub frame_id: u64,
    pub rotate_deg: f64,
    pub pitch_deg: Option<f64>,
    pub forward_m: f64,
    pub expression: Expression,
    pub mode: String,
}

impl ActionMessage {
    pub fn new(frame_id: u64, cmd: &ActionCommand) -> Self {
        Self {
            frame_id,
            rotate_deg: cmd.rotate_deg,
            pitch_deg: cmd.pitch_deg,
            forward_m: cmd.forward_m,
            expression: cmd.expression,
            mode: cmd.new_mode.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Action(ActionMessage),
    Summary(SummaryManifest),
    Error { code: String, msg: String },
}

impl ServerMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

fn observation(rec: &FrameRecord) -> Observation {
    Observation {
        timestamp: rec.timestamp,
        width: rec.width,
        height: rec.height,
        landmarks: rec.landmarks,
    }
}

/// Runs the controller over a recorded session; one `action` line per frame,
/// identical to what the server would send.
pub fn simulate_trace(frames: &[FrameRecord], cfg: &ControllerConfig) -> Result<Vec<String>, ControllerError> {
    let mut controller = Controller::new(cfg.clone())?;
    Ok(frames
        .iter()
        .map(|f| ServerMessage::Action(ActionMessage::new(f.frame_id, &controller.step(&observation(f)))).to_line())
        .collect())
}

/// What a session does with one input line.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionReply {
    Continue(String),
    /// Final line; the connection closes after it.
    Close(String),
}

/// Per-connection state. Holds only well-posed frames for the summary.
#[derive(Debug)]
pub struct Session {
    filter: FilterConfig,
    max_adapt_iters: u32,
    controller: Controller,
    accepted: Vec<FrameRecord>,
    seen: HashSet<u64>,
    last_t: Option<f64>,
    report: FilterReport,
    missing_features: usize,
}

fn error_line(code: &str, msg: impl Into<String>) -> SessionReply {
    SessionReply::Close(ServerMessage::Error { code: code.into(), msg: msg.into() }.to_line())
}

impl Session {
    pub fn new(cfg: &PipelineConfig) -> Result<Self, ControllerError> {
        Ok(Self {
            filter: cfg.filter.clone(),
            max_adapt_iters: cfg.summarizer.max_adapt_iters,
            controller: Controller::new(cfg.controller.clone())?,
            accepted: Vec::new(),
            seen: HashSet::new(),
            last_t: None,
            report: FilterReport::default(),
            missing_features: 0,
        })
    }

    pub fn report(&self) -> &FilterReport {
        &self.report
    }

    /// Well-posed frames that arrived without features and were left out of
    /// the summary.
    pub fn missing_features(&self) -> usize {
        self.missing_features
    }

    pub fn handle_line(&mut self, line: &str) -> SessionReply {
        let msg: ClientMessage = match serde_json::from_str(line) {
            Ok(m) => m,
            Err(e) => return error_line("parse_error", e.to_string()),
        };
        match msg {
            ClientMessage::Frame(frame) => self.handle_frame(frame),
            ClientMessage::EndSession { k, h0 } => self.finish(k, h0),
        }
    }

    fn handle_frame(&mut self, frame: FrameMessage) -> SessionReply {
        let rec = match frame.into_record() {
            Ok(r) => r,
            Err(e) => return error_line("invalid_frame", e),
        };
        if !self.seen.insert(rec.frame_id) {
            return error_line("order_error", format!("frame {}: duplicate frame_id", rec.frame_id));
        }
        if self.last_t.is_some_and(|t| rec.timestamp < t) {
            return error_line("order_error", format!("frame {}: timestamp goes backwards", rec.frame_id));
        }
        let repeated_t = self.last_t == Some(rec.timestamp);
        self.last_t = Some(rec.timestamp);

        let class = match classify_frame(&rec, None, &self.filter) {
            Ok(c) => c,
            Err(e @ FilterError::MissingBlurScore { .. }) => return error_line("missing_blur_score", e.to_string()),
            Err(e) => return error_line("invalid_frame", e.to_string()),
        };
        let action = self.controller.step(&observation(&rec));
        let line = ServerMessage::Action(ActionMessage::new(rec.frame_id, &action)).to_line();

        if !repeated_t {
            self.report.record(class);
            if class.is_well_posed() {
                if rec.features.is_some() {
                    self.accepted.push(rec);
                } else {
                    self.missing_features += 1;
                }
            }
        }
        SessionReply::Continue(line)
    }

    fn finish(&mut self, k: usize, h0: f64) -> SessionReply {
        let cfg = SummarizerConfig { k, h0, max_adapt_iters: self.max_adapt_iters };
        if let Err(e) = cfg.validate() {
            return error_line("bad_request", e.to_string());
        }
        match summarize(&self.accepted, &cfg) {
            Ok(manifest) => SessionReply::Close(ServerMessage::Summary(manifest).to_line()),
            Err(e) => error_line("summarize_failed", e.to_string()),
        }
    }
}

fn handle_connection(stream: TcpStream, cfg: &PipelineConfig) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut session = Session::new(cfg).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (out, close) = match session.handle_line(&line) {
            SessionReply::Continue(l) => (l, false),
            SessionReply::Close(l) => (l, true),
        };
        writer.write_all(out.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if close {
            break;
        }
    }
    Ok(())
}

/// A bound, not yet running server.
pub struct Server {
    listener: TcpListener,
    cfg: Arc<PipelineConfig>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, cfg: PipelineConfig) -> io::Result<Self> {
        cfg.validate().map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(Self { listener, cfg: Arc::new(cfg) })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until `shutdown` is set. Each connection runs on
    /// its own thread; sessions still open at shutdown are left to finish.
    pub fn run(&self, shutdown: &AtomicBool) -> io::Result<()> {
        while !shutdown.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    let cfg = Arc::clone(&self.cfg);
                    thread::spawn(move || {
                        // a failed session only ends its own connection
                        let _ = handle_connection(stream, &cfg);
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    /// Runs on a background thread.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let flag = Arc::new(AtomicBool::new(false));
        let stop = Arc::clone(&flag);
        let join = thread::spawn(move || self.run(&stop));
        Ok(ServerHandle { addr, flag, join: Some(join) })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    flag: Arc<AtomicBool>,
    join: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop()
    }

    fn stop(&mut self) -> io::Result<()> {
        self.flag.store(true, Ordering::SeqCst);
        match self.join.take() {
            Some(j) => j.join().unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

/// Replay pacing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    /// Send as fast as replies arrive.
    Max,
    /// Real-time multiplier; 2.0 plays twice as fast as recorded.
    Multiplier(f64),
}

impl FromStr for Rate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "max" {
            return Ok(Rate::Max);
        }
        match s.parse::<f64>() {
            Ok(r) if r.is_finite() && r > 0.0 => Ok(Rate::Multiplier(r)),
            _ => Err(format!("rate must be \"max\" or a positive number, got {s:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot connect: {0}")]
    Connect(io::Error),
    #[error("connection lost (last acknowledged frame: {})", .last_acked.map_or("none".to_string(), |id| id.to_string()))]
    ConnectionLost { last_acked: Option<u64> },
    #[error("server error {code}: {msg}")]
    Remote { code: String, msg: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTrace {
    /// Action lines exactly as received.
    pub actions: Vec<String>,
    pub summary_line: String,
    pub summary: SummaryManifest,
}

fn read_reply(reader: &mut impl BufRead, last_acked: Option<u64>) -> Result<(String, ServerMessage), ReplayError> {
    let mut line = String::new();
    match reader.read_line(&mut line) {
        Ok(0) | Err(_) => return Err(ReplayError::ConnectionLost { last_acked }),
        Ok(_) => {}
    }
    let line = line.trim_end_matches(['\n', '\r']).to_string();
    let msg: ServerMessage = serde_json::from_str(&line).map_err(|e| ReplayError::Protocol(e.to_string()))?;
    if let ServerMessage::Error { code, msg } = msg {
        return Err(ReplayError::Remote { code, msg });
    }
    Ok((line, msg))
}

/// Streams `frames` to a server in lockstep and collects the replies.
pub fn replay_client(
    addr: impl ToSocketAddrs,
    frames: &[FrameRecord],
    rate: Rate,
    k: usize,
    h0: f64,
) -> Result<ReplayTrace, ReplayError> {
    let stream = TcpStream::connect(addr).map_err(ReplayError::Connect)?;
    stream.set_nodelay(true).map_err(ReplayError::Connect)?;
    let mut reader = BufReader::new(stream.try_clone().map_err(ReplayError::Connect)?);
    let mut writer = BufWriter::new(stream);

    let mut last_acked = None;
    let mut actions = Vec::with_capacity(frames.len());
    let send = |writer: &mut BufWriter<TcpStream>, msg: &ClientMessage, last_acked| {
        let line = serde_json::to_string(msg).expect("client messages serialize");
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.write_all(b"\n"))
            .and_then(|_| writer.flush())
            .map_err(|_| ReplayError::ConnectionLost { last_acked })
    };

    let mut prev_t: Option<f64> = None;
    for f in frames {
        if let (Rate::Multiplier(r), Some(p)) = (rate, prev_t) {
            let wait = (f.timestamp - p) / r;
            if wait > 0.0 {
                thread::sleep(Duration::from_secs_f64(wait));
            }
        }
        prev_t = Some(f.timestamp);
        send(&mut writer, &ClientMessage::Frame(FrameMessage::from(f)), last_acked)?;
        let (line, msg) = read_reply(&mut reader, last_acked)?;
        match msg {
            ServerMessage::Action(a) if a.frame_id == f.frame_id => {}
            other => {
                return Err(ReplayError::Protocol(format!(
                    "expected action for frame {}, got {other:?}",
                    f.frame_id
                )))
            }
        }
        last_acked = Some(f.frame_id);
        actions.push(line);
    }

    send(&mut writer, &ClientMessage::EndSession { k, h0 }, last_acked)?;
    let (summary_line, msg) = read_reply(&mut reader, last_acked)?;
    match msg {
        ServerMessage::Summary(summary) => Ok(ReplayTrace { actions, summary_line, summary }),
        other => Err(ReplayError::Protocol(format!("expected summary, got {other:?}"))),
    }
}
