//! TCP server: one thread per connection.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use log::{debug, error, info, warn};

use super::{read_frame, write_frame, Frame, Hello, Session, StageFrame, StreamError, CALIB_SERVER_DEFAULT};
use crate::metrics::{write_hypnogram, HypnogramRow};
use crate::net::Model;
use crate::pipeline::StageLabel;

#[derive(Debug, Clone)]
pub struct ServerOptions {
    /// Calibration epochs for clients sending [`CALIB_SERVER_DEFAULT`].
    pub default_calib_epochs: u16,
    /// Directory receiving one hypnogram CSV per session; `None` writes none.
    pub hypnogram_dir: Option<PathBuf>,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            default_calib_epochs: 2,
            hypnogram_dir: None,
        }
    }
}

/// What happened during one connection.
#[derive(Debug, Clone, Default)]
pub struct SessionSummary {
    pub hello: Option<Hello>,
    pub frames: Vec<StageFrame>,
    pub dropped: Vec<u32>,
    /// Epoch completion to STAGE frame written, per frame.
    pub latencies: Vec<Duration>,
    /// Samples of an unfinished epoch discarded at the end.
    pub discarded_samples: usize,
    pub hypnogram: Option<PathBuf>,
}

impl SessionSummary {
    pub fn max_latency(&self) -> Duration {
        self.latencies.iter().copied().max().unwrap_or_default()
    }
}

fn file_stem(device: &str) -> String {
    let s: String = device
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .take(64)
        .collect();
    if s.is_empty() {
        "device".into()
    } else {
        s
    }
}

fn run_session(
    stream: &TcpStream,
    model: &Model<f32>,
    opts: &ServerOptions,
    summary: &mut SessionSummary,
) -> Result<(), StreamError> {
    let mut reader = BufReader::new(stream);
    let mut writer = BufWriter::new(stream);
    let mut hello = match read_frame(&mut reader)? {
        None => return Ok(()),
        Some(Frame::Hello(h)) => h,
        Some(Frame::Data(_)) => return Err(StreamError::DataBeforeHello),
        Some(_) => return Err(StreamError::UnexpectedFrame("expected HELLO")),
    };
    if hello.calib_epochs == CALIB_SERVER_DEFAULT {
        hello.calib_epochs = opts.default_calib_epochs;
    }
    info!(
        "session start: device {:?}, {} Hz, {} calibration epochs",
        hello.device_name, hello.sample_rate_hz, hello.calib_epochs
    );
    summary.hello = Some(hello.clone());
    let mut session = Session::new(model, hello)?;
    let result = loop {
        let frame = match read_frame(&mut reader) {
            Ok(f) => f,
            Err(e) => break Err(e),
        };
        match frame {
            Some(Frame::Data(samples)) => {
                let emitted = match session.ingest(&samples) {
                    Ok(e) => e,
                    Err(e) => break Err(e),
                };
                for e in emitted {
                    write_frame(&mut writer, &Frame::Stage(e.frame))?;
                    writer.flush()?;
                    let latency = e.cut_at.elapsed();
                    debug!(
                        "epoch {} staged in {:.1} ms",
                        e.frame.epoch_index,
                        latency.as_secs_f64() * 1e3
                    );
                    summary.latencies.push(latency);
                    summary.frames.push(e.frame);
                }
            }
            Some(Frame::Bye) => break Ok(()),
            None => {
                warn!("client closed without BYE");
                break Ok(());
            }
            Some(Frame::Hello(_)) => break Err(StreamError::UnexpectedFrame("second HELLO")),
            Some(Frame::Stage(_)) => break Err(StreamError::UnexpectedFrame("STAGE from client")),
        }
    };
    summary.dropped = session.dropped().to_vec();
    summary.discarded_samples = session.pending_samples();
    result
}

fn write_session_hypnogram(dir: &std::path::Path, id: u64, summary: &SessionSummary) -> Result<PathBuf, StreamError> {
    let device = summary.hello.as_ref().map(|h| h.device_name.as_str()).unwrap_or("");
    let path = dir.join(format!("session-{id:04}-{}.csv", file_stem(device)));
    let rows: Vec<HypnogramRow> = summary
        .frames
        .iter()
        .map(|f| {
            let stage = StageLabel::from_code(f.stage).unwrap_or(StageLabel::Wake);
            HypnogramRow::new(f.epoch_index, None, stage, f.confidence as f64)
        })
        .collect();
    write_hypnogram(&rows, BufWriter::new(File::create(&path)?))?;
    Ok(path)
}

/// Serves one connection to completion. Session-level protocol errors are
/// returned after the hypnogram of the epochs staged so far is written.
pub fn handle_connection(
    stream: TcpStream,
    model: &Model<f32>,
    opts: &ServerOptions,
    session_id: u64,
) -> Result<SessionSummary, StreamError> {
    stream.set_nodelay(true)?;
    let mut summary = SessionSummary::default();
    let result = run_session(&stream, model, opts, &mut summary);
    if let (Some(dir), Some(_)) = (&opts.hypnogram_dir, &summary.hello) {
        let path = write_session_hypnogram(dir, session_id, &summary)?;
        info!("hypnogram written to {}", path.display());
        summary.hypnogram = Some(path);
    }
    if !summary.latencies.is_empty() {
        info!(
            "session end: {} frames, {} dropped epochs, max latency {:.1} ms",
            summary.frames.len(),
            summary.dropped.len(),
            summary.max_latency().as_secs_f64() * 1e3
        );
    }
    result.map(|_| summary)
}

pub struct Server {
    listener: TcpListener,
    model: Arc<Model<f32>>,
    opts: ServerOptions,
    next_session: AtomicU64,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, model: Arc<Model<f32>>, opts: ServerOptions) -> Result<Self, StreamError> {
        let listener = TcpListener::bind(addr).map_err(StreamError::BindFailure)?;
        Ok(Self {
            listener,
            model,
            opts,
            next_session: AtomicU64::new(0),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, StreamError> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts and serves a single connection on the calling thread.
    pub fn serve_one(&self) -> Result<SessionSummary, StreamError> {
        let (stream, peer) = self.listener.accept()?;
        info!("connection from {peer}");
        let id = self.next_session.fetch_add(1, Ordering::Relaxed);
        handle_connection(stream, &self.model, &self.opts, id)
    }

    /// Accepts connections forever, each on its own thread.
    pub fn serve(&self) -> Result<(), StreamError> {
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    warn!("accept failed: {e}");
                    continue;
                }
            };
            let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
            info!("connection from {peer}");
            let id = self.next_session.fetch_add(1, Ordering::Relaxed);
            let model = Arc::clone(&self.model);
            let opts = self.opts.clone();
            thread::Builder::new().name(format!("session-{id}")).spawn(move || {
                if let Err(e) = handle_connection(stream, &model, &opts, id) {
                    error!("session {id} ({peer}) closed: {e}");
                }
            })?;
        }
        Ok(())
    }
}
