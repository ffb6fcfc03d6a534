//! Live inference over TCP.
//!
//! A client opens a connection with `HELLO`, streams raw samples in `DATA`
//! frames and receives one `STAGE` frame per completed 30 s epoch. The first
//! `calib_epochs` epochs are assumed to be wake and fit the calibration
//! profile; they are answered with Wake at confidence 1.
//!
//! [`offline_predict`] runs the same per-epoch path in one batch and is the
//! reference the live path is tested against.

mod frame;
mod replay;
mod server;
mod session;

use thiserror::Error;

use crate::calibrate::CalibrationError;
use crate::edf::EdfError;
use crate::metrics::MetricsError;
use crate::net::NetError;
use crate::pipeline::PipelineError;

pub use frame::{
    decode_frame, decode_payload, encode_frame, read_frame, write_frame, Frame, Hello, StageFrame, BYE,
    CALIB_SERVER_DEFAULT, DATA, FRAME_HEADER_LEN, HELLO, MAX_PAYLOAD, STAGE, STAGE_PAYLOAD_LEN,
};
pub use replay::{replay_edf, replay_samples, ReplayOptions};
pub use server::{handle_connection, Server, ServerOptions, SessionSummary};
pub use session::{offline_predict, Emitted, Session};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("unknown frame type 0x{0:02x}")]
    UnknownFrameType(u8),
    #[error("truncated frame")]
    TruncatedFrame,
    #[error("frame payload of {0} bytes exceeds the limit")]
    FrameTooLarge(u64),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("DATA received before HELLO")]
    DataBeforeHello,
    #[error("unexpected frame: {0}")]
    UnexpectedFrame(&'static str),
    #[error("invalid HELLO: {0}")]
    InvalidHello(String),
    #[error("could not bind: {0}")]
    BindFailure(std::io::Error),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Model(#[from] NetError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Edf(#[from] EdfError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
