//! Client that replays a recording as a live device.

use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use super::{read_frame, write_frame, Frame, Hello, StageFrame, StreamError, CALIB_SERVER_DEFAULT};
use crate::edf::EdfFile;

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    /// Multiple of real time; 0 sends as fast as the socket accepts.
    pub speed: f64,
    pub chunk_seconds: f64,
    pub calib_epochs: u16,
    pub device_name: String,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            speed: 1.0,
            chunk_seconds: 1.0,
            calib_epochs: CALIB_SERVER_DEFAULT,
            device_name: "replay".into(),
        }
    }
}

/// Streams `samples` to a server and returns the STAGE frames it answered
/// with, calling `on_stage` for each as it arrives.
pub fn replay_samples(
    addr: impl ToSocketAddrs,
    samples: &[f32],
    sample_rate_hz: u32,
    opts: &ReplayOptions,
    mut on_stage: impl FnMut(&StageFrame),
) -> Result<Vec<StageFrame>, StreamError> {
    if !(opts.speed >= 0.0 && opts.speed.is_finite()) {
        return Err(StreamError::InvalidHello(format!(
            "speed {} is not a finite non-negative number",
            opts.speed
        )));
    }
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let read_half = stream.try_clone()?;
    let (tx, rx) = mpsc::channel();
    let reader = thread::spawn(move || -> Result<(), StreamError> {
        let mut r = BufReader::new(read_half);
        while let Some(frame) = read_frame(&mut r)? {
            match frame {
                Frame::Stage(s) => {
                    if tx.send(s).is_err() {
                        break;
                    }
                }
                _ => return Err(StreamError::UnexpectedFrame("server sent a non-STAGE frame")),
            }
        }
        Ok(())
    });

    let mut frames = Vec::new();
    let mut drain = |frames: &mut Vec<StageFrame>| {
        while let Ok(s) = rx.try_recv() {
            on_stage(&s);
            frames.push(s);
        }
    };
    let mut w = BufWriter::new(&stream);
    write_frame(
        &mut w,
        &Frame::Hello(Hello {
            sample_rate_hz,
            calib_epochs: opts.calib_epochs,
            device_name: opts.device_name.clone(),
        }),
    )?;
    let chunk = ((opts.chunk_seconds * sample_rate_hz as f64).round() as usize).max(1);
    let start = Instant::now();
    for (k, c) in samples.chunks(chunk).enumerate() {
        if opts.speed > 0.0 {
            let due = Duration::from_secs_f64(k as f64 * chunk as f64 / sample_rate_hz as f64 / opts.speed);
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                thread::sleep(wait);
            }
        }
        write_frame(&mut w, &Frame::Data(c.to_vec()))?;
        w.flush()?;
        drain(&mut frames);
    }
    write_frame(&mut w, &Frame::Bye)?;
    w.flush()?;
    drop(w);
    // the server closes after BYE; this only hurries a server that does not
    let _ = stream.shutdown(Shutdown::Write);
    let result = reader.join().expect("reader thread panicked");
    drain(&mut frames);
    result?;
    Ok(frames)
}

/// Replays one channel of an EDF file at its native rate, which must be an
/// integer number of hertz.
pub fn replay_edf(
    path: impl AsRef<Path>,
    channel: &str,
    addr: impl ToSocketAddrs,
    opts: &ReplayOptions,
    on_stage: impl FnMut(&StageFrame),
) -> Result<Vec<StageFrame>, StreamError> {
    let rec = EdfFile::open(path)?.read_signal(channel)?;
    let rate = rec.sample_rate_hz;
    if rate.fract() != 0.0 || rate < 1.0 || rate > u32::MAX as f64 {
        return Err(StreamError::InvalidHello(format!(
            "sample rate {rate} Hz is not a whole number"
        )));
    }
    let samples: Vec<f32> = rec.samples.iter().map(|&x| x as f32).collect();
    replay_samples(addr, &samples, rate as u32, opts, on_stage)
}
