//! Line-delimited JSON protocol to an external prompt segmenter.
//!
//! Request: `{"view_id": k, "prompts": [[w, h], ...]}`. Response:
//! `{"mask": [runs...], "H": h, "W": w}` where the runs alternate between
//! unset and set pixels in row-major order, starting with unset; or
//! `{"error": "..."}`. Requests are answered in order.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refinement::{Prompt, Segmenter};
use crate::scene::Mask;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub view_id: usize,
    pub prompts: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SegmentResponse {
    Mask {
        mask: Vec<u64>,
        #[serde(rename = "H")]
        height: usize,
        #[serde(rename = "W")]
        width: usize,
    },
    Error {
        error: String,
    },
}

/// Run lengths of `mask` in row-major order, starting with unset pixels.
pub fn rle_encode(mask: &Mask) -> Vec<u64> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u64;
    for &v in &mask.data {
        if v != current {
            runs.push(len);
            current = v;
            len = 0;
        }
        len += 1;
    }
    runs.push(len);
    runs
}

pub fn rle_decode(runs: &[u64], width: usize, height: usize) -> Result<Mask> {
    let total: u64 = runs.iter().try_fold(0u64, |a, &r| a.checked_add(r)).unwrap_or(u64::MAX);
    if total != (width * height) as u64 {
        return Err(Error::format(
            "segmenter response",
            format!("runs cover {total} pixels, mask has {}", width * height),
        ));
    }
    let mut data = Vec::with_capacity(width * height);
    for (i, &r) in runs.iter().enumerate() {
        data.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
    }
    Ok(Mask { width, height, data })
}

pub fn response_for(result: Result<Mask>) -> SegmentResponse {
    match result {
        Ok(m) => SegmentResponse::Mask {
            mask: rle_encode(&m),
            height: m.height,
            width: m.width,
        },
        Err(e) => SegmentResponse::Error { error: e.to_string() },
    }
}

fn parse_response(line: &str) -> Result<Mask> {
    let resp: SegmentResponse = serde_json::from_str(line.trim())
        .map_err(|e| Error::Segmenter(format!("malformed response: {e}")))?;
    match resp {
        SegmentResponse::Mask { mask, height, width } => {
            rle_decode(&mask, width, height).map_err(|e| Error::Segmenter(e.to_string()))
        }
        SegmentResponse::Error { error } => Err(Error::Segmenter(error)),
    }
}

/// Answers requests from `input` with `segmenter` until end of input.
/// Malformed requests get an error response.
pub fn serve<R: BufRead, W: Write>(input: R, mut output: W, segmenter: &dyn Segmenter) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<SegmentRequest>(&line) {
            Ok(req) => response_for(segmenter.segment(req.view_id, &req.prompts)),
            Err(e) => SegmentResponse::Error {
                error: format!("malformed request: {e}"),
            },
        };
        serde_json::to_writer(&mut output, &resp).map_err(|e| Error::Segmenter(e.to_string()))?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    /// Responses still owed to requests that timed out.
    stale: usize,
    child: Option<Child>,
    socket: Option<TcpStream>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(s) = self.socket.take() {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
        if let Some(mut c) = self.child.take() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

/// Client for a segmenter speaking the wire protocol over a child process's
/// stdio or a TCP socket. Calls are serialized; a call that exceeds the
/// timeout fails and its late answer is discarded.
pub struct WireSegmenter {
    conn: Mutex<Connection>,
    timeout: Duration,
}

fn spawn_reader<R: std::io::Read + Send + 'static>(r: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(r).lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl WireSegmenter {
    pub fn spawn(command: &mut Command, timeout: Duration) -> Result<Self> {
        let mut child = command.stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
        let stdin: ChildStdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        Ok(WireSegmenter {
            conn: Mutex::new(Connection {
                writer: Box::new(stdin),
                lines: spawn_reader(stdout),
                stale: 0,
                child: Some(child),
                socket: None,
            }),
            timeout,
        })
    }

    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        let socket = stream.try_clone()?;
        Ok(WireSegmenter {
            conn: Mutex::new(Connection {
                writer: Box::new(stream),
                lines: spawn_reader(reader),
                stale: 0,
                child: None,
                socket: Some(socket),
            }),
            timeout,
        })
    }

    fn receive(&self, conn: &mut Connection) -> Result<String> {
        loop {
            let line = match conn.lines.recv_timeout(self.timeout) {
                Ok(Ok(l)) => l,
                Ok(Err(e)) => return Err(Error::Segmenter(format!("read failed: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    conn.stale += 1;
                    return Err(Error::Segmenter(format!("no response within {:?}", self.timeout)));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Segmenter("segmenter closed the connection".into()))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            if conn.stale > 0 {
                conn.stale -= 1;
                continue;
            }
            return Ok(line);
        }
    }
}

impl Segmenter for WireSegmenter {
    fn segment(&self, view: usize, prompts: &[Prompt]) -> Result<Mask> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let mut req = serde_json::to_vec(&SegmentRequest {
            view_id: view,
            prompts: prompts.to_vec(),
        })
        .map_err(|e| Error::Segmenter(e.to_string()))?;
        req.push(b'\n');
        conn.writer
            .write_all(&req)
            .and_then(|_| conn.writer.flush())
            .map_err(|e| Error::Segmenter(format!("write failed: {e}")))?;
        let line = self.receive(&mut conn)?;
        parse_response(&line)
    }
}
