//! External-process backend speaking newline-delimited JSON over the child's
//! standard streams.
//!
//! Each connection is one child process with a single request in flight. A
//! backend holds a pool of connections so batch workers can query in
//! parallel.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use log::debug;
use serde_json::{json, Value};

use crate::domain::{BBox, ClassId, ImageBuf, Prediction};
use crate::error::{Error, Result};
use crate::preprocess::{expand_roi, read_png, second_view, write_png};
use crate::symbolizer::FeatureMap;

use super::manifest::ManifestRecord;
use super::tensor::read_feature_tensor;
use super::{CropParams, Predictor, Segmenter, View};

pub const PROTOCOL_VERSION: u64 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

struct Connection {
    child: Child,
    stdin: Option<ChildStdin>,
    replies: Receiver<std::io::Result<String>>,
    broken: Option<String>,
}

impl Connection {
    fn spawn(command: &str) -> Result<Self> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit());
        // Own process group, so a kill reaches whatever the shell started.
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
        let mut child = cmd.spawn().map_err(|source| Error::Spawn {
            command: command.to_string(),
            source,
        })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            replies: rx,
            broken: None,
        })
    }

    /// Sends one message and waits for one reply line.
    fn round_trip(&mut self, request: &Value, timeout: Duration) -> Result<(Value, String)> {
        if let Some(reason) = &self.broken {
            return Err(Error::backend(format!("connection unusable: {reason}")));
        }
        let mut line = serde_json::to_string(request).expect("serializable");
        line.push('\n');
        let stdin = self.stdin.as_mut().expect("stdin open while connection is live");
        if let Err(e) = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()) {
            self.broken = Some(e.to_string());
            return Err(Error::backend(format!("failed to write request: {e}")));
        }
        let raw = match self.replies.recv_timeout(timeout) {
            Ok(Ok(raw)) => raw,
            Ok(Err(e)) => {
                self.broken = Some(e.to_string());
                return Err(Error::backend(format!("failed to read reply: {e}")));
            }
            Err(RecvTimeoutError::Timeout) => {
                self.broken = Some("timed out".into());
                self.kill();
                return Err(Error::Timeout(timeout));
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.broken = Some("closed".into());
                return Err(Error::Backend {
                    message: "backend closed its output".into(),
                    raw: None,
                });
            }
        };
        match serde_json::from_str::<Value>(&raw) {
            Ok(v) if v.is_object() => Ok((v, raw)),
            _ => Err(Error::Backend {
                message: "reply is not a JSON object".into(),
                raw: Some(raw),
            }),
        }
    }

    fn kill(&mut self) {
        #[cfg(unix)]
        {
            // The child leads its own group, so its pid is the group id.
            let _ = Command::new("kill")
                .args(["-s", "KILL", "--"])
                .arg(format!("-{}", self.child.id()))
                .stderr(Stdio::null())
                .status();
        }
        let _ = self.child.kill();
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        drop(self.stdin.take());
        // A child that has already exited needs no signal.
        if !matches!(self.child.try_wait(), Ok(Some(_))) {
            self.kill();
        }
        let _ = self.child.wait();
    }
}

pub struct ExecBackend {
    connections: Vec<Mutex<Connection>>,
    capabilities: Vec<String>,
    timeout: Duration,
    next_id: AtomicU64,
    scratch: tempfile::TempDir,
    images: Mutex<HashMap<PathBuf, Arc<ImageBuf>>>,
}

impl std::fmt::Debug for ExecBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExecBackend")
            .field("connections", &self.connections.len())
            .field("capabilities", &self.capabilities)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl ExecBackend {
    /// Starts `connections` copies of `command` and handshakes with each.
    pub fn spawn(command: &str, connections: usize, timeout: Duration) -> Result<Self> {
        let mut pool = Vec::with_capacity(connections.max(1));
        let mut capabilities = Vec::new();
        for _ in 0..connections.max(1) {
            let mut conn = Connection::spawn(command)?;
            let (reply, raw) = conn
                .round_trip(&json!({"op": "hello", "proto": PROTOCOL_VERSION}), timeout)
                .map_err(|e| Error::Handshake(e.to_string()))?;
            if reply["op"] != "hello" || reply["proto"] != PROTOCOL_VERSION {
                return Err(Error::Handshake(format!("unexpected reply {raw}")));
            }
            capabilities = reply["capabilities"]
                .as_array()
                .map(|caps| caps.iter().filter_map(|c| c.as_str().map(String::from)).collect())
                .unwrap_or_default();
            pool.push(Mutex::new(conn));
        }
        debug!("exec backend `{command}` ready with capabilities {capabilities:?}");
        let scratch = tempfile::Builder::new()
            .prefix("tot-views")
            .tempdir()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        Ok(Self {
            connections: pool,
            capabilities,
            timeout,
            next_id: AtomicU64::new(0),
            scratch,
            images: Mutex::new(HashMap::new()),
        })
    }

    pub fn capabilities(&self) -> &[String] {
        &self.capabilities
    }

    pub fn supports(&self, capability: &str) -> bool {
        self.capabilities.iter().any(|c| c == capability)
    }

    /// Sends a request on a free connection and returns the matching result.
    pub fn request(&self, op: &str, mut body: serde_json::Map<String, Value>) -> Result<(Value, String)> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        body.insert("op".into(), op.into());
        body.insert("id".into(), id.into());
        let request = Value::Object(body);

        let mut guard = self
            .connections
            .iter()
            .find_map(|c| c.try_lock().ok())
            .unwrap_or_else(|| {
                self.connections[id as usize % self.connections.len()]
                    .lock()
                    .unwrap_or_else(|p| p.into_inner())
            });
        let (reply, raw) = guard.round_trip(&request, self.timeout)?;
        drop(guard);

        if reply["id"] != request["id"] {
            return Err(Error::Backend {
                message: format!("reply id does not match request id {id}"),
                raw: Some(raw),
            });
        }
        match reply["op"].as_str() {
            Some("result") => Ok((reply, raw)),
            Some("error") => Err(Error::Backend {
                message: reply["message"].as_str().unwrap_or("unspecified error").to_string(),
                raw: Some(raw),
            }),
            _ => Err(Error::Backend {
                message: "unexpected reply op".into(),
                raw: Some(raw),
            }),
        }
    }

    fn image(&self, record: &ManifestRecord) -> Result<(PathBuf, Arc<ImageBuf>)> {
        let path = record
            .image()
            .ok_or_else(|| Error::backend(format!("record {} has no image_path", record.id)))?;
        let path = std::path::absolute(&path).map_err(|e| Error::io(&path, e))?;
        let mut cache = self.images.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(img) = cache.get(&path) {
            return Ok((path, img.clone()));
        }
        let img = Arc::new(read_png(&path)?);
        cache.insert(path.clone(), img.clone());
        Ok((path, img))
    }

    /// Path of the image the backend should look at for `view`, writing a
    /// crop to scratch space when needed.
    fn view_path(&self, record: &ManifestRecord, view: &View, crop: &CropParams) -> Result<PathBuf> {
        let (path, img) = self.image(record)?;
        match *view {
            View::Full => Ok(path),
            View::Crop {
                roi_index,
                roi,
                box_index,
                sigma,
            } => {
                let boxes = expand_roi(roi, crop.delta, img.dims())?;
                let pixels = second_view(&img, boxes.boxes[box_index], crop.target, sigma.unwrap_or(0.0))?;
                let n = self.next_id.fetch_add(1, Ordering::Relaxed);
                let tag = sigma.map_or("nb".to_string(), |s| format!("s{s}"));
                let name: String = record
                    .id
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
                    .collect();
                let out = self
                    .scratch
                    .path()
                    .join(format!("{name}_r{roi_index}_b{box_index}_{tag}_{n}.png"));
                write_png(&pixels, &out)?;
                Ok(out)
            }
        }
    }
}

fn path_arg(path: &Path) -> Value {
    Value::String(path.display().to_string())
}

fn parse_predictions(reply: &Value, raw: &str) -> Result<Vec<Prediction>> {
    let bad = |m: &str| Error::Backend {
        message: m.to_string(),
        raw: Some(raw.to_string()),
    };
    let classes = reply["classes"].as_array().ok_or_else(|| bad("missing classes"))?;
    let scores = match reply.get("scores") {
        Some(Value::Array(s)) => s.clone(),
        None | Some(Value::Null) => vec![Value::from(0.0); classes.len()],
        _ => return Err(bad("scores must be an array")),
    };
    if scores.len() != classes.len() {
        return Err(bad("classes and scores differ in length"));
    }
    let mut out = Vec::with_capacity(classes.len());
    for (c, s) in classes.iter().zip(&scores) {
        let class = c
            .as_u64()
            .filter(|v| *v <= u32::MAX as u64)
            .ok_or_else(|| bad("class ids must be integers"))?;
        let score = s.as_f64().ok_or_else(|| bad("scores must be numbers"))?;
        out.push(Prediction::new(ClassId(class as u32), score));
    }
    if out.windows(2).any(|w| w[0].score < w[1].score) {
        return Err(bad("predictions are not sorted by descending score"));
    }
    Ok(out)
}

impl Predictor for ExecBackend {
    fn predict(&self, record: &ManifestRecord, view: &View, crop: &CropParams) -> Result<Vec<Prediction>> {
        let path = self.view_path(record, view, crop)?;
        let mut body = serde_json::Map::new();
        body.insert("image".into(), path_arg(&path));
        let (reply, raw) = self.request("predict", body)?;
        parse_predictions(&reply, &raw)
    }

    fn features(&self, record: &ManifestRecord) -> Result<Option<FeatureMap>> {
        if !self.supports("features") {
            return Ok(None);
        }
        let (path, _) = self.image(record)?;
        let mut body = serde_json::Map::new();
        body.insert("image".into(), path_arg(&path));
        let (reply, raw) = self.request("features", body)?;
        let tensor = reply["tensor"].as_str().ok_or_else(|| Error::Backend {
            message: "missing tensor path".into(),
            raw: Some(raw.clone()),
        })?;
        read_feature_tensor(Path::new(tensor)).map(Some)
    }
}

impl Segmenter for ExecBackend {
    fn segment(&self, record: &ManifestRecord, prompt: &str) -> Result<Vec<(BBox, f64)>> {
        let (path, img) = self.image(record)?;
        let mut body = serde_json::Map::new();
        body.insert("image".into(), path_arg(&path));
        body.insert("prompt".into(), prompt.into());
        let (reply, raw) = self.request("segment", body)?;
        let bad = |m: String| Error::Backend {
            message: m,
            raw: Some(raw.clone()),
        };
        let boxes = reply["boxes"].as_array().ok_or_else(|| bad("missing boxes".into()))?;
        let scores: Vec<f64> = match reply.get("scores").and_then(Value::as_array) {
            Some(s) => s.iter().map(|v| v.as_f64().unwrap_or(0.0)).collect(),
            None => vec![1.0; boxes.len()],
        };
        if scores.len() != boxes.len() {
            return Err(bad("boxes and scores differ in length".into()));
        }
        let (w, h) = img.dims();
        let mut out = Vec::with_capacity(boxes.len());
        for (b, s) in boxes.iter().zip(scores) {
            let coords: Vec<i64> = b
                .as_array()
                .map(|a| a.iter().filter_map(Value::as_i64).collect())
                .unwrap_or_default();
            if coords.len() != 4 {
                return Err(bad(format!("box {b} is not four integers")));
            }
            let bbox = BBox::new(coords[0], coords[1], coords[2], coords[3])
                .clamp(w, h)
                .validate()
                .map_err(|e| bad(e.to_string()))?;
            out.push((bbox, s));
        }
        Ok(out)
    }
}
