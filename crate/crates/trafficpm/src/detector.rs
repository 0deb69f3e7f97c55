//! Detector protocol wire format and the three transports: a scripted mock,
//! a child process over newline-delimited stdio, and an HTTP service.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use trafficpm_core::detection::{
    DetectRequest, Detection, Detector, MockDetector, RawDetection, UnscriptedImage,
};

use crate::config::{BackendSpec, PipelineConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub image_path: String,
    pub width: u32,
    pub height: u32,
}

impl From<&DetectRequest> for WireRequest {
    fn from(r: &DetectRequest) -> Self {
        WireRequest {
            image_path: r.image_path.clone(),
            width: r.width,
            height: r.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub label: String,
    pub confidence: f64,
    pub bbox: [f64; 4],
}

impl From<WireDetection> for RawDetection {
    fn from(w: WireDetection) -> Self {
        RawDetection {
            label: w.label,
            confidence: w.confidence,
            bbox: w.bbox,
        }
    }
}

impl From<&RawDetection> for WireDetection {
    fn from(r: &RawDetection) -> Self {
        WireDetection {
            label: r.label.clone(),
            confidence: r.confidence,
            bbox: r.bbox,
        }
    }
}

impl From<&Detection> for WireDetection {
    fn from(d: &Detection) -> Self {
        WireDetection {
            label: d.label.as_str().to_owned(),
            confidence: d.confidence,
            bbox: d.bbox.to_array(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireResponse {
    Detections { detections: Vec<WireDetection> },
    Error { error: String },
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error(transparent)]
    Unscripted(#[from] UnscriptedImage),
    #[error("detector reported an error for {image}: {message}")]
    Remote { image: String, message: String },
    #[error("detector response is not valid protocol JSON: {0}")]
    Malformed(String),
    #[error("detector process: {0}")]
    Process(String),
    #[error("detector service: {0}")]
    Http(String),
}

fn decode_response(image: &str, body: &[u8]) -> Result<Vec<RawDetection>, BackendError> {
    match serde_json::from_slice::<WireResponse>(body) {
        Ok(WireResponse::Detections { detections }) => {
            Ok(detections.into_iter().map(RawDetection::from).collect())
        }
        Ok(WireResponse::Error { error }) => Err(BackendError::Remote {
            image: image.to_owned(),
            message: error,
        }),
        Err(e) => Err(BackendError::Malformed(e.to_string())),
    }
}

struct StdioChild {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for StdioChild {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub enum Backend {
    Mock(MockDetector),
    Stdio(Mutex<StdioChildHandle>),
    Http {
        client: reqwest::blocking::Client,
        url: String,
    },
}

/// Opaque handle on a running detector process.
pub struct StdioChildHandle(StdioChild);

impl Backend {
    pub fn from_spec(spec: &BackendSpec, cfg: &PipelineConfig) -> anyhow::Result<Backend> {
        match spec {
            BackendSpec::Mock(path) => Ok(Backend::Mock(load_mock_fixture(&cfg.resolve(path))?)),
            BackendSpec::Command(argv) => Backend::spawn(argv),
            BackendSpec::Url(url) => Ok(Backend::http(url)?),
        }
    }

    pub fn spawn(argv: &[String]) -> anyhow::Result<Backend> {
        let (prog, args) = argv.split_first().context("empty detector command")?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .with_context(|| format!("starting detector process {prog:?}"))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Backend::Stdio(Mutex::new(StdioChildHandle(StdioChild {
            child,
            stdin,
            stdout,
        }))))
    }

    pub fn http(url: &str) -> anyhow::Result<Backend> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()?;
        let url = format!("{}/detect", url.trim_end_matches('/'));
        Ok(Backend::Http { client, url })
    }
}

impl Detector for Backend {
    type Error = BackendError;

    fn detect_raw(&self, request: &DetectRequest) -> Result<Vec<RawDetection>, BackendError> {
        let body = serde_json::to_string(&WireRequest::from(request)).expect("request serializes");
        match self {
            Backend::Mock(m) => Ok(m.detect_raw(request)?),
            Backend::Stdio(handle) => {
                // One request in flight per process.
                let mut guard = handle
                    .lock()
                    .map_err(|_| BackendError::Process("connection poisoned".into()))?;
                let p = &mut guard.0;
                writeln!(p.stdin, "{body}")
                    .and_then(|_| p.stdin.flush())
                    .map_err(|e| BackendError::Process(format!("writing request: {e}")))?;
                let mut line = String::new();
                let n = p
                    .stdout
                    .read_line(&mut line)
                    .map_err(|e| BackendError::Process(format!("reading response: {e}")))?;
                if n == 0 {
                    return Err(BackendError::Process("process closed its output".into()));
                }
                decode_response(&request.image_path, line.as_bytes())
            }
            Backend::Http { client, url } => {
                let resp = client
                    .post(url)
                    .header(reqwest::header::CONTENT_TYPE, "application/json")
                    .body(body)
                    .send()
                    .map_err(|e| BackendError::Http(e.to_string()))?;
                let status = resp.status();
                let bytes = resp.bytes().map_err(|e| BackendError::Http(e.to_string()))?;
                match decode_response(&request.image_path, &bytes) {
                    Err(BackendError::Malformed(_)) if !status.is_success() => {
                        Err(BackendError::Http(format!("{url}: HTTP {status}")))
                    }
                    other => other,
                }
            }
        }
    }
}

/// Reads a mock fixture: a JSON object mapping image path to a protocol
/// response `{"detections":[...]}`.
pub fn load_mock_fixture(path: &Path) -> anyhow::Result<MockDetector> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading mock fixture {}", path.display()))?;
    let map: BTreeMap<String, WireResponse> = serde_json::from_str(&text)
        .with_context(|| format!("parsing mock fixture {}", path.display()))?;
    let mut script = BTreeMap::new();
    for (image, resp) in map {
        match resp {
            WireResponse::Detections { detections } => {
                script.insert(image, detections.into_iter().map(RawDetection::from).collect());
            }
            WireResponse::Error { .. } => anyhow::bail!(
                "mock fixture {}: entry {image:?} must hold detections",
                path.display()
            ),
        }
    }
    Ok(MockDetector::new(script))
}

/// Answers one protocol request line from a mock script. Malformed requests
/// get an error object rather than ending the session.
pub fn answer_line(mock: &MockDetector, line: &str) -> WireResponse {
    let req: WireRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            return WireResponse::Error {
                error: format!("malformed request: {e}"),
            }
        }
    };
    let request = DetectRequest {
        image_path: req.image_path,
        width: req.width,
        height: req.height,
    };
    match mock.detect_raw(&request) {
        Ok(raw) => WireResponse::Detections {
            detections: raw.iter().map(WireDetection::from).collect(),
        },
        Err(e) => WireResponse::Error {
            error: e.to_string(),
        },
    }
}

/// Serves the stdio protocol from a mock script until input ends.
pub fn serve_mock_stdio(
    mock: &MockDetector,
    input: impl BufRead,
    mut output: impl Write,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = answer_line(mock, &line);
        writeln!(output, "{}", serde_json::to_string(&resp).expect("response serializes"))?;
        output.flush()?;
    }
    Ok(())
}
