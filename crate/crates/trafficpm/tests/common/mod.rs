#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use trafficpm::ingest::ReplayEntry;
use trafficpm_core::Timestamp;

/// PNG whose pixels depend on `seed`, so distinct seeds give distinct bytes.
pub fn png(w: u32, h: u32, seed: u64) -> Vec<u8> {
    let s = seed.to_le_bytes();
    let img = image::RgbImage::from_fn(w, h, |x, y| {
        let i = (x + y * w) as usize;
        image::Rgb([s[i % 8], s[(i + 3) % 8] ^ (x as u8), s[(i + 5) % 8] ^ (y as u8)])
    });
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

pub struct Response {
    pub status: u16,
    pub body: Vec<u8>,
}

impl Response {
    pub fn ok(body: impl Into<Vec<u8>>) -> Self {
        Response {
            status: 200,
            body: body.into(),
        }
    }

    pub fn status(status: u16) -> Self {
        Response {
            status,
            body: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Seen {
    pub method: String,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

/// Minimal HTTP server on an ephemeral port, answering with `route`.
pub struct TestServer {
    pub url: String,
    pub seen: Arc<Mutex<Vec<Seen>>>,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start(route: impl Fn(&Seen) -> Response + Send + 'static) -> TestServer {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let addr = server.server_addr().to_ip().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let (srv, log) = (Arc::clone(&server), Arc::clone(&seen));
        let handle = std::thread::spawn(move || {
            for mut req in srv.incoming_requests() {
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let s = Seen {
                    method: req.method().to_string(),
                    url: req.url().to_owned(),
                    headers: req
                        .headers()
                        .iter()
                        .map(|h| (h.field.to_string().to_ascii_lowercase(), h.value.to_string()))
                        .collect(),
                    body,
                };
                let resp = route(&s);
                log.lock().unwrap().push(s);
                let _ = req.respond(
                    tiny_http::Response::from_data(resp.body).with_status_code(resp.status),
                );
            }
        });
        TestServer {
            url: format!("http://{addr}"),
            seen,
            server,
            handle: Some(handle),
        }
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

pub struct Frame {
    pub camera_id: String,
    pub image_timestamp: Timestamp,
    pub bytes: Vec<u8>,
    pub width: u32,
    pub height: u32,
}

/// Writes a replayable fetch log plus response bodies into `dir`.
pub fn write_replay_log(dir: &Path, frames: &[Frame]) -> PathBuf {
    std::fs::create_dir_all(dir.join("bodies")).unwrap();
    let mut lines = String::new();
    for (i, f) in frames.iter().enumerate() {
        let body = format!("bodies/{i:05}.bin");
        std::fs::write(dir.join(&body), &f.bytes).unwrap();
        let entry = trafficpm::ingest::IndexEntry {
            camera_id: f.camera_id.clone(),
            image_timestamp: f.image_timestamp,
            image_url: format!("http://repo.invalid/{}/{i}.jpg", f.camera_id),
            width: f.width,
            height: f.height,
        };
        let e = ReplayEntry::new(&entry, f.image_timestamp + chrono::Duration::seconds(20), body);
        lines.push_str(&serde_json::to_string(&e).unwrap());
        lines.push('\n');
    }
    let log = dir.join("fetch_log.jsonl");
    std::fs::write(&log, lines).unwrap();
    log
}

/// Archive image reference for a frame, as used by detections and labels.
pub fn image_ref(camera_id: &str, t: Timestamp, bytes: &[u8]) -> String {
    format!(
        "{camera_id}/{}_{}.jpg",
        t.format("%Y%m%dT%H%M%SZ"),
        trafficpm_core::raster::ContentHash::of(bytes).hex_prefix(12)
    )
}

/// Pearson's r by the two-pass textbook formula.
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}
