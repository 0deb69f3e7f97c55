mod common;

use chrono::{TimeZone, Utc};
use common::{png, Response, TestServer};
use trafficpm::archive::Archive;
use trafficpm::config::PipelineConfig;
use trafficpm::detector::Backend;
use trafficpm::ingest::{IndexEntry, IngestError, RepositoryClient};
use trafficpm::pipeline;
use trafficpm_core::detection::{detect, DetectRequest, Label};

fn index_json(base: &str, w: u32) -> String {
    format!(
        r#"{{"items":[{{"timestamp":"2022-02-24T13:00:00+08:00","cameras":[
        {{"camera_id":"4703","timestamp":"2022-02-24T12:59:40+08:00","image":"{base}/img/4703.jpg","image_metadata":{{"height":24,"width":{w},"md5":"x"}}}},
        {{"camera_id":"4704","timestamp":"2022-02-24T12:59:20+08:00","image":"{base}/img/4704.jpg","image_metadata":{{"height":24,"width":32,"md5":"y"}}}}]}}]}}"#
    )
}

fn entry(url: String, w: u32, h: u32) -> IndexEntry {
    IndexEntry {
        camera_id: "4703".into(),
        image_timestamp: Utc.with_ymd_and_hms(2022, 2, 24, 5, 0, 0).unwrap(),
        image_url: url,
        width: w,
        height: h,
    }
}

#[test]
fn index_with_two_cameras_and_date_time_query() {
    let server = TestServer::start(|_| Response::ok(index_json("http://unused", 32)));
    let client = RepositoryClient::new(format!("{}/idx", server.url), None).unwrap();
    let at = Utc.with_ymd_and_hms(2022, 2, 24, 5, 0, 0).unwrap();
    let idx = client.fetch_index(at).unwrap();
    assert_eq!(idx.entries.len(), 2);
    assert_eq!(idx.warnings, 0);
    let seen = server.seen.lock().unwrap();
    assert_eq!(seen[0].url, "/idx?date_time=2022-02-24T05:00:00Z");
}

#[test]
fn not_found_is_transport_error() {
    let server = TestServer::start(|_| Response::status(404));
    let client = RepositoryClient::new(server.url.clone(), None).unwrap();
    let err = client
        .fetch_index(Utc.with_ymd_and_hms(2022, 2, 24, 5, 0, 0).unwrap())
        .unwrap_err();
    match err {
        IngestError::Transport {
            status, retryable, ..
        } => {
            assert_eq!(status, Some(404));
            assert!(!retryable);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn server_error_is_retryable() {
    let server = TestServer::start(|_| Response::status(503));
    let client = RepositoryClient::new(server.url.clone(), None).unwrap();
    let err = client
        .fetch_image(&entry(format!("{}/a.jpg", server.url), 32, 24))
        .unwrap_err();
    assert!(err.is_retryable());
}

#[test]
fn image_decode_and_integrity() {
    let good = png(32, 24, 7);
    let truncated = good[..good.len() / 2].to_vec();
    let small = png(16, 12, 7);
    let server = TestServer::start(move |s| match s.url.as_str() {
        "/good.png" => Response::ok(good.clone()),
        "/truncated.png" => Response::ok(truncated.clone()),
        _ => Response::ok(small.clone()),
    });
    let client = RepositoryClient::new(server.url.clone(), None).unwrap();

    let img = client
        .fetch_image(&entry(format!("{}/good.png", server.url), 32, 24))
        .unwrap();
    assert_eq!((img.image.width(), img.image.height()), (32, 24));
    assert_eq!(img.image.content_hash, trafficpm_core::raster::ContentHash::of(&png(32, 24, 7)));

    let err = client
        .fetch_image(&entry(format!("{}/truncated.png", server.url), 32, 24))
        .unwrap_err();
    assert!(matches!(err, IngestError::Decode { .. }), "{err:?}");

    let err = client
        .fetch_image(&entry(format!("{}/small.png", server.url), 32, 24))
        .unwrap_err();
    assert!(matches!(err, IngestError::Integrity { actual_w: 16, .. }), "{err:?}");
}

#[test]
fn api_key_header_is_sent() {
    let server = TestServer::start(|_| Response::ok(index_json("http://unused", 32)));
    std::env::set_var(trafficpm::ingest::API_KEY_ENV, "s3cret");
    let client = RepositoryClient::new(server.url.clone(), Some("api-key")).unwrap();
    std::env::remove_var(trafficpm::ingest::API_KEY_ENV);
    client
        .fetch_index(Utc.with_ymd_and_hms(2022, 2, 24, 5, 0, 0).unwrap())
        .unwrap();
    let seen = server.seen.lock().unwrap();
    assert!(seen[0].headers.contains(&("api-key".into(), "s3cret".into())));
}

#[test]
fn live_fetch_records_a_replayable_log() {
    // The index is polled three times; camera 4703 serves the same frame
    // every time, 4704 a new one each time, and one poll has a broken image.
    let polls = std::sync::atomic::AtomicU64::new(0);
    let server = TestServer::start(move |s| {
        if s.url.starts_with("/idx") {
            polls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            let base = s
                .headers
                .iter()
                .find(|(k, _)| k == "host")
                .map(|(_, v)| format!("http://{v}"))
                .unwrap();
            return Response::ok(index_json(&base, 32));
        }
        if s.url == "/img/4703.jpg" {
            return Response::ok(png(32, 24, 1));
        }
        let n = polls.load(std::sync::atomic::Ordering::SeqCst);
        if n == 2 {
            Response::ok(b"not an image".to_vec())
        } else {
            Response::ok(png(32, 24, 100 + n))
        }
    });
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        fetch_interval_s: 300,
        api: trafficpm::config::ApiConfig {
            endpoint: format!("{}/idx", server.url),
            key_name: None,
        },
        ..PipelineConfig::default()
    };
    let from = Utc.with_ymd_and_hms(2022, 2, 24, 5, 0, 0).unwrap();
    let to = Utc.with_ymd_and_hms(2022, 2, 24, 5, 15, 0).unwrap();
    let mut archive = Archive::open(dir.path().join("a")).unwrap();
    let rec = dir.path().join("rec");
    let stats = pipeline::fetch_live(&cfg, &mut archive, from, to, Some(&rec)).unwrap();
    assert_eq!(stats.responses, 5);
    assert_eq!(stats.failures, 1);
    assert_eq!(stats.inserted, 3);
    assert_eq!(stats.duplicates, 2);

    let mut replayed = Archive::open(dir.path().join("b")).unwrap();
    let again = pipeline::fetch_replay(&mut replayed, &rec.join(pipeline::REPLAY_LOG)).unwrap();
    assert_eq!(again.inserted, 3);
    assert_eq!(replayed.records(), archive.records());
}

#[test]
fn http_detector_backend_round_trip() {
    let server = TestServer::start(|s| {
        if s.method != "POST" || s.url != "/detect" {
            return Response::status(404);
        }
        let req: serde_json::Value = serde_json::from_str(&s.body).unwrap();
        if req["image_path"] == "bad.png" {
            return Response {
                status: 200,
                body: br#"{"error":"cannot read image"}"#.to_vec(),
            };
        }
        Response::ok(
            r#"{"detections":[{"label":"bus","confidence":0.8,"bbox":[2,3,10,8]},{"label":"tram","confidence":0.5,"bbox":[0,0,4,4]}]}"#,
        )
    });
    let backend = Backend::http(&server.url).unwrap();
    let req = DetectRequest {
        image_path: "a.png".into(),
        width: 32,
        height: 24,
    };
    let dets = detect(&req, &backend).unwrap();
    assert_eq!(dets.len(), 2);
    assert_eq!(dets[0].label, Label::Bus);
    assert_eq!(dets[1].label, Label::Other);
    let body: serde_json::Value = serde_json::from_str(&server.seen.lock().unwrap()[0].body).unwrap();
    assert_eq!(body, serde_json::json!({"image_path":"a.png","width":32,"height":24}));

    let err = detect(
        &DetectRequest {
            image_path: "bad.png".into(),
            ..req
        },
        &backend,
    )
    .unwrap_err();
    assert!(err.to_string().contains("cannot read image"), "{err}");
}
