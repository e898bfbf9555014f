#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{DateTime, TimeZone, Utc};
use elicit::service::{router, AppState, SeedPolicy, ServiceConfig};
use elicit::store::{ManualClock, Store};
use elicit_core::protocol::Role;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const LANGUAGES: [(&str, &str); 4] = [("hau", "Hausa"), ("ibb", "Ibibio"), ("swh", "Swahili"), ("yor", "Yorùbá")];

/// (text, storyboard) unit counts per language.
pub const COUNTS: [(&str, usize, usize); 4] =
    [("hau", 1154, 968), ("ibb", 887, 883), ("swh", 1334, 1211), ("yor", 1448, 1033)];

/// (storyboard, text, both) judgments out of 300.
pub const FLUENCY: [(&str, [usize; 3]); 4] =
    [("hau", [180, 119, 1]), ("swh", [143, 124, 33]), ("yor", [102, 56, 142]), ("ibb", [108, 78, 114])];
pub const ACCURACY: [(&str, [usize; 3]); 4] =
    [("hau", [65, 235, 0]), ("swh", [42, 192, 66]), ("yor", [23, 206, 71]), ("ibb", [55, 239, 6])];

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 0).unwrap()
}

fn jsonl(path: &Path, records: impl IntoIterator<Item = Value>) {
    let body: String = records.into_iter().map(|r| r.to_string() + "\n").collect();
    fs::write(path, body).unwrap();
}

fn manifest(dir: &Path, codes: &[(&str, &str)]) {
    let languages: Vec<Value> = codes.iter().map(|(c, n)| json!({"code": c, "name": n})).collect();
    fs::write(dir.join("bundle.json"), json!({ "languages": languages }).to_string()).unwrap();
}

const VOCAB: [&str; 14] = [
    "na", "sayi", "takalma", "hula", "kasuwa", "gida", "ruwa", "yaro", "mace", "doki", "gona", "rana", "dare", "abinci",
];

fn sentence(seed: usize) -> String {
    let len = 6 + seed % 7;
    (0..len).map(|j| VOCAB[(seed * 7 + j * j * 3 + j) % VOCAB.len()]).collect::<Vec<_>>().join(" ")
}

/// A bundle whose unit counts per language and method are [`COUNTS`]:
/// 80 storyboards of 20 scenes, units spread over the scenes in order.
pub fn counts_bundle(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    manifest(dir, &LANGUAGES);
    let mut sb = Vec::new();
    for s in 0..80 {
        let id = format!("story-{s:02}");
        sb.push(json!({"type": "storyboard", "id": id, "title": format!("Story {s}")}));
        for i in 1..=20 {
            sb.push(json!({"type": "scene", "storyboard_id": id, "index": i,
                "english_text": format!("Scene {i} of story {s}."), "image_ref": format!("img/{s}-{i}.png")}));
        }
    }
    jsonl(&dir.join("storyboards.jsonl"), sb);
    let mut units = Vec::new();
    let mut n = 0usize;
    for (code, text, story) in COUNTS {
        for (method, count) in [("text", text), ("storyboard", story)] {
            for k in 0..count {
                let scene = k % 1600;
                units.push(json!({
                    "id": format!("{code}-{method}-{k:04}"),
                    "language": code,
                    "storyboard_id": format!("story-{:02}", scene / 20),
                    "scene_index": scene % 20 + 1,
                    "method": method,
                    "translator_id": format!("{code}-{method}-tr{}", k % 4),
                    "text": sentence(n),
                }));
                n += 1;
            }
        }
    }
    jsonl(&dir.join("units.jsonl"), units);
}

/// Judgment CSV with 100 tasks × 3 ratings per (kind, language), resolved
/// to the tallies in [`FLUENCY`] and [`ACCURACY`]. Even tasks show the
/// storyboard unit first.
pub fn tally_judgments(path: &Path) {
    let mut out = String::from(
        "task_id,task_kind,language,storyboard_id,scene_index,annotator_id,raw_choice,resolved,timestamp\n",
    );
    for (kind, table) in [("accuracy", ACCURACY), ("fluency", FLUENCY)] {
        for (code, [s, t, b]) in table {
            let labels: Vec<&str> =
                std::iter::repeat_n("storyboard", s).chain(std::iter::repeat_n("text", t)).chain(std::iter::repeat_n("both", b)).collect();
            assert_eq!(labels.len(), 300);
            for (k, resolved) in labels.iter().enumerate() {
                let task = k / 3;
                let storyboard_first = task % 2 == 0;
                let raw = match (*resolved, storyboard_first) {
                    ("both", _) => "both",
                    ("storyboard", true) | ("text", false) => "1",
                    _ => "2",
                };
                out.push_str(&format!(
                    "{code}-{kind}-{task:03},{kind},{code},story-{:02},{},ev{},{raw},{resolved},2024-05-0{}T10:00:00Z\n",
                    task % 80,
                    task % 20 + 1,
                    k % 3 + 1,
                    if kind == "accuracy" { 2 } else { 3 },
                ));
            }
        }
    }
    fs::write(path, out).unwrap();
}

pub const FARM_ENGLISH: [&str; 6] = [
    "The farmer wakes before the sun rises.",
    "She carries yams to the village market.",
    "A goat follows her along the dusty road.",
    "Traders call out prices under a tall tree.",
    "Her brother counts the coins twice.",
    "They walk home together in the evening light.",
];

/// One storyboard, `sb-farm`, of six scenes with images. Each scene has
/// two Hausa text translations by `tr-a` and one storyboard translation
/// by `tr-b`; Yorùbá has one of each on scenes 1-3 by `tr-c`.
pub fn farm_bundle(dir: &Path) {
    fs::create_dir_all(dir.join("img")).unwrap();
    manifest(dir, &[("hau", "Hausa"), ("yor", "Yorùbá")]);
    let mut sb = vec![json!({"type": "storyboard", "id": "sb-farm", "title": "A day at the market"})];
    for (i, english) in FARM_ENGLISH.iter().enumerate() {
        let index = i + 1;
        sb.push(json!({"type": "scene", "storyboard_id": "sb-farm", "index": index,
            "english_text": english, "image_ref": format!("img/farm-{index}.png")}));
        fs::write(dir.join(format!("img/farm-{index}.png")), format!("png-bytes-{index}")).unwrap();
    }
    jsonl(&dir.join("storyboards.jsonl"), sb);
    let mut units = Vec::new();
    for i in 1..=6u32 {
        for alt in 1..=2 {
            units.push(json!({"id": format!("hau-t-{i}-{alt}"), "language": "hau", "storyboard_id": "sb-farm",
                "scene_index": i, "method": "text", "translator_id": "tr-a",
                "text": format!("Manomi ya tashi da safe {i} zabi {alt}")}));
        }
        units.push(json!({"id": format!("hau-s-{i}"), "language": "hau", "storyboard_id": "sb-farm",
            "scene_index": i, "method": "storyboard", "translator_id": "tr-b",
            "text": format!("Manomi na tafiya gona {i}")}));
        if i <= 3 {
            for m in ["text", "storyboard"] {
                units.push(json!({"id": format!("yor-{m}-{i}"), "language": "yor", "storyboard_id": "sb-farm",
                    "scene_index": i, "method": m, "translator_id": "tr-c",
                    "text": format!("Àgbẹ̀ náà jí ní àárọ̀ {i} {}", m.len())}));
            }
        }
    }
    jsonl(&dir.join("units.jsonl"), units);
}

/// The service over a fresh data directory, with a hand-driven clock.
pub struct Harness {
    pub dir: tempfile::TempDir,
    pub app: Arc<AppState>,
    pub router: Router,
    pub clock: Arc<ManualClock>,
}

impl Harness {
    pub fn new(config: ServiceConfig) -> Harness {
        let dir = tempfile::tempdir().unwrap();
        Harness::open(dir, config)
    }

    pub fn open(dir: tempfile::TempDir, config: ServiceConfig) -> Harness {
        let clock = Arc::new(ManualClock::new(t0()));
        let store = Store::open(dir.path(), 0).unwrap();
        let app = AppState::new(store, clock.clone(), config).unwrap();
        let router = router(app.clone());
        Harness { dir, app, router, clock }
    }

    pub fn token(&self, who: &str, role: Role) -> String {
        elicit::tokens::issue(self.dir.path(), who, role, 30, t0()).unwrap().0
    }

    pub async fn call(&self, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        self.send(req).await
    }

    pub async fn send(&self, req: Request<Body>) -> (StatusCode, Vec<u8>) {
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    pub async fn json(&self, method: &str, uri: &str, token: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.call(method, uri, Some(token), body).await;
        let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, v)
    }

    /// Uploads every file under `bundle` as a multipart part named by its
    /// relative path.
    pub async fn upload(&self, token: &str, bundle: &Path, query: &str) -> (StatusCode, Value) {
        let mut parts = Vec::new();
        collect(bundle, bundle, &mut parts);
        let (status, bytes) = self.upload_parts(token, &parts, query).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    pub async fn upload_parts(&self, token: &str, parts: &[(String, Vec<u8>)], query: &str) -> (StatusCode, Vec<u8>) {
        let boundary = "xXelicitboundaryXx";
        let mut body = Vec::new();
        for (name, data) in parts {
            body.extend(format!("--{boundary}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes());
            body.extend(data);
            body.extend(b"\r\n");
        }
        body.extend(format!("--{boundary}--\r\n").as_bytes());
        let req = Request::builder()
            .method("POST")
            .uri(format!("/corpora{query}"))
            .header("authorization", format!("Bearer {token}"))
            .header("content-type", format!("multipart/form-data; boundary={boundary}"))
            .body(Body::from(body))
            .unwrap();
        self.send(req).await
    }
}

fn collect(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(base, &p, out);
        } else {
            let rel = p.strip_prefix(base).unwrap().to_string_lossy().replace('\\', "/");
            out.push((rel, fs::read(&p).unwrap()));
        }
    }
}

pub fn test_config() -> ServiceConfig {
    ServiceConfig { default_gap_seconds: 3600, allow_gap_override: false, seed_policy: SeedPolicy::Fixed(11) }
}

/// Embedding and POS files covering every unit and English sentence of
/// [`farm_bundle`]. Returns (embeddings, pos).
pub fn farm_inputs(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut ids: Vec<String> = Vec::new();
    for i in 1..=6u32 {
        ids.push(format!("en:sb-farm:{i}"));
        ids.extend((1..=2).map(|alt| format!("hau-t-{i}-{alt}")));
        ids.push(format!("hau-s-{i}"));
        if i <= 3 {
            ids.extend(["text", "storyboard"].map(|m| format!("yor-{m}-{i}")));
        }
    }
    let emb: Vec<Value> = ids
        .iter()
        .enumerate()
        .map(|(k, id)| json!({"sentence_id": id, "values": [1.0, (k % 5) as f64 * 0.25, (k % 3) as f64 * 0.5, 0.125]}))
        .collect();
    let pos: Vec<Value> = ids
        .iter()
        .filter(|id| !id.starts_with("en:"))
        .enumerate()
        .map(|(k, id)| {
            let spread = 0.5 + (k % 4) as f64 * 0.125;
            let rest = 1.0 - spread;
            json!({"sentence_id": id, "tokens": [
                {"token": "a", "probs": {"NOUN": spread, "VERB": rest}},
                {"token": "b", "probs": {"NOUN": rest / 2.0, "VERB": rest / 2.0, "ADJ": spread}},
            ]})
        })
        .collect();
    let (e, p) = (dir.join("embeddings.jsonl"), dir.join("pos.jsonl"));
    jsonl(&e, emb);
    jsonl(&p, pos);
    (e, p)
}
