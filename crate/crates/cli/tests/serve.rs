mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};

use common::{ok, small_scene_toml};
use serde_json::Value;

struct Server {
    child: Child,
    addr: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn start(cfg: &str) -> Server {
    let mut child = Command::new(env!("CARGO_BIN_EXE_barnmap"))
        .args(["serve", "--config", cfg, "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap_or_else(|| panic!("{line}")).to_string();
    Server { child, addr }
}

fn request(s: &Server, method: &str, path: &str, body: &str) -> (u16, Value) {
    let mut stream = TcpStream::connect(&s.addr).unwrap();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: test\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let status = raw[9..12].parse().unwrap();
    let payload = raw.split_once("\r\n\r\n").map(|p| p.1).unwrap_or("");
    (status, serde_json::from_str(payload).unwrap_or(Value::Null))
}

#[test]
fn review_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let scene = small_scene_toml(dir.path());
    let s = dir.path().join("s");
    ok(&["synth", "--out", s.to_str().unwrap(), "--scene", &scene, "--seed", "31"]);
    let cfg = s.join("pipeline.toml").display().to_string();
    ok(&["run", "--config", &cfg, "--forest_vote", "false", "--classify_farms", "false"]);
    let server = start(&cfg);

    let (code, page) = request(&server, "GET", "/candidates?offset=1&limit=3", "");
    assert_eq!(code, 200);
    let total = page["total"].as_u64().unwrap();
    let items = page["items"].as_array().unwrap();
    assert_eq!(items.len(), 3);
    assert_eq!(page["offset"], 1);
    let first = &items[0];
    let chip = &first["chip"];
    assert_eq!(chip["values"].as_array().unwrap().len() as u64, chip["width"].as_u64().unwrap() * chip["height"].as_u64().unwrap());
    assert!(first["features"].as_object().unwrap().contains_key("area_m2"));
    assert!(first["label"].is_null());
    let id = first["id"].as_u64().unwrap();

    assert_eq!(request(&server, "GET", "/candidates?offset=-1", "").0, 400);
    let (code, tail) = request(&server, "GET", &format!("/candidates?offset={total}"), "");
    assert_eq!(code, 200);
    assert!(tail["items"].as_array().unwrap().is_empty());

    assert_eq!(request(&server, "POST", "/labels", "{not json").0, 400);
    assert_eq!(request(&server, "POST", "/labels", r#"{"candidate_id": 1, "label": "maybe"}"#).0, 400);
    assert_eq!(request(&server, "POST", "/labels", r#"{"candidate_id": 99999999, "label": "barn"}"#).0, 404);

    let post = |label: &str| request(&server, "POST", "/labels", &format!(r#"{{"candidate_id": {id}, "label": "{label}", "annotator": "t"}}"#));
    let (code, p) = post("barn");
    assert_eq!(code, 200);
    assert_eq!((p["labeled"].as_u64(), p["barn"].as_u64(), p["total"].as_u64()), (Some(1), Some(1), Some(total)));
    let (_, p) = post("false_positive");
    assert_eq!((p["labeled"].as_u64(), p["barn"].as_u64(), p["false_positive"].as_u64()), (Some(1), Some(0), Some(1)));

    let (code, progress) = request(&server, "GET", "/progress", "");
    assert_eq!(code, 200);
    assert_eq!(progress, p);
    let (_, page) = request(&server, "GET", "/candidates?offset=1&limit=1", "");
    assert_eq!(page["items"][0]["label"], "false_positive");

    let lines = std::fs::read_to_string(s.join("out").join("labels.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);
}
