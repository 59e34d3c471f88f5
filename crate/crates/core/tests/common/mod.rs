#![allow(dead_code)]

use std::collections::VecDeque;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn golden(name: &str) -> String {
    fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/golden")
            .join(name),
    )
    .unwrap()
}

/// Real benchmark files, when present: `LOGBENCH_DATA_DIR` or `<workspace>/data/loghub`.
pub fn benchmark_dir() -> PathBuf {
    std::env::var_os("LOGBENCH_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/loghub"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Writes a deterministic labelled dataset of `n` messages drawn from a few
/// Apache- and SSH-style templates, including quoting edge cases.
pub fn write_synthetic(dir: &Path, name: &str, n: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("LineId,Content,EventId,EventTemplate\n");
    for i in 1..=n {
        let (content, template, id) = match rng.gen_range(0..7) {
            0 => (
                format!(
                    "jk2_init() Found child {} in scoreboard slot {}",
                    rng.gen_range(1000..9999),
                    rng.gen_range(0..12)
                ),
                "jk2_init() Found child <*> in scoreboard slot <*>".to_owned(),
                "E1",
            ),
            1 => (
                "workerEnv.init() ok /etc/httpd/conf/workers2.properties".to_owned(),
                "workerEnv.init() ok <*>".to_owned(),
                "E2",
            ),
            2 => (
                format!(
                    "mod_jk child workerEnv in error state {}",
                    rng.gen_range(1..10)
                ),
                "mod_jk child workerEnv in error state <*>".to_owned(),
                "E3",
            ),
            3 => (
                format!(
                    "[client {}.{}.{}.{}] Directory index forbidden by rule: /var/www/html/",
                    rng.gen_range(1..255),
                    rng.gen_range(0..255),
                    rng.gen_range(0..255),
                    rng.gen_range(1..255)
                ),
                "[client <*>] Directory index forbidden by rule: <*>".to_owned(),
                "E4",
            ),
            4 => (
                format!(
                    "session opened for user u{} by (uid={}), tty pts/{}",
                    rng.gen_range(0..50),
                    rng.gen_range(0..1000),
                    rng.gen_range(0..9)
                ),
                "session opened for user <*> by (uid=<*>), tty <*>".to_owned(),
                "E5",
            ),
            5 => (
                format!(
                    "Invalid user 'guest{}' from 10.0.0.{}",
                    rng.gen_range(0..9),
                    rng.gen_range(1..250)
                ),
                "Invalid user '<*>' from <*>".to_owned(),
                "E6",
            ),
            _ => (
                format!(
                    "Received \"{}\" bytes, status `ok`",
                    rng.gen_range(1..100_000)
                ),
                "Received \"<*>\" bytes, status `ok`".to_owned(),
                "E7",
            ),
        };
        out.push_str(&format!(
            "{i},{},{id},{}\n",
            csv_field(&content),
            csv_field(&template)
        ));
    }
    let path = dir.join(format!("{name}_2k.log_structured_corrected.csv"));
    fs::write(&path, out).unwrap();
    path
}

#[derive(Clone, Debug)]
pub struct Reply {
    pub status: u16,
    pub body: String,
    pub headers: Vec<(String, String)>,
}

impl Reply {
    pub fn ok(content: &str) -> Self {
        let body = serde_json::json!({
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
        })
        .to_string();
        Reply {
            status: 200,
            body,
            headers: vec![],
        }
    }

    pub fn status(status: u16) -> Self {
        Reply {
            status,
            body: "{\"error\":{\"message\":\"stub\"}}".to_owned(),
            headers: vec![],
        }
    }
}

#[derive(Clone, Debug)]
pub struct SeenRequest {
    pub at: Instant,
    pub authorization: Option<String>,
    pub body: serde_json::Value,
}

/// Minimal HTTP/1.1 server answering from a script; the last reply repeats.
pub struct StubServer {
    pub addr: SocketAddr,
    pub seen: Arc<Mutex<Vec<SeenRequest>>>,
}

impl StubServer {
    pub fn start(script: Vec<Reply>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let script = Arc::new(Mutex::new(VecDeque::from(script)));
        let seen_bg = Arc::clone(&seen);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                let mut auth = None;
                let mut line = String::new();
                loop {
                    line.clear();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = l.split_once(':') {
                        match k.trim().to_ascii_lowercase().as_str() {
                            "content-length" => length = v.trim().parse().unwrap_or(0),
                            "authorization" => auth = Some(v.trim().to_owned()),
                            _ => {}
                        }
                    }
                }
                let mut body = vec![0; length];
                if reader.read_exact(&mut body).is_err() {
                    continue;
                }
                seen_bg.lock().unwrap().push(SeenRequest {
                    at: Instant::now(),
                    authorization: auth,
                    body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null),
                });
                let reply = {
                    let mut s = script.lock().unwrap();
                    if s.len() > 1 {
                        s.pop_front().unwrap()
                    } else {
                        s.front().cloned().unwrap()
                    }
                };
                let mut resp = format!(
                    "HTTP/1.1 {} STUB\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
                    reply.status,
                    reply.body.len()
                );
                for (k, v) in &reply.headers {
                    resp.push_str(&format!("{k}: {v}\r\n"));
                }
                resp.push_str("\r\n");
                resp.push_str(&reply.body);
                let _ = stream.write_all(resp.as_bytes());
                let _ = stream.flush();
            }
        });
        StubServer { addr, seen }
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    pub fn requests(&self) -> Vec<SeenRequest> {
        self.seen.lock().unwrap().clone()
    }
}
