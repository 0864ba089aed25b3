#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use vstrank::synthetic::{generate, write_dataset, DatasetFiles, SyntheticSpec};
use vstrank::ExperimentConfig;

pub fn dataset(dir: &Path, users: usize, items: usize, seed: u64) -> DatasetFiles {
    let data = generate(&SyntheticSpec {
        users,
        items,
        seed,
        ..SyntheticSpec::default()
    });
    write_dataset(dir, &data).unwrap()
}

/// A config over `files` with the given strategies and a `[backend]` table
/// body.
pub fn config(
    files: &DatasetFiles,
    out: &Path,
    strategies: &[&str],
    users: usize,
    runs: usize,
    backend: &str,
) -> ExperimentConfig {
    let strategies = strategies
        .iter()
        .map(|s| format!("\"{s}\""))
        .collect::<Vec<_>>()
        .join(", ");
    let src = format!(
        r#"
strategies = [{strategies}]
model = "test-model"
runs = {runs}
output_dir = {out:?}

[dataset]
name = "synthetic"
interactions = {i:?}
catalog = {c:?}

[sample]
users = {users}
seed = 11

[backend]
{backend}
"#,
        out = out.display().to_string(),
        i = files.interactions.display().to_string(),
        c = files.catalog.display().to_string(),
    );
    ExperimentConfig::from_toml(&src).unwrap()
}

pub struct Reply {
    pub status: u16,
    pub headers: Vec<(&'static str, String)>,
    pub body: String,
}

impl Reply {
    pub fn ok(text: &str) -> Self {
        Reply {
            status: 200,
            headers: vec![],
            body: serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": text}}],
                "usage": {"prompt_tokens": 10, "completion_tokens": 5, "total_tokens": 15}
            })
            .to_string(),
        }
    }

    pub fn status(status: u16) -> Self {
        Reply {
            status,
            headers: vec![],
            body: "{\"error\":\"scripted\"}".into(),
        }
    }
}

/// Answers requests in order from `script`; the last reply repeats. Returns
/// the base URL and a request counter.
pub fn scripted_server(script: Vec<Reply>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let count = Arc::new(AtomicUsize::new(0));
    let seen = count.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            let _ = reader.read_exact(&mut body);
            let n = seen.fetch_add(1, Ordering::SeqCst);
            let reply = &script[n.min(script.len() - 1)];
            let mut head = format!(
                "HTTP/1.1 {} Scripted\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
                reply.status,
                reply.body.len()
            );
            for (k, v) in &reply.headers {
                head.push_str(&format!("{k}: {v}\r\n"));
            }
            head.push_str("\r\n");
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(reply.body.as_bytes());
        }
    });
    (url, count)
}
