#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use versatune_core::detector::synthetic::dirichlet_annotations;
use versatune_core::simulator::DEFAULT_KNOWLEDGE;
use versatune_core::{Distribution, DomainSet};

pub const DOMAINS: [&str; 6] = ["law", "medicine", "finance", "science", "code", "other"];

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_versatune"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

pub fn write(path: &Path, body: &str) -> PathBuf {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).unwrap();
    }
    std::fs::write(path, body).unwrap();
    path.to_path_buf()
}

pub fn knowledge() -> Distribution {
    Distribution::new(DEFAULT_KNOWLEDGE.to_vec()).unwrap()
}

/// `n` annotation lines around the default knowledge vector.
pub fn annotation_fixture(path: &Path, n: usize, stream: u64) -> PathBuf {
    let domains = DomainSet::standard();
    let anns = dirichlet_annotations(&knowledge(), 20.0, n, 11, stream).unwrap();
    let body: String = anns
        .iter()
        .map(|a| format!("{}\n", a.to_json(&domains)))
        .collect();
    write(path, &body)
}

pub fn feedback_line(step: u64, losses: [f64; 6]) -> String {
    let parts: Vec<String> = DOMAINS
        .iter()
        .zip(losses)
        .map(|(d, l)| format!("\"{d}\": {l}"))
        .collect();
    format!("{{\"step\": {step}, \"losses\": {{{}}}}}", parts.join(", "))
}

/// Four steps of plausible per-domain losses.
pub fn feedback_fixture(path: &Path) -> PathBuf {
    let rows = [
        [2.40, 2.10, 2.30, 1.90, 1.70, 2.00],
        [2.10, 1.95, 2.05, 1.80, 1.60, 1.90],
        [1.95, 1.90, 1.98, 1.72, 1.62, 1.80],
        [1.90, 1.85, 1.94, 1.70, 1.58, 1.76],
    ];
    let body: String = rows
        .iter()
        .enumerate()
        .map(|(i, r)| feedback_line(i as u64 + 1, *r) + "\n")
        .collect();
    write(path, &body)
}

pub fn reference_json() -> String {
    let parts: Vec<String> = DOMAINS
        .iter()
        .zip([1.6, 1.5, 1.7, 1.4, 1.2, 1.5])
        .map(|(d, l)| format!("\"{d}\": {l}"))
        .collect();
    format!("{{{}}}", parts.join(", "))
}

/// Pools of `n` records per domain, plus a config wiring everything together.
pub fn pipeline_config(dir: &Path, extra: &str) -> PathBuf {
    let mut pools = Vec::new();
    for d in DOMAINS {
        let body: String = (0..25)
            .map(|i| format!("{{\"instruction\": \"{d} task {i}\", \"output\": \"answer {i}\"}}\n"))
            .collect();
        write(&dir.join(format!("pools/{d}.jsonl")), &body);
        pools.push(format!("\"{d}\": \"pools/{d}.jsonl\""));
    }
    let cfg = format!(
        "{{\"budget\": 120, \"reference_losses\": {}, \"paths\": {{\"pools\": {{{}}}, \"output_dir\": \"out\"}}{extra}}}",
        reference_json(),
        pools.join(", ")
    );
    write(&dir.join("run.json"), &cfg)
}

pub const CLASSIFIER_REPLY: &str = "```json\n{\"Law\": \"0.1\", \"Medicine\": \"0.2\", \"Finance\": \"0.1\", \"Science\": \"0.2\", \"Code\": \"0.1\", \"Other\": \"0.3\"}\n```";

/// Minimal chat-completions endpoint on a local port. Each connection
/// serves one request and is closed.
pub struct MockServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(status: u16, content: &'static str) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        listener.set_nonblocking(true).unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let (h, s) = (hits.clone(), stop.clone());
        let handle = std::thread::spawn(move || {
            while !s.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        h.fetch_add(1, Ordering::Relaxed);
                        let _ = serve(stream, status, content);
                    }
                    Err(_) => std::thread::sleep(std::time::Duration::from_millis(2)),
                }
            }
        });
        Self {
            url: format!("http://{addr}/v1"),
            hits,
            stop,
            handle: Some(handle),
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, status: u16, content: &str) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
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
    reader.read_exact(&mut body)?;
    let payload = serde_json::json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
    })
    .to_string();
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    stream.flush()
}

/// Every regular file under `dir`, relative path and bytes, sorted.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}
