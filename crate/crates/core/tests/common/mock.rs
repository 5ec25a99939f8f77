//! Minimal chat-completions stand-in over a plain TCP listener.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use audit_core::scorer::EndpointConfig;

pub type Handler = dyn Fn(&str, usize) -> (u16, String) + Send + Sync;

/// Minimal chat-completions stand-in. The handler sees the prompt and how
/// many times that prompt has been requested before.
pub struct MockServer {
    url: String,
    seen: Arc<Mutex<HashMap<String, usize>>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

pub fn completion(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
        .to_string()
}

fn serve_one(mut stream: TcpStream, handler: &Handler, seen: &Mutex<HashMap<String, usize>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        if line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(req["temperature"], serde_json::json!(0.0));
    let prompt = req["messages"][0]["content"].as_str().unwrap().to_string();
    let count = {
        let mut s = seen.lock().unwrap();
        let c = s.entry(prompt.clone()).or_default();
        *c += 1;
        *c - 1
    };
    let (status, body) = handler(&prompt, count);
    let reply = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(reply.as_bytes());
}

impl MockServer {
    pub fn start(handler: Box<Handler>) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(HashMap::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let (seen2, stop2) = (seen.clone(), stop.clone());
        let handler: Arc<Handler> = handler.into();
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let (h, s) = (handler.clone(), seen2.clone());
                std::thread::spawn(move || serve_one(stream.unwrap(), &*h, &s));
            }
        });
        MockServer {
            url,
            seen,
            stop,
            handle: Some(handle),
        }
    }

    pub fn requests(&self) -> usize {
        self.seen.lock().unwrap().values().sum()
    }

    /// Largest number of requests any single prompt received.
    pub fn max_per_prompt(&self) -> usize {
        self.seen
            .lock()
            .unwrap()
            .values()
            .copied()
            .max()
            .unwrap_or(0)
    }

    pub fn config(&self) -> EndpointConfig {
        EndpointConfig {
            backoff_ms: 1,
            ..EndpointConfig::new(&self.url, "mock-model")
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.url.trim_start_matches("http://"));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
