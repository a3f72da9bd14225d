use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::{json, Value};

/// One canned HTTP answer.
#[derive(Debug, Clone, PartialEq)]
pub struct MockReply {
    pub status: u16,
    pub body: String,
}

impl MockReply {
    pub fn status(status: u16) -> Self {
        Self {
            status,
            body: json!({"error": {"message": "mock"}}).to_string(),
        }
    }

    /// A chat-completions body with one choice per candidate; each
    /// candidate is given as its tokens and their logprobs.
    pub fn candidates(cands: &[&[(&str, f64)]]) -> Self {
        let choices: Vec<Value> = cands
            .iter()
            .enumerate()
            .map(|(i, toks)| {
                let text: String = toks.iter().map(|t| t.0).collect();
                let content: Vec<Value> = toks.iter().map(|(t, l)| json!({"token": t, "logprob": l})).collect();
                json!({
                    "index": i,
                    "message": {"role": "assistant", "content": text},
                    "logprobs": {"content": content},
                    "finish_reason": "stop",
                })
            })
            .collect();
        Self {
            status: 200,
            body: json!({"object": "chat.completion", "choices": choices}).to_string(),
        }
    }
}

/// Minimal chat-completions server on localhost. Replies follow the script
/// in order; the last one repeats once the script runs out.
pub struct MockServer {
    addr: SocketAddr,
    requests: Arc<Mutex<Vec<Value>>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(script: Vec<MockReply>) -> std::io::Result<Self> {
        assert!(!script.is_empty(), "mock server needs at least one reply");
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let (req_log, stop_flag) = (requests.clone(), stop.clone());
        let handle = std::thread::spawn(move || {
            let mut next = 0usize;
            for stream in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let reply = &script[next.min(script.len() - 1)];
                next += 1;
                if let Err(e) = serve(stream, reply, &req_log) {
                    log::debug!("mock server connection: {e}");
                }
            }
        });
        Ok(Self {
            addr,
            requests,
            stop,
            handle: Some(handle),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// JSON bodies received so far.
    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().expect("request log").clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, reply: &MockReply, log: &Mutex<Vec<Value>>) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut length = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    if let Ok(v) = serde_json::from_slice::<Value>(&body) {
        log.lock().expect("request log").push(v);
    }
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {} Mock\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        reply.status,
        reply.body.len(),
        reply.body
    )?;
    out.flush()
}
