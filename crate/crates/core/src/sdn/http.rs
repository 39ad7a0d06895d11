//! Minimal HTTP/1.1 front end for the SDN service, used by serve mode and
//! by the golden-transcript conformance tests. One thread per connection,
//! connection-close semantics.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use super::SdnService;
use crate::time::SimTime;

pub struct SdnHttpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
}

impl SdnHttpServer {
    /// Binds `bind` (use port 0 for an ephemeral port) and serves requests
    /// on a background thread. Request timestamps are wall-clock relative to
    /// server start.
    pub fn spawn(service: Arc<SdnService>, bind: &str) -> std::io::Result<SdnHttpServer> {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = Arc::clone(&stop);
        let started = Instant::now();

        std::thread::Builder::new()
            .name("sdn-http".to_string())
            .spawn(move || {
                for conn in listener.incoming() {
                    if stop_flag.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = conn else { continue };
                    let service = Arc::clone(&service);
                    let now = SimTime(started.elapsed().as_millis() as u64);
                    std::thread::spawn(move || {
                        let _ = handle_connection(stream, &service, now);
                    });
                }
            })?;

        Ok(SdnHttpServer { addr, stop })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.addr);
    }
}

impl Drop for SdnHttpServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn handle_connection(
    stream: TcpStream,
    service: &SdnService,
    now: SimTime,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);

    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();

    let mut auth: Option<String> = None;
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((key, value)) = line.split_once(':') {
            let value = value.trim();
            match key.to_ascii_lowercase().as_str() {
                "authorization" => auth = Some(value.to_string()),
                "content-length" => content_length = value.parse().unwrap_or(0),
                _ => {}
            }
        }
    }

    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let body = String::from_utf8_lossy(&body).into_owned();

    let answer = if method.is_empty() || path.is_empty() {
        super::HttpAnswer {
            status: 400,
            body: serde_json::json!({"error": "malformed request line"}),
        }
    } else {
        service.route(&method, &path, auth.as_deref(), &body, now)
    };

    let payload = serde_json::to_string(&answer.body).expect("answer serializes");
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        answer.status,
        status_text(answer.status),
        payload.len(),
        payload
    )?;
    stream.flush()
}

fn status_text(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        404 => "Not Found",
        409 => "Conflict",
        _ => "Internal Server Error",
    }
}
