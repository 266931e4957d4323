#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rand::Rng;

use layoutqa_core::ocr::{BBox, OcrPage, TextSegment};

pub fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}.golden", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

/// A request the stub received.
#[derive(Debug, Clone)]
pub struct Seen {
    pub head: String,
    pub body: String,
}

type Responder = dyn Fn(usize, &Seen) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server answering each connection once.
pub struct Stub {
    pub addr: SocketAddr,
    pub hits: Arc<AtomicUsize>,
    pub max_in_flight: Arc<AtomicUsize>,
    pub seen: Arc<Mutex<Vec<Seen>>>,
}

impl Stub {
    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn spawn(
        delay: Duration,
        respond: impl Fn(usize, &Seen) -> (u16, String) + Send + Sync + 'static,
    ) -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let max_in_flight = Arc::new(AtomicUsize::new(0));
        let seen = Arc::new(Mutex::new(Vec::new()));
        let respond: Arc<Responder> = Arc::new(respond);
        {
            let (hits, max_in_flight, seen) = (hits.clone(), max_in_flight.clone(), seen.clone());
            thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { continue };
                    let (hits, in_flight, max_in_flight, seen, respond) = (
                        hits.clone(),
                        in_flight.clone(),
                        max_in_flight.clone(),
                        seen.clone(),
                        respond.clone(),
                    );
                    thread::spawn(move || {
                        let Some(req) = read_request(&stream) else { return };
                        let n = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                        max_in_flight.fetch_max(n, Ordering::SeqCst);
                        let index = hits.fetch_add(1, Ordering::SeqCst);
                        seen.lock().unwrap().push(req.clone());
                        thread::sleep(delay);
                        let (status, body) = respond(index, &req);
                        // leave the in-flight set before the client can see the reply
                        in_flight.fetch_sub(1, Ordering::SeqCst);
                        write_response(stream, status, &body);
                    });
                }
            });
        }
        Stub {
            addr,
            hits,
            max_in_flight,
            seen,
        }
    }
}

fn read_request(stream: &TcpStream) -> Option<Seen> {
    let mut reader = BufReader::new(stream);
    let mut head = String::new();
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        if line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().ok()?;
            }
        }
        head.push_str(&line);
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body).ok()?;
    Some(Seen {
        head,
        body: String::from_utf8_lossy(&body).into_owned(),
    })
}

fn write_response(mut stream: TcpStream, status: u16, body: &str) {
    let reason = match status {
        200 => "OK",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let _ = write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.flush();
}

pub fn openai_reply(text: &str) -> String {
    serde_json::json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}).to_string()
}

pub fn random_word<R: Rng>(rng: &mut R, len: usize) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789$%.,:";
    (0..len)
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char)
        .collect()
}

/// A page laid out as explicit rows. Returns the page (segments shuffled)
/// and the segment texts in row-major order.
pub fn random_row_page<R: Rng>(rng: &mut R, integer_coords: bool) -> (OcrPage, Vec<String>) {
    let rows = rng.gen_range(1..=8);
    let char_w: f64 = rng.gen_range(4.0..12.0);
    let line_h: f64 = rng.gen_range(8.0..24.0);
    let mut segments = Vec::new();
    let mut order = Vec::new();
    let snap = |v: f64| if integer_coords { v.round() } else { v };
    let mut base_y = 5.0;
    for _ in 0..rows {
        let mut x = rng.gen_range(0.0..200.0);
        for _ in 0..rng.gen_range(1..=5) {
            let words = rng.gen_range(1..=3);
            let text: Vec<String> = (0..words)
                .map(|_| {
                    let len = rng.gen_range(1..=7);
                    random_word(rng, len)
                })
                .collect();
            let text = text.join(" ");
            let w = text.chars().count() as f64 * char_w * rng.gen_range(0.9..1.1);
            // jitter well below half the line height keeps rows intact
            let jitter = rng.gen_range(-0.15..0.15) * line_h;
            let bbox = BBox::new(
                snap(x),
                snap(base_y + jitter),
                snap(x + w),
                snap(base_y + jitter + line_h),
            );
            segments.push(TextSegment::new(text.clone(), bbox));
            order.push(text);
            x += w + rng.gen_range(char_w..12.0 * char_w);
        }
        base_y += line_h * rng.gen_range(1.6..3.0);
    }
    // shuffle input order; the pipeline must recover reading order
    for i in (1..segments.len()).rev() {
        let j = rng.gen_range(0..=i);
        segments.swap(i, j);
    }
    (OcrPage::new("rand", segments), order)
}

/// Arbitrary (possibly overlapping) segments.
pub fn random_messy_page<R: Rng>(rng: &mut R, integer_coords: bool) -> OcrPage {
    let n = rng.gen_range(1..25);
    let segments = (0..n)
        .map(|_| {
            let x: f64 = rng.gen_range(0.0..800.0);
            let y: f64 = rng.gen_range(0.0..1000.0);
            let w: f64 = rng.gen_range(0.0..200.0);
            let h: f64 = rng.gen_range(1.0..40.0);
            let (x, y, w, h) = if integer_coords {
                (x.round(), y.round(), w.round(), h.round())
            } else {
                (x, y, w, h)
            };
            let len = rng.gen_range(1..10);
            TextSegment::new(random_word(rng, len), BBox::new(x, y, x + w, y + h))
        })
        .collect();
    OcrPage::new("messy", segments)
}

pub fn scale_page(page: &OcrPage, s: f64) -> OcrPage {
    OcrPage {
        page_id: page.page_id.clone(),
        width: page.width.map(|w| w * s),
        height: page.height.map(|h| h * s),
        segments: page
            .segments
            .iter()
            .map(|seg| TextSegment::new(seg.text.clone(), seg.bbox.scaled(s)))
            .collect(),
    }
}

/// Every template filled with sentinels, paired with its golden name.
pub fn filled_templates() -> Vec<(&'static str, String)> {
    use layoutqa_core::datagen::{build_tuning_example, fill_qgen_prompt};
    use layoutqa_core::prompt::{fill_template, PromptVariant, TaskKind};

    let task = |t: TaskKind, v: PromptVariant| fill_template(t, v, "@DOC@", "@Q@", "g").unwrap().text;
    vec![
        ("docvqa", task(TaskKind::DocVqa, PromptVariant::FULL)),
        ("infographicvqa", task(TaskKind::InfographicVqa, PromptVariant::FULL)),
        ("mpdocvqa", task(TaskKind::MpDocVqa, PromptVariant::FULL)),
        ("plain", task(TaskKind::DocVqa, PromptVariant::PLAIN)),
        ("question_generation", fill_qgen_prompt("@DOC@").unwrap()),
        ("instruction", build_tuning_example("@DOC@", "@Q@", "a").unwrap().input),
    ]
}

/// Names of templates whose filled text differs from the golden file.
pub fn golden_mismatches() -> Vec<&'static str> {
    filled_templates()
        .into_iter()
        .filter(|(name, text)| *text != golden(name))
        .map(|(name, _)| name)
        .collect()
}
