//! Deterministic scorer process speaking `sentence-scorer/1`.
//!
//! The default `overlap` mode answers with the unit-idf overlap formula and
//! reproduces the golden transcript. The other modes misbehave on purpose so
//! the host's protocol handling can be exercised.
//!
//! usage: sentrank-stub-scorer [--mode MODE] [--max-tokens N] [--exit-after N]

use std::io::{self, BufRead, Write};
use std::sync::mpsc;
use std::time::Duration;

use sentrank::scorer::{overlap_score, ScoreRequest, ScoreResponse, PROTOCOL};

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Overlap,
    Reverse,
    Length,
    BadHandshake,
    WrongProtocol,
    OutOfRange,
    UnknownId,
    Garbage,
    Error,
    Hang,
    Silent,
}

fn parse_mode(s: &str) -> Option<Mode> {
    Some(match s {
        "overlap" => Mode::Overlap,
        "reverse" => Mode::Reverse,
        "length" => Mode::Length,
        "bad-handshake" => Mode::BadHandshake,
        "wrong-protocol" => Mode::WrongProtocol,
        "out-of-range" => Mode::OutOfRange,
        "unknown-id" => Mode::UnknownId,
        "garbage" => Mode::Garbage,
        "error" => Mode::Error,
        "hang" => Mode::Hang,
        "silent" => Mode::Silent,
        _ => return None,
    })
}

fn usage(msg: &str) -> ! {
    eprintln!("sentrank-stub-scorer: {msg}");
    std::process::exit(64);
}

fn line<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable")
}

fn respond(mode: Mode, max_tokens: usize, req: &ScoreRequest) -> String {
    match mode {
        Mode::Length => {
            let n = req.text.split_whitespace().count();
            line(&ScoreResponse {
                id: req.id,
                score: n as f64 / max_tokens as f64,
            })
        }
        Mode::OutOfRange => line(&ScoreResponse { id: req.id, score: 1.5 }),
        Mode::UnknownId => line(&ScoreResponse {
            id: req.id + 1000,
            score: 0.5,
        }),
        Mode::Garbage => "this is not json".to_string(),
        Mode::Error => format!(r#"{{"id":{},"error":"model exploded"}}"#, req.id),
        _ => line(&ScoreResponse {
            id: req.id,
            score: overlap_score(&req.query, &req.text),
        }),
    }
}

fn main() {
    let mut mode = Mode::Overlap;
    let mut mode_name = "overlap".to_string();
    let mut max_tokens = 512usize;
    let mut exit_after: Option<usize> = None;
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        let mut value = || args.next().unwrap_or_else(|| usage(&format!("{arg} needs a value")));
        match arg.as_str() {
            "--mode" => {
                let v = value();
                mode = parse_mode(&v).unwrap_or_else(|| usage(&format!("unknown mode {v}")));
                mode_name = v;
            }
            "--max-tokens" => {
                max_tokens = value().parse().unwrap_or_else(|_| usage("bad --max-tokens"));
            }
            "--exit-after" => {
                exit_after = Some(value().parse().unwrap_or_else(|_| usage("bad --exit-after")));
            }
            other => usage(&format!("unknown argument {other}")),
        }
    }

    let stdout = io::stdout();
    let mut out = stdout.lock();
    let handshake = match mode {
        Mode::BadHandshake => "{}".to_string(),
        Mode::WrongProtocol => {
            format!(r#"{{"protocol":"sentence-scorer/0","name":"stub","max_tokens":{max_tokens}}}"#)
        }
        _ => format!(r#"{{"protocol":"{PROTOCOL}","name":"stub","max_tokens":{max_tokens}}}"#),
    };
    writeln!(out, "{handshake}").unwrap();
    out.flush().unwrap();
    eprintln!("stub: ready ({mode_name} mode)");

    let (tx, rx) = mpsc::channel::<String>();
    std::thread::spawn(move || {
        for l in io::stdin().lock().lines() {
            match l {
                Ok(l) => {
                    if tx.send(l).is_err() {
                        break;
                    }
                }
                Err(_) => break,
            }
        }
    });

    let mut handled = 0usize;
    let mut held: Vec<ScoreRequest> = Vec::new();
    loop {
        let next = if mode == Mode::Reverse && !held.is_empty() {
            match rx.recv_timeout(Duration::from_millis(50)) {
                Ok(l) => Some(l),
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    for req in held.drain(..).rev() {
                        writeln!(out, "{}", respond(mode, max_tokens, &req)).unwrap();
                    }
                    out.flush().unwrap();
                    continue;
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => None,
            }
        } else {
            rx.recv().ok()
        };
        let Some(raw) = next else { break };
        if mode == Mode::Silent {
            continue;
        }
        if mode == Mode::Hang {
            std::thread::sleep(Duration::from_secs(3600));
        }
        let req: ScoreRequest = match serde_json::from_str(&raw) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("stub: malformed request: {e}");
                continue;
            }
        };
        if mode == Mode::Reverse {
            held.push(req);
        } else {
            writeln!(out, "{}", respond(mode, max_tokens, &req)).unwrap();
            out.flush().unwrap();
        }
        handled += 1;
        if exit_after.is_some_and(|n| handled >= n) {
            eprintln!("stub: exiting after {handled} requests");
            std::process::exit(3);
        }
    }
    for req in held.drain(..).rev() {
        writeln!(out, "{}", respond(mode, max_tokens, &req)).unwrap();
    }
    out.flush().unwrap();
}
