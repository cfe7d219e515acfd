//! TCP transport. Each connection gets its own thread and session. A
//! connection that opens with an HTTP `GET` is upgraded to a websocket and
//! carries the same JSON messages, one per text frame.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver};
use std::time::Duration;

use tungstenite::Message;

use super::Session;

pub const DEFAULT_PORT: u16 = 7414;

/// Accepts connections until the listener fails.
pub fn serve(listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        match stream {
            Ok(s) => {
                std::thread::spawn(move || {
                    let peer = s.peer_addr().map(|a| a.to_string()).unwrap_or_default();
                    if let Err(e) = handle_connection(s) {
                        log::warn!("connection {peer}: {e}");
                    }
                });
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
    Ok(())
}

fn starts_with_get(stream: &TcpStream) -> io::Result<bool> {
    let mut buf = [0u8; 4];
    for _ in 0..50 {
        let n = stream.peek(&mut buf)?;
        if n == 0 {
            return Ok(false);
        }
        if n >= 4 || !b"GET ".starts_with(&buf[..n]) {
            return Ok(&buf[..n] == b"GET ");
        }
        std::thread::sleep(Duration::from_millis(2));
    }
    Ok(false)
}

pub fn handle_connection(stream: TcpStream) -> io::Result<()> {
    stream.set_nodelay(true)?;
    if starts_with_get(&stream)? {
        websocket(stream)
    } else {
        json_lines(stream)
    }
}

fn json_lines(stream: TcpStream) -> io::Result<()> {
    let (tx, rx) = channel::<String>();
    let mut out = stream.try_clone()?;
    let writer = std::thread::spawn(move || -> io::Result<()> {
        for line in rx {
            out.write_all(line.as_bytes())?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
        Ok(())
    });
    let mut session = Session::new(Some(tx.clone()));
    log::info!("session {} opened", session.id);
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = session.handle_line(&line);
        if tx.send(reply).is_err() {
            break;
        }
    }
    log::info!("session {} closed", session.id);
    drop(session);
    drop(tx);
    writer.join().unwrap_or(Ok(()))
}

fn drain(ws: &mut tungstenite::WebSocket<TcpStream>, rx: &Receiver<String>) -> tungstenite::Result<()> {
    for line in rx.try_iter() {
        ws.send(Message::text(line))?;
    }
    Ok(())
}

fn websocket(stream: TcpStream) -> io::Result<()> {
    let mut ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(20)))?;
    let (tx, rx) = channel::<String>();
    let mut session = Session::new(Some(tx.clone()));
    log::info!("session {} opened (websocket)", session.id);
    loop {
        match ws.read() {
            Ok(Message::Text(text)) => {
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    let _ = tx.send(session.handle_line(line));
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break,
            Err(e) => return Err(io::Error::other(e.to_string())),
        }
        if let Err(e) = drain(&mut ws, &rx) {
            return Err(io::Error::other(e.to_string()));
        }
    }
    log::info!("session {} closed", session.id);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::{json, Value};
    use std::io::Read;

    fn start() -> std::net::SocketAddr {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap();
        std::thread::spawn(move || serve(l));
        addr
    }

    #[test]
    fn json_lines_over_tcp() {
        let addr = start();
        let s = TcpStream::connect(addr).unwrap();
        let mut w = s.try_clone().unwrap();
        let mut r = BufReader::new(s);
        writeln!(w, "{{").unwrap();
        writeln!(w, "{}", json!({"op": "list_tracks", "request_id": 7})).unwrap();
        let mut line = String::new();
        r.read_line(&mut line).unwrap();
        let v: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"]["code"], "ParseError");
        line.clear();
        r.read_line(&mut line).unwrap();
        let v: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["request_id"], 7);
        assert_eq!(v["ok"], true);
    }

    #[test]
    fn websocket_upgrade() {
        let addr = start();
        let (mut ws, _) = tungstenite::connect(format!("ws://{addr}/")).unwrap();
        ws.send(Message::text(json!({"op": "flow_status", "request_id": "w"}).to_string()))
            .unwrap();
        let msg = ws.read().unwrap();
        let v: Value = serde_json::from_str(msg.to_text().unwrap()).unwrap();
        assert_eq!(v["request_id"], "w");
        assert_eq!(v["result"]["status"], "idle");
        ws.close(None).unwrap();
        let mut rest = Vec::new();
        let _ = ws.get_mut().read_to_end(&mut rest);
    }
}
