//! Newline-delimited JSON request/response over a local socket or a child process pipe.
//!
//! One request line is written, one response line is read back. Requests on one
//! client are serialized. A timeout drops the connection so a late reply cannot be
//! read as the answer to the next request; the next call reconnects.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("cannot connect to {endpoint}: {message}")]
    Connect { endpoint: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("connection closed by peer")]
    Closed,
    #[error("malformed response: {0}")]
    Protocol(String),
}

/// Where an external service listens.
///
/// Accepted forms: `tcp://host:port`, `unix:/path/to/socket`, `exec:program arg ...`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Endpoint {
    Tcp(String),
    Unix(PathBuf),
    Exec(Vec<String>),
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            if addr.is_empty() {
                return Err("empty tcp address".into());
            }
            Ok(Endpoint::Tcp(addr.to_string()))
        } else if let Some(path) = s.strip_prefix("unix:") {
            let path = path.strip_prefix("//").unwrap_or(path);
            if path.is_empty() {
                return Err("empty unix socket path".into());
            }
            Ok(Endpoint::Unix(PathBuf::from(path)))
        } else if let Some(cmd) = s.strip_prefix("exec:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err("empty exec command".into());
            }
            Ok(Endpoint::Exec(argv))
        } else {
            Err(format!("unsupported endpoint `{s}` (use tcp://, unix: or exec:)"))
        }
    }
}

impl TryFrom<String> for Endpoint {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Endpoint> for String {
    fn from(e: Endpoint) -> Self {
        e.to_string()
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Tcp(a) => write!(f, "tcp://{a}"),
            Endpoint::Unix(p) => write!(f, "unix:{}", p.display()),
            Endpoint::Exec(argv) => write!(f, "exec:{}", argv.join(" ")),
        }
    }
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn spawn_reader<R: Read + Send + 'static>(reader: R) -> Receiver<io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) => break,
                Ok(_) => {
                    if tx.send(Ok(line)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    });
    rx
}

pub struct NdjsonClient {
    endpoint: Endpoint,
    timeout: Duration,
    conn: Mutex<Option<Connection>>,
}

impl NdjsonClient {
    pub fn new(endpoint: Endpoint, timeout: Duration) -> Self {
        Self {
            endpoint,
            timeout,
            conn: Mutex::new(None),
        }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn connect(&self) -> Result<Connection, WireError> {
        let err = |e: io::Error| WireError::Connect {
            endpoint: self.endpoint.to_string(),
            message: e.to_string(),
        };
        match &self.endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(err)?;
                stream.set_write_timeout(Some(self.timeout)).map_err(err)?;
                let _ = stream.set_nodelay(true);
                let read_half = stream.try_clone().map_err(err)?;
                Ok(Connection {
                    writer: Box::new(stream),
                    lines: spawn_reader(read_half),
                    child: None,
                })
            }
            #[cfg(unix)]
            Endpoint::Unix(path) => {
                let stream = std::os::unix::net::UnixStream::connect(path).map_err(err)?;
                stream.set_write_timeout(Some(self.timeout)).map_err(err)?;
                let read_half = stream.try_clone().map_err(err)?;
                Ok(Connection {
                    writer: Box::new(stream),
                    lines: spawn_reader(read_half),
                    child: None,
                })
            }
            #[cfg(not(unix))]
            Endpoint::Unix(_) => Err(WireError::Connect {
                endpoint: self.endpoint.to_string(),
                message: "unix sockets are not supported on this platform".into(),
            }),
            Endpoint::Exec(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(err)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Connection {
                    writer: Box::new(stdin),
                    lines: spawn_reader(stdout),
                    child: Some(child),
                })
            }
        }
    }

    /// Sends one request line and parses one response line.
    pub fn call<Req: Serialize, Resp: DeserializeOwned>(&self, request: &Req) -> Result<Resp, WireError> {
        let mut line = serde_json::to_string(request).map_err(|e| WireError::Protocol(e.to_string()))?;
        line.push('\n');

        let mut guard = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(self.connect()?);
        }
        let conn = guard.as_mut().expect("connected");
        let result = (|| {
            conn.writer
                .write_all(line.as_bytes())
                .and_then(|_| conn.writer.flush())
                .map_err(|e| WireError::Io(e.to_string()))?;
            match conn.lines.recv_timeout(self.timeout) {
                Ok(Ok(reply)) => serde_json::from_str(reply.trim_end())
                    .map_err(|e| WireError::Protocol(format!("{e}: `{}`", reply.trim_end()))),
                Ok(Err(e)) => Err(WireError::Io(e.to_string())),
                Err(RecvTimeoutError::Timeout) => Err(WireError::Timeout(self.timeout)),
                Err(RecvTimeoutError::Disconnected) => Err(WireError::Closed),
            }
        })();
        if matches!(
            result,
            Err(WireError::Timeout(_) | WireError::Io(_) | WireError::Closed)
        ) {
            *guard = None;
        }
        result
    }
}

#[cfg(test)]
pub(crate) mod testing {
    //! A throwaway line server for adapter tests.

    use std::io::{BufRead, BufReader, Write};
    use std::net::TcpListener;
    use std::thread;

    /// Serves each line through `handler` until the client disconnects.
    /// `None` from the handler means "never answer".
    pub fn serve<F>(handler: F) -> String
    where
        F: Fn(&str) -> Option<String> + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let mut writer = stream.try_clone().unwrap();
                for line in BufReader::new(stream).lines() {
                    let Ok(line) = line else { break };
                    if let Some(reply) = handler(&line) {
                        if writeln!(writer, "{reply}").is_err() {
                            break;
                        }
                    }
                }
            }
        });
        format!("tcp://{addr}")
    }
}
