use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ClassifyError, Classifier, OpenState, RoiImage, StateVerdict};
use crate::geometry::RoiKind;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(200);

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    kind: &'a str,
    w: usize,
    h: usize,
    px_b64: String,
}

#[derive(Serialize, Deserialize)]
struct Response {
    id: i64,
    state: String,
    conf: f64,
}

/// Client for a classifier child process speaking one JSON object per line
/// on its stdin/stdout. One request is in flight at a time; a request that
/// outlives its timeout is abandoned and its late reply discarded.
pub struct ExternalClassifier {
    child: Child,
    requests: Option<Sender<String>>,
    replies: Receiver<String>,
    next_id: u64,
    timeout: Duration,
    dead: bool,
}

impl ExternalClassifier {
    /// Starts `command`, split with shell quoting rules.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, ClassifyError> {
        let argv = shlex::split(command)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| ClassifyError::Spawn(format!("cannot parse command {command:?}")))?;
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ClassifyError::Spawn(format!("{}: {e}", argv[0])))?;
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");

        let (req_tx, req_rx) = mpsc::channel::<String>();
        thread::spawn(move || {
            for line in req_rx {
                if stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()).is_err() {
                    break;
                }
            }
        });
        let (rep_tx, rep_rx) = mpsc::channel::<String>();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(l) = line else { break };
                if rep_tx.send(l).is_err() {
                    break;
                }
            }
        });
        log::debug!("started classifier backend {argv:?}");
        Ok(Self {
            child,
            requests: Some(req_tx),
            replies: rep_rx,
            next_id: 1,
            timeout,
            dead: false,
        })
    }

    fn unavailable(&mut self) -> ClassifyError {
        self.dead = true;
        let status = match self.child.try_wait() {
            Ok(Some(s)) => format!("backend exited ({s})"),
            _ => "backend closed its output".to_string(),
        };
        ClassifyError::BackendUnavailable(status)
    }

    fn parse_reply(line: &str, id: u64) -> Result<Option<StateVerdict>, ClassifyError> {
        let resp: Response = serde_json::from_str(line)
            .map_err(|e| ClassifyError::ProtocolError(format!("{e}: {line:?}")))?;
        if resp.id < id as i64 {
            log::debug!("discarding late reply for request {}", resp.id);
            return Ok(None);
        }
        if resp.id > id as i64 {
            return Err(ClassifyError::ProtocolError(format!(
                "reply id {} does not echo request {id}",
                resp.id
            )));
        }
        let state = match resp.state.as_str() {
            "open" => OpenState::Open,
            "closed" => OpenState::Closed,
            other => {
                return Err(ClassifyError::ProtocolError(format!("invalid state {other:?}")));
            }
        };
        if !resp.conf.is_finite() {
            return Err(ClassifyError::ProtocolError("non-finite conf".into()));
        }
        Ok(Some(StateVerdict::new(state, resp.conf)))
    }
}

impl Classifier for ExternalClassifier {
    fn classify(&mut self, img: &RoiImage) -> Result<StateVerdict, ClassifyError> {
        if self.dead {
            return Err(ClassifyError::BackendUnavailable("backend already failed".into()));
        }
        let id = self.next_id;
        self.next_id += 1;
        let req = Request {
            id,
            kind: img.kind.as_str(),
            w: img.width,
            h: img.height,
            px_b64: base64::engine::general_purpose::STANDARD.encode(&img.pixels),
        };
        let mut line = serde_json::to_string(&req).expect("request serializes");
        line.push('\n');
        let sent = self.requests.as_ref().map(|tx| tx.send(line).is_ok());
        if sent != Some(true) {
            return Err(self.unavailable());
        }

        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.replies.recv_timeout(left) {
                Ok(reply) => {
                    if let Some(v) = Self::parse_reply(&reply, id)? {
                        return Ok(v);
                    }
                }
                Err(RecvTimeoutError::Timeout) => return Err(ClassifyError::Timeout),
                Err(RecvTimeoutError::Disconnected) => return Err(self.unavailable()),
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IncomingRequest {
    id: i64,
    kind: RoiKind,
    w: usize,
    h: usize,
    px_b64: String,
}

fn answer(line: &str, backend: &mut dyn Classifier) -> Result<(i64, StateVerdict), (i64, String)> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| (-1, e.to_string()))?;
    let echo = value.get("id").and_then(serde_json::Value::as_i64).unwrap_or(-1);
    let req: IncomingRequest = serde_json::from_value(value).map_err(|e| (echo, e.to_string()))?;
    let px = base64::engine::general_purpose::STANDARD
        .decode(&req.px_b64)
        .map_err(|e| (req.id, format!("bad px_b64: {e}")))?;
    let img = RoiImage::new(req.kind, req.w, req.h, px).map_err(|e| (req.id, e.to_string()))?;
    let verdict = backend.classify(&img).map_err(|e| (req.id, e.to_string()))?;
    Ok((req.id, verdict))
}

/// Server side of the protocol: one reply per request line, in order, until
/// `input` closes. A request that cannot be answered gets a `closed` reply
/// with zero confidence and a diagnostic on `diag`.
pub fn serve<R: BufRead, W: Write, E: Write>(
    input: R,
    mut output: W,
    mut diag: E,
    backend: &mut dyn Classifier,
) -> std::io::Result<usize> {
    let mut n = 0;
    for line in input.lines() {
        let line = line?;
        let (id, state, conf) = match answer(&line, backend) {
            Ok((id, v)) => (id, v.state, v.confidence),
            Err((id, msg)) => {
                writeln!(diag, "request {}: {msg}", n + 1)?;
                (id, OpenState::Closed, 0.0)
            }
        };
        let state = if state == OpenState::Unknown { OpenState::Closed } else { state };
        let reply = Response {
            id,
            state: state.as_str().to_string(),
            conf,
        };
        writeln!(output, "{}", serde_json::to_string(&reply).expect("reply serializes"))?;
        output.flush()?;
        n += 1;
    }
    Ok(n)
}

impl Drop for ExternalClassifier {
    fn drop(&mut self) {
        self.requests = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}


#[cfg(test)]
mod serve_tests {
    use super::*;
    use crate::classify::{baseline_classify, BaselineClassifier};

    fn request(id: u64, img: &RoiImage) -> String {
        let req = Request {
            id,
            kind: img.kind.as_str(),
            w: img.width,
            h: img.height,
            px_b64: base64::engine::general_purpose::STANDARD.encode(&img.pixels),
        };
        serde_json::to_string(&req).unwrap()
    }

    fn run(input: &str) -> (Vec<serde_json::Value>, String) {
        let (mut out, mut diag) = (Vec::new(), Vec::new());
        serve(input.as_bytes(), &mut out, &mut diag, &mut BaselineClassifier).unwrap();
        let replies = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        (replies, String::from_utf8(diag).unwrap())
    }

    #[test]
    fn open_eye_request() {
        let img = RoiImage::two_band(RoiKind::Eye, 10, 8, 0, 255);
        let (r, diag) = run(&format!("{}\n", request(1, &img)));
        assert_eq!(r.len(), 1);
        assert_eq!(r[0]["id"], 1);
        assert_eq!(r[0]["state"], "open");
        assert_eq!(r[0]["conf"].as_f64().unwrap(), baseline_classify(&img).confidence);
        assert!(diag.is_empty());
    }

    #[test]
    fn empty_input_gives_no_output() {
        assert!(run("").0.is_empty());
    }

    #[test]
    fn thousand_requests_in_order() {
        let img = RoiImage::uniform(RoiKind::Mouth, 6, 4, 128);
        let input: String = (1..=1000).map(|i| request(i, &img) + "\n").collect();
        let (r, _) = run(&input);
        let ids: Vec<i64> = r.iter().map(|v| v["id"].as_i64().unwrap()).collect();
        assert_eq!(ids, (1..=1000).collect::<Vec<_>>());
        assert!(r.iter().all(|v| v["state"] == "closed"));
    }

    #[test]
    fn malformed_requests() {
        let (r, diag) = run("not json\n{\"id\":7,\"kind\":\"eye\",\"w\":2,\"h\":2,\"px_b64\":\"AAA\"}\n{\"id\":8}\n");
        let got: Vec<(i64, &str, f64)> = r
            .iter()
            .map(|v| (v["id"].as_i64().unwrap(), v["state"].as_str().unwrap(), v["conf"].as_f64().unwrap()))
            .collect();
        assert_eq!(got, vec![(-1, "closed", 0.0), (7, "closed", 0.0), (8, "closed", 0.0)]);
        assert_eq!(diag.lines().count(), 3);
    }

    #[test]
    fn client_and_server_agree() {
        let img = RoiImage::two_band(RoiKind::Mouth, 12, 6, 30, 220);
        let line = request(41, &img);
        let (r, _) = run(&(line + "\n"));
        let reply = serde_json::to_string(&r[0]).unwrap();
        let v = ExternalClassifier::parse_reply(&reply, 41).unwrap().unwrap();
        assert_eq!(v, baseline_classify(&img));
    }
}
