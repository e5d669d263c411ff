//! Planner running in a child process, spoken to over its standard streams.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use super::protocol::{parse_request_line, parse_response_line, ping_line, PlanRequest, PlanResponse, Request, Response};
use super::{AgentError, Planner};

struct Connection {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Connection {
    fn open(command: &[String]) -> Result<Self, AgentError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| AgentError::Io("external agent command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AgentError::Io(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, lines })
    }

    fn close(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Owns exactly one live child process; a timed-out connection is torn down
/// and replaced on the next request.
pub struct ExternalPlanner {
    command: Vec<String>,
    timeout: Duration,
    conn: Option<Connection>,
}

impl ExternalPlanner {
    pub fn spawn(command: &[String], timeout_s: f64) -> Result<Self, AgentError> {
        if !(timeout_s.is_finite() && timeout_s > 0.0) {
            return Err(AgentError::Io(format!("invalid agent timeout {timeout_s}")));
        }
        Ok(Self {
            command: command.to_vec(),
            timeout: Duration::from_secs_f64(timeout_s),
            conn: Some(Connection::open(command)?),
        })
    }

    fn reset(&mut self) {
        if let Some(c) = self.conn.take() {
            c.close();
        }
    }

    fn exchange(&mut self, line: &str) -> Result<Response, AgentError> {
        if self.conn.is_none() {
            self.conn = Some(Connection::open(&self.command)?);
        }
        let conn = self.conn.as_mut().expect("connection just opened");
        let sent = writeln!(conn.stdin, "{line}").and_then(|_| conn.stdin.flush());
        if let Err(e) = sent {
            self.reset();
            return Err(AgentError::Io(format!("write failed: {e}")));
        }
        let raw = match conn.lines.recv_timeout(self.timeout) {
            Ok(Ok(raw)) => raw,
            Ok(Err(e)) => {
                self.reset();
                return Err(AgentError::Io(format!("read failed: {e}")));
            }
            Err(RecvTimeoutError::Timeout) => {
                self.reset();
                return Err(AgentError::Timeout {
                    after_s: self.timeout.as_secs_f64(),
                });
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.reset();
                return Err(AgentError::Io("agent closed its output".into()));
            }
        };
        parse_response_line(&raw).map_err(|e| AgentError::Protocol {
            message: e.to_string(),
            raw,
        })
    }

    /// Liveness check.
    pub fn ping(&mut self) -> Result<(), AgentError> {
        match self.exchange(&ping_line())? {
            Response::Pong => Ok(()),
            other => Err(AgentError::Protocol {
                message: "expected pong".into(),
                raw: other.to_json_line(),
            }),
        }
    }
}

impl Planner for ExternalPlanner {
    fn plan(&mut self, req: &PlanRequest) -> Result<PlanResponse, AgentError> {
        match self.exchange(&req.to_json_line())? {
            Response::Plan(resp) => {
                resp.validate(req).map_err(AgentError::InvalidPlan)?;
                Ok(resp)
            }
            Response::Error(message) => Err(AgentError::Remote(message)),
            Response::Pong => Err(AgentError::Protocol {
                message: "expected a plan".into(),
                raw: Response::Pong.to_json_line(),
            }),
        }
    }
}

impl Drop for ExternalPlanner {
    fn drop(&mut self) {
        self.reset();
    }
}

/// Answers protocol requests from `input` with `planner` until end of input.
/// Malformed requests and planner failures produce `error` responses.
pub fn serve(
    input: impl BufRead,
    mut output: impl Write,
    planner: &mut dyn Planner,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match parse_request_line(&line) {
            Ok(Request::Ping) => Response::Pong,
            Ok(Request::Plan(req)) => match planner.plan(&req) {
                Ok(p) => Response::Plan(p),
                Err(e) => Response::Error(format!("{}: {e}", e.code())),
            },
            Err(e) => Response::Error(e.to_string()),
        };
        writeln!(output, "{}", resp.to_json_line())?;
        output.flush()?;
    }
    Ok(())
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use crate::agents::SceneGrounded;
    use crate::synthetic::{straight_scenario, SceneParams};

    fn request() -> PlanRequest {
        let rec = straight_scenario("s", &SceneParams::default());
        PlanRequest::new(
            &rec,
            rec.t0(),
            rec.ego_state,
            rec.ego_history.clone(),
            Some(PlanRequest::scene_of(&rec)),
            3.0,
            0.1,
        )
    }

    fn sh(script: &str) -> Vec<String> {
        vec!["sh".into(), "-c".into(), script.into()]
    }

    #[test]
    fn invalid_json_is_a_protocol_error_with_raw_line() {
        let mut agent = ExternalPlanner::spawn(&sh("while read l; do echo 'not json'; done"), 5.0).unwrap();
        match agent.plan(&request()) {
            Err(AgentError::Protocol { raw, .. }) => assert_eq!(raw, "not json"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn slow_agent_times_out_and_reconnects() {
        let mut agent = ExternalPlanner::spawn(&sh("while read l; do sleep 5; done"), 0.2).unwrap();
        let err = agent.plan(&request()).unwrap_err();
        assert_eq!(err.code(), "timeout");
        assert!(agent.conn.is_none());
        assert_eq!(agent.plan(&request()).unwrap_err().code(), "timeout");
    }

    #[test]
    fn exited_agent_is_an_io_error() {
        let mut agent = ExternalPlanner::spawn(&sh("exit 0"), 5.0).unwrap();
        assert_eq!(agent.plan(&request()).unwrap_err().code(), "io");
    }

    #[test]
    fn short_plan_fails_validation() {
        let reply = r#"{"proto":1,"type":"plan","trajectory":[[0.1,1,0,0],[0.2,2,0,0]]}"#;
        let script = format!("while read l; do echo '{reply}'; done");
        let mut agent = ExternalPlanner::spawn(&sh(&script), 5.0).unwrap();
        assert_eq!(agent.plan(&request()).unwrap_err().code(), "invalid_plan");
    }

    #[test]
    fn serve_answers_ping_and_plan() {
        let req = request();
        let input = format!("{}\n\n{}\ngarbage\n", ping_line(), req.to_json_line());
        let mut out = Vec::new();
        serve(input.as_bytes(), &mut out, &mut SceneGrounded).unwrap();
        let text = String::from_utf8(out).unwrap();
        let replies: Vec<Response> = text.lines().map(|l| parse_response_line(l).unwrap()).collect();
        assert_eq!(replies.len(), 3);
        assert_eq!(replies[0], Response::Pong);
        let expected = SceneGrounded.plan(&req).unwrap();
        match &replies[1] {
            Response::Plan(got) => {
                // the period is re-derived from the samples on parse
                assert_eq!(got.trajectory.points(), expected.trajectory.points());
                assert_eq!(got.reasoning_text, expected.reasoning_text);
            }
            other => panic!("expected a plan, got {other:?}"),
        }
        assert!(matches!(replies[2], Response::Error(_)));
    }
}
