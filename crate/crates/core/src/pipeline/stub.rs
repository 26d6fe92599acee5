//! A scripted local HTTP endpoint for exercising the remote clients.
//!
//! Each request is answered by a handler that sees the request's ordinal and
//! body. Requests are served on their own threads so a delayed reply does not
//! hold up the next attempt.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tiny_http::{Header, Response, Server};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubAction {
    /// 200 with this body.
    Reply(String),
    Status(u16, String),
    /// Sleep, then perform the inner action.
    Delay(Duration, Box<StubAction>),
}

impl StubAction {
    pub fn reply(body: impl Into<String>) -> Self {
        Self::Reply(body.into())
    }

    pub fn delayed(delay: Duration, then: StubAction) -> Self {
        Self::Delay(delay, Box::new(then))
    }
}

type Handler = dyn Fn(usize, &str) -> StubAction + Send + Sync;

pub struct ScriptedEndpoint {
    server: Arc<Server>,
    address: String,
    requests: Arc<AtomicUsize>,
    acceptor: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for ScriptedEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedEndpoint").field("address", &self.address).finish()
    }
}

impl ScriptedEndpoint {
    /// Binds an ephemeral loopback port and serves `handler`.
    pub fn start(handler: impl Fn(usize, &str) -> StubAction + Send + Sync + 'static) -> std::io::Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let port = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("stub bound to a non-ip address"))?
            .port();
        let server = Arc::new(server);
        let requests = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);

        let acceptor = {
            let server = Arc::clone(&server);
            let requests = Arc::clone(&requests);
            std::thread::spawn(move || {
                while let Ok(mut request) = server.recv() {
                    let ordinal = requests.fetch_add(1, Ordering::SeqCst);
                    let handler = Arc::clone(&handler);
                    std::thread::spawn(move || {
                        let mut body = String::new();
                        let _ = request.as_reader().read_to_string(&mut body);
                        let mut action = handler(ordinal, &body);
                        while let StubAction::Delay(d, inner) = action {
                            std::thread::sleep(d);
                            action = *inner;
                        }
                        let (code, text) = match action {
                            StubAction::Reply(text) => (200, text),
                            StubAction::Status(code, text) => (code, text),
                            StubAction::Delay(..) => unreachable!(),
                        };
                        let header = Header::from_bytes("content-type", "application/json").expect("static header");
                        // The client may have given up already.
                        let _ = request.respond(Response::from_string(text).with_status_code(code).with_header(header));
                    });
                }
            })
        };

        Ok(Self {
            server,
            address: format!("http://127.0.0.1:{port}"),
            requests,
            acceptor: Some(acceptor),
        })
    }

    /// Plays `script` in order, repeating the final action once exhausted.
    pub fn scripted(script: Vec<StubAction>) -> std::io::Result<Self> {
        assert!(!script.is_empty(), "script needs at least one action");
        Self::start(move |i, _| script[i.min(script.len() - 1)].clone())
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for ScriptedEndpoint {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::remote::{HttpTransport, Transport, TransportError};

    #[test]
    fn serves_scripted_replies_in_order() {
        let stub = ScriptedEndpoint::scripted(vec![
            StubAction::Status(503, "busy".into()),
            StubAction::reply("{}"),
        ])
        .unwrap();
        let t = HttpTransport::new(stub.address());
        let timeout = Duration::from_secs(5);
        assert!(matches!(t.post("{}", timeout), Err(TransportError::Status { code: 503, .. })));
        assert_eq!(t.post("{}", timeout).unwrap(), "{}");
        assert_eq!(t.post("{}", timeout).unwrap(), "{}");
        assert_eq!(stub.request_count(), 3);
    }

    #[test]
    fn slow_reply_times_out() {
        let stub = ScriptedEndpoint::scripted(vec![StubAction::delayed(
            Duration::from_millis(500),
            StubAction::reply("{}"),
        )])
        .unwrap();
        let t = HttpTransport::new(stub.address());
        assert_eq!(t.post("{}", Duration::from_millis(50)), Err(TransportError::Timeout));
    }

    #[test]
    fn handler_sees_body() {
        let stub = ScriptedEndpoint::start(|_, body| StubAction::reply(body.to_uppercase())).unwrap();
        let t = HttpTransport::new(stub.address());
        assert_eq!(t.post("abc", Duration::from_secs(5)).unwrap(), "ABC");
    }
}
