//! Typed clients for the box service.
//!
//! [`BoxBackend`] is one party's view of one box. [`HttpBoxClient`] talks to
//! the HTTP service; [`LocalBoxClient`] drives an in-process [`Engine`] and
//! is a drop-in replacement for tests, offline runs or other backends.

use std::sync::Arc;
use std::time::Duration;

use reqwest::blocking::{Client, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::behavior::{Behavior, Side};
use crate::sampling::Engine;
use crate::store::{BoxId, TransactionId, UserId};
use crate::wire::{
    self, BoxInfo, CreateBoxRequest, CreateUserRequest, CreatedUser, ListBoxesReply, PlainError, RevealReply,
    RevokeKeyRequest, ScoreboardReply, UseBoxReply, UserBox,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("unknown box: {0}")]
    UnknownBox(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("transaction already used with another input: {0}")]
    InputMismatchReplay(String),
    #[error("role mismatch: {0}")]
    RoleMismatch(String),
    #[error("service unavailable: {0}")]
    Unavailable(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("server answered HTTP {http_status}: {message}")]
    Http { http_status: u16, message: String },
}

impl ClientError {
    pub fn from_status(status: u8, message: String) -> Self {
        match status {
            wire::STATUS_BAD_API_KEY => ClientError::Auth(message),
            wire::STATUS_UNKNOWN_BOX => ClientError::UnknownBox(message),
            wire::STATUS_INVALID_INPUT => ClientError::InvalidInput(message),
            wire::STATUS_INPUT_MISMATCH => ClientError::InputMismatchReplay(message),
            wire::STATUS_ROLE_MISMATCH => ClientError::RoleMismatch(message),
            wire::STATUS_UNAVAILABLE => ClientError::Unavailable(message),
            other => ClientError::Protocol(format!("unknown status {other}: {message}")),
        }
    }

    /// The wire status this error mirrors, if any.
    pub fn status(&self) -> Option<u8> {
        Some(match self {
            ClientError::Auth(_) => wire::STATUS_BAD_API_KEY,
            ClientError::UnknownBox(_) => wire::STATUS_UNKNOWN_BOX,
            ClientError::InvalidInput(_) => wire::STATUS_INVALID_INPUT,
            ClientError::InputMismatchReplay(_) => wire::STATUS_INPUT_MISMATCH,
            ClientError::RoleMismatch(_) => wire::STATUS_ROLE_MISMATCH,
            ClientError::Unavailable(_) => wire::STATUS_UNAVAILABLE,
            _ => return None,
        })
    }

    fn retryable(&self) -> bool {
        matches!(self, ClientError::Transport(_) | ClientError::Unavailable(_))
    }
}

impl From<reqwest::Error> for ClientError {
    fn from(e: reqwest::Error) -> Self {
        ClientError::Transport(e.to_string())
    }
}

/// One party's access to one box.
pub trait BoxBackend: Send + Sync {
    fn box_id(&self) -> BoxId;
    fn side(&self) -> Side;
    /// Uses transaction `transaction_id` with `input` and returns the output.
    fn use_box(&self, transaction_id: &str, input: usize) -> Result<usize, ClientError>;
}

/// Bounded exponential backoff for transport failures and busy replies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            initial_backoff: Duration::from_millis(50),
            max_backoff: Duration::from_secs(2),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_attempts: 1,
            ..Self::default()
        }
    }

    fn run<T>(&self, mut attempt: impl FnMut() -> Result<T, ClientError>) -> Result<T, ClientError> {
        let mut delay = self.initial_backoff;
        let mut tries = 1;
        loop {
            match attempt() {
                Err(e) if e.retryable() && tries < self.max_attempts.max(1) => {
                    tracing::debug!(attempt = tries, error = %e, "retrying");
                    std::thread::sleep(delay);
                    delay = (delay * 2).min(self.max_backoff);
                    tries += 1;
                }
                other => return other,
            }
        }
    }
}

fn http_client(timeout: Duration) -> Result<Client, ClientError> {
    Client::builder().timeout(timeout).build().map_err(ClientError::from)
}

fn trim_base(base_url: &str) -> String {
    base_url.trim_end_matches('/').to_owned()
}

fn query(pairs: &[(&str, &str)]) -> String {
    let mut s = form_urlencoded::Serializer::new(String::new());
    for (k, v) in pairs {
        s.append_pair(k, v);
    }
    s.finish()
}

/// HTTP client for one side of one box.
#[derive(Debug, Clone)]
pub struct HttpBoxClient {
    http: Client,
    base_url: String,
    api_key: String,
    box_id: BoxId,
    side: Side,
    retry: RetryPolicy,
}

impl HttpBoxClient {
    pub fn new(base_url: &str, api_key: &str, box_id: BoxId, side: Side) -> Result<Self, ClientError> {
        Ok(HttpBoxClient {
            http: http_client(Duration::from_secs(30))?,
            base_url: trim_base(base_url),
            api_key: api_key.to_owned(),
            box_id,
            side,
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Result<Self, ClientError> {
        self.http = http_client(timeout)?;
        Ok(self)
    }

    /// Path and query of the `useBox` request, in the order
    /// `boxID, transactionID, x|y, apiKey`.
    pub fn use_box_path(&self, transaction_id: &str, input: usize) -> String {
        let box_id = self.box_id.to_string();
        let input = input.to_string();
        format!(
            "/api/v1/useBox?{}",
            query(&[
                ("boxID", &box_id),
                ("transactionID", transaction_id),
                (self.side.input_param(), &input),
                ("apiKey", &self.api_key),
            ])
        )
    }

    /// One `useBox` request with retries; returns the raw reply body.
    pub fn use_box_raw(&self, transaction_id: &str, input: usize) -> Result<String, ClientError> {
        let url = format!("{}{}", self.base_url, self.use_box_path(transaction_id, input));
        self.retry.run(|| {
            let body = self.http.get(&url).send()?.text()?;
            match UseBoxReply::parse(&body) {
                Ok(UseBoxReply::Error(e)) if e.status == wire::STATUS_UNAVAILABLE => {
                    Err(ClientError::Unavailable(e.error))
                }
                Ok(_) => Ok(body),
                Err(e) => Err(ClientError::Protocol(e)),
            }
        })
    }

    /// Marks this side's half of a transaction as revealed for scoring.
    pub fn reveal(&self, transaction_id: &str) -> Result<RevealReply, ClientError> {
        let url = format!(
            "{}/api/v1/game/reveal?{}",
            self.base_url,
            query(&[
                ("boxID", &self.box_id.to_string()),
                ("transactionID", transaction_id),
                ("apiKey", &self.api_key),
            ])
        );
        self.retry.run(|| json_reply(self.http.post(&url).send()?))
    }

    pub fn scoreboard(&self) -> Result<ScoreboardReply, ClientError> {
        let url = format!(
            "{}/api/v1/game/scoreboard?{}",
            self.base_url,
            query(&[("boxID", &self.box_id.to_string()), ("apiKey", &self.api_key)])
        );
        self.retry.run(|| json_reply(self.http.get(&url).send()?))
    }
}

impl BoxBackend for HttpBoxClient {
    fn box_id(&self) -> BoxId {
        self.box_id
    }

    fn side(&self) -> Side {
        self.side
    }

    fn use_box(&self, transaction_id: &str, input: usize) -> Result<usize, ClientError> {
        let body = self.use_box_raw(transaction_id, input)?;
        match UseBoxReply::parse(&body).map_err(ClientError::Protocol)? {
            UseBoxReply::Output { side, output, .. } if side == self.side => Ok(output),
            UseBoxReply::Output { side, .. } => Err(ClientError::Protocol(format!("reply carries {side}'s output"))),
            UseBoxReply::Error(e) => Err(ClientError::from_status(e.status, e.error)),
        }
    }
}

/// Decodes a JSON reply, turning `{"status": n, "error": ...}` bodies and
/// other non-success answers into errors.
fn json_reply<T: DeserializeOwned>(resp: Response) -> Result<T, ClientError> {
    let http_status = resp.status();
    let body = resp.text()?;
    if http_status.is_success() {
        return serde_json::from_str(&body).map_err(|e| ClientError::Protocol(format!("{e}: {body}")));
    }
    match serde_json::from_str::<PlainError>(&body) {
        Ok(e) if e.status != wire::STATUS_OK => Err(ClientError::from_status(e.status, e.error)),
        _ => Err(ClientError::Http {
            http_status: http_status.as_u16(),
            message: body,
        }),
    }
}

/// Boxes the holder of `api_key` plays on.
pub fn list_boxes(base_url: &str, api_key: &str) -> Result<Vec<UserBox>, ClientError> {
    let http = http_client(Duration::from_secs(30))?;
    let url = format!(
        "{}/api/v1/listBoxes?{}",
        trim_base(base_url),
        query(&[("apiKey", api_key)])
    );
    let reply: ListBoxesReply = json_reply(http.get(url).send()?)?;
    Ok(reply.boxes)
}

/// Client for the administration endpoints.
#[derive(Debug, Clone)]
pub struct AdminClient {
    http: Client,
    base_url: String,
    admin_key: String,
}

pub const ADMIN_KEY_HEADER: &str = "X-Admin-Key";

impl AdminClient {
    pub fn new(base_url: &str, admin_key: &str) -> Result<Self, ClientError> {
        Ok(AdminClient {
            http: http_client(Duration::from_secs(30))?,
            base_url: trim_base(base_url),
            admin_key: admin_key.to_owned(),
        })
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let resp = self
            .http
            .post(format!("{}{path}", self.base_url))
            .header(ADMIN_KEY_HEADER, &self.admin_key)
            .json(body)
            .send()?;
        json_reply(resp)
    }

    pub fn create_user(&self, display_name: &str) -> Result<CreatedUser, ClientError> {
        self.post(
            "/api/v1/admin/createUser",
            &CreateUserRequest {
                display_name: display_name.to_owned(),
            },
        )
    }

    pub fn create_box(
        &self,
        behavior: &Behavior,
        alice_user: UserId,
        bob_user: UserId,
    ) -> Result<BoxInfo, ClientError> {
        self.post(
            "/api/v1/admin/createBox",
            &CreateBoxRequest {
                behavior: behavior.to_document(),
                alice_user,
                bob_user,
            },
        )
    }

    pub fn revoke_key(&self, user_id: UserId) -> Result<(), ClientError> {
        let _: serde_json::Value = self.post("/api/v1/admin/revokeKey", &RevokeKeyRequest { user_id })?;
        Ok(())
    }

    pub fn list_boxes(&self) -> Result<Vec<BoxInfo>, ClientError> {
        let resp = self
            .http
            .get(format!("{}/api/v1/admin/boxes", self.base_url))
            .header(ADMIN_KEY_HEADER, &self.admin_key)
            .send()?;
        json_reply(resp)
    }
}

/// In-process backend over a shared [`Engine`].
#[derive(Clone)]
pub struct LocalBoxClient {
    engine: Arc<Engine>,
    box_id: BoxId,
    side: Side,
}

impl LocalBoxClient {
    pub fn new(engine: Arc<Engine>, box_id: BoxId, side: Side) -> Self {
        LocalBoxClient { engine, box_id, side }
    }
}

impl BoxBackend for LocalBoxClient {
    fn box_id(&self) -> BoxId {
        self.box_id
    }

    fn side(&self) -> Side {
        self.side
    }

    fn use_box(&self, transaction_id: &str, input: usize) -> Result<usize, ClientError> {
        let fail = |(status, msg): (u8, String)| ClientError::from_status(status, msg);
        let k = TransactionId::new(transaction_id).map_err(|e| fail(wire::store_status(&e)))?;
        self.engine
            .use_box(self.box_id, &k, self.side, input)
            .map(|o| o.output)
            .map_err(|e| fail(wire::engine_status(&e)))
    }
}
