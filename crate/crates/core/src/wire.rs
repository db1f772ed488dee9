//! JSON shapes exchanged between the service and its clients.
//!
//! A successful use of a box answers `{"a":1,"boxID":1,"status":0}` (or `"b"`
//! for Bob), byte for byte. Failures answer `{"boxID":1,"status":n,"error":"..."}`
//! with the codes below and never carry an output.

use serde::{Deserialize, Serialize};

use crate::behavior::{BehaviorDocument, BehaviorError, Side};
use crate::game::{Round, Scoreboard};
use crate::sampling::EngineError;
use crate::store::{BoxId, StoreError, UserId};

pub const STATUS_OK: u8 = 0;
/// Missing, unknown or revoked API key.
pub const STATUS_BAD_API_KEY: u8 = 1;
pub const STATUS_UNKNOWN_BOX: u8 = 2;
/// Bad input symbol, missing or duplicated `x`/`y`, or malformed parameters.
pub const STATUS_INVALID_INPUT: u8 = 3;
/// The side already used this transaction with another input.
pub const STATUS_INPUT_MISMATCH: u8 = 4;
/// The key does not play the claimed side of the box.
pub const STATUS_ROLE_MISMATCH: u8 = 5;
/// Lock timeout or storage failure; safe to retry.
pub const STATUS_UNAVAILABLE: u8 = 6;

#[derive(Serialize)]
struct AliceReply {
    a: usize,
    #[serde(rename = "boxID")]
    box_id: BoxId,
    status: u8,
}

#[derive(Serialize)]
struct BobReply {
    b: usize,
    #[serde(rename = "boxID")]
    box_id: BoxId,
    status: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReply {
    #[serde(rename = "boxID")]
    pub box_id: Option<BoxId>,
    pub status: u8,
    pub error: String,
}

/// Body of a successful use.
pub fn use_box_ok(side: Side, output: usize, box_id: BoxId) -> String {
    let body = match side {
        Side::Alice => serde_json::to_string(&AliceReply {
            a: output,
            box_id,
            status: STATUS_OK,
        }),
        Side::Bob => serde_json::to_string(&BobReply {
            b: output,
            box_id,
            status: STATUS_OK,
        }),
    };
    body.expect("plain struct serializes")
}

pub fn error_body(box_id: Option<BoxId>, status: u8, error: impl Into<String>) -> String {
    serde_json::to_string(&ErrorReply {
        box_id,
        status,
        error: error.into(),
    })
    .expect("plain struct serializes")
}

/// A decoded `useBox` reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UseBoxReply {
    Output { side: Side, output: usize, box_id: BoxId },
    Error(ErrorReply),
}

impl UseBoxReply {
    pub fn parse(body: &str) -> Result<Self, String> {
        let v: serde_json::Value = serde_json::from_str(body).map_err(|e| format!("reply is not JSON: {e}"))?;
        let obj = v.as_object().ok_or("reply is not a JSON object")?;
        let status = obj
            .get("status")
            .and_then(|s| s.as_u64())
            .ok_or("reply has no numeric status")?;
        let box_id = obj.get("boxID").and_then(|b| b.as_i64());
        if status != u64::from(STATUS_OK) {
            let error = obj.get("error").and_then(|e| e.as_str()).unwrap_or_default().to_owned();
            return Ok(UseBoxReply::Error(ErrorReply {
                box_id,
                status: u8::try_from(status).unwrap_or(u8::MAX),
                error,
            }));
        }
        let box_id = box_id.ok_or("reply has no boxID")?;
        for side in [Side::Alice, Side::Bob] {
            if let Some(out) = obj.get(side.output_field()) {
                let output = out.as_u64().ok_or("output is not a symbol")? as usize;
                return Ok(UseBoxReply::Output { side, output, box_id });
            }
        }
        Err("successful reply carries no output".into())
    }
}

/// Status code and message for an engine failure.
pub fn engine_status(err: &EngineError) -> (u8, String) {
    match err {
        EngineError::InputMismatchReplay { .. } | EngineError::TransactionSideConflict { .. } => {
            (STATUS_INPUT_MISMATCH, err.to_string())
        }
        EngineError::Behavior(BehaviorError::InputOutOfRange { .. }) => (STATUS_INVALID_INPUT, err.to_string()),
        EngineError::Behavior(_) => (STATUS_UNAVAILABLE, format!("box cannot be sampled: {err}")),
        EngineError::Store(e) => store_status(e),
    }
}

pub fn store_status(err: &StoreError) -> (u8, String) {
    match err {
        StoreError::NotFound(what) if what.starts_with("box") => (STATUS_UNKNOWN_BOX, err.to_string()),
        StoreError::Invalid(_) => (STATUS_INVALID_INPUT, err.to_string()),
        _ => (STATUS_UNAVAILABLE, err.to_string()),
    }
}

// Administration and game endpoints.

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreateUserRequest {
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatedUser {
    #[serde(rename = "userID")]
    pub user_id: UserId,
    #[serde(rename = "displayName")]
    pub display_name: String,
    #[serde(rename = "apiKey")]
    pub api_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CreateBoxRequest {
    pub behavior: BehaviorDocument,
    pub alice_user: UserId,
    pub bob_user: UserId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxInfo {
    #[serde(rename = "boxID")]
    pub box_id: BoxId,
    pub behavior: String,
    #[serde(rename = "aliceUser")]
    pub alice_user: UserId,
    #[serde(rename = "bobUser")]
    pub bob_user: UserId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RevokeKeyRequest {
    #[serde(rename = "userID")]
    pub user_id: UserId,
}

/// One of the caller's boxes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserBox {
    #[serde(rename = "boxID")]
    pub box_id: BoxId,
    pub behavior: String,
    pub role: Side,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListBoxesReply {
    pub status: u8,
    pub boxes: Vec<UserBox>,
}

/// Admin and game endpoint failures: `{"status": n, "error": "..."}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlainError {
    pub status: u8,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealReply {
    #[serde(rename = "boxID")]
    pub box_id: BoxId,
    #[serde(rename = "transactionID")]
    pub transaction_id: String,
    pub status: u8,
    /// Both sides have revealed; `round` is present.
    pub complete: bool,
    pub round: Option<Round>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreboardReply {
    #[serde(rename = "boxID")]
    pub box_id: BoxId,
    pub status: u8,
    pub scoreboard: Scoreboard,
    pub rounds: Vec<Round>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn success_bodies_match_the_transcript_shape() {
        assert_eq!(use_box_ok(Side::Alice, 1, 1), r#"{"a":1,"boxID":1,"status":0}"#);
        assert_eq!(use_box_ok(Side::Bob, 0, 12), r#"{"b":0,"boxID":12,"status":0}"#);
        assert_eq!(
            error_body(None, 1, "bad key"),
            r#"{"boxID":null,"status":1,"error":"bad key"}"#
        );
    }

    #[test]
    fn replies_parse_back() {
        assert_eq!(
            UseBoxReply::parse(r#"{"b":1,"boxID":3,"status":0}"#).unwrap(),
            UseBoxReply::Output {
                side: Side::Bob,
                output: 1,
                box_id: 3
            }
        );
        match UseBoxReply::parse(r#"{"boxID":3,"status":4,"error":"x"}"#).unwrap() {
            UseBoxReply::Error(e) => assert_eq!((e.status, e.box_id), (4, Some(3))),
            other => panic!("{other:?}"),
        }
        assert!(UseBoxReply::parse(r#"{"boxID":3,"status":0}"#).is_err());
        assert!(UseBoxReply::parse("<html>").is_err());
    }
}
