//! Jupyter message framing and HMAC signing.
//!
//! A message on the wire is a multipart ZeroMQ message:
//!
//! ```text
//! [identities...] "<IDS|MSG>" signature header parent_header metadata content [buffers...]
//! ```
//!
//! The signature is the lowercase hex HMAC-SHA256 of the four JSON frames,
//! concatenated in that order, keyed with the connection key.

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::Sha256;
use thiserror::Error;

pub const DELIMITER: &[u8] = b"<IDS|MSG>";
pub const PROTOCOL_VERSION: &str = "5.3";

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("message has no <IDS|MSG> delimiter")]
    MissingDelimiter,
    #[error("message has {0} frames after the delimiter, expected at least 5")]
    Truncated(usize),
    #[error("message signature does not verify")]
    BadSignature,
    #[error("invalid message JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// HMAC-SHA256 over the concatenation of `frames`, as lowercase hex.
/// An empty key disables signing and yields an empty signature.
pub fn sign_message(key: &[u8], frames: &[&[u8]]) -> String {
    if key.is_empty() {
        return String::new();
    }
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts keys of any length");
    for frame in frames {
        mac.update(frame);
    }
    hex::encode(mac.finalize().into_bytes())
}

/// Signs outgoing messages and checks incoming ones with one connection key.
#[derive(Clone)]
pub struct Signer {
    key: Vec<u8>,
}

impl std::fmt::Debug for Signer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Signer").finish_non_exhaustive()
    }
}

impl Signer {
    pub fn new(key: impl Into<Vec<u8>>) -> Self {
        Self { key: key.into() }
    }

    pub fn sign(&self, frames: &[&[u8]]) -> String {
        sign_message(&self.key, frames)
    }

    /// Constant-time check of a received signature.
    pub fn verify(&self, frames: &[&[u8]], signature: &[u8]) -> bool {
        if self.key.is_empty() {
            return true;
        }
        let Ok(expected) = hex::decode(signature) else {
            return false;
        };
        let mut mac =
            HmacSha256::new_from_slice(&self.key).expect("HMAC accepts keys of any length");
        for frame in frames {
            mac.update(frame);
        }
        mac.verify_slice(&expected).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub msg_id: String,
    pub session: String,
    pub username: String,
    pub date: String,
    pub msg_type: String,
    pub version: String,
}

impl Header {
    pub fn new(msg_type: &str, session: &str) -> Self {
        Self {
            msg_id: uuid::Uuid::new_v4().simple().to_string(),
            session: session.to_owned(),
            username: "nbcheck".to_owned(),
            date: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
            msg_type: msg_type.to_owned(),
            version: PROTOCOL_VERSION.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    /// Routing prefix; only meaningful on ROUTER sockets.
    pub identities: Vec<Vec<u8>>,
    pub header: Header,
    /// The parent's header, or an empty object.
    pub parent_header: Value,
    pub metadata: Value,
    pub content: Value,
    pub buffers: Vec<Vec<u8>>,
}

impl Message {
    pub fn new(msg_type: &str, session: &str, content: Value) -> Self {
        Self {
            identities: Vec::new(),
            header: Header::new(msg_type, session),
            parent_header: json!({}),
            metadata: json!({}),
            content,
            buffers: Vec::new(),
        }
    }

    /// A message answering `parent`, routed back to the same peer.
    pub fn reply_to(parent: &Message, msg_type: &str, content: Value) -> Self {
        let mut msg = Self::new(msg_type, &parent.header.session, content);
        msg.identities = parent.identities.clone();
        msg.parent_header = serde_json::to_value(&parent.header).expect("header serializes");
        msg
    }

    pub fn msg_type(&self) -> &str {
        &self.header.msg_type
    }

    pub fn parent_msg_id(&self) -> Option<&str> {
        self.parent_header.get("msg_id").and_then(Value::as_str)
    }

    pub fn encode(&self, signer: &Signer) -> Vec<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let parent = serde_json::to_vec(&self.parent_header).expect("JSON value serializes");
        let metadata = serde_json::to_vec(&self.metadata).expect("JSON value serializes");
        let content = serde_json::to_vec(&self.content).expect("JSON value serializes");
        let signature = signer.sign(&[&header, &parent, &metadata, &content]);

        let mut frames = self.identities.clone();
        frames.push(DELIMITER.to_vec());
        frames.push(signature.into_bytes());
        frames.extend([header, parent, metadata, content]);
        frames.extend(self.buffers.iter().cloned());
        frames
    }

    pub fn decode(frames: Vec<Vec<u8>>, signer: &Signer) -> Result<Self, WireError> {
        let split = frames
            .iter()
            .position(|f| f == DELIMITER)
            .ok_or(WireError::MissingDelimiter)?;
        let mut frames = frames;
        let rest = frames.split_off(split + 1);
        frames.pop();
        let identities = frames;
        if rest.len() < 5 {
            return Err(WireError::Truncated(rest.len()));
        }
        let mut rest = rest.into_iter();
        let signature = rest.next().unwrap_or_default();
        let header = rest.next().unwrap_or_default();
        let parent = rest.next().unwrap_or_default();
        let metadata = rest.next().unwrap_or_default();
        let content = rest.next().unwrap_or_default();
        if !signer.verify(&[&header, &parent, &metadata, &content], &signature) {
            return Err(WireError::BadSignature);
        }
        Ok(Self {
            identities,
            header: serde_json::from_slice(&header)?,
            parent_header: serde_json::from_slice(&parent)?,
            metadata: serde_json::from_slice(&metadata)?,
            content: serde_json::from_slice(&content)?,
            buffers: rest.collect(),
        })
    }
}
