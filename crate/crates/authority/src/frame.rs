//! Wire format: 4-byte big-endian length prefix followed by a canonical
//! JSON object whose `type` field selects the message.

use std::io::{self, Read, Write};

use martsia_core::abe::UserKeyComponent;
use martsia_core::codec::{self, b64};
use serde::{Deserialize, Serialize};

pub const MAX_FRAME_LEN: usize = 1 << 20;

pub const KNOWN_TYPES: [&str; 6] = [
    "HELLO",
    "CHALLENGE",
    "AUTH",
    "KEY_REQUEST",
    "KEY_RESPONSE",
    "ERROR",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Frame {
    Hello {
        address: String,
    },
    Challenge {
        #[serde(with = "b64")]
        session_id: [u8; 16],
        #[serde(with = "b64")]
        nonce: [u8; 32],
    },
    /// Sent by the reader with a signature; echoed by the authority with
    /// `status: "ok"` once the session is authenticated.
    Auth {
        #[serde(with = "b64")]
        session_id: [u8; 16],
        #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_b64")]
        signature: Option<Vec<u8>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        status: Option<String>,
    },
    KeyRequest {
        #[serde(with = "b64")]
        session_id: [u8; 16],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        attributes: Option<Vec<String>>,
    },
    KeyResponse {
        components: Vec<UserKeyComponent>,
    },
    Error {
        code: String,
        detail: String,
    },
}

mod opt_b64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(bytes) => s.serialize_str(&martsia_core::codec::b64_encode(bytes)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|s| martsia_core::codec::b64_decode(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Error codes carried in `ERROR` frames.
pub mod codes {
    pub const UNSUPPORTED: &str = "unsupported";
    pub const MALFORMED: &str = "malformed";
    pub const BAD_SIGNATURE: &str = "bad-signature";
    pub const UNKNOWN_ADDRESS: &str = "unknown-address";
    pub const EXPIRED: &str = "expired";
    pub const NOT_CERTIFIED: &str = "not-certified";
    pub const UNAUTHENTICATED: &str = "unauthenticated";
    pub const BAD_SESSION: &str = "bad-session";
    pub const UNEXPECTED: &str = "unexpected";
    pub const INTERNAL: &str = "internal";
}

impl Frame {
    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        Frame::Error {
            code: code.to_string(),
            detail: detail.into(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        codec::to_canonical_vec(self).expect("frame serialize")
    }
}

/// Why a payload could not be turned into a [`Frame`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeError {
    Unsupported(String),
    Malformed(String),
}

impl DecodeError {
    pub fn to_frame(&self) -> Frame {
        match self {
            DecodeError::Unsupported(t) => {
                Frame::error(codes::UNSUPPORTED, format!("unsupported frame type {t:?}"))
            }
            DecodeError::Malformed(m) => Frame::error(codes::MALFORMED, m.clone()),
        }
    }
}

pub fn decode(payload: &[u8]) -> Result<Frame, DecodeError> {
    let value: serde_json::Value =
        serde_json::from_slice(payload).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    let kind = value
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| DecodeError::Malformed("missing type".into()))?;
    if !KNOWN_TYPES.contains(&kind) {
        return Err(DecodeError::Unsupported(kind.to_string()));
    }
    serde_json::from_value(value).map_err(|e| DecodeError::Malformed(e.to_string()))
}

pub fn read_payload(r: &mut impl Read) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds limit"),
        ));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn write_payload(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    if payload.len() > MAX_FRAME_LEN {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "frame exceeds limit",
        ));
    }
    let mut buf = Vec::with_capacity(4 + payload.len());
    buf.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    buf.extend_from_slice(payload);
    w.write_all(&buf)?;
    w.flush()
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> io::Result<()> {
    write_payload(w, &frame.to_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_layout() {
        let mut buf = Vec::new();
        write_frame(
            &mut buf,
            &Frame::Hello {
                address: "ab".into(),
            },
        )
        .unwrap();
        let json = br#"{"address":"ab","type":"HELLO"}"#;
        assert_eq!(&buf[..4], &(json.len() as u32).to_be_bytes());
        assert_eq!(&buf[4..], json);
        let back = read_payload(&mut buf.as_slice()).unwrap();
        assert_eq!(
            decode(&back).unwrap(),
            Frame::Hello {
                address: "ab".into()
            }
        );
    }

    #[test]
    fn roundtrip_all_types() {
        let frames = [
            Frame::Challenge {
                session_id: [1; 16],
                nonce: [2; 32],
            },
            Frame::Auth {
                session_id: [1; 16],
                signature: Some(vec![3; 64]),
                status: None,
            },
            Frame::Auth {
                session_id: [1; 16],
                signature: None,
                status: Some("ok".into()),
            },
            Frame::KeyRequest {
                session_id: [1; 16],
                attributes: None,
            },
            Frame::KeyRequest {
                session_id: [1; 16],
                attributes: Some(vec!["X@A".into()]),
            },
            Frame::KeyResponse { components: vec![] },
            Frame::error(codes::EXPIRED, "late"),
        ];
        for f in frames {
            assert_eq!(decode(&f.to_bytes()).unwrap(), f);
        }
    }

    #[test]
    fn unknown_and_malformed() {
        assert_eq!(
            decode(br#"{"type":"PING"}"#),
            Err(DecodeError::Unsupported("PING".into()))
        );
        assert!(matches!(decode(b"{}"), Err(DecodeError::Malformed(_))));
        assert!(matches!(decode(b"[1]"), Err(DecodeError::Malformed(_))));
        assert!(matches!(
            decode(br#"{"type":"HELLO","address":"a","extra":1}"#),
            Err(DecodeError::Malformed(_))
        ));
    }

    #[test]
    fn oversized_frames_rejected() {
        let mut buf = ((MAX_FRAME_LEN + 1) as u32).to_be_bytes().to_vec();
        buf.extend(vec![b' '; 16]);
        assert_eq!(
            read_payload(&mut buf.as_slice()).unwrap_err().kind(),
            io::ErrorKind::InvalidData
        );
        assert!(write_payload(&mut Vec::new(), &vec![0; MAX_FRAME_LEN + 1]).is_err());
    }
}
