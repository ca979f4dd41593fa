//! Sliced message envelopes.
//!
//! Every slice of a document gets its own data-encryption key, encapsulated
//! with the ABE scheme under that slice's policy, and the slice plaintext is
//! sealed with AES-256-GCM under that key. The slice id and the policy text
//! are authenticated as associated data.

use std::collections::BTreeSet;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abe::{self, AbeCiphertext, AbeError, GlobalParams, PublicDirectory, UserKeyComponent};
use crate::codec::{self, b64};
use crate::lsss::{self, LsssError};
use crate::policy::{self, PolicyError};

pub const ENVELOPE_VERSION: &str = "martsia-envelope/1";
pub const FILE_EXTENSION: &str = "menv";

pub type SliceId = [u8; 32];
pub type MessageId = [u8; 32];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvelopeError {
    #[error("a message needs at least one slice")]
    NoSlices,
    #[error("slice indices must be contiguous from 1: expected {expected}, found {found}")]
    NonContiguousIndex { expected: u32, found: u32 },
    #[error("slice {slice}: {source}")]
    Policy { slice: u32, source: PolicyError },
    #[error("slice {slice}: {source}")]
    Lsss { slice: u32, source: LsssError },
    #[error("slice {slice}: {source}")]
    Abe { slice: u32, source: AbeError },
    #[error("no slice with id {0}")]
    UnknownSliceId(String),
    #[error("attributes do not satisfy the slice policy")]
    Unqualified,
    #[error("key components belong to different global identifiers")]
    MixedGid,
    #[error("slice failed authentication")]
    IntegrityError,
    #[error("malformed envelope at {path}: {message}")]
    MalformedEnvelope { path: String, message: String },
}

fn malformed(path: impl Into<String>, message: impl Into<String>) -> EnvelopeError {
    EnvelopeError::MalformedEnvelope {
        path: path.into(),
        message: message.into(),
    }
}

/// One part of a document together with the policy guarding it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceSpec {
    pub index: u32,
    pub plaintext: Vec<u8>,
    pub policy_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SealedSlice {
    #[serde(with = "b64")]
    pub slice_id: SliceId,
    /// Complete policy, including the instance clause.
    pub policy_text: String,
    pub abe_capsule: AbeCiphertext,
    #[serde(with = "b64")]
    pub aead_nonce: [u8; 12],
    #[serde(with = "b64")]
    pub aead_ciphertext: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageEnvelope {
    pub version: String,
    #[serde(with = "b64")]
    pub message_id: MessageId,
    pub sender: String,
    pub slices: Vec<SealedSlice>,
}

/// Everything the data owner needs besides the slices themselves.
#[derive(Debug, Clone, Copy)]
pub struct SealContext<'a> {
    pub params: &'a GlobalParams,
    pub publics: &'a PublicDirectory,
    pub universe: &'a [String],
    pub instance_id: &'a str,
    pub sender: &'a str,
}

fn slice_id(salt: &[u8; 32], index: u32) -> SliceId {
    let mut buf = Vec::with_capacity(36);
    buf.extend_from_slice(salt);
    buf.extend_from_slice(&index.to_be_bytes());
    codec::sha256(&buf)
}

fn slice_nonce(salt: &[u8; 32], index: u32) -> [u8; 12] {
    let mut buf = Vec::with_capacity(41);
    buf.extend_from_slice(salt);
    buf.extend_from_slice(&index.to_be_bytes());
    buf.extend_from_slice(b"nonce");
    let digest = codec::sha256(&buf);
    let mut nonce = [0u8; 12];
    nonce.copy_from_slice(&digest[..12]);
    nonce
}

fn associated_data(slice_id: &SliceId, policy_text: &str) -> Vec<u8> {
    let mut ad = Vec::with_capacity(32 + policy_text.len());
    ad.extend_from_slice(slice_id);
    ad.extend_from_slice(policy_text.as_bytes());
    ad
}

/// `SHA-256(sender ‖ SHA-256(capsule_1) ‖ … ‖ SHA-256(capsule_n))` over the
/// canonical capsule encodings.
pub fn compute_message_id(sender: &str, slices: &[SealedSlice]) -> MessageId {
    let mut header = sender.as_bytes().to_vec();
    for s in slices {
        let capsule = codec::to_canonical_vec(&s.abe_capsule).expect("capsule serialize");
        header.extend_from_slice(&codec::sha256(&capsule));
    }
    codec::sha256(&header)
}

/// Builds the complete policy for a slice: parse, prefix the instance
/// clause, and return it with its canonical text.
pub fn complete_policy(
    policy_text: &str,
    instance_id: &str,
    universe: &[String],
) -> Result<(policy::PolicyAst, String), PolicyError> {
    let ast = policy::parse_policy(policy_text)?;
    let ast = policy::inject_instance_clause(ast, instance_id, universe.len())?;
    let text = ast.to_string();
    Ok((ast, text))
}

pub fn seal_message<R: RngCore + CryptoRng>(
    slices: &[SliceSpec],
    ctx: SealContext<'_>,
    rng: &mut R,
) -> Result<MessageEnvelope, EnvelopeError> {
    if slices.is_empty() {
        return Err(EnvelopeError::NoSlices);
    }
    for (i, s) in slices.iter().enumerate() {
        let expected = i as u32 + 1;
        if s.index != expected {
            return Err(EnvelopeError::NonContiguousIndex {
                expected,
                found: s.index,
            });
        }
    }

    let mut salt = [0u8; 32];
    rng.fill_bytes(&mut salt);

    let mut sealed = Vec::with_capacity(slices.len());
    for spec in slices {
        let slice = spec.index;
        let (ast, policy_text) = complete_policy(&spec.policy_text, ctx.instance_id, ctx.universe)
            .map_err(|source| EnvelopeError::Policy { slice, source })?;
        let formula = policy::expand_policy(&ast, ctx.universe)
            .map_err(|source| EnvelopeError::Policy { slice, source })?;
        let matrix =
            lsss::compile_lsss(&formula).map_err(|source| EnvelopeError::Lsss { slice, source })?;
        let (capsule, dek) = abe::encrypt(ctx.params, ctx.publics, matrix, rng)
            .map_err(|source| EnvelopeError::Abe { slice, source })?;

        let slice_id = slice_id(&salt, slice);
        let nonce = slice_nonce(&salt, slice);
        let cipher = Aes256Gcm::new(dek.as_bytes().into());
        let aead_ciphertext = cipher
            .encrypt(
                Nonce::from_slice(&nonce),
                Payload {
                    msg: &spec.plaintext,
                    aad: &associated_data(&slice_id, &policy_text),
                },
            )
            .expect("AES-GCM encryption of an in-memory buffer");
        sealed.push(SealedSlice {
            slice_id,
            policy_text,
            abe_capsule: capsule,
            aead_nonce: nonce,
            aead_ciphertext,
        });
    }

    Ok(MessageEnvelope {
        version: ENVELOPE_VERSION.into(),
        message_id: compute_message_id(ctx.sender, &sealed),
        sender: ctx.sender.to_string(),
        slices: sealed,
    })
}

impl MessageEnvelope {
    pub fn slice(&self, slice_id: &SliceId) -> Option<&SealedSlice> {
        self.slices.iter().find(|s| &s.slice_id == slice_id)
    }

    pub fn slice_ids(&self) -> Vec<SliceId> {
        self.slices.iter().map(|s| s.slice_id).collect()
    }

    pub fn serialize(&self) -> Vec<u8> {
        codec::to_canonical_vec(self).expect("envelope serialize")
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| malformed("", e.to_string()))?;
        match value.get("version") {
            Some(serde_json::Value::String(v)) if v == ENVELOPE_VERSION => {}
            Some(other) => {
                return Err(malformed("version", format!("unsupported version {other}")))
            }
            None => return Err(malformed("version", "missing field")),
        }
        let env: MessageEnvelope =
            codec::from_json_with_path(bytes).map_err(|(path, msg)| malformed(path, msg))?;
        if env.slices.is_empty() {
            return Err(malformed("slices", "no slices"));
        }
        let mut nonces = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for (i, s) in env.slices.iter().enumerate() {
            if !nonces.insert(s.aead_nonce) {
                return Err(malformed(
                    format!("slices[{i}].aead_nonce"),
                    "duplicate nonce",
                ));
            }
            if !ids.insert(s.slice_id) {
                return Err(malformed(
                    format!("slices[{i}].slice_id"),
                    "duplicate slice id",
                ));
            }
        }
        if compute_message_id(&env.sender, &env.slices) != env.message_id {
            return Err(malformed(
                "message_id",
                "does not match the envelope header",
            ));
        }
        Ok(env)
    }
}

/// Decrypts one slice with a reader's key components.
pub fn open_slice<'a>(
    env: &MessageEnvelope,
    slice_id: &SliceId,
    params: &GlobalParams,
    gid: &str,
    components: impl IntoIterator<Item = &'a UserKeyComponent>,
) -> Result<Vec<u8>, EnvelopeError> {
    let slice = env
        .slice(slice_id)
        .ok_or_else(|| EnvelopeError::UnknownSliceId(hex::encode(slice_id)))?;
    let dek = match abe::decrypt(params, gid, components, &slice.abe_capsule) {
        Ok(dek) => dek,
        Err(AbeError::Unqualified) => return Err(EnvelopeError::Unqualified),
        Err(AbeError::MixedGid) => return Err(EnvelopeError::MixedGid),
        Err(_) => return Err(EnvelopeError::IntegrityError),
    };
    let cipher = Aes256Gcm::new(dek.as_bytes().into());
    cipher
        .decrypt(
            Nonce::from_slice(&slice.aead_nonce),
            Payload {
                msg: &slice.aead_ciphertext,
                aad: &associated_data(&slice.slice_id, &slice.policy_text),
            },
        )
        .map_err(|_| EnvelopeError::IntegrityError)
}
