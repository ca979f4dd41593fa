use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ed25519_dalek::{Signature, VerifyingKey};
use martsia_core::abe::{keygen, AbeError, AuthorityKeypair, GlobalParams, UserKeyComponent};
use martsia_core::cas::{Cas, CasError, Locator};
use martsia_core::codec;
use martsia_core::ledger::{is_address, Ledger, LedgerError, SharedLedger};
use martsia_core::policy::namespaced;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{codes, decode, Frame};

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(60);

/// Attribute assignment a certifier stores in the CAS for one reader.
/// Attribute names are bare; each authority namespaces them with its own id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReaderMetadata {
    pub reader: String,
    pub attributes: BTreeSet<String>,
}

impl ReaderMetadata {
    pub fn to_bytes(&self) -> Vec<u8> {
        codec::to_canonical_vec(self).expect("metadata serialize")
    }
}

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Cas(#[from] CasError),
}

/// Read access to ledger and CAS state. Implementations must return fresh
/// data on every call; authorities keep nothing between requests.
pub trait TrustAnchors: Send + Sync {
    fn signing_key(&self, address: &str) -> Result<Option<VerifyingKey>, AnchorError>;
    fn finalized_metadata(&self, address: &str) -> Result<Option<Locator>, AnchorError>;
    fn fetch(&self, locator: &Locator) -> Result<Vec<u8>, AnchorError>;
}

/// Anchors backed by an in-process ledger handle and CAS.
#[derive(Debug, Clone)]
pub struct LiveAnchors {
    pub ledger: SharedLedger,
    pub cas: Arc<Cas>,
}

impl TrustAnchors for LiveAnchors {
    fn signing_key(&self, address: &str) -> Result<Option<VerifyingKey>, AnchorError> {
        Ok(self
            .ledger
            .read()
            .expect("ledger lock")
            .signing_key(address))
    }

    fn finalized_metadata(&self, address: &str) -> Result<Option<Locator>, AnchorError> {
        Ok(self
            .ledger
            .read()
            .expect("ledger lock")
            .query_attributes(address))
    }

    fn fetch(&self, locator: &Locator) -> Result<Vec<u8>, AnchorError> {
        Ok(self.cas.get(locator)?)
    }
}

/// Anchors read from a ledger directory, replayed on every query so that
/// blocks appended by other processes are seen.
#[derive(Debug, Clone)]
pub struct DiskAnchors {
    pub ledger_root: PathBuf,
    pub cas: Arc<Cas>,
}

impl TrustAnchors for DiskAnchors {
    fn signing_key(&self, address: &str) -> Result<Option<VerifyingKey>, AnchorError> {
        Ok(Ledger::open(&self.ledger_root)?.signing_key(address))
    }

    fn finalized_metadata(&self, address: &str) -> Result<Option<Locator>, AnchorError> {
        Ok(Ledger::open(&self.ledger_root)?.query_attributes(address))
    }

    fn fetch(&self, locator: &Locator) -> Result<Vec<u8>, AnchorError> {
        Ok(self.cas.get(locator)?)
    }
}

#[derive(Debug, Error)]
pub enum IssueError {
    #[error("reader has no finalized certification")]
    NotCertified,
    #[error("certified metadata is unusable: {0}")]
    BadMetadata(String),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
    #[error(transparent)]
    Abe(#[from] AbeError),
}

/// Bytes a reader signs to authenticate a session: `nonce ‖ authority_id`.
pub fn auth_payload(nonce: &[u8; 32], authority_id: &str) -> Vec<u8> {
    let mut msg = nonce.to_vec();
    msg.extend_from_slice(authority_id.as_bytes());
    msg
}

/// An authority's key material plus its view of the trust anchors.
pub struct AuthorityNode {
    params: GlobalParams,
    keys: AuthorityKeypair,
    anchors: Arc<dyn TrustAnchors>,
    idle_timeout: Duration,
}

impl std::fmt::Debug for AuthorityNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuthorityNode")
            .field("id", &self.id())
            .field("idle_timeout", &self.idle_timeout)
            .finish_non_exhaustive()
    }
}

impl AuthorityNode {
    pub fn new(
        params: GlobalParams,
        keys: AuthorityKeypair,
        anchors: Arc<dyn TrustAnchors>,
    ) -> Self {
        AuthorityNode {
            params,
            keys,
            anchors,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
        }
    }

    pub fn with_idle_timeout(mut self, timeout: Duration) -> Self {
        self.idle_timeout = timeout;
        self
    }

    pub fn id(&self) -> &str {
        &self.keys.secret.authority_id
    }

    pub fn idle_timeout(&self) -> Duration {
        self.idle_timeout
    }

    pub fn params(&self) -> &GlobalParams {
        &self.params
    }

    /// Key components for every certified attribute this authority manages,
    /// optionally narrowed to `requested` (namespaced names). The reader's
    /// address is its global identifier.
    pub fn issue(
        &self,
        reader: &str,
        requested: Option<&[String]>,
    ) -> Result<Vec<UserKeyComponent>, IssueError> {
        let locator = self
            .anchors
            .finalized_metadata(reader)?
            .ok_or(IssueError::NotCertified)?;
        let raw = self.anchors.fetch(&locator)?;
        let meta: ReaderMetadata =
            serde_json::from_slice(&raw).map_err(|e| IssueError::BadMetadata(e.to_string()))?;
        if meta.reader != reader {
            return Err(IssueError::BadMetadata(
                "metadata names a different reader".into(),
            ));
        }
        let requested: Option<BTreeSet<&str>> =
            requested.map(|r| r.iter().map(String::as_str).collect());
        let mut out = Vec::new();
        for name in &meta.attributes {
            let attr = namespaced(name, self.id());
            if !self.keys.secret.manages(&attr) {
                continue;
            }
            if requested
                .as_ref()
                .is_some_and(|r| !r.contains(attr.as_str()))
            {
                continue;
            }
            out.push(keygen(&self.params, &self.keys.secret, reader, &attr)?);
        }
        Ok(out)
    }

    pub fn session(self: &Arc<Self>) -> Session {
        Session {
            node: Arc::clone(self),
            state: SessionState::Fresh,
            session_id: [0; 16],
            last_activity: Instant::now(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionState {
    Fresh,
    Challenged { address: String, nonce: [u8; 32] },
    Authenticated { address: String },
    Closed,
}

/// Per-connection protocol state machine, independent of transport.
#[derive(Debug)]
pub struct Session {
    node: Arc<AuthorityNode>,
    state: SessionState,
    session_id: [u8; 16],
    last_activity: Instant,
}

impl Session {
    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn is_closed(&self) -> bool {
        self.state == SessionState::Closed
    }

    /// Handles one request payload and returns the reply frame.
    pub fn handle(&mut self, payload: &[u8]) -> Frame {
        self.handle_at(payload, Instant::now())
    }

    pub fn handle_at(&mut self, payload: &[u8], now: Instant) -> Frame {
        if self.state == SessionState::Closed {
            return Frame::error(codes::EXPIRED, "session closed");
        }
        if self.state != SessionState::Fresh
            && now.saturating_duration_since(self.last_activity) > self.node.idle_timeout
        {
            self.state = SessionState::Closed;
            return Frame::error(codes::EXPIRED, "session idle timeout");
        }
        self.last_activity = now;
        let frame = match decode(payload) {
            Ok(f) => f,
            Err(e) => return e.to_frame(),
        };
        match frame {
            Frame::Hello { address } => self.on_hello(address),
            Frame::Auth {
                session_id,
                signature: Some(sig),
                status: None,
            } => self.on_auth(session_id, &sig),
            Frame::Auth { .. } => Frame::error(codes::MALFORMED, "AUTH needs a signature"),
            Frame::KeyRequest {
                session_id,
                attributes,
            } => self.on_key_request(session_id, attributes),
            other => Frame::error(
                codes::UNEXPECTED,
                format!("{} is not a request", type_name(&other)),
            ),
        }
    }

    fn on_hello(&mut self, address: String) -> Frame {
        if self.state != SessionState::Fresh {
            return Frame::error(codes::UNEXPECTED, "HELLO already received");
        }
        if !is_address(&address) {
            return Frame::error(codes::MALFORMED, "malformed address");
        }
        let mut rng = rand::thread_rng();
        let mut nonce = [0u8; 32];
        rng.fill_bytes(&mut self.session_id);
        rng.fill_bytes(&mut nonce);
        self.state = SessionState::Challenged { address, nonce };
        Frame::Challenge {
            session_id: self.session_id,
            nonce,
        }
    }

    fn on_auth(&mut self, session_id: [u8; 16], signature: &[u8]) -> Frame {
        let SessionState::Challenged { address, nonce } = &self.state else {
            return Frame::error(codes::UNEXPECTED, "AUTH without a pending challenge");
        };
        if session_id != self.session_id {
            return Frame::error(codes::BAD_SESSION, "session id mismatch");
        }
        let key = match self.node.anchors.signing_key(address) {
            Ok(Some(key)) => key,
            Ok(None) => return Frame::error(codes::UNKNOWN_ADDRESS, "no ledger key for address"),
            Err(e) => return Frame::error(codes::INTERNAL, e.to_string()),
        };
        let valid = Signature::from_slice(signature).is_ok_and(|sig| {
            key.verify_strict(&auth_payload(nonce, self.node.id()), &sig)
                .is_ok()
        });
        if !valid {
            // A failed proof burns the challenge.
            self.state = SessionState::Closed;
            return Frame::error(codes::BAD_SIGNATURE, "signature does not verify");
        }
        self.state = SessionState::Authenticated {
            address: address.clone(),
        };
        Frame::Auth {
            session_id,
            signature: None,
            status: Some("ok".into()),
        }
    }

    fn on_key_request(&mut self, session_id: [u8; 16], attributes: Option<Vec<String>>) -> Frame {
        let SessionState::Authenticated { address } = &self.state else {
            return Frame::error(codes::UNAUTHENTICATED, "session is not authenticated");
        };
        if session_id != self.session_id {
            return Frame::error(codes::BAD_SESSION, "session id mismatch");
        }
        match self.node.issue(address, attributes.as_deref()) {
            Ok(components) => Frame::KeyResponse { components },
            Err(IssueError::NotCertified) => Frame::error(
                codes::NOT_CERTIFIED,
                "reader has no finalized certification",
            ),
            Err(e) => Frame::error(codes::INTERNAL, e.to_string()),
        }
    }
}

fn type_name(f: &Frame) -> &'static str {
    match f {
        Frame::Hello { .. } => "HELLO",
        Frame::Challenge { .. } => "CHALLENGE",
        Frame::Auth { .. } => "AUTH",
        Frame::KeyRequest { .. } => "KEY_REQUEST",
        Frame::KeyResponse { .. } => "KEY_RESPONSE",
        Frame::Error { .. } => "ERROR",
    }
}
