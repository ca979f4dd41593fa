//! Reader side: resolving messages, acquiring keys over either channel and
//! opening slices.

use std::net::SocketAddr;
use std::time::Duration;

use martsia_authority::delivery::collect_posting;
use martsia_authority::frame::codes;
use martsia_authority::{fetch_keys, ClientError, DeliveryError, EncryptionKeypair, Keyring};
use martsia_core::abe::GlobalParams;
use martsia_core::cas::{Cas, CasError};
use martsia_core::envelope::{open_slice, EnvelopeError, MessageEnvelope, MessageId};
use martsia_core::ledger::{Account, Ledger};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Direct,
    Ledger,
}

/// Handshakes with every authority and assembles the components they issue.
/// An authority that reports `not-certified` contributes nothing.
pub fn direct_keyring(
    account: &Account,
    universe: &[String],
    endpoint: impl Fn(&str) -> Option<SocketAddr>,
    timeout: Duration,
) -> Result<Keyring, CliError> {
    let mut ring = Keyring::new(account.address());
    for id in universe {
        let addr = endpoint(id).ok_or_else(|| {
            CliError::Unreachable(format!("no endpoint known for authority {id}"))
        })?;
        let components = match fetch_keys(addr, account, id, timeout) {
            Ok(c) => c,
            Err(ClientError::Rejected { code, .. }) if code == codes::NOT_CERTIFIED => vec![],
            Err(ClientError::Unreachable(e)) => {
                return Err(CliError::Unreachable(format!(
                    "authority {id} at {addr}: {e}"
                )))
            }
            Err(e @ ClientError::Rejected { .. }) => {
                return Err(CliError::Authz(format!("authority {id}: {e}")))
            }
            Err(e) => return Err(CliError::Unreachable(format!("authority {id}: {e}"))),
        };
        ring.extend(components)
            .map_err(|e| CliError::Integrity(format!("authority {id}: {e}")))?;
    }
    Ok(ring)
}

/// Collects the latest posting of every authority from the ledger.
pub fn ledger_keyring(
    account: &Account,
    universe: &[String],
    ledger: &Ledger,
    cas: &Cas,
) -> Result<Keyring, CliError> {
    let keys = EncryptionKeypair::for_account(account);
    let mut ring = Keyring::new(account.address());
    for id in universe {
        let components = collect_posting(ledger, cas, &keys, id, &account.address())
            .map_err(|e| match e {
                DeliveryError::Cas(CasError::Io(_)) => CliError::Other(e.to_string()),
                other => CliError::Integrity(format!("posting from {id}: {other}")),
            })?
            .unwrap_or_default();
        ring.extend(components)
            .map_err(|e| CliError::Integrity(format!("posting from {id}: {e}")))?;
    }
    Ok(ring)
}

pub fn parse_message_id(text: &str) -> Result<MessageId, CliError> {
    martsia_core::codec::b64_decode(text)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| CliError::Usage(format!("malformed message id {text:?}")))
}

/// Looks the message up on the ledger and fetches its envelope.
pub fn resolve_message(
    ledger: &Ledger,
    cas: &Cas,
    message_id: &MessageId,
) -> Result<MessageEnvelope, CliError> {
    let record = ledger.message(message_id).ok_or_else(|| {
        CliError::Ledger(format!(
            "message {} is not recorded",
            martsia_core::codec::b64_encode(message_id)
        ))
    })?;
    let bytes = cas.get(&record.locator).map_err(|e| match e {
        CasError::Io(_) => CliError::Other(e.to_string()),
        other => CliError::Integrity(other.to_string()),
    })?;
    let env =
        MessageEnvelope::deserialize(&bytes).map_err(|e| CliError::Integrity(e.to_string()))?;
    if &env.message_id != message_id || env.slice_ids() != record.slice_ids {
        return Err(CliError::Integrity(
            "envelope does not match its ledger record".into(),
        ));
    }
    Ok(env)
}

/// Opens slice `index` (1-based) with an assembled keyring.
pub fn open(
    env: &MessageEnvelope,
    index: usize,
    params: &GlobalParams,
    ring: &Keyring,
) -> Result<Vec<u8>, CliError> {
    let slice = index
        .checked_sub(1)
        .and_then(|i| env.slices.get(i))
        .ok_or_else(|| {
            CliError::Usage(format!(
                "slice {index} out of range 1..={}",
                env.slices.len()
            ))
        })?;
    open_slice(env, &slice.slice_id, params, ring.gid(), ring.components()).map_err(|e| match e {
        EnvelopeError::Unqualified => CliError::Denied(format!(
            "attributes do not satisfy the policy of slice {index}"
        )),
        other => CliError::Integrity(format!("slice {index}: {other}")),
    })
}
