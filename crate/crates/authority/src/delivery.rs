//! Key delivery through the ledger: components are sealed to the reader's
//! registered X25519 key with HPKE, stored in the CAS and announced with a
//! `PostKeyMaterial` transaction.

use std::sync::RwLock;

use hpke::aead::AesGcm256;
use hpke::kdf::HkdfSha256;
use hpke::kem::X25519HkdfSha256;
use hpke::{Deserializable, Kem as _, OpModeR, OpModeS, Serializable};
use martsia_core::abe::UserKeyComponent;
use martsia_core::cas::{Cas, CasError, Locator};
use martsia_core::codec::{self, b64};
use martsia_core::ledger::{Account, Ledger, LedgerError, Receipt, TxBody};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::{AuthorityNode, IssueError};

type Kem = X25519HkdfSha256;

const INFO: &[u8] = b"martsia/keys/v1";
const IKM_LABEL: &[u8] = b"martsia/hpke-ikm/v1";

#[derive(Debug, Error)]
pub enum DeliveryError {
    #[error("reader {0} has no registered encryption key")]
    NoRegisteredKey(String),
    #[error("registered encryption key is malformed")]
    BadRecipientKey,
    #[error("key material cannot be opened with this key")]
    OpenFailed,
    #[error("posting was made by authority {found}, expected {expected}")]
    WrongAuthority { expected: String, found: String },
    #[error(transparent)]
    Issue(#[from] IssueError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Cas(#[from] CasError),
}

/// X25519 keypair a reader registers for ledger deliveries.
#[derive(Clone)]
pub struct EncryptionKeypair {
    secret: <Kem as hpke::Kem>::PrivateKey,
    public: <Kem as hpke::Kem>::PublicKey,
}

impl std::fmt::Debug for EncryptionKeypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EncryptionKeypair")
            .field("public", &codec::b64_encode(&self.public_bytes()))
            .finish()
    }
}

impl EncryptionKeypair {
    /// Derived from the account's signing seed so that it needs no storage.
    pub fn for_account(account: &Account) -> Self {
        let mut ikm = IKM_LABEL.to_vec();
        ikm.extend_from_slice(&account.seed());
        let (secret, public) = Kem::derive_keypair(&codec::sha256(&ikm));
        EncryptionKeypair { secret, public }
    }

    pub fn public_bytes(&self) -> Vec<u8> {
        self.public.to_bytes().to_vec()
    }

    pub fn register_tx(&self, account: &Account) -> martsia_core::ledger::Transaction {
        account.sign_tx(TxBody::RegisterPubKey {
            encryption_key: self.public_bytes(),
        })
    }
}

/// CAS object holding one sealed delivery.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyPosting {
    pub authority_id: String,
    pub reader: String,
    #[serde(with = "b64")]
    pub encapsulated_key: Vec<u8>,
    #[serde(with = "b64")]
    pub ciphertext: Vec<u8>,
}

fn posting_aad(authority_id: &str, reader: &str) -> Vec<u8> {
    let mut aad = authority_id.as_bytes().to_vec();
    aad.push(0);
    aad.extend_from_slice(reader.as_bytes());
    aad
}

pub fn seal_components<R: RngCore + CryptoRng>(
    recipient_key: &[u8],
    authority_id: &str,
    reader: &str,
    components: &[UserKeyComponent],
    rng: &mut R,
) -> Result<KeyPosting, DeliveryError> {
    let pk = <Kem as hpke::Kem>::PublicKey::from_bytes(recipient_key)
        .map_err(|_| DeliveryError::BadRecipientKey)?;
    let plaintext = codec::to_canonical_vec(components).expect("components serialize");
    let (enc, ciphertext) = hpke::single_shot_seal::<AesGcm256, HkdfSha256, Kem, _>(
        &OpModeS::Base,
        &pk,
        INFO,
        &plaintext,
        &posting_aad(authority_id, reader),
        rng,
    )
    .map_err(|_| DeliveryError::BadRecipientKey)?;
    Ok(KeyPosting {
        authority_id: authority_id.to_string(),
        reader: reader.to_string(),
        encapsulated_key: enc.to_bytes().to_vec(),
        ciphertext,
    })
}

pub fn open_posting(
    keys: &EncryptionKeypair,
    posting: &KeyPosting,
) -> Result<Vec<UserKeyComponent>, DeliveryError> {
    let enc = <Kem as hpke::Kem>::EncappedKey::from_bytes(&posting.encapsulated_key)
        .map_err(|_| DeliveryError::OpenFailed)?;
    let plaintext = hpke::single_shot_open::<AesGcm256, HkdfSha256, Kem>(
        &OpModeR::Base,
        &keys.secret,
        &enc,
        INFO,
        &posting.ciphertext,
        &posting_aad(&posting.authority_id, &posting.reader),
    )
    .map_err(|_| DeliveryError::OpenFailed)?;
    serde_json::from_slice(&plaintext).map_err(|_| DeliveryError::OpenFailed)
}

/// Issues the reader's components, seals them to its registered key, stores
/// the result in the CAS and records the posting on the ledger. The ledger
/// lock is not held while the node reads its trust anchors.
pub fn deliver_via_ledger<R: RngCore + CryptoRng>(
    node: &AuthorityNode,
    account: &Account,
    ledger: &RwLock<Ledger>,
    cas: &Cas,
    reader: &str,
    rng: &mut R,
) -> Result<Receipt, DeliveryError> {
    let key = ledger
        .read()
        .expect("ledger lock")
        .encryption_key(reader)
        .ok_or_else(|| DeliveryError::NoRegisteredKey(reader.to_string()))?
        .to_vec();
    let components = node.issue(reader, None)?;
    let posting = seal_components(&key, node.id(), reader, &components, rng)?;
    let locator = cas.put(&codec::to_canonical_vec(&posting).expect("posting serialize"))?;
    let mut ledger = ledger.write().expect("ledger lock");
    Ok(ledger.submit(account.sign_tx(TxBody::PostKeyMaterial {
        authority_id: node.id().to_string(),
        reader: reader.to_string(),
        locator,
    }))?)
}

/// Fetches and opens the most recent posting from `authority_id`, if any.
pub fn collect_posting(
    ledger: &Ledger,
    cas: &Cas,
    keys: &EncryptionKeypair,
    authority_id: &str,
    reader: &str,
) -> Result<Option<Vec<UserKeyComponent>>, DeliveryError> {
    let Some(locator) = ledger.key_postings(authority_id, reader).last() else {
        return Ok(None);
    };
    fetch_and_open(cas, keys, locator, authority_id).map(Some)
}

pub fn fetch_and_open(
    cas: &Cas,
    keys: &EncryptionKeypair,
    locator: &Locator,
    authority_id: &str,
) -> Result<Vec<UserKeyComponent>, DeliveryError> {
    let posting: KeyPosting =
        serde_json::from_slice(&cas.get(locator)?).map_err(|_| DeliveryError::OpenFailed)?;
    if posting.authority_id != authority_id {
        return Err(DeliveryError::WrongAuthority {
            expected: authority_id.to_string(),
            found: posting.authority_id,
        });
    }
    open_posting(keys, &posting)
}
