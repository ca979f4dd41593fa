//! Simulated append-only ledger with contract state.
//!
//! Blocks hold one signed transaction each and link to their predecessor by
//! hash. The contract state (message records, attribute certifications,
//! encryption-key registry and key-material postings) is never stored on
//! its own: it is rebuilt by replaying the chain from genesis.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cas::Locator;
use crate::codec::{self, b64};

pub const SIGNATURE_SCHEME: &str = "ed25519";
pub const CHAIN_FILE: &str = "chain.ndjson";
pub const CONFIG_FILE: &str = "ledger.json";

pub type Address = String;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("transaction signature does not verify")]
    BadSignature,
    #[error("unsupported signature scheme {0:?}")]
    UnsupportedScheme(String),
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
    #[error("{0} is not a configured certifier")]
    NotACertifier(Address),
    #[error("corrupt chain: {0}")]
    Corrupt(String),
    #[error("ledger I/O: {0}")]
    Io(#[from] io::Error),
}

/// Address of a verifying key: first 20 bytes of its SHA-256, lowercase hex.
pub fn address_of(key: &VerifyingKey) -> Address {
    hex::encode(&codec::sha256(key.as_bytes())[..20])
}

pub fn is_address(s: &str) -> bool {
    s.len() == 40 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

/// A signing identity on the ledger.
#[derive(Clone)]
pub struct Account {
    key: SigningKey,
}

impl std::fmt::Debug for Account {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Account")
            .field("address", &self.address())
            .finish()
    }
}

impl Account {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Account {
            key: SigningKey::from_bytes(&seed),
        }
    }

    pub fn seed(&self) -> [u8; 32] {
        self.key.to_bytes()
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.key.verifying_key()
    }

    pub fn address(&self) -> Address {
        address_of(&self.verifying_key())
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        self.key.sign(message)
    }

    pub fn sign_tx(&self, body: TxBody) -> Transaction {
        let public_key = self.verifying_key().to_bytes();
        let payload = signing_payload(&body, SIGNATURE_SCHEME, &public_key);
        Transaction {
            body,
            scheme: SIGNATURE_SCHEME.into(),
            public_key,
            signature: self.key.sign(&payload).to_bytes().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum TxBody {
    RecordMessage {
        #[serde(with = "b64")]
        message_id: [u8; 32],
        locator: Locator,
        #[serde(with = "slice_ids")]
        slice_ids: Vec<[u8; 32]>,
    },
    Certify {
        reader: Address,
        metadata_locator: Locator,
    },
    RegisterPubKey {
        #[serde(with = "b64")]
        encryption_key: Vec<u8>,
    },
    PostKeyMaterial {
        authority_id: String,
        reader: Address,
        locator: Locator,
    },
}

mod slice_ids {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ids: &[[u8; 32]], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(ids.iter().map(|id| crate::codec::b64_encode(id)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<[u8; 32]>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| {
                let bytes = crate::codec::b64_decode(s).map_err(D::Error::custom)?;
                <[u8; 32]>::try_from(bytes).map_err(|_| D::Error::custom("slice id length"))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transaction {
    pub body: TxBody,
    pub scheme: String,
    #[serde(with = "b64")]
    pub public_key: [u8; 32],
    #[serde(with = "b64")]
    pub signature: Vec<u8>,
}

#[derive(Serialize)]
struct SigningPayload<'a> {
    body: &'a TxBody,
    scheme: &'a str,
    #[serde(with = "b64")]
    public_key: &'a [u8; 32],
}

fn signing_payload(body: &TxBody, scheme: &str, public_key: &[u8; 32]) -> Vec<u8> {
    codec::to_canonical_vec(&SigningPayload {
        body,
        scheme,
        public_key,
    })
    .expect("tx serialize")
}

impl Transaction {
    pub fn sender(&self) -> Result<Address, LedgerError> {
        let key =
            VerifyingKey::from_bytes(&self.public_key).map_err(|_| LedgerError::BadSignature)?;
        Ok(address_of(&key))
    }

    pub fn verify(&self) -> Result<Address, LedgerError> {
        if self.scheme != SIGNATURE_SCHEME {
            return Err(LedgerError::UnsupportedScheme(self.scheme.clone()));
        }
        let key =
            VerifyingKey::from_bytes(&self.public_key).map_err(|_| LedgerError::BadSignature)?;
        let sig = Signature::from_slice(&self.signature).map_err(|_| LedgerError::BadSignature)?;
        let payload = signing_payload(&self.body, &self.scheme, &self.public_key);
        key.verify_strict(&payload, &sig)
            .map_err(|_| LedgerError::BadSignature)?;
        Ok(address_of(&key))
    }

    pub fn hash(&self) -> [u8; 32] {
        codec::sha256(&codec::to_canonical_vec(self).expect("tx serialize"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerBlock {
    pub index: u64,
    #[serde(with = "b64")]
    pub prev_hash: [u8; 32],
    pub timestamp: u64,
    pub transactions: Vec<Transaction>,
    #[serde(with = "b64")]
    pub block_hash: [u8; 32],
}

#[derive(Serialize)]
struct BlockHeader<'a> {
    index: u64,
    #[serde(with = "b64")]
    prev_hash: &'a [u8; 32],
    timestamp: u64,
    transactions: &'a [Transaction],
}

impl LedgerBlock {
    fn seal(
        index: u64,
        prev_hash: [u8; 32],
        timestamp: u64,
        transactions: Vec<Transaction>,
    ) -> Self {
        let mut block = LedgerBlock {
            index,
            prev_hash,
            timestamp,
            transactions,
            block_hash: [0; 32],
        };
        block.block_hash = block.compute_hash();
        block
    }

    pub fn compute_hash(&self) -> [u8; 32] {
        let header = BlockHeader {
            index: self.index,
            prev_hash: &self.prev_hash,
            timestamp: self.timestamp,
            transactions: &self.transactions,
        };
        codec::sha256(&codec::to_canonical_vec(&header).expect("block serialize"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Receipt {
    pub block_index: u64,
    pub tx_hash: [u8; 32],
}

/// Block timestamps: wall clock, or `genesis + index` for reproducible runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Clock {
    System,
    Logical { genesis: u64 },
}

impl Clock {
    fn timestamp(&self, index: u64) -> u64 {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            Clock::Logical { genesis } => genesis + index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerConfig {
    pub certifiers: BTreeSet<Address>,
    /// Authority id → account allowed to post key material for it.
    pub authorities: BTreeMap<String, Address>,
    pub clock: Clock,
}

impl LedgerConfig {
    /// Majority of the configured certifiers, `⌈(n+1)/2⌉`.
    pub fn quorum(&self) -> usize {
        (self.certifiers.len() + 2) / 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageRecord {
    pub locator: Locator,
    pub sender: Address,
    pub slice_ids: Vec<[u8; 32]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certification {
    /// Locator of the current approval round.
    pub metadata_locator: Locator,
    pub approvals: BTreeSet<Address>,
    pub finalized: bool,
    /// Most recently finalized locator; stays visible while a newer round
    /// collects approvals.
    pub finalized_locator: Option<Locator>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ContractState {
    pub messages: BTreeMap<[u8; 32], MessageRecord>,
    pub certifications: BTreeMap<Address, Certification>,
    pub pubkeys: BTreeMap<Address, Vec<u8>>,
    pub key_postings: BTreeMap<(String, Address), Vec<Locator>>,
    /// Signing keys seen in transactions, by sender address.
    pub signing_keys: BTreeMap<Address, [u8; 32]>,
}

impl ContractState {
    fn apply(
        &mut self,
        config: &LedgerConfig,
        sender: &Address,
        tx: &Transaction,
    ) -> Result<(), LedgerError> {
        match &tx.body {
            TxBody::RecordMessage {
                message_id,
                locator,
                slice_ids,
            } => {
                if self.messages.contains_key(message_id) {
                    return Err(LedgerError::InvalidTransition(format!(
                        "message {} already recorded",
                        codec::b64_encode(message_id)
                    )));
                }
                if slice_ids.is_empty() {
                    return Err(LedgerError::InvalidTransition(
                        "message without slices".into(),
                    ));
                }
                self.messages.insert(
                    *message_id,
                    MessageRecord {
                        locator: locator.clone(),
                        sender: sender.clone(),
                        slice_ids: slice_ids.clone(),
                    },
                );
            }
            TxBody::Certify {
                reader,
                metadata_locator,
            } => {
                if !config.certifiers.contains(sender) {
                    return Err(LedgerError::NotACertifier(sender.clone()));
                }
                if !is_address(reader) {
                    return Err(LedgerError::InvalidTransition(format!(
                        "malformed reader address {reader:?}"
                    )));
                }
                let quorum = config.quorum();
                let entry = self
                    .certifications
                    .entry(reader.clone())
                    .or_insert_with(|| Certification {
                        metadata_locator: metadata_locator.clone(),
                        approvals: BTreeSet::new(),
                        finalized: false,
                        finalized_locator: None,
                    });
                if entry.metadata_locator != *metadata_locator {
                    entry.metadata_locator = metadata_locator.clone();
                    entry.approvals.clear();
                    entry.finalized = false;
                }
                entry.approvals.insert(sender.clone());
                if entry.approvals.len() >= quorum {
                    entry.finalized = true;
                    entry.finalized_locator = Some(metadata_locator.clone());
                }
            }
            TxBody::RegisterPubKey { encryption_key } => {
                if encryption_key.len() != 32 {
                    return Err(LedgerError::InvalidTransition(
                        "encryption key must be 32 bytes".into(),
                    ));
                }
                self.pubkeys.insert(sender.clone(), encryption_key.clone());
            }
            TxBody::PostKeyMaterial {
                authority_id,
                reader,
                locator,
            } => {
                match config.authorities.get(authority_id) {
                    Some(addr) if addr == sender => {}
                    Some(_) => {
                        return Err(LedgerError::InvalidTransition(format!(
                            "sender is not the account of authority {authority_id}"
                        )))
                    }
                    None => {
                        return Err(LedgerError::InvalidTransition(format!(
                            "unknown authority {authority_id}"
                        )))
                    }
                }
                self.key_postings
                    .entry((authority_id.clone(), reader.clone()))
                    .or_default()
                    .push(locator.clone());
            }
        }
        self.signing_keys.insert(sender.clone(), tx.public_key);
        Ok(())
    }
}

/// Checks hashes, links, indices and signatures of a block sequence.
pub fn verify_blocks(blocks: &[LedgerBlock]) -> bool {
    let mut prev = [0u8; 32];
    for (i, block) in blocks.iter().enumerate() {
        if block.index != i as u64 || block.prev_hash != prev {
            return false;
        }
        if block.compute_hash() != block.block_hash {
            return false;
        }
        if block.transactions.iter().any(|tx| tx.verify().is_err()) {
            return false;
        }
        prev = block.block_hash;
    }
    !blocks.is_empty()
}

/// Parses a serialized chain, requiring every line to be in canonical form.
pub fn parse_ndjson(bytes: &[u8]) -> Result<Vec<LedgerBlock>, LedgerError> {
    let text = std::str::from_utf8(bytes).map_err(|e| LedgerError::Corrupt(e.to_string()))?;
    let Some(body) = text.strip_suffix('\n') else {
        return Err(LedgerError::Corrupt("missing trailing newline".into()));
    };
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let block: LedgerBlock = serde_json::from_str(line)
                .map_err(|e| LedgerError::Corrupt(format!("line {}: {e}", i + 1)))?;
            let canonical = codec::to_canonical_string(&block).expect("block serialize");
            if canonical != line {
                return Err(LedgerError::Corrupt(format!(
                    "line {} is not canonical",
                    i + 1
                )));
            }
            Ok(block)
        })
        .collect()
}

/// True iff `bytes` is a well-formed, correctly linked and signed chain.
pub fn verify_ndjson(bytes: &[u8]) -> bool {
    parse_ndjson(bytes).is_ok_and(|blocks| verify_blocks(&blocks))
}

pub fn to_ndjson(blocks: &[LedgerBlock]) -> Vec<u8> {
    let mut out = Vec::new();
    for b in blocks {
        out.extend(codec::to_canonical_vec(b).expect("block serialize"));
        out.push(b'\n');
    }
    out
}

#[derive(Debug)]
pub struct Ledger {
    config: LedgerConfig,
    blocks: Vec<LedgerBlock>,
    state: ContractState,
    root: Option<PathBuf>,
}

/// Shared handle: one writer at a time, concurrent readers.
pub type SharedLedger = Arc<RwLock<Ledger>>;

impl Ledger {
    pub fn in_memory(config: LedgerConfig) -> Self {
        let genesis = LedgerBlock::seal(0, [0; 32], config.clock.timestamp(0), vec![]);
        Ledger {
            config,
            blocks: vec![genesis],
            state: ContractState::default(),
            root: None,
        }
    }

    /// Creates a persistent ledger under `root`, writing the configuration
    /// and the genesis block.
    pub fn create(root: impl AsRef<Path>, config: LedgerConfig) -> Result<Self, LedgerError> {
        let root = root.as_ref();
        fs::create_dir_all(root)?;
        if root.join(CHAIN_FILE).exists() {
            return Err(LedgerError::InvalidTransition(format!(
                "a chain already exists under {}",
                root.display()
            )));
        }
        fs::write(
            root.join(CONFIG_FILE),
            codec::to_canonical_vec(&config).expect("config serialize"),
        )?;
        let mut ledger = Self::in_memory(config);
        fs::write(root.join(CHAIN_FILE), to_ndjson(&ledger.blocks))?;
        ledger.root = Some(root.to_path_buf());
        Ok(ledger)
    }

    /// Loads a persistent ledger and rebuilds its state by replay.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let root = root.as_ref();
        let config: LedgerConfig = serde_json::from_slice(&fs::read(root.join(CONFIG_FILE))?)
            .map_err(|e| LedgerError::Corrupt(format!("{CONFIG_FILE}: {e}")))?;
        let blocks = parse_ndjson(&fs::read(root.join(CHAIN_FILE))?)?;
        let mut ledger = Self::replay(config, blocks)?;
        ledger.root = Some(root.to_path_buf());
        Ok(ledger)
    }

    /// Rebuilds a ledger from blocks, re-validating every transaction.
    pub fn replay(config: LedgerConfig, blocks: Vec<LedgerBlock>) -> Result<Self, LedgerError> {
        if !verify_blocks(&blocks) {
            return Err(LedgerError::Corrupt("chain does not verify".into()));
        }
        if !blocks[0].transactions.is_empty() {
            return Err(LedgerError::Corrupt("genesis carries transactions".into()));
        }
        let mut state = ContractState::default();
        for block in &blocks[1..] {
            for tx in &block.transactions {
                let sender = tx.verify()?;
                state
                    .apply(&config, &sender, tx)
                    .map_err(|e| LedgerError::Corrupt(format!("block {}: {e}", block.index)))?;
            }
        }
        Ok(Ledger {
            config,
            blocks,
            state,
            root: None,
        })
    }

    pub fn shared(self) -> SharedLedger {
        Arc::new(RwLock::new(self))
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[LedgerBlock] {
        &self.blocks
    }

    pub fn state(&self) -> &ContractState {
        &self.state
    }

    pub fn to_ndjson(&self) -> Vec<u8> {
        to_ndjson(&self.blocks)
    }

    pub fn submit(&mut self, tx: Transaction) -> Result<Receipt, LedgerError> {
        let sender = tx.verify()?;
        let mut next = self.state.clone();
        next.apply(&self.config, &sender, &tx)?;

        let prev = self.blocks.last().expect("genesis exists");
        let index = prev.index + 1;
        let tx_hash = tx.hash();
        let block = LedgerBlock::seal(
            index,
            prev.block_hash,
            self.config.clock.timestamp(index),
            vec![tx],
        );
        if let Some(root) = &self.root {
            let mut line = codec::to_canonical_vec(&block).expect("block serialize");
            line.push(b'\n');
            let mut f = OpenOptions::new()
                .append(true)
                .open(root.join(CHAIN_FILE))?;
            f.write_all(&line)?;
            f.sync_data()?;
        }
        self.blocks.push(block);
        self.state = next;
        Ok(Receipt {
            block_index: index,
            tx_hash,
        })
    }

    pub fn certify(
        &mut self,
        certifier: &Account,
        reader: &str,
        metadata_locator: &Locator,
    ) -> Result<Receipt, LedgerError> {
        self.submit(certifier.sign_tx(TxBody::Certify {
            reader: reader.to_string(),
            metadata_locator: metadata_locator.clone(),
        }))
    }

    /// Finalized attribute metadata locator of a reader, if any.
    pub fn query_attributes(&self, reader: &str) -> Option<Locator> {
        self.state
            .certifications
            .get(reader)
            .and_then(|c| c.finalized_locator.clone())
    }

    pub fn certification(&self, reader: &str) -> Option<&Certification> {
        self.state.certifications.get(reader)
    }

    pub fn message(&self, message_id: &[u8; 32]) -> Option<&MessageRecord> {
        self.state.messages.get(message_id)
    }

    pub fn encryption_key(&self, address: &str) -> Option<&[u8]> {
        self.state.pubkeys.get(address).map(Vec::as_slice)
    }

    pub fn signing_key(&self, address: &str) -> Option<VerifyingKey> {
        self.state
            .signing_keys
            .get(address)
            .and_then(|k| VerifyingKey::from_bytes(k).ok())
    }

    pub fn key_postings(&self, authority_id: &str, reader: &str) -> &[Locator] {
        self.state
            .key_postings
            .get(&(authority_id.to_string(), reader.to_string()))
            .map_or(&[], Vec::as_slice)
    }

    pub fn verify_chain(&self) -> bool {
        verify_blocks(&self.blocks)
    }
}
