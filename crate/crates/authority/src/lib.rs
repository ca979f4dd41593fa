//! Authority nodes: challenge-response sessions over length-prefixed
//! frames, key issuance from certified metadata, and ledger delivery.

pub mod client;
pub mod delivery;
pub mod frame;
pub mod keyring;
pub mod node;
pub mod server;

pub use client::{fetch_keys, Client, ClientError};
pub use delivery::{deliver_via_ledger, DeliveryError, EncryptionKeypair};
pub use keyring::{Keyring, KeyringError};
pub use node::{AuthorityNode, DiskAnchors, LiveAnchors, ReaderMetadata, TrustAnchors};
pub use server::{default_port, serve, ServerHandle};
