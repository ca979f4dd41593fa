//! Building blocks for confidential multi-party data exchange: an access
//! policy language, its LSSS compiler, a decentralized multi-authority
//! ciphertext-policy ABE scheme, sliced message envelopes, a
//! content-addressed object store and a simulated contract ledger.

pub mod abe;
pub mod cas;
pub mod codec;
pub mod envelope;
pub mod ledger;
pub mod lsss;
pub mod policy;
