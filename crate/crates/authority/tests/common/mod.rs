#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use martsia_authority::{AuthorityNode, LiveAnchors, ReaderMetadata};
use martsia_core::abe::{authority_setup, global_setup, AuthorityKeypair, GlobalParams};
use martsia_core::cas::Cas;
use martsia_core::ledger::{Account, Clock, Ledger, LedgerConfig, SharedLedger};
use martsia_core::policy::namespaced;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub const AUTHORITIES: [&str; 4] = ["A", "B", "C", "D"];
pub const ATTRIBUTES: [&str; 6] = [
    "Manufacturer",
    "Customs",
    "Carrier",
    "Supplier",
    "International",
    "43175279",
];

pub struct World {
    pub gp: GlobalParams,
    pub keys: BTreeMap<String, AuthorityKeypair>,
    pub accounts: BTreeMap<String, Account>,
    pub certifiers: Vec<Account>,
    pub ledger: SharedLedger,
    pub cas: Arc<Cas>,
}

pub fn account(tag: &str) -> Account {
    Account::from_seed(martsia_core::codec::sha256(tag.as_bytes()))
}

impl World {
    pub fn new(certifiers: usize) -> Self {
        let gp = global_setup(b"authority-tests");
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut keys = BTreeMap::new();
        let mut accounts = BTreeMap::new();
        for id in AUTHORITIES {
            let attrs: Vec<String> = ATTRIBUTES.iter().map(|a| namespaced(a, id)).collect();
            keys.insert(
                id.to_string(),
                authority_setup(&gp, id, &attrs, &mut rng).unwrap(),
            );
            accounts.insert(id.to_string(), account(&format!("authority {id}")));
        }
        let certifiers: Vec<Account> = (0..certifiers)
            .map(|i| account(&format!("certifier {i}")))
            .collect();
        let config = LedgerConfig {
            certifiers: certifiers.iter().map(Account::address).collect(),
            authorities: accounts
                .iter()
                .map(|(id, a)| (id.clone(), a.address()))
                .collect(),
            clock: Clock::Logical { genesis: 1 },
        };
        World {
            gp,
            keys,
            accounts,
            certifiers,
            ledger: Ledger::in_memory(config).shared(),
            cas: Arc::new(Cas::memory()),
        }
    }

    pub fn node(&self, id: &str) -> Arc<AuthorityNode> {
        Arc::new(AuthorityNode::new(
            self.gp.clone(),
            self.keys[id].clone(),
            Arc::new(LiveAnchors {
                ledger: Arc::clone(&self.ledger),
                cas: Arc::clone(&self.cas),
            }),
        ))
    }

    /// Stores metadata and has the first `approvals` certifiers sign it.
    pub fn certify(&self, reader: &Account, attrs: &[&str], approvals: usize) {
        let meta = ReaderMetadata {
            reader: reader.address(),
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
        };
        let loc = self.cas.put(&meta.to_bytes()).unwrap();
        let mut ledger = self.ledger.write().unwrap();
        for c in &self.certifiers[..approvals] {
            ledger.certify(c, &reader.address(), &loc).unwrap();
        }
    }

    /// Puts the reader's signing key on the ledger by registering its
    /// delivery key.
    pub fn register(&self, reader: &Account) {
        let tx = martsia_authority::EncryptionKeypair::for_account(reader).register_tx(reader);
        self.ledger.write().unwrap().submit(tx).unwrap();
    }
}
