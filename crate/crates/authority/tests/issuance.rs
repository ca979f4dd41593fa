mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use common::{account, World, ATTRIBUTES, AUTHORITIES};
use martsia_authority::delivery::{collect_posting, fetch_and_open};
use martsia_authority::{
    deliver_via_ledger, AuthorityNode, DeliveryError, DiskAnchors, EncryptionKeypair, Keyring,
    KeyringError, ReaderMetadata,
};
use martsia_core::abe::keygen;
use martsia_core::cas::Cas;
use martsia_core::ledger::{Clock, Ledger, LedgerConfig};
use martsia_core::policy::namespaced;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[test]
fn fuzzed_requests_never_exceed_certification() {
    let w = World::new(1);
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let pool: Vec<String> = ATTRIBUTES
        .iter()
        .flat_map(|a| AUTHORITIES.iter().map(move |id| namespaced(a, id)))
        .chain([
            "Bogus@A".into(),
            "Customs".into(),
            "Customs@Z".into(),
            String::new(),
        ])
        .collect();
    for i in 0..40 {
        let reader = account(&format!("fuzz {i}"));
        let certified: Vec<&str> = ATTRIBUTES
            .iter()
            .copied()
            .filter(|_| rng.gen_bool(0.4))
            .collect();
        w.certify(&reader, &certified, 1);
        for id in AUTHORITIES {
            let node = w.node(id);
            let requested: Option<Vec<String>> = if rng.gen_bool(0.3) {
                None
            } else {
                Some(
                    (0..rng.gen_range(0..8))
                        .map(|_| pool[rng.gen_range(0..pool.len())].clone())
                        .collect(),
                )
            };
            let issued = node.issue(&reader.address(), requested.as_deref()).unwrap();
            let allowed: BTreeSet<String> = certified.iter().map(|a| namespaced(a, id)).collect();
            for c in &issued {
                assert!(
                    allowed.contains(&c.attribute),
                    "{} not certified",
                    c.attribute
                );
                if let Some(req) = &requested {
                    assert!(req.contains(&c.attribute));
                }
                assert_eq!(c.gid, reader.address());
            }
            if requested.is_none() {
                assert_eq!(issued.len(), allowed.len());
            }
        }
    }
}

#[test]
fn metadata_for_another_reader_is_refused() {
    let w = World::new(1);
    let reader = account("honest");
    let other = account("other");
    let meta = ReaderMetadata {
        reader: other.address(),
        attributes: ["Customs".to_string()].into(),
    };
    let loc = w.cas.put(&meta.to_bytes()).unwrap();
    w.ledger
        .write()
        .unwrap()
        .certify(&w.certifiers[0], &reader.address(), &loc)
        .unwrap();
    assert!(w.node("A").issue(&reader.address(), None).is_err());
}

#[test]
fn ledger_delivery_roundtrip() {
    let w = World::new(1);
    let reader = account("carrier");
    w.register(&reader);
    w.certify(&reader, &["Carrier", "International", "43175279"], 1);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let node = w.node("B");
    let receipt = deliver_via_ledger(
        &node,
        &w.accounts["B"],
        &w.ledger,
        &w.cas,
        &reader.address(),
        &mut rng,
    )
    .unwrap();
    let ledger = w.ledger.read().unwrap();
    assert_eq!(receipt.block_index as usize, ledger.blocks().len() - 1);
    assert_eq!(ledger.key_postings("B", &reader.address()).len(), 1);

    let keys = EncryptionKeypair::for_account(&reader);
    let got = collect_posting(&ledger, &w.cas, &keys, "B", &reader.address())
        .unwrap()
        .unwrap();
    assert_eq!(got, node.issue(&reader.address(), None).unwrap());
    assert!(
        collect_posting(&ledger, &w.cas, &keys, "A", &reader.address())
            .unwrap()
            .is_none()
    );

    // Someone else's key cannot open the blob.
    let thief = EncryptionKeypair::for_account(&account("thief"));
    let loc = &ledger.key_postings("B", &reader.address())[0];
    assert!(matches!(
        fetch_and_open(&w.cas, &thief, loc, "B"),
        Err(DeliveryError::OpenFailed)
    ));
    assert!(matches!(
        fetch_and_open(&w.cas, &keys, loc, "C"),
        Err(DeliveryError::WrongAuthority { .. })
    ));
}

#[test]
fn delivery_needs_registered_key() {
    let w = World::new(1);
    let reader = account("unregistered");
    w.certify(&reader, &["Customs"], 1);
    let r = deliver_via_ledger(
        &w.node("A"),
        &w.accounts["A"],
        &w.ledger,
        &w.cas,
        &reader.address(),
        &mut ChaCha20Rng::seed_from_u64(0),
    );
    assert!(matches!(r, Err(DeliveryError::NoRegisteredKey(_))));
}

#[test]
fn only_the_authority_account_can_post() {
    let w = World::new(1);
    let reader = account("r");
    w.register(&reader);
    w.certify(&reader, &["Customs"], 1);
    let r = deliver_via_ledger(
        &w.node("A"),
        &w.accounts["B"],
        &w.ledger,
        &w.cas,
        &reader.address(),
        &mut ChaCha20Rng::seed_from_u64(0),
    );
    assert!(matches!(r, Err(DeliveryError::Ledger(_))));
}

#[test]
fn keyring_assembly() {
    let w = World::new(1);
    let gid = account("assembler").address();
    let comps: Vec<_> = AUTHORITIES
        .iter()
        .map(|id| {
            keygen(
                &w.gp,
                &w.keys[*id].secret,
                &gid,
                &namespaced("43175279", id),
            )
            .unwrap()
        })
        .collect();
    let ring = Keyring::assemble(&gid, comps.clone()).unwrap();
    assert_eq!(ring.len(), 4);

    let doubled = Keyring::assemble(&gid, comps.iter().chain(&comps).cloned()).unwrap();
    assert_eq!(doubled, ring);

    let foreign = keygen(&w.gp, &w.keys["A"].secret, "someone-else", "Customs@A").unwrap();
    assert!(matches!(
        Keyring::assemble(&gid, comps.into_iter().chain([foreign])),
        Err(KeyringError::MixedGid { .. })
    ));
}

#[test]
fn disk_anchors_see_later_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let w = World::new(1);
    let certifier = &w.certifiers[0];
    let config = LedgerConfig {
        certifiers: [certifier.address()].into(),
        authorities: Default::default(),
        clock: Clock::Logical { genesis: 0 },
    };
    Ledger::create(dir.path().join("ledger"), config).unwrap();
    let cas = Arc::new(Cas::open_dir(dir.path().join("cas")));
    let node = AuthorityNode::new(
        w.gp.clone(),
        w.keys["D"].clone(),
        Arc::new(DiskAnchors {
            ledger_root: dir.path().join("ledger"),
            cas: Arc::clone(&cas),
        }),
    );
    let reader = account("late");
    assert!(node.issue(&reader.address(), None).is_err());

    let meta = ReaderMetadata {
        reader: reader.address(),
        attributes: ["Supplier".to_string()].into(),
    };
    let loc = cas.put(&meta.to_bytes()).unwrap();
    let mut ledger = Ledger::open(dir.path().join("ledger")).unwrap();
    ledger.certify(certifier, &reader.address(), &loc).unwrap();
    drop(ledger);

    let issued = node.issue(&reader.address(), None).unwrap();
    assert_eq!(issued.len(), 1);
    assert_eq!(issued[0].attribute, "Supplier@D");
}
