mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use common::{account, World};
use martsia_authority::frame::{codes, write_payload, Frame};
use martsia_authority::node::{auth_payload, SessionState};
use martsia_authority::{fetch_keys, serve, Client, ClientError};

const TIMEOUT: Duration = Duration::from_secs(10);

fn attrs(components: &[martsia_core::abe::UserKeyComponent]) -> BTreeSet<String> {
    components.iter().map(|c| c.attribute.clone()).collect()
}

fn rejected_code(r: Result<impl std::fmt::Debug, ClientError>) -> String {
    match r {
        Err(ClientError::Rejected { code, .. }) => code,
        other => panic!("expected rejection, got {other:?}"),
    }
}

#[test]
fn certified_reader_gets_own_namespace_only() {
    let w = World::new(1);
    let reader = account("manufacturer");
    w.register(&reader);
    w.certify(&reader, &["Manufacturer", "43175279"], 1);
    let server = serve(w.node("A"), "127.0.0.1:0").unwrap();

    let comps = fetch_keys(server.local_addr(), &reader, "A", TIMEOUT).unwrap();
    assert_eq!(
        attrs(&comps),
        ["43175279@A", "Manufacturer@A"].map(String::from).into()
    );
    assert!(comps.iter().all(|c| c.gid == reader.address()));

    let mut client = Client::connect(server.local_addr(), TIMEOUT).unwrap();
    client.authenticate(&reader, "A").unwrap();
    let comps = client
        .request_keys(Some(vec!["Supplier@A".into(), "Manufacturer@A".into()]))
        .unwrap();
    assert_eq!(attrs(&comps), ["Manufacturer@A".to_string()].into());
    // The session stays usable for further requests.
    assert!(client
        .request_keys(Some(vec!["Supplier@A".into()]))
        .unwrap()
        .is_empty());
}

#[test]
fn pending_certification_is_not_certified() {
    let w = World::new(3);
    let reader = account("pending");
    w.register(&reader);
    w.certify(&reader, &["Customs"], 1);
    let server = serve(w.node("B"), "127.0.0.1:0").unwrap();
    let mut client = Client::connect(server.local_addr(), TIMEOUT).unwrap();
    client.authenticate(&reader, "B").unwrap();
    assert_eq!(
        rejected_code(client.request_keys(None)),
        codes::NOT_CERTIFIED
    );

    w.certify(&reader, &["Customs"], 2);
    let comps = client.request_keys(None).unwrap();
    assert_eq!(attrs(&comps), ["Customs@B".to_string()].into());
}

#[test]
fn key_request_before_auth_is_refused() {
    let w = World::new(1);
    let reader = account("eager");
    w.register(&reader);
    w.certify(&reader, &["Customs"], 1);
    let server = serve(w.node("A"), "127.0.0.1:0").unwrap();

    let mut client = Client::connect(server.local_addr(), TIMEOUT).unwrap();
    assert_eq!(
        rejected_code(client.request_keys(None)),
        codes::UNAUTHENTICATED
    );
    client.hello(&reader.address()).unwrap();
    assert_eq!(
        rejected_code(client.request_keys(None)),
        codes::UNAUTHENTICATED
    );
}

#[test]
fn wrong_nonce_and_cross_authority_replay_fail() {
    let w = World::new(1);
    let reader = account("replayer");
    w.register(&reader);
    w.certify(&reader, &["Customs"], 1);
    let a = serve(w.node("A"), "127.0.0.1:0").unwrap();
    let b = serve(w.node("B"), "127.0.0.1:0").unwrap();

    let mut client = Client::connect(a.local_addr(), TIMEOUT).unwrap();
    let (sid, nonce) = client.hello(&reader.address()).unwrap();
    let mut wrong = nonce;
    wrong[0] ^= 1;
    let sig = reader.sign(&auth_payload(&wrong, "A")).to_bytes().to_vec();
    assert_eq!(rejected_code(client.auth(sid, sig)), codes::BAD_SIGNATURE);

    // Succeed at A, then present the same AUTH to B.
    let mut at_a = Client::connect(a.local_addr(), TIMEOUT).unwrap();
    let (sid_a, nonce_a) = at_a.hello(&reader.address()).unwrap();
    let sig_a = reader
        .sign(&auth_payload(&nonce_a, "A"))
        .to_bytes()
        .to_vec();
    at_a.auth(sid_a, sig_a.clone()).unwrap();

    let mut at_b = Client::connect(b.local_addr(), TIMEOUT).unwrap();
    let (sid_b, _) = at_b.hello(&reader.address()).unwrap();
    assert_eq!(rejected_code(at_b.auth(sid_b, sig_a)), codes::BAD_SIGNATURE);
    assert!(at_b.request_keys(None).is_err());
}

#[test]
fn signature_by_other_account_fails() {
    let w = World::new(1);
    let reader = account("victim");
    let mallory = account("mallory");
    w.register(&reader);
    w.register(&mallory);
    let server = serve(w.node("A"), "127.0.0.1:0").unwrap();
    let mut client = Client::connect(server.local_addr(), TIMEOUT).unwrap();
    let (sid, nonce) = client.hello(&reader.address()).unwrap();
    let sig = mallory.sign(&auth_payload(&nonce, "A")).to_bytes().to_vec();
    assert_eq!(rejected_code(client.auth(sid, sig)), codes::BAD_SIGNATURE);
}

#[test]
fn unknown_address() {
    let w = World::new(1);
    let stranger = account("stranger");
    let server = serve(w.node("A"), "127.0.0.1:0").unwrap();
    let mut client = Client::connect(server.local_addr(), TIMEOUT).unwrap();
    assert_eq!(
        rejected_code(client.authenticate(&stranger, "A")),
        codes::UNKNOWN_ADDRESS
    );
}

#[test]
fn unsupported_and_oversized_frames() {
    let w = World::new(1);
    let server = serve(w.node("A"), "127.0.0.1:0").unwrap();
    let mut client = Client::connect(server.local_addr(), TIMEOUT).unwrap();
    match client.exchange_raw(br#"{"type":"PING"}"#).unwrap() {
        Frame::Error { code, .. } => assert_eq!(code, codes::UNSUPPORTED),
        other => panic!("{other:?}"),
    }
    match client.exchange_raw(b"not json").unwrap() {
        Frame::Error { code, .. } => assert_eq!(code, codes::MALFORMED),
        other => panic!("{other:?}"),
    }

    // A length prefix over the limit ends the connection.
    let mut raw = std::net::TcpStream::connect(server.local_addr()).unwrap();
    raw.set_read_timeout(Some(TIMEOUT)).unwrap();
    use std::io::{Read, Write};
    raw.write_all(&(2u32 << 20).to_be_bytes()).unwrap();
    let mut buf = [0u8; 1];
    assert_eq!(raw.read(&mut buf).unwrap_or(0), 0);
    let _ = write_payload(&mut raw, b"{}");
}

#[test]
fn idle_sessions_expire() {
    let w = World::new(1);
    let reader = account("sleepy");
    w.register(&reader);
    w.certify(&reader, &["Customs"], 1);
    let node = std::sync::Arc::new(
        std::sync::Arc::try_unwrap(w.node("A"))
            .unwrap()
            .with_idle_timeout(Duration::from_secs(60)),
    );
    let mut session = node.session();
    let t0 = Instant::now();
    let hello = Frame::Hello {
        address: reader.address(),
    };
    let Frame::Challenge { session_id, nonce } = session.handle_at(&hello.to_bytes(), t0) else {
        panic!("no challenge");
    };
    let auth = Frame::Auth {
        session_id,
        signature: Some(reader.sign(&auth_payload(&nonce, "A")).to_bytes().to_vec()),
        status: None,
    };
    let late = t0 + Duration::from_secs(61);
    match session.handle_at(&auth.to_bytes(), late) {
        Frame::Error { code, .. } => assert_eq!(code, codes::EXPIRED),
        other => panic!("{other:?}"),
    }
    assert_eq!(session.state(), &SessionState::Closed);

    let mut fresh = node.session();
    let Frame::Challenge { session_id, nonce } = fresh.handle_at(&hello.to_bytes(), t0) else {
        panic!("no challenge");
    };
    let auth = Frame::Auth {
        session_id,
        signature: Some(reader.sign(&auth_payload(&nonce, "A")).to_bytes().to_vec()),
        status: None,
    };
    let in_time = t0 + Duration::from_secs(59);
    assert!(matches!(
        fresh.handle_at(&auth.to_bytes(), in_time),
        Frame::Auth {
            status: Some(_),
            ..
        }
    ));
    assert!(matches!(fresh.state(), SessionState::Authenticated { .. }));
}

#[test]
fn session_id_must_match() {
    let w = World::new(1);
    let reader = account("confused");
    w.register(&reader);
    let server = serve(w.node("A"), "127.0.0.1:0").unwrap();
    let mut client = Client::connect(server.local_addr(), TIMEOUT).unwrap();
    let (mut sid, nonce) = client.hello(&reader.address()).unwrap();
    sid[0] ^= 1;
    let sig = reader.sign(&auth_payload(&nonce, "A")).to_bytes().to_vec();
    assert_eq!(rejected_code(client.auth(sid, sig)), codes::BAD_SESSION);
}

#[test]
fn concurrent_sessions() {
    let w = World::new(1);
    let readers: Vec<_> = (0..8).map(|i| account(&format!("reader {i}"))).collect();
    for (i, r) in readers.iter().enumerate() {
        w.register(r);
        let attrs: &[&str] = if i % 2 == 0 {
            &["Customs"]
        } else {
            &["Carrier"]
        };
        w.certify(r, attrs, 1);
    }
    let server = serve(w.node("C"), "127.0.0.1:0").unwrap();
    let addr = server.local_addr();
    std::thread::scope(|s| {
        for (i, r) in readers.iter().enumerate() {
            s.spawn(move || {
                let comps = fetch_keys(addr, r, "C", TIMEOUT).unwrap();
                let want = if i % 2 == 0 { "Customs@C" } else { "Carrier@C" };
                assert_eq!(attrs(&comps), [want.to_string()].into());
            });
        }
    });
}

#[test]
fn unreachable_authority() {
    let w = World::new(1);
    let server = serve(w.node("A"), "127.0.0.1:0").unwrap();
    let addr = server.local_addr();
    server.shutdown();
    // Give the OS a moment to release the listener.
    std::thread::sleep(Duration::from_millis(50));
    let r = fetch_keys(addr, &account("x"), "A", Duration::from_secs(1));
    assert!(matches!(r, Err(ClientError::Unreachable(_))), "{r:?}");
}
