//! End-to-end run of a scenario: certification, sealing, key acquisition
//! over both channels and the resulting access matrix.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use martsia_authority::{
    deliver_via_ledger, serve, AuthorityNode, Keyring, LiveAnchors, ReaderMetadata,
};
use martsia_core::cas::{Cas, Locator};
use martsia_core::codec;
use martsia_core::envelope::{seal_message, SealContext, SliceSpec};
use martsia_core::ledger::{self, Clock, Ledger, TxBody};
use serde::Serialize;

use crate::deploy::{seeded_rng, Deployment, LOGICAL_GENESIS};
use crate::reader::{direct_keyring, ledger_keyring, open};
use crate::scenario::ScenarioConfig;
use crate::{exit, CliError};

pub const DEFAULT_SEED: &[u8] = b"martsia export-document demo";

#[derive(Debug, Clone)]
pub struct DemoOptions {
    pub config: ScenarioConfig,
    pub seed: Vec<u8>,
    pub out: Option<PathBuf>,
    pub timeout: Duration,
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions {
            config: ScenarioConfig::export_document(),
            seed: DEFAULT_SEED.to_vec(),
            out: None,
            timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Allow,
    Deny,
    Unreachable,
    Integrity,
    Error,
}

impl Cell {
    fn from_result(r: &Result<Vec<u8>, CliError>, expected: &[u8]) -> Self {
        match r {
            Ok(pt) if pt == expected => Cell::Allow,
            Ok(_) => Cell::Integrity,
            Err(e) => match e.exit_code() {
                exit::DENIED => Cell::Deny,
                exit::UNREACHABLE => Cell::Unreachable,
                exit::INTEGRITY => Cell::Integrity,
                _ => Cell::Error,
            },
        }
    }

    fn expected(allowed: bool) -> Self {
        if allowed {
            Cell::Allow
        } else {
            Cell::Deny
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Cell::Allow => "allow",
            Cell::Deny => "deny",
            Cell::Unreachable => "unreachable",
            Cell::Integrity => "integrity",
            Cell::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportRow {
    pub actor: String,
    pub label: String,
    pub address: String,
    pub attributes: Vec<String>,
    pub cells: Vec<Cell>,
    pub expected: Vec<Cell>,
    /// Direct and ledger channels gave the same keyring and plaintexts.
    pub channels_agree: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerSummary {
    pub blocks: usize,
    pub head_hash: String,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DemoReport {
    pub scenario: String,
    pub seed: String,
    pub instance_id: String,
    pub authorities: Vec<String>,
    pub sender: String,
    pub message_id: String,
    pub envelope_locator: Locator,
    pub slice_ids: Vec<String>,
    pub ledger: LedgerSummary,
    pub rows: Vec<ReportRow>,
    pub cells: usize,
    pub mismatches: usize,
    pub ok: bool,
}

/// Keys and read results of one actor over both channels.
#[derive(Debug)]
pub struct ReaderTrace {
    pub actor: String,
    pub direct_ring: Result<Keyring, CliError>,
    pub ledger_ring: Result<Keyring, CliError>,
    pub direct: Vec<Result<Vec<u8>, CliError>>,
    pub ledger: Vec<Result<Vec<u8>, CliError>>,
}

#[derive(Debug)]
pub struct DemoOutcome {
    pub report: DemoReport,
    pub report_json: Vec<u8>,
    pub report_text: String,
    pub envelope: Vec<u8>,
    pub chain: Vec<u8>,
    pub traces: Vec<ReaderTrace>,
}

fn ledger_err(e: ledger::LedgerError) -> CliError {
    CliError::Ledger(e.to_string())
}

fn same_outcome(a: &Result<Vec<u8>, CliError>, b: &Result<Vec<u8>, CliError>) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => x == y,
        (Err(x), Err(y)) => x.exit_code() == y.exit_code(),
        _ => false,
    }
}

pub fn run(opts: &DemoOptions) -> Result<DemoOutcome, CliError> {
    let cfg = &opts.config;
    let dep = Deployment::generate(cfg.clone(), &opts.seed)?;

    let cas = Arc::new(match &opts.out {
        Some(out) => Cas::open_dir(out.join("cas")),
        None => Cas::memory(),
    });
    let mut chain = Ledger::in_memory(dep.ledger_config(Clock::Logical {
        genesis: LOGICAL_GENESIS,
    }));
    dep.register_actors(&mut chain)?;

    // Certification: every certifier approves until the record finalizes.
    for actor in &cfg.actors {
        let address = dep.accounts[&actor.name].address();
        let mut attributes: std::collections::BTreeSet<String> =
            actor.attributes.iter().cloned().collect();
        attributes.insert(cfg.instance_id.clone());
        let meta = ReaderMetadata {
            reader: address.clone(),
            attributes,
        };
        let loc = cas
            .put(&meta.to_bytes())
            .map_err(|e| CliError::Other(e.to_string()))?;
        for c in &cfg.certifiers {
            if chain.query_attributes(&address).as_ref() == Some(&loc) {
                break;
            }
            chain
                .certify(&dep.accounts[c], &address, &loc)
                .map_err(ledger_err)?;
        }
    }

    // The sender seals and records the document.
    let sender = dep.account(&cfg.sender)?;
    let publics = dep.publics();
    let specs: Vec<SliceSpec> = cfg
        .slices
        .iter()
        .zip(1u32..)
        .map(|(s, index)| SliceSpec {
            index,
            plaintext: s.payload.as_bytes().to_vec(),
            policy_text: s.policy.clone(),
        })
        .collect();
    let ctx = SealContext {
        params: &dep.params,
        publics: &publics,
        universe: &cfg.authorities,
        instance_id: &cfg.instance_id,
        sender: &sender.address(),
    };
    let env = seal_message(&specs, ctx, &mut seeded_rng(&opts.seed, "seal"))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let envelope = env.serialize();
    let env_locator = cas
        .put(&envelope)
        .map_err(|e| CliError::Other(e.to_string()))?;
    chain
        .submit(sender.sign_tx(TxBody::RecordMessage {
            message_id: env.message_id,
            locator: env_locator.clone(),
            slice_ids: env.slice_ids(),
        }))
        .map_err(ledger_err)?;

    // Authorities come up as network services over the shared ledger.
    let ledger = chain.shared();
    let nodes: BTreeMap<&str, Arc<AuthorityNode>> = cfg
        .authorities
        .iter()
        .map(|id| {
            let node = AuthorityNode::new(
                dep.params.clone(),
                dep.authority_keys[id].clone(),
                Arc::new(LiveAnchors {
                    ledger: Arc::clone(&ledger),
                    cas: Arc::clone(&cas),
                }),
            );
            (id.as_str(), Arc::new(node))
        })
        .collect();
    let mut servers = BTreeMap::new();
    for (id, node) in &nodes {
        let handle = serve(Arc::clone(node), "127.0.0.1:0")
            .map_err(|e| CliError::Unreachable(format!("authority {id}: {e}")))?;
        servers.insert(id.to_string(), handle);
    }

    // Ledger channel: each authority posts sealed keys for each actor.
    for (id, node) in &nodes {
        let account = dep.authority_account(id)?;
        for actor in &cfg.actors {
            let reader = dep.accounts[&actor.name].address();
            let mut rng = seeded_rng(&opts.seed, &format!("deliver/{id}/{}", actor.name));
            deliver_via_ledger(node, account, &ledger, &cas, &reader, &mut rng)
                .map_err(|e| CliError::Ledger(format!("delivery by {id}: {e}")))?;
        }
    }

    let endpoint = |id: &str| servers.get(id).map(|s| s.local_addr());
    let expected_matrix = cfg.expected_matrix();
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for actor in &cfg.actors {
        let account = &dep.accounts[&actor.name];
        let direct_ring = direct_keyring(account, &cfg.authorities, endpoint, opts.timeout);
        let ledger_ring = {
            let guard = ledger.read().expect("ledger lock");
            ledger_keyring(account, &cfg.authorities, &guard, &cas)
        };
        let read_all = |ring: &Result<Keyring, CliError>| -> Vec<Result<Vec<u8>, CliError>> {
            (1..=env.slices.len())
                .map(|i| match ring {
                    Ok(r) => open(&env, i, &dep.params, r),
                    Err(e) => Err(e.clone()),
                })
                .collect()
        };
        let direct = read_all(&direct_ring);
        let via_ledger = read_all(&ledger_ring);

        let cells: Vec<Cell> = direct
            .iter()
            .zip(&cfg.slices)
            .map(|(r, s)| Cell::from_result(r, s.payload.as_bytes()))
            .collect();
        let rings_agree = match (&direct_ring, &ledger_ring) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        };
        let channels_agree = rings_agree
            && direct
                .iter()
                .zip(&via_ledger)
                .all(|(a, b)| same_outcome(a, b));
        rows.push(ReportRow {
            actor: actor.name.clone(),
            label: actor.label.clone(),
            address: account.address(),
            attributes: direct_ring
                .as_ref()
                .map(|r| r.attributes().map(String::from).collect())
                .unwrap_or_default(),
            cells,
            expected: expected_matrix[&actor.name]
                .iter()
                .map(|&b| Cell::expected(b))
                .collect(),
            channels_agree,
        });
        traces.push(ReaderTrace {
            actor: actor.name.clone(),
            direct_ring,
            ledger_ring,
            direct,
            ledger: via_ledger,
        });
    }
    for (_, s) in servers {
        s.shutdown();
    }

    let ledger = ledger.read().expect("ledger lock");
    let cells = rows.iter().map(|r| r.cells.len()).sum();
    let mismatches = rows
        .iter()
        .flat_map(|r| r.cells.iter().zip(&r.expected))
        .filter(|(a, b)| a != b)
        .count();
    let report = DemoReport {
        scenario: cfg.name.clone(),
        seed: hex::encode(&opts.seed),
        instance_id: cfg.instance_id.clone(),
        authorities: cfg.authorities.clone(),
        sender: cfg.sender.clone(),
        message_id: codec::b64_encode(&env.message_id),
        envelope_locator: env_locator,
        slice_ids: env
            .slice_ids()
            .iter()
            .map(|s| codec::b64_encode(s))
            .collect(),
        ledger: LedgerSummary {
            blocks: ledger.blocks().len(),
            head_hash: codec::b64_encode(&ledger.blocks().last().expect("genesis").block_hash),
            valid: ledger.verify_chain(),
        },
        cells,
        mismatches,
        ok: mismatches == 0 && rows.iter().all(|r| r.channels_agree),
        rows,
    };
    let report_json = codec::to_canonical_vec(&report).expect("report serialize");
    let report_text = render_table(&report);
    let outcome = DemoOutcome {
        report,
        report_json,
        report_text,
        envelope,
        chain: ledger.to_ndjson(),
        traces,
    };
    if let Some(out) = &opts.out {
        write_artifacts(out, cfg, &ledger, &outcome)?;
    }
    Ok(outcome)
}

fn write_artifacts(
    out: &std::path::Path,
    cfg: &ScenarioConfig,
    ledger: &Ledger,
    outcome: &DemoOutcome,
) -> Result<(), CliError> {
    let files: [(&str, &[u8]); 6] = [
        ("scenario.json", &cfg.to_json()),
        ("report.json", &outcome.report_json),
        ("report.txt", outcome.report_text.as_bytes()),
        (
            &format!("envelope.{}", martsia_core::envelope::FILE_EXTENSION),
            &outcome.envelope,
        ),
        ("chain.ndjson", &outcome.chain),
        (
            "ledger.json",
            &codec::to_canonical_vec(ledger.config()).expect("config serialize"),
        ),
    ];
    fs::create_dir_all(out).map_err(|e| CliError::Other(format!("{}: {e}", out.display())))?;
    for (name, bytes) in files {
        let path = out.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn render_table(report: &DemoReport) -> String {
    let slices = report.slice_ids.len();
    let width = report
        .rows
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(0)
        .max("actor".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} access matrix (instance {}, message {})",
        report.scenario, report.instance_id, report.message_id
    );
    let _ = write!(out, "{:width$}", "actor");
    for i in 1..=slices {
        let _ = write!(out, "  {:<12}", format!("slice {i}"));
    }
    out.push('\n');
    for row in &report.rows {
        let _ = write!(out, "{:width$}", row.label);
        for (cell, want) in row.cells.iter().zip(&row.expected) {
            let mark = if cell == want { "" } else { " (!)" };
            let _ = write!(out, "  {:<12}", format!("{}{mark}", cell.as_str()));
        }
        if !row.channels_agree {
            out.push_str("  channels differ");
        }
        out.push('\n');
    }
    let _ = writeln!(
        out,
        "{} cells, {} mismatches, {} blocks, head {}",
        report.cells, report.mismatches, report.ledger.blocks, report.ledger.head_hash
    );
    out
}
