use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use martsia_authority::node::IssueError;
use martsia_authority::{
    deliver_via_ledger, serve, AuthorityNode, DeliveryError, DiskAnchors, ReaderMetadata,
};
use martsia_core::codec;
use martsia_core::envelope::{seal_message, SealContext, SliceSpec};
use martsia_core::ledger::{verify_ndjson, Clock, LedgerError, TxBody};
use martsia_core::policy::{is_identifier, parse_policy_file};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::demo::{self, DemoOptions};
use crate::deploy::{seeded_rng, Deployment, Home, LOGICAL_GENESIS};
use crate::reader::{self, Channel};
use crate::scenario::ScenarioConfig;
use crate::{exit, CliError};

#[derive(Debug, Parser)]
#[command(
    name = "martsia",
    version,
    about = "Multi-authority access control for shared documents"
)]
pub struct Cli {
    /// Data root holding keys, ledger and content store.
    #[arg(long, env = "MARTSIA_HOME", default_value = ".martsia", global = true)]
    pub home: PathBuf,
    /// Hex seed making key generation and encryption reproducible.
    #[arg(long, value_parser = parse_seed, global = true)]
    pub seed: Option<Seed>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seed(pub Vec<u8>);

fn parse_seed(s: &str) -> Result<Seed, String> {
    match hex::decode(s) {
        Ok(b) if !b.is_empty() => Ok(Seed(b)),
        _ => Err("seed must be a non-empty hex string".into()),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate accounts, parameters and authority keys and create the ledger.
    Init {
        /// Scenario file; defaults to the export-document scenario.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Attribute certification.
    #[command(subcommand)]
    Certifier(CertifierCommand),
    /// Send documents.
    #[command(subcommand)]
    Owner(OwnerCommand),
    /// Read document slices.
    #[command(subcommand)]
    Reader(ReaderCommand),
    /// Run or act as an attribute authority.
    #[command(subcommand)]
    Authority(AuthorityCommand),
    /// Export-document scenario.
    #[command(subcommand)]
    Demo(DemoCommand),
    /// Ledger maintenance.
    #[command(subcommand)]
    Ledger(LedgerCommand),
}

#[derive(Debug, Subcommand)]
pub enum CertifierCommand {
    /// Store a reader's attributes and approve them on the ledger.
    Certify {
        /// Certifier account; defaults to the first configured certifier.
        #[arg(long = "as")]
        certifier: Option<String>,
        /// Reader address or actor name.
        #[arg(long)]
        reader: String,
        #[arg(long, value_delimiter = ',')]
        attrs: Vec<String>,
        #[arg(long)]
        instance: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum OwnerCommand {
    /// Seal a sliced document and record it on the ledger.
    Send {
        /// Sending actor; defaults to the scenario sender.
        #[arg(long = "as")]
        sender: Option<String>,
        /// JSON array with one string per slice.
        #[arg(long)]
        doc: PathBuf,
        /// One policy per line, in slice order.
        #[arg(long)]
        policies: PathBuf,
        #[arg(long)]
        instance: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReaderCommand {
    /// Decrypt one slice of a recorded message to stdout.
    Read {
        #[arg(long = "as")]
        reader: String,
        #[arg(long)]
        message: String,
        /// 1-based slice index.
        #[arg(long)]
        slice: usize,
        /// Collect key postings from the ledger instead of contacting authorities.
        #[arg(long)]
        via_ledger: bool,
        #[arg(long, default_value_t = 10_000)]
        timeout_ms: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum AuthorityCommand {
    /// Run an authority node until interrupted.
    Serve(ServeArgs),
    /// Post a reader's key components to the ledger.
    Deliver {
        #[arg(long)]
        id: String,
        #[arg(long)]
        reader: String,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub id: String,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    /// Defaults to 5055 plus the authority's position in the universe.
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value_t = 60)]
    pub idle_timeout_secs: u64,
}

#[derive(Debug, Subcommand)]
pub enum DemoCommand {
    /// Run the whole scenario in one process and print the access matrix.
    Run {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum LedgerCommand {
    /// Check hashes, links and signatures of the stored chain.
    Verify,
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(()) => exit::OK,
        Err(e) => {
            let _ = out.flush();
            eprintln!("martsia: {e}");
            e.exit_code()
        }
    }
}

fn io(e: std::io::Error) -> CliError {
    CliError::Other(e.to_string())
}

fn rng_for(seed: Option<&[u8]>, label: &str) -> ChaCha20Rng {
    match seed {
        Some(s) => seeded_rng(s, label),
        None => ChaCha20Rng::from_entropy(),
    }
}

fn read_file(path: &PathBuf) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let home = Home::new(&cli.home);
    let seed = cli.seed.as_ref().map(|s| s.0.as_slice());
    match cli.command {
        Command::Init { config } => init(&home, seed, config, out),
        Command::Certifier(CertifierCommand::Certify {
            certifier,
            reader,
            attrs,
            instance,
        }) => certify(&home, certifier, &reader, &attrs, &instance, out),
        Command::Owner(OwnerCommand::Send {
            sender,
            doc,
            policies,
            instance,
        }) => send(&home, seed, sender, &doc, &policies, instance, out),
        Command::Reader(ReaderCommand::Read {
            reader,
            message,
            slice,
            via_ledger,
            timeout_ms,
        }) => {
            let channel = if via_ledger {
                Channel::Ledger
            } else {
                Channel::Direct
            };
            read(
                &home,
                &reader,
                &message,
                slice,
                channel,
                Duration::from_millis(timeout_ms),
                out,
            )
        }
        Command::Authority(AuthorityCommand::Serve(args)) => serve_authority(&home, &args, out),
        Command::Authority(AuthorityCommand::Deliver { id, reader }) => {
            deliver(&home, seed, &id, &reader, out)
        }
        Command::Demo(DemoCommand::Run { out: dir, config }) => run_demo(seed, dir, config, out),
        Command::Ledger(LedgerCommand::Verify) => {
            let path = home.ledger_root().join(martsia_core::ledger::CHAIN_FILE);
            let bytes = read_file(&path)?;
            if !verify_ndjson(&bytes) {
                return Err(CliError::Integrity(format!(
                    "{} does not verify",
                    path.display()
                )));
            }
            let blocks = bytes.iter().filter(|&&b| b == b'\n').count();
            writeln!(out, "ok: {blocks} blocks").map_err(io)
        }
    }
}

fn init(
    home: &Home,
    seed: Option<&[u8]>,
    config: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let cfg = match config {
        Some(path) => ScenarioConfig::from_json(&read_file(&path)?)?,
        None => ScenarioConfig::export_document(),
    };
    let (seed, clock) = match seed {
        Some(s) => (
            s.to_vec(),
            Clock::Logical {
                genesis: LOGICAL_GENESIS,
            },
        ),
        None => {
            let mut s = vec![0u8; 32];
            rand::thread_rng().fill_bytes(&mut s);
            (s, Clock::System)
        }
    };
    let dep = Deployment::generate(cfg, &seed)?;
    let ledger = home.init(&dep, clock)?;
    writeln!(out, "initialized {}", home.root().display()).map_err(io)?;
    writeln!(out, "seed: {}", hex::encode(&seed)).map_err(io)?;
    writeln!(out, "ledger: {} blocks", ledger.blocks().len()).map_err(io)?;
    for (name, account) in &dep.accounts {
        writeln!(out, "{name:24} {}", account.address()).map_err(io)?;
    }
    Ok(())
}

fn certify(
    home: &Home,
    certifier: Option<String>,
    reader: &str,
    attrs: &[String],
    instance: &str,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    for a in attrs {
        if !is_identifier(a) {
            return Err(CliError::Usage(format!(
                "invalid attribute {a:?}: use letters, digits and '_'"
            )));
        }
    }
    if instance.is_empty() || !instance.bytes().all(|b| b.is_ascii_digit()) {
        return Err(CliError::Usage(format!("invalid instance id {instance:?}")));
    }
    let dep = home.load()?;
    let certifier = certifier.unwrap_or_else(|| dep.config.certifiers[0].clone());
    let account = dep.account(&certifier)?;
    let reader = dep.resolve_address(reader)?;
    let mut attributes: BTreeSet<String> = attrs.iter().cloned().collect();
    attributes.insert(instance.to_string());
    let meta = ReaderMetadata {
        reader: reader.clone(),
        attributes,
    };
    let cas = home.cas();
    let locator = cas
        .put(&meta.to_bytes())
        .map_err(|e| CliError::Other(e.to_string()))?;
    let mut ledger = home.ledger()?;
    let receipt = ledger
        .certify(account, &reader, &locator)
        .map_err(|e| match e {
            LedgerError::NotACertifier(_) => CliError::Authz(e.to_string()),
            other => CliError::Ledger(other.to_string()),
        })?;
    let cert = ledger.certification(&reader).expect("just certified");
    writeln!(out, "locator: {locator}").map_err(io)?;
    writeln!(out, "block: {}", receipt.block_index).map_err(io)?;
    if cert.finalized {
        writeln!(out, "status: finalized").map_err(io)
    } else {
        writeln!(
            out,
            "status: pending ({}/{} approvals)",
            cert.approvals.len(),
            ledger.config().quorum()
        )
        .map_err(io)
    }
}

fn send(
    home: &Home,
    seed: Option<&[u8]>,
    sender: Option<String>,
    doc: &PathBuf,
    policies: &PathBuf,
    instance: Option<String>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let slices: Vec<String> = serde_json::from_slice(&read_file(doc)?).map_err(|e| {
        CliError::Usage(format!(
            "{}: expected a JSON array of strings: {e}",
            doc.display()
        ))
    })?;
    let policy_text = String::from_utf8(read_file(policies)?)
        .map_err(|_| CliError::Usage(format!("{} is not UTF-8", policies.display())))?;
    let policies = parse_policy_file(&policy_text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", policies.display())))?;
    if policies.len() != slices.len() {
        return Err(CliError::Usage(format!(
            "{} slices but {} policies",
            slices.len(),
            policies.len()
        )));
    }
    let dep = home.load()?;
    let instance = instance.unwrap_or_else(|| dep.config.instance_id.clone());
    let sender = dep
        .account(&sender.unwrap_or_else(|| dep.config.sender.clone()))?
        .clone();
    let publics = home.publics(&dep.config.authorities)?;
    let specs: Vec<SliceSpec> = slices
        .into_iter()
        .zip(policies)
        .zip(1u32..)
        .map(|((plaintext, policy_text), index)| SliceSpec {
            index,
            plaintext: plaintext.into_bytes(),
            policy_text,
        })
        .collect();
    let ctx = SealContext {
        params: &dep.params,
        publics: &publics,
        universe: &dep.config.authorities,
        instance_id: &instance,
        sender: &sender.address(),
    };
    let env = seal_message(&specs, ctx, &mut rng_for(seed, "send"))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let locator = home
        .cas()
        .put(&env.serialize())
        .map_err(|e| CliError::Other(e.to_string()))?;
    let mut ledger = home.ledger()?;
    ledger
        .submit(sender.sign_tx(TxBody::RecordMessage {
            message_id: env.message_id,
            locator: locator.clone(),
            slice_ids: env.slice_ids(),
        }))
        .map_err(|e| CliError::Ledger(e.to_string()))?;
    writeln!(out, "message: {}", codec::b64_encode(&env.message_id)).map_err(io)?;
    writeln!(out, "locator: {locator}").map_err(io)?;
    for (i, id) in env.slice_ids().iter().enumerate() {
        writeln!(out, "slice {}: {}", i + 1, codec::b64_encode(id)).map_err(io)?;
    }
    Ok(())
}

fn read(
    home: &Home,
    reader: &str,
    message: &str,
    slice: usize,
    channel: Channel,
    timeout: Duration,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let message_id = reader::parse_message_id(message)?;
    let dep = home.load()?;
    let account = dep.account(reader)?;
    let ledger = home.ledger()?;
    let cas = home.cas();
    let env = reader::resolve_message(&ledger, &cas, &message_id)?;
    let ring = match channel {
        Channel::Direct => reader::direct_keyring(
            account,
            &dep.config.authorities,
            |id| home.endpoint(id),
            timeout,
        )?,
        Channel::Ledger => reader::ledger_keyring(account, &dep.config.authorities, &ledger, &cas)?,
    };
    let plaintext = reader::open(&env, slice, &dep.params, &ring)?;
    out.write_all(&plaintext).map_err(io)?;
    out.flush().map_err(io)
}

fn authority_node(home: &Home, dep: &Deployment, id: &str) -> Result<AuthorityNode, CliError> {
    let keys = dep
        .authority_keys
        .get(id)
        .ok_or_else(|| CliError::Usage(format!("unknown authority {id:?}")))?;
    Ok(AuthorityNode::new(
        dep.params.clone(),
        keys.clone(),
        Arc::new(DiskAnchors {
            ledger_root: home.ledger_root(),
            cas: Arc::new(home.cas()),
        }),
    ))
}

fn serve_authority(home: &Home, args: &ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let dep = home.load()?;
    let index = dep
        .config
        .authorities
        .iter()
        .position(|a| a == &args.id)
        .ok_or_else(|| CliError::Usage(format!("unknown authority {:?}", args.id)))?;
    let node = authority_node(home, &dep, &args.id)?
        .with_idle_timeout(Duration::from_secs(args.idle_timeout_secs));
    let port = args
        .port
        .unwrap_or_else(|| martsia_authority::default_port(index));
    let handle = serve(Arc::new(node), (args.bind.as_str(), port))
        .map_err(|e| CliError::Unreachable(format!("cannot bind {}:{port}: {e}", args.bind)))?;
    home.write_endpoint(&args.id, &handle.local_addr())?;
    writeln!(
        out,
        "authority {} listening on {}",
        args.id,
        handle.local_addr()
    )
    .map_err(io)?;
    out.flush().map_err(io)?;
    handle.wait();
    Ok(())
}

fn deliver(
    home: &Home,
    seed: Option<&[u8]>,
    id: &str,
    reader: &str,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let dep = home.load()?;
    let node = authority_node(home, &dep, id)?;
    let account = dep.authority_account(id)?;
    let reader = dep.resolve_address(reader)?;
    let ledger = RwLock::new(home.ledger()?);
    let cas = home.cas();
    let mut rng = rng_for(seed, &format!("deliver/{id}/{reader}"));
    let receipt = deliver_via_ledger(&node, account, &ledger, &cas, &reader, &mut rng).map_err(
        |e| match e {
            DeliveryError::Issue(IssueError::NotCertified) => CliError::Authz(e.to_string()),
            DeliveryError::NoRegisteredKey(_) | DeliveryError::Ledger(_) => {
                CliError::Ledger(e.to_string())
            }
            other => CliError::Integrity(other.to_string()),
        },
    )?;
    let ledger = ledger.into_inner().expect("ledger lock");
    let locator = ledger
        .key_postings(id, &reader)
        .last()
        .expect("posting just recorded");
    writeln!(out, "locator: {locator}").map_err(io)?;
    writeln!(out, "block: {}", receipt.block_index).map_err(io)
}

fn run_demo(
    seed: Option<&[u8]>,
    dir: Option<PathBuf>,
    config: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut opts = DemoOptions::default();
    if let Some(path) = config {
        opts.config = ScenarioConfig::from_json(&read_file(&path)?)?;
    }
    if let Some(s) = seed {
        opts.seed = s.to_vec();
    }
    opts.out = dir;
    let outcome = demo::run(&opts)?;
    out.write_all(outcome.report_text.as_bytes()).map_err(io)?;
    if let Some(dir) = &opts.out {
        writeln!(out, "artifacts: {}", dir.display()).map_err(io)?;
    }
    if !outcome.report.ok {
        return Err(CliError::Other(format!(
            "access matrix deviates from the expected recipients ({} mismatches)",
            outcome.report.mismatches
        )));
    }
    Ok(())
}
