//! Key material and accounts derived from a scenario and a seed, and their
//! on-disk layout under the data root.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use martsia_authority::EncryptionKeypair;
use martsia_core::abe::{
    authority_setup, global_setup, AuthorityKeypair, AuthorityPublicKey, GlobalParams,
    PublicDirectory,
};
use martsia_core::cas::Cas;
use martsia_core::codec;
use martsia_core::ledger::{Account, Clock, Ledger, LedgerConfig};
use martsia_core::policy::namespaced;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::scenario::ScenarioConfig;
use crate::CliError;

/// Fixed genesis time for seeded runs, so block hashes are reproducible.
pub const LOGICAL_GENESIS: u64 = 1_700_000_000;

/// 32 bytes derived from the run seed for one purpose.
pub fn derive(seed: &[u8], label: &str) -> [u8; 32] {
    let mut buf = codec::sha256(seed).to_vec();
    buf.extend_from_slice(label.as_bytes());
    codec::sha256(&buf)
}

pub fn seeded_rng(seed: &[u8], label: &str) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(derive(seed, label))
}

pub fn authority_account_name(id: &str) -> String {
    format!("authority_{id}")
}

#[derive(Debug, Clone)]
pub struct Deployment {
    pub config: ScenarioConfig,
    pub params: GlobalParams,
    /// Certifiers, actors and authority accounts by name.
    pub accounts: BTreeMap<String, Account>,
    pub authority_keys: BTreeMap<String, AuthorityKeypair>,
}

impl Deployment {
    pub fn generate(config: ScenarioConfig, seed: &[u8]) -> Result<Self, CliError> {
        config.validate()?;
        let params = global_setup(&derive(seed, "params"));
        let names = config.attribute_names();
        let mut authority_keys = BTreeMap::new();
        let mut accounts = BTreeMap::new();
        for id in &config.authorities {
            let attrs: Vec<String> = names.iter().map(|n| namespaced(n, id)).collect();
            let mut rng = seeded_rng(seed, &format!("authority/{id}"));
            let keys = authority_setup(&params, id, &attrs, &mut rng)
                .map_err(|e| CliError::Other(e.to_string()))?;
            authority_keys.insert(id.clone(), keys);
            let name = authority_account_name(id);
            accounts.insert(
                name.clone(),
                Account::from_seed(derive(seed, &format!("account/{name}"))),
            );
        }
        for name in config
            .certifiers
            .iter()
            .chain(config.actors.iter().map(|a| &a.name))
        {
            accounts.insert(
                name.clone(),
                Account::from_seed(derive(seed, &format!("account/{name}"))),
            );
        }
        Ok(Deployment {
            config,
            params,
            accounts,
            authority_keys,
        })
    }

    pub fn account(&self, name: &str) -> Result<&Account, CliError> {
        self.accounts
            .get(name)
            .ok_or_else(|| CliError::Usage(format!("no account named {name:?}")))
    }

    pub fn authority_account(&self, id: &str) -> Result<&Account, CliError> {
        self.account(&authority_account_name(id))
    }

    pub fn publics(&self) -> PublicDirectory {
        PublicDirectory::from_keys(self.authority_keys.values().map(|k| &k.public))
    }

    pub fn ledger_config(&self, clock: Clock) -> LedgerConfig {
        LedgerConfig {
            certifiers: self
                .config
                .certifiers
                .iter()
                .map(|c| self.accounts[c].address())
                .collect(),
            authorities: self
                .config
                .authorities
                .iter()
                .map(|id| {
                    (
                        id.clone(),
                        self.accounts[&authority_account_name(id)].address(),
                    )
                })
                .collect(),
            clock,
        }
    }

    /// Registers every actor's delivery key. This also puts the actors'
    /// signing keys on the ledger, which authorities need to authenticate
    /// them.
    pub fn register_actors(&self, ledger: &mut Ledger) -> Result<(), CliError> {
        for a in &self.config.actors {
            let account = &self.accounts[&a.name];
            let tx = EncryptionKeypair::for_account(account).register_tx(account);
            ledger
                .submit(tx)
                .map_err(|e| CliError::Ledger(e.to_string()))?;
        }
        Ok(())
    }

    /// Resolves an actor name or a raw address to an address.
    pub fn resolve_address(&self, who: &str) -> Result<String, CliError> {
        if martsia_core::ledger::is_address(who) {
            return Ok(who.to_string());
        }
        Ok(self.account(who)?.address())
    }
}

/// The data root (`MARTSIA_HOME`).
#[derive(Debug, Clone)]
pub struct Home {
    root: PathBuf,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Other(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Usage(format!(
                "{} not found; run `martsia init` first",
                path.display()
            ))
        } else {
            io_err(path, e)
        }
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

impl Home {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Home { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn scenario_path(&self) -> PathBuf {
        self.root.join("scenario.json")
    }

    fn params_path(&self) -> PathBuf {
        self.root.join("params.json")
    }

    fn accounts_path(&self) -> PathBuf {
        self.root.join("keys").join("accounts.json")
    }

    fn authority_secret_path(&self, id: &str) -> PathBuf {
        self.root.join("keys").join(format!("authority-{id}.json"))
    }

    fn public_path(&self, id: &str) -> PathBuf {
        self.root.join("publics").join(format!("{id}.json"))
    }

    pub fn ledger_root(&self) -> PathBuf {
        self.root.join("ledger")
    }

    pub fn cas_root(&self) -> PathBuf {
        self.root.join("cas")
    }

    pub fn endpoint_path(&self, id: &str) -> PathBuf {
        self.root.join("endpoints").join(id)
    }

    /// Writes all key material and creates the ledger, registering every
    /// actor's delivery key.
    pub fn init(&self, dep: &Deployment, clock: Clock) -> Result<Ledger, CliError> {
        if self.scenario_path().exists() || self.ledger_root().join("chain.ndjson").exists() {
            return Err(CliError::Usage(format!(
                "{} is already initialized",
                self.root.display()
            )));
        }
        write(&self.scenario_path(), &dep.config.to_json())?;
        write(&self.params_path(), &dep.params.to_bytes())?;
        let seeds: BTreeMap<&str, String> = dep
            .accounts
            .iter()
            .map(|(n, a)| (n.as_str(), hex::encode(a.seed())))
            .collect();
        write(
            &self.accounts_path(),
            &codec::to_canonical_vec(&seeds).expect("accounts serialize"),
        )?;
        for (id, keys) in &dep.authority_keys {
            write(&self.authority_secret_path(id), &keys.to_secret_bytes())?;
            write(
                &self.public_path(id),
                &codec::to_canonical_vec(&keys.public).expect("public serialize"),
            )?;
        }
        let mut ledger = Ledger::create(self.ledger_root(), dep.ledger_config(clock))
            .map_err(|e| CliError::Ledger(e.to_string()))?;
        dep.register_actors(&mut ledger)?;
        Ok(ledger)
    }

    pub fn load(&self) -> Result<Deployment, CliError> {
        let config = ScenarioConfig::from_json(&read(&self.scenario_path())?)?;
        let params = GlobalParams::from_bytes(&read(&self.params_path())?)
            .map_err(|e| CliError::Integrity(format!("params.json: {e}")))?;
        let seeds: BTreeMap<String, String> = serde_json::from_slice(&read(&self.accounts_path())?)
            .map_err(|e| CliError::Integrity(format!("accounts.json: {e}")))?;
        let mut accounts = BTreeMap::new();
        for (name, hex_seed) in seeds {
            let seed: [u8; 32] = hex::decode(&hex_seed)
                .ok()
                .and_then(|b| b.try_into().ok())
                .ok_or_else(|| {
                    CliError::Integrity(format!("accounts.json: bad seed for {name}"))
                })?;
            accounts.insert(name, Account::from_seed(seed));
        }
        let mut authority_keys = BTreeMap::new();
        for id in &config.authorities {
            let bytes = read(&self.authority_secret_path(id))?;
            let keys = AuthorityKeypair::from_secret_bytes(&params, &bytes)
                .map_err(|e| CliError::Integrity(format!("authority {id} keys: {e}")))?;
            authority_keys.insert(id.clone(), keys);
        }
        Ok(Deployment {
            config,
            params,
            accounts,
            authority_keys,
        })
    }

    /// Published authority keys, read from the public directory only.
    pub fn publics(&self, universe: &[String]) -> Result<PublicDirectory, CliError> {
        let mut dir = PublicDirectory::new();
        for id in universe {
            let key: AuthorityPublicKey = serde_json::from_slice(&read(&self.public_path(id))?)
                .map_err(|e| CliError::Integrity(format!("public key of {id}: {e}")))?;
            dir.add(&key);
        }
        Ok(dir)
    }

    pub fn ledger(&self) -> Result<Ledger, CliError> {
        if !self.ledger_root().join("chain.ndjson").exists() {
            return Err(CliError::Usage(format!(
                "no ledger under {}; run `martsia init` first",
                self.root.display()
            )));
        }
        Ledger::open(self.ledger_root()).map_err(|e| CliError::Ledger(e.to_string()))
    }

    pub fn cas(&self) -> Cas {
        Cas::open_dir(self.cas_root())
    }

    pub fn write_endpoint(&self, id: &str, addr: &std::net::SocketAddr) -> Result<(), CliError> {
        write(&self.endpoint_path(id), addr.to_string().as_bytes())
    }

    pub fn endpoint(&self, id: &str) -> Option<std::net::SocketAddr> {
        fs::read_to_string(self.endpoint_path(id))
            .ok()
            .and_then(|s| s.trim().parse().ok())
    }
}
