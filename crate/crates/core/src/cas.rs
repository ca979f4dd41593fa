//! Content-addressed object store.
//!
//! Objects are addressed by `cas:` followed by the lowercase hex SHA-256 of
//! their bytes. Reads re-hash what the backend returns, so a corrupted
//! backend surfaces as [`CasError::IntegrityFault`] instead of bad data.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::codec;

const PREFIX: &str = "cas:";
pub const LOCATOR_LEN: usize = 68;

#[derive(Debug, Error)]
pub enum CasError {
    #[error("storage full")]
    StorageFull,
    #[error("object {0} not found")]
    NotFound(Locator),
    #[error("stored bytes for {0} do not match their locator")]
    IntegrityFault(Locator),
    #[error("invalid locator {0:?}")]
    InvalidLocator(String),
    #[error("storage I/O: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Locator(String);

impl Locator {
    pub fn for_content(content: &[u8]) -> Self {
        Locator(format!("{PREFIX}{}", hex::encode(codec::sha256(content))))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Lowercase hex digest without the prefix.
    pub fn hex_digest(&self) -> &str {
        &self.0[PREFIX.len()..]
    }
}

impl FromStr for Locator {
    type Err = CasError;

    fn from_str(s: &str) -> Result<Self, CasError> {
        let valid = s.len() == LOCATOR_LEN
            && s.starts_with(PREFIX)
            && s[PREFIX.len()..]
                .bytes()
                .all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if !valid {
            return Err(CasError::InvalidLocator(s.to_string()));
        }
        Ok(Locator(s.to_string()))
    }
}

impl fmt::Display for Locator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Locator {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Locator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Raw object storage keyed by hex digest. Backends do not verify content.
pub trait Backend: Send + Sync {
    fn read(&self, digest: &str) -> Result<Option<Vec<u8>>, CasError>;
    /// Stores `bytes` unless an object with this digest already exists.
    fn write_if_absent(&self, digest: &str, bytes: &[u8]) -> Result<(), CasError>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn read(&self, digest: &str) -> Result<Option<Vec<u8>>, CasError> {
        (**self).read(digest)
    }

    fn write_if_absent(&self, digest: &str, bytes: &[u8]) -> Result<(), CasError> {
        (**self).write_if_absent(digest, bytes)
    }
}

#[derive(Debug, Default)]
pub struct MemoryBackend {
    objects: Mutex<HashMap<String, Vec<u8>>>,
    capacity: Option<usize>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Backend that refuses writes once it holds `bytes` bytes in total.
    pub fn with_capacity(bytes: usize) -> Self {
        MemoryBackend {
            objects: Mutex::default(),
            capacity: Some(bytes),
        }
    }

    pub fn len(&self) -> usize {
        self.objects.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Overwrites the raw bytes behind a locator, bypassing hashing. Used to
    /// simulate a compromised backend.
    pub fn tamper(&self, locator: &Locator, bytes: Vec<u8>) {
        self.objects
            .lock()
            .unwrap()
            .insert(locator.hex_digest().to_string(), bytes);
    }
}

impl Backend for MemoryBackend {
    fn read(&self, digest: &str) -> Result<Option<Vec<u8>>, CasError> {
        Ok(self.objects.lock().unwrap().get(digest).cloned())
    }

    fn write_if_absent(&self, digest: &str, bytes: &[u8]) -> Result<(), CasError> {
        let mut objects = self.objects.lock().unwrap();
        if objects.contains_key(digest) {
            return Ok(());
        }
        if let Some(cap) = self.capacity {
            let used: usize = objects.values().map(Vec::len).sum();
            if used + bytes.len() > cap {
                return Err(CasError::StorageFull);
            }
        }
        objects.insert(digest.to_string(), bytes.to_vec());
        Ok(())
    }
}

/// Objects under `<root>/objects/<first2hex>/<rest>`.
#[derive(Debug, Clone)]
pub struct DirBackend {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl DirBackend {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirBackend { root: root.into() }
    }

    pub fn object_path(&self, digest: &str) -> PathBuf {
        self.root
            .join("objects")
            .join(&digest[..2])
            .join(&digest[2..])
    }
}

impl Backend for DirBackend {
    fn read(&self, digest: &str) -> Result<Option<Vec<u8>>, CasError> {
        match fs::read(self.object_path(digest)) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn write_if_absent(&self, digest: &str, bytes: &[u8]) -> Result<(), CasError> {
        let path = self.object_path(digest);
        if path.exists() {
            return Ok(());
        }
        let dir = path.parent().expect("object path has a parent");
        fs::create_dir_all(dir).map_err(map_full)?;
        // Write-then-rename: concurrent writers of the same object each
        // rename a complete file over the same name.
        let tmp = dir.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let result = (|| {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        result.map_err(map_full)
    }
}

fn map_full(e: io::Error) -> CasError {
    if e.kind() == io::ErrorKind::StorageFull {
        CasError::StorageFull
    } else {
        CasError::Io(e)
    }
}

pub struct Cas {
    backend: Box<dyn Backend>,
}

impl fmt::Debug for Cas {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cas").finish_non_exhaustive()
    }
}

impl Cas {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Cas {
            backend: Box::new(backend),
        }
    }

    pub fn memory() -> Self {
        Self::new(MemoryBackend::new())
    }

    pub fn open_dir(root: impl AsRef<Path>) -> Self {
        Self::new(DirBackend::new(root.as_ref()))
    }

    pub fn put(&self, content: &[u8]) -> Result<Locator, CasError> {
        let loc = Locator::for_content(content);
        self.backend.write_if_absent(loc.hex_digest(), content)?;
        Ok(loc)
    }

    pub fn get(&self, locator: &Locator) -> Result<Vec<u8>, CasError> {
        let bytes = self
            .backend
            .read(locator.hex_digest())?
            .ok_or_else(|| CasError::NotFound(locator.clone()))?;
        if Locator::for_content(&bytes) != *locator {
            return Err(CasError::IntegrityFault(locator.clone()));
        }
        Ok(bytes)
    }
}
