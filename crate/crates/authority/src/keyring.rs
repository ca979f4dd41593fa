use std::collections::BTreeMap;

use martsia_core::abe::UserKeyComponent;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyringError {
    #[error("component for {attribute} belongs to {found}, not {expected}")]
    MixedGid {
        attribute: String,
        expected: String,
        found: String,
    },
    #[error("conflicting components for {0}")]
    Conflict(String),
}

/// A reader's assembled decryption key, one component per namespaced
/// attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keyring {
    gid: String,
    components: BTreeMap<String, UserKeyComponent>,
}

impl Keyring {
    pub fn new(gid: impl Into<String>) -> Self {
        Keyring {
            gid: gid.into(),
            components: BTreeMap::new(),
        }
    }

    pub fn assemble(
        gid: &str,
        components: impl IntoIterator<Item = UserKeyComponent>,
    ) -> Result<Self, KeyringError> {
        let mut ring = Keyring::new(gid);
        ring.extend(components)?;
        Ok(ring)
    }

    pub fn extend(
        &mut self,
        components: impl IntoIterator<Item = UserKeyComponent>,
    ) -> Result<(), KeyringError> {
        for c in components {
            if c.gid != self.gid {
                return Err(KeyringError::MixedGid {
                    attribute: c.attribute,
                    expected: self.gid.clone(),
                    found: c.gid,
                });
            }
            match self.components.get(&c.attribute) {
                Some(existing) if existing != &c => {
                    return Err(KeyringError::Conflict(c.attribute))
                }
                Some(_) => {}
                None => {
                    self.components.insert(c.attribute.clone(), c);
                }
            }
        }
        Ok(())
    }

    pub fn gid(&self) -> &str {
        &self.gid
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.components.keys().map(String::as_str)
    }

    pub fn components(&self) -> impl Iterator<Item = &UserKeyComponent> {
        self.components.values()
    }
}
