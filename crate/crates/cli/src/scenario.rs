//! Declarative description of a deployment: authorities, certifiers,
//! actors with their attributes, and the document to share.

use std::collections::{BTreeMap, BTreeSet};

use martsia_core::policy::{self, expand_policy, is_identifier, parse_policy, PolicyAst};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Authority universe, in configuration order.
    pub authorities: Vec<String>,
    pub certifiers: Vec<String>,
    pub actors: Vec<ActorConfig>,
    pub instance_id: String,
    /// Actor that seals and sends the document.
    pub sender: String,
    pub slices: Vec<SliceConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorConfig {
    pub name: String,
    /// Display label used in reports.
    pub label: String,
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceConfig {
    pub payload: String,
    /// Policy before the instance clause is added.
    pub policy: String,
    /// Actors expected to read the slice, besides the sender.
    pub recipients: Vec<String>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

const SENDER_CLAUSE: &str = "(Supplier@2+ and International@B)";

impl ScenarioConfig {
    /// The export-document scenario: four authorities, one certifier, the
    /// International supplier sending a four-slice document.
    pub fn export_document() -> Self {
        let actor = |name: &str, label: &str, attrs: &[&str]| ActorConfig {
            name: name.into(),
            label: label.into(),
            attributes: strings(attrs),
        };
        let slice = |n: u32, body: &str, recipients: &[&str]| SliceConfig {
            payload: format!(
                "Export document, slice {n}: synthetic placeholder record for instance 43175279"
            ),
            policy: format!("{SENDER_CLAUSE} or {body}"),
            recipients: strings(recipients),
        };
        ScenarioConfig {
            name: "export-document".into(),
            authorities: strings(&["A", "B", "C", "D"]),
            certifiers: strings(&["certifier"]),
            actors: vec![
                actor("manufacturer", "Manufacturer", &["Manufacturer"]),
                actor("national_customs", "Nat. customs", &["Customs"]),
                actor(
                    "international_customs",
                    "Int. customs",
                    &["Customs", "International"],
                ),
                actor(
                    "international_carrier",
                    "Int. carrier",
                    &["Carrier", "International"],
                ),
                actor(
                    "international_supplier",
                    "Supplier",
                    &["Supplier", "International"],
                ),
            ],
            instance_id: "43175279".into(),
            sender: "international_supplier".into(),
            slices: vec![
                slice(
                    1,
                    "Manufacturer@A or Customs@2+ or (Carrier@2+ and International@B)",
                    &[
                        "manufacturer",
                        "national_customs",
                        "international_customs",
                        "international_carrier",
                    ],
                ),
                slice(
                    2,
                    "Customs@2+",
                    &["national_customs", "international_customs"],
                ),
                slice(3, "Manufacturer@A", &["manufacturer"]),
                slice(
                    4,
                    "Manufacturer@A or Customs@2+",
                    &["manufacturer", "national_customs", "international_customs"],
                ),
            ],
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, CliError> {
        let cfg: ScenarioConfig = martsia_core::codec::from_json_with_path(bytes)
            .map_err(|(path, msg)| CliError::Usage(format!("scenario {path}: {msg}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Vec<u8> {
        martsia_core::codec::to_canonical_vec(self).expect("scenario serialize")
    }

    pub fn actor(&self, name: &str) -> Option<&ActorConfig> {
        self.actors.iter().find(|a| a.name == name)
    }

    /// Checks every cross-reference and parses every policy, so that a
    /// config that passes never fails half-way through a run.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.authorities.is_empty() {
            return usage("at least one authority is required".into());
        }
        unique("authority", self.authorities.iter())?;
        for id in &self.authorities {
            if !is_identifier(id) {
                return usage(format!("invalid authority id {id:?}"));
            }
        }
        if self.certifiers.is_empty() {
            return usage("at least one certifier is required".into());
        }
        unique(
            "account",
            self.certifiers
                .iter()
                .chain(self.actors.iter().map(|a| &a.name)),
        )?;
        for name in self
            .certifiers
            .iter()
            .chain(self.actors.iter().map(|a| &a.name))
        {
            if !is_identifier(name) {
                return usage(format!("invalid account name {name:?}"));
            }
            if name.starts_with("authority_") {
                return usage(format!(
                    "account name {name:?} uses the reserved authority_ prefix"
                ));
            }
        }
        for a in &self.actors {
            for attr in &a.attributes {
                if !is_identifier(attr) {
                    return usage(format!("actor {}: invalid attribute {attr:?}", a.name));
                }
            }
        }
        if self.actor(&self.sender).is_none() {
            return usage(format!("sender {:?} is not an actor", self.sender));
        }
        if self.slices.is_empty() {
            return usage("the document needs at least one slice".into());
        }
        for (i, s) in self.slices.iter().enumerate() {
            let n = i + 1;
            let ast = self
                .complete_policy(&s.policy)
                .map_err(|e| CliError::Usage(format!("slice {n}: {e}")))?;
            expand_policy(&ast, &self.authorities)
                .map_err(|e| CliError::Usage(format!("slice {n}: {e}")))?;
            for r in &s.recipients {
                if self.actor(r).is_none() {
                    return usage(format!("slice {n}: recipient {r:?} is not an actor"));
                }
            }
        }
        Ok(())
    }

    pub fn complete_policy(&self, text: &str) -> Result<PolicyAst, policy::PolicyError> {
        policy::inject_instance_clause(
            parse_policy(text)?,
            &self.instance_id,
            self.authorities.len(),
        )
    }

    /// Every bare attribute name the deployment needs keys for: actor
    /// attributes, names used in slice policies and the instance id.
    pub fn attribute_names(&self) -> BTreeSet<String> {
        let mut names: BTreeSet<String> = self
            .actors
            .iter()
            .flat_map(|a| a.attributes.iter().cloned())
            .collect();
        names.insert(self.instance_id.clone());
        for s in &self.slices {
            if let Ok(ast) = parse_policy(&s.policy) {
                names.extend(ast.atoms().into_iter().map(|a| a.name.clone()));
            }
        }
        names
    }

    /// Expected readers per slice (recipients plus the sender), by actor.
    pub fn expected_matrix(&self) -> BTreeMap<String, Vec<bool>> {
        self.actors
            .iter()
            .map(|a| {
                let row = self
                    .slices
                    .iter()
                    .map(|s| a.name == self.sender || s.recipients.contains(&a.name))
                    .collect();
                (a.name.clone(), row)
            })
            .collect()
    }
}

fn unique<'a>(what: &str, items: impl Iterator<Item = &'a String>) -> Result<(), CliError> {
    let mut seen = BTreeSet::new();
    for i in items {
        if !seen.insert(i) {
            return Err(CliError::Usage(format!("duplicate {what} {i:?}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn export_scenario_is_valid() {
        let cfg = ScenarioConfig::export_document();
        cfg.validate().unwrap();
        let back = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn slice_three_complete_policy() {
        let cfg = ScenarioConfig::export_document();
        let ast = cfg.complete_policy(&cfg.slices[2].policy).unwrap();
        let want =
            parse_policy("(43175279@4+ and ((Supplier@2+ and International@B) or Manufacturer@A))")
                .unwrap();
        assert_eq!(ast, want);
    }

    #[test]
    fn recipient_counts() {
        let cfg = ScenarioConfig::export_document();
        let counts: Vec<usize> = cfg.slices.iter().map(|s| s.recipients.len()).collect();
        assert_eq!(counts, [4, 2, 1, 3]);
        assert_eq!(counts.iter().sum::<usize>(), 10);
    }

    #[test]
    fn bad_references_are_rejected() {
        let mut cfg = ScenarioConfig::export_document();
        cfg.slices[0].recipients.push("ghost".into());
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::export_document();
        cfg.slices[1].policy = "Customs@Z".into();
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::export_document();
        cfg.actors[0].attributes.push("bad-name".into());
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::export_document();
        cfg.certifiers.push("manufacturer".into());
        assert!(cfg.validate().is_err());

        let err = ScenarioConfig::from_json(br#"{"name":1}"#).unwrap_err();
        assert!(err.to_string().contains("name"), "{err}");
    }

    #[test]
    fn attribute_names_cover_policies() {
        let names = ScenarioConfig::export_document().attribute_names();
        let want: BTreeSet<String> = [
            "43175279",
            "Carrier",
            "Customs",
            "International",
            "Manufacturer",
            "Supplier",
        ]
        .map(String::from)
        .into();
        assert_eq!(names, want);
    }
}
