//! Decentralized multi-authority ciphertext-policy ABE over BLS12-381.
//!
//! Each authority owns the attributes namespaced with its id and holds, per
//! attribute `u`, secrets `(α_u, y_u)`. It publishes `e(g1,g2)^α_u` and
//! `g2^y_u`. A reader's key part for `u` is `K = g1^α_u · H(gid)^y_u`, where
//! `H` is a hash onto G1 (SSWU map, unknown discrete log) and `gid` is the
//! reader's ledger address. Key parts issued to different gids cannot be
//! combined: the `H(gid)^ω` blinding terms only cancel under one gid.
//!
//! Encryption against an LSSS matrix `A` with labeling `ρ`:
//!
//! ```text
//! λ_x = A_x·(s, v2..vd)     ω_x = A_x·(0, w2..wd)     r_x fresh
//! C1_x = e(g1,g2)^λ_x · e(g1,g2)^(α_ρ(x)·r_x)
//! C2_x = g2^r_x
//! C3_x = g2^(y_ρ(x)·r_x) · g2^ω_x
//! dek  = KDF(e(g1,g2)^s)
//! ```
//!
//! Decryption computes `C1_x · e(H(gid), C3_x) / e(K_ρ(x), C2_x)
//! = e(g1,g2)^λ_x · e(H(gid),g2)^ω_x` and combines rows with the
//! reconstruction coefficients.

use std::collections::{BTreeMap, BTreeSet};

use ark_bls12_381::{Bls12_381, Fr, G1Affine, G1Projective, G2Affine, G2Projective};
use ark_ec::hashing::curve_maps::wb::WBMap;
use ark_ec::hashing::map_to_curve_hasher::MapToCurveBasedHasher;
use ark_ec::hashing::HashToCurve;
use ark_ec::pairing::{Pairing, PairingOutput};
use ark_ec::{AffineRepr, CurveGroup};
use ark_ff::field_hashers::DefaultFieldHasher;
use ark_std::{UniformRand, Zero};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::codec::{self, ark_b64};
use crate::lsss::{self, LsssMatrix};
use crate::policy::split_namespaced;

pub type Scalar = Fr;
pub type Gt = PairingOutput<Bls12_381>;

pub const CURVE_ID: &str = "BLS12-381";
pub const DEK_LABEL: &[u8] = b"martsia/dek/v1";
const GID_DST_PREFIX: &str = "MARTSIA-V01-BLS12381G1_XMD:SHA-256_SSWU_RO_GID_";
const GEN_DST_PREFIX: &str = "MARTSIA-V01-BLS12381_XMD:SHA-256_SSWU_RO_GEN_";

type G1Hasher = MapToCurveBasedHasher<
    G1Projective,
    DefaultFieldHasher<Sha256, 128>,
    WBMap<ark_bls12_381::g1::Config>,
>;
type G2Hasher = MapToCurveBasedHasher<
    G2Projective,
    DefaultFieldHasher<Sha256, 128>,
    WBMap<ark_bls12_381::g2::Config>,
>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AbeError {
    #[error("attribute {attribute:?} is not in the namespace of authority {authority:?}")]
    NamespaceMismatch {
        attribute: String,
        authority: String,
    },
    #[error("authority does not manage attribute {0:?}")]
    UnknownAttribute(String),
    #[error("no published authority key for attribute {0:?}")]
    MissingAuthorityPublic(String),
    #[error("key components belong to different global identifiers")]
    MixedGid,
    #[error("attributes do not satisfy the policy")]
    Unqualified,
    #[error("empty global identifier")]
    EmptyGid,
    #[error("hash to curve failed: {0}")]
    HashToCurve(String),
    #[error("malformed ABE data: {0}")]
    Malformed(String),
}

/// 256-bit data-encryption key.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Dek(pub [u8; 32]);

impl std::fmt::Debug for Dek {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Dek(..)")
    }
}

impl Dek {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

/// Group description, generators and hash/KDF choices, all derived
/// deterministically from a seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalParams {
    seed: Vec<u8>,
    g1: G1Affine,
    g2: G2Affine,
    base: Gt,
    gid_dst: Vec<u8>,
}

impl GlobalParams {
    pub fn seed(&self) -> &[u8] {
        &self.seed
    }

    pub fn g1(&self) -> G1Affine {
        self.g1
    }

    pub fn g2(&self) -> G2Affine {
        self.g2
    }

    /// `e(g1, g2)`.
    pub fn base(&self) -> Gt {
        self.base
    }

    /// Hashes a global identifier onto G1.
    pub fn hash_gid(&self, gid: &str) -> Result<G1Affine, AbeError> {
        let hasher =
            G1Hasher::new(&self.gid_dst).map_err(|e| AbeError::HashToCurve(e.to_string()))?;
        hasher
            .hash(gid.as_bytes())
            .map_err(|e| AbeError::HashToCurve(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        codec::to_canonical_vec(&ParamsWire::from(self)).expect("params serialize")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AbeError> {
        let wire: ParamsWire = codec::from_json_with_path(bytes)
            .map_err(|(path, msg)| AbeError::Malformed(format!("{path}: {msg}")))?;
        if wire.curve != CURVE_ID {
            return Err(AbeError::Malformed(format!(
                "unsupported curve {:?}",
                wire.curve
            )));
        }
        let gp = global_setup(&wire.seed);
        if gp.g1 != wire.g1 || gp.g2 != wire.g2 {
            return Err(AbeError::Malformed(
                "generators do not match the seed".into(),
            ));
        }
        Ok(gp)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsWire {
    curve: String,
    #[serde(with = "codec::b64")]
    seed: Vec<u8>,
    #[serde(with = "ark_b64")]
    g1: G1Affine,
    #[serde(with = "ark_b64")]
    g2: G2Affine,
}

impl From<&GlobalParams> for ParamsWire {
    fn from(gp: &GlobalParams) -> Self {
        ParamsWire {
            curve: CURVE_ID.into(),
            seed: gp.seed.clone(),
            g1: gp.g1,
            g2: gp.g2,
        }
    }
}

fn seed_tag(seed: &[u8]) -> String {
    hex::encode(codec::sha256(seed))
}

pub fn global_setup(seed: &[u8]) -> GlobalParams {
    let tag = seed_tag(seed);
    let gen_dst = format!("{GEN_DST_PREFIX}{tag}");
    let g1 = G1Hasher::new(gen_dst.as_bytes())
        .and_then(|h| h.hash(b"g1"))
        .expect("hash to G1 with a fixed-length DST");
    let g2 = G2Hasher::new(gen_dst.as_bytes())
        .and_then(|h| h.hash(b"g2"))
        .expect("hash to G2 with a fixed-length DST");
    GlobalParams {
        seed: seed.to_vec(),
        g1,
        g2,
        base: Bls12_381::pairing(g1, g2),
        gid_dst: format!("{GID_DST_PREFIX}{tag}").into_bytes(),
    }
}

/// HKDF-SHA256 over the canonical encoding of a target-group element.
pub fn kdf(element: &Gt) -> Dek {
    let ikm = ark_b64::encode(element).expect("GT serialize");
    let hk = Hkdf::<Sha256>::new(None, &ikm);
    let mut out = [0u8; 32];
    hk.expand(DEK_LABEL, &mut out)
        .expect("32 bytes is a valid HKDF output length");
    Dek(out)
}

#[derive(Clone, PartialEq, Eq)]
pub struct AttributeSecret {
    alpha: Scalar,
    y: Scalar,
}

impl std::fmt::Debug for AttributeSecret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("AttributeSecret(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributePublic {
    /// `e(g1,g2)^α`
    #[serde(with = "ark_b64")]
    pub e_alpha: Gt,
    /// `g2^y`
    #[serde(with = "ark_b64")]
    pub g_y: G2Affine,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthoritySecretKey {
    pub authority_id: String,
    attributes: BTreeMap<String, AttributeSecret>,
}

impl AuthoritySecretKey {
    pub fn manages(&self, attribute: &str) -> bool {
        self.attributes.contains_key(attribute)
    }

    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.attributes.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorityPublicKey {
    pub authority_id: String,
    pub attributes: BTreeMap<String, AttributePublic>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthorityKeypair {
    pub secret: AuthoritySecretKey,
    pub public: AuthorityPublicKey,
}

impl AuthorityKeypair {
    /// Adds keys for attributes not yet managed; existing ones are kept.
    pub fn extend<R: RngCore + CryptoRng>(
        &mut self,
        gp: &GlobalParams,
        attributes: &[String],
        rng: &mut R,
    ) -> Result<(), AbeError> {
        check_namespace(&self.secret.authority_id, attributes)?;
        for attr in attributes {
            if self.secret.attributes.contains_key(attr) {
                continue;
            }
            let secret = AttributeSecret {
                alpha: Scalar::rand(rng),
                y: Scalar::rand(rng),
            };
            let public = AttributePublic {
                e_alpha: gp.base * secret.alpha,
                g_y: (gp.g2 * secret.y).into_affine(),
            };
            self.secret.attributes.insert(attr.clone(), secret);
            self.public.attributes.insert(attr.clone(), public);
        }
        Ok(())
    }

    pub fn to_secret_bytes(&self) -> Vec<u8> {
        let wire = SecretWire {
            authority_id: self.secret.authority_id.clone(),
            attributes: self
                .secret
                .attributes
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        SecretEntryWire {
                            alpha: s.alpha,
                            y: s.y,
                        },
                    )
                })
                .collect(),
        };
        codec::to_canonical_vec(&wire).expect("secret serialize")
    }

    /// Restores a keypair from its secret encoding; publics are recomputed.
    pub fn from_secret_bytes(gp: &GlobalParams, bytes: &[u8]) -> Result<Self, AbeError> {
        let wire: SecretWire = codec::from_json_with_path(bytes)
            .map_err(|(path, msg)| AbeError::Malformed(format!("{path}: {msg}")))?;
        let names: Vec<String> = wire.attributes.keys().cloned().collect();
        check_namespace(&wire.authority_id, &names)?;
        let mut kp = AuthorityKeypair {
            secret: AuthoritySecretKey {
                authority_id: wire.authority_id.clone(),
                attributes: BTreeMap::new(),
            },
            public: AuthorityPublicKey {
                authority_id: wire.authority_id,
                attributes: BTreeMap::new(),
            },
        };
        for (attr, entry) in wire.attributes {
            kp.public.attributes.insert(
                attr.clone(),
                AttributePublic {
                    e_alpha: gp.base * entry.alpha,
                    g_y: (gp.g2 * entry.y).into_affine(),
                },
            );
            kp.secret.attributes.insert(
                attr,
                AttributeSecret {
                    alpha: entry.alpha,
                    y: entry.y,
                },
            );
        }
        Ok(kp)
    }
}

#[derive(Serialize, Deserialize)]
struct SecretWire {
    authority_id: String,
    attributes: BTreeMap<String, SecretEntryWire>,
}

#[derive(Serialize, Deserialize)]
struct SecretEntryWire {
    #[serde(with = "ark_b64")]
    alpha: Scalar,
    #[serde(with = "ark_b64")]
    y: Scalar,
}

fn check_namespace(authority_id: &str, attributes: &[String]) -> Result<(), AbeError> {
    for attr in attributes {
        match split_namespaced(attr) {
            Some((_, suffix)) if suffix == authority_id => {}
            _ => {
                return Err(AbeError::NamespaceMismatch {
                    attribute: attr.clone(),
                    authority: authority_id.to_string(),
                })
            }
        }
    }
    Ok(())
}

pub fn authority_setup<R: RngCore + CryptoRng>(
    gp: &GlobalParams,
    authority_id: &str,
    attributes: &[String],
    rng: &mut R,
) -> Result<AuthorityKeypair, AbeError> {
    let mut kp = AuthorityKeypair {
        secret: AuthoritySecretKey {
            authority_id: authority_id.to_string(),
            attributes: BTreeMap::new(),
        },
        public: AuthorityPublicKey {
            authority_id: authority_id.to_string(),
            attributes: BTreeMap::new(),
        },
    };
    kp.extend(gp, attributes, rng)?;
    Ok(kp)
}

/// Attribute public keys of every known authority, keyed by namespaced
/// attribute.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PublicDirectory {
    entries: BTreeMap<String, AttributePublic>,
}

impl PublicDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, key: &AuthorityPublicKey) {
        for (attr, public) in &key.attributes {
            self.entries.insert(attr.clone(), public.clone());
        }
    }

    pub fn from_keys<'a>(keys: impl IntoIterator<Item = &'a AuthorityPublicKey>) -> Self {
        let mut dir = Self::new();
        keys.into_iter().for_each(|k| dir.add(k));
        dir
    }

    pub fn get(&self, attribute: &str) -> Option<&AttributePublic> {
        self.entries.get(attribute)
    }
}

/// One authority's contribution to a reader key: `g1^α · H(gid)^y` for a
/// single attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserKeyComponent {
    pub gid: String,
    pub attribute: String,
    #[serde(with = "ark_b64")]
    pub k: G1Affine,
}

pub fn keygen(
    gp: &GlobalParams,
    secret: &AuthoritySecretKey,
    gid: &str,
    attribute: &str,
) -> Result<UserKeyComponent, AbeError> {
    if gid.is_empty() {
        return Err(AbeError::EmptyGid);
    }
    let s = secret
        .attributes
        .get(attribute)
        .ok_or_else(|| AbeError::UnknownAttribute(attribute.to_string()))?;
    let h = gp.hash_gid(gid)?;
    let k = gp.g1 * s.alpha + h * s.y;
    Ok(UserKeyComponent {
        gid: gid.to_string(),
        attribute: attribute.to_string(),
        k: k.into_affine(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CiphertextRow {
    pub c1: Gt,
    pub c2: G2Affine,
    pub c3: G2Affine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CiphertextWire", into = "CiphertextWire")]
pub struct AbeCiphertext {
    pub matrix: LsssMatrix<Scalar>,
    pub rows: Vec<CiphertextRow>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CiphertextWire {
    matrix: MatrixWire,
    components: Vec<RowWire>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixWire {
    rho: Vec<String>,
    rows: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RowWire {
    #[serde(with = "ark_b64")]
    c1: Gt,
    #[serde(with = "ark_b64")]
    c2: G2Affine,
    #[serde(with = "ark_b64")]
    c3: G2Affine,
}

impl From<AbeCiphertext> for CiphertextWire {
    fn from(ct: AbeCiphertext) -> Self {
        CiphertextWire {
            matrix: MatrixWire {
                rho: ct.matrix.rho().to_vec(),
                rows: ct
                    .matrix
                    .rows()
                    .iter()
                    .map(|r| r.iter().map(lsss::field_to_decimal).collect())
                    .collect(),
            },
            components: ct
                .rows
                .into_iter()
                .map(|r| RowWire {
                    c1: r.c1,
                    c2: r.c2,
                    c3: r.c3,
                })
                .collect(),
        }
    }
}

impl TryFrom<CiphertextWire> for AbeCiphertext {
    type Error = String;

    fn try_from(w: CiphertextWire) -> Result<Self, String> {
        let rows = w
            .matrix
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .map(|d| {
                        lsss::field_from_decimal(d)
                            .ok_or_else(|| format!("matrix row {i}: bad field element {d:?}"))
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let matrix = LsssMatrix::from_parts(rows, w.matrix.rho).map_err(|e| e.to_string())?;
        if w.components.len() != matrix.len() {
            return Err(format!(
                "{} ciphertext components for {} matrix rows",
                w.components.len(),
                matrix.len()
            ));
        }
        Ok(AbeCiphertext {
            matrix,
            rows: w
                .components
                .into_iter()
                .map(|r| CiphertextRow {
                    c1: r.c1,
                    c2: r.c2,
                    c3: r.c3,
                })
                .collect(),
        })
    }
}

/// Exponents drawn during one encryption.
#[derive(Debug, Clone)]
pub(crate) struct EncryptionRandomness {
    pub s: Scalar,
    pub v_tail: Vec<Scalar>,
    pub w_tail: Vec<Scalar>,
    pub r: Vec<Scalar>,
}

impl EncryptionRandomness {
    fn sample<R: RngCore + CryptoRng>(width: usize, rows: usize, rng: &mut R) -> Self {
        let s = Scalar::rand(rng);
        let v_tail = (1..width).map(|_| Scalar::rand(rng)).collect();
        let w_tail = (1..width).map(|_| Scalar::rand(rng)).collect();
        let r = (0..rows).map(|_| Scalar::rand(rng)).collect();
        EncryptionRandomness {
            s,
            v_tail,
            w_tail,
            r,
        }
    }

    pub(crate) fn v(&self) -> Vec<Scalar> {
        std::iter::once(self.s)
            .chain(self.v_tail.iter().copied())
            .collect()
    }

    pub(crate) fn w(&self) -> Vec<Scalar> {
        std::iter::once(Scalar::from(0u64))
            .chain(self.w_tail.iter().copied())
            .collect()
    }
}

/// Encapsulates a fresh data-encryption key under the access structure `m`.
/// Only the authorities' published keys are needed.
pub fn encrypt<R: RngCore + CryptoRng>(
    gp: &GlobalParams,
    publics: &PublicDirectory,
    m: LsssMatrix<Scalar>,
    rng: &mut R,
) -> Result<(AbeCiphertext, Dek), AbeError> {
    // Check before drawing randomness so a failed call leaves the rng untouched.
    lookup_publics(publics, &m)?;
    let rand = EncryptionRandomness::sample(m.width(), m.len(), rng);
    encrypt_with(gp, publics, m, &rand)
}

fn lookup_publics<'a>(
    publics: &'a PublicDirectory,
    m: &LsssMatrix<Scalar>,
) -> Result<Vec<&'a AttributePublic>, AbeError> {
    m.rho()
        .iter()
        .map(|attr| {
            publics
                .get(attr)
                .ok_or_else(|| AbeError::MissingAuthorityPublic(attr.clone()))
        })
        .collect()
}

pub(crate) fn encrypt_with(
    gp: &GlobalParams,
    publics: &PublicDirectory,
    m: LsssMatrix<Scalar>,
    rand: &EncryptionRandomness,
) -> Result<(AbeCiphertext, Dek), AbeError> {
    let keys = lookup_publics(publics, &m)?;
    let lambda = lsss::share_with_vector(&m, &rand.v());
    let omega = lsss::share_with_vector(&m, &rand.w());
    let g2 = gp.g2.into_group();
    let rows = (0..m.len())
        .map(|x| {
            let pk = keys[x];
            let r = rand.r[x];
            CiphertextRow {
                c1: gp.base * lambda[x] + pk.e_alpha * r,
                c2: (g2 * r).into_affine(),
                c3: (pk.g_y * r + g2 * omega[x]).into_affine(),
            }
        })
        .collect();
    let dek = kdf(&(gp.base * rand.s));
    Ok((AbeCiphertext { matrix: m, rows }, dek))
}

/// `C1_x · e(H(gid), C3_x) / e(K, C2_x)` for a single row.
pub fn row_share(h_gid: &G1Affine, k: &G1Affine, row: &CiphertextRow) -> Gt {
    row.c1 + Bls12_381::pairing(*h_gid, row.c3) - Bls12_381::pairing(*k, row.c2)
}

/// Merges key components and recovers the data-encryption key.
///
/// Components must all carry `gid`. Returns [`AbeError::Unqualified`] when
/// their attributes do not satisfy the ciphertext's access structure.
pub fn decrypt<'a>(
    gp: &GlobalParams,
    gid: &str,
    components: impl IntoIterator<Item = &'a UserKeyComponent>,
    ct: &AbeCiphertext,
) -> Result<Dek, AbeError> {
    if gid.is_empty() {
        return Err(AbeError::EmptyGid);
    }
    let mut by_attr: BTreeMap<&str, &UserKeyComponent> = BTreeMap::new();
    for c in components {
        if c.gid != gid {
            return Err(AbeError::MixedGid);
        }
        by_attr.entry(c.attribute.as_str()).or_insert(c);
    }
    if ct.rows.len() != ct.matrix.len() {
        return Err(AbeError::Malformed("row count mismatch".into()));
    }
    let owned: BTreeSet<String> = by_attr.keys().map(|a| a.to_string()).collect();
    let plan =
        lsss::reconstruction_coefficients(&ct.matrix, &owned).ok_or(AbeError::Unqualified)?;
    let h = gp.hash_gid(gid)?;

    // Π share_x^{c_x}, with the G2 and pairing work batched:
    // Σ c_x·C1_x + e(H, Σ c_x·C3_x) − Π e(c_x·K_ρ(x), C2_x)
    let mut acc = Gt::zero();
    let mut c3_sum = G2Projective::zero();
    let mut k_scaled = Vec::with_capacity(plan.coefficients.len());
    let mut c2s = Vec::with_capacity(plan.coefficients.len());
    for (&x, &c) in &plan.coefficients {
        let row = &ct.rows[x];
        let key = by_attr[ct.matrix.rho()[x].as_str()];
        acc += row.c1 * c;
        c3_sum += row.c3 * c;
        k_scaled.push((key.k * c).into_affine());
        c2s.push(row.c2);
    }
    acc += Bls12_381::pairing(h, c3_sum.into_affine());
    acc -= Bls12_381::multi_pairing(k_scaled, c2s);
    Ok(kdf(&acc))
}
