//! Canonical JSON and binary field encodings shared by every on-disk and
//! on-wire format.
//!
//! Canonical JSON: object keys sorted bytewise, no insignificant whitespace,
//! binary fields as unpadded base64url, integers in decimal.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Serializes `value` as canonical JSON.
///
/// Going through `serde_json::Value` sorts object keys, since its map type
/// is ordered by key.
pub fn to_canonical_vec<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    serde_json::to_vec(&v)
}

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

/// Deserializes JSON, reporting the path of the offending field on error.
pub fn from_json_with_path<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, (String, String)> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        (path, e.into_inner().to_string())
    })
}

pub fn b64_encode(bytes: &[u8]) -> String {
    URL_SAFE_NO_PAD.encode(bytes)
}

pub fn b64_decode(text: &str) -> Result<Vec<u8>, base64::DecodeError> {
    URL_SAFE_NO_PAD.decode(text)
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Serde adapter for byte vectors and fixed-size byte arrays as base64url.
pub mod b64 {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<T: AsRef<[u8]>, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::b64_encode(v.as_ref()))
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: TryFrom<Vec<u8>>,
        D: Deserializer<'de>,
    {
        let text = String::deserialize(d)?;
        let bytes = super::b64_decode(&text).map_err(D::Error::custom)?;
        let len = bytes.len();
        T::try_from(bytes).map_err(|_| D::Error::custom(format!("unexpected length {len}")))
    }
}

/// Serde adapter for arkworks group and field elements: compressed canonical
/// encoding, base64url. Decoding validates the point and rejects trailing
/// bytes.
pub mod ark_b64 {
    use ark_serialize::{CanonicalDeserialize, CanonicalSerialize};
    use serde::de::Error as _;
    use serde::ser::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn encode<T: CanonicalSerialize>(
        v: &T,
    ) -> Result<Vec<u8>, ark_serialize::SerializationError> {
        let mut buf = Vec::with_capacity(v.compressed_size());
        v.serialize_compressed(&mut buf)?;
        Ok(buf)
    }

    pub fn decode<T: CanonicalDeserialize>(bytes: &[u8]) -> Result<T, String> {
        let mut reader = bytes;
        let v = T::deserialize_compressed(&mut reader).map_err(|e| e.to_string())?;
        if !reader.is_empty() {
            return Err(format!("{} trailing bytes", reader.len()));
        }
        Ok(v)
    }

    pub fn serialize<T: CanonicalSerialize, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        let bytes = encode(v).map_err(S::Error::custom)?;
        s.serialize_str(&super::b64_encode(&bytes))
    }

    pub fn deserialize<'de, T: CanonicalDeserialize, D: Deserializer<'de>>(
        d: D,
    ) -> Result<T, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = super::b64_decode(&text).map_err(D::Error::custom)?;
        decode(&bytes).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct Sample {
        zeta: u32,
        alpha: String,
        #[serde(with = "b64")]
        mid: Vec<u8>,
    }

    #[test]
    fn keys_sorted_without_whitespace() {
        let s = Sample {
            zeta: 7,
            alpha: "x".into(),
            mid: vec![0xfb, 0xff],
        };
        assert_eq!(
            to_canonical_string(&s).unwrap(),
            r#"{"alpha":"x","mid":"-_8","zeta":7}"#
        );
    }

    #[test]
    fn error_path_is_reported() {
        let err =
            from_json_with_path::<Sample>(br#"{"alpha":"x","mid":"!!","zeta":1}"#).unwrap_err();
        assert_eq!(err.0, "mid");
    }

    #[test]
    fn padded_base64_is_rejected() {
        assert!(b64_decode("-_8=").is_err());
        assert_eq!(b64_decode("-_8").unwrap(), vec![0xfb, 0xff]);
    }
}
