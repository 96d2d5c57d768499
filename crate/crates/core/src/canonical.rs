//! Canonical record encoding.
//!
//! Every hashed or signed artifact (transactions, blocks, world state, read
//! requests) goes through this encoder. The output is UTF-8 JSON text with:
//!
//! - object keys sorted by their UTF-8 bytes, duplicates rejected
//! - no insignificant whitespace
//! - byte strings as lowercase hex strings
//! - integers only; floating point values are an encoding error
//! - `\"`, `\\` and the control characters escaped exactly as `serde_json`
//!   escapes them, everything else emitted verbatim
//!
//! The encoder is a standalone [`serde::Serializer`]; it does not go through
//! `serde_json`. Decoding reuses `serde_json` and then re-encodes, rejecting
//! any input that is not byte-identical to its canonical form.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::ser::{self, Serialize};

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum CanonicalError {
    #[error("value cannot be canonically encoded: {0}")]
    Unsupported(String),
    #[error("duplicate key {0:?} in record")]
    DuplicateKey(String),
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("record is not in canonical form")]
    NonCanonical,
}

impl ser::Error for CanonicalError {
    fn custom<T: std::fmt::Display>(msg: T) -> Self {
        CanonicalError::Unsupported(msg.to_string())
    }
}

/// Encodes `value` into its canonical byte form.
pub fn to_canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    let mut out = Vec::with_capacity(128);
    value.serialize(Encoder { out: &mut out })?;
    Ok(out)
}

/// Canonical form as a `String`; the encoding is always valid UTF-8.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, CanonicalError> {
    let bytes = to_canonical_bytes(value)?;
    Ok(String::from_utf8(bytes).expect("canonical encoder emits UTF-8"))
}

/// Decodes a record and insists that the input was already canonical.
///
/// Any byte-level variation that would still parse (upper-case hex, extra
/// whitespace, reordered keys, unknown fields, alternative escapes) is
/// rejected with [`CanonicalError::NonCanonical`].
pub fn from_canonical_slice<T: Serialize + DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonicalError> {
    let value: T = serde_json::from_slice(bytes).map_err(|e| CanonicalError::Malformed(e.to_string()))?;
    let again = to_canonical_bytes(&value)?;
    if again != bytes {
        return Err(CanonicalError::NonCanonical);
    }
    Ok(value)
}

fn write_escaped(out: &mut Vec<u8>, s: &str) {
    const HEX: &[u8; 16] = b"0123456789abcdef";
    out.push(b'"');
    let bytes = s.as_bytes();
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        let esc: &[u8] = match b {
            b'"' => b"\\\"",
            b'\\' => b"\\\\",
            b'\n' => b"\\n",
            b'\r' => b"\\r",
            b'\t' => b"\\t",
            0x08 => b"\\b",
            0x0c => b"\\f",
            0x00..=0x1f => {
                out.extend_from_slice(&bytes[start..i]);
                out.extend_from_slice(b"\\u00");
                out.push(HEX[(b >> 4) as usize]);
                out.push(HEX[(b & 0xf) as usize]);
                start = i + 1;
                continue;
            }
            _ => continue,
        };
        out.extend_from_slice(&bytes[start..i]);
        out.extend_from_slice(esc);
        start = i + 1;
    }
    out.extend_from_slice(&bytes[start..]);
    out.push(b'"');
}

fn write_hex(out: &mut Vec<u8>, bytes: &[u8]) {
    out.push(b'"');
    out.extend_from_slice(hex::encode(bytes).as_bytes());
    out.push(b'"');
}

struct Encoder<'a> {
    out: &'a mut Vec<u8>,
}

fn unsupported<T>(what: &str) -> Result<T, CanonicalError> {
    Err(CanonicalError::Unsupported(what.to_string()))
}

impl<'a> ser::Serializer for Encoder<'a> {
    type Ok = ();
    type Error = CanonicalError;
    type SerializeSeq = SeqEncoder<'a>;
    type SerializeTuple = SeqEncoder<'a>;
    type SerializeTupleStruct = SeqEncoder<'a>;
    type SerializeTupleVariant = VariantSeqEncoder<'a>;
    type SerializeMap = MapEncoder<'a>;
    type SerializeStruct = MapEncoder<'a>;
    type SerializeStructVariant = VariantMapEncoder<'a>;

    fn serialize_bool(self, v: bool) -> Result<(), CanonicalError> {
        self.out.extend_from_slice(if v { b"true" } else { b"false" });
        Ok(())
    }
    fn serialize_i8(self, v: i8) -> Result<(), CanonicalError> {
        self.serialize_i64(v.into())
    }
    fn serialize_i16(self, v: i16) -> Result<(), CanonicalError> {
        self.serialize_i64(v.into())
    }
    fn serialize_i32(self, v: i32) -> Result<(), CanonicalError> {
        self.serialize_i64(v.into())
    }
    fn serialize_i64(self, v: i64) -> Result<(), CanonicalError> {
        self.out.extend_from_slice(v.to_string().as_bytes());
        Ok(())
    }
    fn serialize_u8(self, v: u8) -> Result<(), CanonicalError> {
        self.serialize_u64(v.into())
    }
    fn serialize_u16(self, v: u16) -> Result<(), CanonicalError> {
        self.serialize_u64(v.into())
    }
    fn serialize_u32(self, v: u32) -> Result<(), CanonicalError> {
        self.serialize_u64(v.into())
    }
    fn serialize_u64(self, v: u64) -> Result<(), CanonicalError> {
        self.out.extend_from_slice(v.to_string().as_bytes());
        Ok(())
    }
    fn serialize_f32(self, _v: f32) -> Result<(), CanonicalError> {
        unsupported("floating point")
    }
    fn serialize_f64(self, _v: f64) -> Result<(), CanonicalError> {
        unsupported("floating point")
    }
    fn serialize_char(self, v: char) -> Result<(), CanonicalError> {
        let mut buf = [0u8; 4];
        write_escaped(self.out, v.encode_utf8(&mut buf));
        Ok(())
    }
    fn serialize_str(self, v: &str) -> Result<(), CanonicalError> {
        write_escaped(self.out, v);
        Ok(())
    }
    fn serialize_bytes(self, v: &[u8]) -> Result<(), CanonicalError> {
        write_hex(self.out, v);
        Ok(())
    }
    fn serialize_none(self) -> Result<(), CanonicalError> {
        self.serialize_unit()
    }
    fn serialize_some<T: Serialize + ?Sized>(self, value: &T) -> Result<(), CanonicalError> {
        value.serialize(self)
    }
    fn serialize_unit(self) -> Result<(), CanonicalError> {
        self.out.extend_from_slice(b"null");
        Ok(())
    }
    fn serialize_unit_struct(self, _name: &'static str) -> Result<(), CanonicalError> {
        self.serialize_unit()
    }
    fn serialize_unit_variant(
        self,
        _name: &'static str,
        _index: u32,
        variant: &'static str,
    ) -> Result<(), CanonicalError> {
        self.serialize_str(variant)
    }
    fn serialize_newtype_struct<T: Serialize + ?Sized>(
        self,
        _name: &'static str,
        value: &T,
    ) -> Result<(), CanonicalError> {
        value.serialize(self)
    }
    fn serialize_newtype_variant<T: Serialize + ?Sized>(
        self,
        _name: &'static str,
        _index: u32,
        variant: &'static str,
        value: &T,
    ) -> Result<(), CanonicalError> {
        self.out.push(b'{');
        write_escaped(self.out, variant);
        self.out.push(b':');
        value.serialize(Encoder { out: self.out })?;
        self.out.push(b'}');
        Ok(())
    }
    fn serialize_seq(self, _len: Option<usize>) -> Result<SeqEncoder<'a>, CanonicalError> {
        self.out.push(b'[');
        Ok(SeqEncoder { out: self.out, first: true })
    }
    fn serialize_tuple(self, len: usize) -> Result<SeqEncoder<'a>, CanonicalError> {
        self.serialize_seq(Some(len))
    }
    fn serialize_tuple_struct(self, _name: &'static str, len: usize) -> Result<SeqEncoder<'a>, CanonicalError> {
        self.serialize_seq(Some(len))
    }
    fn serialize_tuple_variant(
        self,
        _name: &'static str,
        _index: u32,
        variant: &'static str,
        _len: usize,
    ) -> Result<VariantSeqEncoder<'a>, CanonicalError> {
        self.out.push(b'{');
        write_escaped(self.out, variant);
        self.out.extend_from_slice(b":[");
        Ok(VariantSeqEncoder { inner: SeqEncoder { out: self.out, first: true } })
    }
    fn serialize_map(self, _len: Option<usize>) -> Result<MapEncoder<'a>, CanonicalError> {
        Ok(MapEncoder { out: self.out, entries: BTreeMap::new(), pending_key: None })
    }
    fn serialize_struct(self, _name: &'static str, len: usize) -> Result<MapEncoder<'a>, CanonicalError> {
        self.serialize_map(Some(len))
    }
    fn serialize_struct_variant(
        self,
        _name: &'static str,
        _index: u32,
        variant: &'static str,
        _len: usize,
    ) -> Result<VariantMapEncoder<'a>, CanonicalError> {
        Ok(VariantMapEncoder {
            variant,
            inner: MapEncoder { out: self.out, entries: BTreeMap::new(), pending_key: None },
        })
    }
}

struct SeqEncoder<'a> {
    out: &'a mut Vec<u8>,
    first: bool,
}

impl SeqEncoder<'_> {
    fn element<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), CanonicalError> {
        if !self.first {
            self.out.push(b',');
        }
        self.first = false;
        value.serialize(Encoder { out: self.out })
    }
}

impl ser::SerializeSeq for SeqEncoder<'_> {
    type Ok = ();
    type Error = CanonicalError;
    fn serialize_element<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), CanonicalError> {
        self.element(value)
    }
    fn end(self) -> Result<(), CanonicalError> {
        self.out.push(b']');
        Ok(())
    }
}

impl ser::SerializeTuple for SeqEncoder<'_> {
    type Ok = ();
    type Error = CanonicalError;
    fn serialize_element<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), CanonicalError> {
        self.element(value)
    }
    fn end(self) -> Result<(), CanonicalError> {
        self.out.push(b']');
        Ok(())
    }
}

impl ser::SerializeTupleStruct for SeqEncoder<'_> {
    type Ok = ();
    type Error = CanonicalError;
    fn serialize_field<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), CanonicalError> {
        self.element(value)
    }
    fn end(self) -> Result<(), CanonicalError> {
        self.out.push(b']');
        Ok(())
    }
}

struct VariantSeqEncoder<'a> {
    inner: SeqEncoder<'a>,
}

impl ser::SerializeTupleVariant for VariantSeqEncoder<'_> {
    type Ok = ();
    type Error = CanonicalError;
    fn serialize_field<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), CanonicalError> {
        self.inner.element(value)
    }
    fn end(self) -> Result<(), CanonicalError> {
        self.inner.out.extend_from_slice(b"]}");
        Ok(())
    }
}

/// Buffers encoded entries so they can be emitted in key order.
struct MapEncoder<'a> {
    out: &'a mut Vec<u8>,
    entries: BTreeMap<String, Vec<u8>>,
    pending_key: Option<String>,
}

impl MapEncoder<'_> {
    fn insert<T: Serialize + ?Sized>(&mut self, key: String, value: &T) -> Result<(), CanonicalError> {
        let mut buf = Vec::new();
        value.serialize(Encoder { out: &mut buf })?;
        if self.entries.insert(key.clone(), buf).is_some() {
            return Err(CanonicalError::DuplicateKey(key));
        }
        Ok(())
    }

    fn finish(&mut self) {
        self.out.push(b'{');
        for (i, (k, v)) in self.entries.iter().enumerate() {
            if i > 0 {
                self.out.push(b',');
            }
            write_escaped(self.out, k);
            self.out.push(b':');
            self.out.extend_from_slice(v);
        }
        self.out.push(b'}');
    }
}

impl ser::SerializeMap for MapEncoder<'_> {
    type Ok = ();
    type Error = CanonicalError;
    fn serialize_key<T: Serialize + ?Sized>(&mut self, key: &T) -> Result<(), CanonicalError> {
        self.pending_key = Some(key.serialize(KeyEncoder)?);
        Ok(())
    }
    fn serialize_value<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), CanonicalError> {
        let key = self.pending_key.take().ok_or_else(|| CanonicalError::Unsupported("map value without key".into()))?;
        self.insert(key, value)
    }
    fn end(mut self) -> Result<(), CanonicalError> {
        self.finish();
        Ok(())
    }
}

impl ser::SerializeStruct for MapEncoder<'_> {
    type Ok = ();
    type Error = CanonicalError;
    fn serialize_field<T: Serialize + ?Sized>(&mut self, key: &'static str, value: &T) -> Result<(), CanonicalError> {
        self.insert(key.to_string(), value)
    }
    fn end(mut self) -> Result<(), CanonicalError> {
        self.finish();
        Ok(())
    }
}

struct VariantMapEncoder<'a> {
    variant: &'static str,
    inner: MapEncoder<'a>,
}

impl ser::SerializeStructVariant for VariantMapEncoder<'_> {
    type Ok = ();
    type Error = CanonicalError;
    fn serialize_field<T: Serialize + ?Sized>(&mut self, key: &'static str, value: &T) -> Result<(), CanonicalError> {
        self.inner.insert(key.to_string(), value)
    }
    fn end(self) -> Result<(), CanonicalError> {
        let mut inner = self.inner;
        inner.out.push(b'{');
        write_escaped(inner.out, self.variant);
        inner.out.push(b':');
        inner.finish();
        inner.out.push(b'}');
        Ok(())
    }
}

/// Map keys must be strings; integer keys become their decimal text.
struct KeyEncoder;

impl ser::Serializer for KeyEncoder {
    type Ok = String;
    type Error = CanonicalError;
    type SerializeSeq = ser::Impossible<String, CanonicalError>;
    type SerializeTuple = ser::Impossible<String, CanonicalError>;
    type SerializeTupleStruct = ser::Impossible<String, CanonicalError>;
    type SerializeTupleVariant = ser::Impossible<String, CanonicalError>;
    type SerializeMap = ser::Impossible<String, CanonicalError>;
    type SerializeStruct = ser::Impossible<String, CanonicalError>;
    type SerializeStructVariant = ser::Impossible<String, CanonicalError>;

    fn serialize_str(self, v: &str) -> Result<String, CanonicalError> {
        Ok(v.to_string())
    }
    fn serialize_char(self, v: char) -> Result<String, CanonicalError> {
        Ok(v.to_string())
    }
    fn serialize_bytes(self, v: &[u8]) -> Result<String, CanonicalError> {
        Ok(hex::encode(v))
    }
    fn serialize_i8(self, v: i8) -> Result<String, CanonicalError> {
        Ok(v.to_string())
    }
    fn serialize_i16(self, v: i16) -> Result<String, CanonicalError> {
        Ok(v.to_string())
    }
    fn serialize_i32(self, v: i32) -> Result<String, CanonicalError> {
        Ok(v.to_string())
    }
    fn serialize_i64(self, v: i64) -> Result<String, CanonicalError> {
        Ok(v.to_string())
    }
    fn serialize_u8(self, v: u8) -> Result<String, CanonicalError> {
        Ok(v.to_string())
    }
    fn serialize_u16(self, v: u16) -> Result<String, CanonicalError> {
        Ok(v.to_string())
    }
    fn serialize_u32(self, v: u32) -> Result<String, CanonicalError> {
        Ok(v.to_string())
    }
    fn serialize_u64(self, v: u64) -> Result<String, CanonicalError> {
        Ok(v.to_string())
    }
    fn serialize_newtype_struct<T: Serialize + ?Sized>(
        self,
        _name: &'static str,
        value: &T,
    ) -> Result<String, CanonicalError> {
        value.serialize(self)
    }
    fn serialize_unit_variant(
        self,
        _name: &'static str,
        _index: u32,
        variant: &'static str,
    ) -> Result<String, CanonicalError> {
        Ok(variant.to_string())
    }
    fn serialize_bool(self, _v: bool) -> Result<String, CanonicalError> {
        unsupported("non-string map key")
    }
    fn serialize_f32(self, _v: f32) -> Result<String, CanonicalError> {
        unsupported("non-string map key")
    }
    fn serialize_f64(self, _v: f64) -> Result<String, CanonicalError> {
        unsupported("non-string map key")
    }
    fn serialize_none(self) -> Result<String, CanonicalError> {
        unsupported("non-string map key")
    }
    fn serialize_some<T: Serialize + ?Sized>(self, _value: &T) -> Result<String, CanonicalError> {
        unsupported("non-string map key")
    }
    fn serialize_unit(self) -> Result<String, CanonicalError> {
        unsupported("non-string map key")
    }
    fn serialize_unit_struct(self, _name: &'static str) -> Result<String, CanonicalError> {
        unsupported("non-string map key")
    }
    fn serialize_newtype_variant<T: Serialize + ?Sized>(
        self,
        _name: &'static str,
        _index: u32,
        _variant: &'static str,
        _value: &T,
    ) -> Result<String, CanonicalError> {
        unsupported("non-string map key")
    }
    fn serialize_seq(self, _len: Option<usize>) -> Result<Self::SerializeSeq, CanonicalError> {
        unsupported("non-string map key")
    }
    fn serialize_tuple(self, _len: usize) -> Result<Self::SerializeTuple, CanonicalError> {
        unsupported("non-string map key")
    }
    fn serialize_tuple_struct(
        self,
        _name: &'static str,
        _len: usize,
    ) -> Result<Self::SerializeTupleStruct, CanonicalError> {
        unsupported("non-string map key")
    }
    fn serialize_tuple_variant(
        self,
        _name: &'static str,
        _index: u32,
        _variant: &'static str,
        _len: usize,
    ) -> Result<Self::SerializeTupleVariant, CanonicalError> {
        unsupported("non-string map key")
    }
    fn serialize_map(self, _len: Option<usize>) -> Result<Self::SerializeMap, CanonicalError> {
        unsupported("non-string map key")
    }
    fn serialize_struct(self, _name: &'static str, _len: usize) -> Result<Self::SerializeStruct, CanonicalError> {
        unsupported("non-string map key")
    }
    fn serialize_struct_variant(
        self,
        _name: &'static str,
        _index: u32,
        _variant: &'static str,
        _len: usize,
    ) -> Result<Self::SerializeStructVariant, CanonicalError> {
        unsupported("non-string map key")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::{Deserialize, Serialize};
    use std::collections::HashMap;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct Rec {
        zeta: u64,
        alpha: String,
        mid: Option<i64>,
    }

    #[test]
    fn struct_keys_are_sorted() {
        let r = Rec { zeta: 7, alpha: "a\"b\n".into(), mid: None };
        assert_eq!(to_canonical_string(&r).unwrap(), r#"{"alpha":"a\"b\n","mid":null,"zeta":7}"#);
    }

    #[test]
    fn map_insertion_order_is_irrelevant() {
        let mut a = HashMap::new();
        let mut b = HashMap::new();
        for k in ["x", "b", "q", "a"] {
            a.insert(k.to_string(), 1u8);
        }
        for k in ["a", "q", "b", "x"] {
            b.insert(k.to_string(), 1u8);
        }
        assert_eq!(to_canonical_bytes(&a).unwrap(), to_canonical_bytes(&b).unwrap());
        assert_eq!(to_canonical_string(&a).unwrap(), r#"{"a":1,"b":1,"q":1,"x":1}"#);
    }

    #[test]
    fn control_characters_use_short_unicode_escapes() {
        assert_eq!(to_canonical_string("\u{1}\u{1f}\u{7f}é").unwrap(), "\"\\u0001\\u001f\u{7f}é\"");
    }

    #[test]
    fn floats_are_rejected() {
        assert!(matches!(to_canonical_bytes(&1.5f64), Err(CanonicalError::Unsupported(_))));
    }

    #[test]
    fn bytes_render_as_lowercase_hex() {
        let b = serde_bytes_like(&[0xAB, 0x01]);
        assert_eq!(to_canonical_string(&b).unwrap(), "\"ab01\"");
    }

    struct Raw<'a>(&'a [u8]);
    impl Serialize for Raw<'_> {
        fn serialize<S: ser::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            s.serialize_bytes(self.0)
        }
    }
    fn serde_bytes_like(b: &[u8]) -> Raw<'_> {
        Raw(b)
    }

    #[test]
    fn decode_rejects_non_canonical_input() {
        let good = br#"{"alpha":"x","mid":3,"zeta":1}"#;
        let rec: Rec = from_canonical_slice(good).unwrap();
        assert_eq!(rec.mid, Some(3));
        let spaced = br#"{"alpha":"x", "mid":3,"zeta":1}"#;
        assert_eq!(from_canonical_slice::<Rec>(spaced), Err(CanonicalError::NonCanonical));
        let reordered = br#"{"mid":3,"alpha":"x","zeta":1}"#;
        assert_eq!(from_canonical_slice::<Rec>(reordered), Err(CanonicalError::NonCanonical));
        let escaped = br#"{"alpha":"\u0078","mid":3,"zeta":1}"#;
        assert_eq!(from_canonical_slice::<Rec>(escaped), Err(CanonicalError::NonCanonical));
    }

    #[derive(Serialize)]
    enum Shape {
        Unit,
        Pair(u8, u8),
        Named { b: u8, a: u8 },
        Wrapped(u8),
    }

    #[test]
    fn enum_forms_match_externally_tagged_json() {
        for s in [Shape::Unit, Shape::Pair(1, 2), Shape::Named { b: 2, a: 1 }, Shape::Wrapped(9)] {
            let ours = to_canonical_string(&s).unwrap();
            let theirs = serde_json::to_string(&serde_json::to_value(&s).unwrap()).unwrap();
            assert_eq!(ours, theirs);
        }
    }
}
