//! JSON document for persisting a prototype store across sessions.

use std::fs;
use std::path::Path;

use protofix_core::{Budget, ClassId, ClassLabel, EntryParts, PrototypeStore, Source, StoreParts};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STORE_DOC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreDocument {
    pub version: u32,
    pub dim: usize,
    /// `null` means unlimited.
    pub budget: Option<usize>,
    pub protect_server: bool,
    pub clock: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_proto_id: Option<u64>,
    #[serde(default)]
    pub classes: Vec<ClassLabel>,
    pub entries: Vec<EntryDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryDocument {
    pub proto_id: u64,
    pub class_id: u32,
    pub class_name: String,
    pub source: Source,
    pub created_seq: u64,
    pub last_used_seq: u64,
    pub vector: Vec<f64>,
}

impl StoreDocument {
    pub fn from_store(store: &PrototypeStore) -> Self {
        let parts = store.to_parts();
        Self {
            version: STORE_DOC_VERSION,
            dim: parts.dim,
            budget: parts.budget.limit(),
            protect_server: parts.protect_server,
            clock: parts.clock,
            next_proto_id: Some(parts.next_proto_id),
            classes: parts.classes,
            entries: parts
                .entries
                .into_iter()
                .map(|e| EntryDocument {
                    proto_id: e.proto_id,
                    class_id: e.class.id.0,
                    class_name: e.class.name,
                    source: e.source,
                    created_seq: e.created_seq,
                    last_used_seq: e.last_used_seq,
                    vector: e.vector.into_inner(),
                })
                .collect(),
        }
    }

    pub fn into_store(self) -> Result<PrototypeStore> {
        if self.version != STORE_DOC_VERSION {
            return Err(Error::format(format!("unsupported store document version {}", self.version)));
        }
        let entries = self
            .entries
            .into_iter()
            .map(|e| {
                Ok(EntryParts {
                    proto_id: e.proto_id,
                    class: ClassLabel {
                        id: ClassId(e.class_id),
                        name: e.class_name,
                    },
                    source: e.source,
                    created_seq: e.created_seq,
                    last_used_seq: e.last_used_seq,
                    vector: protofix_core::EmbeddingVector::new(e.vector)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let parts = StoreParts {
            dim: self.dim,
            budget: self.budget.map_or(Budget::Unlimited, Budget::Limited),
            protect_server: self.protect_server,
            clock: self.clock,
            next_proto_id: self.next_proto_id.unwrap_or(0),
            classes: self.classes,
            entries,
        };
        PrototypeStore::from_parts(parts).map_err(|e| match e {
            protofix_core::Error::DimensionMismatch { .. } | protofix_core::Error::ZeroVector => Error::Core(e),
            other => Error::format(other.to_string()),
        })
    }
}

pub fn store_to_json(store: &PrototypeStore) -> String {
    serde_json::to_string_pretty(&StoreDocument::from_store(store)).expect("store document serializes")
}

pub fn store_from_json(text: &str) -> Result<PrototypeStore> {
    let doc: StoreDocument = serde_json::from_str(text).map_err(|e| Error::format(e.to_string()))?;
    doc.into_store()
}

pub fn export_store(store: &PrototypeStore, path: &Path) -> Result<()> {
    fs::write(path, store_to_json(store)).map_err(|e| Error::io(path, e))
}

pub fn import_store(path: &Path) -> Result<PrototypeStore> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    store_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use protofix_core::{EmbeddingVector, StoreConfig};

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn empty_store_round_trip() {
        let s = PrototypeStore::new(StoreConfig::new(4)).unwrap();
        assert_eq!(store_from_json(&store_to_json(&s)).unwrap(), s);
    }

    #[test]
    fn document_shape() {
        let mut s = PrototypeStore::new(StoreConfig { dim: 2, budget: Budget::Limited(5), protect_server: true }).unwrap();
        s.insert(&ClassLabel::new(0, "apple"), ev(&[0.1, 0.7]), Source::Server).unwrap();
        let v: serde_json::Value = serde_json::from_str(&store_to_json(&s)).unwrap();
        assert_eq!(v["version"], 1);
        assert_eq!(v["budget"], 5);
        assert_eq!(v["protect_server"], true);
        let e = &v["entries"][0];
        assert_eq!(e["class_name"], "apple");
        assert_eq!(e["source"], "server");
        assert_eq!(e["vector"][0].as_f64(), Some(0.1));
    }

    #[test]
    fn wrong_version_rejected() {
        let s = PrototypeStore::new(StoreConfig::new(2)).unwrap();
        let text = store_to_json(&s).replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(store_from_json(&text), Err(Error::Format(_))));
        assert!(matches!(store_from_json("{"), Err(Error::Format(_))));
    }

    #[test]
    fn vector_length_mismatch_rejected() {
        let mut s = PrototypeStore::new(StoreConfig::new(2)).unwrap();
        s.insert(&ClassLabel::new(0, "a"), ev(&[1.0, 0.0]), Source::Server).unwrap();
        let mut doc = StoreDocument::from_store(&s);
        doc.entries[0].vector.push(1.0);
        assert!(matches!(
            doc.into_store(),
            Err(Error::Core(protofix_core::Error::DimensionMismatch { .. }))
        ));
    }
}
