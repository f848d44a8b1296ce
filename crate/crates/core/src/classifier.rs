//! Nearest-prototype classification under cosine distance.
//!
//! The predicted class is the class of the single globally nearest prototype.
//! Ranked alternatives use each class's closest prototype.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::store::PrototypeStore;
use crate::vector::{ClassLabel, EmbeddingVector};

/// Number of ranked classes attached to a [`predict`] result.
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Alternative {
    pub class: ClassLabel,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Prediction {
    pub class: ClassLabel,
    pub distance: f64,
    pub proto_id: u64,
    /// Distinct classes ranked by their closest prototype; the first is the prediction.
    pub alternatives: Vec<Alternative>,
}

fn build(store: &PrototypeStore, query: &EmbeddingVector, k: usize) -> Result<(usize, Prediction)> {
    if k == 0 {
        return Err(Error::InvalidConfig("top-k must be at least 1".into()));
    }
    let (idx, distance) = store.argmin(query)?;
    let winner = &store.entries()[idx];

    let mut ranked: Vec<_> = store.class_minima(query)?.into_iter().collect();
    // BTreeMap iteration is already in class order, so a stable sort on distance
    // keeps the class-id tie-break.
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    let alternatives = ranked
        .into_iter()
        .take(k)
        .map(|(id, distance)| Alternative {
            class: store.class(id).expect("entry classes are registered"),
            distance,
        })
        .collect();

    Ok((
        idx,
        Prediction {
            class: winner.class().clone(),
            distance,
            proto_id: winner.proto_id(),
            alternatives,
        },
    ))
}

/// Classifies `query` and marks the winning prototype as used.
pub fn predict(store: &mut PrototypeStore, query: &EmbeddingVector) -> Result<Prediction> {
    predict_topk(store, query, DEFAULT_TOP_K)
}

pub fn predict_topk(
    store: &mut PrototypeStore,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Prediction> {
    let (idx, prediction) = build(store, query, k)?;
    store.touch(idx);
    Ok(prediction)
}

/// Like [`predict_topk`] without the usage update, so it can run against a
/// shared store.
pub fn predict_readonly(
    store: &PrototypeStore,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Prediction> {
    build(store, query, k).map(|(_, p)| p)
}
