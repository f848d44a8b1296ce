//! Backprop-free error correction: a user-supplied label turns the sample's
//! embedding into a new prototype of that class. Nothing else in the store
//! changes except, under budget pressure, the single evicted entry.

use alloc::vec::Vec;

use crate::classifier::{predict_readonly, Prediction, DEFAULT_TOP_K};
use crate::error::{Error, Result};
use crate::store::{PrototypeStore, Source};
use crate::vector::{ClassLabel, EmbeddingVector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorrectionConfig {
    /// Accept labels the store has never seen, registering them as new classes.
    pub open_class: bool,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorrectionOutcome {
    pub added_proto_id: u64,
    pub evicted_proto_id: Option<u64>,
    pub store_size_after: usize,
    /// `None` only when the store was empty before the correction.
    pub prediction_before: Option<Prediction>,
    pub prediction_after: Prediction,
}

/// Adds `embedding` as a user prototype of `true_label`.
///
/// The before/after predictions are taken read-only so that recording them
/// does not itself count as prototype usage.
pub fn correct(
    store: &mut PrototypeStore,
    embedding: &EmbeddingVector,
    true_label: &ClassLabel,
    cfg: CorrectionConfig,
) -> Result<CorrectionOutcome> {
    store.check_query(embedding)?;
    if !cfg.open_class && store.class(true_label.id).is_none() {
        return Err(Error::UnknownClass(true_label.id));
    }
    let prediction_before = match predict_readonly(store, embedding, DEFAULT_TOP_K) {
        Ok(p) => Some(p),
        Err(Error::EmptyStore) => None,
        Err(e) => return Err(e),
    };
    let ins = store.insert(true_label, embedding.clone(), Source::User)?;
    let prediction_after = predict_readonly(store, embedding, DEFAULT_TOP_K)?;
    Ok(CorrectionOutcome {
        added_proto_id: ins.proto_id,
        evicted_proto_id: ins.evicted,
        store_size_after: store.len(),
        prediction_before,
        prediction_after,
    })
}

/// Applies corrections in order. Stops at the first failure; corrections
/// before it stay applied.
pub fn correct_batch(
    store: &mut PrototypeStore,
    corrections: &[(EmbeddingVector, ClassLabel)],
    cfg: CorrectionConfig,
) -> Result<Vec<CorrectionOutcome>> {
    corrections
        .iter()
        .map(|(embedding, label)| correct(store, embedding, label, cfg))
        .collect()
}
