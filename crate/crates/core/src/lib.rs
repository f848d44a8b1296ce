//! Backprop-free few-shot error correction over embedding vectors.
//!
//! A [`PrototypeStore`] holds class prototypes (k-means centroids computed from
//! training embeddings, plus any user corrections). Queries are classified by
//! the class of the nearest prototype under cosine distance. A correction
//! simply appends the misclassified embedding as a new prototype of its true
//! class, with least-recently-used eviction when a capacity budget is set.
//!
//! The crate is `no_std` and only needs `alloc`.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod classifier;
pub mod correction;
pub mod dataset;
pub mod error;
pub mod kmeans;
pub mod loss;
pub mod protocol;
pub mod store;
pub mod vector;

pub use classifier::{predict, predict_readonly, predict_topk, Alternative, Prediction, DEFAULT_TOP_K};
pub use correction::{correct, correct_batch, CorrectionConfig, CorrectionOutcome};
pub use dataset::{generate_synthetic, EmbeddingDataset, Record, Split, SyntheticConfig};
pub use error::{Error, Result};
pub use kmeans::{build_initial_prototypes, kmeans, kmeans_fit, kmeans_objective, KMeansConfig, KMeansFit};
pub use loss::{distillation_l1, protonet_loss, protonet_query_gradient, LossValue, ProtoMetric, ProtoNetConfig};
pub use protocol::{
    run_protocol, run_protocol_with_store, split_by_correctness, CorrectnessSplit, MetricsReport,
    ProtocolConfig, ShotRun, ShotSummary, DEFAULT_SHOTS,
};
pub use store::{
    Budget, EntryParts, Insertion, Nearest, PrototypeEntry, PrototypeStore, Source, StoreConfig,
    StoreParts, StoreStats,
};
pub use vector::{
    cosine_distance, l1_distance, mean, normalize, ClassId, ClassLabel, EmbeddingVector, ZERO_NORM_EPS,
};
