//! Few-shot correction evaluation.
//!
//! The initial store splits the test set into samples it already gets right
//! (`correct`) and ones it gets wrong (`misclassified`). For every seed and
//! shot count `s`, the store is reset, up to `s` misclassified samples per
//! class are handed in as corrections, and the adapted store is scored on the
//! remaining misclassified samples (error-correction accuracy) and on the
//! previously correct ones (whose complement is the forgetting rate).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::correction::{correct_batch, CorrectionConfig};
use crate::dataset::{EmbeddingDataset, Record, Split};
use crate::error::{Error, Result};
use crate::kmeans::{build_initial_prototypes, KMeansConfig};
use crate::store::{Budget, PrototypeStore, StoreConfig};
use crate::vector::ClassId;

pub const DEFAULT_SHOTS: [usize; 9] = [1, 2, 3, 4, 5, 7, 10, 20, 50];

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProtocolConfig {
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub k: usize,
    pub kmeans_seed: u64,
    pub budget: Budget,
    /// Score the support samples themselves as part of the error set.
    pub include_support_in_acc_e: bool,
    pub protect_server: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            shots: DEFAULT_SHOTS.to_vec(),
            seeds: alloc::vec![0],
            k: 3,
            kmeans_seed: 0,
            budget: Budget::Unlimited,
            include_support_in_acc_e: false,
            protect_server: false,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::InvalidConfig(why.into()));
        if self.shots.is_empty() {
            return bad("shots must not be empty");
        }
        if self.shots[0] == 0 || self.shots.windows(2).any(|w| w[0] >= w[1]) {
            return bad("shots must be positive and strictly increasing");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.budget == Budget::Limited(0) {
            return bad("budget must be at least 1");
        }
        Ok(())
    }

    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.k,
            seed: self.kmeans_seed,
            ..Default::default()
        }
    }
}

/// Partition of the test split by the initial store's verdict. Both lists hold
/// indices into the test split's records, ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorrectnessSplit {
    pub correct: Vec<usize>,
    pub misclassified: Vec<usize>,
}

fn test_records(test: &EmbeddingDataset) -> Vec<&Record> {
    test.split(Split::Test).collect()
}

fn is_correct(store: &PrototypeStore, r: &Record) -> Result<bool> {
    Ok(store.nearest_readonly(&r.embedding)?.class.id == r.label.id)
}

/// Indices (within the test split) split by whether `store` classifies them
/// correctly. Uses read-only prediction.
pub fn split_by_correctness(store: &PrototypeStore, test: &EmbeddingDataset) -> Result<CorrectnessSplit> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let records = test_records(test);
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut split = CorrectnessSplit::default();
    for (i, r) in records.iter().enumerate() {
        if is_correct(store, r)? {
            split.correct.push(i);
        } else {
            split.misclassified.push(i);
        }
    }
    Ok(split)
}

/// Percentage of `indices` that `store` classifies correctly; `None` if empty.
pub fn accuracy(store: &PrototypeStore, records: &[&Record], indices: &[usize]) -> Result<Option<f64>> {
    if indices.is_empty() {
        return Ok(None);
    }
    let mut hits = 0usize;
    for &i in indices {
        if is_correct(store, records[i])? {
            hits += 1;
        }
    }
    Ok(Some(100.0 * hits as f64 / indices.len() as f64))
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShotRun {
    pub shots: usize,
    pub seed: u64,
    /// `None` when no misclassified samples were left to score.
    pub acc_e: Option<f64>,
    pub acc_c: Option<f64>,
    /// Always `100 - acc_c`.
    pub forgetting: Option<f64>,
    pub eval_count: usize,
    pub support_count: usize,
    pub store_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub acc_base: f64,
    pub include_support_in_acc_e: bool,
    pub test_count: usize,
    pub correct_count: usize,
    pub misclassified_count: usize,
    pub initial_store_size: usize,
    /// Ordered by shot count (as configured), then seed.
    pub runs: Vec<ShotRun>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShotSummary {
    pub shots: usize,
    pub acc_e_mean: Option<f64>,
    pub acc_e_std: Option<f64>,
    pub forgetting_mean: Option<f64>,
    pub forgetting_std: Option<f64>,
    pub seeds: usize,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        libm::sqrt(var)
    });
    (Some(mean), std)
}

impl MetricsReport {
    /// Per-shot mean and sample standard deviation over seeds, in run order.
    pub fn summary(&self) -> Vec<ShotSummary> {
        let mut order = Vec::new();
        let mut groups: BTreeMap<usize, Vec<&ShotRun>> = BTreeMap::new();
        for run in &self.runs {
            groups
                .entry(run.shots)
                .or_insert_with(|| {
                    order.push(run.shots);
                    Vec::new()
                })
                .push(run);
        }
        order
            .into_iter()
            .map(|shots| {
                let runs = &groups[&shots];
                let acc_e: Vec<f64> = runs.iter().filter_map(|r| r.acc_e).collect();
                let forgetting: Vec<f64> = runs.iter().filter_map(|r| r.forgetting).collect();
                let (acc_e_mean, acc_e_std) = mean_std(&acc_e);
                let (forgetting_mean, forgetting_std) = mean_std(&forgetting);
                ShotSummary {
                    shots,
                    acc_e_mean,
                    acc_e_std,
                    forgetting_mean,
                    forgetting_std,
                    seeds: runs.len(),
                }
            })
            .collect()
    }
}

/// Builds the initial store from `train` and runs the protocol on `test`.
pub fn run_protocol(
    train: &EmbeddingDataset,
    test: &EmbeddingDataset,
    cfg: &ProtocolConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let store = build_initial_prototypes(
        train,
        &cfg.kmeans(),
        StoreConfig {
            dim: train.dim(),
            budget: cfg.budget,
            protect_server: cfg.protect_server,
        },
    )?;
    run_protocol_with_store(&store, test, cfg)
}

/// Runs the protocol from an existing initial store. `cfg.budget` and
/// `cfg.protect_server` are applied to each working copy.
pub fn run_protocol_with_store(
    initial: &PrototypeStore,
    test: &EmbeddingDataset,
    cfg: &ProtocolConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let split = split_by_correctness(initial, test)?;
    let records = test_records(test);
    let all: Vec<usize> = (0..records.len()).collect();
    let acc_base = accuracy(initial, &records, &all)?.expect("non-empty test split");

    let mut base = PrototypeStore::from_parts({
        let mut parts = initial.to_parts();
        parts.budget = Budget::Unlimited;
        parts.protect_server = cfg.protect_server;
        parts
    })?;
    base.set_budget(cfg.budget)?;

    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for &i in &split.misclassified {
        by_class.entry(records[i].label.id).or_default().push(i);
    }

    let mut runs = Vec::with_capacity(cfg.shots.len() * cfg.seeds.len());
    for &shots in &cfg.shots {
        for &seed in &cfg.seeds {
            runs.push(run_one(&base, &records, &split, &by_class, shots, seed, cfg)?);
        }
    }

    Ok(MetricsReport {
        acc_base,
        include_support_in_acc_e: cfg.include_support_in_acc_e,
        test_count: records.len(),
        correct_count: split.correct.len(),
        misclassified_count: split.misclassified.len(),
        initial_store_size: initial.len(),
        runs,
    })
}

/// Support samples for one (seed, shots) pair: up to `shots` misclassified
/// indices per class, drawn without replacement, classes in canonical order.
pub fn sample_support(by_class: &BTreeMap<ClassId, Vec<usize>>, shots: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shots as u64);
    let mut support = Vec::new();
    for pool in by_class.values() {
        let take = shots.min(pool.len());
        let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), take)
            .into_iter()
            .map(|j| pool[j])
            .collect();
        picked.sort_unstable();
        support.extend(picked);
    }
    support
}

fn run_one(
    base: &PrototypeStore,
    records: &[&Record],
    split: &CorrectnessSplit,
    by_class: &BTreeMap<ClassId, Vec<usize>>,
    shots: usize,
    seed: u64,
    cfg: &ProtocolConfig,
) -> Result<ShotRun> {
    let support = sample_support(by_class, shots, seed);
    let corrections: Vec<_> = support
        .iter()
        .map(|&i| (records[i].embedding.clone(), records[i].label.clone()))
        .collect();
    let mut store = base.clone();
    correct_batch(&mut store, &corrections, CorrectionConfig::default())?;

    let eval: Vec<usize> = if cfg.include_support_in_acc_e {
        split.misclassified.clone()
    } else {
        let used: BTreeSet<usize> = support.iter().copied().collect();
        split
            .misclassified
            .iter()
            .copied()
            .filter(|i| !used.contains(i))
            .collect()
    };
    let acc_e = accuracy(&store, records, &eval)?;
    let acc_c = accuracy(&store, records, &split.correct)?;
    let forgetting = acc_c.map(|a| 100.0 - a);
    Ok(ShotRun {
        shots,
        seed,
        acc_e,
        acc_c,
        forgetting,
        eval_count: eval.len(),
        support_count: support.len(),
        store_size: store.len(),
    })
}
