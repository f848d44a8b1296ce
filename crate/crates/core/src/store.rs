//! The prototype store: the adapted prototype set with provenance, usage
//! tracking and a global capacity budget.
//!
//! Every query that selects a winner and every insertion advances a logical
//! clock and stamps the touched entry with it. When an insertion would push
//! the store over budget, the evictable entry with the oldest stamp is
//! dropped (ties resolved by insertion order).

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::vector::{
    check_dims, cosine_distance_raw, nonzero_norm_sq, ClassId, ClassLabel, EmbeddingVector,
};

/// Where a prototype came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "lowercase")
)]
pub enum Source {
    /// Computed from training data before deployment.
    Server,
    /// Added from a user correction.
    User,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Budget {
    #[default]
    Unlimited,
    Limited(usize),
}

impl Budget {
    pub fn limit(self) -> Option<usize> {
        match self {
            Budget::Unlimited => None,
            Budget::Limited(n) => Some(n),
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            Budget::Limited(0) => Err(Error::InvalidConfig("budget must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Budget {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        self.limit().serialize(s)
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for Budget {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        Ok(match Option::<usize>::deserialize(d)? {
            None => Budget::Unlimited,
            Some(n) => Budget::Limited(n),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StoreConfig {
    pub dim: usize,
    pub budget: Budget,
    /// Exempt server-sourced prototypes from eviction.
    pub protect_server: bool,
}

impl StoreConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            budget: Budget::Unlimited,
            protect_server: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeEntry {
    proto_id: u64,
    class: ClassLabel,
    vector: EmbeddingVector,
    norm_sq: f64,
    source: Source,
    created_seq: u64,
    last_used_seq: u64,
}

impl PrototypeEntry {
    pub fn proto_id(&self) -> u64 {
        self.proto_id
    }
    pub fn class(&self) -> &ClassLabel {
        &self.class
    }
    pub fn vector(&self) -> &EmbeddingVector {
        &self.vector
    }
    pub fn source(&self) -> Source {
        self.source
    }
    pub fn created_seq(&self) -> u64 {
        self.created_seq
    }
    pub fn last_used_seq(&self) -> u64 {
        self.last_used_seq
    }

    fn evictable(&self, protect_server: bool) -> bool {
        !protect_server || self.source == Source::User
    }

    /// Argmin order: distance first, then class id, then insertion order.
    #[inline]
    fn beats(&self, distance: f64, other: &PrototypeEntry, other_distance: f64) -> bool {
        (distance, self.class.id, self.created_seq)
            < (other_distance, other.class.id, other.created_seq)
    }
}

/// Result of a nearest-prototype query.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Nearest {
    pub proto_id: u64,
    pub class: ClassLabel,
    pub distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Insertion {
    pub proto_id: u64,
    pub evicted: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StoreStats {
    pub total: usize,
    pub per_class: BTreeMap<ClassId, usize>,
    pub server: usize,
    pub user: usize,
    pub budget: Budget,
    pub dim: usize,
}

/// Plain-data view of a store used for persistence.
#[derive(Clone, Debug, PartialEq)]
pub struct StoreParts {
    pub dim: usize,
    pub budget: Budget,
    pub protect_server: bool,
    pub clock: u64,
    /// Next id to hand out; raised to `max(proto_id) + 1` on import if lower.
    pub next_proto_id: u64,
    /// Classes known to the store, including ones whose prototypes were all evicted.
    pub classes: Vec<ClassLabel>,
    pub entries: Vec<EntryParts>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntryParts {
    pub proto_id: u64,
    pub class: ClassLabel,
    pub source: Source,
    pub created_seq: u64,
    pub last_used_seq: u64,
    pub vector: EmbeddingVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeStore {
    dim: usize,
    budget: Budget,
    protect_server: bool,
    clock: u64,
    next_proto_id: u64,
    classes: BTreeMap<ClassId, String>,
    /// Kept in insertion order, so `created_seq` is ascending.
    entries: Vec<PrototypeEntry>,
}

impl PrototypeStore {
    pub fn new(cfg: StoreConfig) -> Result<Self> {
        if cfg.dim == 0 {
            return Err(Error::InvalidConfig("dim must be at least 1".into()));
        }
        cfg.budget.validate()?;
        Ok(Self {
            dim: cfg.dim,
            budget: cfg.budget,
            protect_server: cfg.protect_server,
            clock: 0,
            next_proto_id: 0,
            classes: BTreeMap::new(),
            entries: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn budget(&self) -> Budget {
        self.budget
    }
    pub fn protect_server(&self) -> bool {
        self.protect_server
    }
    pub fn clock(&self) -> u64 {
        self.clock
    }
    pub fn len(&self) -> usize {
        self.entries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
    pub fn entries(&self) -> &[PrototypeEntry] {
        &self.entries
    }

    pub fn config(&self) -> StoreConfig {
        StoreConfig {
            dim: self.dim,
            budget: self.budget,
            protect_server: self.protect_server,
        }
    }

    pub fn entry(&self, proto_id: u64) -> Option<&PrototypeEntry> {
        self.entries.iter().find(|e| e.proto_id == proto_id)
    }

    /// Every class ever registered, in canonical order.
    pub fn classes(&self) -> impl Iterator<Item = ClassLabel> + '_ {
        self.classes
            .iter()
            .map(|(&id, name)| ClassLabel { id, name: name.clone() })
    }

    pub fn class(&self, id: ClassId) -> Option<ClassLabel> {
        self.classes
            .get(&id)
            .map(|name| ClassLabel { id, name: name.clone() })
    }

    /// Registers a class without adding a prototype for it.
    pub fn register_class(&mut self, label: &ClassLabel) {
        self.classes
            .entry(label.id)
            .or_insert_with(|| label.name.clone());
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Validates a query and returns its squared norm.
    pub(crate) fn check_query(&self, query: &EmbeddingVector) -> Result<f64> {
        check_dims(self.dim, query.dim())?;
        nonzero_norm_sq(query)
    }

    pub fn insert(
        &mut self,
        class: &ClassLabel,
        vector: EmbeddingVector,
        source: Source,
    ) -> Result<Insertion> {
        check_dims(self.dim, vector.dim())?;
        let norm_sq = nonzero_norm_sq(&vector)?;

        let needs_eviction = self.budget.limit().is_some_and(|b| self.entries.len() >= b);
        if needs_eviction && self.lru_index().is_none() {
            return Err(Error::BudgetUnsatisfiable {
                budget: self.budget.limit().unwrap_or(0),
            });
        }

        self.register_class(class);
        let class = ClassLabel {
            id: class.id,
            name: self.classes[&class.id].clone(),
        };
        let seq = self.tick();
        let proto_id = self.next_proto_id;
        self.next_proto_id += 1;

        // The victim is chosen before the push, so the fresh entry is never it.
        let evicted = if needs_eviction {
            let idx = self.lru_index().expect("checked above");
            Some(self.entries.remove(idx).proto_id)
        } else {
            None
        };

        self.entries.push(PrototypeEntry {
            proto_id,
            class,
            vector,
            norm_sq,
            source,
            created_seq: seq,
            last_used_seq: seq,
        });
        Ok(Insertion { proto_id, evicted })
    }

    fn lru_index(&self) -> Option<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.evictable(self.protect_server))
            .min_by_key(|(_, e)| (e.last_used_seq, e.created_seq))
            .map(|(i, _)| i)
    }

    /// Removes the least-recently-used evictable entry.
    pub fn evict_lru(&mut self) -> Result<u64> {
        if self.entries.is_empty() {
            return Err(Error::EmptyStore);
        }
        let idx = self.lru_index().ok_or(Error::NothingEvictable)?;
        self.tick();
        Ok(self.entries.remove(idx).proto_id)
    }

    /// Changes the budget, evicting LRU entries until the store fits. Either
    /// the whole change applies or nothing does.
    pub fn set_budget(&mut self, budget: Budget) -> Result<Vec<u64>> {
        budget.validate()?;
        let Some(limit) = budget.limit() else {
            self.budget = budget;
            return Ok(Vec::new());
        };
        let excess = self.entries.len().saturating_sub(limit);
        let evictable = self
            .entries
            .iter()
            .filter(|e| e.evictable(self.protect_server))
            .count();
        if excess > evictable {
            return Err(Error::BudgetUnsatisfiable { budget: limit });
        }
        self.budget = budget;
        (0..excess).map(|_| self.evict_lru()).collect()
    }

    /// Index and distance of the winning entry, without touching usage.
    pub(crate) fn argmin(&self, query: &EmbeddingVector) -> Result<(usize, f64)> {
        if self.entries.is_empty() {
            return Err(Error::EmptyStore);
        }
        let q_norm_sq = self.check_query(query)?;
        let q = query.as_slice();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, e) in self.entries.iter().enumerate() {
            let d = cosine_distance_raw(q, q_norm_sq, e.vector.as_slice(), e.norm_sq);
            if i == 0 || e.beats(d, &self.entries[best], best_d) {
                best = i;
                best_d = d;
            }
        }
        Ok((best, best_d))
    }

    /// Per-class minimum cosine distance, in canonical class order.
    pub(crate) fn class_minima(&self, query: &EmbeddingVector) -> Result<BTreeMap<ClassId, f64>> {
        let q_norm_sq = self.check_query(query)?;
        let q = query.as_slice();
        let mut minima = BTreeMap::new();
        for e in &self.entries {
            let d = cosine_distance_raw(q, q_norm_sq, e.vector.as_slice(), e.norm_sq);
            minima
                .entry(e.class.id)
                .and_modify(|m: &mut f64| *m = m.min(d))
                .or_insert(d);
        }
        Ok(minima)
    }

    pub(crate) fn touch(&mut self, index: usize) {
        let seq = self.tick();
        self.entries[index].last_used_seq = seq;
    }

    /// Globally nearest prototype; marks the winner as used.
    pub fn nearest(&mut self, query: &EmbeddingVector) -> Result<Nearest> {
        let (idx, distance) = self.argmin(query)?;
        self.touch(idx);
        let e = &self.entries[idx];
        Ok(Nearest {
            proto_id: e.proto_id,
            class: e.class.clone(),
            distance,
        })
    }

    /// Same result as [`nearest`](Self::nearest) but leaves usage metadata alone.
    pub fn nearest_readonly(&self, query: &EmbeddingVector) -> Result<Nearest> {
        let (idx, distance) = self.argmin(query)?;
        let e = &self.entries[idx];
        Ok(Nearest {
            proto_id: e.proto_id,
            class: e.class.clone(),
            distance,
        })
    }

    pub fn stats(&self) -> StoreStats {
        let mut per_class = BTreeMap::new();
        let mut server = 0;
        for e in &self.entries {
            *per_class.entry(e.class.id).or_insert(0) += 1;
            if e.source == Source::Server {
                server += 1;
            }
        }
        StoreStats {
            total: self.entries.len(),
            per_class,
            server,
            user: self.entries.len() - server,
            budget: self.budget,
            dim: self.dim,
        }
    }

    pub fn to_parts(&self) -> StoreParts {
        StoreParts {
            dim: self.dim,
            budget: self.budget,
            protect_server: self.protect_server,
            clock: self.clock,
            next_proto_id: self.next_proto_id,
            classes: self.classes().collect(),
            entries: self
                .entries
                .iter()
                .map(|e| EntryParts {
                    proto_id: e.proto_id,
                    class: e.class.clone(),
                    source: e.source,
                    created_seq: e.created_seq,
                    last_used_seq: e.last_used_seq,
                    vector: e.vector.clone(),
                })
                .collect(),
        }
    }

    pub fn from_parts(parts: StoreParts) -> Result<Self> {
        let mut store = Self::new(StoreConfig {
            dim: parts.dim,
            budget: parts.budget,
            protect_server: parts.protect_server,
        })?;
        if let Some(limit) = parts.budget.limit() {
            if parts.entries.len() > limit {
                return Err(Error::InvalidConfig(alloc::format!(
                    "{} entries exceed budget {limit}",
                    parts.entries.len()
                )));
            }
        }
        for c in &parts.classes {
            store.register_class(c);
        }
        let mut entries = Vec::with_capacity(parts.entries.len());
        let mut max_seq = 0;
        let mut next_id = parts.next_proto_id;
        for p in parts.entries {
            check_dims(parts.dim, p.vector.dim())?;
            let norm_sq = nonzero_norm_sq(&p.vector)?;
            if p.created_seq > p.last_used_seq {
                return Err(Error::InvalidConfig(alloc::format!(
                    "prototype {} used before it was created",
                    p.proto_id
                )));
            }
            store.register_class(&p.class);
            max_seq = max_seq.max(p.last_used_seq);
            next_id = next_id.max(p.proto_id + 1);
            entries.push(PrototypeEntry {
                proto_id: p.proto_id,
                class: p.class,
                vector: p.vector,
                norm_sq,
                source: p.source,
                created_seq: p.created_seq,
                last_used_seq: p.last_used_seq,
            });
        }
        entries.sort_by_key(|e| e.created_seq);
        let mut ids: Vec<u64> = entries.iter().map(|e| e.proto_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("duplicate proto_id".into()));
        }
        if entries.windows(2).any(|w| w[0].created_seq == w[1].created_seq) {
            return Err(Error::InvalidConfig("duplicate created_seq".into()));
        }
        store.clock = parts.clock.max(max_seq);
        store.next_proto_id = next_id;
        store.entries = entries;
        Ok(store)
    }
}
