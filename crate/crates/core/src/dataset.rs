//! Labelled embedding datasets and the seeded synthetic generator used in
//! place of real backbone features.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::vector::{check_dims, cosine_distance, normalize, ClassId, ClassLabel, EmbeddingVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "lowercase")
)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: String,
    pub embedding: EmbeddingVector,
    pub label: ClassLabel,
    pub split: Split,
    /// Opaque path handed to the UI for thumbnails.
    pub image: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingDataset {
    dim: usize,
    classes: Vec<ClassLabel>,
    records: Vec<Record>,
    rescaled: bool,
}

impl EmbeddingDataset {
    /// Builds a dataset whose class list is the set of labels in `records`.
    pub fn new(dim: usize, records: Vec<Record>) -> Result<Self> {
        Self::with_classes(dim, Vec::new(), records)
    }

    /// Like [`new`](Self::new), but `classes` may name classes without records.
    pub fn with_classes(dim: usize, classes: Vec<ClassLabel>, records: Vec<Record>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dim must be at least 1".into()));
        }
        let mut names: BTreeMap<ClassId, String> = BTreeMap::new();
        let mut register = |label: &ClassLabel| -> Result<()> {
            match names.get(&label.id) {
                Some(existing) if *existing != label.name => Err(Error::InvalidConfig(format!(
                    "class {} is named both {existing:?} and {:?}",
                    label.id, label.name
                ))),
                Some(_) => Ok(()),
                None => {
                    names.insert(label.id, label.name.clone());
                    Ok(())
                }
            }
        };
        for c in &classes {
            register(c)?;
        }
        let mut ids = BTreeSet::new();
        for r in &records {
            check_dims(dim, r.embedding.dim())?;
            register(&r.label)?;
            if !ids.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self {
            dim,
            classes: names
                .into_iter()
                .map(|(id, name)| ClassLabel { id, name })
                .collect(),
            records,
            rescaled: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn records(&self) -> &[Record] {
        &self.records
    }
    pub fn len(&self) -> usize {
        self.records.len()
    }
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Classes in canonical (ascending id) order.
    pub fn classes(&self) -> &[ClassLabel] {
        &self.classes
    }

    pub fn class_by_name(&self, name: &str) -> Option<&ClassLabel> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn record(&self, id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.id == id)
    }

    /// True if ingestion had to rescale at least one row noticeably.
    pub fn rescaled(&self) -> bool {
        self.rescaled
    }

    pub fn set_rescaled(&mut self, rescaled: bool) {
        self.rescaled = rescaled;
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> + '_ {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Records of one split, keeping the full class list.
    pub fn subset(&self, split: Split) -> EmbeddingDataset {
        EmbeddingDataset {
            dim: self.dim,
            classes: self.classes.clone(),
            records: self.split(split).cloned().collect(),
            rescaled: self.rescaled,
        }
    }

    /// Class ids form `0..C` with no gaps.
    pub fn has_contiguous_labels(&self) -> bool {
        self.classes
            .iter()
            .enumerate()
            .all(|(i, c)| c.id.0 as usize == i)
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticConfig {
    pub classes: usize,
    pub dim: usize,
    pub per_class_train: usize,
    pub per_class_val: usize,
    pub per_class_test: usize,
    /// Standard deviation of the isotropic noise added to each class direction.
    pub sigma: f64,
    pub seed: u64,
    /// Minimum pairwise cosine distance between class directions. Draws that
    /// violate it are rejected and retried with `seed + 1`, `seed + 2`, ...
    pub min_mean_separation: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 32,
            per_class_train: 50,
            per_class_val: 0,
            per_class_test: 100,
            sigma: 0.25,
            seed: 7,
            min_mean_separation: 0.5,
        }
    }
}

const MAX_SEPARATION_ATTEMPTS: u64 = 256;

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::InvalidConfig(why.into()));
        if self.classes < 2 {
            return bad("synthetic data needs at least 2 classes");
        }
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if self.per_class_train == 0 || self.per_class_test == 0 {
            return bad("per-class train and test counts must be positive");
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad("sigma must be a positive finite number");
        }
        if !(0.0..2.0).contains(&self.min_mean_separation) {
            return bad("min_mean_separation must lie in [0, 2)");
        }
        Ok(())
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    loop {
        let v = EmbeddingVector::new(gaussian_vector(rng, dim, 1.0)).expect("finite draws");
        if let Ok(unit) = normalize(&v) {
            return unit;
        }
    }
}

fn well_separated(means: &[EmbeddingVector], min_distance: f64) -> bool {
    means.iter().enumerate().all(|(i, u)| {
        means[i + 1..]
            .iter()
            .all(|v| cosine_distance(u, v).expect("unit vectors") > min_distance)
    })
}

fn class_name(c: usize) -> String {
    format!("class_{c:03}")
}

/// Class directions for `cfg`, plus the generator state positioned after them.
fn draw_means(cfg: &SyntheticConfig) -> Result<(Vec<EmbeddingVector>, ChaCha8Rng)> {
    for attempt in 0..MAX_SEPARATION_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(attempt));
        let means: Vec<_> = (0..cfg.classes)
            .map(|_| random_direction(&mut rng, cfg.dim))
            .collect();
        if well_separated(&means, cfg.min_mean_separation) {
            return Ok((means, rng));
        }
    }
    Err(Error::InvalidConfig(format!(
        "no draw of {} class directions in dim {} reached separation {} after {MAX_SEPARATION_ATTEMPTS} seeds",
        cfg.classes, cfg.dim, cfg.min_mean_separation
    )))
}

/// The class directions `generate_synthetic` would use for `cfg`.
pub fn synthetic_class_means(cfg: &SyntheticConfig) -> Result<Vec<EmbeddingVector>> {
    cfg.validate()?;
    draw_means(cfg).map(|(means, _)| means)
}

/// Unit-norm samples `normalize(mean_c + N(0, sigma² I))` around random unit
/// class directions. Pure function of `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<EmbeddingDataset> {
    cfg.validate()?;
    let (means, mut rng) = draw_means(cfg)?;
    let classes: Vec<ClassLabel> = (0..cfg.classes)
        .map(|c| ClassLabel::new(c as u32, class_name(c)))
        .collect();

    let mut records = Vec::new();
    for split in Split::ALL {
        let count = match split {
            Split::Train => cfg.per_class_train,
            Split::Val => cfg.per_class_val,
            Split::Test => cfg.per_class_test,
        };
        for (c, mean) in means.iter().enumerate() {
            for i in 0..count {
                let embedding = loop {
                    let noise = gaussian_vector(&mut rng, cfg.dim, cfg.sigma);
                    let raw: Vec<f64> = mean.as_slice().iter().zip(&noise).map(|(m, n)| m + n).collect();
                    if let Ok(unit) = normalize(&EmbeddingVector::new(raw)?) {
                        break unit;
                    }
                };
                records.push(Record {
                    id: format!("{split}-c{c:03}-{i:05}"),
                    embedding,
                    label: classes[c].clone(),
                    split,
                    image: None,
                });
            }
        }
    }
    EmbeddingDataset::with_classes(cfg.dim, classes, records)
}
