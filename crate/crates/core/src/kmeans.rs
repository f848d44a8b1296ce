//! Per-class k-means used to compute the server-side prototypes.
//!
//! Seeding is k-means++ from a seeded ChaCha stream, followed by Lloyd
//! iterations on the squared-Euclidean objective. A cluster that ends up empty
//! after an assignment step takes over the point farthest from its own
//! centroid.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{EmbeddingDataset, Split};
use crate::error::{Error, Result};
use crate::store::{PrototypeStore, Source, StoreConfig};
use crate::vector::{check_dims, squared_euclidean, EmbeddingVector};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once `(previous - current) / previous` drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 3,
            max_iter: 100,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl KMeansConfig {
    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::InvalidConfig("tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<EmbeddingVector>,
    /// Objective after seeding, then after every Lloyd iteration. Empty when
    /// the input had at most `k` distinct points.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// Sum over features of the squared distance to the nearest centroid.
pub fn kmeans_objective(features: &[EmbeddingVector], centroids: &[EmbeddingVector]) -> Result<f64> {
    let first = centroids
        .first()
        .ok_or_else(|| Error::EmptyInput("no centroids".into()))?;
    for c in centroids {
        check_dims(first.dim(), c.dim())?;
    }
    let mut total = 0.0;
    for f in features {
        check_dims(first.dim(), f.dim())?;
        total += centroids
            .iter()
            .map(|c| squared_euclidean(f.as_slice(), c.as_slice()))
            .fold(f64::INFINITY, f64::min);
    }
    Ok(total)
}

pub fn kmeans(features: &[EmbeddingVector], cfg: &KMeansConfig) -> Result<Vec<EmbeddingVector>> {
    kmeans_fit(features, cfg).map(|fit| fit.centroids)
}

fn bits_key(v: &[f64]) -> Vec<u64> {
    // `+ 0.0` folds -0.0 into 0.0 so the key matches `==`.
    v.iter().map(|x| (x + 0.0).to_bits()).collect()
}

fn distinct(features: &[EmbeddingVector]) -> Vec<&EmbeddingVector> {
    let mut seen = BTreeSet::new();
    features
        .iter()
        .filter(|f| seen.insert(bits_key(f.as_slice())))
        .collect()
}

pub fn kmeans_fit(features: &[EmbeddingVector], cfg: &KMeansConfig) -> Result<KMeansFit> {
    cfg.validate()?;
    let first = features
        .first()
        .ok_or_else(|| Error::EmptyInput("no features to cluster".into()))?;
    for f in features {
        check_dims(first.dim(), f.dim())?;
    }

    let unique = distinct(features);
    if unique.len() <= cfg.k {
        return Ok(KMeansFit {
            centroids: unique.into_iter().cloned().collect(),
            objective_trace: Vec::new(),
            iterations: 0,
        });
    }

    let points: Vec<&[f64]> = features.iter().map(|f| f.as_slice()).collect();
    let mut lloyd = Lloyd::new(&points, cfg);
    let fit = lloyd.run(cfg);
    Ok(fit)
}

struct Lloyd<'a> {
    points: &'a [&'a [f64]],
    centroids: Vec<Vec<f64>>,
    assignment: Vec<usize>,
    sq_dist: Vec<f64>,
}

impl<'a> Lloyd<'a> {
    fn new(points: &'a [&'a [f64]], cfg: &KMeansConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let centroids = plus_plus(points, cfg.k, &mut rng);
        Self {
            points,
            centroids,
            assignment: vec![0; points.len()],
            sq_dist: vec![0.0; points.len()],
        }
    }

    /// Assigns each point to its nearest centroid (lowest index on ties) and
    /// returns the objective.
    fn assign(&mut self) -> f64 {
        let mut total = 0.0;
        for (i, p) in self.points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in self.centroids.iter().enumerate() {
                let d = squared_euclidean(p, c);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            self.assignment[i] = best;
            self.sq_dist[i] = best_d;
            total += best_d;
        }
        total
    }

    fn reseed_empty(&mut self) {
        let k = self.centroids.len();
        let mut sizes = vec![0usize; k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        for j in 0..k {
            if sizes[j] > 0 {
                continue;
            }
            let donor = (0..self.points.len())
                .filter(|&i| sizes[self.assignment[i]] > 1)
                .max_by(|&a, &b| self.sq_dist[a].total_cmp(&self.sq_dist[b]).then(b.cmp(&a)));
            let Some(i) = donor else { break };
            sizes[self.assignment[i]] -= 1;
            sizes[j] = 1;
            self.assignment[i] = j;
            self.sq_dist[i] = 0.0;
            self.centroids[j] = self.points[i].to_vec();
        }
    }

    fn update_centroids(&mut self) {
        let dim = self.centroids[0].len();
        let mut sums = vec![vec![0.0; dim]; self.centroids.len()];
        let mut counts = vec![0usize; self.centroids.len()];
        for (p, &a) in self.points.iter().zip(&self.assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for ((c, s), n) in self.centroids.iter_mut().zip(sums).zip(counts) {
            if n > 0 {
                let n = n as f64;
                *c = s.into_iter().map(|x| x / n).collect();
            }
        }
    }

    fn run(&mut self, cfg: &KMeansConfig) -> KMeansFit {
        let mut objective = self.assign();
        let mut trace = vec![objective];
        let mut iterations = 0;
        while iterations < cfg.max_iter {
            self.reseed_empty();
            self.update_centroids();
            let next = self.assign();
            iterations += 1;
            debug_assert!(
                next <= objective * (1.0 + 1e-12),
                "Lloyd objective increased: {objective} -> {next}"
            );
            trace.push(next);
            let improvement = objective - next;
            objective = next;
            if objective == 0.0 || improvement <= cfg.tol * (objective + improvement) {
                break;
            }
        }
        KMeansFit {
            centroids: self
                .centroids
                .iter()
                .map(|c| EmbeddingVector::new(c.clone()).expect("means of finite points"))
                .collect(),
            objective_trace: trace,
            iterations,
        }
    }
}

/// k-means++ seeding. Requires at least `k` distinct points.
fn plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].to_vec());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_euclidean(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let pick = WeightedIndex::new(&d2)
            .expect("distinct points leave positive mass")
            .sample(rng);
        let c = points[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_euclidean(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Clusters each class's training embeddings and seeds a store with the
/// centroids as server prototypes, classes in canonical order.
pub fn build_initial_prototypes(
    train: &EmbeddingDataset,
    cfg: &KMeansConfig,
    store_cfg: StoreConfig,
) -> Result<PrototypeStore> {
    cfg.validate()?;
    check_dims(train.dim(), store_cfg.dim)?;
    if train.split(Split::Train).next().is_none() {
        return Err(Error::EmptyDataset);
    }
    let mut store = PrototypeStore::new(store_cfg)?;
    for class in train.classes() {
        store.register_class(class);
    }
    for class in train.classes() {
        let features: Vec<EmbeddingVector> = train
            .split(Split::Train)
            .filter(|r| r.label.id == class.id)
            .map(|r| r.embedding.clone())
            .collect();
        if features.is_empty() {
            return Err(Error::EmptyInput(format!(
                "class {:?} ({}) has no training samples",
                class.name, class.id
            )));
        }
        let class_cfg = KMeansConfig {
            seed: cfg.seed ^ u64::from(class.id.0).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ..*cfg
        };
        for centroid in kmeans(&features, &class_cfg)? {
            store.insert(class, centroid, Source::Server)?;
        }
    }
    Ok(store)
}
