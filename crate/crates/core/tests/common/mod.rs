#![allow(dead_code)]

use protofix_core::{ClassLabel, EmbeddingVector, PrototypeStore, Source, StoreConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(e) = EmbeddingVector::new(v) {
            return e;
        }
    }
}

pub fn label(c: u32) -> ClassLabel {
    ClassLabel::new(c, format!("c{c}"))
}

/// Store with `n` random server prototypes spread over `classes` classes.
pub fn random_store(rng: &mut ChaCha8Rng, n: usize, classes: u32, dim: usize) -> PrototypeStore {
    let mut store = PrototypeStore::new(StoreConfig::new(dim)).unwrap();
    for c in 0..classes {
        store.register_class(&label(c));
    }
    for _ in 0..n {
        let c = rng.random_range(0..classes);
        store.insert(&label(c), gaussian(rng, dim), Source::Server).unwrap();
    }
    store
}

/// Textbook cosine distance, computed without touching the library.
pub fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dot: f64 = a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum();
    1.0 - dot
}

/// (class id, distance) of the nearest prototype by exhaustive scan.
pub fn brute_force(store: &PrototypeStore, q: &[f64]) -> (u32, f64) {
    let mut best: Option<(f64, u32)> = None;
    for e in store.entries() {
        let d = naive_cosine(q, e.vector().as_slice());
        let cand = (d, e.class().id.0);
        if best.is_none_or(|b| cand.partial_cmp(&b) == Some(std::cmp::Ordering::Less)) {
            best = Some(cand);
        }
    }
    let (d, c) = best.unwrap();
    (c, d)
}
