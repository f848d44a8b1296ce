mod common;

use common::{gaussian, label, random_store, rng};
use protofix_core::{
    correct, predict_readonly, Budget, CorrectionConfig, EmbeddingVector, Error, PrototypeStore,
    Source,
};
use rand::seq::SliceRandom;
use rand::Rng;

const DIM: usize = 24;
const CLASSES: u32 = 6;

fn queries(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<EmbeddingVector> {
    (0..n).map(|_| gaussian(r, DIM)).collect()
}

#[test]
fn corrected_sample_predicts_its_label_at_distance_zero() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let mut store = random_store(&mut r, 30, CLASSES, DIM);
        for _ in 0..40 {
            let x = gaussian(&mut r, DIM);
            let y = label(r.random_range(0..CLASSES));
            let out = correct(&mut store, &x, &y, CorrectionConfig::default()).unwrap();
            assert_eq!(out.prediction_after.class, y);
            assert_eq!(out.prediction_after.distance, 0.0);
            let again = predict_readonly(&store, &x, 1).unwrap();
            assert_eq!(again.class, y);
            assert_eq!(again.distance, 0.0);
        }
    }
}

#[test]
fn a_correction_only_changes_queries_it_wins() {
    let mut r = rng(77);
    let mut store = random_store(&mut r, 40, CLASSES, DIM);
    let probes = queries(&mut r, 300);
    for _ in 0..100 {
        let before: Vec<_> = probes.iter().map(|q| predict_readonly(&store, q, 1).unwrap()).collect();
        let x = gaussian(&mut r, DIM);
        let out = correct(&mut store, &x, &label(r.random_range(0..CLASSES)), CorrectionConfig::default()).unwrap();
        for (q, old) in probes.iter().zip(&before) {
            let new = predict_readonly(&store, q, 1).unwrap();
            if new.proto_id != out.added_proto_id {
                assert_eq!(new.class, old.class);
                assert_eq!(new.proto_id, old.proto_id);
                assert_eq!(new.distance, old.distance);
            }
        }
    }
}

#[test]
fn correction_order_does_not_matter_without_budget() {
    let mut r = rng(404);
    let initial = random_store(&mut r, 25, CLASSES, DIM);
    let batch: Vec<(EmbeddingVector, _)> = (0..30)
        .map(|_| (gaussian(&mut r, DIM), label(r.random_range(0..CLASSES))))
        .collect();
    let probes = queries(&mut r, 200);

    let mut reference: Option<Vec<(u32, f64)>> = None;
    let mut order: Vec<usize> = (0..batch.len()).collect();
    for _ in 0..5 {
        order.shuffle(&mut r);
        let mut store = initial.clone();
        for &i in &order {
            correct(&mut store, &batch[i].0, &batch[i].1, CorrectionConfig::default()).unwrap();
        }
        let got: Vec<(u32, f64)> = probes
            .iter()
            .map(|q| {
                let p = predict_readonly(&store, q, 1).unwrap();
                (p.class.id.0, p.distance)
            })
            .collect();
        match &reference {
            None => reference = Some(got),
            Some(want) => assert_eq!(&got, want),
        }
    }
}

#[test]
fn samples_that_break_are_won_by_user_prototypes() {
    let mut r = rng(8);
    let mut store = random_store(&mut r, 40, CLASSES, DIM);
    let probes: Vec<_> = queries(&mut r, 400)
        .into_iter()
        .map(|q| {
            let c = predict_readonly(&store, &q, 1).unwrap().class;
            (q, c)
        })
        .collect();
    for _ in 0..60 {
        let x = gaussian(&mut r, DIM);
        correct(&mut store, &x, &label(r.random_range(0..CLASSES)), CorrectionConfig::default()).unwrap();
    }
    for (q, was) in &probes {
        let now = predict_readonly(&store, q, 1).unwrap();
        if now.class != *was {
            assert_eq!(store.entry(now.proto_id).unwrap().source(), Source::User);
        }
    }
}

#[test]
fn unknown_label_needs_open_class() {
    let mut r = rng(1);
    let mut store = random_store(&mut r, 5, 2, 4);
    let x = gaussian(&mut r, 4);
    let before = store.clone();
    assert_eq!(
        correct(&mut store, &x, &label(9), CorrectionConfig::default()),
        Err(Error::UnknownClass(label(9).id))
    );
    assert_eq!(store, before);
    let out = correct(&mut store, &x, &label(9), CorrectionConfig { open_class: true }).unwrap();
    assert_eq!(out.prediction_after.class, label(9));
}

#[test]
fn budget_is_respected_under_a_stream_of_corrections() {
    let mut r = rng(12);
    let mut store = random_store(&mut r, 10, 3, 8);
    store.set_budget(Budget::Limited(12)).unwrap();
    for _ in 0..50 {
        let out = correct(&mut store, &gaussian(&mut r, 8), &label(r.random_range(0..3)), CorrectionConfig::default()).unwrap();
        assert!(store.len() <= 12);
        assert_eq!(out.store_size_after, store.len());
    }
}

#[test]
fn protected_server_prototypes_survive() {
    let mut r = rng(13);
    let server = random_store(&mut r, 6, 3, 8);
    let mut parts = server.to_parts();
    parts.protect_server = true;
    parts.budget = Budget::Limited(8);
    let mut store = PrototypeStore::from_parts(parts).unwrap();
    for _ in 0..30 {
        correct(&mut store, &gaussian(&mut r, 8), &label(r.random_range(0..3)), CorrectionConfig::default()).unwrap();
        assert_eq!(store.stats().server, 6);
        assert!(store.len() <= 8);
    }
}
