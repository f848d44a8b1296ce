use std::fs;

use proptest::prelude::*;
use protofix::pemb::{matrix_path, meta_path, read_embeddings, write_embeddings};
use protofix::store_doc::{export_store, import_store, store_from_json, store_to_json};
use protofix::Error;
use protofix_core::{
    predict_readonly, ClassLabel, EmbeddingDataset, EmbeddingVector, PrototypeStore, Record, Source,
    Split, StoreConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_row(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.iter().map(|x| f64::from(x / n)).collect()
}

fn dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: u32) -> EmbeddingDataset {
    let records = (0..n)
        .map(|i| {
            let c = i as u32 % classes;
            Record {
                id: format!("r{i:05}"),
                embedding: EmbeddingVector::new(unit_row(rng, dim)).unwrap(),
                label: ClassLabel::new(c, format!("class {c}")),
                split: Split::ALL[i % 3],
                image: (i % 2 == 0).then(|| format!("img/{i}.png")),
            }
        })
        .collect();
    EmbeddingDataset::new(dim, records).unwrap()
}

#[test]
fn large_matrix_round_trips_at_f32_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = dataset(&mut rng, 1000, 384, 10);
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("big");
    write_embeddings(&data, &base).unwrap();
    assert_eq!(fs::metadata(matrix_path(&base)).unwrap().len(), 16 + 1000 * 384 * 4);
    let back = read_embeddings(&base).unwrap();
    assert_eq!(back.len(), 1000);
    for (a, b) in data.records().iter().zip(back.records()) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.label, b.label);
        assert_eq!(a.split, b.split);
        assert_eq!(a.image, b.image);
        for (x, y) in a.embedding.as_slice().iter().zip(b.embedding.as_slice()) {
            assert_eq!(*x as f32, *y as f32);
        }
    }
    write_embeddings(&back, &dir.path().join("again")).unwrap();
    assert_eq!(fs::read(matrix_path(&base)).unwrap(), fs::read(matrix_path(&dir.path().join("again"))).unwrap());
}

#[test]
fn store_round_trip_preserves_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = PrototypeStore::new(StoreConfig::new(32)).unwrap();
    for i in 0..300u32 {
        let source = if i % 4 == 0 { Source::User } else { Source::Server };
        let v = EmbeddingVector::new(unit_row(&mut rng, 32)).unwrap();
        store.insert(&ClassLabel::new(i % 12, format!("k{}", i % 12)), v, source).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.json");
    export_store(&store, &path).unwrap();
    let back = import_store(&path).unwrap();
    assert_eq!(back, store);
    for _ in 0..100 {
        let q = EmbeddingVector::new(unit_row(&mut rng, 32)).unwrap();
        assert_eq!(predict_readonly(&store, &q, 5).unwrap(), predict_readonly(&back, &q, 5).unwrap());
    }
}

fn write_raw(dir: &std::path::Path, matrix: &[u8], meta: &str) -> std::path::PathBuf {
    let base = dir.join("raw");
    fs::write(matrix_path(&base), matrix).unwrap();
    fs::write(meta_path(&base), meta).unwrap();
    base
}

fn header(count: u32, dim: u32) -> Vec<u8> {
    let mut h = b"PEMB".to_vec();
    h.extend(1u32.to_le_bytes());
    h.extend(count.to_le_bytes());
    h.extend(dim.to_le_bytes());
    h
}

const META1: &str = "{\"id\":\"a\",\"label\":\"x\",\"label_id\":0,\"split\":\"test\"}\n";

#[test]
fn malformed_inputs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut ok = header(1, 2);
    ok.extend(1.0f32.to_le_bytes());
    ok.extend(0.0f32.to_le_bytes());
    assert!(read_embeddings(&write_raw(d, &ok, META1)).is_ok());

    let mut bad_magic = ok.clone();
    bad_magic[0] = b'X';
    let truncated = &ok[..ok.len() - 1];
    let mut bad_version = ok.clone();
    bad_version[4] = 2;
    let cases: Vec<(&[u8], &str)> = vec![
        (&bad_magic, META1),
        (truncated, META1),
        (&bad_version, META1),
        (&ok, ""),
        (&ok, "{not json}\n"),
        (&ok, "{\"id\":\"a\",\"label\":\"x\",\"label_id\":1,\"split\":\"test\"}\n"),
        (&ok, "{\"id\":\"a\",\"label\":\"x\",\"label_id\":0,\"split\":\"holdout\"}\n"),
    ];
    for (i, (matrix, meta)) in cases.into_iter().enumerate() {
        let res = read_embeddings(&write_raw(d, matrix, meta));
        assert!(matches!(res, Err(Error::Format(_))), "case {i}: {res:?}");
    }
    assert!(matches!(read_embeddings(&d.join("absent")), Err(Error::Io { .. })));
    assert!(matches!(store_from_json("[]"), Err(Error::Format(_))));
}

fn arb_store() -> impl Strategy<Value = PrototypeStore> {
    (1usize..6, prop::collection::vec((0u32..4, any::<bool>(), prop::collection::vec(-1.0f64..1.0, 5)), 0..20))
        .prop_map(|(extra, rows)| {
            let mut store = PrototypeStore::new(StoreConfig {
                dim: 5,
                budget: protofix_core::Budget::Limited(rows.len() + extra),
                protect_server: false,
            })
            .unwrap();
            for (c, user, mut v) in rows {
                v[0] += 2.0;
                let src = if user { Source::User } else { Source::Server };
                store.insert(&ClassLabel::new(c, format!("n{c}")), EmbeddingVector::new(v).unwrap(), src).unwrap();
            }
            store
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn store_json_round_trip(store in arb_store()) {
        let text = store_to_json(&store);
        let back = store_from_json(&text).unwrap();
        prop_assert_eq!(&back, &store);
        prop_assert_eq!(store_to_json(&back), text);
    }

    #[test]
    fn embeddings_round_trip(seed in any::<u64>(), n in 1usize..40, dim in 1usize..20, classes in 1u32..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = classes.min(n as u32);
        let data = dataset(&mut rng, n, dim, classes);
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("p");
        write_embeddings(&data, &base).unwrap();
        let back = read_embeddings(&base).unwrap();
        prop_assert_eq!(back.len(), data.len());
        for (a, b) in data.records().iter().zip(back.records()) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(&a.label, &b.label);
            let (na, nb): (Vec<f32>, Vec<f32>) = (
                a.embedding.as_slice().iter().map(|x| *x as f32).collect(),
                b.embedding.as_slice().iter().map(|x| *x as f32).collect(),
            );
            // Rows renormalised on read move by at most float rounding.
            for (x, y) in na.iter().zip(&nb) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }
    }
}
