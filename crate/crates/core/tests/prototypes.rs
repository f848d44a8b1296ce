use protofix_core::dataset::synthetic_class_means;
use protofix_core::{build_initial_prototypes, cosine_distance, generate_synthetic, KMeansConfig, StoreConfig, SyntheticConfig};

#[test]
fn tight_clusters_give_prototypes_near_their_class_mean() {
    let cfg = SyntheticConfig {
        classes: 5,
        dim: 32,
        per_class_train: 60,
        per_class_test: 10,
        sigma: 0.05,
        seed: 21,
        ..Default::default()
    };
    let data = generate_synthetic(&cfg).unwrap();
    let means = synthetic_class_means(&cfg).unwrap();
    let kcfg = KMeansConfig { k: 3, seed: 4, ..Default::default() };
    let store = build_initial_prototypes(&data, &kcfg, StoreConfig::new(cfg.dim)).unwrap();
    assert_eq!(store.len(), 15);
    for e in store.entries() {
        let mean = &means[e.class().id.0 as usize];
        let d = cosine_distance(e.vector(), mean).unwrap();
        assert!(d < 0.2, "prototype {} of {} is {d} away", e.proto_id(), e.class());
    }
    assert_eq!(store.stats().per_class.values().copied().collect::<Vec<_>>(), vec![3; 5]);
}

#[test]
fn same_seed_same_store() {
    let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let kcfg = KMeansConfig { k: 4, seed: 99, ..Default::default() };
    let a = build_initial_prototypes(&data, &kcfg, StoreConfig::new(data.dim())).unwrap();
    let b = build_initial_prototypes(&data, &kcfg, StoreConfig::new(data.dim())).unwrap();
    assert_eq!(a, b);
}
