use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refmia_core::dense::Matrix;
use refmia_core::query::{Query, Recommender};
use refmia_core::recsys::{train_hybrid, train_preference, HybridConfig, HybridModel, HybridVariant, PreferenceConfig};
use refmia_core::sparse::SparseMatrix;

const USERS: usize = 60;
const MEMBERS: usize = 40;
const ITEMS: usize = 100;
const PROFILES: usize = 12;

struct Fixture {
    rows: Vec<Vec<f64>>,
    user_attrs: Matrix<f64>,
    item_attrs: Matrix<f64>,
}

/// Users draw items from one of four taste clusters; attributes are a one-hot
/// profile id loosely tied to the cluster.
fn fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(USERS);
    let mut profiles = Vec::with_capacity(USERS);
    for u in 0..USERS {
        let cluster = u % 4;
        let row: Vec<f64> = (0..ITEMS)
            .map(|i| {
                let p = if i % 4 == cluster { 0.45 } else { 0.05 };
                if rng.random_bool(p) { 1.0 } else { 0.0 }
            })
            .collect();
        rows.push(row);
        profiles.push(if rng.random_bool(0.7) { cluster * 3 } else { rng.random_range(0..PROFILES) });
    }
    let user_attrs = Matrix::from_fn(USERS, PROFILES, |u, k| if profiles[u] == k { 1.0 } else { 0.0 });
    let item_attrs = Matrix::from_fn(ITEMS, 5, |i, k| if i % 5 == k { 1.0 } else { 0.0 });
    Fixture { rows, user_attrs, item_attrs }
}

fn train(fx: &Fixture, variant: HybridVariant, dropout_rate: f64, epochs: usize, seed: u64) -> HybridModel<f64> {
    let sparse = SparseMatrix::from_dense(&fx.rows[..MEMBERS]).unwrap();
    let pref_cfg = PreferenceConfig { latent: 32, epochs: 150, reg: 0.0, seed, ..Default::default() };
    let pref = train_preference(&sparse, (0..MEMBERS).collect(), &pref_cfg).unwrap();
    let members = fx.user_attrs.select_rows(&(0..MEMBERS).collect::<Vec<_>>());
    let cfg = HybridConfig {
        variant,
        dropout_rate,
        epochs,
        hidden: 64,
        output: 32,
        batch_size: 16,
        seed,
        ..Default::default()
    };
    train_hybrid(pref, &members, &fx.item_attrs, &cfg).unwrap()
}

fn history(row: &[f64]) -> Vec<usize> {
    row.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, _)| i).collect()
}

fn profile(k: usize) -> Vec<f64> {
    (0..PROFILES).map(|j| if j == k { 1.0 } else { 0.0 }).collect()
}

#[test]
fn dropout_training_loss_halves() {
    let fx = fixture(1);
    let model = train(&fx, HybridVariant::DropoutHybrid, 0.5, 200, 3);
    let losses = &model.metadata().losses;
    assert_eq!(losses.len(), 200);
    let (first, last) = (losses[0], *losses.last().unwrap());
    assert!(last <= 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn cold_start_lists_vary_across_profiles() {
    let fx = fixture(2);
    for variant in [HybridVariant::DropoutHybrid, HybridVariant::GatedHybrid] {
        let model = train(&fx, variant, 0.5, 150, 4);
        let lists: HashSet<Vec<usize>> = (0..PROFILES)
            .map(|k| {
                let attrs = profile(k);
                let list = model.recommend(&Query::attributes_only(&attrs, 10)).unwrap();
                assert_eq!(list.len(), 10);
                list.item_ids().to_vec()
            })
            .collect();
        assert!(lists.len() > 1, "{variant}: all {PROFILES} profiles got the same list");
    }
}

#[test]
fn zero_dropout_cold_start_is_fixed_per_profile() {
    let fx = fixture(3);
    let model = train(&fx, HybridVariant::DropoutHybrid, 0.0, 60, 5);
    let attrs = profile(2);
    let a = model.score_all(None, &attrs).unwrap();
    let b = model.score_all(None, &attrs).unwrap();
    assert_eq!(a, b);
    let list = model.recommend(&Query::attributes_only(&attrs, 10)).unwrap();
    assert_eq!(list.len(), 10);
    assert!(list.scores().windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn same_attributes_different_histories_differ() {
    let fx = fixture(4);
    let model = train(&fx, HybridVariant::DropoutHybrid, 0.1, 150, 6);
    let attrs = profile(0);
    // users from clusters 0 and 1
    let h0 = history(&fx.rows[0]);
    let h1 = history(&fx.rows[1]);
    let a = model.recommend(&Query::with_history(&h0, &attrs, 10)).unwrap();
    let b = model.recommend(&Query::with_history(&h1, &attrs, 10)).unwrap();
    assert_ne!(a.item_ids(), b.item_ids());
}

#[test]
fn top_five_contract_and_determinism() {
    let fx = fixture(5);
    let model = train(&fx, HybridVariant::GatedHybrid, 0.3, 80, 7);
    let attrs = fx.user_attrs.row(50).to_vec();
    let h = history(&fx.rows[50]);
    let a = model.recommend(&Query::with_history(&h, &attrs, 5)).unwrap();
    let b = model.recommend(&Query::with_history(&h, &attrs, 5)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 5);
    assert_eq!(a.item_ids().iter().collect::<HashSet<_>>().len(), 5);
    assert!(a.scores().windows(2).all(|w| w[0] >= w[1]));
    let scores = model.score_all(Some(&h), &attrs).unwrap();
    let mut oracle: Vec<usize> = (0..ITEMS).collect();
    oracle.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then(x.cmp(&y)));
    assert_eq!(a.item_ids(), &oracle[..5]);
    assert!(model.gate_value().is_some());
}

#[test]
fn exclusion_and_oversized_n() {
    let fx = fixture(6);
    let model = train(&fx, HybridVariant::DropoutHybrid, 0.5, 30, 8);
    let attrs = fx.user_attrs.row(0).to_vec();
    let h = history(&fx.rows[0]);
    let mut q = Query::with_history(&h, &attrs, 10);
    q.exclude_history = true;
    let list = model.recommend(&q).unwrap();
    assert!(list.item_ids().iter().all(|i| !h.contains(i)));
    q.n = ITEMS - h.len() + 1;
    assert!(model.recommend(&q).is_err());
    assert!(model.recommend(&Query::attributes_only(&attrs[..3], 5)).is_err());
}

#[test]
fn members_overlap_history_more_on_overfit_model() {
    let fx = fixture(7);
    let model = train(&fx, HybridVariant::DropoutHybrid, 0.0, 400, 9);
    let overlap = |users: std::ops::Range<usize>| {
        let mut total = 0.0;
        let count = users.len() as f64;
        for u in users {
            let h = history(&fx.rows[u]);
            let attrs = fx.user_attrs.row(u).to_vec();
            let list = model.recommend(&Query::with_history(&h, &attrs, 10)).unwrap();
            total += list.item_ids().iter().filter(|i| h.contains(i)).count() as f64 / 10.0;
        }
        total / count
    };
    let members = overlap(0..MEMBERS);
    let non_members = overlap(MEMBERS..USERS);
    assert!(members > non_members, "member overlap {members} vs non-member {non_members}");
}

#[test]
fn checkpoint_round_trip() {
    let fx = fixture(8);
    let model = train(&fx, HybridVariant::GatedHybrid, 0.2, 40, 10);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let loaded = HybridModel::<f64>::load(&path).unwrap();
    assert_eq!(loaded.variant(), HybridVariant::GatedHybrid);
    assert_eq!(loaded.metadata(), model.metadata());
    let attrs = profile(5);
    let h = history(&fx.rows[45]);
    for query in [Query::attributes_only(&attrs, 10), Query::with_history(&h, &attrs, 10)] {
        assert_eq!(model.recommend(&query).unwrap(), loaded.recommend(&query).unwrap());
    }
}

#[test]
fn same_seed_same_model() {
    let fx = fixture(9);
    let a = train(&fx, HybridVariant::DropoutHybrid, 0.5, 30, 11);
    let b = train(&fx, HybridVariant::DropoutHybrid, 0.5, 30, 11);
    assert_eq!(a.metadata().losses, b.metadata().losses);
    let attrs = profile(1);
    assert_eq!(a.score_all(None, &attrs).unwrap(), b.score_all(None, &attrs).unwrap());
}
