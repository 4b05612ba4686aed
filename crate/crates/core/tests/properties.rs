use proptest::prelude::*;
use refmia_core::analysis::{f, f_prime};
use refmia_core::attack::relative_metric;
use refmia_core::dataset::{
    encode_attributes, parse_interactions, split_membership, uncovered_items, AttributeEncoder, AttributeSchema,
    ColumnSpec, InteractionLayout, Interactions, RawTable,
};
use refmia_core::dense::Matrix;
use refmia_core::embedding::aggregate_items;
use refmia_core::eval::roc_curve;
use refmia_core::query::top_n;

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, 3)
}

/// Random orthogonal 3x3 matrix from three Euler angles.
fn rotation(a: f64, b: f64, c: f64) -> [[f64; 3]; 3] {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    let rz = [[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]];
    let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cc, -sc], [0.0, sc, cc]];
    let mul = |p: [[f64; 3]; 3], q: [[f64; 3]; 3]| {
        let mut o = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                o[i][j] = (0..3).map(|k| p[i][k] * q[k][j]).sum();
            }
        }
        o
    };
    mul(mul(rz, ry), rx)
}

fn apply(r: &[[f64; 3]; 3], v: &[f64]) -> Vec<f64> {
    (0..3).map(|i| (0..3).map(|k| r[i][k] * v[k]).sum()).collect()
}

fn well_posed(_h: &[f64], t: &[f64], r: &[f64]) -> bool {
    let d: f64 = t.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    d > 1e-3
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metric_scale_invariant(h in vec3(), t in vec3(), r in vec3(), c in 0.01..100.0f64) {
        prop_assume!(well_posed(&h, &t, &r));
        let base = relative_metric(&h, &t, &r).unwrap();
        let s = |v: &[f64]| v.iter().map(|x| c * x).collect::<Vec<_>>();
        let scaled = relative_metric(&s(&h), &s(&t), &s(&r)).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn metric_rotation_invariant(h in vec3(), t in vec3(), r in vec3(), a in 0.0..6.3f64, b in 0.0..6.3f64, g in 0.0..6.3f64) {
        prop_assume!(well_posed(&h, &t, &r));
        let rot = rotation(a, b, g);
        let base = relative_metric(&h, &t, &r).unwrap();
        let turned = relative_metric(&apply(&rot, &h), &apply(&rot, &t), &apply(&rot, &r)).unwrap();
        prop_assert!((base - turned).abs() <= 1e-9 * base.max(1.0));
    }
}

proptest! {
    #[test]
    fn metric_non_negative_and_zero_iff_equal(h in vec3(), t in vec3(), r in vec3()) {
        let rho = relative_metric(&h, &t, &r).unwrap();
        prop_assert!(rho >= 0.0);
        prop_assert_eq!(relative_metric(&t, &t, &r).unwrap() == 0.0, t != r);
    }

    #[test]
    fn collinear_metric_is_f_of_fraction(x in 0.0..0.95f64, m in 0.1..10.0f64, dir in vec3()) {
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let unit: Vec<f64> = dir.iter().map(|v| v / norm).collect();
        let h = vec![0.0; 3];
        let t: Vec<f64> = unit.iter().map(|u| u * x * m).collect();
        let r: Vec<f64> = unit.iter().map(|u| u * m).collect();
        let rho = relative_metric(&h, &t, &r).unwrap();
        prop_assert!((rho - f(x).unwrap()).abs() <= 1e-9 * rho.max(1.0));
    }

    #[test]
    fn f_increasing_and_convex(a in 0.0..0.98f64, b in 0.0..0.98f64) {
        prop_assume!((a - b).abs() > 1e-6);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(f(lo).unwrap() < f(hi).unwrap());
        let mid = f(0.5 * (lo + hi)).unwrap();
        prop_assert!(mid < 0.5 * (f(lo).unwrap() + f(hi).unwrap()));
        prop_assert!(f_prime(lo).unwrap() > 0.0);
    }

    #[test]
    fn aggregate_matches_naive_mean(rows in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 4), 12), ids in prop::collection::vec(0usize..12, 1..10)) {
        let w = Matrix::from_rows(&rows).unwrap();
        let v = aggregate_items(&w, &ids).unwrap();
        for k in 0..4 {
            let mut s = 0.0;
            for &i in &ids {
                s += rows[i][k];
            }
            prop_assert!((v.as_slice()[k] - s / ids.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_permutation_invariant_and_linear(rows in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 4), 12), ids in prop::collection::vec(0usize..12, 1..10), c in -4.0..4.0f64) {
        let w = Matrix::from_rows(&rows).unwrap();
        let base = aggregate_items(&w, &ids).unwrap();
        let mut rev = ids.clone();
        rev.reverse();
        let permuted = aggregate_items(&w, &rev).unwrap();
        for (a, b) in base.as_slice().iter().zip(permuted.as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let scaled = aggregate_items(&w.map(|x| c * x), &ids).unwrap();
        for (a, b) in base.scaled(c).as_slice().iter().zip(scaled.as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_round_trip(values in prop::collection::vec((0usize..3, 0usize..4), 1..30)) {
        let colors = ["red", "green", "blue"];
        let sizes = ["s", "m", "l", "xl"];
        let rows: Vec<Vec<String>> = values
            .iter()
            .enumerate()
            .map(|(k, &(c, s))| vec![k.to_string(), colors[c].to_string(), sizes[s].to_string()])
            .collect();
        let table = RawTable::new(vec!["id".into(), "color".into(), "size".into()], rows.clone()).unwrap();
        let schema = AttributeSchema {
            id_column: "id".into(),
            columns: vec![ColumnSpec::categorical("color"), ColumnSpec::categorical("size")],
        };
        let encoder = AttributeEncoder::fit(&table, &schema, None).unwrap();
        let encoded = encode_attributes::<f64>(&table, &schema).unwrap();
        for (k, row) in rows.iter().enumerate() {
            let r = encoded.row(k);
            prop_assert_eq!(encoder.decode_row(r), vec![row[1].clone(), row[2].clone()]);
            for col in encoded.schema() {
                let block = &r[col.offset..col.offset + col.cardinality()];
                prop_assert_eq!(block.iter().sum::<f64>(), 1.0);
            }
        }
    }

    #[test]
    fn split_invariants(pairs in prop::collection::vec((0usize..60, 0usize..25), 200..400), seed in 0u64..1000) {
        let mut all = pairs.clone();
        // every item reachable
        all.extend((0..25).map(|i| (i % 60, i)));
        let data = Interactions::<f64>::from_pairs(60, 25, all).unwrap();
        if let Ok(split) = split_membership(&data, 0.4, 0.2, seed) {
            prop_assert!(split.is_disjoint());
            prop_assert!(uncovered_items(&data, &split.attacker_users).is_empty());
            for &u in split.member_users.iter().chain(&split.nonmember_users) {
                prop_assert!(!data.row(u).is_empty());
            }
            prop_assert_eq!(split_membership(&data, 0.4, 0.2, seed).unwrap(), split);
        }
    }

    #[test]
    fn roc_invariant_under_monotone_transform(scores in prop::collection::vec(0.0..5.0f64, 4..60), labels in prop::collection::vec(any::<bool>(), 60)) {
        let labels = &labels[..scores.len()];
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let neg: Vec<f64> = scores.iter().map(|r| -r).collect();
        let inv: Vec<f64> = scores.iter().map(|r| 1.0 / (1.0 + r)).collect();
        let a = roc_curve(&neg, labels).unwrap();
        let b = roc_curve(&inv, labels).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            prop_assert_eq!((p.fpr, p.tpr), (q.fpr, q.tpr));
        }
        prop_assert!(a.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
    }

    #[test]
    fn top_n_matches_sort_oracle(scores in prop::collection::vec(prop_oneof![Just(0.5f64), 0.0..1.0f64], 5..40), n in 1usize..5) {
        let list = top_n(&scores, n, &[]).unwrap();
        let mut oracle: Vec<usize> = (0..scores.len()).collect();
        oracle.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        prop_assert_eq!(list.item_ids(), &oracle[..n]);
        prop_assert!(list.scores().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn binarization_idempotent(pairs in prop::collection::vec((1usize..15, 1usize..20, 1u8..6), 1..100)) {
        let text: String = pairs.iter().map(|(u, i, r)| format!("{u}\t{i}\t{r}\t0\n")).collect();
        let layout = InteractionLayout::movielens_100k();
        let once = parse_interactions::<f64>(&text, "mem", &layout).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.data");
        once.write(&path, &layout).unwrap();
        let again = parse_interactions::<f64>(&std::fs::read_to_string(&path).unwrap(), "mem", &layout).unwrap();
        prop_assert_eq!(&once, &again);
        let mut distinct: Vec<(usize, usize)> = pairs.iter().map(|&(u, i, _)| (u, i)).collect();
        distinct.sort_unstable();
        distinct.dedup();
        prop_assert_eq!(once.nnz(), distinct.len());
    }
}
