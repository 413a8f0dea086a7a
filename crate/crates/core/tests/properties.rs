use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use proptest::prelude::*;

use textdate::corpus::{extract_shingles, read_documents};
use textdate::knn::{KnnConfig, KnnModel};
use textdate::metrics::{broder_distance, dist_alpha, sim_alpha, sim_gamma, CountVector};
use textdate::mt::{MtConfig, MtIndex};
use textdate::{Document, Shingle, ShingleIndex, VectorMode};

fn doc_strategy(vocab: u8, max_len: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0..vocab).prop_map(|i| format!("w{i}")), 2..max_len)
}

fn doc(id: &str, tokens: Vec<String>) -> Document {
    Document::new(id, Some(1200), tokens)
}

fn vector(d: &Document, k: usize, mode: VectorMode) -> CountVector {
    CountVector::from_document(d, k, mode)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn distances_are_symmetric_and_vanish_on_the_diagonal(
        a in doc_strategy(5, 14),
        b in doc_strategy(5, 14),
        k in 1usize..3,
        alpha in 0.3f64..2.0,
    ) {
        let (x, y) = (doc("x", a), doc("y", b));
        for mode in [VectorMode::Raw, VectorMode::Normalized, VectorMode::Incidence] {
            let (p, q) = (vector(&x, k, mode), vector(&y, k, mode));
            prop_assert_eq!(dist_alpha(&p, &q, alpha).unwrap(), dist_alpha(&q, &p, alpha).unwrap());
            prop_assert_eq!(dist_alpha(&p, &p, alpha).unwrap(), 0.0);
            prop_assert_eq!(sim_gamma(&p, &q, alpha).unwrap(), sim_gamma(&q, &p, alpha).unwrap());
        }
        prop_assert_eq!(broder_distance(&x, &y, k).unwrap(), broder_distance(&y, &x, k).unwrap());
        prop_assert_eq!(broder_distance(&x, &x, k).unwrap(), 0.0);
    }

    #[test]
    fn set_distances_obey_the_triangle_inequality(
        a in doc_strategy(5, 12),
        b in doc_strategy(5, 12),
        c in doc_strategy(5, 12),
        k in 1usize..3,
    ) {
        let docs = [doc("a", a), doc("b", b), doc("c", c)];
        let inc: Vec<CountVector> = docs.iter().map(|d| vector(d, k, VectorMode::Incidence)).collect();
        for i in 0..3 {
            for j in 0..3 {
                for l in 0..3 {
                    let br = |u: usize, v: usize| broder_distance(&docs[u], &docs[v], k).unwrap();
                    prop_assert!(br(i, l) <= br(i, j) + br(j, l));
                    // on 0/1 vectors dist_alpha is the Jaccard distance
                    let da = |u: usize, v: usize| dist_alpha(&inc[u], &inc[v], 1.0).unwrap();
                    prop_assert!(da(i, l) <= da(i, j) + da(j, l));
                    prop_assert_eq!(da(i, l), br(i, l));
                }
            }
        }
    }

    #[test]
    fn similarities_ignore_vocabulary_labels(
        a in doc_strategy(6, 16),
        b in doc_strategy(6, 16),
        shift in 1u8..6,
        k in 1usize..3,
    ) {
        let relabel = |t: &Vec<String>| -> Vec<String> {
            t.iter().map(|w| format!("v{}", (w[1..].parse::<u8>().unwrap() + shift) % 6)).collect()
        };
        let (x, y) = (doc("x", a.clone()), doc("y", b.clone()));
        let (x2, y2) = (doc("x", relabel(&a)), doc("y", relabel(&b)));
        for mode in [VectorMode::Raw, VectorMode::Normalized, VectorMode::Incidence] {
            let (p, q) = (vector(&x, k, mode), vector(&y, k, mode));
            let (p2, q2) = (vector(&x2, k, mode), vector(&y2, k, mode));
            prop_assert!((sim_gamma(&p, &q, 1.0).unwrap() - sim_gamma(&p2, &q2, 1.0).unwrap()).abs() < 1e-14);
            prop_assert!((sim_alpha(&p, &q, 0.5).unwrap() - sim_alpha(&p2, &q2, 0.5).unwrap()).abs() < 1e-14);
        }
        prop_assert_eq!(broder_distance(&x, &y, k).unwrap(), broder_distance(&x2, &y2, k).unwrap());
    }

    #[test]
    fn sim_gamma_ignores_count_scale(
        values in prop::collection::vec(0u32..6, 3..10),
        other in prop::collection::vec(0u32..6, 3..10),
        c in 2u32..200,
        gamma in 0.3f64..2.0,
    ) {
        prop_assume!(values.iter().any(|&v| v > 0) && other.iter().any(|&v| v > 0));
        let n = values.len().max(other.len());
        let pad = |v: &[u32], s: f64| -> Vec<f64> { (0..n).map(|i| f64::from(v.get(i).copied().unwrap_or(0)) * s).collect() };
        let p = CountVector::from_values(&pad(&values, 1.0), VectorMode::Raw).unwrap();
        let pc = CountVector::from_values(&pad(&values, f64::from(c)), VectorMode::Raw).unwrap();
        let q = CountVector::from_values(&pad(&other, 1.0), VectorMode::Raw).unwrap();
        let (s1, s2) = (sim_gamma(&p, &q, gamma).unwrap(), sim_gamma(&pc, &q, gamma).unwrap());
        prop_assert!((s1 - s2).abs() < 1e-12, "{} vs {}", s1, s2);
    }

    #[test]
    fn mt_factor_scaling_leaves_dates_unchanged(
        seed_docs in prop::collection::vec((doc_strategy(4, 15), 1200i32..1240), 8..30),
        target in doc_strategy(5, 20),
        c in prop::sample::select(vec![1e-6, 1e-3, 0.37, 3.0, 1e4, 1e9]),
    ) {
        let train: Vec<Document> = seed_docs
            .into_iter()
            .enumerate()
            .map(|(i, (t, y))| Document::new(format!("d{i}"), Some(y), t))
            .collect();
        prop_assume!(train.iter().map(|d| d.year).collect::<std::collections::BTreeSet<_>>().len() >= 2);
        let index = MtIndex::build(&train).unwrap();
        let base = MtConfig::default();
        let scaled = MtConfig { m1: base.m1.scaled(c), m2: base.m2.scaled(c), m3: base.m3.scaled(c), ..base.clone() };
        let target = doc("t", target);
        match (index.mt_date(&target, &base), index.mt_date(&target, &scaled)) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.year_hat, b.year_hat);
                // the curve itself scales by c^3
                let (ca, cb) = (a.diagnostics.curve.unwrap(), b.diagnostics.curve.unwrap());
                for ((ya, va), (yb, vb)) in ca.iter().zip(&cb) {
                    prop_assert_eq!(ya, yb);
                    prop_assert!((va * c.powi(3) - vb).abs() <= 1e-9 * vb.abs().max(1e-300));
                }
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a.is_ok(), b.is_ok()),
        }
    }
}

#[test]
fn raw_count_dist_alpha_breaks_the_triangle_inequality() {
    // "a", "a a", "a a a": 4/7 > 1/3 + 1/7.
    let v = |n: f64| CountVector::from_values(&[n], VectorMode::Raw).unwrap();
    let (x, y, z) = (v(1.0), v(2.0), v(3.0));
    let (xz, xy, yz) = (dist_alpha(&x, &z, 1.0).unwrap(), dist_alpha(&x, &y, 1.0).unwrap(), dist_alpha(&y, &z, 1.0).unwrap());
    assert!((xz - 4.0 / 7.0).abs() < 1e-15);
    assert!((xy - 1.0 / 3.0).abs() < 1e-15);
    assert!((yz - 1.0 / 7.0).abs() < 1e-15);
    assert!(xz > xy + yz);
}

#[test]
fn sim_alpha_is_not_scale_invariant() {
    let p = CountVector::from_values(&[1.0, 1.0], VectorMode::Raw).unwrap();
    let p3 = CountVector::from_values(&[3.0, 3.0], VectorMode::Raw).unwrap();
    let q = CountVector::from_values(&[1.0, 0.0], VectorMode::Raw).unwrap();
    assert_eq!(sim_alpha(&p, &q, 1.0).unwrap(), 0.5);
    assert_eq!(sim_alpha(&p3, &q, 1.0).unwrap(), 3.0 / 16.0);
    assert!((sim_gamma(&p, &q, 1.0).unwrap() - sim_gamma(&p3, &q, 1.0).unwrap()).abs() < 1e-15);
}

#[test]
fn wide_bandwidths_give_the_training_mean() {
    let years = [1101, 1150, 1203, 1290, 1244, 1177];
    let train: Vec<Document> = years
        .iter()
        .enumerate()
        .map(|(i, &y)| Document::from_words(format!("d{i}"), Some(y), &format!("a b c{i} d{}", i % 2)))
        .collect();
    let config = KnnConfig::reference(&[1], train.len());
    let model = KnnModel::new(&train, &config.distances).unwrap();
    let target = Document::from_words("t", None, "a c3 d1 e");
    let mean = years.iter().map(|&y| f64::from(y)).sum::<f64>() / years.len() as f64;
    let est = model.knn_estimate(&target, &config, &[1e9]).unwrap().year_hat;
    assert!((est - mean).abs() < 1e-6, "{est} vs {mean}");
    let tuned = model.date(&target, &config).unwrap().year_hat;
    assert!((1101.0..=1290.0).contains(&tuned));
}

#[test]
fn charter_index_counts_its_number_token() {
    let file = std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/charter.jsonl")).unwrap();
    let (docs, problems) = read_documents(&file[..], None, true).unwrap();
    assert!(problems.is_empty());
    assert_eq!(docs[0].year, Some(1230));
    let index = Arc::new(ShingleIndex::build(&docs, 1).unwrap());
    assert_eq!(index.counts(&Shingle::new(&["!NUM!"])), BTreeMap::from([(1230, 1)]));
    assert_eq!(index.slots_per_year()[&1230], 190);

    let shingles = extract_shingles(&docs[0], 2);
    assert_eq!(shingles.len(), 189);
    let mut freq: HashMap<&[String], usize> = HashMap::new();
    for s in &shingles {
        *freq.entry(s.words()).or_default() += 1;
    }
    let index2 = ShingleIndex::build(&docs, 2).unwrap();
    for (words, n) in freq {
        assert_eq!(index2.counts(&Shingle::new(words)), BTreeMap::from([(1230, n as u64)]));
    }
}
