use std::collections::BTreeMap;

use connective_core::corpus::LabeledExample;
use connective_core::synthetic::planted_keyword_pairs;
use connective_core::wordpairs::{
    binary_objective, load_model, save_model, train_ovr, Feature, FeatureDict, SparseVector, WordPairsConfig,
};
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ex(a: &str, b: &str, label: usize) -> LabeledExample {
    LabeledExample {
        arg1: a.split_whitespace().map(String::from).collect(),
        arg2: b.split_whitespace().map(String::from).collect(),
        label,
        article_id: "x".into(),
    }
}

/// Counts by scanning every (sample, candidate) combination the slow way.
fn brute_force_dict(data: &[LabeledExample], min_support: usize) -> Vec<(String, String, String)> {
    let mut vocab1: Vec<String> = data
        .iter()
        .flat_map(|e| e.arg1.iter().map(|w| w.to_lowercase()))
        .collect();
    let mut vocab2: Vec<String> = data
        .iter()
        .flat_map(|e| e.arg2.iter().map(|w| w.to_lowercase()))
        .collect();
    vocab1.sort();
    vocab1.dedup();
    vocab2.sort();
    vocab2.dedup();
    let has = |side: &[String], w: &str| side.iter().any(|t| t.to_lowercase() == w);
    let mut out = Vec::new();
    for a in &vocab1 {
        for b in &vocab2 {
            let n = data.iter().filter(|e| has(&e.arg1, a) && has(&e.arg2, b)).count();
            if n >= min_support {
                out.push(("pair".to_string(), a.clone(), b.clone()));
            }
        }
    }
    for b in &vocab2 {
        if data.iter().filter(|e| has(&e.arg2, b)).count() >= min_support {
            out.push(("arg2".to_string(), String::new(), b.clone()));
        }
    }
    out
}

fn as_triples(d: &FeatureDict) -> Vec<(String, String, String)> {
    d.features()
        .iter()
        .map(|f| match f {
            Feature::Pair { arg1, arg2 } => ("pair".into(), arg1.clone(), arg2.clone()),
            Feature::Arg1 { word } => ("arg1".into(), word.clone(), String::new()),
            Feature::Arg2 { word } => ("arg2".into(), String::new(), word.clone()),
        })
        .collect()
}

fn small_corpus(seed: u64, n: usize) -> Vec<LabeledExample> {
    let words = ["the", "The", "cat", "dog", "sat", "ran", "mat", "Mat", "a", "rug"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let side = |rng: &mut ChaCha8Rng| {
                let len = rng.random_range(1..6);
                (0..len)
                    .map(|_| *words.choose(rng).unwrap())
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let a = side(&mut rng);
            let b = side(&mut rng);
            ex(&a, &b, rng.random_range(0..3))
        })
        .collect()
}

#[test]
fn dictionary_matches_brute_force_counts() {
    for seed in 0..5 {
        let data = small_corpus(seed, 40);
        for min_support in [1, 3, 5, 8] {
            let cfg = WordPairsConfig {
                min_support,
                ..WordPairsConfig::default()
            };
            let d = FeatureDict::build(&data, &cfg).unwrap();
            assert_eq!(
                as_triples(&d),
                brute_force_dict(&data, min_support),
                "seed {seed} support {min_support}"
            );
        }
    }
}

#[test]
fn featurize_matches_brute_force() {
    let data = small_corpus(11, 40);
    let d = FeatureDict::build(&data, &WordPairsConfig::default()).unwrap();
    let index: BTreeMap<_, _> = as_triples(&d)
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t, i as u32))
        .collect();
    for e in small_corpus(12, 30) {
        let mut want = Vec::new();
        for a in &e.arg1 {
            for b in &e.arg2 {
                if let Some(&i) = index.get(&("pair".into(), a.to_lowercase(), b.to_lowercase())) {
                    want.push(i);
                }
            }
        }
        for b in &e.arg2 {
            if let Some(&i) = index.get(&("arg2".into(), String::new(), b.to_lowercase())) {
                want.push(i);
            }
        }
        want.sort();
        want.dedup();
        let got = d.featurize(&e);
        assert!(got.0.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(got.0, want);
    }
}

#[test]
fn arg1_single_word_toggle() {
    let data = vec![ex("a", "b", 0)];
    let cfg = WordPairsConfig {
        min_support: 1,
        arg1_singles: true,
        ..WordPairsConfig::default()
    };
    let d = FeatureDict::build(&data, &cfg).unwrap();
    assert!(d.index_of(&Feature::Arg1 { word: "a".into() }).is_some());
    assert_eq!(d.featurize(&data[0]).0.len(), 3);
}

#[test]
fn hashed_mode_stays_in_range_and_sorted() {
    let cfg = WordPairsConfig {
        hashed: true,
        hash_bits: 6,
        ..WordPairsConfig::default()
    };
    let data = small_corpus(3, 20);
    let d = FeatureDict::build(&data, &cfg).unwrap();
    assert_eq!(d.len(), 64);
    for e in &data {
        let v = d.featurize(e);
        assert!(v.0.windows(2).all(|w| w[0] < w[1]));
        assert!(v.0.iter().all(|&i| i < 64));
    }
}

#[test]
fn dictionary_tsv_export() {
    let cfg = WordPairsConfig {
        min_support: 1,
        ..WordPairsConfig::default()
    };
    let d = FeatureDict::build(&[ex("a", "b", 0)], &cfg).unwrap();
    let mut out = Vec::new();
    d.write_tsv(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "0\tpair\ta\tb\t1\n1\targ2\t\tb\t1\n");
}

#[test]
fn binary_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let nf = 12;
    let xs: Vec<SparseVector> = (0..30)
        .map(|_| {
            let mut idx: Vec<u32> = (0..nf as u32).filter(|_| rng.random_bool(0.3)).collect();
            idx.dedup();
            SparseVector(idx)
        })
        .collect();
    let ys: Vec<bool> = (0..30).map(|_| rng.random_bool(0.4)).collect();
    let w: Vec<f64> = (0..nf).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b = 0.3;
    let l2 = 0.01;
    let (_, gw, gb) = binary_objective(&w, b, &xs, &ys, l2);
    let h = 1e-5;
    let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-6);
    for j in 0..nf {
        let mut wp = w.clone();
        wp[j] += h;
        let mut wm = w.clone();
        wm[j] -= h;
        let num = (binary_objective(&wp, b, &xs, &ys, l2).0 - binary_objective(&wm, b, &xs, &ys, l2).0) / (2.0 * h);
        assert!(rel(gw[j], num) < 1e-6, "w{j}: {} vs {num}", gw[j]);
    }
    let num = (binary_objective(&w, b + h, &xs, &ys, l2).0 - binary_objective(&w, b - h, &xs, &ys, l2).0) / (2.0 * h);
    assert!(rel(gb, num) < 1e-6);
}

#[test]
fn separable_three_class_toy_set() {
    let mut data = Vec::new();
    for i in 0..10 {
        let filler = ["p", "q", "r", "s", "t"][i % 5];
        data.push(ex(&format!("red {filler}"), &format!("one {filler}"), 0));
        data.push(ex(&format!("green {filler}"), &format!("two {filler}"), 1));
        data.push(ex(&format!("blue {filler}"), &format!("three {filler}"), 2));
    }
    let cfg = WordPairsConfig::default();
    let d = FeatureDict::build(&data, &cfg).unwrap();
    let xs: Vec<_> = data.iter().map(|e| d.featurize(e)).collect();
    let labels: Vec<_> = data.iter().map(|e| e.label).collect();
    let m = train_ovr(&xs, &labels, d.len(), 3, &cfg).unwrap();
    for (x, &y) in xs.iter().zip(&labels) {
        assert_eq!(m.predict_label(x), y);
    }
    // Bias argmax for an all-zero vector.
    let zero = SparseVector::default();
    let best_bias = (0..3).fold(0, |best, c| if m.biases[c] > m.biases[best] { c } else { best });
    assert_eq!(m.predict_label(&zero), best_bias);
}

#[test]
fn training_is_deterministic_and_rejects_divergence() {
    let data = planted_keyword_pairs(3, 1);
    let cfg = WordPairsConfig::default();
    let d = FeatureDict::build(&data, &cfg).unwrap();
    let xs: Vec<_> = data.iter().map(|e| d.featurize(e)).collect();
    let labels: Vec<_> = data.iter().map(|e| e.label).collect();
    let a = train_ovr(&xs, &labels, d.len(), 20, &cfg).unwrap();
    let b = train_ovr(&xs, &labels, d.len(), 20, &cfg).unwrap();
    assert_eq!(a, b);

    // Each step multiplies the weights by 1 - lr * l2 = -9.
    let wild = WordPairsConfig {
        learning_rate: 10.0,
        l2: 1.0,
        epochs: 400,
        ..cfg
    };
    assert!(train_ovr(&xs, &labels, d.len(), 20, &wild).is_err());
}

#[test]
fn model_golden_on_planted_pairs() {
    let train = planted_keyword_pairs(10, 0);
    let test = planted_keyword_pairs(10, 1);
    let cfg = WordPairsConfig::default();
    let d = FeatureDict::build(&train, &cfg).unwrap();
    let xs: Vec<_> = train.iter().map(|e| d.featurize(e)).collect();
    let labels: Vec<_> = train.iter().map(|e| e.label).collect();
    let m = train_ovr(&xs, &labels, d.len(), 20, &cfg).unwrap();
    let correct = test
        .iter()
        .filter(|e| m.predict_label(&d.featurize(e)) == e.label)
        .count();
    assert!(correct as f64 >= 0.95 * test.len() as f64, "{correct}/{}", test.len());

    let names: Vec<String> = (0..20).map(|i| format!("c{i}")).collect();
    let mut buf = Vec::new();
    save_model(&mut buf, &d, &m, &names, &cfg).unwrap();
    let back = load_model(buf.as_slice()).unwrap();
    for e in &test {
        assert_eq!(back.model.predict(&back.dict.featurize(e)), m.predict(&d.featurize(e)));
    }
    assert!(load_model(&buf[..buf.len() - 3]).is_err());
    assert!(load_model(&b"garbage"[..]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dictionary_ignores_sample_order(seed in 0u64..1000, shuffle_seed in 0u64..1000) {
        let data = small_corpus(seed, 30);
        let mut shuffled = data.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let cfg = WordPairsConfig { min_support: 2, ..WordPairsConfig::default() };
        prop_assert_eq!(FeatureDict::build(&data, &cfg).unwrap(), FeatureDict::build(&shuffled, &cfg).unwrap());
    }

    #[test]
    fn absent_words_never_change_predictions(seed in 0u64..1000, extra in "[x-z]{3,6}") {
        let data = small_corpus(seed, 30);
        let cfg = WordPairsConfig { min_support: 2, epochs: 3, ..WordPairsConfig::default() };
        let d = FeatureDict::build(&data, &cfg).unwrap();
        let xs: Vec<_> = data.iter().map(|e| d.featurize(e)).collect();
        let labels: Vec<_> = data.iter().map(|e| e.label).collect();
        let m = train_ovr(&xs, &labels, d.len(), 3, &cfg).unwrap();
        for e in data.iter().take(10) {
            let mut more = e.clone();
            more.arg1.push(extra.clone());
            more.arg2.push(extra.clone());
            prop_assert_eq!(d.featurize(&more), d.featurize(e));
            prop_assert_eq!(m.predict(&d.featurize(&more)), m.predict(&d.featurize(e)));
        }
    }
}
