mod common;

use aligncap::evalkit::*;
use common::metrics::*;
use common::rng;
use proptest::prelude::*;

#[test]
fn bleu_matches_counting_oracle() {
    let mut r = rng(1);
    for _ in 0..50 {
        let case = random_case(&mut r, 9);
        let c = to_corpus(&case);
        let got = bleu4(&c);
        let want = bleu_oracle(&case, false);
        assert!((got - want).abs() < 1e-9, "{case:?}: {got} vs {want}");
        let sm = bleu4_with(
            &c,
            BleuOptions {
                sentence_mean: true,
                ..Default::default()
            },
        );
        assert!((sm - bleu_oracle(&case, true)).abs() < 1e-9);
    }
}

#[test]
fn rouge_matches_subsequence_oracle() {
    let mut r = rng(2);
    for _ in 0..50 {
        let case = random_case(&mut r, 12);
        for (c, refs) in &case {
            let a: Vec<&str> = c.split_whitespace().collect();
            for rf in refs {
                let b: Vec<&str> = rf.split_whitespace().collect();
                assert_eq!(lcs_len(&a, &b), lcs_exhaustive(&a, &b));
            }
        }
        let got = rouge_l(&to_corpus(&case));
        assert!((got - rouge_oracle(&case)).abs() < 1e-9);
    }
}

#[test]
fn cider_matches_dense_oracle() {
    let mut r = rng(3);
    for _ in 0..50 {
        let case = random_case(&mut r, 8);
        let got = cider(&to_corpus(&case));
        let want = cider_oracle(&case);
        assert!((got - want).abs() < 1e-9, "{case:?}: {got} vs {want}");
    }
}

#[test]
fn exact_identity_and_disjoint() {
    let same = to_corpus(&[
        ("the sad speaker talks slowly".into(), vec!["the sad speaker talks slowly".into()]),
        ("a calm low voice here".into(), vec!["a calm low voice here".into()]),
    ]);
    assert_eq!(bleu4(&same), 1.0);
    assert_eq!(rouge_l(&same), 1.0);
    let disjoint = to_corpus(&[
        ("happy fast".into(), vec!["sad slow voice".into()]),
        ("loud".into(), vec!["calm low".into()]),
    ]);
    assert_eq!(bleu4(&disjoint), 0.0);
    assert_eq!(rouge_l(&disjoint), 0.0);
    assert_eq!(cider(&disjoint), 0.0);
    assert_eq!(meteor_lite(&disjoint, &SynonymMap::new()), 0.0);
}

#[test]
fn report_reproduces_corpus_values() {
    let mut r = rng(4);
    let case = random_case(&mut r, 8);
    let c = to_corpus(&case);
    let rep = evaluate(&c, &SynonymMap::new(), BleuOptions::default()).unwrap();
    assert_eq!(rep.bleu4, bleu4(&c));
    assert!((rep.rouge_l - rouge_l(&c)).abs() < 1e-15);
    assert!((rep.cider - cider(&c)).abs() < 1e-15);
    let mut pooled = BleuStats::default();
    for it in &rep.items {
        pooled += it.bleu;
    }
    assert_eq!(pooled.score(BleuSmoothing::None), rep.bleu4);
    let m: f64 = rep.items.iter().map(|i| i.meteor).sum::<f64>() / rep.items.len() as f64;
    assert_eq!(m, rep.meteor);
}

#[test]
fn epsilon_smoothing_only_matters_for_zero_precisions() {
    let c = to_corpus(&[("sad voice now".into(), vec!["sad voice".into()])]);
    assert_eq!(bleu4(&c), 0.0);
    let eps = BleuOptions {
        smoothing: BleuSmoothing::Epsilon,
        sentence_mean: false,
    };
    let s = bleu4_with(&c, eps);
    assert!(s > 0.0 && s < 1e-6);
    let full = to_corpus(&[("a b c d e".into(), vec!["a b c d e".into()])]);
    assert_eq!(bleu4_with(&full, eps), 1.0);
}

#[test]
fn files_join_by_id() {
    let dir = tempfile::tempdir().unwrap();
    let (cp, rp) = (dir.path().join("c.jsonl"), dir.path().join("r.jsonl"));
    save_candidates(
        &cp,
        &[
            CandidateRecord { id: "b".into(), text: "sad voice".into() },
            CandidateRecord { id: "a".into(), text: "calm".into() },
        ],
    )
    .unwrap();
    save_references(
        &rp,
        &[
            ReferenceRecord { id: "a".into(), texts: vec!["calm voice".into()] },
            ReferenceRecord { id: "b".into(), texts: vec!["sad voice".into(), "sad".into()] },
        ],
    )
    .unwrap();
    let (ids, corpus) = load_corpus(&cp, &rp).unwrap();
    assert_eq!(ids, vec!["b", "a"]);
    assert_eq!(corpus.items[0].references.len(), 2);

    save_candidates(&cp, &[CandidateRecord { id: "zzz".into(), text: "x".into() }]).unwrap();
    assert!(load_corpus(&cp, &rp).is_err());
}

fn arb_case() -> impl Strategy<Value = Vec<(String, Vec<String>)>> {
    any::<u64>().prop_map(|s| random_case(&mut rng(s), 8))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_reference_order_irrelevant(case in arb_case(), rot in 0usize..3) {
        let mut rotated = case.clone();
        for (_, refs) in rotated.iter_mut() {
            let k = rot % refs.len();
            refs.rotate_left(k);
        }
        let (a, b) = (to_corpus(&case), to_corpus(&rotated));
        prop_assert_eq!(bleu4(&a), bleu4(&b));
        prop_assert_eq!(rouge_l(&a), rouge_l(&b));
        prop_assert!((cider(&a) - cider(&b)).abs() < 1e-12);
        prop_assert_eq!(meteor_lite(&a, &SynonymMap::new()), meteor_lite(&b, &SynonymMap::new()));
    }

    #[test]
    fn prop_bounds(case in arb_case()) {
        let c = to_corpus(&case);
        let m = meteor_lite(&c, &SynonymMap::new());
        for v in [bleu4(&c), rouge_l(&c), m] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
        let ci = cider(&c);
        prop_assert!((0.0..=10.0 + 1e-9).contains(&ci));
    }

    #[test]
    fn prop_candidate_equal_to_a_reference(case in arb_case(), pick in 0usize..3) {
        let items: Vec<(String, Vec<String>)> = case
            .into_iter()
            .map(|(_, refs)| (refs[pick % refs.len()].clone(), refs))
            .collect();
        let c = to_corpus(&items);
        prop_assert_eq!(rouge_l(&c), 1.0);
        if items.iter().all(|(c, _)| c.split_whitespace().count() >= 4) {
            prop_assert!((bleu4(&c) - 1.0).abs() < 1e-12);
        }
    }
}
