mod common;

use swiftdec::driver::{run_corpus, scores_text};
use swiftdec::features::{WeightVector, DISTORTION, NUM_FEATURES, TM, UNKNOWN_PENALTY};
use swiftdec::lm::NGramModel;
use swiftdec::oracle_bench::{
    bench_scaling, compare_scores, exhaustive_decode, generate_corpus, generate_synthetic, to_tsv, OracleError,
    SyntheticSpec,
};
use swiftdec::search::{decode, Models, SearchParams};
use swiftdec::tm::{compile, BuildOptions, OpenOptions, RuleTable};

const FLAT_LM: &str = "\\data\\\nngram 1=4\n\n\\1-grams:\n-1 x\n-1 y\n-1 z\n-1 </s>\n\n\\end\\\n";

fn models(pt: &str, weights: WeightVector, cache: Option<usize>) -> Models {
    let built = compile(pt, None, None, &BuildOptions::default()).unwrap();
    let table = RuleTable::from_buffers(
        built.table,
        built.payload,
        &built.manifest,
        OpenOptions { cache_limit: cache, verify_payload: true },
    )
    .unwrap();
    Models::new(table, NGramModel::from_arpa_str(FLAT_LM).unwrap(), weights)
}

fn tm_and_distortion() -> WeightVector {
    let mut w = WeightVector::zero();
    w.0[TM] = 1.0;
    w.0[DISTORTION] = 1.0;
    w
}

#[test]
fn one_word_two_rules_picks_the_better_rule() {
    let m = models("A ||| x ||| 1 1 0.2 1\nA ||| y ||| 1 1 0.7 1\n", tm_and_distortion(), None);
    let r = exhaustive_decode(&m, "A", None).unwrap();
    assert_eq!(r.translation, "y");
    assert_eq!(r.derivations, 2);
    assert!((r.score - 0.7f64.ln()).abs() < 1e-6);
}

#[test]
fn two_words_hand_enumerated() {
    // [A][B]: ln .5 + ln .4; [B][A]: ln .2 with distortion -1 - 2; [AB]: ln .1.
    let pt = "A ||| x ||| 1 1 0.5 1\nB ||| y ||| 1 1 0.4 1\nA B ||| z ||| 1 1 0.1 1\n";
    let m = models(pt, tm_and_distortion(), None);
    let r = exhaustive_decode(&m, "A B", None).unwrap();
    assert_eq!(r.derivations, 3);
    assert_eq!(r.translation, "x y");
    assert!((r.score - (0.5f64.ln() + 0.4f64.ln())).abs() < 1e-6);
    assert_eq!(r.derivation.len(), 2);

    // Make the swap worth it: reward distortion and check its value.
    let mut w = tm_and_distortion();
    w.0[DISTORTION] = -1.0;
    let m = models(pt, w, None);
    let r = exhaustive_decode(&m, "A B", None).unwrap();
    assert_eq!(r.translation, "y x");
    assert!((r.score - (0.2f64.ln() + 3.0)).abs() < 1e-6);
    assert_eq!(r.features[DISTORTION], -3.0);
    // A limit of 0 forbids the swap.
    assert_eq!(exhaustive_decode(&m, "A B", Some(0)).unwrap().translation, "x y");
}

#[test]
fn oracle_score_is_recomputable_and_matches_decoder() {
    for seed in 0..20 {
        let inst = common::random_instance(1000 + seed);
        let m = inst.models(swiftdec::tm::Codec::Compressed);
        let r = exhaustive_decode(&m, &inst.sentence, Some(3)).unwrap();
        let recomputed: f64 = (0..NUM_FEATURES).map(|k| r.features[k] * inst.weights.0[k]).sum();
        assert!((recomputed - r.score).abs() < 1e-9);
        let mut covered = vec![0; inst.sentence.split_whitespace().count()];
        for step in &r.derivation {
            for i in step.span.start..step.span.end {
                covered[i as usize] += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1), "seed {seed}: {covered:?}");
        let params = SearchParams { distortion_limit: Some(3), ..SearchParams::exhaustive() };
        let d = decode(&m, &inst.sentence, &params).unwrap();
        assert!((d.score - r.score).abs() < 1e-6, "seed {seed}");
        assert!(r.nodes >= r.derivations);
    }
}

#[test]
fn oracle_refuses_long_sentences() {
    let m = models("A ||| x ||| 1 1 1 1\n", tm_and_distortion(), None);
    let err = exhaustive_decode(&m, "A A A A A A A A A", None).unwrap_err();
    assert!(matches!(err, OracleError::TooLong(9)));
}

#[test]
fn generator_is_deterministic() {
    let spec = SyntheticSpec { sentences: 200, source_vocab: 150, target_vocab: 150, multiword_phrases: 100, ..Default::default() };
    assert_eq!(generate_synthetic(&spec), generate_synthetic(&spec));
}

#[test]
fn average_sentence_length() {
    let spec = SyntheticSpec { sentences: 200_000, ..Default::default() };
    let words: usize = generate_corpus(&spec).iter().map(Vec::len).sum();
    let expected = 1_460_000.0;
    assert!(((words as f64 - expected) / expected).abs() <= 0.02, "{words} words");
}

#[test]
fn no_oov_means_no_unknown_penalties() {
    let spec = SyntheticSpec { sentences: 400, source_vocab: 400, target_vocab: 400, oov_rate: 0.0, ..Default::default() };
    let data = generate_synthetic(&spec);
    let built = compile(&data.phrase_table, Some(&data.lexro), Some(&data.counts), &BuildOptions::default()).unwrap();
    let table = RuleTable::from_buffers(built.table, built.payload, &built.manifest, OpenOptions::default()).unwrap();
    let m = Models::new(table, NGramModel::from_arpa_str(&data.arpa).unwrap(), WeightVector::default());
    for s in data.corpus_lines() {
        let r = decode(&m, &s, &SearchParams::default()).unwrap();
        assert_eq!(r.features[UNKNOWN_PENALTY], 0.0, "{s}");
    }
    // With OOV tokens the penalty shows up.
    let noisy = generate_synthetic(&SyntheticSpec { oov_rate: 0.3, ..spec });
    let line = noisy.corpus_lines().into_iter().find(|l| l.contains("oov")).unwrap();
    assert!(decode(&m, &line, &SearchParams::default()).unwrap().features[UNKNOWN_PENALTY] > 0.0);
}

fn small_models() -> (Models, Vec<String>) {
    let spec = SyntheticSpec { seed: 3, sentences: 150, source_vocab: 300, target_vocab: 300, multiword_phrases: 300, ..Default::default() };
    let data = generate_synthetic(&spec);
    let built = compile(&data.phrase_table, Some(&data.lexro), Some(&data.counts), &BuildOptions::default()).unwrap();
    let table = RuleTable::from_buffers(built.table, built.payload, &built.manifest, OpenOptions::default()).unwrap();
    (Models::new(table, NGramModel::from_arpa_str(&data.arpa).unwrap(), WeightVector::default()), data.corpus_lines())
}

#[test]
fn scaling_single_row() {
    let (m, s) = small_models();
    let rows = bench_scaling(&m, &s[..20], &SearchParams::default(), &[1], 3);
    assert_eq!(rows.len(), 1);
    assert!(rows[0].words_per_sec > 0.0);
    assert!(to_tsv(&rows).starts_with("threads\twords_per_sec"));
}

#[test]
fn score_comparisons() {
    let (mut m, s) = small_models();
    let params = SearchParams::default();
    let a = scores_text(&run_corpus(&m, &s, &params, 1));
    assert_eq!(compare_scores(&a, &a).unwrap().max_abs_delta, 0.0);

    let (table, payload, manifest) = {
        let spec = SyntheticSpec { seed: 3, sentences: 150, source_vocab: 300, target_vocab: 300, multiword_phrases: 300, ..Default::default() };
        let data = generate_synthetic(&spec);
        let b = compile(&data.phrase_table, Some(&data.lexro), Some(&data.counts), &BuildOptions::default()).unwrap();
        (b.table, b.payload, b.manifest)
    };
    m.set_table(RuleTable::from_buffers(table, payload, &manifest, OpenOptions { cache_limit: Some(0), verify_payload: false }).unwrap());
    let uncached = scores_text(&run_corpus(&m, &s, &params, 1));
    let c = compare_scores(&a, &uncached).unwrap();
    assert_eq!((c.mean_delta, c.max_abs_delta, c.differing_translations), (0.0, 0.0, 0));

    let low = scores_text(&run_corpus(&m, &s, &SearchParams { pop_limit: 50, ..params }, 1));
    let c = compare_scores(&low, &a).unwrap();
    assert!(c.mean_b >= c.mean_a, "{c:?}");
    assert!(compare_scores(&a, &low.lines().take(3).map(|l| format!("{l}\n")).collect::<String>()).is_err());
}
