mod common;

use swiftdec::features::{total_score, UNKNOWN_PENALTY};
use swiftdec::search::{decode, DecodeError, SearchParams, StackConfiguration};
use swiftdec::tm::Codec;

use common::random_instance;

fn check_result(seed: u64, params: &SearchParams) -> f64 {
    let inst = random_instance(seed);
    let m = inst.models(Codec::Identity);
    let r = decode(&m, &inst.sentence, params).unwrap();
    let n = inst.sentence.split_whitespace().count();
    let mut covered = vec![false; n];
    for step in &r.derivation {
        let span = step.span.start as usize..step.span.end as usize;
        for (i, c) in covered[span.clone()].iter_mut().enumerate() {
            assert!(!*c, "seed {seed}: position {} translated twice", span.start + i);
            *c = true;
        }
    }
    assert!(covered.iter().all(|c| *c), "seed {seed}: incomplete");
    assert!((total_score(&r.features, &m.weights) - r.score).abs() < 1e-9);
    let joined: Vec<&str> = r.derivation.iter().map(|d| d.target.as_str()).collect();
    assert_eq!(r.translation, joined.join(" "));
    if params.distortion_limit == Some(0) {
        assert!(r.derivation.windows(2).all(|w| w[0].span.end == w[1].span.start));
    }
    r.score
}

#[test]
fn results_are_complete_and_consistent() {
    for seed in 0..60 {
        for stack in StackConfiguration::ALL {
            for limit in [Some(0), Some(1), Some(4), None] {
                for pop_limit in [1, 5, 400] {
                    check_result(seed, &SearchParams { pop_limit, distortion_limit: limit, stack, ..Default::default() });
                }
            }
        }
    }
}

#[test]
fn recombination_does_not_change_the_best_score() {
    for seed in 0..40 {
        let with = check_result(seed, &SearchParams { distortion_limit: None, ..SearchParams::exhaustive() });
        let without =
            check_result(seed, &SearchParams { distortion_limit: None, recombine: false, ..SearchParams::exhaustive() });
        assert!((with - without).abs() < 1e-9, "seed {seed}");
    }
}

#[test]
fn beam_still_completes() {
    for seed in 0..30 {
        check_result(seed, &SearchParams { beam_size: Some(2), ..Default::default() });
    }
}

#[test]
fn unknown_words_pass_through() {
    let inst = random_instance(3);
    let m = inst.models(Codec::Identity);
    let r = decode(&m, "qqq rrr", &SearchParams::default()).unwrap();
    assert_eq!(r.translation, "qqq rrr");
    assert!(r.derivation.iter().all(|d| d.passthrough));
    assert_eq!(r.features[UNKNOWN_PENALTY], 2.0);
}

#[test]
fn edge_cases() {
    let m = random_instance(4).models(Codec::Identity);
    let empty = decode(&m, "   ", &SearchParams::default()).unwrap();
    assert_eq!((empty.translation.as_str(), empty.score), ("", 0.0));
    let long = "a ".repeat(20);
    let err = decode(&m, &long, &SearchParams { max_sentence_len: 10, ..Default::default() }).unwrap_err();
    assert!(matches!(err, DecodeError::TooLong { len: 20, max: 10 }));
}

#[test]
fn pop_trace_respects_the_limit() {
    let inst = random_instance(8);
    let m = inst.models(Codec::Identity);
    let params = SearchParams { pop_limit: 3, trace_pops: true, ..Default::default() };
    let r = decode(&m, &inst.sentence, &params).unwrap();
    assert!(!r.pops.is_empty());
    assert_eq!(r.pops.len() as u64, r.stats.pops);
    let mut per_expansion = std::collections::HashMap::new();
    for p in &r.pops {
        *per_expansion.entry(p.expansion).or_insert(0) += 1;
    }
    assert!(per_expansion.values().all(|&c| c <= 3));
}

#[test]
fn stack_configuration_names() {
    for c in StackConfiguration::ALL {
        assert_eq!(c.name().parse::<StackConfiguration>().unwrap(), c);
    }
    assert!("stacky".parse::<StackConfiguration>().is_err());
}
