mod common;

use std::fs;
use std::sync::OnceLock;

use proptest::prelude::*;
use swiftdec::driver::{run, run_corpus, DecoderConfig, DriverError, ReportFormat, ERROR_MARKER};
use swiftdec::features::WeightVector;
use swiftdec::lm::NGramModel;
use swiftdec::oracle_bench::{generate_synthetic, synth, SyntheticData, SyntheticSpec};
use swiftdec::search::{Models, SearchParams};
use swiftdec::tm::{build_binary, BuildOptions, RuleTable};
use tempfile::TempDir;

struct Small {
    data: SyntheticData,
    dir: TempDir,
}

fn small() -> &'static Small {
    static SMALL: OnceLock<Small> = OnceLock::new();
    SMALL.get_or_init(|| {
        let spec = SyntheticSpec {
            seed: 5,
            sentences: 120,
            source_vocab: 300,
            target_vocab: 300,
            multiword_phrases: 300,
            ..Default::default()
        };
        let data = generate_synthetic(&spec);
        let dir = tempfile::tempdir().unwrap();
        data.write_to(dir.path()).unwrap();
        let p = |f: &str| dir.path().join(f);
        build_binary(
            &p(synth::PHRASE_TABLE_FILE),
            Some(&p(synth::LEXRO_FILE)),
            Some(&p(synth::COUNTS_FILE)),
            &BuildOptions::default(),
            &p("table"),
        )
        .unwrap();
        Small { data, dir }
    })
}

fn models() -> Models {
    let s = small();
    Models::new(
        RuleTable::open(s.dir.path().join("table")).unwrap(),
        NGramModel::from_arpa_str(&s.data.arpa).unwrap(),
        WeightVector::default(),
    )
}

fn sentences() -> Vec<String> {
    small().data.corpus_lines()
}

#[test]
fn empty_input_gives_empty_output() {
    let run = run_corpus(&models(), &[], &SearchParams::default(), 4);
    assert!(run.outputs.is_empty());
    assert_eq!(run.decode_time.as_nanos(), 0);
    assert_eq!(run.words(), 0);
}

#[test]
fn single_worker_resets_once_per_sentence() {
    let s = sentences();
    let run = run_corpus(&models(), &s, &SearchParams::default(), 1);
    assert_eq!(run.outputs.len(), s.len());
    assert_eq!(run.workers.len(), 1);
    assert_eq!(run.workers[0].ephemeral.reset_count, s.len() as u64);
    assert_eq!(run.workers[0].sentences, s.len() as u64);
    assert_eq!(run.errors, 0);
}

#[test]
fn ephemeral_pool_stays_near_one_sentence() {
    let run = run_corpus(&models(), &sentences(), &SearchParams::default(), 2);
    for w in &run.workers {
        assert!(w.max_sentence_bytes > 0);
        assert!(
            w.ephemeral.total_capacity <= w.max_sentence_bytes + w.ephemeral.largest_block,
            "{:?}",
            w
        );
    }
}

#[test]
fn shared_state_is_touched_twice_per_sentence() {
    let s = sentences();
    for threads in [1, 3] {
        let run = run_corpus(&models(), &s, &SearchParams::default(), threads);
        // One claim and one post per sentence, plus one failed claim per worker.
        assert_eq!(run.sync_ops, 2 * s.len() as u64 + threads as u64);
    }
}

#[test]
fn failing_sentence_gets_marker_and_run_continues() {
    let mut s = sentences()[..5].to_vec();
    s.insert(2, "s1 ".repeat(300));
    let params = SearchParams { max_sentence_len: 200, ..Default::default() };
    let run = run_corpus(&models(), &s, &params, 2);
    let lines: Vec<String> = run.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[2].starts_with(ERROR_MARKER), "{}", lines[2]);
    assert_eq!(run.errors, 1);
    assert!(lines.iter().enumerate().all(|(i, l)| i == 2 || !l.starts_with(ERROR_MARKER)));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn every_sentence_once_in_order(threads in 1usize..6, n in 0usize..40) {
        let m = models();
        let s: Vec<String> = sentences().into_iter().take(n).collect();
        let single = run_corpus(&m, &s, &SearchParams::default(), 1);
        let multi = run_corpus(&m, &s, &SearchParams::default(), threads);
        prop_assert_eq!(multi.outputs.len(), n);
        prop_assert_eq!(&multi.outputs, &single.outputs);
        prop_assert_eq!(multi.workers.iter().map(|w| w.sentences).sum::<u64>(), n as u64);
    }
}

#[test]
fn run_writes_output_scores_and_report() {
    let s = small();
    let out = tempfile::tempdir().unwrap();
    let ini = format!(
        "[decoder]\ntable = {}\nlm = {}\ninput = {}\noutput = {}\nscores = {}\nreport = {}\nthreads = 2\nprofile = true\n",
        s.dir.path().join("table").display(),
        s.dir.path().join(synth::LM_FILE).display(),
        s.dir.path().join(synth::CORPUS_FILE).display(),
        out.path().join("out.txt").display(),
        out.path().join("scores.tsv").display(),
        out.path().join("report.tsv").display(),
    );
    let config_path = out.path().join("decoder.ini");
    fs::write(&config_path, ini).unwrap();
    let mut config = DecoderConfig::load(&config_path).unwrap();
    config.report_format = ReportFormat::Tsv;
    let report = run(&config).unwrap();

    let output = fs::read_to_string(out.path().join("out.txt")).unwrap();
    assert_eq!(output.lines().count(), 120);
    let expected: Vec<String> = run_corpus(&models(), &sentences(), &config.search, 1).lines().collect();
    assert!(output.lines().eq(expected.iter().map(String::as_str)));
    assert_eq!(fs::read_to_string(out.path().join("scores.tsv")).unwrap().lines().count(), 120);

    let tsv = fs::read_to_string(out.path().join("report.tsv")).unwrap();
    let value = |key: &str| -> f64 {
        tsv.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}\t")))
            .unwrap_or_else(|| panic!("missing {key}"))
            .parse()
            .unwrap()
    };
    assert_eq!(value("sentences"), 120.0);
    assert_eq!(value("threads"), 2.0);
    assert!(value("words_per_sec") > 0.0);
    let phases: f64 = ["memory", "lm", "phrase_table", "lexro", "search", "misc"]
        .iter()
        .map(|p| value(&format!("phase_{p}_pct")))
        .sum();
    assert!(phases <= 100.01 && phases > 99.0, "{phases}");
    assert_eq!(report.sentences, 120);
    assert!(report.sync_ops_per_sentence() <= 2.0 + 2.0 / 120.0);
}

#[test]
fn missing_model_fails_fast_with_path() {
    let config = DecoderConfig {
        table: Some("/definitely/missing/table".into()),
        lm: Some("/definitely/missing/lm.arpa".into()),
        ..Default::default()
    };
    let err = run(&config).unwrap_err();
    assert!(matches!(err, DriverError::Config(_)));
    assert!(err.to_string().contains("/definitely/missing/table"));
}
