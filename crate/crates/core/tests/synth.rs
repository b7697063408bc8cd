use dualview::eval::{evaluate_run, EvalOptions};
use dualview::model::{Ablations, Model};
use dualview::synth::{counting_baseline, is_planted, write_jsonl, SyntheticSpec};
use dualview::text::{prepare, read_jsonl, tokenize, FieldMap, PrepConfig, Split, SplitSizes, SplitSpec, NUM_SPECIALS};
use dualview::train::{ModelArtifact, TrainConfig, TrainState};
use dualview::HyperParams;

fn spec(n: usize) -> SyntheticSpec {
    SyntheticSpec {
        num_examples: n,
        copy_rate: 0.3,
        seed: 5,
        ..SyntheticSpec::default()
    }
}

#[test]
fn examples_depend_only_on_seed_and_index() {
    let short = spec(10).generate().unwrap();
    let long = spec(25).generate().unwrap();
    assert_eq!(short[..], long[..10]);
    let other = SyntheticSpec { seed: 6, ..spec(10) }.generate().unwrap();
    assert_ne!(short, other);
}

#[test]
fn planted_words_are_private_to_their_example() {
    let records = spec(200).generate().unwrap();
    let mut planted_in_summaries = 0usize;
    let mut summary_words = 0usize;
    for (i, r) in records.iter().enumerate() {
        let review = tokenize(&r.review_text);
        let summary = tokenize(&r.summary_text);
        summary_words += summary.len();
        for w in summary.iter().filter(|w| is_planted(w)) {
            planted_in_summaries += 1;
            assert!(review.contains(w), "{w} missing from review {i}");
            for (j, other) in records.iter().enumerate() {
                if j != i {
                    assert!(!tokenize(&other.review_text).contains(w));
                }
            }
        }
        assert_eq!(r.rating as usize, counting_baseline(&r.review_text, 5));
    }
    let rate = planted_in_summaries as f64 / summary_words as f64;
    assert!((rate - 0.3).abs() < 0.05, "{rate}");
}

#[test]
fn jsonl_round_trip() {
    let records = spec(30).generate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    write_jsonl(&records, &path).unwrap();
    let read = read_jsonl(&path, &FieldMap::default()).unwrap();
    assert_eq!(read.malformed, 0);
    assert_eq!(read.records, records);
}

#[test]
fn spec_files_fill_in_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    std::fs::write(&path, "num_examples = 7\ncopy_rate = 0.5\nsentiment_words = [2, 3]\n").unwrap();
    let s = SyntheticSpec::load(&path).unwrap();
    assert_eq!((s.num_examples, s.copy_rate, s.sentiment_words), (7, 0.5, (2, 3)));
    assert_eq!(s.topic_words, SyntheticSpec::default().topic_words);
    std::fs::write(&path, "copy_rate = 2.0\n").unwrap();
    assert!(SyntheticSpec::load(&path).unwrap().generate().is_err());
    std::fs::write(&path, "copy_rat = 0.1\n").unwrap();
    assert!(SyntheticSpec::load(&path).is_err());
}

#[test]
fn untrained_models_report_every_metric_and_no_copy_means_no_copies() {
    let spec = spec(200);
    let raw = spec.generate().unwrap();
    let mut hp = HyperParams::default().with_dims(8, 8);
    hp.vocab_cap = spec.regular_words().len() + NUM_SPECIALS;
    hp.max_decode_depth = 6;
    hp.beam_width = 2;
    let mut cfg = PrepConfig::new(hp.clone(), 1);
    cfg.split = SplitSpec::Sizes(SplitSizes { train: 180, valid: 10, test: 10 });
    let (data, _) = prepare(&raw, &cfg).unwrap();
    assert!(data.vocab.words().iter().all(|w| !is_planted(w)));
    for flags in ["full", "-C", "-A", "-R", "-I"] {
        let ablations: Ablations = flags.parse().unwrap();
        let art = ModelArtifact {
            model: Model::new(hp.clone(), ablations, data.vocab.len(), 3).unwrap(),
            vocab: data.vocab.clone(),
            config: TrainConfig { hp: hp.clone(), ablations, ..TrainConfig::default() },
            state: TrainState::default(),
        };
        let (report, records) = evaluate_run(&art, &data, Split::Test, &EvalOptions::from_hyper(&hp)).unwrap();
        assert_eq!(records.len(), 10);
        assert_eq!(report.examples, 10);
        assert_eq!(report.flat_metrics().len(), 22, "{flags}");
        if ablations.no_copy {
            assert_eq!(report.oov_copy_rate, Some(0.0));
            assert!(records.iter().all(|r| r.generated.iter().all(|w| !is_planted(w))));
        }
    }
}
