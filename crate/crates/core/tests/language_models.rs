mod common;

use proptest::prelude::*;
use rand::Rng;

use common::*;
use transducer::data::{format_corpus, parse_corpus};
use transducer::error::Error;
use transducer::ilm::{ilm_log_probs, ilm_perplexity, IlmVariant};
use transducer::lm::{perplexity, sentence_nll, AnyLm, LanguageModel, LmConfig, RnnLm};
use transducer::network::NetworkConfig;
use transducer::numeric::logsumexp;
use transducer::Execution;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lm_distributions_are_normalized(seed in any::<u64>(), history in proptest::collection::vec(0usize..4, 0..6)) {
        let mut r = rng(seed);
        let table = random_table_lm(4, &mut r);
        let rnn = RnnLm::init(&LmConfig { num_labels: 4, embed: 3, hidden: 5 }, seed).unwrap();
        let mut ts = table.initial_state();
        let mut rs = rnn.initial_state();
        for &h in &history {
            ts = table.advance(&ts, h).unwrap();
            rs = rnn.advance(&rs, h).unwrap();
        }
        prop_assert!(logsumexp(&table.log_probs(&ts)).abs() < 1e-12);
        prop_assert!(logsumexp(&rnn.log_probs(&rs)).abs() < 1e-12);
    }

    #[test]
    fn ilm_variants_are_normalized(seed in any::<u64>(), history in proptest::collection::vec(0usize..3, 0..5)) {
        let mut r = rng(seed);
        let net = NetworkConfig { input_dim: 2, num_labels: 3, ..Default::default() };
        let params = random_params(&net, 0.5, &mut r);
        let x = random_features(r.random_range(1..6), 2, &mut r);
        let enc = params.encode(&x).unwrap();
        for v in [IlmVariant::Zero, IlmVariant::Avg] {
            let lp = ilm_log_probs(&params, &history, v, Some(&enc)).unwrap();
            prop_assert_eq!(lp.len(), 3);
            prop_assert!(logsumexp(&lp).abs() < 1e-12);
        }
    }

    #[test]
    fn corpus_text_round_trips(corpus in proptest::collection::vec(proptest::collection::vec(0usize..50, 0..8), 0..6)) {
        let text = format_corpus(&corpus);
        prop_assert_eq!(parse_corpus(&text).unwrap(), corpus);
    }
}

#[test]
fn perplexity_with_and_without_eos() {
    let mut r = rng(1);
    let lm = random_table_lm(3, &mut r);
    let corpus = vec![vec![0, 1, 2], vec![2, 2]];
    let with: f64 = corpus.iter().map(|s| sentence_nll(&lm, s, true).unwrap().0).sum();
    let without: f64 = corpus.iter().map(|s| sentence_nll(&lm, s, false).unwrap().0).sum();
    let p_with = perplexity(&lm, &corpus, true, Execution::Sequential).unwrap();
    let p_without = perplexity(&lm, &corpus, false, Execution::Parallel).unwrap();
    assert!((p_with.ln() - with / 7.0).abs() < 1e-12);
    assert!((p_without.ln() - without / 5.0).abs() < 1e-12);
}

#[test]
fn blank_and_out_of_range_tokens_are_rejected() {
    let mut r = rng(2);
    let lm = random_table_lm(3, &mut r);
    let s = lm.initial_state();
    assert!(matches!(lm.logprob(&s, 3), Err(Error::BlankNotAllowed(_))));
    assert!(lm.logprob(&s, 5).is_err());
    let (eos, after) = lm.logprob(&s, 4).unwrap();
    assert_eq!(eos, lm.log_probs(&s)[3]);
    assert_eq!(after, s);
}

#[test]
fn avg_ilm_on_text_only_is_rejected() {
    let mut r = rng(3);
    let params = random_params(&NetworkConfig::default(), 0.1, &mut r);
    let err = ilm_perplexity(&params, IlmVariant::Avg, &[vec![1, 2]], None, Execution::Sequential);
    assert!(matches!(err, Err(Error::MissingEncoderContext)));
    assert!(ilm_perplexity(&params, IlmVariant::Zero, &[vec![1, 2]], None, Execution::Sequential).is_ok());
}

#[test]
fn any_lm_loads_both_kinds() {
    let dir = std::env::temp_dir();
    let pid = std::process::id();
    let mut r = rng(4);
    let table = random_table_lm(3, &mut r);
    let tpath = dir.join(format!("table-{pid}.json"));
    std::fs::write(&tpath, serde_json::to_string(&table).unwrap()).unwrap();
    let rnn = RnnLm::init(&LmConfig { num_labels: 3, embed: 2, hidden: 3 }, 1).unwrap();
    let rpath = dir.join(format!("rnn-{pid}.json"));
    rnn.to_checkpoint().save(&rpath).unwrap();

    let a = AnyLm::load(&tpath).unwrap();
    let b = AnyLm::load(&rpath).unwrap();
    std::fs::remove_file(&tpath).unwrap();
    std::fs::remove_file(&rpath).unwrap();
    assert!(matches!(a, AnyLm::Table(_)));
    assert!(matches!(b, AnyLm::Rnn(_)));
    let sa = a.advance(&a.initial_state(), 1).unwrap();
    assert_eq!(a.log_probs(&sa), table.log_probs(&table.advance(&table.initial_state(), 1).unwrap()));
    let sb = b.advance(&b.initial_state(), 2).unwrap();
    assert_eq!(b.log_probs(&sb), rnn.log_probs(&rnn.advance(&rnn.initial_state(), 2).unwrap()));
}
