use std::io::{Read, Write};
use std::net::TcpListener;
use std::thread;

use coevo_core::corpus::{split_dataset, synth_fixture, Dataset, FixtureSpec, FixtureVocab};
use coevo_core::detector::{train_classifier, EnsembleDetector, RelGraph, ScoringContext, TrainConfig};
use coevo_core::diffmath::gradcheck::check_gradients;
use coevo_core::diffmath::{AdamConfig, Tensor};
use coevo_core::generator::prompt::{render, LEARNING_TEMPLATE};
use coevo_core::generator::{
    batch_log_probs, build_preference_pairs, dpo_loss, dpo_train, external_generate, mean_nll, sft_examples,
    sft_loss, sft_train, ContextEncoder, DpoConfig, EndpointConfig, EndpointError, GenerationParams, GeneratorError,
    PolicyConfig, PolicyModel, PreferencePair, SequenceBatch, SftConfig, SftExample, Vocab, EOT,
};
use coevo_core::textfeat::{FeatureConfig, Featurizer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(n: usize, seed: u64) -> Dataset {
    synth_fixture(&FixtureSpec { n_users: n, seed, ..FixtureSpec::default() }, &FixtureVocab::default()).unwrap()
}

fn policy_for(d: &Dataset, hidden: usize, seed: u64) -> (PolicyModel, Vec<Vec<f64>>) {
    let texts = d.users().iter().flat_map(|u| u.tweets.iter().map(|t| t.text.as_str()));
    let vocab = Vocab::build(texts, 512).unwrap();
    let enc = ContextEncoder::default();
    let cfg = PolicyConfig { context_dim: enc.dim(), hidden, ..PolicyConfig::default() };
    (PolicyModel::init(vocab, cfg, seed), enc.encode_all(d))
}

fn sampling() -> GenerationParams {
    GenerationParams { temperature: 1.0, top_k: 0, ..GenerationParams::default() }
}

fn random_pairs(policy: &PolicyModel, contexts: &[Vec<f64>], n: usize, seed: u64) -> Vec<PreferencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let bot = i % contexts.len();
            let c = policy.sample(&contexts[bot], &sampling(), 2, &mut rng).unwrap();
            PreferencePair {
                bot,
                context: contexts[bot].clone(),
                chosen: c[0].response.clone(),
                rejected: c[1].response.clone(),
                chosen_score: 0.6,
                rejected_score: 0.4,
            }
        })
        .collect()
}

#[test]
fn reported_log_probs_match_the_recorded_route() {
    let d = fixture(30, 1);
    let (p, ctx) = policy_for(&d, 16, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (i, c) in ctx.iter().enumerate().take(10) {
        let cands = p.sample(c, &GenerationParams::default(), 3, &mut rng).unwrap();
        let refs: Vec<&[f64]> = vec![c.as_slice(); 3];
        let resp: Vec<_> = cands.iter().map(|k| &k.response).collect();
        let recorded = batch_log_probs(&p, &SequenceBatch::new(&refs, &resp).unwrap()).unwrap();
        for (k, r) in cands.iter().zip(recorded) {
            assert!((k.log_prob - r).abs() < 1e-9, "user {i}");
            assert!((k.log_prob - p.log_prob(c, &k.response).unwrap()).abs() < 1e-9);
            assert_eq!(k.response.len(), 3);
            assert!(k.response.iter().all(|t| t.len() <= 24 && !t.is_empty()));
        }
    }
}

#[test]
fn greedy_decoding_repeats_and_seeds_reproduce() {
    let d = fixture(20, 1);
    let (p, ctx) = policy_for(&d, 16, 2);
    let greedy = GenerationParams { sample: false, ..GenerationParams::default() };
    let c = p.sample(&ctx[0], &greedy, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(c.iter().all(|k| k == &c[0]));
    let a = p.sample(&ctx[1], &sampling(), 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = p.sample(&ctx[1], &sampling(), 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    assert!(matches!(
        p.sample(&ctx[0][..5], &sampling(), 1, &mut ChaCha8Rng::seed_from_u64(1)),
        Err(GeneratorError::ContextDim { .. })
    ));
}

#[test]
fn forced_reference_has_zero_loss() {
    let d = fixture(20, 1);
    let (mut p, ctx) = policy_for(&d, 8, 2);
    // a huge bias on EOT makes the one-token tweet certain
    p.out_bias.data_mut()[EOT as usize] = 1e4;
    let ex = [SftExample { user: 0, context: ctx[0].clone(), response: vec![vec![EOT]; 3] }];
    assert_eq!(sft_loss(&p, &ex).unwrap().0, 0.0);
    assert_eq!(mean_nll(&p, &ex).unwrap(), 0.0);
}

#[test]
fn sft_gradient_matches_finite_differences() {
    let d = fixture(20, 4);
    let (p, ctx) = policy_for(&d, 8, 5);
    let users: Vec<usize> = (0..8).collect();
    let (ex, _) = sft_examples(&p, &d, &ctx, &users);
    let (_, grads) = sft_loss(&p, &ex).unwrap();
    let params: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
    let report = check_gradients(&params, &grads, |t| sft_loss(&p.with_tensors(t), &ex).map(|r| r.0), 150, 1e-4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(report.checked >= 100 && report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn dpo_gradient_matches_finite_differences() {
    let d = fixture(20, 4);
    let (reference, ctx) = policy_for(&d, 8, 5);
    let pairs = random_pairs(&reference, &ctx, 12, 3);
    // move away from the reference point so the sigmoid is not at its center
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let moved: Vec<Tensor> = reference
        .tensors()
        .iter()
        .map(|t| {
            let mut t = (*t).clone();
            t.data_mut().iter_mut().for_each(|v| *v += 0.3 * rng.random_range(-1.0..1.0));
            t
        })
        .collect();
    let p = reference.with_tensors(&moved);
    let (_, grads) = dpo_loss(&p, &reference, &pairs, 0.2).unwrap();
    let report = check_gradients(&moved, &grads, |t| dpo_loss(&p.with_tensors(t), &reference, &pairs, 0.2).map(|r| r.0), 150, 1e-5, &mut rng).unwrap();
    assert!(report.checked >= 100 && report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn one_dpo_step_widens_the_margin() {
    let d = fixture(20, 4);
    let (p, ctx) = policy_for(&d, 16, 5);
    let pairs = random_pairs(&p, &ctx, 16, 3);
    let margin = |q: &PolicyModel| -> f64 {
        pairs.iter().map(|x| q.log_prob(&x.context, &x.chosen).unwrap() - q.log_prob(&x.context, &x.rejected).unwrap()).sum()
    };
    let (_, grads) = dpo_loss(&p, &p, &pairs, 0.2).unwrap();
    let stepped: Vec<Tensor> = p
        .tensors()
        .iter()
        .zip(&grads)
        .map(|(t, g)| {
            let mut t = (*t).clone();
            t.data_mut().iter_mut().zip(g.data()).for_each(|(v, g)| *v -= 1e-3 * g);
            t
        })
        .collect();
    assert!(margin(&p.with_tensors(&stepped)) > margin(&p));
}

#[test]
fn dpo_training_decreases_loss_monotonically() {
    let d = fixture(20, 4);
    let (p, ctx) = policy_for(&d, 16, 5);
    let pairs = random_pairs(&p, &ctx, 24, 3);
    let cfg = DpoConfig { epochs: 30, adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() }, ..DpoConfig::default() };
    let (_, hist) = dpo_train(&p, &pairs, &cfg).unwrap();
    assert!((hist[0] - std::f64::consts::LN_2).abs() < 1e-12);
    for w in hist.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{hist:?}");
    }
    assert!(hist.last().unwrap() < &hist[0]);
    let (again, _) = dpo_train(&p, &pairs, &cfg).unwrap();
    assert_eq!(again, dpo_train(&p, &pairs, &cfg).unwrap().0);
    assert!(matches!(dpo_train(&p, &[], &cfg), Err(GeneratorError::NoPairs)));
}

#[test]
fn sft_lowers_nll_and_is_reproducible() {
    let d = fixture(60, 2);
    let (p, ctx) = policy_for(&d, 32, 1);
    let humans: Vec<usize> = (0..d.len()).filter(|&i| d.users()[i].label.is_human()).collect();
    let (ex, skipped) = sft_examples(&p, &d, &ctx, &humans);
    assert!(skipped.is_empty());
    let before = mean_nll(&p, &ex).unwrap();
    let cfg = SftConfig::default();
    let (trained, _) = sft_train(&p, &ex, &cfg, 7).unwrap();
    assert!(mean_nll(&trained, &ex).unwrap() < before);
    assert_eq!(sft_train(&p, &ex, &cfg, 7).unwrap().0, trained);
}

#[test]
fn users_with_too_few_tweets_are_skipped() {
    let d = fixture(10, 2);
    let (p, ctx) = policy_for(&d, 8, 1);
    let d = d.with_tweets(&[(0, d.users()[0].tweets[..2].to_vec())]);
    let (ex, skipped) = sft_examples(&p, &d, &ctx, &[0, 1]);
    assert_eq!(skipped, vec![0]);
    assert!(ex.iter().all(|e| e.user == 1));
}

/// Upper tail of chi-square by the Wilson-Hilferty cube-root approximation.
fn chi2_upper(stat: f64, df: f64) -> f64 {
    let z = ((stat / df).cbrt() - (1.0 - 2.0 / (9.0 * df))) / (2.0 / (9.0 * df)).sqrt();
    0.5 * libm_erfc(z / std::f64::consts::SQRT_2)
}

fn libm_erfc(x: f64) -> f64 {
    // Abramowitz-Stegun 7.1.26 is plenty for a p-value threshold
    let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
    let y = t * (0.254_829_592 + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let e = y * (-x * x).exp();
    if x >= 0.0 {
        e
    } else {
        2.0 - e
    }
}

struct Scored {
    dataset: Dataset,
    featurizer: Featurizer,
    ensemble: EnsembleDetector,
}

fn scored_fixture(n: usize, hidden: usize, epochs: usize) -> Scored {
    let dataset = fixture(n, 3);
    let featurizer = Featurizer::fit(&dataset, FeatureConfig::default()).unwrap();
    let features = featurizer.featurize(&dataset).unwrap();
    let graph = RelGraph::from_dataset(&dataset);
    let split = split_dataset(&dataset, [8.0, 1.0, 1.0], 1).unwrap();
    let cfg = TrainConfig { hidden, epochs, ..TrainConfig::default() };
    let (model, _) = train_classifier(&features, &graph, &dataset.labels(), &split.train, &split.val, &cfg, 1).unwrap();
    Scored { dataset, featurizer, ensemble: EnsembleDetector::single(model) }
}

#[test]
fn preference_pairs_are_ordered_and_draws_uniform() {
    let s = scored_fixture(100, 16, 10);
    let scorer = ScoringContext::new(&s.ensemble, &s.featurizer, &s.dataset).unwrap();
    let (p, ctx) = policy_for(&s.dataset, 16, 1);
    let bots = s.dataset.bot_indices();
    let set = build_preference_pairs(&p, &scorer, &ctx, &bots, 64, 2, &sampling(), 4).unwrap();
    assert_eq!(set.pairs.len() + set.ties, 64);
    for pair in &set.pairs {
        assert!(pair.chosen_score > pair.rejected_score);
        let text = p.decode(&pair.chosen);
        assert_eq!(scorer.score_index(pair.bot, &text), pair.chosen_score);
    }
    let (hi, lo) = set.mean_scores();
    assert!(hi > lo);
    assert_eq!(set, build_preference_pairs(&p, &scorer, &ctx, &bots, 64, 2, &sampling(), 4).unwrap());
    assert!(build_preference_pairs(&p, &scorer, &ctx, &bots, 4, 1, &sampling(), 4).is_err());

    let many = build_preference_pairs(&p, &scorer, &ctx, &bots, 10_000, 2, &sampling(), 5).unwrap();
    let mut counts = vec![0.0; s.dataset.len()];
    for &b in &many.draws {
        counts[b] += 1.0;
    }
    let expect = 10_000.0 / bots.len() as f64;
    let stat: f64 = bots.iter().map(|&b| (counts[b] - expect).powi(2) / expect).sum();
    let pval = chi2_upper(stat, (bots.len() - 1) as f64);
    assert!(pval > 0.01, "chi2 {stat} p {pval}");
}

#[test]
fn dpo_raises_detector_scores_of_samples() {
    let s = scored_fixture(150, 32, 40);
    let scorer = ScoringContext::new(&s.ensemble, &s.featurizer, &s.dataset).unwrap();
    let (p, ctx) = policy_for(&s.dataset, 32, 1);
    let humans: Vec<usize> = (0..s.dataset.len()).filter(|&i| s.dataset.users()[i].label.is_human()).collect();
    let (ex, _) = sft_examples(&p, &s.dataset, &ctx, &humans);
    let (p, _) = sft_train(&p, &ex, &SftConfig::default(), 1).unwrap();
    let bots = s.dataset.bot_indices();
    let params = sampling();
    let pairs = build_preference_pairs(&p, &scorer, &ctx, &bots, 256, 2, &params, 2).unwrap();
    let cfg = DpoConfig { epochs: 40, adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() }, ..DpoConfig::default() };
    let (q, _) = dpo_train(&p, &pairs.pairs, &cfg).unwrap();
    let mean_score = |pol: &PolicyModel| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut total = 0.0;
        let mut n = 0.0;
        for &b in &bots {
            for c in pol.sample(&ctx[b], &params, 4, &mut rng).unwrap() {
                total += scorer.score_index(b, &pol.decode(&c.response));
                n += 1.0;
            }
        }
        total / n
    };
    let (before, after) = (mean_score(&p), mean_score(&q));
    assert!(after >= before, "before {before} after {after}");
}

#[test]
fn learning_prompt_inserts_summary_verbatim() {
    let summary = "User A. Bio: {likes} coffee & code.";
    let out = render(LEARNING_TEMPLATE, &[("user_summary", summary), ("neighbors_summary", "none")]).unwrap();
    assert!(out.contains(summary));
}

fn serve_once(status: &'static str, body: &'static str) -> (String, thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = thread::spawn(move || {
        let (mut sock, _) = listener.accept().unwrap();
        let mut buf = Vec::new();
        let mut chunk = [0u8; 4096];
        // read headers, then the declared body length
        loop {
            let n = sock.read(&mut chunk).unwrap();
            buf.extend_from_slice(&chunk[..n]);
            let text = String::from_utf8_lossy(&buf).to_string();
            if let Some(end) = text.find("\r\n\r\n") {
                let len = text
                    .lines()
                    .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                    .unwrap_or(0);
                if buf.len() >= end + 4 + len || n == 0 {
                    break;
                }
            }
        }
        let reply = format!("HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len());
        sock.write_all(reply.as_bytes()).unwrap();
        String::from_utf8_lossy(&buf).to_string()
    });
    (format!("http://{addr}"), handle)
}

fn endpoint(base_url: String) -> EndpointConfig {
    EndpointConfig { base_url, max_retries: 0, timeout_secs: 5, ..EndpointConfig::default() }
}

#[test]
fn endpoint_returns_the_mock_body_content() {
    let (url, h) = serve_once("200 OK", r#"{"choices":[{"message":{"role":"assistant","content":"fixed reply"}}]}"#);
    let out = external_generate(&endpoint(url), "hello", &GenerationParams::default()).unwrap();
    assert_eq!(out, "fixed reply");
    let request = h.join().unwrap();
    assert!(request.starts_with("POST /v1/chat/completions"));
    for field in ["\"model\"", "\"messages\"", "\"temperature\"", "\"top_p\"", "\"max_tokens\"", "\"content\":\"hello\""] {
        assert!(request.contains(field), "missing {field}");
    }
}

#[test]
fn endpoint_error_cases_are_distinct() {
    let (url, h) = serve_once("503 Service Unavailable", "busy");
    let err = external_generate(&endpoint(url), "x", &GenerationParams::default()).unwrap_err();
    assert_eq!(err, EndpointError::Status { status: 503, body: "busy".into() });
    h.join().unwrap();

    let (url, h) = serve_once("200 OK", r#"{"choices":[]}"#);
    let err = external_generate(&endpoint(url), "x", &GenerationParams::default()).unwrap_err();
    assert!(matches!(err, EndpointError::MalformedBody(_)));
    h.join().unwrap();

    let closed = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", closed.local_addr().unwrap());
    drop(closed);
    let err = external_generate(&endpoint(url), "x", &GenerationParams::default()).unwrap_err();
    assert!(matches!(err, EndpointError::Transport(_)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dpo_loss_at_reference_is_ln2(seed in 0u64..10_000, n in 1usize..12, beta in 0.01f64..2.0) {
        let d = fixture(12, 1);
        let (p, ctx) = policy_for(&d, 8, seed);
        let pairs = random_pairs(&p, &ctx, n, seed);
        let (loss, _) = dpo_loss(&p, &p, &pairs, beta).unwrap();
        prop_assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
