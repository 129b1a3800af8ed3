use std::time::Instant;

use coevo_core::corpus::{split_dataset, synth_fixture, Dataset, FixtureSpec, FixtureVocab, Label, Split};
use coevo_core::detector::{
    dropout_masks, forward, forward_full, make_weights, train_classifier, training_loss, Architecture,
    DetectorError, EnsembleDetector, RelGraph, RgcnClassifier, ScoringContext, TrainConfig, WeightStrategy,
};
use coevo_core::diffmath::gradcheck::check_gradients;
use coevo_core::diffmath::Tensor;
use coevo_core::metrics::{classification_metrics, F1Side};
use coevo_core::textfeat::{FeatureConfig, FeatureMatrix, Featurizer};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Setup {
    dataset: Dataset,
    featurizer: Featurizer,
    features: FeatureMatrix,
    graph: RelGraph,
    split: Split,
}

fn setup(n_users: usize, seed: u64) -> Setup {
    let dataset = synth_fixture(&FixtureSpec { n_users, seed, ..FixtureSpec::default() }, &FixtureVocab::default()).unwrap();
    let featurizer = Featurizer::fit(&dataset, FeatureConfig::default()).unwrap();
    let features = featurizer.featurize(&dataset).unwrap();
    let graph = RelGraph::from_dataset(&dataset);
    let split = split_dataset(&dataset, [8.0, 1.0, 1.0], seed).unwrap();
    Setup { dataset, featurizer, features, graph, split }
}

fn small_model(s: &Setup, hidden: usize, seed: u64) -> RgcnClassifier {
    RgcnClassifier::init(Architecture::new(s.features.dims(), hidden), seed)
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let s = setup(40, 3);
    let model = small_model(&s, 8, 11);
    let labels = s.dataset.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let masks = dropout_masks(&mut rng, s.features.len(), 8, model.arch.dropout);
    let (_, grads) = training_loss(&model, &s.features, &s.graph, &labels, &s.split.train, Some(&masks)).unwrap();
    let params: Vec<Tensor> = model.tensors().into_iter().cloned().collect();
    let report = check_gradients(
        &params,
        &grads,
        |p| training_loss(&model.with_tensors(p), &s.features, &s.graph, &labels, &s.split.train, Some(&masks)).map(|r| r.0),
        150,
        1e-5,
        &mut rng,
    )
    .unwrap();
    assert!(report.checked >= 100);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn zero_weights_give_one_half() {
    let s = setup(30, 1);
    let m = RgcnClassifier::zeros(Architecture::new(s.features.dims(), 16));
    let act = forward_full(&m, &s.features, &s.graph).unwrap();
    assert!(act.probs.iter().all(|p| p[0] == 0.5 && p[1] == 0.5));
}

#[test]
fn probabilities_are_normalized_and_interior() {
    let s = setup(60, 4);
    let act = forward_full(&small_model(&s, 32, 2), &s.features, &s.graph).unwrap();
    for p in &act.probs {
        assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
        assert!(p[1] > 0.0 && p[1] < 1.0);
    }
}

#[test]
fn isolated_node_ignores_the_rest_of_the_graph() {
    let s = setup(30, 6);
    let m = small_model(&s, 16, 3);
    let empty = RelGraph::from_edges(30, &[]);
    let alone = forward(&m, &s.features, &empty).unwrap();
    // rewriting every other user's features leaves an isolated user unchanged
    let mut other = s.features.clone();
    for r in 1..30 {
        other.tweet.row_mut(r).iter_mut().for_each(|v| *v = -*v + 0.3);
        other.numeric.row_mut(r).iter_mut().for_each(|v| *v *= 2.0);
    }
    let again = forward(&m, &other, &empty).unwrap();
    assert_eq!(alone[0], again[0]);
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(t.rows(), t.cols());
    for (new, &old) in perm.iter().enumerate() {
        out.row_mut(new).copy_from_slice(t.row(old));
    }
    out
}

#[test]
fn permuting_users_permutes_outputs() {
    let s = setup(50, 8);
    let m = small_model(&s, 16, 4);
    let base = forward(&m, &s.features, &s.graph).unwrap();
    let mut perm: Vec<usize> = (0..50).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let mut inverse = vec![0; 50];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    let f = &s.features;
    let pf = FeatureMatrix {
        desc: permute_rows(&f.desc, &perm),
        tweet: permute_rows(&f.tweet, &perm),
        numeric: permute_rows(&f.numeric, &perm),
        categorical: permute_rows(&f.categorical, &perm),
    };
    let edges: Vec<(usize, usize, usize)> = s
        .dataset
        .indexed_edges()
        .into_iter()
        .map(|(a, b, r)| (inverse[a], inverse[b], r.index()))
        .collect();
    let pg = RelGraph::from_edges(50, &edges);
    let out = forward(&m, &pf, &pg).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        assert!((out[new] - base[old]).abs() < 1e-12);
    }
}

#[test]
fn exp_weights_match_hand_values() {
    let w = make_weights(WeightStrategy::Exp { alpha: 0.5 }, 2);
    let raw = [(-1.0f64).exp(), (-0.5f64).exp(), 1.0];
    let total: f64 = raw.iter().sum();
    for (a, r) in w.iter().zip(raw) {
        assert!((a - r / total).abs() < 1e-15);
    }
    for (a, b) in w.iter().zip([0.1863, 0.3072, 0.5065]) {
        assert!((a - b).abs() < 5e-4);
    }
    assert_eq!(make_weights(WeightStrategy::Greedy, 3), vec![0.0, 0.0, 0.0, 1.0]);
    assert_eq!(make_weights(WeightStrategy::Uniform, 3), vec![0.25; 4]);
    for s in [WeightStrategy::Uniform, WeightStrategy::Greedy, WeightStrategy::Exp { alpha: 0.1 }] {
        assert_eq!(make_weights(s, 0), vec![1.0]);
    }
    assert!(matches!("softmax".parse::<WeightStrategy>(), Err(DetectorError::UnknownStrategy(_))));
    assert_eq!("exp:0.5".parse::<WeightStrategy>().unwrap(), WeightStrategy::Exp { alpha: 0.5 });
}

#[test]
fn ensemble_identities() {
    let s = setup(40, 2);
    let members: Vec<RgcnClassifier> = (0..3).map(|i| small_model(&s, 16, 20 + i)).collect();
    let last = forward(&members[2], &s.features, &s.graph).unwrap();
    let greedy = EnsembleDetector::new(members.clone(), WeightStrategy::Greedy).unwrap();
    assert_eq!(greedy.probability(&s.features, &s.graph).unwrap(), last);

    let one = forward(&members[0], &s.features, &s.graph).unwrap();
    let same = EnsembleDetector::new(vec![members[0].clone(); 4], WeightStrategy::Uniform).unwrap();
    for (a, b) in same.probability(&s.features, &s.graph).unwrap().iter().zip(&one) {
        assert!((a - b).abs() < 1e-12);
    }

    let other = RgcnClassifier::zeros(Architecture::new([1, 2, 3, 4], 16));
    assert!(matches!(
        EnsembleDetector::new(vec![members[0].clone(), other], WeightStrategy::Uniform),
        Err(DetectorError::DimMismatch { .. })
    ));
}

#[test]
fn combine_is_the_weighted_mean() {
    let s = setup(20, 2);
    let m = small_model(&s, 8, 1);
    let e = EnsembleDetector::new(vec![m.clone(), m], WeightStrategy::Uniform).unwrap();
    assert_eq!(e.combine(&[vec![0.2], vec![0.8]]), vec![0.5]);
}

#[test]
fn incremental_rescoring_matches_full_forward() {
    let s = setup(80, 5);
    let members: Vec<RgcnClassifier> = (0..3).map(|i| small_model(&s, 24, 40 + i)).collect();
    let e = EnsembleDetector::new(members, WeightStrategy::Exp { alpha: 0.5 }).unwrap();
    let ctx = ScoringContext::new(&e, &s.featurizer, &s.dataset).unwrap();
    let full = e.probability(&s.features, &s.graph).unwrap();
    assert_eq!(ctx.baseline(), &full[..]);
    let candidate = ["buy cheap followers now", "limited offer click the link", "#deal #promo win"];
    for &b in s.dataset.bot_indices().iter().take(10) {
        let user = &s.dataset.users()[b];
        let own: Vec<&str> = user.tweets.iter().map(|t| t.text.as_str()).collect();
        let same = ctx.score_candidate(&user.id, &own).unwrap();
        assert!((same - full[b]).abs() < 1e-12);
        let fast = ctx.score_index(b, &candidate);
        let slow = ctx.score_index_full(b, &candidate).unwrap();
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        assert_eq!(fast, ctx.score_index(b, &candidate));

        let replaced = ctx.features_with_candidate(b, &candidate);
        for r in 0..s.features.len() {
            let rows = |f: &FeatureMatrix| [f.desc.row(r).to_vec(), f.tweet.row(r).to_vec(), f.numeric.row(r).to_vec(), f.categorical.row(r).to_vec()];
            if r != b {
                assert_eq!(rows(&replaced), rows(&s.features));
            }
        }
    }
    assert!(matches!(ctx.score_candidate("nobody", &candidate), Err(DetectorError::UnknownUser(_))));
}

#[test]
fn checkpoint_roundtrip_and_dim_mismatch() {
    let s = setup(20, 1);
    let m = small_model(&s, 8, 7);
    let text = m.to_json().unwrap();
    assert_eq!(RgcnClassifier::from_json(&text).unwrap(), m);
    assert!(matches!(
        RgcnClassifier::from_json_expecting(&text, [64, 64, 5, 7]),
        Err(DetectorError::DimMismatch { .. })
    ));
    let broken = text.replacen("\"hidden\":8", "\"hidden\":9", 1);
    assert!(matches!(RgcnClassifier::from_json(&broken), Err(DetectorError::Checkpoint(_))));
}

#[test]
fn single_class_training_set_is_rejected() {
    let s = setup(40, 1);
    let humans: Vec<usize> = (0..40).filter(|&i| s.dataset.labels()[i].is_human()).collect();
    let r = train_classifier(&s.features, &s.graph, &s.dataset.labels(), &humans, &s.split.val, &TrainConfig::default(), 0);
    assert!(matches!(r, Err(DetectorError::SingleClass)));
}

fn held_out_bot_f1(s: &Setup, labels: &[Label], model: &RgcnClassifier) -> f64 {
    let probs = forward(model, &s.features, &s.graph).unwrap();
    let p: Vec<f64> = s.split.test.iter().map(|&i| probs[i]).collect();
    let l: Vec<Label> = s.split.test.iter().map(|&i| labels[i]).collect();
    classification_metrics(&p, &l, 0.5).unwrap().f1(F1Side::Bot)
}

#[test]
fn trained_detector_separates_the_fixture() {
    let s = setup(300, 7);
    let labels = s.dataset.labels();
    let start = Instant::now();
    let cfg = TrainConfig::default();
    let (model, report) = train_classifier(&s.features, &s.graph, &labels, &s.split.train, &s.split.val, &cfg, 1).unwrap();
    eprintln!("120 epochs in {:.1?}, best epoch {}", start.elapsed(), report.best_epoch);
    let f1 = held_out_bot_f1(&s, &labels, &model);
    assert!(f1 > 0.7, "held-out bot F1 {f1}");
    assert!(report.train_loss.last().unwrap() < &report.train_loss[0]);

    let (again, _) = train_classifier(&s.features, &s.graph, &labels, &s.split.train, &s.split.val, &cfg, 1).unwrap();
    assert_eq!(again, model);
}

#[test]
fn shuffled_labels_fall_to_the_prevalence_baseline() {
    let s = setup(300, 7);
    let mut labels = s.dataset.labels();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(77));
    let cfg = TrainConfig { epochs: 60, ..TrainConfig::default() };
    let (model, _) = train_classifier(&s.features, &s.graph, &labels, &s.split.train, &s.split.val, &cfg, 2).unwrap();
    let probs = forward(&model, &s.features, &s.graph).unwrap();
    let p: Vec<f64> = s.split.test.iter().map(|&i| probs[i]).collect();
    let l: Vec<Label> = s.split.test.iter().map(|&i| labels[i]).collect();
    let acc = classification_metrics(&p, &l, 0.5).unwrap().accuracy;
    let prevalence = l.iter().filter(|x| x.is_human()).count() as f64 / l.len() as f64;
    assert!((acc - prevalence.max(1.0 - prevalence)).abs() <= 0.15, "accuracy {acc} prevalence {prevalence}");
}

#[test]
fn human_style_candidate_outscores_bot_style_candidate() {
    let s = setup(300, 7);
    let labels = s.dataset.labels();
    let (model, _) = train_classifier(&s.features, &s.graph, &labels, &s.split.train, &s.split.val, &TrainConfig::default(), 1).unwrap();
    let e = EnsembleDetector::single(model);
    let ctx = ScoringContext::new(&e, &s.featurizer, &s.dataset).unwrap();
    let texts = |i: usize| -> Vec<String> { s.dataset.users()[i].tweets.iter().map(|t| t.text.clone()).collect() };
    let human = s.split.test.iter().copied().find(|&i| labels[i].is_human()).unwrap();
    let bots = s.dataset.bot_indices();
    let (mut wins, mut total) = (0, 0);
    for &b in &bots {
        let donor = *bots.iter().find(|&&o| o != b).unwrap();
        let h = ctx.score_index(b, &texts(human));
        let bb = ctx.score_index(b, &texts(donor));
        total += 1;
        if h > bb {
            wins += 1;
        }
    }
    assert!(wins * 10 >= total * 9, "{wins}/{total}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ensemble_output_stays_a_probability(k in 0usize..4, alpha in 0.0f64..2.0, seed in 0u64..1000) {
        let s = setup(20, seed % 5);
        let members: Vec<RgcnClassifier> = (0..=k as u64).map(|i| small_model(&s, 8, seed + i)).collect();
        let e = EnsembleDetector::new(members, WeightStrategy::Exp { alpha }).unwrap();
        let w: f64 = e.weights().iter().sum();
        prop_assert!((w - 1.0).abs() < 1e-12);
        for p in e.probability(&s.features, &s.graph).unwrap() {
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
