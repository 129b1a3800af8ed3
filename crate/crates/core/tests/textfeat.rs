use coevo_core::corpus::{synth_fixture, FixtureSpec, FixtureVocab, UserRecord};
use coevo_core::textfeat::{
    cosine, embed_text, normalize_numeric, summarize_user, CategoricalSchema, EmbedConfig,
    FeatureConfig, Featurizer, SummaryConfig,
};
use proptest::prelude::*;

#[test]
fn closer_texts_have_higher_cosine() {
    let c = EmbedConfig::default();
    let base = embed_text("the rams won", &c);
    let near = cosine(&base, &embed_text("the rams won the game", &c));
    let far = cosine(&base, &embed_text("tax policy reform", &c));
    assert!(near > far, "near {near} far {far}");
    assert!(near > 0.5);
}

#[test]
fn fixture_features_are_well_formed() {
    let d = synth_fixture(&FixtureSpec { n_users: 80, seed: 2, ..FixtureSpec::default() }, &FixtureVocab::default()).unwrap();
    let f = Featurizer::fit(&d, FeatureConfig::default()).unwrap();
    let m = f.featurize(&d).unwrap();
    assert_eq!(m.len(), 80);
    assert_eq!(m.dims(), [64, 64, 5, 6]);
    for j in 0..m.numeric.cols() {
        let mean: f64 = (0..80).map(|i| m.numeric.get(i, j)).sum::<f64>() / 80.0;
        assert!(mean.abs() < 1e-9);
    }
    for i in 0..80 {
        let b = m.bundle(i);
        let ones: f64 = b.categorical.iter().sum();
        assert_eq!(ones, 3.0);
        assert!(b.categorical.iter().all(|v| *v == 0.0 || *v == 1.0));
    }
}

#[test]
fn summary_of_fixture_user_respects_cap() {
    let d = synth_fixture(&FixtureSpec { n_users: 20, seed: 2, ..FixtureSpec::default() }, &FixtureVocab::default()).unwrap();
    let neigh: Vec<&UserRecord> = d.users().iter().take(5).collect();
    for u in d.users() {
        let s = summarize_user(u, &neigh, &SummaryConfig::default());
        assert!(s.chars().count() <= 600);
    }
}

#[test]
fn categorical_inference_and_width() {
    let d = synth_fixture(&FixtureSpec { n_users: 30, seed: 1, ..FixtureSpec::default() }, &FixtureVocab::default()).unwrap();
    let users: Vec<&UserRecord> = d.users().iter().collect();
    let schema = CategoricalSchema::infer(&users);
    assert!(schema.width() <= 6);
}

#[test]
fn fixed_categorical_schema_overrides_inference() {
    let d = synth_fixture(&FixtureSpec { n_users: 30, seed: 1, ..FixtureSpec::default() }, &FixtureVocab::default()).unwrap();
    let users: Vec<&UserRecord> = d.users().iter().collect();
    let mut schema = CategoricalSchema::infer(&users);
    let inferred = schema.width();
    schema.properties[0].1.push("zz_unseen".into());
    let unseen = schema.properties[0].1.len() - 1;
    let config = FeatureConfig { categorical: Some(schema), ..FeatureConfig::default() };
    let features = Featurizer::fit(&d, config).unwrap().featurize(&d).unwrap();
    assert_eq!(features.dims()[3], inferred + 1);
    assert!((0..d.len()).all(|i| features.bundle(i).categorical[unseen] == 0.0));
}

proptest! {
    #[test]
    fn embedding_norm_is_zero_or_one(text in "\\PC{0,80}", dim in 1usize..128) {
        let v = embed_text(&text, &EmbedConfig { dim, bigrams: true });
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-9);
        prop_assert_eq!(v, embed_text(&text, &EmbedConfig { dim, bigrams: true }));
    }

    #[test]
    fn zscore_invariant_to_user_order(seed in 0u64..100, rot in 0usize..30) {
        let d = synth_fixture(&FixtureSpec { n_users: 30, seed, ..FixtureSpec::default() }, &FixtureVocab::default()).unwrap();
        let users: Vec<&UserRecord> = d.users().iter().collect();
        let mut rotated = users.clone();
        rotated.rotate_left(rot);
        let a = normalize_numeric(&users).unwrap();
        let b = normalize_numeric(&rotated).unwrap();
        for (i, row) in b.iter().enumerate() {
            prop_assert_eq!(row, &a[(i + rot) % 30]);
        }
    }
}
