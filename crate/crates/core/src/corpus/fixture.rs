//! Seeded synthetic communities with controllable human/bot separability.
//!
//! Humans tweet from a personal two-topic mixture. Bots mix promotional
//! template tweets with narrow single-topic tweets, skew toward newer
//! low-follower accounts, and follow targets uniformly instead of by
//! popularity. Every signal overlaps between the classes so no single feature
//! is decisive.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset, Edge, Label, Relation, Tweet, UserRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub n_users: usize,
    pub bot_fraction: f64,
    /// Mean number of follow edges each user creates.
    pub edge_density: f64,
    pub min_tweets: usize,
    pub max_tweets: usize,
    /// Probability that a follow edge is reciprocated as a friend edge.
    pub friend_prob: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            n_users: 300,
            bot_fraction: 0.2,
            edge_density: 5.0,
            min_tweets: 6,
            max_tweets: 12,
            friend_prob: 0.3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureVocab {
    pub topics: Vec<Vec<String>>,
    pub function_words: Vec<String>,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    pub promo: Vec<String>,
}

const TOPICS: [&str; 6] = [
    "game team season coach score win playoffs league player stadium fans goal match \
     rams defense quarterback points championship trade roster injury draft pitch tournament",
    "vote election senate policy tax reform congress bill governor campaign debate law \
     budget president court rights party ballot mayor council healthcare economy",
    "phone app software update laptop code startup data cloud battery chip release \
     developer bug feature robot network screen browser privacy design",
    "pizza coffee recipe dinner lunch bread pasta tacos kitchen baking soup salad \
     breakfast restaurant chef sauce cheese cake burger spicy",
    "album song concert band guitar lyrics tour playlist singer drums vinyl festival \
     chorus melody stage rapper jazz piano track remix",
    "rain snow storm weather sunny forecast wind cold heat cloudy morning winter summer \
     spring temperature flood thunder sky umbrella frost",
];

const FUNCTION_WORDS: &str = "the a and to of in is it this that for on with my at \
    so just was we you i be are have not but all about today really";

const POSITIVE: &str = "good great love happy amazing awesome best nice excited wonderful \
    glad fun beautiful proud enjoy";

const NEGATIVE: &str = "bad terrible hate sad awful worst angry annoying boring horrible \
    tired upset disappointed ugly fail";

const PROMO: &str = "free giveaway click link win crypto deal followback promo discount \
    bonus limited offer dm earn cash airdrop token subscribe retweet prize now http \
    instant guaranteed profit signup code exclusive cheap";

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

impl Default for FixtureVocab {
    fn default() -> Self {
        Self {
            topics: TOPICS.iter().map(|t| words(t)).collect(),
            function_words: words(FUNCTION_WORDS),
            positive: words(POSITIVE),
            negative: words(NEGATIVE),
            promo: words(PROMO),
        }
    }
}

struct Persona {
    label: Label,
    topics: [usize; 2],
    primary_weight: f64,
    positivity: f64,
    promo_rate: f64,
}

fn pick<'a, R: Rng>(rng: &mut R, list: &'a [String]) -> &'a str {
    list.choose(rng).map(String::as_str).unwrap_or("")
}

fn topic_tweet<R: Rng>(rng: &mut R, vocab: &FixtureVocab, p: &Persona, narrow: bool) -> String {
    let len = rng.random_range(5..=13);
    let topic = if narrow || rng.random::<f64>() < p.primary_weight {
        p.topics[0]
    } else {
        p.topics[1]
    };
    // narrow tweets reuse the first few words of the topic list
    let pool = &vocab.topics[topic];
    let pool = if narrow { &pool[..pool.len().min(6)] } else { &pool[..] };
    let mut toks: Vec<&str> = Vec::with_capacity(len + 1);
    for _ in 0..len {
        let r = rng.random::<f64>();
        let tok = if r < 0.35 {
            pick(rng, &vocab.function_words)
        } else if r < 0.47 {
            if rng.random::<f64>() < p.positivity {
                pick(rng, &vocab.positive)
            } else {
                pick(rng, &vocab.negative)
            }
        } else {
            pick(rng, pool)
        };
        toks.push(tok);
    }
    let mut text = toks.join(" ");
    if rng.random::<f64>() < 0.15 {
        let tag = pick(rng, &pool[..pool.len().min(5)]);
        text.push_str(" #");
        text.push_str(tag);
    }
    text
}

fn promo_tweet<R: Rng>(rng: &mut R, vocab: &FixtureVocab, p: &Persona) -> String {
    let len = rng.random_range(6..=12);
    let pool = &vocab.topics[p.topics[0]];
    let toks: Vec<&str> = (0..len)
        .map(|_| {
            let r = rng.random::<f64>();
            if r < 0.65 {
                pick(rng, &vocab.promo)
            } else if r < 0.85 {
                pick(rng, &vocab.function_words)
            } else {
                pick(rng, pool)
            }
        })
        .collect();
    toks.join(" ")
}

fn description<R: Rng>(rng: &mut R, vocab: &FixtureVocab, p: &Persona) -> String {
    let t0 = &vocab.topics[p.topics[0]];
    let t1 = &vocab.topics[p.topics[1]];
    if p.label == Label::Bot && rng.random::<f64>() < 0.5 {
        let toks: Vec<&str> = (0..rng.random_range(4..=8))
            .map(|_| pick(rng, &vocab.promo))
            .collect();
        return toks.join(" ");
    }
    format!(
        "{} and {} {} fan {}",
        pick(rng, t0),
        pick(rng, t1),
        pick(rng, t0),
        pick(rng, &vocab.positive)
    )
}

fn lognormal<R: Rng>(rng: &mut R, median: f64, sigma: f64) -> f64 {
    LogNormal::new(median.ln(), sigma)
        .expect("valid lognormal parameters")
        .sample(rng)
        .round()
}

fn account<R: Rng>(rng: &mut R, label: Label) -> (BTreeMap<String, f64>, BTreeMap<String, String>) {
    let human = label == Label::Human;
    let mut num = BTreeMap::new();
    let (fol, fng, age, cnt) = if human {
        (
            lognormal(rng, 250.0, 1.0),
            lognormal(rng, 220.0, 0.8),
            rng.random_range(200.0..4000.0_f64).round(),
            lognormal(rng, 2500.0, 1.0),
        )
    } else {
        (
            lognormal(rng, 90.0, 1.1),
            lognormal(rng, 400.0, 0.9),
            rng.random_range(30.0..2600.0_f64).round(),
            lognormal(rng, 5000.0, 1.0),
        )
    };
    num.insert("followers".to_owned(), fol);
    num.insert("following".to_owned(), fng);
    num.insert("account_age_days".to_owned(), age);
    num.insert("tweet_count".to_owned(), cnt);
    num.insert("listed_count".to_owned(), (fol / rng.random_range(20.0..80.0)).floor());
    let mut cat = BTreeMap::new();
    let flag = |b: bool| if b { "true" } else { "false" }.to_owned();
    let (verified, default_img, location) = if human { (0.12, 0.08, 0.7) } else { (0.03, 0.3, 0.45) };
    cat.insert("verified".to_owned(), flag(rng.random::<f64>() < verified));
    cat.insert("default_profile_image".to_owned(), flag(rng.random::<f64>() < default_img));
    cat.insert("has_location".to_owned(), flag(rng.random::<f64>() < location));
    (num, cat)
}

/// Preferential-attachment follow graph. Humans prefer popular accounts that
/// share their primary topic; bots follow uniformly at random.
fn follow_edges<R: Rng>(rng: &mut R, personas: &[Persona], density: f64) -> Vec<(usize, usize)> {
    let n = personas.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut indegree = vec![0usize; n];
    let mut edges = BTreeSet::new();
    for (pos, &u) in order.iter().enumerate() {
        if pos == 0 {
            continue;
        }
        let earlier = &order[..pos];
        let whole = density.floor() as usize;
        let m = whole + usize::from(rng.random::<f64>() < density - whole as f64);
        let m = m.min(earlier.len());
        let mut chosen = BTreeSet::new();
        let mut guard = 0;
        while chosen.len() < m && guard < 50 * m + 50 {
            guard += 1;
            let v = if personas[u].label == Label::Bot {
                *earlier.choose(rng).expect("non-empty")
            } else {
                let weights: Vec<f64> = earlier
                    .iter()
                    .map(|&v| {
                        let affinity = if personas[v].topics[0] == personas[u].topics[0] { 3.0 } else { 1.0 };
                        (indegree[v] as f64 + 1.0) * affinity
                    })
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut r = rng.random::<f64>() * total;
                let mut idx = earlier.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if r < *w {
                        idx = i;
                        break;
                    }
                    r -= w;
                }
                earlier[idx]
            };
            chosen.insert(v);
        }
        for v in chosen {
            indegree[v] += 1;
            edges.insert((u, v));
        }
    }
    edges.into_iter().collect()
}

pub fn synth_fixture(spec: &FixtureSpec, vocab: &FixtureVocab) -> Result<Dataset, CorpusError> {
    if !(spec.bot_fraction > 0.0 && spec.bot_fraction < 1.0) {
        return Err(CorpusError::InvalidArgument(format!(
            "bot_fraction must lie in (0, 1), got {}",
            spec.bot_fraction
        )));
    }
    if spec.n_users == 0 || spec.min_tweets > spec.max_tweets || vocab.topics.len() < 2 {
        return Err(CorpusError::InvalidArgument(
            "fixture needs users, min_tweets <= max_tweets and at least two topics".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_users;
    let n_bots = ((n as f64) * spec.bot_fraction).round() as usize;
    let mut labels = vec![Label::Human; n];
    for i in rand::seq::index::sample(&mut rng, n, n_bots) {
        labels[i] = Label::Bot;
    }
    let width = n.to_string().len().max(4);
    let start: DateTime<Utc> = Utc.with_ymd_and_hms(2022, 2, 13, 0, 0, 0).single().expect("valid date");

    let personas: Vec<Persona> = labels
        .iter()
        .map(|&label| {
            let t0 = rng.random_range(0..vocab.topics.len());
            let mut t1 = rng.random_range(0..vocab.topics.len() - 1);
            if t1 >= t0 {
                t1 += 1;
            }
            Persona {
                label,
                topics: [t0, t1],
                primary_weight: rng.random_range(0.55..0.85),
                positivity: rng.random_range(0.2..0.8),
                promo_rate: if label == Label::Bot { rng.random_range(0.35..0.85) } else { 0.0 },
            }
        })
        .collect();

    let mut users = Vec::with_capacity(n);
    for (i, p) in personas.iter().enumerate() {
        let (numeric_props, categorical_props) = account(&mut rng, p.label);
        let description = description(&mut rng, vocab, p);
        let count = rng.random_range(spec.min_tweets..=spec.max_tweets);
        let tweets = (0..count)
            .map(|_| {
                let text = if rng.random::<f64>() < p.promo_rate {
                    promo_tweet(&mut rng, vocab, p)
                } else {
                    topic_tweet(&mut rng, vocab, p, p.label == Label::Bot)
                };
                Tweet {
                    timestamp: start + Duration::minutes(rng.random_range(0..60 * 24 * 60)),
                    text,
                }
            })
            .collect();
        users.push(UserRecord {
            id: format!("u{i:0width$}"),
            label: p.label,
            numeric_props,
            categorical_props,
            description,
            tweets,
        });
    }

    let mut edges = Vec::new();
    for (u, v) in follow_edges(&mut rng, &personas, spec.edge_density) {
        edges.push(Edge {
            src: users[u].id.clone(),
            dst: users[v].id.clone(),
            relation: Relation::Follow,
        });
        if rng.random::<f64>() < spec.friend_prob {
            edges.push(Edge {
                src: users[v].id.clone(),
                dst: users[u].id.clone(),
                relation: Relation::Friend,
            });
        }
    }
    Dataset::new(users, edges)
}
