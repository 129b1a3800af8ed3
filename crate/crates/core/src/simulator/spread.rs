use std::fmt::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AgentRequest, EventSchedule, OpinionSim, PostGenerator, SimError};
use crate::seeding::{derive_seed, substream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpreadConfig {
    pub seed_count: usize,
    pub steps: usize,
    /// A post is about the event when it contains any of these words.
    pub keywords: Vec<String>,
    /// Trigger news shown to exposed agents.
    pub event: String,
}

impl Default for SpreadConfig {
    fn default() -> Self {
        Self {
            seed_count: 30,
            steps: 20,
            keywords: vec!["invasion".into(), "ukraine".into()],
            event: "Russian forces launched a full-scale invasion of Ukraine.".into(),
        }
    }
}

/// Toy spread generator: an agent seeing `m` posts about the event writes
/// one itself with probability `1 - (1 - p)^m`, otherwise something
/// unrelated.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicPoster {
    pub probability: f64,
    pub keyword: String,
}

impl PostGenerator for TopicPoster {
    fn generate(&self, request: &AgentRequest, rng: &mut ChaCha8Rng) -> Result<String, String> {
        let p = 1.0 - (1.0 - self.probability).powi(request.exposures as i32);
        if request.exposures > 0 && rng.random::<f64>() < p {
            Ok(format!("everyone is talking about {} right now", self.keyword))
        } else {
            Ok("just another day".to_string())
        }
    }
}

/// Whole-word, case-insensitive keyword match.
pub fn mentions_event(text: &str, keywords: &[String]) -> bool {
    text.split(|c: char| !c.is_alphanumeric())
        .any(|w| keywords.iter().any(|k| w.eq_ignore_ascii_case(k)))
}

/// `count` distinct agents drawn uniformly.
pub fn choose_seeds(users: usize, count: usize, rng: &mut impl Rng) -> Result<Vec<usize>, SimError> {
    if count > users {
        return Err(SimError::SeedCount { seeds: count, users });
    }
    let mut s = rand::seq::index::sample(rng, users, count).into_vec();
    s.sort_unstable();
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpreadRun {
    /// Authors by the end of each step; entry 0 is the seed count.
    pub cumulative: Vec<usize>,
    /// Step of each agent's first post about the event.
    pub first_post: Vec<Option<usize>>,
    pub failures: usize,
}

impl SpreadRun {
    /// Step with the largest increase (earliest on ties).
    pub fn peak_step(&self) -> usize {
        let mut best = (0, 0);
        for (t, w) in self.cumulative.windows(2).enumerate() {
            if w[1] - w[0] > best.1 {
                best = (t + 1, w[1] - w[0]);
            }
        }
        best.0
    }

    /// Whether the curve from the peak step on lies on or above its chord to
    /// the final count, i.e. growth slows after the steepest step.
    pub fn concave_after_peak(&self) -> bool {
        let a = self.peak_step();
        let b = self.cumulative.len() - 1;
        if b <= a {
            return true;
        }
        let (ca, cb) = (self.cumulative[a] as f64, self.cumulative[b] as f64);
        (a..=b).all(|t| {
            let chord = ca + (cb - ca) * (t - a) as f64 / (b - a) as f64;
            self.cumulative[t] as f64 >= chord - 1e-9
        })
    }

    /// `step,cumulative_authors`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,cumulative_authors\n");
        for (t, c) in self.cumulative.iter().enumerate() {
            let _ = writeln!(s, "{t},{c}");
        }
        s
    }
}

/// Seeds post about the event at step 0. At step `t` every agent that has
/// not yet posted about it, and follows at least one account that did
/// before `t`, sees those posts and generates one post of its own; posts
/// matching a keyword make it an author at `t`.
pub fn run_spread(
    sim: &OpinionSim<'_>,
    seeds: &[usize],
    generator: &dyn PostGenerator,
    config: &SpreadConfig,
    seed: u64,
) -> Result<SpreadRun, SimError> {
    let followees = sim.followees();
    let n = followees.len();
    if seeds.len() > n {
        return Err(SimError::SeedCount { seeds: seeds.len(), users: n });
    }
    let mut first_post: Vec<Option<usize>> = vec![None; n];
    let mut posts: Vec<Option<String>> = vec![None; n];
    for &s in seeds {
        first_post[s] = Some(0);
        posts[s] = Some(config.event.clone());
    }
    let schedule = EventSchedule {
        events: vec![super::Event {
            step: 0,
            date: String::new(),
            text: config.event.clone(),
        }],
    };
    let mut cumulative = vec![first_post.iter().filter(|f| f.is_some()).count()];
    let mut failures = 0;
    for t in 1..=config.steps {
        let step_seed = derive_seed(seed, &[t as u64]);
        let results: Vec<Option<Result<String, String>>> = (0..n)
            .into_par_iter()
            .map(|i| -> Result<_, SimError> {
                if first_post[i].is_some() {
                    return Ok(None);
                }
                let page: Vec<String> = followees[i]
                    .iter()
                    .filter_map(|&j| posts[j].as_ref().map(|p| format!("@{j}: {p}")))
                    .collect();
                if page.is_empty() {
                    return Ok(None);
                }
                let req = sim.request(i, 0, &schedule, &page, page.len())?;
                let mut rng = substream(step_seed, i as u64);
                Ok(Some(generator.generate(&req, &mut rng)))
            })
            .collect::<Result<_, _>>()?;
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Some(Ok(post)) if mentions_event(&post, &config.keywords) => {
                    first_post[i] = Some(t);
                    posts[i] = Some(post);
                }
                Some(Err(_)) => failures += 1,
                _ => {}
            }
        }
        cumulative.push(first_post.iter().filter(|f| f.is_some()).count());
    }
    Ok(SpreadRun {
        cumulative,
        first_post,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyword_matching_is_whole_word() {
        let k = vec!["Ukraine".to_string()];
        assert!(mentions_event("news from ukraine!", &k));
        assert!(!mentions_event("ukrainexyz", &k));
    }
}
