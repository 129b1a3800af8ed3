use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EventSchedule, OpinionTrajectory, SentimentScorer, SimError};
use crate::corpus::{Dataset, UserRecord};
use crate::generator::prompt::{render, SIMULATION_TEMPLATE};
use crate::generator::{external_generate, ContextEncoder, EndpointConfig, GenerationParams, PolicyModel};
use crate::seeding::{derive_seed, substream};
use crate::textfeat::embed_text;

/// One agent's input for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentRequest {
    pub agent: usize,
    pub step: usize,
    /// The rendered simulation prompt.
    pub prompt: String,
    /// The agent's own profile summary.
    pub profile: String,
    /// Trigger event, past events and the visible posts, as plain text.
    pub social: String,
    /// Visible posts that mention the tracked event (spread mode only).
    pub exposures: usize,
}

/// Produces one post per request. Implemented by the toy policy, the chat
/// endpoint and plain closures.
pub trait PostGenerator: Sync {
    fn generate(&self, request: &AgentRequest, rng: &mut ChaCha8Rng) -> Result<String, String>;
}

impl<F> PostGenerator for F
where
    F: Fn(&AgentRequest, &mut ChaCha8Rng) -> Result<String, String> + Sync,
{
    fn generate(&self, request: &AgentRequest, rng: &mut ChaCha8Rng) -> Result<String, String> {
        self(request, rng)
    }
}

/// The toy policy conditioned on `[embed(profile), embed(social)]`; its
/// tweets are joined into one post.
pub struct PolicyGenerator {
    pub policy: PolicyModel,
    pub encoder: ContextEncoder,
    pub params: GenerationParams,
}

impl PostGenerator for PolicyGenerator {
    fn generate(&self, request: &AgentRequest, rng: &mut ChaCha8Rng) -> Result<String, String> {
        let mut ctx = embed_text(&request.profile, &self.encoder.embed);
        ctx.extend(embed_text(&request.social, &self.encoder.embed));
        let c = self.policy.sample(&ctx, &self.params, 1, rng).map_err(|e| e.to_string())?;
        Ok(self.policy.decode(&c[0].response).join("\n"))
    }
}

/// Sends the rendered prompt to a chat-completion endpoint.
pub struct EndpointGenerator {
    pub config: EndpointConfig,
    pub params: GenerationParams,
}

impl PostGenerator for EndpointGenerator {
    fn generate(&self, request: &AgentRequest, _rng: &mut ChaCha8Rng) -> Result<String, String> {
        external_generate(&self.config, &request.prompt, &self.params).map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub user: usize,
    pub opinion: f64,
    /// Most recent posts as `(step, text)`, oldest first.
    pub posts: VecDeque<(usize, String)>,
    pub informed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerativeConfig {
    /// Past events shown in the prompt.
    pub past_events: usize,
    /// Posts kept per agent.
    pub recent_posts: usize,
    /// Followee posts shown on the agent's page.
    pub page_posts: usize,
    pub encoder: ContextEncoder,
}

impl Default for GenerativeConfig {
    fn default() -> Self {
        Self {
            past_events: 3,
            recent_posts: 5,
            page_posts: 5,
            encoder: ContextEncoder::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerativeRun {
    /// Row 0 holds the initial opinions, row `t + 1` the opinions after
    /// step `t`.
    pub trajectory: OpinionTrajectory,
    /// Agents whose generation failed, per step.
    pub failures: Vec<usize>,
    pub states: Vec<AgentState>,
}

/// Generative agents over a dataset's follow graph.
pub struct OpinionSim<'a> {
    pub config: GenerativeConfig,
    users: &'a [UserRecord],
    followees: Vec<Vec<usize>>,
    profiles: Vec<String>,
}

impl<'a> OpinionSim<'a> {
    pub fn new(dataset: &'a Dataset, config: GenerativeConfig) -> Self {
        let users = dataset.users();
        let profiles = dataset
            .neighbours()
            .iter()
            .enumerate()
            .map(|(i, ns)| {
                let refs: Vec<&UserRecord> = ns.iter().map(|&j| &users[j]).collect();
                config.encoder.summaries(&users[i], &refs).0
            })
            .collect();
        Self {
            users,
            followees: dataset.followees(),
            profiles,
            config,
        }
    }

    pub fn followees(&self) -> &[Vec<usize>] {
        &self.followees
    }

    pub fn profile(&self, agent: usize) -> &str {
        &self.profiles[agent]
    }

    /// Each agent starts from the sentiment of its latest real tweets, which
    /// also fill its post history.
    pub fn initial_states(&self, sentiment: &dyn SentimentScorer) -> Vec<AgentState> {
        let keep = self.config.recent_posts;
        self.users
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let recent = &u.tweets[u.tweets.len().saturating_sub(keep)..];
                let joined: Vec<&str> = recent.iter().map(|t| t.text.as_str()).collect();
                AgentState {
                    user: i,
                    opinion: sentiment.score(&joined.join("\n")).clamp(-1.0, 1.0),
                    posts: recent.iter().map(|t| (0, t.text.clone())).collect(),
                    informed: false,
                }
            })
            .collect()
    }

    /// Latest post of each followee, up to `page_posts` of them.
    pub fn page(&self, states: &[AgentState], agent: usize) -> Vec<String> {
        self.followees[agent]
            .iter()
            .filter_map(|&j| states[j].posts.back().map(|(_, p)| format!("@{}: {p}", self.users[j].id)))
            .take(self.config.page_posts)
            .collect()
    }

    pub fn request(
        &self,
        agent: usize,
        step: usize,
        schedule: &EventSchedule,
        page: &[String],
        exposures: usize,
    ) -> Result<AgentRequest, SimError> {
        let event = schedule.at(step);
        let news = event.map(|e| e.text.as_str()).unwrap_or("");
        let past: Vec<&str> = schedule
            .past(step, self.config.past_events)
            .iter()
            .map(|e| e.text.as_str())
            .collect();
        let past = past.join(" ");
        let time = event.map(|e| e.date.clone()).unwrap_or_else(|| format!("step {step}"));
        let page_text = page.join("\n");
        let prompt = render(
            SIMULATION_TEMPLATE,
            &[
                ("agent_name", self.users[agent].id.as_str()),
                ("role_description", self.profiles[agent].as_str()),
                ("current_time", time.as_str()),
                ("trigger_news", news),
                ("past_event", past.as_str()),
                ("tweet_page", page_text.as_str()),
            ],
        )?;
        let social = [news, past.as_str(), page_text.as_str()]
            .iter()
            .filter(|s| !s.is_empty())
            .copied()
            .collect::<Vec<_>>()
            .join("\n");
        Ok(AgentRequest {
            agent,
            step,
            prompt,
            profile: self.profiles[agent].clone(),
            social,
            exposures,
        })
    }

    /// One synchronous step: every agent reads the `states` snapshot, posts,
    /// and takes the post's sentiment as its opinion. A failed generation
    /// keeps the previous opinion and is counted. Agent `i` at step `t` draws
    /// from stream `i` of `derive_seed(seed, [t])`.
    pub fn step(
        &self,
        states: &[AgentState],
        generator: &dyn PostGenerator,
        sentiment: &dyn SentimentScorer,
        schedule: &EventSchedule,
        step: usize,
        seed: u64,
    ) -> Result<(Vec<AgentState>, usize), SimError> {
        let step_seed = derive_seed(seed, &[step as u64]);
        let out: Vec<(AgentState, bool)> = (0..states.len())
            .into_par_iter()
            .map(|i| -> Result<_, SimError> {
                let page = self.page(states, i);
                let req = self.request(i, step, schedule, &page, 0)?;
                let mut rng = substream(step_seed, i as u64);
                let mut next = states[i].clone();
                match generator.generate(&req, &mut rng) {
                    Ok(post) => {
                        next.opinion = sentiment.score(&post).clamp(-1.0, 1.0);
                        next.posts.push_back((step, post));
                        while next.posts.len() > self.config.recent_posts {
                            next.posts.pop_front();
                        }
                        Ok((next, false))
                    }
                    Err(e) => {
                        log::warn!("agent {} step {step}: generation failed: {e}", self.users[i].id);
                        Ok((next, true))
                    }
                }
            })
            .collect::<Result<_, _>>()?;
        let failures = out.iter().filter(|(_, f)| *f).count();
        Ok((out.into_iter().map(|(s, _)| s).collect(), failures))
    }

    /// One step per scheduled event.
    pub fn run(
        &self,
        generator: &dyn PostGenerator,
        sentiment: &dyn SentimentScorer,
        schedule: &EventSchedule,
        seed: u64,
    ) -> Result<GenerativeRun, SimError> {
        let mut states = self.initial_states(sentiment);
        let mut opinions = vec![states.iter().map(|s| s.opinion).collect::<Vec<_>>()];
        let mut failures = Vec::new();
        for ev in &schedule.events {
            let (next, failed) = self.step(&states, generator, sentiment, schedule, ev.step, seed)?;
            states = next;
            opinions.push(states.iter().map(|s| s.opinion).collect());
            failures.push(failed);
        }
        Ok(GenerativeRun {
            trajectory: OpinionTrajectory { opinions },
            failures,
            states,
        })
    }
}
