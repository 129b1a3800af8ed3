use std::path::{Path, PathBuf};

use anyhow::Context;
use coevo_core::arena::ArenaConfig;
use coevo_core::corpus::{FixtureSpec, LouvainConfig};
use coevo_core::generator::{EndpointConfig, GenerationParams};
use coevo_core::metrics::F1Side;
use coevo_core::simulator::{BcParams, EventSchedule, GenerativeConfig, LorenzParams, SpreadConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

/// Invalid configuration; every problem found is listed.
#[derive(Debug)]
pub struct ConfigError(pub Vec<String>);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0.join("; "))
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into `corpus.fixture.seed` and `arena.seed`.
    pub seed: u64,
    /// Rayon worker cap; 0 keeps the default pool.
    pub threads: usize,
    /// Persisted arena rounds read by `eval-matrix`; without them the arena
    /// is run first.
    pub rounds_dir: Option<PathBuf>,
    pub corpus: CorpusSection,
    pub communities: CommunitySection,
    pub arena: ArenaConfig,
    pub generator: GeneratorSection,
    pub simulation: SimulationSection,
    pub theory: TheorySection,
    pub generalization: GeneralizationSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Dataset directory (`users.jsonl`, `tweets.jsonl`, `edges.csv`).
    /// Without one, commands run on `fixture`.
    pub dir: Option<PathBuf>,
    /// Raw interchange files read by `ingest`.
    pub users: Option<PathBuf>,
    pub tweets: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub fixture: FixtureSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommunitySection {
    pub louvain: LouvainConfig,
    /// Communities smaller than this are not written out as datasets.
    pub min_size: usize,
}

impl Default for CommunitySection {
    fn default() -> Self {
        Self {
            louvain: LouvainConfig::default(),
            min_size: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// The toy policy network.
    #[default]
    Toy,
    /// A chat-completion endpoint.
    Endpoint,
    /// Rule-based event poster, spread only.
    Topic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub backend: Backend,
    /// Toy policy checkpoint; without one the round-0 policy is trained.
    pub policy: Option<PathBuf>,
    pub params: GenerationParams,
    pub endpoint: EndpointConfig,
    pub topic_probability: f64,
    pub topic_keyword: String,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self {
            backend: Backend::Toy,
            policy: None,
            params: GenerationParams {
                temperature: 1.0,
                top_k: 0,
                ..GenerationParams::default()
            },
            endpoint: EndpointConfig::default(),
            topic_probability: 0.2,
            topic_keyword: "ukraine".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpinionModel {
    #[default]
    Bc,
    Lorenz,
    Generative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub model: OpinionModel,
    /// ABM steps; the generative model runs one step per event.
    pub steps: usize,
    pub bc: BcParams,
    pub lorenz: LorenzParams,
    /// Built-in schedule name (`covid`, `ru_ua`) or a CSV path.
    pub schedule: String,
    /// Observed `step,mean,std` summary to compare against.
    pub real: Option<PathBuf>,
    pub generative: GenerativeConfig,
    pub spread: SpreadConfig,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            model: OpinionModel::Bc,
            steps: 100,
            bc: BcParams::default(),
            lorenz: LorenzParams::default(),
            schedule: "covid".into(),
            real: None,
            generative: GenerativeConfig::default(),
            spread: SpreadConfig::default(),
        }
    }
}

impl SimulationSection {
    pub fn load_schedule(&self) -> anyhow::Result<EventSchedule> {
        match EventSchedule::builtin(&self.schedule) {
            Some(s) => Ok(s),
            None => Ok(EventSchedule::load(Path::new(&self.schedule))?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    pub x: usize,
    pub y: usize,
    pub beta: f64,
    pub outer_steps: usize,
    pub inner_steps: usize,
    pub learning_rate: f64,
    pub tolerance: f64,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            x: 4,
            y: 8,
            beta: 0.2,
            outer_steps: 5000,
            inner_steps: 1,
            learning_rate: 10.0,
            tolerance: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralizationSection {
    /// Community dataset directories; without them the largest Louvain
    /// communities of the corpus are used.
    pub datasets: Vec<PathBuf>,
    /// How many detected communities to use.
    pub take: usize,
    pub side: F1Side,
}

impl Default for GeneralizationSection {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            take: 3,
            side: F1Side::Human,
        }
    }
}

/// Sets `a.b.c = value`, creating tables on the way.
pub fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("bad key {key:?}"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| format!("{key}: {p} is not a table"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses the right-hand side of `--set key=value` as a TOML value, falling
/// back to a plain string.
pub fn parse_value(text: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(text.into())),
        Err(_) => Value::String(text.into()),
    }
}

impl RunConfig {
    /// File values, then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> anyhow::Result<Self> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str::<Table>(&text).map_err(|e| ConfigError(vec![format!("{}: {e}", p.display())]))?
            }
            None => Table::new(),
        };
        let mut problems = Vec::new();
        for (k, v) in overrides {
            if let Err(e) = set_path(&mut table, k, v.clone()) {
                problems.push(e);
            }
        }
        if !problems.is_empty() {
            return Err(ConfigError(problems).into());
        }
        let mut cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(vec![e.to_string()]))?;
        cfg.corpus.fixture.seed = cfg.seed;
        cfg.arena.seed = cfg.seed;
        Ok(cfg)
    }

    /// Checks shared by every command plus the path inputs `command` reads.
    pub fn problems(&self, command: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut need = |path: &Option<PathBuf>, what: &str, required: bool| match path {
            Some(p) if !p.exists() => out.push(format!("{what}: {} does not exist", p.display())),
            None if required => out.push(format!("{what} is required")),
            _ => {}
        };
        need(&self.corpus.dir, "corpus.dir", false);
        let ingest = command == "ingest";
        need(&self.corpus.users, "corpus.users", ingest);
        need(&self.corpus.tweets, "corpus.tweets", ingest);
        need(&self.corpus.edges, "corpus.edges", ingest);
        need(&self.generator.policy, "generator.policy", false);
        need(&self.simulation.real, "simulation.real", false);
        need(&self.rounds_dir, "rounds_dir", false);
        if let Some(d) = &self.corpus.dir {
            for f in ["users.jsonl", "tweets.jsonl", "edges.csv"] {
                if d.exists() && !d.join(f).exists() {
                    out.push(format!("corpus.dir: {} has no {f}", d.display()));
                }
            }
        }
        for d in &self.generalization.datasets {
            if !d.exists() {
                out.push(format!("generalization.datasets: {} does not exist", d.display()));
            }
        }
        let f = &self.corpus.fixture;
        if f.n_users < 2 {
            out.push("corpus.fixture.n_users must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&f.bot_fraction) {
            out.push("corpus.fixture.bot_fraction must be in [0, 1]".into());
        }
        if f.min_tweets > f.max_tweets {
            out.push("corpus.fixture.min_tweets exceeds max_tweets".into());
        }
        out.extend(self.arena.problems().into_iter().map(|p| format!("arena.{p}")));
        let t = &self.theory;
        if t.x == 0 || t.y < 2 {
            out.push("theory.x must be positive and theory.y at least 2".into());
        }
        if t.beta <= 0.0 {
            out.push("theory.beta must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.generator.topic_probability) {
            out.push("generator.topic_probability must be in [0, 1]".into());
        }
        if let Err(e) = self.generator.params.validate() {
            out.push(format!("generator.params: {e}"));
        }
        if self.simulation.bc.epsilon < 0.0 || !(0.0..=1.0).contains(&self.simulation.bc.mu) {
            out.push("simulation.bc needs mu in [0, 1] and epsilon >= 0".into());
        }
        if EventSchedule::builtin(&self.simulation.schedule).is_none() && !Path::new(&self.simulation.schedule).exists() {
            out.push(format!(
                "simulation.schedule: {} is neither a built-in schedule nor an existing file",
                self.simulation.schedule
            ));
        }
        match command {
            "simulate-opinion" if self.simulation.model == OpinionModel::Generative && self.generator.backend == Backend::Topic => {
                out.push("generator.backend = topic only drives simulate-spread".into())
            }
            "generalization" if !self.generalization.datasets.is_empty() && self.generalization.datasets.len() < 2 => {
                out.push("generalization.datasets needs at least two entries".into())
            }
            "generalization" if self.generalization.datasets.is_empty() && self.generalization.take < 2 => {
                out.push("generalization.take must be at least 2".into())
            }
            _ => {}
        }
        out
    }

    /// The resolved configuration as TOML. Holds no secrets: the endpoint key
    /// is only ever named by its environment variable.
    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn hash(&self) -> anyhow::Result<String> {
        Ok(hex(&Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
