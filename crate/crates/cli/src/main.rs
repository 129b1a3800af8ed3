mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use toml::Value;

use commands::Run;
use config::{parse_value, ConfigError, RunConfig};
use output::Output;

#[derive(Parser)]
#[command(name = "coevo", version, about = "Adversarial generator/detector co-training and social simulations")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; every file the command writes goes below it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Any configuration key, e.g. `--set arena.pairs=64`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
}

#[derive(Args)]
struct DataArg {
    /// Dataset directory (users.jsonl, tweets.jsonl, edges.csv).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate raw interchange files and write a normalized dataset.
    Ingest {
        #[arg(long)]
        users: Option<PathBuf>,
        #[arg(long)]
        tweets: Option<PathBuf>,
        #[arg(long)]
        edges: Option<PathBuf>,
    },
    /// Generate a synthetic labelled community.
    Fixture {
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        bot_frac: Option<f64>,
    },
    /// Louvain communities of the follow/friend graph.
    Communities {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        min_size: Option<usize>,
    },
    /// Train one graph detector and report split metrics.
    TrainDetector {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
    },
    /// Run the adversarial rounds and persist every round.
    RunArena {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        arena: ArenaArgs,
    },
    /// Detector-by-policy F1 matrix over the arena rounds.
    EvalMatrix {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        arena: ArenaArgs,
        /// Rounds written by run-arena; without it the arena runs first.
        #[arg(long)]
        rounds_dir: Option<PathBuf>,
        /// test, holdout or all.
        #[arg(long)]
        scope: Option<String>,
        /// bot or human.
        #[arg(long)]
        side: Option<String>,
    },
    /// Cross-community transfer of the final detectors.
    Generalization {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        arena: ArenaArgs,
        /// Community dataset directories.
        #[arg(long, value_delimiter = ',')]
        datasets: Vec<PathBuf>,
    },
    /// Alternating optimization on a random tabular world.
    TheoryCheck {
        #[arg(long)]
        x: Option<usize>,
        #[arg(long)]
        y: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Group opinion dynamics (bc, lorenz or generative agents).
    SimulateOpinion {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// Built-in schedule (covid, ru_ua) or CSV path.
        #[arg(long)]
        schedule: Option<String>,
        /// Observed step,mean,std summary.
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Information spread from seed users over the follow graph.
    SimulateSpread {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        probability: Option<f64>,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Text diversity and style metrics by class.
    Metrics {
        #[command(flatten)]
        data: DataArg,
    },
}

#[derive(Args)]
struct ArenaArgs {
    /// Adversarial rounds K.
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
    /// uniform, greedy or exp:<alpha>.
    #[arg(long)]
    strategy: Option<String>,
}

fn path(p: &PathBuf) -> Value {
    Value::String(p.display().to_string())
}

fn int(n: usize) -> Value {
    Value::Integer(n as i64)
}

impl ArenaArgs {
    fn overrides(&self, o: &mut Vec<(String, Value)>) {
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        put("arena.rounds", self.rounds.map(int));
        put("arena.pairs", self.pairs.map(int));
        put("arena.candidates", self.candidates.map(int));
        put("arena.strategy", self.strategy.clone().map(Value::String));
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Fixture { .. } => "fixture",
            Command::Communities { .. } => "communities",
            Command::TrainDetector { .. } => "train-detector",
            Command::RunArena { .. } => "run-arena",
            Command::EvalMatrix { .. } => "eval-matrix",
            Command::Generalization { .. } => "generalization",
            Command::TheoryCheck { .. } => "theory-check",
            Command::SimulateOpinion { .. } => "simulate-opinion",
            Command::SimulateSpread { .. } => "simulate-spread",
            Command::Metrics { .. } => "metrics",
        }
    }

    fn overrides(&self) -> Vec<(String, Value)> {
        let mut o: Vec<(String, Value)> = Vec::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        match self {
            Command::Ingest { users, tweets, edges } => {
                put("corpus.users", users.as_ref().map(path));
                put("corpus.tweets", tweets.as_ref().map(path));
                put("corpus.edges", edges.as_ref().map(path));
            }
            Command::Fixture { users, bot_frac } => {
                put("corpus.fixture.n_users", users.map(int));
                put("corpus.fixture.bot_fraction", bot_frac.map(Value::Float));
            }
            Command::Communities { data, min_size } => {
                put("corpus.dir", data.data.as_ref().map(path));
                put("communities.min_size", min_size.map(int));
            }
            Command::TrainDetector { data, epochs, hidden } => {
                put("corpus.dir", data.data.as_ref().map(path));
                put("arena.detector.epochs", epochs.map(int));
                put("arena.detector.hidden", hidden.map(int));
            }
            Command::RunArena { data, arena } => {
                put("corpus.dir", data.data.as_ref().map(path));
                arena.overrides(&mut o);
            }
            Command::EvalMatrix { data, arena, rounds_dir, scope, side } => {
                put("corpus.dir", data.data.as_ref().map(path));
                put("rounds_dir", rounds_dir.as_ref().map(path));
                put("arena.eval.scope", scope.clone().map(Value::String));
                put("arena.eval.side", side.clone().map(Value::String));
                arena.overrides(&mut o);
            }
            Command::Generalization { data, arena, datasets } => {
                put("corpus.dir", data.data.as_ref().map(path));
                if !datasets.is_empty() {
                    put("generalization.datasets", Some(Value::Array(datasets.iter().map(path).collect())));
                }
                arena.overrides(&mut o);
            }
            Command::TheoryCheck { x, y, beta, steps } => {
                put("theory.x", x.map(int));
                put("theory.y", y.map(int));
                put("theory.beta", beta.map(Value::Float));
                put("theory.outer_steps", steps.map(int));
            }
            Command::SimulateOpinion { data, model, steps, schedule, real, backend, policy } => {
                put("corpus.dir", data.data.as_ref().map(path));
                put("simulation.model", model.clone().map(Value::String));
                put("simulation.steps", steps.map(int));
                put("simulation.schedule", schedule.clone().map(Value::String));
                put("simulation.real", real.as_ref().map(path));
                put("generator.backend", backend.clone().map(Value::String));
                put("generator.policy", policy.as_ref().map(path));
            }
            Command::SimulateSpread { data, seeds, steps, backend, probability, policy } => {
                put("corpus.dir", data.data.as_ref().map(path));
                put("simulation.spread.seed_count", seeds.map(int));
                put("simulation.spread.steps", steps.map(int));
                put("generator.backend", backend.clone().map(Value::String));
                put("generator.topic_probability", probability.map(Value::Float));
                put("generator.policy", policy.as_ref().map(path));
            }
            Command::Metrics { data } => put("corpus.dir", data.data.as_ref().map(path)),
        }
        o
    }
}

fn overrides(cli: &Cli) -> Result<Vec<(String, Value)>, ConfigError> {
    let mut o = Vec::new();
    let mut bad = Vec::new();
    for s in &cli.common.sets {
        match s.split_once('=') {
            Some((k, v)) => o.push((k.trim().to_string(), parse_value(v.trim()))),
            None => bad.push(format!("--set {s:?} is not KEY=VALUE")),
        }
    }
    if !bad.is_empty() {
        return Err(ConfigError(bad));
    }
    if let Some(s) = cli.common.seed {
        o.push(("seed".into(), Value::Integer(s as i64)));
    }
    if let Some(t) = cli.common.threads {
        o.push(("threads".into(), int(t)));
    }
    o.extend(cli.command.overrides());
    Ok(o)
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let name = cli.command.name();
    let config = RunConfig::resolve(cli.common.config.as_deref(), &overrides(cli)?)?;
    let mut problems = config.problems(name);
    if cli.common.out.is_none() {
        problems.push("--out is required".into());
    }
    if !problems.is_empty() {
        return Err(ConfigError(problems).into());
    }
    if config.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(config.threads).build_global()?;
    }
    let out = Output::create(cli.common.out.as_ref().expect("checked above"))?;
    let mut run = Run {
        config: &config,
        out: &out,
        inputs: cli.common.config.iter().cloned().collect(),
    };
    match &cli.command {
        Command::Ingest { .. } => commands::ingest(&mut run),
        Command::Fixture { .. } => commands::fixture(&mut run),
        Command::Communities { .. } => commands::communities(&mut run),
        Command::TrainDetector { .. } => commands::train_detector(&mut run),
        Command::RunArena { .. } => commands::run_arena(&mut run),
        Command::EvalMatrix { .. } => commands::eval_matrix_cmd(&mut run),
        Command::Generalization { .. } => commands::generalization(&mut run),
        Command::TheoryCheck { .. } => commands::theory_check(&mut run),
        Command::SimulateOpinion { .. } => commands::simulate_opinion(&mut run),
        Command::SimulateSpread { .. } => commands::simulate_spread(&mut run),
        Command::Metrics { .. } => commands::metrics(&mut run),
    }?;
    let inputs = std::mem::take(&mut run.inputs);
    out.finish(name, &config, &inputs)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(ConfigError(problems)) = e.downcast_ref::<ConfigError>() {
                for p in problems {
                    eprintln!("error[config]: {p}");
                }
                ExitCode::from(2)
            } else {
                eprintln!("error[{}]: {e:#}", cli.command.name());
                ExitCode::from(1)
            }
        }
    }
}
