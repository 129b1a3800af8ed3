use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use coevo_core::arena::{cross_community_generalization, eval_matrix, load_artifacts, Arena, RoundArtifacts};
use coevo_core::corpus::{
    detect_communities, load_dataset, serialize_dataset, synth_fixture, Dataset, FixtureVocab, Relation, UserRecord,
};
use coevo_core::generator::PolicyModel;
use coevo_core::metrics::{classification_metrics, dist_n, mann_whitney_u, shannon_entropy, stylistic_usage};
use coevo_core::plot::line_chart_svg;
use coevo_core::seeding::derive_seed;
use coevo_core::simulator::{
    choose_seeds, opinion_metrics, run_abm, run_spread, AbmModel, EndpointGenerator, EventSchedule, Lexicon, OpinionSim,
    PolicyGenerator, PostGenerator, TopicPoster, TrajectorySummary,
};
use coevo_core::textfeat::CategoricalSchema;
use coevo_core::theoryhall::{alternate_optimize, AlternateConfig, TabularPolicy, TabularWorld};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Backend, OpinionModel, RunConfig};
use crate::output::Output;

/// Seed paths for the commands that draw randomness outside the library.
const SEED_POLICY_INIT: u64 = 1;
const SEED_SPREAD_SEEDS: u64 = 2;

pub struct Run<'a> {
    pub config: &'a RunConfig,
    pub out: &'a Output,
    /// Files and directories read, for the manifest.
    pub inputs: Vec<PathBuf>,
}

fn dataset_files(dir: &Path) -> [PathBuf; 3] {
    [dir.join("users.jsonl"), dir.join("tweets.jsonl"), dir.join("edges.csv")]
}

impl Run<'_> {
    fn dataset(&mut self) -> anyhow::Result<Dataset> {
        match &self.config.corpus.dir {
            Some(dir) => {
                self.inputs.push(dir.clone());
                Ok(load_dir(dir)?)
            }
            None => Ok(synth_fixture(&self.config.corpus.fixture, &FixtureVocab::default())?),
        }
    }

    fn write_dataset(&self, prefix: &str, d: &Dataset) -> anyhow::Result<()> {
        let (u, t, e) = serialize_dataset(d)?;
        self.out.write(&format!("{prefix}/users.jsonl"), u)?;
        self.out.write(&format!("{prefix}/tweets.jsonl"), t)?;
        self.out.write(&format!("{prefix}/edges.csv"), e)?;
        Ok(())
    }

    fn generator(&mut self, dataset: &Dataset) -> anyhow::Result<Box<dyn PostGenerator>> {
        let g = &self.config.generator;
        Ok(match g.backend {
            Backend::Topic => Box::new(TopicPoster {
                probability: g.topic_probability,
                keyword: g.topic_keyword.clone(),
            }),
            Backend::Endpoint => Box::new(EndpointGenerator {
                config: g.endpoint.clone(),
                params: g.params.clone(),
            }),
            Backend::Toy => {
                let policy = match &g.policy {
                    Some(p) => {
                        self.inputs.push(p.clone());
                        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                        PolicyModel::from_json(&text)?
                    }
                    None => Arena::new(self.config.arena.clone(), dataset)?.initial_policy()?,
                };
                Box::new(PolicyGenerator {
                    policy,
                    encoder: self.config.arena.context.clone(),
                    params: g.params.clone(),
                })
            }
        })
    }
}

pub fn load_dir(dir: &Path) -> anyhow::Result<Dataset> {
    let [u, t, e] = dataset_files(dir);
    Ok(load_dataset(&u, &t, &e)?)
}

fn stats_csv(d: &Dataset) -> String {
    let bots = d.bot_indices().len();
    let follows = d.edges().iter().filter(|e| e.relation == Relation::Follow).count();
    let tweets: usize = d.users().iter().map(|u| u.tweets.len()).sum();
    format!(
        "users,humans,bots,edges,follow_edges,friend_edges,tweets\n{},{},{},{},{},{},{}\n",
        d.len(),
        d.len() - bots,
        bots,
        d.edges().len(),
        follows,
        d.edges().len() - follows,
        tweets
    )
}

pub fn ingest(run: &mut Run) -> anyhow::Result<()> {
    let c = &run.config.corpus;
    let (u, t, e) = (c.users.clone().unwrap(), c.tweets.clone().unwrap(), c.edges.clone().unwrap());
    let d = load_dataset(&u, &t, &e)?;
    run.inputs.extend([u, t, e]);
    run.write_dataset("dataset", &d)?;
    run.out.write("stats.csv", stats_csv(&d))?;
    Ok(())
}

pub fn fixture(run: &mut Run) -> anyhow::Result<()> {
    let d = synth_fixture(&run.config.corpus.fixture, &FixtureVocab::default())?;
    run.write_dataset("dataset", &d)?;
    run.out.write("stats.csv", stats_csv(&d))?;
    Ok(())
}

/// Communities ordered by size, largest first (ties by first member).
fn ordered_communities(d: &Dataset, run: &Run) -> anyhow::Result<(Vec<Vec<usize>>, coevo_core::corpus::CommunityPartition)> {
    let part = detect_communities(d, run.config.seed, &run.config.communities.louvain)?;
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, u) in d.users().iter().enumerate() {
        groups.entry(part.assignment[&u.id]).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    Ok((groups, part))
}

pub fn communities(run: &mut Run) -> anyhow::Result<()> {
    let d = run.dataset()?;
    let (groups, part) = ordered_communities(&d, run)?;
    let mut of = vec![0; d.len()];
    let mut sizes = String::from("community,users,humans,bots,written\n");
    for (c, g) in groups.iter().enumerate() {
        let bots = g.iter().filter(|&&i| !d.users()[i].label.is_human()).count();
        let written = g.len() >= run.config.communities.min_size;
        let _ = writeln!(sizes, "{c},{},{},{bots},{written}", g.len(), g.len() - bots);
        for &i in g {
            of[i] = c;
        }
        if written {
            run.write_dataset(&format!("community_{c:02}"), &d.subset(g)?)?;
        }
    }
    let mut assign = String::from("user,community\n");
    for (u, c) in d.users().iter().zip(&of) {
        let _ = writeln!(assign, "{},{c}", u.id);
    }
    let mut passes = String::from("level,modularity\n");
    for (l, q) in part.pass_modularity.iter().enumerate() {
        let _ = writeln!(passes, "{l},{q}");
    }
    run.out.write("communities.csv", assign)?;
    run.out.write("sizes.csv", sizes)?;
    run.out.write("passes.csv", passes)?;
    println!("{} communities, modularity {:.4}", groups.len(), part.modularity);
    Ok(())
}

pub fn train_detector(run: &mut Run) -> anyhow::Result<()> {
    let d = run.dataset()?;
    let arena = Arena::new(run.config.arena.clone(), &d)?;
    let (model, report) = arena.train_detector_report(&d, 0)?;
    let mut training = String::from("epoch,train_loss,val_f1\n");
    for (e, (l, f)) in report.train_loss.iter().zip(&report.val_f1).enumerate() {
        let _ = writeln!(training, "{e},{l},{f}");
    }
    let features = arena.featurizer().featurize(&d)?;
    let probs = coevo_core::detector::forward(&model, &features, arena.graph())?;
    let mut eval = String::from("part,users,accuracy,f1_human,f1_bot\n");
    let split = arena.split();
    for (name, rows) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let p: Vec<f64> = rows.iter().map(|&i| probs[i]).collect();
        let l: Vec<_> = rows.iter().map(|&i| arena.labels()[i]).collect();
        let r = classification_metrics(&p, &l, 0.5)?;
        let _ = writeln!(eval, "{name},{},{},{},{}", rows.len(), r.accuracy, r.f1_human, r.f1_bot);
    }
    run.out.write("classifier.json", model.to_json()?)?;
    run.out.write("training.csv", training)?;
    run.out.write("evaluation.csv", eval)?;
    println!("best epoch {} val F1 {:.4}", report.best_epoch, report.best_val_f1);
    Ok(())
}

fn run_arena_into(run: &Run, arena: &Arena, prefix: &str) -> anyhow::Result<RoundArtifacts> {
    let join = |name: &str| if prefix.is_empty() { name.to_string() } else { format!("{prefix}/{name}") };
    let dir = run.out.dir(&join("rounds"))?;
    let arts = arena.run(Some(&dir))?;
    let mut rounds = String::from("round,draws,pairs,ties,mean_chosen,mean_rejected,dpo_loss_first,dpo_loss_last\n");
    for s in &arts.pair_stats {
        let _ = writeln!(
            rounds,
            "{},{},{},{},{},{},{},{}",
            s.round, s.draws, s.pairs, s.ties, s.mean_chosen, s.mean_rejected, s.dpo_loss_first, s.dpo_loss_last
        );
    }
    let mut weights = String::from("round,member,weight\n");
    for (k, ws) in arts.weights.iter().enumerate() {
        for (m, w) in ws.iter().enumerate() {
            let _ = writeln!(weights, "{k},{m},{w}");
        }
    }
    run.out.write(&join("rounds.csv"), rounds)?;
    run.out.write(&join("weights.csv"), weights)?;
    Ok(arts)
}

pub fn run_arena(run: &mut Run) -> anyhow::Result<()> {
    let d = run.dataset()?;
    let arena = Arena::new(run.config.arena.clone(), &d)?;
    let arts = run_arena_into(run, &arena, "")?;
    println!("{} rounds written", arts.rounds());
    Ok(())
}

pub fn eval_matrix_cmd(run: &mut Run) -> anyhow::Result<()> {
    let d = run.dataset()?;
    let arena = Arena::new(run.config.arena.clone(), &d)?;
    let arts = match &run.config.rounds_dir {
        Some(dir) => {
            run.inputs.push(dir.clone());
            load_artifacts(dir, run.config.arena.rounds)?
        }
        None => run_arena_into(run, &arena, "")?,
    };
    let m = eval_matrix(&arena, &arts)?;
    run.out.write("matrix.csv", m.to_csv())?;
    run.out.write("matrix.svg", m.to_svg())?;
    let mut means = String::from("index,row_mean,col_mean\n");
    for (i, (r, c)) in m.row_means().iter().zip(m.col_means()).enumerate() {
        let _ = writeln!(means, "{i},{r},{c}");
    }
    run.out.write("means.csv", means)?;
    Ok(())
}

pub fn generalization(run: &mut Run) -> anyhow::Result<()> {
    let cfg = run.config;
    let communities: Vec<Dataset> = if cfg.generalization.datasets.is_empty() {
        let d = run.dataset()?;
        let (groups, _) = ordered_communities(&d, run)?;
        let keep: Vec<&Vec<usize>> = groups
            .iter()
            .filter(|g| g.len() >= cfg.communities.min_size)
            .take(cfg.generalization.take)
            .collect();
        if keep.len() < 2 {
            bail!(
                "only {} communities have at least {} users",
                keep.len(),
                cfg.communities.min_size
            );
        }
        keep.into_iter().map(|g| d.subset(g)).collect::<Result<_, _>>()?
    } else {
        run.inputs.extend(cfg.generalization.datasets.iter().cloned());
        cfg.generalization.datasets.iter().map(|p| load_dir(p)).collect::<Result<_, _>>()?
    };
    let mut arena_cfg = cfg.arena.clone();
    if arena_cfg.features.categorical.is_none() {
        let everyone: Vec<&UserRecord> = communities.iter().flat_map(|d| d.users()).collect();
        arena_cfg.features.categorical = Some(CategoricalSchema::infer(&everyone));
    }
    let mut detectors = Vec::with_capacity(communities.len());
    for (c, d) in communities.iter().enumerate() {
        let arena = Arena::new(arena_cfg.clone(), d).with_context(|| format!("community {c}"))?;
        let arts = run_arena_into(run, &arena, &format!("community_{c:02}"))?;
        detectors.push(arts.ensemble(arts.rounds(), arena_cfg.strategy)?);
    }
    let g = cross_community_generalization(&communities, &detectors, &arena_cfg, cfg.generalization.side)?;
    run.out.write("generalization.csv", g.to_csv())?;
    run.out.write("generalization.svg", g.to_svg(true))?;
    run.out.write("generalization_base.svg", g.to_svg(false))?;
    Ok(())
}

pub fn theory_check(run: &mut Run) -> anyhow::Result<()> {
    let t = &run.config.theory;
    let seed = run.config.seed;
    let world = TabularWorld::random(t.x, t.y, seed);
    let init = TabularPolicy::random(t.x, t.y, derive_seed(seed, &[SEED_POLICY_INIT]));
    let cfg = AlternateConfig {
        beta: t.beta,
        outer_steps: t.outer_steps,
        inner_steps: t.inner_steps,
        learning_rate: t.learning_rate,
        tolerance: t.tolerance,
    };
    let traj = alternate_optimize(&world, init, &cfg)?;
    let mut csv = String::from("step,avg_tv,max_f_dev,detector_objective,generator_objective\n");
    for p in &traj {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            p.step, p.avg_tv, p.max_f_dev, p.detector_objective, p.generator_objective
        );
    }
    let last = traj.last().expect("trajectory has the initial point");
    run.out.write("trajectory.csv", csv)?;
    run.out.write(
        "summary.csv",
        format!(
            "x,y,beta,steps,avg_tv,max_f_dev\n{},{},{},{},{},{}\n",
            t.x, t.y, t.beta, last.step, last.avg_tv, last.max_f_dev
        ),
    )?;
    run.out.write(
        "trajectory.svg",
        line_chart_svg(
            "alternating optimization",
            "outer step",
            "value",
            &[
                ("avg TV".into(), traj.iter().map(|p| p.avg_tv).collect()),
                ("max |F - 0.5|".into(), traj.iter().map(|p| p.max_f_dev).collect()),
            ],
        ),
    )?;
    println!("steps={} avg_tv={:.6} max_f_dev={:.6}", last.step, last.avg_tv, last.max_f_dev);
    Ok(())
}

pub fn simulate_opinion(run: &mut Run) -> anyhow::Result<()> {
    let cfg = run.config;
    let d = run.dataset()?;
    let sim = OpinionSim::new(&d, cfg.simulation.generative.clone());
    let lex = Lexicon::default();
    let ids: Vec<String> = d.users().iter().map(|u| u.id.clone()).collect();
    let traj = match cfg.simulation.model {
        OpinionModel::Bc | OpinionModel::Lorenz => {
            let initial: Vec<f64> = sim.initial_states(&lex).iter().map(|s| s.opinion).collect();
            let model = match cfg.simulation.model {
                OpinionModel::Bc => AbmModel::Bc(cfg.simulation.bc),
                _ => AbmModel::Lorenz(cfg.simulation.lorenz),
            };
            run_abm(&initial, sim.followees(), &model, cfg.simulation.steps, cfg.seed)
        }
        OpinionModel::Generative => {
            let schedule = cfg.simulation.load_schedule()?;
            if EventSchedule::builtin(&cfg.simulation.schedule).is_none() {
                run.inputs.push(PathBuf::from(&cfg.simulation.schedule));
            }
            let generator = run.generator(&d)?;
            let r = sim.run(generator.as_ref(), &lex, &schedule, cfg.seed)?;
            let mut failures = String::from("step,failures\n");
            for (e, f) in schedule.events.iter().zip(&r.failures) {
                let _ = writeln!(failures, "{},{f}", e.step);
            }
            run.out.write("failures.csv", failures)?;
            r.trajectory
        }
    };
    let summary = traj.summary();
    run.out.write("opinions.csv", traj.to_csv(&ids))?;
    run.out.write("summary.csv", summary.to_csv())?;
    run.out.write(
        "opinion.svg",
        line_chart_svg(
            "group opinion",
            "step",
            "opinion",
            &[("mean".into(), summary.mean.clone()), ("std".into(), summary.std.clone())],
        ),
    )?;
    if let Some(real_path) = &cfg.simulation.real {
        run.inputs.push(real_path.clone());
        let real = TrajectorySummary::load(real_path)?;
        let m = opinion_metrics(&traj.without_initial().summary(), &real)?;
        run.out.write(
            "metrics.csv",
            format!("mean,std,delta_bias,delta_div\n{},{},{},{}\n", m.mean, m.std, m.delta_bias, m.delta_div),
        )?;
    }
    Ok(())
}

pub fn simulate_spread(run: &mut Run) -> anyhow::Result<()> {
    let cfg = run.config;
    let d = run.dataset()?;
    let sim = OpinionSim::new(&d, cfg.simulation.generative.clone());
    let spread = &cfg.simulation.spread;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[SEED_SPREAD_SEEDS]));
    let seeds = choose_seeds(d.len(), spread.seed_count, &mut rng)?;
    let generator = run.generator(&d)?;
    let r = run_spread(&sim, &seeds, generator.as_ref(), spread, cfg.seed)?;
    let mut first = String::from("user,first_step\n");
    for (u, f) in d.users().iter().zip(&r.first_post) {
        let _ = writeln!(first, "{},{}", u.id, f.map(|s| s.to_string()).unwrap_or_default());
    }
    run.out.write("spread.csv", r.to_csv())?;
    run.out.write("first_post.csv", first)?;
    run.out.write(
        "shape.csv",
        format!(
            "seeds,final,peak_step,concave_after_peak,failures\n{},{},{},{},{}\n",
            r.cumulative[0],
            r.cumulative.last().expect("seed row"),
            r.peak_step(),
            r.concave_after_peak(),
            r.failures
        ),
    )?;
    run.out.write(
        "spread.svg",
        line_chart_svg(
            "event spread",
            "step",
            "cumulative authors",
            &[("authors".into(), r.cumulative.iter().map(|&c| c as f64).collect())],
        ),
    )?;
    Ok(())
}

pub fn metrics(run: &mut Run) -> anyhow::Result<()> {
    let d = run.dataset()?;
    let mut csv = String::from(
        "group,users,tweets,dist1,dist2,entropy,emoji_rate,hashtag_rate,mention_rate,mean_chars,mean_words\n",
    );
    let groups: [(&str, fn(bool) -> bool); 3] = [("all", |_| true), ("human", |h| h), ("bot", |h| !h)];
    for (name, keep) in groups {
        let users: Vec<_> = d.users().iter().filter(|u| keep(u.label.is_human())).collect();
        let texts: Vec<&str> = users.iter().flat_map(|u| u.tweets.iter().map(|t| t.text.as_str())).collect();
        if texts.is_empty() {
            continue;
        }
        let s = stylistic_usage(&texts);
        let _ = writeln!(
            csv,
            "{name},{},{},{},{},{},{},{},{},{},{}",
            users.len(),
            texts.len(),
            dist_n(&texts, 1)?,
            dist_n(&texts, 2)?,
            shannon_entropy(&texts)?,
            s.emoji_rate,
            s.hashtag_rate,
            s.mention_rate,
            s.mean_chars,
            s.mean_words
        );
    }
    run.out.write("text_metrics.csv", csv)?;

    // per-user measures compared between humans and bots
    let mut tests = String::from("measure,humans,bots,statistic,p_value,exact\n");
    type Measure = fn(&[&str]) -> Option<f64>;
    let measures: [(&str, Measure); 3] = [
        ("tweets", |t| Some(t.len() as f64)),
        ("mean_words", |t| (!t.is_empty()).then(|| stylistic_usage(t).mean_words)),
        ("entropy", |t| shannon_entropy(t).ok()),
    ];
    for (name, f) in measures {
        let mut h = Vec::new();
        let mut b = Vec::new();
        for u in d.users() {
            let texts: Vec<&str> = u.tweets.iter().map(|t| t.text.as_str()).collect();
            if let Some(v) = f(&texts) {
                if u.label.is_human() { h.push(v) } else { b.push(v) }
            }
        }
        if h.is_empty() || b.is_empty() {
            continue;
        }
        let r = mann_whitney_u(&h, &b)?;
        let _ = writeln!(tests, "{name},{},{},{},{},{}", h.len(), b.len(), r.statistic, r.p_value, r.exact);
    }
    run.out.write("tests.csv", tests)?;
    Ok(())
}
