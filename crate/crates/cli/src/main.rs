use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use swarmrl::env::{Boundary, Dynamics, FeatureSet, Observability, TaskConfig};
use swarmrl::experiment::{
    evaluate_checkpoint, run_baseline, top_q_median, train, tune_gains, write_aggregate, write_gain_results,
    ExperimentConfig, GainGrid, CURVE_FILE,
};
use swarmrl::policy::{Checkpoint, EmbeddingSpec};
use swarmrl::trpo::LearningCurve;

#[derive(Parser, Debug)]
#[command(name = "swarmrl", version, about = "Swarm multi-agent RL workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a shared policy with TRPO, then evaluate it.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint.
    Eval(EvalArgs),
    /// Evaluate a classical controller.
    Baseline(BaselineArgs),
    /// Top-q median of the learning curves of several trials.
    Aggregate(AggregateArgs),
    /// Grid search over consensus gains.
    TuneGains(TuneArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TaskArg {
    Rendezvous,
    Pursuit,
    MultiPursuit,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DynamicsArg {
    Single,
    Double,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ObsArg {
    Global,
    Local,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FeaturesArg {
    Basic,
    Extended,
    Comm,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BoundaryArg {
    Closed,
    Toroidal,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum EmbeddingArg {
    NnMean,
    Hist,
    Rbf,
    Softmax,
    Max,
    Concat,
    Moments,
}

/// Settings shared by every subcommand that builds an experiment.
#[derive(Args, Debug, Default)]
struct Common {
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    evaders: Option<usize>,
    #[arg(long, value_enum)]
    dynamics: Option<DynamicsArg>,
    #[arg(long, value_enum)]
    obs: Option<ObsArg>,
    #[arg(long, value_enum)]
    features: Option<FeaturesArg>,
    #[arg(long, value_enum)]
    boundary: Option<BoundaryArg>,
    #[arg(long, value_enum)]
    embedding: Option<EmbeddingArg>,
    /// Softmax pooling temperature.
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    /// Communication cut-off.
    #[arg(long)]
    dc: Option<f64>,
    /// Observation radius of the pursuit tasks.
    #[arg(long = "do")]
    d_o: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Rollout workers; also read from SWARMRL_WORKERS.
    #[arg(long, env = "SWARMRL_WORKERS")]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    top_q: Option<usize>,
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Swarm sizes for cross-scale evaluation, comma separated.
    #[arg(long, value_delimiter = ',')]
    scales: Vec<usize>,
    /// Sample actions instead of acting on the policy mean.
    #[arg(long)]
    stochastic: bool,
    #[arg(long, default_value = "runs/eval")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[command(flatten)]
    common: Common,
    /// random, zero, consensus, voronoi-pursuit or surround.
    #[arg(long)]
    controller: Option<String>,
    #[arg(long, default_value = "runs/baseline")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    /// Learning-curve CSV files, or run directories containing trial_NN/curve.csv.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    top_q: usize,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    k1: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    k2: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    d2: Vec<f64>,
    #[arg(long, default_value = "runs/gains.csv")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
            None => Ok(ExperimentConfig::default()),
        }
    }

    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        let t = &mut cfg.task;
        if let Some(task) = self.task {
            let agents = t.agents;
            *t = match task {
                TaskArg::Rendezvous => TaskConfig::rendezvous(agents),
                TaskArg::Pursuit => TaskConfig::pursuit(agents),
                TaskArg::MultiPursuit => TaskConfig::multi_pursuit(agents, self.evaders.unwrap_or(2)),
            };
        }
        if let Some(n) = self.agents {
            t.agents = n;
        }
        if let Some(n) = self.evaders {
            t.evaders = n;
        }
        if let Some(d) = self.dynamics {
            t.dynamics = match d {
                DynamicsArg::Single => Dynamics::Single,
                DynamicsArg::Double => Dynamics::Double,
            };
        }
        if let Some(o) = self.obs {
            t.observability = match o {
                ObsArg::Global => Observability::Global,
                ObsArg::Local => Observability::Local,
            };
        }
        if let Some(f) = self.features {
            t.features = match f {
                FeaturesArg::Basic => FeatureSet::Basic,
                FeaturesArg::Extended => FeatureSet::Extended,
                FeaturesArg::Comm => FeatureSet::Comm,
            };
        }
        if let Some(d) = self.dc {
            t.d_c = d;
        }
        if let Some(d) = self.d_o {
            t.d_o = d;
        }
        if let Some(b) = self.boundary {
            cfg.world.boundary = match b {
                BoundaryArg::Closed => Boundary::Closed,
                BoundaryArg::Toroidal => Boundary::Toroidal,
            };
        }
        if let Some(e) = self.embedding {
            let name = match e {
                EmbeddingArg::NnMean => "nn_mean",
                EmbeddingArg::Hist => "histogram",
                EmbeddingArg::Rbf => "rbf",
                EmbeddingArg::Softmax => "softmax",
                EmbeddingArg::Max => "max",
                EmbeddingArg::Concat => "concat",
                EmbeddingArg::Moments => "moments",
            };
            let neighbors = cfg.task.agents.saturating_sub(1).max(1);
            cfg.policy.embedding = EmbeddingSpec::with_defaults(name, neighbors).expect("known embedding");
        }
        if let Some(a) = self.alpha {
            match &mut cfg.policy.embedding {
                EmbeddingSpec::Softmax { alpha, .. } => *alpha = a,
                other => bail!("--alpha only applies to the softmax embedding (got {})", other.name()),
            }
        }
        if let Some(s) = self.seed {
            cfg.trainer.seed = s;
            cfg.eval.seed = s;
        }
        if let Some(e) = self.episodes {
            cfg.eval.episodes = e;
        }
        if let Some(h) = self.horizon {
            cfg.eval.horizon = Some(h);
        }
        if let Some(w) = self.workers {
            cfg.trainer.workers = w;
        }
        Ok(())
    }

    /// Validates `cfg`; with `--print-config` prints it and reports that the caller should stop.
    fn finish(&self, cfg: &ExperimentConfig) -> Result<bool> {
        cfg.validate()?;
        if self.print_config {
            print!("{}", cfg.to_toml()?);
            return Ok(true);
        }
        Ok(false)
    }
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    a.common.apply(&mut cfg)?;
    if let Some(n) = a.iters {
        cfg.trainer.iterations = n;
    }
    if let Some(n) = a.trials {
        cfg.trials = n;
    }
    match a.top_q {
        Some(q) => cfg.top_q = q,
        None if a.trials.is_some() => cfg.top_q = cfg.top_q.min(cfg.trials.max(1)),
        None => {}
    }
    if a.common.finish(&cfg)? {
        return Ok(());
    }
    let outcomes = train(&cfg, &a.out, |k, r| {
        log::debug!("trial {k} iter {} return {:.4}", r.iter, r.avg_return);
    })?;
    for o in &outcomes {
        let last = o.curve.records.last().map_or(f64::NAN, |r| r.avg_return);
        println!(
            "{}: final avg return {last:.4}, eval final distance {:.4}, capture {:.3}",
            o.dir.display(),
            o.eval.final_distance(),
            o.eval.final_capture()
        );
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let mut cfg = a.common.load()?;
    if a.common.config.is_none() {
        if let Some(t) = &ckpt.task {
            cfg.task = t.clone();
        }
        if let Some(w) = ckpt.world {
            cfg.world = w;
        }
    }
    cfg.policy.features = Some(ckpt.policy_spec.features.clone());
    cfg.policy.embedding = ckpt.policy_spec.embedding.clone();
    cfg.policy.evader_embedding = ckpt.policy_spec.evader_embedding.clone();
    cfg.policy.trunk = ckpt.policy_spec.trunk.clone();
    a.common.apply(&mut cfg)?;
    if !a.scales.is_empty() {
        cfg.eval.scales = a.scales.clone();
    }
    cfg.eval.stochastic |= a.stochastic;
    if a.common.finish(&cfg)? {
        return Ok(());
    }
    let r = evaluate_checkpoint(&ckpt, &cfg.task, &cfg.world, &cfg, &a.out)?;
    println!(
        "{} with {} agents over {} episodes: final distance {:.4}, capture {:.3}, mean return {:.4}",
        r.controller,
        r.agents,
        r.episodes,
        r.final_distance(),
        r.final_capture(),
        r.mean_return()
    );
    Ok(())
}

fn run_baseline_cmd(a: BaselineArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    a.common.apply(&mut cfg)?;
    if let Some(c) = &a.controller {
        cfg.baseline.controller = c.clone();
    }
    if a.common.finish(&cfg)? {
        return Ok(());
    }
    let r = run_baseline(&cfg, &a.out)?;
    println!(
        "{} with {} agents over {} episodes: final distance {:.4}, capture {:.3}, mean return {:.4}",
        r.controller,
        r.agents,
        r.episodes,
        r.final_distance(),
        r.final_capture(),
        r.mean_return()
    );
    Ok(())
}

fn curve_paths(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut found: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("trial_")))
        .map(|p| p.join(CURVE_FILE))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        bail!("no trial_*/{CURVE_FILE} under {}", input.display());
    }
    Ok(found)
}

fn run_aggregate(a: AggregateArgs) -> Result<()> {
    let mut curves = Vec::new();
    for input in &a.inputs {
        for p in curve_paths(input)? {
            curves.push(LearningCurve::load(&p).with_context(|| format!("loading {}", p.display()))?);
        }
    }
    let rows = top_q_median(&curves, a.top_q)?;
    match &a.out {
        Some(p) => write_aggregate(&rows, std::fs::File::create(p)?)?,
        None => write_aggregate(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}

fn run_tune(a: TuneArgs) -> Result<()> {
    let mut cfg = a.common.load()?;
    if a.common.episodes.is_none() && a.common.config.is_none() {
        cfg.eval.episodes = 20;
    }
    a.common.apply(&mut cfg)?;
    if a.common.finish(&cfg)? {
        return Ok(());
    }
    let d = GainGrid::default();
    let pick = |v: &Vec<f64>, fallback: Vec<f64>| if v.is_empty() { fallback } else { v.clone() };
    let grid = GainGrid {
        k1: pick(&a.k1, d.k1),
        k2: pick(&a.k2, d.k2),
        d2: pick(&a.d2, d.d2),
    };
    let horizon = cfg.eval.horizon_for(&cfg.task);
    let results = tune_gains(
        &cfg.task,
        &cfg.world,
        &grid,
        cfg.baseline.reference,
        cfg.eval.episodes,
        horizon,
        cfg.eval.seed,
    )?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_gain_results(&results, &a.out)?;
    if let Some(best) = results.first() {
        println!(
            "best gains k1={} k2={} d2={}: final distance {:.4}, {} increases after t=100",
            best.k1, best.k2, best.d2, best.final_distance, best.increases_after_100
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Baseline(a) => run_baseline_cmd(a),
        Command::Aggregate(a) => run_aggregate(a),
        Command::TuneGains(a) => run_tune(a),
    }
}
