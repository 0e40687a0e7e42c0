//! `placeopt`: instance generation, training, evaluation, baselines and
//! action-table dumps.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Set
//! `PLACEOPT_LOG` (e.g. `info`) for progress output on stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use placeopt_core::baselines::{context_distance_search, exhaustive_context_search, stochastic_search};
use placeopt_core::checkpoint::{load_policy, save_policy};
use placeopt_core::config::RunConfig;
use placeopt_core::env::{initial_state, ActionPolicy};
use placeopt_core::evaluation::{
    action_seed, evaluate_policy, format_action_table, format_instance_table, format_results_table, initial_for,
    subset_aggregates, InstanceResult, DEFAULT_SUBSETS,
};
use placeopt_core::par::{collect_ordered, Workers};
use placeopt_core::seed;
use placeopt_core::spatial::io::{list_instance_files, read_field, read_instance, read_polygon, write_instance};
use placeopt_core::spatial::{generate_instance, ProblemInstance};
use placeopt_core::train::{train, TrainOptions};

#[derive(Parser)]
#[command(
    name = "placeopt",
    version,
    about = "Learned improvement heuristics for sensor placement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate problem instances from seed readings and a region polygon.
    GenData(GenDataArgs),
    /// Train a policy from a config file.
    Train(TrainArgs),
    /// Roll trained policies out on an instance directory.
    Evaluate(EvaluateArgs),
    /// Run a search baseline on an instance directory.
    Baseline(BaselineArgs),
    /// Dump the action probability table of a policy for one state.
    Explain(ExplainArgs),
}

#[derive(clap::Args)]
struct GenDataArgs {
    /// Seed readings, one `x,y,value` per line.
    #[arg(long)]
    field: PathBuf,
    /// Region polygon, one `x,y` vertex per line.
    #[arg(long)]
    region: PathBuf,
    #[arg(short, long)]
    n: usize,
    #[arg(short, long)]
    m: usize,
    #[arg(short, long)]
    q: usize,
    /// Number of instances to write.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `rng_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `workers` from the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(clap::Args)]
struct EvalCommon {
    /// Directory of instance files; subsets are prefixes of its sorted order.
    #[arg(long)]
    instances: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated subset percentages.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SUBSETS.to_vec())]
    subsets: Vec<u32>,
    /// 0 or 1 evaluates sequentially.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Aggregate table path.
    #[arg(long)]
    out: PathBuf,
    /// Also write per-instance results here.
    #[arg(long)]
    per_instance: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    /// Checkpoint files; each contributes one block of rows labeled by its
    /// file stem.
    #[arg(long, required = true, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    /// Steps per episode.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Run config whose network settings and instance sizes the checkpoints
    /// must match.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: EvalCommon,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Stochastic,
    Context,
    ContextExhaustive,
}

impl Which {
    fn label(self) -> &'static str {
        match self {
            Which::Stochastic => "stochastic",
            Which::Context => "context",
            Which::ContextExhaustive => "context-exhaustive",
        }
    }
}

#[derive(clap::Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    which: Which,
    /// Iterations (stochastic) or maximum moves (context).
    #[arg(long, alias = "steps", default_value_t = placeopt_core::baselines::DEFAULT_ITERATIONS)]
    budget: usize,
    #[command(flatten)]
    common: EvalCommon,
}

#[derive(clap::Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    instance: PathBuf,
    /// Seed of the random state whose action table is dumped.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let field = read_field(&args.field)?;
    let poly = read_polygon(&args.region)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for i in 0..args.count {
        let s = seed::derive(args.seed, "gen-data", &[i as u64]);
        let inst = generate_instance(&field, &poly, args.n, args.m, args.q, s)?;
        write_instance(&args.out.join(format!("instance-{i:05}.txt")), &inst)?;
    }
    log::info!("wrote {} instances to {}", args.count, args.out.display());
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.train.rng_seed = s;
    }
    if let Some(w) = args.workers {
        cfg.train.workers = w;
    }
    let out = args
        .out
        .or(cfg.out_dir.clone())
        .context("no output directory: set `out_dir` in the config or pass --out")?;
    let field = read_field(cfg.field.as_deref().context("config is missing `field`")?)?;
    let poly = read_polygon(cfg.region.as_deref().context("config is missing `region`")?)?;
    let options = TrainOptions {
        checkpoint_dir: Some(out.clone()),
        resume: args.resume,
        keep_epoch_policies: cfg.keep_epoch_policies,
    };
    let outcome = train(&cfg.train, &cfg.net, &field, &poly, &options)?;
    write_file(&out.join("report.csv"), &outcome.report.to_csv())?;
    save_policy(&outcome.policy, &out.join("policy.ckpt"))?;
    log::info!("report and policy written to {}", out.display());
    Ok(())
}

fn load_instances(dir: &Path) -> Result<Vec<ProblemInstance>> {
    let files = list_instance_files(dir)?;
    if files.is_empty() {
        bail!("no instance files (*.txt) in {}", dir.display());
    }
    let instances = files.iter().map(|f| read_instance(f)).collect::<Result<Vec<_>, _>>()?;
    let (n, m) = (instances[0].n(), instances[0].m());
    if let Some((f, _)) = files.iter().zip(&instances).find(|(_, i)| i.n() != n || i.m() != m) {
        bail!("{} has different dimensions than {}", f.display(), files[0].display());
    }
    Ok(instances)
}

fn write_results(
    common: &EvalCommon,
    meta: Vec<(&str, String)>,
    blocks: &[(String, Vec<InstanceResult>)],
) -> Result<()> {
    let mut rows = Vec::new();
    for (label, results) in blocks {
        rows.extend(subset_aggregates(label, results, &common.subsets)?);
    }
    write_file(&common.out, &format_results_table(&meta, &rows))?;
    if let Some(path) = &common.per_instance {
        let mut text = String::new();
        for (label, results) in blocks {
            text.push_str(&format!("# label={label}\n"));
            text.push_str(&format_instance_table(results));
        }
        write_file(path, &text)?;
    }
    Ok(())
}

fn common_meta(common: &EvalCommon, method: &str, steps: usize, count: usize) -> Vec<(&'static str, String)> {
    vec![
        ("method", method.to_string()),
        ("seed", common.seed.to_string()),
        ("steps", steps.to_string()),
        ("instances", count.to_string()),
        ("subsets", "prefixes of the sorted instance file order".to_string()),
    ]
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let common = &args.common;
    let instances = load_instances(&common.instances)?;
    let expected = args.config.as_deref().map(RunConfig::load).transpose()?;
    if let Some(cfg) = &expected {
        let (n, m) = (instances[0].n(), instances[0].m());
        if (cfg.train.n, cfg.train.m) != (n, m) {
            bail!(
                "instances have n = {n}, m = {m} but the config trains n = {}, m = {}",
                cfg.train.n,
                cfg.train.m
            );
        }
    }
    let workers = Workers::new(common.workers)?;
    let mut blocks = Vec::new();
    for path in &args.checkpoint {
        let policy = load_policy(path)?;
        if let Some(cfg) = &expected {
            if cfg.net != policy.config {
                bail!(
                    "{} holds network {:?}, the config expects {:?}",
                    path.display(),
                    policy.config,
                    cfg.net
                );
            }
        }
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "policy".into());
        log::info!("evaluating {} on {} instances", path.display(), instances.len());
        let results = evaluate_policy(&policy, &instances, args.steps, common.seed, &workers)?;
        blocks.push((label, results));
    }
    let meta = common_meta(common, "policy", args.steps, instances.len());
    write_results(common, meta, &blocks)
}

fn baseline(args: BaselineArgs) -> Result<()> {
    let common = &args.common;
    let instances = load_instances(&common.instances)?;
    let workers = Workers::new(common.workers)?;
    let which = args.which;
    let results = collect_ordered(workers.map(instances.len(), |i| {
        let inst = &instances[i];
        let init = initial_for(inst, common.seed, i);
        let r = match which {
            Which::Stochastic => stochastic_search(inst, &init, args.budget, action_seed(common.seed, i)),
            Which::Context => context_distance_search(inst, &init, args.budget),
            Which::ContextExhaustive => exhaustive_context_search(inst),
        };
        r.map(|r| r.instance_result())
    }))?;
    let meta = common_meta(common, which.label(), args.budget, instances.len());
    write_results(common, meta, &[(which.label().to_string(), results)])
}

fn explain(args: ExplainArgs) -> Result<()> {
    let policy = load_policy(&args.checkpoint)?;
    let inst = read_instance(&args.instance)?;
    let state = initial_state(&inst, args.seed);
    let probs = policy.action_probs(&inst, &state)?;
    let mut text = format!("# state_seed={}\n# order={:?}\n", args.seed, state.order());
    text.push_str(&format_action_table(&state, &probs));
    write_file(&args.out, &text)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PLACEOPT_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Baseline(a) => baseline(a),
        Command::Explain(a) => explain(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
