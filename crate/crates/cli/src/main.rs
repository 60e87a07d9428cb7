//! `costroute`: run cost-aware routing experiments from the command line.
//!
//! Step commands share one run directory (`--out`). Each step writes the
//! effective config to `config.echo.toml`, and later steps read it back when
//! no `--config` is given, so a pipeline is
//!
//! ```text
//! costroute synth --out data.jsonl --n 500
//! costroute build-reps --data data.jsonl --out run
//! costroute train --out run
//! costroute sweep --out run
//! costroute report --out run
//! ```
//!
//! `run` performs all steps at once; `ablation` crosses predictor families.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use costroute::dataset::save_dataset;
use costroute::evaluation::{metrics_report, sweep_from_trace};
use costroute::experiment::{
    prepare, read_sweeps, read_trace, route_embedding, run_ablation, run_experiment, stage_build_reps, stage_report,
    stage_sweep, stage_train, write_file, ExperimentConfig, GridSpec, PreparedData, TrainingRecord, ABLATION_ARCHS,
    CONFIG_ECHO, COST_ARTIFACT, QUALITY_ARTIFACT, REPS_FILE, TRACE_FILE, TRAINING_FILE,
};
use costroute::predictors::load_predictor;
use costroute::synth::synth_generate;
use costroute::{Architecture, Error, RepresentationSet, Result, RewardFamily, RewardSpec, SynthSpec};

#[derive(Parser)]
#[command(name = "costroute", version, about = "Cost-aware routing across a pool of language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic routing dataset.
    Synth(SynthArgs),
    /// Cluster the training split and write per-model representations.
    BuildReps(Overrides),
    /// Train the quality and cost predictors.
    Train(Overrides),
    /// Route the test split at every λ and write the traces.
    Sweep(Overrides),
    /// Summarize the traces of a run directory.
    Report(Overrides),
    /// Recompute metrics from a saved trace.
    Eval(EvalArgs),
    /// Route one embedding and print the decision.
    Route(RouteArgs),
    /// Run every step.
    Run(Overrides),
    /// AIQ grid over quality × cost predictor families.
    Ablation(AblationArgs),
}

/// Config file and the flags that override it.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// Experiment config (TOML). Defaults to `<out>/config.echo.toml` if present.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated λ values, or `min:max:count` for a log-spaced grid.
    #[arg(long)]
    lambda_grid: Option<String>,
    /// Comma-separated model names.
    #[arg(long)]
    pool: Option<String>,
    #[arg(long)]
    arch_quality: Option<Architecture>,
    #[arg(long)]
    arch_cost: Option<Architecture>,
    /// Reward family: r1 (linear) or r2 (exponential).
    #[arg(long)]
    reward: Option<RewardFamily>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset file; replaces any dataset or synth section of the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training epochs for both predictors.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// Config whose `[synth]` section and seed are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset file to write; a manifest is written next to it.
    #[arg(long, default_value = "data.jsonl")]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    models: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Overrides,
    /// Trace to evaluate. Defaults to `<out>/trace.jsonl`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Model whose call share is reported as Max Calls.
    #[arg(long)]
    strongest: Option<String>,
}

#[derive(Args)]
struct RouteArgs {
    #[command(flatten)]
    common: Overrides,
    /// Comma-separated embedding.
    #[arg(long, conflicts_with = "embedding_file", required_unless_present = "embedding_file")]
    embedding: Option<String>,
    /// File holding the embedding as a JSON array.
    #[arg(long)]
    embedding_file: Option<PathBuf>,
    /// Willingness to pay.
    #[arg(long, allow_negative_numbers = true)]
    lambda: f64,
    #[arg(long, default_value = "query")]
    query_id: String,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    common: Overrides,
    /// Comma-separated architectures to cross.
    #[arg(long)]
    archs: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("costroute: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => synth(args),
        Command::BuildReps(o) => {
            let (cfg, out) = step_config(&o)?;
            let data = prepare(&cfg)?;
            let reps = stage_build_reps(&cfg, &data, &out)?;
            println!("{} models × {} clusters -> {}", reps.models().len(), reps.clusters(), out.join(REPS_FILE).display());
            Ok(())
        }
        Command::Train(o) => {
            let (cfg, out) = step_config(&o)?;
            let data = prepare(&cfg)?;
            let reps = reps_for(&cfg, &data, &out)?;
            let (_, record) = stage_train(&cfg, &data, &reps, &out)?;
            for (name, s) in [("quality", &record.quality), ("cost", &record.cost)] {
                println!(
                    "{name}: {} best epoch {} val loss {}",
                    s.config.architecture,
                    s.best_epoch,
                    s.best_loss.map_or("-".into(), |l| format!("{l:.6}"))
                );
            }
            Ok(())
        }
        Command::Sweep(o) => {
            let (cfg, out) = step_config(&o)?;
            let data = prepare(&cfg)?;
            let reps = RepresentationSet::load(&out.join(REPS_FILE)).map_err(|e| e.in_stage("sweep"))?;
            let quality = load_predictor(&out.join(QUALITY_ARTIFACT), None).map_err(|e| e.in_stage("sweep"))?;
            let cost = load_predictor(&out.join(COST_ARTIFACT), None).map_err(|e| e.in_stage("sweep"))?;
            let sweeps = stage_sweep(&cfg, &data, &reps, &quality, &cost, &out)?;
            println!("lambda\tavg_cost\tavg_perf");
            for p in &sweeps.predicted.points {
                println!("{}\t{:.6}\t{:.6}", p.lambda, p.avg_cost, p.avg_perf);
            }
            Ok(())
        }
        Command::Report(o) => {
            let (cfg, out) = step_config(&o)?;
            let data = prepare(&cfg)?;
            let training = TrainingRecord::load(&out.join(TRAINING_FILE)).map_err(|e| e.in_stage("report"))?;
            let sweeps = read_sweeps(data.pool(), &out).map_err(|e| e.in_stage("report"))?;
            print!("{}", stage_report(&cfg, &data, &training, &sweeps, &out)?.to_text());
            Ok(())
        }
        Command::Eval(args) => eval(args),
        Command::Route(args) => route(args),
        Command::Run(o) => {
            let cfg = resolve_config(&o)?;
            print!("{}", run_experiment(&cfg)?.to_text());
            Ok(())
        }
        Command::Ablation(args) => {
            let cfg = resolve_config(&args.common)?;
            let archs = match &args.archs {
                Some(list) => split_list(list).iter().map(|a| a.parse()).collect::<Result<Vec<Architecture>>>()?,
                None => ABLATION_ARCHS.to_vec(),
            };
            print!("{}", run_ablation(&cfg, &archs)?.to_text());
            Ok(())
        }
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let base = match &args.config {
        Some(path) => ExperimentConfig::read(path).map_err(|e| e.in_stage("config"))?,
        None => ExperimentConfig::default(),
    };
    let mut spec = base.synth.clone().unwrap_or_default();
    spec = SynthSpec {
        n: args.n.unwrap_or(spec.n),
        models: args.models.unwrap_or(spec.models),
        dim: args.dim.unwrap_or(spec.dim),
        clusters: args.clusters.unwrap_or(spec.clusters),
        noise: args.noise.unwrap_or(spec.noise),
        ..spec
    };
    let seed = args.seed.unwrap_or(base.seed);
    let ds = synth_generate(&spec, seed).map_err(|e| e.in_stage("synth"))?;
    save_dataset(&ds, &args.out).map_err(|e| e.in_stage("synth"))?;
    println!("{} queries × {} models -> {}", ds.len(), ds.num_models(), args.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let cfg = base_config(&args.common)?;
    let trace_path = args.trace.clone().unwrap_or_else(|| cfg.out.join(TRACE_FILE));
    let decisions = read_trace(&trace_path).map_err(|e| e.in_stage("eval"))?;
    let data: Option<PreparedData> = match (&cfg.pool, &args.strongest) {
        (Some(_), Some(_)) => None,
        _ => Some(prepare(&cfg)?),
    };
    let pool = match (&cfg.pool, &data) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => d.pool().to_vec(),
        (None, None) => unreachable!("data is prepared whenever the pool is unset"),
    };
    let strongest = match (&args.strongest, &data) {
        (Some(m), _) => m.clone(),
        (None, Some(d)) => d.strongest_model.clone(),
        (None, None) => unreachable!("data is prepared whenever the strongest model is unset"),
    };
    let sweep = sweep_from_trace(&decisions, &pool).map_err(|e| e.in_stage("eval"))?;
    let metrics = metrics_report(&sweep, &strongest, cfg.absolute_sensitivity).map_err(|e| e.in_stage("eval"))?;
    println!("{}", serde_json::to_string_pretty(&metrics).expect("metrics serialize"));
    Ok(())
}

fn route(args: RouteArgs) -> Result<()> {
    let cfg = base_config(&args.common)?;
    let out = &cfg.out;
    let embedding = match (&args.embedding, &args.embedding_file) {
        (Some(text), _) => split_list(text)
            .iter()
            .map(|x| x.parse::<f64>().map_err(|e| Error::Invalid(format!("embedding value `{x}`: {e}"))))
            .collect::<Result<Vec<f64>>>(),
        (None, Some(path)) => std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.clone(), source: e })
            .and_then(|t| serde_json::from_str(&t).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))),
        (None, None) => Err(Error::Invalid("no embedding given".into())),
    }
    .map_err(|e| e.in_stage("route"))?;
    let load = || -> Result<_> {
        let reps = RepresentationSet::load(&out.join(REPS_FILE))?;
        let quality = load_predictor(&out.join(QUALITY_ARTIFACT), None)?;
        let cost = load_predictor(&out.join(COST_ARTIFACT), None)?;
        Ok((reps, quality, cost))
    };
    let (reps, quality, cost) = load().map_err(|e| e.in_stage("route"))?;
    let pool: Vec<String> = match &cfg.pool {
        Some(p) => p.clone(),
        None => reps.models().iter().map(|m| m.model.clone()).collect(),
    };
    let spec = RewardSpec::new(cfg.reward, args.lambda).map_err(|e| e.in_stage("route"))?;
    let decision = route_embedding(&quality, &cost, Some(&reps), &pool, &embedding, &spec, &args.query_id)
        .map_err(|e| e.in_stage("route"))?;
    println!("{}", decision.to_trace_line());
    Ok(())
}

/// Representations saved by an earlier `build-reps`, or fresh ones.
fn reps_for(cfg: &ExperimentConfig, data: &PreparedData, out: &Path) -> Result<RepresentationSet> {
    let path = out.join(REPS_FILE);
    if path.exists() {
        RepresentationSet::load(&path).map_err(|e| e.in_stage("representations"))
    } else {
        stage_build_reps(cfg, data, out)
    }
}

/// Config for a step command: resolved, validated, with the run directory
/// created and the effective config echoed into it.
fn step_config(o: &Overrides) -> Result<(ExperimentConfig, PathBuf)> {
    let cfg = resolve_config(o)?;
    let out = cfg.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e }.in_stage("config"))?;
    write_file(&out.join(CONFIG_ECHO), cfg.to_toml()).map_err(|e| e.in_stage("config"))?;
    Ok((cfg, out))
}

fn resolve_config(o: &Overrides) -> Result<ExperimentConfig> {
    let cfg = base_config(o)?;
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    Ok(cfg)
}

/// The config file (explicit, or the run directory's echo) with every flag
/// applied, not yet validated.
fn base_config(o: &Overrides) -> Result<ExperimentConfig> {
    let echo = o.out.as_ref().map(|d| d.join(CONFIG_ECHO)).filter(|p| p.exists());
    let mut cfg = match o.config.as_ref().or(echo.as_ref()) {
        Some(path) => ExperimentConfig::read(path).map_err(|e| e.in_stage("config"))?,
        None => ExperimentConfig::default(),
    };
    apply(&mut cfg, o).map_err(|e| e.in_stage("config"))?;
    Ok(cfg)
}

fn apply(cfg: &mut ExperimentConfig, o: &Overrides) -> Result<()> {
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(grid) = &o.lambda_grid {
        cfg.lambda_grid = parse_grid(grid)?;
    }
    if let Some(pool) = &o.pool {
        cfg.pool = Some(split_list(pool));
    }
    if let Some(a) = o.arch_quality {
        cfg.quality.architecture = Some(a);
    }
    if let Some(a) = o.arch_cost {
        cfg.cost.architecture = Some(a);
    }
    if let Some(r) = o.reward {
        cfg.reward = r;
    }
    if let Some(out) = &o.out {
        cfg.out = out.clone();
    }
    if let Some(data) = &o.data {
        cfg.dataset = Some(data.clone());
        cfg.synth = None;
    }
    if let Some(e) = o.epochs {
        cfg.quality.epochs = Some(e);
        cfg.cost.epochs = Some(e);
    }
    Ok(())
}

fn parse_grid(text: &str) -> Result<GridSpec> {
    let bad = |m: String| Error::Config(format!("--lambda-grid `{text}`: {m}"));
    let grid = if let [lo, hi, n] = text.split(':').collect::<Vec<_>>()[..] {
        GridSpec {
            min: lo.trim().parse().map_err(|e| bad(format!("{e}")))?,
            max: hi.trim().parse().map_err(|e| bad(format!("{e}")))?,
            count: n.trim().parse().map_err(|e| bad(format!("{e}")))?,
            values: None,
        }
    } else {
        let values = split_list(text)
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| bad(format!("{e}"))))
            .collect::<Result<Vec<_>>>()?;
        GridSpec { values: Some(values), ..GridSpec::default() }
    };
    grid.lambdas()?;
    Ok(grid)
}

fn split_list(text: &str) -> Vec<String> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}
