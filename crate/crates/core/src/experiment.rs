//! Config-driven end-to-end runs.
//!
//! A run loads or synthesizes a dataset, restricts it to the configured
//! pool, splits it, builds model representations from the training split,
//! trains a quality and a cost predictor, sweeps the test split over the λ
//! grid and writes a report. Everything is seeded from the config, so two
//! runs of one config produce byte-identical outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, normalize_embeddings, split, RoutingDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    log_grid, render_table, sweep_from_trace, sweep_with_trace, validate_grid, OracleRouter, PredictiveRouter, RouterReport,
    SweepResult, DEFAULT_GRID_LEN, DEFAULT_GRID_MAX, DEFAULT_GRID_MIN,
};
use crate::predictors::{
    predict_matrix, save_predictor, train, Architecture, Predictor, PredictorConfig, Target, TrainReport,
};
use crate::representations::{
    build_representations, kmeans, RepresentationSet, DEFAULT_CLUSTERS, DEFAULT_MAX_ITERS, DEFAULT_SAMPLE_FRAC,
};
use crate::routing::{decide, RewardFamily, RewardSpec, RoutingDecision};
use crate::synth::{synth_generate, SynthSpec};

/// The λ grid: explicit `values`, or `count` log-spaced values in `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { min: DEFAULT_GRID_MIN, max: DEFAULT_GRID_MAX, count: DEFAULT_GRID_LEN, values: None }
    }
}

impl GridSpec {
    pub fn lambdas(&self) -> Result<Vec<f64>> {
        let grid = match &self.values {
            Some(v) => v.clone(),
            None => log_grid(self.min, self.max, self.count)?,
        };
        validate_grid(&grid)?;
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepresentationConfig {
    pub clusters: usize,
    pub sample_frac: f64,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        Self { clusters: DEFAULT_CLUSTERS, sample_frac: DEFAULT_SAMPLE_FRAC, seed: 0, max_iters: DEFAULT_MAX_ITERS }
    }
}

/// Optional overrides on top of [`PredictorConfig::new`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub architecture: Option<Architecture>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub internal_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_dims: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

impl PredictorSection {
    /// Resolve against the target defaults. Without an explicit seed the
    /// predictor seed is `fallback_seed`.
    pub fn resolve(&self, target: Target, fallback_seed: u64) -> PredictorConfig {
        let arch = self.architecture.unwrap_or(Architecture::Attention);
        let mut c = PredictorConfig::new(arch, target);
        if let Some(v) = self.internal_dim {
            c.internal_dim = v;
        }
        if let Some(v) = &self.hidden_dims {
            c.hidden_dims = v.clone();
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.weight_decay {
            c.weight_decay = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        c.seed = self.seed.unwrap_or(fallback_seed);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub reward: RewardFamily,
    /// Report signed (default) or absolute λ-sensitivity.
    pub absolute_sensitivity: bool,
    /// Scale embeddings to unit norm after loading.
    pub normalize: bool,
    /// Model whose call share is reported; defaults to the model with the
    /// best mean training quality.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strongest_model: Option<String>,
    /// Subset and order of the pool; defaults to the whole dataset pool.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool: Option<Vec<String>>,
    /// JSONL dataset; exactly one of `dataset` and `synth` must be set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    pub lambda_grid: GridSpec,
    pub split: SplitSpec,
    pub representations: RepresentationConfig,
    pub quality: PredictorSection,
    pub cost: PredictorSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            reward: RewardFamily::Exponential,
            absolute_sensitivity: false,
            normalize: false,
            strongest_model: None,
            pool: None,
            dataset: None,
            synth: None,
            lambda_grid: GridSpec::default(),
            split: SplitSpec::default(),
            representations: RepresentationConfig::default(),
            quality: PredictorSection::default(),
            cost: PredictorSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Self::read(path)?;
        cfg.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok(cfg)
    }

    /// Parse a config file without validating it, so that command-line
    /// overrides can complete it first.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.synth) {
            (Some(_), Some(_)) => return Err(Error::Config("set either `dataset` or `[synth]`, not both".into())),
            (None, None) => return Err(Error::Config("set `dataset` or a `[synth]` section".into())),
            (None, Some(s)) => s.validate()?,
            _ => {}
        }
        self.split.validate()?;
        self.lambda_grid.lambdas()?;
        let r = &self.representations;
        if r.clusters == 0 || r.max_iters == 0 || !(r.sample_frac > 0.0 && r.sample_frac <= 1.0) {
            return Err(Error::Config("representations need clusters >= 1, max_iters >= 1, 0 < sample_frac <= 1".into()));
        }
        self.quality_config().validate()?;
        self.cost_config().validate()?;
        if let Some(pool) = &self.pool {
            if pool.is_empty() {
                return Err(Error::Config("pool must name at least one model".into()));
            }
        }
        Ok(())
    }

    pub fn quality_config(&self) -> PredictorConfig {
        self.quality.resolve(Target::Quality, self.seed.wrapping_mul(2).wrapping_add(1))
    }

    pub fn cost_config(&self) -> PredictorConfig {
        self.cost.resolve(Target::Cost, self.seed.wrapping_mul(2).wrapping_add(2))
    }

    pub fn lambdas(&self) -> Result<Vec<f64>> {
        self.lambda_grid.lambdas()
    }
}

/// The dataset after loading, pool selection and splitting.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: RoutingDataset,
    pub val: RoutingDataset,
    pub test: RoutingDataset,
    pub strongest_model: String,
}

impl PreparedData {
    pub fn pool(&self) -> &[String] {
        self.train.pool()
    }
}

/// Load or synthesize the dataset named by the config.
pub fn load_source(cfg: &ExperimentConfig) -> Result<RoutingDataset> {
    let ds = match (&cfg.dataset, &cfg.synth) {
        (Some(path), _) => load_dataset(path)?,
        (None, Some(spec)) => synth_generate(spec, cfg.seed)?,
        (None, None) => return Err(Error::Config("no dataset source".into())),
    };
    let ds = match &cfg.pool {
        Some(pool) => ds.with_pool(pool)?,
        None => ds,
    };
    if cfg.normalize {
        normalize_embeddings(&ds)
    } else {
        Ok(ds)
    }
}

fn best_mean_quality(ds: &RoutingDataset) -> String {
    let q = ds.quality_matrix();
    let means = q.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let mut best = 0;
    for (i, &m) in means.iter().enumerate() {
        if m > means[best] {
            best = i;
        }
    }
    ds.pool()[best].clone()
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let ds = load_source(cfg).map_err(|e| e.in_stage("load"))?;
    let (train, val, test) = split(&ds, &cfg.split).map_err(|e| e.in_stage("split"))?;
    let strongest_model = match &cfg.strongest_model {
        Some(m) if ds.model_index(m).is_some() => m.clone(),
        Some(m) => {
            return Err(Error::Config(format!("strongest model `{m}` is not in the pool")).in_stage("load"));
        }
        None => best_mean_quality(&train),
    };
    Ok(PreparedData { train, val, test, strongest_model })
}

/// Cluster the training queries and average per-cluster quality.
pub fn build_reps(cfg: &RepresentationConfig, train: &RoutingDataset) -> Result<RepresentationSet> {
    let points: Vec<Vec<f64>> = train.records().iter().map(|r| r.embedding.clone()).collect();
    let clusters = kmeans(&points, cfg.clusters, cfg.seed, cfg.max_iters)?;
    build_representations(train, &clusters, cfg.sample_frac, cfg.seed)
}

#[derive(Debug, Clone)]
pub struct TrainedPair {
    pub quality: Predictor,
    pub cost: Predictor,
    pub quality_report: TrainReport,
    pub cost_report: TrainReport,
}

pub fn train_pair(
    data: &PreparedData,
    reps: &RepresentationSet,
    quality: &PredictorConfig,
    cost: &PredictorConfig,
) -> Result<TrainedPair> {
    let (qp, qr) = train(&data.train, &data.val, Some(reps), quality).map_err(|e| e.in_stage("train-quality"))?;
    let (cp, cr) = train(&data.train, &data.val, Some(reps), cost).map_err(|e| e.in_stage("train-cost"))?;
    Ok(TrainedPair { quality: qp, cost: cp, quality_report: qr, cost_report: cr })
}

pub fn predictive_router(
    quality: &Predictor,
    cost: &Predictor,
    ds: &RoutingDataset,
    reps: Option<&RepresentationSet>,
) -> Result<PredictiveRouter> {
    let q = predict_matrix(quality, ds, reps)?;
    let c = predict_matrix(cost, ds, reps)?;
    PredictiveRouter::new(q, c)
}

/// Route a single embedding.
pub fn route_embedding(
    quality: &Predictor,
    cost: &Predictor,
    reps: Option<&RepresentationSet>,
    pool: &[String],
    embedding: &[f64],
    spec: &RewardSpec,
    query_id: &str,
) -> Result<RoutingDecision> {
    let emb = Array2::from_shape_vec((1, embedding.len()), embedding.to_vec()).expect("one row");
    let rep_for = |p: &Predictor| -> Result<Option<Array2<f64>>> {
        if p.architecture().uses_representations() {
            let reps = reps.ok_or_else(|| Error::Invalid(format!("{} predictor needs representations", p.architecture())))?;
            reps.matrix_for(pool).map(Some)
        } else {
            Ok(None)
        }
    };
    let qr = rep_for(quality)?;
    let cr = rep_for(cost)?;
    let s = quality.predict(emb.view(), qr.as_ref().map(|m| m.view()))?;
    let c = cost.predict(emb.view(), cr.as_ref().map(|m| m.view()))?;
    decide(query_id, pool, s.row(0).as_slice().expect("contiguous"), c.row(0).as_slice().expect("contiguous"), spec, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub config: PredictorConfig,
    pub best_epoch: usize,
    pub best_loss: Option<f64>,
    pub final_train_loss: Option<f64>,
}

impl TrainingSummary {
    pub fn new(config: &PredictorConfig, r: &TrainReport) -> Self {
        Self {
            config: config.clone(),
            best_epoch: r.best_epoch,
            best_loss: r.best_loss.is_finite().then_some(r.best_loss).filter(|_| !r.train_loss.is_empty()),
            final_train_loss: r.train_loss.last().copied(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub pool: Vec<String>,
    pub strongest_model: String,
    pub sizes: [usize; 3],
    pub quality: TrainingSummary,
    pub cost: TrainingSummary,
    /// Predictive router first, oracle second.
    pub routers: Vec<RouterReport>,
}

impl ExperimentReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "pool: {}", self.pool.join(", "));
        let _ = writeln!(out, "split: {} train / {} val / {} test", self.sizes[0], self.sizes[1], self.sizes[2]);
        let _ = writeln!(
            out,
            "predictors: quality={} cost={}\n",
            self.quality.config.architecture, self.cost.config.architecture
        );
        out.push_str(&render_table(&self.routers));
        out
    }
}

/// Names of the files a run writes inside `out`.
pub const CONFIG_ECHO: &str = "config.echo.toml";
pub const REPS_FILE: &str = "reps.tsv";
pub const QUALITY_ARTIFACT: &str = "predictor-quality.bin";
pub const COST_ARTIFACT: &str = "predictor-cost.bin";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const ORACLE_TRACE_FILE: &str = "trace-oracle.jsonl";
pub const TRAINING_FILE: &str = "training.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const SWEEP_TSV: &str = "sweep.tsv";
pub const ORACLE_SWEEP_TSV: &str = "sweep-oracle.tsv";
/// Written when a run fails part-way; holds the stage-tagged error.
pub const FAILED_MARKER: &str = "FAILED";

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_trace(path: &Path, sweep: &SweepResult) -> Result<()> {
    let mut text = String::new();
    for d in sweep.decisions.iter().flatten() {
        text.push_str(&d.to_trace_line());
        text.push('\n');
    }
    write_file(path, text)
}

pub fn read_trace(path: &Path) -> Result<Vec<RoutingDecision>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            RoutingDecision::from_trace_line(l).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })
        })
        .collect()
}

/// Run the whole pipeline and write every output under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let out = cfg.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let marker = out.join(FAILED_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let result = run_stages(cfg, &out);
    if let Err(e) = &result {
        // Best effort: the original error matters more than a failed marker write.
        let _ = std::fs::write(&marker, format!("{e}\n"));
    }
    result
}

fn run_stages(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    write_file(&out.join(CONFIG_ECHO), cfg.to_toml())?;
    let data = prepare(cfg)?;
    let reps = stage_build_reps(cfg, &data, out)?;
    let (pair, training) = stage_train(cfg, &data, &reps, out)?;
    let sweeps = stage_sweep(cfg, &data, &reps, &pair.quality, &pair.cost, out)?;
    stage_report(cfg, &data, &training, &sweeps, out)
}

/// Training summaries of the quality and cost predictors, as written to
/// [`TRAINING_FILE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub quality: TrainingSummary,
    pub cost: TrainingSummary,
}

impl TrainingRecord {
    pub fn router_name(&self) -> String {
        format!("{}/{}", self.quality.config.architecture, self.cost.config.architecture)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
    }
}

/// Predictive and oracle sweeps of the test split.
#[derive(Debug, Clone)]
pub struct SweepPair {
    pub predicted: SweepResult,
    pub oracle: SweepResult,
}

/// Build representations from the training split and write [`REPS_FILE`].
pub fn stage_build_reps(cfg: &ExperimentConfig, data: &PreparedData, out: &Path) -> Result<RepresentationSet> {
    let reps = build_reps(&cfg.representations, &data.train).map_err(|e| e.in_stage("representations"))?;
    reps.save(&out.join(REPS_FILE)).map_err(|e| e.in_stage("representations"))?;
    Ok(reps)
}

/// Train both predictors and write their artifacts and [`TRAINING_FILE`].
pub fn stage_train(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    reps: &RepresentationSet,
    out: &Path,
) -> Result<(TrainedPair, TrainingRecord)> {
    let qcfg = cfg.quality_config();
    let ccfg = cfg.cost_config();
    let pair = train_pair(data, reps, &qcfg, &ccfg)?;
    let record = TrainingRecord {
        quality: TrainingSummary::new(&qcfg, &pair.quality_report),
        cost: TrainingSummary::new(&ccfg, &pair.cost_report),
    };
    let save = || -> Result<()> {
        save_predictor(&pair.quality, &out.join(QUALITY_ARTIFACT))?;
        save_predictor(&pair.cost, &out.join(COST_ARTIFACT))?;
        write_file(&out.join(TRAINING_FILE), serde_json::to_string_pretty(&record).expect("summary serializes") + "\n")
    };
    save().map_err(|e| e.in_stage("train"))?;
    Ok((pair, record))
}

/// Sweep the test split with the predictive and the oracle router and write
/// both traces and sweep tables.
pub fn stage_sweep(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    reps: &RepresentationSet,
    quality: &Predictor,
    cost: &Predictor,
    out: &Path,
) -> Result<SweepPair> {
    let lambdas = cfg.lambdas().map_err(|e| e.in_stage("sweep"))?;
    let router = predictive_router(quality, cost, &data.test, Some(reps)).map_err(|e| e.in_stage("predict"))?;
    let run = || -> Result<SweepPair> {
        let predicted = sweep_with_trace(&router, &data.test, &lambdas, cfg.reward)?;
        let oracle = sweep_with_trace(&OracleRouter, &data.test, &lambdas, cfg.reward)?;
        write_trace(&out.join(TRACE_FILE), &predicted)?;
        write_trace(&out.join(ORACLE_TRACE_FILE), &oracle)?;
        Ok(SweepPair { predicted, oracle })
    };
    run().map_err(|e| e.in_stage("sweep"))
}

/// Rebuild both sweeps from the traces written by [`stage_sweep`].
pub fn read_sweeps(pool: &[String], out: &Path) -> Result<SweepPair> {
    let predicted = sweep_from_trace(&read_trace(&out.join(TRACE_FILE))?, pool)?;
    let oracle = sweep_from_trace(&read_trace(&out.join(ORACLE_TRACE_FILE))?, pool)?;
    Ok(SweepPair { predicted, oracle })
}

/// Summarize both sweeps and write the sweep tables and the report.
pub fn stage_report(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    training: &TrainingRecord,
    sweeps: &SweepPair,
    out: &Path,
) -> Result<ExperimentReport> {
    let run = || -> Result<ExperimentReport> {
        let strongest = &data.strongest_model;
        let absolute = cfg.absolute_sensitivity;
        let routers = vec![
            RouterReport::new(&training.router_name(), &sweeps.predicted, strongest, absolute)?,
            RouterReport::new("oracle", &sweeps.oracle, strongest, absolute)?,
        ];
        write_file(&out.join(SWEEP_TSV), routers[0].to_tsv())?;
        write_file(&out.join(ORACLE_SWEEP_TSV), routers[1].to_tsv())?;
        let report = ExperimentReport {
            pool: data.pool().to_vec(),
            strongest_model: strongest.clone(),
            sizes: [data.train.len(), data.val.len(), data.test.len()],
            quality: training.quality.clone(),
            cost: training.cost.clone(),
            routers,
        };
        write_file(&out.join(REPORT_TEXT), report.to_text())?;
        write_file(
            &out.join(REPORT_JSON),
            serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
        )?;
        Ok(report)
    };
    run().map_err(|e| e.in_stage("report"))
}

/// The four predictor families crossed in the ablation grid.
pub const ABLATION_ARCHS: [Architecture; 4] =
    [Architecture::Regression, Architecture::Fcn2, Architecture::Fcn3, Architecture::Attention];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationGrid {
    pub family: RewardFamily,
    pub archs: Vec<Architecture>,
    /// `aiq[i][j]`: quality predictor `archs[i]` with cost predictor `archs[j]`.
    pub aiq: Vec<Vec<Option<f64>>>,
    pub perf_max: Vec<Vec<f64>>,
    pub oracle_aiq: Option<f64>,
}

impl AblationGrid {
    pub fn cell(&self, quality: Architecture, cost: Architecture) -> Option<f64> {
        let i = self.archs.iter().position(|&a| a == quality)?;
        let j = self.archs.iter().position(|&a| a == cost)?;
        self.aiq[i][j]
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("AIQ ({}), rows: quality predictor, columns: cost predictor\n", self.family.tag());
        let _ = write!(out, "{:<12}", "");
        for a in &self.archs {
            let _ = write!(out, "{:>12}", a.name());
        }
        out.push('\n');
        for (a, row) in self.archs.iter().zip(&self.aiq) {
            let _ = write!(out, "{:<12}", a.name());
            for v in row {
                let _ = write!(out, "{:>12}", v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.5}")));
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "oracle AIQ: {}",
            self.oracle_aiq.map_or_else(|| "n/a".to_string(), |x| format!("{x:.5}"))
        );
        out
    }
}

/// Train every architecture once per target, then sweep every
/// (quality, cost) pairing on the test split.
pub fn run_ablation(cfg: &ExperimentConfig, archs: &[Architecture]) -> Result<AblationGrid> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let lambdas = cfg.lambdas()?;
    let data = prepare(cfg)?;
    let reps = build_reps(&cfg.representations, &data.train).map_err(|e| e.in_stage("representations"))?;

    let mut quality = Vec::new();
    let mut cost = Vec::new();
    for &arch in archs {
        for (target, section, bucket) in
            [(Target::Quality, &cfg.quality, &mut quality), (Target::Cost, &cfg.cost, &mut cost)]
        {
            let mut s = section.clone();
            s.architecture = Some(arch);
            // Hidden sizes are per-architecture; an override for one family
            // must not leak into another.
            if section.architecture != Some(arch) {
                s.hidden_dims = None;
            }
            let fallback = cfg.seed.wrapping_mul(2).wrapping_add(if target == Target::Quality { 1 } else { 2 });
            let pc = s.resolve(target, fallback);
            let stage = if target == Target::Quality { "train-quality" } else { "train-cost" };
            let (p, _) = train(&data.train, &data.val, Some(&reps), &pc).map_err(|e| e.in_stage(stage))?;
            let m = predict_matrix(&p, &data.test, Some(&reps)).map_err(|e| e.in_stage("predict"))?;
            bucket.push(m);
        }
    }

    let strongest = &data.strongest_model;
    let mut aiq = Vec::new();
    let mut perf_max = Vec::new();
    for q in &quality {
        let mut row = Vec::new();
        let mut prow = Vec::new();
        for c in &cost {
            let router = PredictiveRouter::new(q.clone(), c.clone())?;
            let s = crate::evaluation::sweep(&router, &data.test, &lambdas, cfg.reward).map_err(|e| e.in_stage("sweep"))?;
            let m = crate::evaluation::metrics_report(&s, strongest, cfg.absolute_sensitivity)?;
            row.push(m.aiq);
            prow.push(m.perf_max);
        }
        aiq.push(row);
        perf_max.push(prow);
    }
    let oracle = crate::evaluation::sweep(&OracleRouter, &data.test, &lambdas, cfg.reward).map_err(|e| e.in_stage("sweep"))?;
    let oracle_aiq = crate::evaluation::metrics_report(&oracle, strongest, cfg.absolute_sensitivity)?.aiq;
    Ok(AblationGrid { family: cfg.reward, archs: archs.to_vec(), aiq, perf_max, oracle_aiq })
}
