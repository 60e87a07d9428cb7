//! λ sweeps, the cost–performance upper hull, AIQ, λ-sensitivity and the
//! report that bundles them.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{QueryRecord, RoutingDataset};
use crate::error::{Error, Result};
use crate::predictors::PredictionMatrix;
use crate::routing::{decide, RewardFamily, RewardSpec, RoutingDecision};

pub const DEFAULT_GRID_LEN: usize = 16;
pub const DEFAULT_GRID_MIN: f64 = 1e-4;
pub const DEFAULT_GRID_MAX: f64 = 1e2;

/// `n` logarithmically spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && lo.is_finite() && hi.is_finite()) || n < 2 {
        return Err(Error::Config(format!("bad λ grid: {n} values from {lo} to {hi}")));
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)
            }
        })
        .collect())
}

pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(DEFAULT_GRID_MIN, DEFAULT_GRID_MAX, DEFAULT_GRID_LEN).expect("valid default grid")
}

/// Sweep grids must be positive, finite, strictly increasing and have at
/// least three entries.
pub fn validate_grid(lambdas: &[f64]) -> Result<()> {
    if lambdas.len() < 3 {
        return Err(Error::Config(format!("λ grid needs at least 3 values, got {}", lambdas.len())));
    }
    if lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::Config("λ values must be finite and positive".into()));
    }
    if lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("λ grid must be strictly increasing".into()));
    }
    Ok(())
}

/// A routing policy: given a test query and the reward, choose a model.
pub trait Router: Sync {
    fn decide(&self, index: usize, record: &QueryRecord, pool: &[String], spec: &RewardSpec) -> Result<RoutingDecision>;
}

impl<F> Router for F
where
    F: Fn(usize, &QueryRecord, &[String], &RewardSpec) -> Result<RoutingDecision> + Sync,
{
    fn decide(&self, index: usize, record: &QueryRecord, pool: &[String], spec: &RewardSpec) -> Result<RoutingDecision> {
        self(index, record, pool, spec)
    }
}

/// Routes on ground-truth quality and cost.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleRouter;

impl Router for OracleRouter {
    fn decide(&self, _: usize, record: &QueryRecord, pool: &[String], spec: &RewardSpec) -> Result<RoutingDecision> {
        decide(&record.id, pool, &record.quality, &record.cost, spec, Some(record))
    }
}

/// Routes on precomputed quality and cost estimates, one row per test query.
/// Estimates do not depend on λ, so they are computed once per sweep.
#[derive(Debug, Clone)]
pub struct PredictiveRouter {
    quality: Array2<f64>,
    cost: Array2<f64>,
}

impl PredictiveRouter {
    pub fn new(quality: PredictionMatrix, cost: PredictionMatrix) -> Result<Self> {
        if quality.values.dim() != cost.values.dim() {
            return Err(Error::Shape(format!(
                "quality estimates {:?} and cost estimates {:?} differ in shape",
                quality.values.dim(),
                cost.values.dim()
            )));
        }
        Ok(Self { quality: quality.values, cost: cost.values })
    }

    pub fn quality(&self) -> &Array2<f64> {
        &self.quality
    }

    pub fn cost(&self) -> &Array2<f64> {
        &self.cost
    }
}

impl Router for PredictiveRouter {
    fn decide(&self, index: usize, record: &QueryRecord, pool: &[String], spec: &RewardSpec) -> Result<RoutingDecision> {
        if index >= self.quality.nrows() {
            return Err(Error::Shape(format!("no estimates for query {index}")));
        }
        let s = self.quality.row(index).to_vec();
        let c = self.cost.row(index).to_vec();
        decide(&record.id, pool, &s, &c, spec, Some(record))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    /// Mean realized cost per query, USD.
    pub avg_cost: f64,
    /// Mean realized quality.
    pub avg_perf: f64,
    /// Fraction of queries routed to each pool model.
    pub calls: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub family: RewardFamily,
    pub pool: Vec<String>,
    pub points: Vec<SweepPoint>,
    /// Per-λ decisions, kept only when a trace was requested.
    #[serde(skip)]
    pub decisions: Vec<Vec<RoutingDecision>>,
}

impl SweepResult {
    pub fn lambdas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lambda).collect()
    }

    pub fn cost_perf(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.avg_cost, p.avg_perf)).collect()
    }
}

fn sweep_one<R: Router + ?Sized>(
    router: &R,
    ds: &RoutingDataset,
    spec: &RewardSpec,
    keep: bool,
) -> Result<(SweepPoint, Vec<RoutingDecision>)> {
    let pool = ds.pool();
    let n = ds.len() as f64;
    let mut counts = vec![0usize; pool.len()];
    let (mut cost, mut perf) = (0.0, 0.0);
    let mut kept = Vec::new();
    for (i, rec) in ds.records().iter().enumerate() {
        let d = router.decide(i, rec, pool, spec)?;
        counts[d.model_index] += 1;
        perf += rec.quality[d.model_index];
        cost += rec.cost[d.model_index];
        if keep {
            kept.push(d);
        }
    }
    let point = SweepPoint {
        lambda: spec.lambda,
        avg_cost: cost / n,
        avg_perf: perf / n,
        calls: counts.iter().map(|&c| c as f64 / n).collect(),
    };
    Ok((point, kept))
}

/// Route every test query at every λ and average the realized outcomes.
pub fn sweep<R: Router + ?Sized>(
    router: &R,
    ds: &RoutingDataset,
    lambdas: &[f64],
    family: RewardFamily,
) -> Result<SweepResult> {
    sweep_impl(router, ds, lambdas, family, false)
}

/// Like [`sweep`], also keeping every routing decision.
pub fn sweep_with_trace<R: Router + ?Sized>(
    router: &R,
    ds: &RoutingDataset,
    lambdas: &[f64],
    family: RewardFamily,
) -> Result<SweepResult> {
    sweep_impl(router, ds, lambdas, family, true)
}

fn sweep_impl<R: Router + ?Sized>(
    router: &R,
    ds: &RoutingDataset,
    lambdas: &[f64],
    family: RewardFamily,
    keep: bool,
) -> Result<SweepResult> {
    if ds.is_empty() {
        return Err(Error::Dataset("cannot sweep an empty test set".into()));
    }
    validate_grid(lambdas)?;
    let specs = lambdas
        .iter()
        .map(|&l| RewardSpec::new(family, l))
        .collect::<Result<Vec<_>>>()?;

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(specs.len());
    let results: Vec<Result<(SweepPoint, Vec<RoutingDecision>)>> = if workers <= 1 {
        specs.iter().map(|s| sweep_one(router, ds, s, keep)).collect()
    } else {
        let chunk = specs.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = specs
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|s| sweep_one(router, ds, s, keep)).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect()
        })
    };

    let mut points = Vec::with_capacity(results.len());
    let mut decisions = Vec::new();
    for r in results {
        let (p, d) = r?;
        points.push(p);
        if keep {
            decisions.push(d);
        }
    }
    Ok(SweepResult { family, pool: ds.pool().to_vec(), points, decisions })
}

/// Rebuild a sweep from trace decisions: consecutive runs of one λ form a
/// point. Every decision must carry its realized outcome.
pub fn sweep_from_trace(decisions: &[RoutingDecision], pool: &[String]) -> Result<SweepResult> {
    let first = decisions.first().ok_or_else(|| Error::Invalid("empty trace".into()))?;
    let family = first.family;
    let mut groups: Vec<Vec<&RoutingDecision>> = Vec::new();
    for d in decisions {
        if d.family != family {
            return Err(Error::Invalid("trace mixes reward families".into()));
        }
        if pool.get(d.model_index) != Some(&d.model) {
            return Err(Error::Invalid(format!(
                "trace routes query `{}` to `{}` at index {}, which does not match the pool",
                d.query_id, d.model, d.model_index
            )));
        }
        match groups.last_mut() {
            Some(g) if g[0].lambda == d.lambda => g.push(d),
            _ => groups.push(vec![d]),
        }
    }
    let mut points = Vec::with_capacity(groups.len());
    for g in &groups {
        let n = g.len() as f64;
        let mut counts = vec![0usize; pool.len()];
        let (mut cost, mut perf) = (0.0, 0.0);
        for d in g {
            let (Some(q), Some(c)) = (d.realized_quality, d.realized_cost) else {
                return Err(Error::Invalid(format!("trace line for `{}` has no realized outcome", d.query_id)));
            };
            counts[d.model_index] += 1;
            perf += q;
            cost += c;
        }
        points.push(SweepPoint {
            lambda: g[0].lambda,
            avg_cost: cost / n,
            avg_perf: perf / n,
            calls: counts.iter().map(|&c| c as f64 / n).collect(),
        });
    }
    let lambdas: Vec<f64> = points.iter().map(|p| p.lambda).collect();
    validate_grid(&lambdas)?;
    Ok(SweepResult { family, pool: pool.to_vec(), points, decisions: Vec::new() })
}

/// Upper concave envelope of a cost–performance cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoCurve {
    /// Vertices, strictly increasing in cost and in performance.
    pub hull: Vec<(f64, f64)>,
    /// `[a, b]`: the smallest and largest input cost.
    pub cost_range: (f64, f64),
}

impl ParetoCurve {
    /// Envelope value at `cost`; flat at the best performance beyond the
    /// last vertex. `None` outside the cost range.
    pub fn value_at(&self, cost: f64) -> Option<f64> {
        let (a, b) = self.cost_range;
        if cost < a || cost > b {
            return None;
        }
        let last = *self.hull.last()?;
        if cost >= last.0 {
            return Some(last.1);
        }
        for w in self.hull.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if cost <= x1 {
                return Some(y0 + (y1 - y0) * (cost - x0) / (x1 - x0));
            }
        }
        Some(last.1)
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Upper convex hull of the Pareto-optimal points (monotone chain).
///
/// Points sharing a cost collapse to the best performance. Dominated points
/// and points on or below a chord are dropped.
pub fn pareto_hull(points: &[(f64, f64)]) -> Result<ParetoCurve> {
    if points.iter().any(|(c, p)| !c.is_finite() || !p.is_finite()) {
        return Err(Error::NonFinite("hull input".into()));
    }
    if points.len() < 2 {
        return Err(Error::Invalid("the hull needs at least two points".into()));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|x, y| x.0.total_cmp(&y.0).then(y.1.total_cmp(&x.1)));
    let a = sorted[0].0;
    let b = sorted[sorted.len() - 1].0;
    if b <= a {
        return Err(Error::Invalid("all points share one cost; the cost range is empty".into()));
    }

    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in &sorted {
        // Pareto filter: only points strictly better than everything cheaper.
        if hull.last().is_some_and(|l| p.0 == l.0 || p.1 <= l.1) {
            continue;
        }
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) >= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    Ok(ParetoCurve { hull, cost_range: (a, b) })
}

/// Area under the hull over `[a, b]`, divided by `b − a`.
pub fn aiq(curve: &ParetoCurve) -> Result<f64> {
    let (a, b) = curve.cost_range;
    if !(b > a) {
        return Err(Error::Invalid("AIQ is undefined for an empty cost range".into()));
    }
    let Some(&last) = curve.hull.last() else {
        return Err(Error::Invalid("empty hull".into()));
    };
    let mut area: f64 = curve
        .hull
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum();
    area += last.1 * (b - last.0);
    Ok(area / (b - a))
}

/// Log-λ-weighted average change of `values` across the grid.
///
/// Signed differences by default; `absolute` sums `|Δ|` instead.
pub fn lambda_sensitivity(lambdas: &[f64], values: &[f64], absolute: bool) -> Result<f64> {
    if lambdas.len() != values.len() {
        return Err(Error::Shape(format!("{} λ values but {} series values", lambdas.len(), values.len())));
    }
    validate_grid(lambdas)?;
    let span = (lambdas[lambdas.len() - 1] / lambdas[0]).ln();
    let total: f64 = lambdas
        .windows(2)
        .zip(values.windows(2))
        .map(|(l, v)| {
            let d = v[1] - v[0];
            (l[1] / l[0]).ln() * if absolute { d.abs() } else { d }
        })
        .sum();
    Ok(total / span)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Perf,
    Cost,
}

pub fn sweep_sensitivity(sweep: &SweepResult, axis: Axis, absolute: bool) -> Result<f64> {
    let values: Vec<f64> = sweep
        .points
        .iter()
        .map(|p| match axis {
            Axis::Perf => p.avg_perf,
            Axis::Cost => p.avg_cost,
        })
        .collect();
    lambda_sensitivity(&sweep.lambdas(), &values, absolute)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` when every sweep point has the same cost.
    pub aiq: Option<f64>,
    pub perf_max: f64,
    pub sens_perf: f64,
    pub sens_cost: f64,
    /// Largest fraction of queries sent to the strongest model at any λ.
    pub max_calls: f64,
}

pub fn metrics_report(sweep: &SweepResult, strongest: &str, absolute: bool) -> Result<MetricsReport> {
    let idx = sweep
        .pool
        .iter()
        .position(|m| m == strongest)
        .ok_or_else(|| Error::Config(format!("strongest model `{strongest}` is not in the pool")))?;
    let points = sweep.cost_perf();
    let aiq = match pareto_hull(&points) {
        Ok(curve) => Some(aiq(&curve)?),
        Err(Error::Invalid(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        aiq,
        perf_max: sweep.points.iter().map(|p| p.avg_perf).fold(f64::NEG_INFINITY, f64::max),
        sens_perf: sweep_sensitivity(sweep, Axis::Perf, absolute)?,
        sens_cost: sweep_sensitivity(sweep, Axis::Cost, absolute)?,
        max_calls: sweep.points.iter().map(|p| p.calls[idx]).fold(0.0, f64::max),
    })
}

/// Everything needed to reproduce a table row or plot for one router.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterReport {
    pub name: String,
    pub family: RewardFamily,
    pub strongest_model: String,
    pub pool: Vec<String>,
    pub points: Vec<SweepPoint>,
    pub hull: Option<ParetoCurve>,
    pub metrics: MetricsReport,
}

impl RouterReport {
    pub fn new(name: &str, sweep: &SweepResult, strongest: &str, absolute: bool) -> Result<Self> {
        let metrics = metrics_report(sweep, strongest, absolute)?;
        let hull = pareto_hull(&sweep.cost_perf()).ok();
        Ok(Self {
            name: name.to_string(),
            family: sweep.family,
            strongest_model: strongest.to_string(),
            pool: sweep.pool.clone(),
            points: sweep.points.clone(),
            hull,
            metrics,
        })
    }

    /// Plot data: one row per λ with the call distribution.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("lambda\tavg_cost\tavg_perf");
        for m in &self.pool {
            let _ = write!(out, "\tcalls_{m}");
        }
        out.push('\n');
        for p in &self.points {
            let _ = write!(out, "{:e}\t{:e}\t{}", p.lambda, p.avg_cost, p.avg_perf);
            for c in &p.calls {
                let _ = write!(out, "\t{c}");
            }
            out.push('\n');
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.5}"))
}

/// Human-readable comparison table, one row per router.
pub fn render_table(reports: &[RouterReport]) -> String {
    let strongest = reports.first().map_or("strongest", |r| r.strongest_model.as_str());
    let name_w = reports.iter().map(|r| r.name.len()).max().unwrap_or(6).max(6);
    let calls_col = format!("Max Calls({strongest})");
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$}  {:<6}  {:>8}  {:>8}  {:>11}  {:>11}  {:>w$}",
        "Router",
        "Reward",
        "AIQ",
        "Max Perf",
        "λ-sens perf",
        "λ-sens cost",
        calls_col,
        w = calls_col.len()
    );
    for r in reports {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{:<name_w$}  {:<6}  {:>8}  {:>8.5}  {:>11.6}  {:>11.6}  {:>w$}",
            r.name,
            r.family.tag(),
            fmt_opt(m.aiq),
            m.perf_max,
            m.sens_perf,
            m.sens_cost,
            format!("{:.3}%", 100.0 * m.max_calls),
            w = calls_col.len()
        );
    }
    out
}
