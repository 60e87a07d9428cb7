//! Per-model expertise vectors.
//!
//! Training queries are clustered with k-means; a model's representation is
//! its mean quality on a seeded sample of each cluster's prompts. The vectors
//! are built from training data only and then frozen, so a model can join the
//! pool at inference time by supplying just its representation.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::RoutingDataset;
use crate::error::{Error, Result};

pub const DEFAULT_CLUSTERS: usize = 20;
pub const DEFAULT_SAMPLE_FRAC: f64 = 0.2;
pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
    /// Sum of squared distances from each point to its centroid.
    pub inertia: f64,
    /// Inertia after every assignment step, first entry from the seeding.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl ClusterModel {
    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    /// Nearest centroid; ties go to the lowest index.
    pub fn assign(&self, x: &[f64]) -> usize {
        nearest(&self.centroids, x).0
    }
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign_all(centroids: &[Vec<f64>], points: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, f64) {
    let mut labels = Vec::with_capacity(points.len());
    let mut dists = Vec::with_capacity(points.len());
    for p in points {
        let (j, d) = nearest(centroids, p);
        labels.push(j);
        dists.push(d);
    }
    let inertia = dists.iter().sum();
    (labels, dists, inertia)
}

fn kmeans_plus_plus(points: &[Vec<f64>], c: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < c {
        let total: f64 = d2.iter().sum();
        let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("enough distinct points");
        let mut u = rng.random::<f64>() * total;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && u < d {
                pick = i;
                break;
            }
            u -= d;
        }
        let next = points[pick].clone();
        for (di, p) in d2.iter_mut().zip(points) {
            *di = di.min(sq_dist(p, &next));
        }
        centroids.push(next);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops after `max_iters` updates or once assignments stop changing. A
/// cluster that empties out is re-seeded with the point farthest from its
/// current centroid.
pub fn kmeans(points: &[Vec<f64>], c: usize, seed: u64, max_iters: usize) -> Result<ClusterModel> {
    if c == 0 {
        return Err(Error::Invalid("k-means needs at least one cluster".into()));
    }
    let dim = points.first().map(Vec::len).unwrap_or(0);
    if points.iter().any(|p| p.len() != dim || p.iter().any(|x| !x.is_finite())) {
        return Err(Error::Shape("k-means points must be finite and share one dimension".into()));
    }
    let distinct: HashSet<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|x| (x + 0.0).to_bits()).collect())
        .collect();
    if distinct.len() < c {
        return Err(Error::Invalid(format!(
            "k-means with {c} clusters needs at least {c} distinct points, got {}",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, c, &mut rng);
    let (mut labels, mut dists, inertia) = assign_all(&centroids, points);
    let mut history = vec![inertia];

    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; dim]; c];
        let mut counts = vec![0usize; c];
        for (p, &j) in points.iter().zip(&labels) {
            counts[j] += 1;
            for (s, x) in sums[j].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut taken = HashSet::new();
        for j in 0..c {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..c {
            if counts[j] == 0 {
                let far = (0..points.len())
                    .filter(|i| !taken.contains(i))
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("more points than clusters");
                taken.insert(far);
                centroids[j] = points[far].clone();
            }
        }
        let (new_labels, new_dists, inertia) = assign_all(&centroids, points);
        history.push(inertia);
        let converged = new_labels == labels;
        labels = new_labels;
        dists = new_dists;
        if converged {
            break;
        }
    }

    Ok(ClusterModel {
        inertia: *history.last().expect("seeded"),
        centroids,
        seed,
        inertia_history: history,
    })
}

/// Index of the discrete elbow: the interior point with the largest second
/// difference `I[i-1] - 2 I[i] + I[i+1]`. Ties go to the smaller index.
pub fn elbow_index(inertias: &[f64]) -> Result<usize> {
    if inertias.len() < 3 {
        return Err(Error::Invalid("the elbow test needs at least 3 candidates".into()));
    }
    let mut best = (1, f64::NEG_INFINITY);
    for i in 1..inertias.len() - 1 {
        let second = inertias[i - 1] - 2.0 * inertias[i] + inertias[i + 1];
        if second > best.1 {
            best = (i, second);
        }
    }
    Ok(best.0)
}

/// Pick a cluster count from ascending `candidates` with the elbow test.
/// Returns the chosen count and the inertia of every candidate.
pub fn select_cluster_count(
    points: &[Vec<f64>],
    candidates: &[usize],
    seed: u64,
    max_iters: usize,
) -> Result<(usize, Vec<f64>)> {
    if candidates.len() < 3 {
        return Err(Error::Invalid("the elbow test needs at least 3 candidates".into()));
    }
    if candidates[0] == 0 || candidates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid("candidates must be positive and strictly ascending".into()));
    }
    let inertias = candidates
        .iter()
        .map(|&c| kmeans(points, c, seed, max_iters).map(|m| m.inertia))
        .collect::<Result<Vec<_>>>()?;
    Ok((candidates[elbow_index(&inertias)?], inertias))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRepresentation {
    pub model: String,
    /// Mean quality on the sampled prompts of each cluster, in [0, 1].
    pub values: Vec<f64>,
    /// Number of sampled prompts behind each value; 0 marks an imputed entry.
    pub support: Vec<usize>,
}

/// Representations for a pool, all with the same cluster count.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSet {
    clusters: usize,
    models: Vec<ModelRepresentation>,
}

impl RepresentationSet {
    pub fn new(models: Vec<ModelRepresentation>) -> Result<Self> {
        let clusters = models
            .first()
            .map(|m| m.values.len())
            .ok_or_else(|| Error::Invalid("empty representation set".into()))?;
        let mut names = HashSet::new();
        for m in &models {
            if m.values.len() != clusters || m.support.len() != clusters || clusters == 0 {
                return Err(Error::Shape(format!(
                    "representation of `{}` has {} values / {} supports, expected {clusters}",
                    m.model,
                    m.values.len(),
                    m.support.len()
                )));
            }
            if m.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Invalid(format!(
                    "representation of `{}` has values outside [0, 1]",
                    m.model
                )));
            }
            if !names.insert(m.model.clone()) {
                return Err(Error::Invalid(format!("duplicate representation for `{}`", m.model)));
            }
        }
        Ok(Self { clusters, models })
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn models(&self) -> &[ModelRepresentation] {
        &self.models
    }

    pub fn get(&self, model: &str) -> Option<&ModelRepresentation> {
        self.models.iter().find(|m| m.model == model)
    }

    /// Insert or replace one model's representation.
    pub fn upsert(&mut self, rep: ModelRepresentation) -> Result<()> {
        let mut all: Vec<ModelRepresentation> =
            self.models.iter().filter(|m| m.model != rep.model).cloned().collect();
        all.push(rep);
        *self = Self::new(all)?;
        Ok(())
    }

    /// `K x C` matrix with rows in `pool` order.
    pub fn matrix_for(&self, pool: &[String]) -> Result<Array2<f64>> {
        let mut flat = Vec::with_capacity(pool.len() * self.clusters);
        for name in pool {
            let rep = self
                .get(name)
                .ok_or_else(|| Error::Invalid(format!("no representation for model `{name}`")))?;
            flat.extend_from_slice(&rep.values);
        }
        Ok(Array2::from_shape_vec((pool.len(), self.clusters), flat).expect("sized"))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("model");
        for j in 0..self.clusters {
            let _ = write!(out, "\tvalue_{j}");
        }
        for j in 0..self.clusters {
            let _ = write!(out, "\tsupport_{j}");
        }
        out.push('\n');
        for m in &self.models {
            out.push_str(&m.model);
            for v in &m.values {
                let _ = write!(out, "\t{v:?}");
            }
            for s in &m.support {
                let _ = write!(out, "\t{s}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, message: "missing header".into() })?;
        let cols = header.split('\t').count();
        if cols < 3 || (cols - 1) % 2 != 0 || !header.starts_with("model\t") {
            return Err(Error::Parse { line: 1, message: "bad representation header".into() });
        }
        let c = (cols - 1) / 2;
        let mut models = Vec::new();
        for (i, line) in lines {
            let err = |message: String| Error::Parse { line: i + 1, message };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != cols {
                return Err(err(format!("expected {cols} columns, found {}", fields.len())));
            }
            let values = fields[1..=c]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| err(format!("bad value `{f}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let support = fields[c + 1..]
                .iter()
                .map(|f| f.parse::<usize>().map_err(|e| err(format!("bad support `{f}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            models.push(ModelRepresentation { model: fields[0].to_string(), values, support });
        }
        Self::new(models)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }
}

/// Per-cluster mean quality of every pool model over a seeded sample of
/// `ceil(sample_frac * cluster_size)` prompts per cluster. Clusters with no
/// sampled prompt fall back to the model's mean over the whole training set.
pub fn build_representations(
    train: &RoutingDataset,
    clusters: &ClusterModel,
    sample_frac: f64,
    seed: u64,
) -> Result<RepresentationSet> {
    if train.is_empty() {
        return Err(Error::Dataset("cannot build representations from an empty set".into()));
    }
    if !(sample_frac > 0.0 && sample_frac <= 1.0) {
        return Err(Error::Config(format!("sample_frac must be in (0, 1], got {sample_frac}")));
    }
    if clusters.dim() != train.dim() {
        return Err(Error::Shape(format!(
            "cluster model has dimension {}, dataset has {}",
            clusters.dim(),
            train.dim()
        )));
    }
    let c = clusters.num_clusters();
    let k = train.num_models();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, r) in train.records().iter().enumerate() {
        members[clusters.assign(&r.embedding)].push(i);
    }

    let n = train.len() as f64;
    let global: Vec<f64> = (0..k)
        .map(|m| train.records().iter().map(|r| r.quality[m]).sum::<f64>() / n)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![vec![0.0; c]; k];
    let mut support = vec![vec![0usize; c]; k];
    for (j, idx) in members.iter().enumerate() {
        let take = ((sample_frac * idx.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        let take = take.min(idx.len());
        let picked: Vec<usize> = index::sample(&mut rng, idx.len(), take)
            .into_iter()
            .map(|p| idx[p])
            .collect();
        for m in 0..k {
            if picked.is_empty() {
                values[m][j] = global[m];
            } else {
                let sum: f64 = picked.iter().map(|&i| train.records()[i].quality[m]).sum();
                values[m][j] = (sum / picked.len() as f64).clamp(0.0, 1.0);
            }
            support[m][j] = picked.len();
        }
    }
    RepresentationSet::new(
        train
            .pool()
            .iter()
            .zip(values.into_iter().zip(support))
            .map(|(name, (values, support))| ModelRepresentation {
                model: name.clone(),
                values,
                support,
            })
            .collect(),
    )
}
