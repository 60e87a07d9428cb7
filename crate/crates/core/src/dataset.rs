//! Routing datasets: per-query embeddings with ground-truth quality and cost
//! for every model in the pool.
//!
//! On disk a dataset is a JSON-lines file with one record per line and a
//! sidecar manifest (`<stem>.manifest.json`) that fixes the canonical model
//! order and the embedding dimension.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One query with its embedding and per-model ground truth.
///
/// `quality[m]` and `cost[m]` are aligned with the owning dataset's pool.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: String,
    pub group: String,
    pub embedding: Vec<f64>,
    pub quality: Vec<f64>,
    pub cost: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDataset {
    pool: Vec<String>,
    dim: usize,
    records: Vec<QueryRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub models: Vec<String>,
    pub dim: usize,
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    id: String,
    group: String,
    embedding: Vec<f64>,
    quality: BTreeMap<String, f64>,
    cost: BTreeMap<String, f64>,
}

fn check_record(record: &QueryRecord, k: usize, dim: usize) -> std::result::Result<(), String> {
    if record.embedding.len() != dim {
        return Err(format!(
            "embedding dimension {} does not match manifest dimension {dim}",
            record.embedding.len()
        ));
    }
    if record.embedding.iter().any(|x| !x.is_finite()) {
        return Err("embedding has non-finite entries".into());
    }
    if record.embedding.iter().all(|&x| x == 0.0) {
        return Err("embedding is the zero vector".into());
    }
    if record.quality.len() != k || record.cost.len() != k {
        return Err("quality/cost do not cover the model pool".into());
    }
    for (m, &q) in record.quality.iter().enumerate() {
        if !(0.0..=1.0).contains(&q) {
            return Err(format!("quality out of range [0,1] for model #{m}: {q}"));
        }
    }
    for (m, &c) in record.cost.iter().enumerate() {
        if !c.is_finite() || c < 0.0 {
            return Err(format!("cost must be finite and non-negative for model #{m}: {c}"));
        }
    }
    Ok(())
}

impl RoutingDataset {
    pub fn new(pool: Vec<String>, dim: usize, records: Vec<QueryRecord>) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Dataset("model pool is empty".into()));
        }
        let mut seen = HashSet::new();
        for name in &pool {
            if !seen.insert(name.as_str()) {
                return Err(Error::Dataset(format!("duplicate model name `{name}`")));
            }
        }
        if dim == 0 {
            return Err(Error::Dataset("embedding dimension must be positive".into()));
        }
        for r in &records {
            check_record(r, pool.len(), dim)
                .map_err(|msg| Error::Dataset(format!("record `{}`: {msg}", r.id)))?;
        }
        Ok(Self { pool, dim, records })
    }

    pub fn pool(&self) -> &[String] {
        &self.pool
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[QueryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_models(&self) -> usize {
        self.pool.len()
    }

    pub fn model_index(&self, name: &str) -> Option<usize> {
        self.pool.iter().position(|m| m == name)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            models: self.pool.clone(),
            dim: self.dim,
        }
    }

    /// Records at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            pool: self.pool.clone(),
            dim: self.dim,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Restrict the pool to `models` (in the given order), dropping every
    /// other model's quality and cost entries.
    pub fn with_pool(&self, models: &[String]) -> Result<Self> {
        let idx = models
            .iter()
            .map(|name| {
                self.model_index(name)
                    .ok_or_else(|| Error::Dataset(format!("model `{name}` is not in the pool")))
            })
            .collect::<Result<Vec<_>>>()?;
        let records = self
            .records
            .iter()
            .map(|r| QueryRecord {
                id: r.id.clone(),
                group: r.group.clone(),
                embedding: r.embedding.clone(),
                quality: idx.iter().map(|&m| r.quality[m]).collect(),
                cost: idx.iter().map(|&m| r.cost[m]).collect(),
            })
            .collect();
        Self::new(models.to_vec(), self.dim, records)
    }

    pub fn embedding_matrix(&self) -> Array2<f64> {
        matrix(self.len(), self.dim, self.records.iter().map(|r| &r.embedding))
    }

    pub fn quality_matrix(&self) -> Array2<f64> {
        matrix(self.len(), self.num_models(), self.records.iter().map(|r| &r.quality))
    }

    pub fn cost_matrix(&self) -> Array2<f64> {
        matrix(self.len(), self.num_models(), self.records.iter().map(|r| &r.cost))
    }
}

fn matrix<'a>(rows: usize, cols: usize, it: impl Iterator<Item = &'a Vec<f64>>) -> Array2<f64> {
    let mut flat = Vec::with_capacity(rows * cols);
    for row in it {
        flat.extend_from_slice(row);
    }
    Array2::from_shape_vec((rows, cols), flat).expect("rows validated on construction")
}

/// `data.jsonl` -> `data.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Dataset(format!("{}: bad manifest: {e}", path.display())))
}

/// Load a dataset file and its sidecar manifest. Record order follows the file.
pub fn load_dataset(path: &Path) -> Result<RoutingDataset> {
    let manifest = load_manifest(&manifest_path(path))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(BufReader::new(file), manifest)
}

/// Parse JSON-lines records against `manifest`. Blank lines are skipped.
pub fn read_records(reader: impl BufRead, manifest: Manifest) -> Result<RoutingDataset> {
    let Manifest { models, dim } = manifest;
    let k = models.len();
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let wire: WireRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(format!("malformed record: {e}")))?;
        if wire.quality.len() != k
            || wire.cost.len() != k
            || models
                .iter()
                .any(|m| !wire.quality.contains_key(m) || !wire.cost.contains_key(m))
        {
            return Err(parse_err(
                "model set does not match the manifest pool".to_string(),
            ));
        }
        let record = QueryRecord {
            quality: models.iter().map(|m| wire.quality[m]).collect(),
            cost: models.iter().map(|m| wire.cost[m]).collect(),
            id: wire.id,
            group: wire.group,
            embedding: wire.embedding,
        };
        check_record(&record, k, dim).map_err(parse_err)?;
        records.push(record);
    }
    RoutingDataset::new(models, dim, records)
}

pub fn write_records(ds: &RoutingDataset, mut out: impl Write) -> std::io::Result<()> {
    for r in ds.records() {
        let wire = WireRecord {
            id: r.id.clone(),
            group: r.group.clone(),
            embedding: r.embedding.clone(),
            quality: ds.pool.iter().cloned().zip(r.quality.iter().copied()).collect(),
            cost: ds.pool.iter().cloned().zip(r.cost.iter().copied()).collect(),
        };
        serde_json::to_writer(&mut out, &wire)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Write `ds` to `path` plus its manifest sidecar.
pub fn save_dataset(ds: &RoutingDataset, path: &Path) -> Result<()> {
    let mpath = manifest_path(path);
    let manifest = serde_json::to_string_pretty(&ds.manifest()).expect("manifest serializes");
    std::fs::write(&mpath, manifest + "\n").map_err(|e| Error::io(&mpath, e))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_records(ds, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.75,
            val: 0.05,
            test: 0.20,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train, self.val, self.test];
        if fracs.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(Error::Config(format!(
                "split fractions must be positive, got {fracs:?}"
            )));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// (train, val, test) sizes for `n` records: floor allocation with the
    /// remainder going to train.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        // The small slack keeps products like 0.05 * 20 from flooring to 0.
        let floor = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
        let val = floor(self.val);
        let test = floor(self.test);
        let train = n - val - test;
        if train == 0 || val == 0 || test == 0 {
            return Err(Error::Dataset(format!(
                "{n} records are too few for a {}/{}/{} split",
                self.train, self.val, self.test
            )));
        }
        Ok((train, val, test))
    }
}

/// Seeded shuffle, then contiguous train/val/test slices.
pub fn split(
    ds: &RoutingDataset,
    spec: &SplitSpec,
) -> Result<(RoutingDataset, RoutingDataset, RoutingDataset)> {
    let n = ds.len();
    if n < 3 {
        return Err(Error::Dataset(format!("cannot split {n} records three ways")));
    }
    let (n_train, n_val, _) = spec.sizes(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    Ok((ds.select(train), ds.select(val), ds.select(test)))
}

/// Scale every embedding to unit Euclidean norm.
pub fn normalize_embeddings(ds: &RoutingDataset) -> Result<RoutingDataset> {
    let mut out = ds.clone();
    for r in &mut out.records {
        r.embedding = unit_vector(&r.embedding)
            .ok_or_else(|| Error::Dataset(format!("record `{}` has a zero or non-finite embedding", r.id)))?;
    }
    Ok(out)
}

pub fn unit_vector(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    Some(v.iter().map(|x| x / norm).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, emb: Vec<f64>, q: Vec<f64>, c: Vec<f64>) -> QueryRecord {
        QueryRecord {
            id: id.into(),
            group: "g".into(),
            embedding: emb,
            quality: q,
            cost: c,
        }
    }

    fn manifest_ab(dim: usize) -> Manifest {
        Manifest {
            models: vec!["A".into(), "B".into()],
            dim,
        }
    }

    #[test]
    fn reads_hand_written_file() {
        let text = r#"{"id":"q1","group":"mmlu","embedding":[1,0,0,0],"quality":{"A":1,"B":0},"cost":{"A":0.01,"B":0.001}}
{"id":"q2","group":"gsm8k","embedding":[0,1,0,0.5],"quality":{"B":0.5,"A":0.25},"cost":{"A":0.02,"B":0.0}}
"#;
        let ds = read_records(text.as_bytes(), manifest_ab(4)).unwrap();
        assert_eq!(ds.num_models(), 2);
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.records()[1].quality, vec![0.25, 0.5]);
        assert_eq!(ds.records()[1].group, "gsm8k");
    }

    #[test]
    fn quality_out_of_range_reports_line() {
        let text = r#"{"id":"q1","group":"g","embedding":[1,0],"quality":{"A":1,"B":0},"cost":{"A":0,"B":0}}

{"id":"q2","group":"g","embedding":[1,0],"quality":{"A":1.2,"B":0},"cost":{"A":0,"B":0}}"#;
        let err = read_records(text.as_bytes(), manifest_ab(2)).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("quality out of range"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn ingestion_errors() {
        let cases = [
            (r#"{"id":"q","group":"g","embedding":[1,0],"quality":{"A":1,"B":0},"cost":{"A":-1,"B":0}}"#, "non-negative"),
            (r#"{"id":"q","group":"g","embedding":[1,0],"quality":{"A":1},"cost":{"A":0}}"#, "model set"),
            (r#"{"id":"q","group":"g","embedding":[1,0],"quality":{"A":1,"C":0},"cost":{"A":0,"C":0}}"#, "model set"),
            (r#"{"id":"q","group":"g","embedding":[1,0,3],"quality":{"A":1,"B":0},"cost":{"A":0,"B":0}}"#, "dimension"),
            (r#"{"id":"q","group":"g","embedding":[0,0],"quality":{"A":1,"B":0},"cost":{"A":0,"B":0}}"#, "zero vector"),
            (r#"{"id":"q","group":"g","embedding":[1,0],"quality":{"A":1,"B":0}"#, "malformed"),
        ];
        for (line, needle) in cases {
            let err = read_records(line.as_bytes(), manifest_ab(2)).unwrap_err();
            let msg = err.to_string();
            assert!(msg.starts_with("line 1:"), "{msg}");
            assert!(msg.contains(needle), "{msg} should mention {needle}");
        }
    }

    #[test]
    fn pool_must_be_unique_and_nonempty() {
        assert!(RoutingDataset::new(vec![], 2, vec![]).is_err());
        assert!(RoutingDataset::new(vec!["A".into(), "A".into()], 2, vec![]).is_err());
    }

    fn numbered(n: usize) -> RoutingDataset {
        let records = (0..n)
            .map(|i| rec(&format!("q{i}"), vec![1.0, i as f64], vec![0.5, 0.5], vec![0.1, 0.2]))
            .collect();
        RoutingDataset::new(vec!["A".into(), "B".into()], 2, records).unwrap()
    }

    #[test]
    fn split_sizes() {
        let spec = SplitSpec::default();
        assert_eq!(spec.sizes(100).unwrap(), (75, 5, 20));
        assert_eq!(spec.sizes(20).unwrap(), (15, 1, 4));
        assert!(spec.sizes(10).is_err());
        let (tr, va, te) = split(&numbered(100), &spec).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (75, 5, 20));
    }

    #[test]
    fn split_is_a_seeded_disjoint_cover() {
        let ds = numbered(57);
        let spec = SplitSpec {
            seed: 11,
            ..SplitSpec::default()
        };
        let a = split(&ds, &spec).unwrap();
        let b = split(&ds, &spec).unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<String> = [&a.0, &a.1, &a.2]
            .iter()
            .flat_map(|d| d.records().iter().map(|r| r.id.clone()))
            .collect();
        ids.sort();
        let mut expected: Vec<String> = ds.records().iter().map(|r| r.id.clone()).collect();
        expected.sort();
        assert_eq!(ids, expected);

        let c = split(&ds, &SplitSpec { seed: 12, ..spec }).unwrap();
        assert_eq!(c.0.len(), a.0.len());
        assert_ne!(c.0, a.0);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let bad = SplitSpec {
            train: 0.7,
            val: 0.1,
            test: 0.1,
            seed: 0,
        };
        assert!(split(&numbered(50), &bad).is_err());
        assert!(split(&numbered(2), &SplitSpec::default()).is_err());
    }

    #[test]
    fn normalize_known_and_idempotent() {
        let ds = RoutingDataset::new(
            vec!["A".into()],
            2,
            vec![rec("q", vec![3.0, 4.0], vec![1.0], vec![0.0])],
        )
        .unwrap();
        let n = normalize_embeddings(&ds).unwrap();
        assert_eq!(n.records()[0].embedding, vec![0.6, 0.8]);
        let nn = normalize_embeddings(&n).unwrap();
        for (a, b) in nn.records()[0].embedding.iter().zip(&n.records()[0].embedding) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(unit_vector(&[0.0, 0.0]).is_none());
        assert!(unit_vector(&[f64::NAN, 1.0]).is_none());
    }

    #[test]
    fn with_pool_drops_models() {
        let ds = numbered(4);
        let sub = ds.with_pool(&["B".into()]).unwrap();
        assert_eq!(sub.pool(), ["B".to_string()]);
        assert_eq!(sub.records()[0].cost, vec![0.2]);
        assert!(ds.with_pool(&["Z".into()]).is_err());
    }
}
