//! Binary predictor artifacts.
//!
//! Layout: 8-byte magic `CRPRED\0\0`, little-endian `u32` format version,
//! little-endian `u32` header length, a JSON header (config echo, dimensions
//! and array shapes), then every array as row-major little-endian `f64`.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    AttentionNet, AttentionShape, KnnIndex, LinearFit, MlpNet, Model, Predictor, PredictorConfig,
};
use super::{Architecture, Target};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CRPRED\0\0";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: PredictorConfig,
    query_dim: usize,
    rep_dim: usize,
    num_models: usize,
    arrays: Vec<ArrayHeader>,
}

#[derive(Serialize, Deserialize)]
struct ArrayHeader {
    name: String,
    shape: [usize; 2],
}

fn arrays_of(p: &Predictor) -> Vec<(&'static str, [usize; 2], Vec<f64>)> {
    match &p.model {
        Model::Attention(net) => vec![("params", [1, net.params.len()], net.params.clone())],
        Model::Mlp(net) => vec![("params", [1, net.params.len()], net.params.clone())],
        Model::Linear(fit) => {
            let (r, c) = fit.weights.dim();
            vec![("weights", [r, c], fit.weights.iter().copied().collect())]
        }
        Model::Knn(idx) => {
            let (n, d) = idx.embeddings.dim();
            let k = idx.targets.ncols();
            vec![
                ("embeddings", [n, d], idx.embeddings.iter().copied().collect()),
                ("targets", [n, k], idx.targets.iter().copied().collect()),
            ]
        }
    }
}

pub fn predictor_to_bytes(p: &Predictor) -> Vec<u8> {
    let arrays = arrays_of(p);
    let header = Header {
        config: p.config.clone(),
        query_dim: p.query_dim,
        rep_dim: p.rep_dim,
        num_models: p.num_models,
        arrays: arrays
            .iter()
            .map(|(name, shape, _)| ArrayHeader { name: (*name).into(), shape: *shape })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, values) in arrays {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Artifact(msg.into())
}

pub fn predictor_from_bytes(bytes: &[u8]) -> Result<Predictor> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a predictor artifact"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != ARTIFACT_VERSION {
        return Err(bad(format!("unsupported artifact version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("bad header: {e}")))?;
    header.config.validate()?;

    let mut cursor = 16 + hlen;
    let mut arrays = Vec::new();
    for a in &header.arrays {
        let n = a.shape[0] * a.shape[1];
        let raw = bytes.get(cursor..cursor + 8 * n).ok_or_else(|| bad(format!("truncated array `{}`", a.name)))?;
        cursor += 8 * n;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.push((a.name.as_str(), a.shape, values));
    }
    if cursor != bytes.len() {
        return Err(bad("trailing bytes after the last array"));
    }

    let cfg = &header.config;
    let (dq, rep_dim, k) = (header.query_dim, header.rep_dim, header.num_models);
    let expect = |names: &[&str]| -> Result<()> {
        let found: Vec<&str> = arrays.iter().map(|a| a.0).collect();
        if found != names {
            return Err(bad(format!("{} artifact must contain arrays {names:?}, found {found:?}", cfg.architecture)));
        }
        Ok(())
    };
    if cfg.architecture.uses_representations() != (rep_dim > 0) {
        return Err(bad("representation dimension inconsistent with the architecture"));
    }
    let model = match cfg.architecture {
        Architecture::Attention => {
            expect(&["params"])?;
            let shape = AttentionShape { query_dim: dq, rep_dim, internal_dim: cfg.internal_dim };
            Model::Attention(AttentionNet::from_params(shape, cfg.target.head(), arrays.remove(0).2)?)
        }
        Architecture::Regression => {
            expect(&["weights"])?;
            let (_, shape, values) = arrays.remove(0);
            if shape != [dq + 1, k] {
                return Err(bad(format!("regression weights are {shape:?}, expected [{}, {k}]", dq + 1)));
            }
            let weights = Array2::from_shape_vec((shape[0], shape[1]), values).expect("sized");
            Model::Linear(LinearFit { weights, intercept: true })
        }
        Architecture::Knn => {
            expect(&["embeddings", "targets"])?;
            let (_, ts, tv) = arrays.remove(1);
            let (_, es, ev) = arrays.remove(0);
            if es[1] != dq || ts[1] != k || es[0] != ts[0] {
                return Err(bad("KNN arrays do not match the recorded dimensions"));
            }
            Model::Knn(KnnIndex::new(
                Array2::from_shape_vec((es[0], es[1]), ev).expect("sized"),
                Array2::from_shape_vec((ts[0], ts[1]), tv).expect("sized"),
                cfg.k,
            )?)
        }
        arch => {
            expect(&["params"])?;
            let pairwise = arch.uses_representations();
            let mut dims = vec![if pairwise { dq + rep_dim } else { dq }];
            dims.extend(cfg.hidden_dims.iter().copied());
            dims.push(if pairwise { 1 } else { k });
            Model::Mlp(MlpNet::from_params(dims, cfg.target.head(), pairwise, arrays.remove(0).2)?)
        }
    };
    Ok(Predictor { config: header.config, query_dim: dq, rep_dim, num_models: k, model })
}

pub fn save_predictor(p: &Predictor, path: &Path) -> Result<()> {
    std::fs::write(path, predictor_to_bytes(p)).map_err(|e| Error::io(path, e))
}

/// Load an artifact, optionally insisting on an architecture and target.
pub fn load_predictor(path: &Path, expected: Option<(Architecture, Target)>) -> Result<Predictor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let p = predictor_from_bytes(&bytes)?;
    if let Some((arch, target)) = expected {
        if p.architecture() != arch || p.target() != target {
            return Err(bad(format!(
                "{}: expected a {arch} {target} predictor, found {} {}",
                path.display(),
                p.architecture(),
                p.target()
            )));
        }
    }
    Ok(p)
}
