//! Seeded synthetic routing benchmark.
//!
//! Queries come from `clusters` Gaussian blobs on the unit sphere. Every
//! model has a latent skill per blob and a base price; observed quality is
//! the skill plus clamped Gaussian noise and observed cost is the base price
//! with a small multiplicative jitter. When `models <= clusters` each model
//! is made the strongest model on at least one blob, so no single model
//! dominates the benchmark.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{unit_vector, QueryRecord, RoutingDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub models: usize,
    pub dim: usize,
    pub clusters: usize,
    /// Standard deviation of the additive quality noise.
    pub noise: f64,
    /// Within-blob spread of the embeddings before projection to the sphere.
    pub spread: f64,
    /// Cheapest and most expensive base price, USD per query. Base prices are
    /// log-spaced between the two, cheapest model first.
    pub min_cost: f64,
    pub max_cost: f64,
    /// Scale of the lognormal cost jitter: `cost = base * (1 + jitter * LogNormal(0, 1))`.
    pub cost_jitter: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            models: 5,
            dim: 32,
            clusters: 20,
            noise: 0.1,
            spread: 0.5,
            min_cost: 1e-4,
            max_cost: 3e-2,
            cost_jitter: 0.05,
        }
    }
}

/// Latent quantities behind a generated dataset.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    /// `skills[m][g]`: latent quality of model `m` on blob `g`.
    pub skills: Vec<Vec<f64>>,
    pub base_costs: Vec<f64>,
    /// Blob label of each record.
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(format!("synth: {m}")));
        if self.models == 0 || self.n < self.models {
            return err(format!("need n >= models >= 1 (n={}, models={})", self.n, self.models));
        }
        if self.clusters < 1 {
            return err("need at least one cluster".into());
        }
        if self.dim == 0 {
            return err("embedding dimension must be positive".into());
        }
        if !(self.noise >= 0.0 && self.spread >= 0.0 && self.cost_jitter >= 0.0) {
            return err("noise, spread and cost_jitter must be non-negative".into());
        }
        if !(self.min_cost > 0.0 && self.max_cost >= self.min_cost && self.max_cost.is_finite()) {
            return err("need 0 < min_cost <= max_cost".into());
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<RoutingDataset> {
    synth_generate_with_truth(spec, seed).map(|(ds, _)| ds)
}

pub fn synth_generate_with_truth(spec: &SynthSpec, seed: u64) -> Result<(RoutingDataset, SynthTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, g) = (spec.models, spec.clusters);

    let centers: Vec<Vec<f64>> = (0..g)
        .map(|_| loop {
            if let Some(u) = unit_vector(&gaussian_vec(&mut rng, spec.dim)) {
                break u;
            }
        })
        .collect();

    // Pricier models are stronger on average; per-blob specialization and
    // difficulty make the skill table non-separable.
    let difficulty: Vec<f64> = (0..g).map(|_| 0.7 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut skills: Vec<Vec<f64>> = (0..k)
        .map(|m| {
            let ability = if k == 1 { 0.5 } else { -0.5 + 2.0 * m as f64 / (k - 1) as f64 };
            (0..g)
                .map(|j| logistic(ability - difficulty[j] + rng.sample::<f64, _>(StandardNormal)))
                .collect()
        })
        .collect();
    if k <= g {
        for j in 0..g {
            let owner = j % k;
            let best = (0..k)
                .max_by(|&a, &b| skills[a][j].total_cmp(&skills[b][j]))
                .expect("k >= 1");
            let tmp = skills[owner][j];
            skills[owner][j] = skills[best][j];
            skills[best][j] = tmp;
        }
    }

    let base_costs: Vec<f64> = (0..k)
        .map(|m| {
            if k == 1 {
                spec.min_cost
            } else {
                spec.min_cost * (spec.max_cost / spec.min_cost).powf(m as f64 / (k - 1) as f64)
            }
        })
        .collect();

    let scale = spec.spread / (spec.dim as f64).sqrt();
    let mut labels = Vec::with_capacity(spec.n);
    let mut records = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let label = rng.random_range(0..g);
        let embedding = loop {
            let raw: Vec<f64> = centers[label]
                .iter()
                .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if let Some(u) = unit_vector(&raw) {
                break u;
            }
        };
        let quality = (0..k)
            .map(|m| {
                let eps = if spec.noise > 0.0 {
                    spec.noise * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                (skills[m][label] + eps).clamp(0.0, 1.0)
            })
            .collect();
        let cost = base_costs
            .iter()
            .map(|&base| {
                let z: f64 = rng.sample(StandardNormal);
                base * (1.0 + spec.cost_jitter * z.exp())
            })
            .collect();
        labels.push(label);
        records.push(QueryRecord {
            id: format!("q{i:05}"),
            group: format!("cluster-{label}"),
            embedding,
            quality,
            cost,
        });
    }
    let pool = (0..k).map(|m| format!("model-{m}")).collect();
    let ds = RoutingDataset::new(pool, spec.dim, records)?;
    Ok((
        ds,
        SynthTruth {
            skills,
            base_costs,
            labels,
            centers,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_reproduces_skills() {
        let spec = SynthSpec {
            n: 200,
            noise: 0.0,
            ..SynthSpec::default()
        };
        let (ds, truth) = synth_generate_with_truth(&spec, 3).unwrap();
        for (r, &label) in ds.records().iter().zip(&truth.labels) {
            for m in 0..spec.models {
                assert_eq!(r.quality[m], truth.skills[m][label]);
            }
        }
    }

    #[test]
    fn each_model_owns_a_cluster() {
        let spec = SynthSpec {
            models: 4,
            clusters: 9,
            ..SynthSpec::default()
        };
        let (_, truth) = synth_generate_with_truth(&spec, 5).unwrap();
        for m in 0..4 {
            let owns = (0..9).any(|j| (0..4).all(|o| truth.skills[m][j] >= truth.skills[o][j]));
            assert!(owns, "model {m} is never the best");
        }
    }

    #[test]
    fn pure_function_of_spec_and_seed() {
        let spec = SynthSpec {
            n: 50,
            ..SynthSpec::default()
        };
        assert_eq!(synth_generate(&spec, 9).unwrap(), synth_generate(&spec, 9).unwrap());
        assert_ne!(synth_generate(&spec, 9).unwrap(), synth_generate(&spec, 10).unwrap());
    }

    #[test]
    fn embeddings_are_unit_and_costs_heterogeneous() {
        let ds = synth_generate(&SynthSpec::default(), 1).unwrap();
        for r in ds.records() {
            let norm: f64 = r.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        let mean_cost = ds.cost_matrix().mean_axis(ndarray::Axis(0)).unwrap();
        assert!(mean_cost.windows(2).into_iter().all(|w| w[0] * 3.0 < w[1]));
    }

    #[test]
    fn rejects_invalid_specs() {
        let bad = [
            SynthSpec { n: 3, models: 5, ..SynthSpec::default() },
            SynthSpec { clusters: 0, ..SynthSpec::default() },
            SynthSpec { min_cost: 0.0, ..SynthSpec::default() },
        ];
        for spec in bad {
            assert!(synth_generate(&spec, 0).is_err());
        }
    }
}
