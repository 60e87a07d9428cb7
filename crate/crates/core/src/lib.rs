//! Cost-aware routing across a pool of language models.
//!
//! A router sees a query embedding, asks a quality predictor and a cost
//! predictor for per-model estimates, and picks the model that maximizes a
//! reward trading quality against dollar cost under the user's willingness
//! to pay `λ`. Routers are compared by sweeping `λ` and summarizing the
//! resulting cost/performance curve.
//!
//! Module map:
//!
//! - [`dataset`]: records, file format, splits, embedding normalization.
//! - [`synth`]: seeded synthetic benchmark generator.
//! - [`representations`]: k-means and per-cluster model skill vectors.
//! - [`predictors`]: attention, regression, FCN and KNN predictors plus the
//!   training engine.
//! - [`routing`]: reward families and the argmax routing policy.
//! - [`evaluation`]: λ sweeps, Pareto hull, AIQ, λ-sensitivity.
//! - [`experiment`]: config-driven end-to-end runs and ablation grids.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod predictors;
pub mod representations;
pub mod routing;
pub mod synth;

pub use dataset::{QueryRecord, RoutingDataset, SplitSpec};
pub use error::{Error, Result};
pub use evaluation::{MetricsReport, ParetoCurve, SweepPoint};
pub use predictors::{Architecture, PredictionMatrix, Predictor, PredictorConfig, Target};
pub use representations::{ClusterModel, ModelRepresentation, RepresentationSet};
pub use routing::{RewardFamily, RewardSpec, RoutingDecision};
pub use synth::SynthSpec;
