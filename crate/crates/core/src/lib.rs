//! Membership inference auditing for hybrid recommender systems.
//!
//! The crate builds desk-scale hybrid target recommenders, the attacker's
//! item embeddings, the reference-recommendation attack with its metric
//! baselines, a Gaussian input-perturbation defense, and the evaluation
//! harness that ties them together.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the experiment pipeline
//! uses.

pub mod analysis;
pub mod attack;
pub mod dataset;
pub mod defense;
pub mod dense;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod query;
pub mod recsys;
pub mod scalar;
pub mod sparse;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Real = f64;

pub type InteractionMatrix = dataset::Interactions<Real>;
pub type AttributeMatrix = dataset::AttributeMatrix<Real>;
pub type SparseMatrix = sparse::SparseMatrix<Real>;
pub type Matrix = dense::Matrix<Real>;
pub type FactorizationResult = embedding::FactorizationResult<Real>;
pub type ItemEmbeddings = embedding::ItemEmbeddings<Real>;
pub type FeatureVector = embedding::FeatureVector<Real>;
pub type PreferenceModel = recsys::PreferenceModel<Real>;
pub type HybridModel = recsys::HybridModel<Real>;
pub type RecommendationList = query::RecommendationList<Real>;
pub type AttackRecord = attack::AttackRecord<Real>;
