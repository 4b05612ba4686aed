//! Desk-scale hybrid target recommenders.
//!
//! A preference factorization supplies `P` (training users) and `Q` (items);
//! two one-hidden-layer towers map `(preference, attributes)` for users and
//! items into a shared scoring space scored by inner product. Queries fold a
//! raw history into preference space, or leave it empty for cold-start.

mod hybrid;
mod preference;
mod tower;

pub use hybrid::{
    recommend, train_hybrid, GateBlock, HybridConfig, HybridModel, HybridVariant, TrainingMetadata,
};
pub use preference::{train_preference, PreferenceConfig, PreferenceModel, FOLD_IN_RIDGE};
pub use tower::Tower;
