//! MovieLens-style ingestion, attribute encoding, and membership splits.

mod attributes;
mod interactions;
mod split;

pub use attributes::{
    encode_attributes, load_table, parse_table, AttributeEncoder, AttributeMatrix, AttributeSchema,
    ColumnKind, ColumnSpec, EncodedColumn, RawTable, TableLayout,
};
pub use interactions::{load_interactions, parse_interactions, Delimiter, InteractionLayout, Interactions};
pub use split::{split_membership, uncovered_items, MembershipSplit};
