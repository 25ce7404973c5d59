//! Searches tabular knot-invariant datasets for predictive relationships.
//!
//! The pipeline: ingest a CSV export of knot invariants, derive numeric
//! features from polynomial columns, train small dense networks to predict
//! one invariant from others, and collect the resulting accuracies into
//! results tables. A relevance-propagation pass attributes predictions back
//! to input features.

pub mod experiments;
pub mod features;
pub mod ingest;
pub mod lrp;
pub mod nn;
pub mod polynomial;
pub mod report;
pub mod seed;
