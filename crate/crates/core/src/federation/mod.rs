//! Parameter exchange, aggregation strategies, head merging and the round
//! orchestrator.

mod aggregate;
mod bundle;
mod evaluate;
mod global;
mod node;
mod orchestrator;

pub use aggregate::{
    aggregate_representation, merge_heads, AggregatedRepresentation, MergedHeads, StrategyKind,
    Weighting,
};
pub use bundle::{extract_bundle, ParameterBundle};
pub use evaluate::{evaluate_global, evaluate_model, CHANCE_SCORE};
pub use global::GlobalModel;
pub use node::{local_train, NodeState};
pub use orchestrator::{
    round_log_csv, run_federation, run_federation_with, FederationConfig, FederationOutcome,
    RoundReport,
};
