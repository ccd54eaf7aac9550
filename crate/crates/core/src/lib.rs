//! Situational influence graphs: build them by querying a text generator
//! with (context, situation, relation, effect) questions, then evaluate,
//! analyze and export them.

pub mod adapters;
pub mod backends;
pub mod downstream;
pub mod error;
pub mod graph;
pub mod graphgen;
pub mod metrics;
pub mod query;
pub mod text;

pub use adapters::{Dataset, Split, StExample};
pub use backends::{GenerationConfig, GeneratorBackend, ScoredText};
pub use downstream::{AugmentedQaItem, QaItem, ZeroShotItem};
pub use error::{Error, Result};
pub use graph::{Edge, EffectType, Node, NodeId, Polarity, Relation, StGraph};
pub use graphgen::{iterative_graph_gen, recursive_expand, ExpansionPolicy, RelationSchedule};
pub use metrics::{ConsistencyReport, EvalReport};
pub use query::{build_query, QueryTemplate, StQuery};
