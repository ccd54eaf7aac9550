//! Iterative graph generation and breadth-first recursive expansion.
//!
//! A schedule of (relation, effect) pairs is turned into one query per pair;
//! each sampled answer becomes a node attached to the node being queried.
//! Queries within a layer are sampled in parallel and committed to the graph
//! in schedule order, so results never depend on thread scheduling.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapters::StExample;
use crate::backends::{Generation, GenerationConfig, GeneratorBackend};
use crate::error::{Error, Result};
use crate::graph::{AddOutcome, EffectType, NodeId, ProvenanceRecord, ProvenanceStatus, Relation, StGraph};
pub use crate::query::build_query;
use crate::query::QueryTemplate;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationSchedule(Vec<(Relation, EffectType)>);

impl RelationSchedule {
    pub fn new(pairs: Vec<(Relation, EffectType)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("relation schedule is empty"));
        }
        Ok(RelationSchedule(pairs))
    }

    /// `[(helps, imminent), (hurts, imminent)]`
    pub fn forward() -> Self {
        RelationSchedule(vec![
            (Relation::Helps, EffectType::Imminent),
            (Relation::Hurts, EffectType::Imminent),
        ])
    }

    /// `[(helped_by, imminent), (hurt_by, imminent)]`
    pub fn reverse() -> Self {
        RelationSchedule(vec![
            (Relation::HelpedBy, EffectType::Imminent),
            (Relation::HurtBy, EffectType::Imminent),
        ])
    }

    /// The pairs of a group of examples, in example order.
    pub fn from_examples(examples: &[StExample]) -> Result<Self> {
        Self::new(examples.iter().map(|e| (e.relation, e.effect)).collect())
    }

    pub fn pairs(&self) -> &[(Relation, EffectType)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromStr for RelationSchedule {
    type Err = Error;

    /// `fwd`, `rev`, or a comma-separated list of `relation:effect`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fwd" | "forward" => return Ok(Self::forward()),
            "rev" | "reverse" => return Ok(Self::reverse()),
            _ => {}
        }
        let pairs = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| {
                let (r, c) = p
                    .split_once(':')
                    .ok_or_else(|| Error::invalid(format!("schedule entry {p:?} is not relation:effect")))?;
                Ok((r.parse()?, c.parse()?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(pairs)
    }
}

impl fmt::Display for RelationSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(r, c)| format!("{r}:{c}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionPolicy {
    pub max_depth: usize,
    pub max_nodes: usize,
    pub per_node_schedule: RelationSchedule,
}

impl ExpansionPolicy {
    pub fn new(max_depth: usize, max_nodes: usize, per_node_schedule: RelationSchedule) -> Result<Self> {
        if max_depth < 1 {
            return Err(Error::invalid("max_depth must be at least 1"));
        }
        if max_nodes < 2 {
            return Err(Error::invalid("max_nodes must be at least 2"));
        }
        Ok(ExpansionPolicy {
            max_depth,
            max_nodes,
            per_node_schedule,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxDepth,
    NodeBudget,
    /// A layer produced no new nodes.
    Exhausted,
}

#[derive(Clone, Debug)]
pub struct Expansion {
    pub graph: StGraph,
    pub stop_reason: StopReason,
    pub layers: usize,
}

/// Runs queries against a backend and commits the answers to graphs,
/// handing out consecutive stream indices.
pub struct GraphGenerator<'a, B: GeneratorBackend + ?Sized> {
    backend: &'a B,
    config: &'a GenerationConfig,
    template: QueryTemplate,
    next_stream: u64,
}

struct Job {
    source: NodeId,
    relation: Relation,
    effect: EffectType,
    stream: u64,
}

struct LayerOutcome {
    created: Vec<NodeId>,
    over_budget: bool,
}

impl<'a, B: GeneratorBackend + ?Sized> GraphGenerator<'a, B> {
    pub fn new(backend: &'a B, config: &'a GenerationConfig) -> Result<Self> {
        if !backend.capabilities().can_generate {
            return Err(Error::invalid(format!("backend {} cannot generate", backend.name())));
        }
        config.validate()?;
        Ok(GraphGenerator {
            backend,
            config,
            template: QueryTemplate::default(),
            next_stream: 0,
        })
    }

    pub fn with_template(mut self, template: QueryTemplate) -> Self {
        self.template = template;
        self
    }

    /// First stream index handed out. Batch runs give each graph its own
    /// range so graphs stay independent of one another.
    pub fn with_stream_base(mut self, base: u64) -> Self {
        self.next_stream = base;
        self
    }

    pub fn next_stream(&self) -> u64 {
        self.next_stream
    }

    /// Takes one stream index for a query issued outside a graph.
    pub fn take_stream(&mut self) -> u64 {
        let s = self.next_stream;
        self.next_stream += 1;
        s
    }

    pub fn backend(&self) -> &B {
        self.backend
    }

    pub fn config(&self) -> &GenerationConfig {
        self.config
    }

    pub fn template(&self) -> QueryTemplate {
        self.template
    }

    /// One pass of the schedule from the root of a fresh graph.
    pub fn generate(&mut self, context: &str, situation: &str, schedule: &RelationSchedule) -> Result<StGraph> {
        let mut graph = StGraph::new(context, situation)?;
        let root = graph.root().expect("fresh graph has a root");
        self.run_layer(&mut graph, &[root], schedule, None);
        Ok(graph)
    }

    /// Breadth-first expansion: every frontier node shallower than
    /// `max_depth` is queried with the per-node schedule, using its own text
    /// as the situation; newly created nodes form the next frontier.
    pub fn expand(&mut self, mut graph: StGraph, frontier: &[NodeId], policy: &ExpansionPolicy) -> Result<Expansion> {
        if let Some(missing) = frontier.iter().find(|id| graph.node(**id).is_none()) {
            return Err(Error::invalid(format!("frontier node {missing} is not in the graph")));
        }
        let depths = graph.depths();
        let shallow = |ids: &[NodeId], depths: &std::collections::HashMap<NodeId, usize>| -> Vec<NodeId> {
            ids.iter()
                .copied()
                .filter(|id| depths.get(id).is_some_and(|&d| d < policy.max_depth))
                .collect()
        };
        let mut current = shallow(frontier, &depths);
        let mut layers = 0;
        let mut stop_reason = if current.is_empty() && !frontier.is_empty() {
            StopReason::MaxDepth
        } else {
            StopReason::Exhausted
        };
        while !current.is_empty() {
            let outcome = self.run_layer(&mut graph, &current, &policy.per_node_schedule, Some(policy.max_nodes));
            layers += 1;
            if outcome.over_budget {
                stop_reason = StopReason::NodeBudget;
                break;
            }
            if outcome.created.is_empty() {
                stop_reason = StopReason::Exhausted;
                break;
            }
            let depths = graph.depths();
            current = shallow(&outcome.created, &depths);
            if current.is_empty() {
                stop_reason = StopReason::MaxDepth;
            }
        }
        Ok(Expansion {
            graph,
            stop_reason,
            layers,
        })
    }

    fn run_layer(
        &mut self,
        graph: &mut StGraph,
        sources: &[NodeId],
        schedule: &RelationSchedule,
        max_nodes: Option<usize>,
    ) -> LayerOutcome {
        let mut jobs = Vec::with_capacity(sources.len() * schedule.len());
        for &source in sources {
            for &(relation, effect) in schedule.pairs() {
                jobs.push(Job {
                    source,
                    relation,
                    effect,
                    stream: self.take_stream(),
                });
            }
        }

        let context = graph.context().to_string();
        let texts: Vec<String> = jobs
            .iter()
            .map(|j| graph.node(j.source).expect("sources are graph nodes").text.clone())
            .collect();
        let backend = self.backend;
        let config = self.config;
        let template = self.template;
        let results: Vec<(String, Result<Generation>)> = jobs
            .par_iter()
            .zip(texts.par_iter())
            .map(
                |(job, text)| match build_query(&context, text, job.relation, job.effect, template) {
                    Ok(query) => {
                        let generation = backend.generate(&query, config, job.stream);
                        (query.surface, generation)
                    }
                    Err(e) => (String::new(), Err(e)),
                },
            )
            .collect();

        let mut outcome = LayerOutcome {
            created: Vec::new(),
            over_budget: false,
        };
        let backend_name = backend.name();
        for (job, (surface, generation)) in jobs.iter().zip(results) {
            let mut record = ProvenanceRecord {
                backend: backend_name.clone(),
                detail: None,
                edge: None,
                effect: job.effect,
                logprob: None,
                query: surface,
                relation: job.relation,
                source: job.source,
                status: ProvenanceStatus::Failed,
                stream: job.stream,
                truncated: false,
            };
            let generation = match generation {
                Ok(g) => g,
                Err(e) => {
                    record.detail = Some(e.to_string());
                    graph.record(record);
                    continue;
                }
            };
            record.truncated = generation.truncated;
            record.logprob = Some(generation.scored.logprob).filter(|lp| lp.is_finite());
            let answer = &generation.scored.text;
            let preview = match graph.preview_add(job.source, job.relation, job.effect, answer) {
                Ok(p) => p,
                Err(e) => {
                    record.detail = Some(e.to_string());
                    graph.record(record);
                    continue;
                }
            };
            if preview.created && max_nodes.is_some_and(|m| graph.node_count() >= m) {
                record.status = ProvenanceStatus::OverBudget;
                record.detail = Some(answer.clone());
                graph.record(record);
                outcome.over_budget = true;
                break;
            }
            let added = graph
                .add_node(job.source, job.relation, job.effect, answer)
                .expect("previewed insertion succeeds");
            match added.outcome {
                AddOutcome::Added { edge } => {
                    record.status = ProvenanceStatus::Added;
                    record.edge = Some(edge);
                }
                AddOutcome::SkippedCycle => {
                    record.status = ProvenanceStatus::SkippedCycle;
                    record.detail = Some(answer.clone());
                }
                AddOutcome::SkippedDuplicate => {
                    record.status = ProvenanceStatus::SkippedDuplicate;
                    record.detail = Some(answer.clone());
                }
            }
            if added.created {
                outcome.created.push(added.node);
            }
            graph.record(record);
        }
        outcome
    }
}

/// Builds a graph rooted at `situation` with one query per schedule entry.
/// Failed queries are recorded in the provenance and skipped.
pub fn iterative_graph_gen<B: GeneratorBackend + ?Sized>(
    backend: &B,
    context: &str,
    situation: &str,
    schedule: &RelationSchedule,
    config: &GenerationConfig,
) -> Result<StGraph> {
    GraphGenerator::new(backend, config)?.generate(context, situation, schedule)
}

pub fn recursive_expand<B: GeneratorBackend + ?Sized>(
    backend: &B,
    graph: StGraph,
    frontier: &[NodeId],
    policy: &ExpansionPolicy,
    config: &GenerationConfig,
) -> Result<Expansion> {
    GraphGenerator::new(backend, config)?.expand(graph, frontier, policy)
}

/// Number of failed queries recorded in a graph's provenance.
pub fn failure_count(graph: &StGraph) -> usize {
    graph
        .provenance()
        .iter()
        .filter(|p| p.status == ProvenanceStatus::Failed)
        .count()
}
