//! Situational influence graphs.
//!
//! A graph is rooted at the situation phrase. Nodes are event or state
//! phrases, merged by normalized text, and every edge carries a [`Relation`]
//! and an [`EffectType`]. Construction through [`StGraph::add_node`] keeps the
//! graph acyclic and every node reachable from the root.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Helps,
    Hurts,
    Entails,
    Contradicts,
    Strengthens,
    Weakens,
    HelpedBy,
    HurtBy,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Relation {
    pub const ALL: [Relation; 8] = [
        Relation::Helps,
        Relation::Hurts,
        Relation::Entails,
        Relation::Contradicts,
        Relation::Strengthens,
        Relation::Weakens,
        Relation::HelpedBy,
        Relation::HurtBy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::Helps => "helps",
            Relation::Hurts => "hurts",
            Relation::Entails => "entails",
            Relation::Contradicts => "contradicts",
            Relation::Strengthens => "strengthens",
            Relation::Weakens => "weakens",
            Relation::HelpedBy => "helped_by",
            Relation::HurtBy => "hurt_by",
        }
    }

    /// Verb phrase used when rendering a natural-language query.
    pub fn verb(self) -> &'static str {
        match self {
            Relation::Helps => "help",
            Relation::Hurts => "hurt",
            Relation::Entails => "entail",
            Relation::Contradicts => "contradict",
            Relation::Strengthens => "strengthen",
            Relation::Weakens => "weaken",
            Relation::HelpedBy => "helped by",
            Relation::HurtBy => "hurt by",
        }
    }

    pub fn polarity(self) -> Polarity {
        match self {
            Relation::Helps | Relation::Entails | Relation::Strengthens | Relation::HelpedBy => Polarity::Positive,
            Relation::Hurts | Relation::Contradicts | Relation::Weakens | Relation::HurtBy => Polarity::Negative,
        }
    }

    /// True for the relations read from effect back to cause.
    pub fn is_reversed(self) -> bool {
        matches!(self, Relation::HelpedBy | Relation::HurtBy)
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_lowercase().replace([' ', '-'], "_");
        Relation::ALL
            .into_iter()
            .find(|r| r.name() == key)
            .ok_or_else(|| Error::invalid(format!("unknown relation {s:?}")))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectType {
    Imminent,
    Eventual,
}

impl EffectType {
    pub const ALL: [EffectType; 2] = [EffectType::Imminent, EffectType::Eventual];

    pub fn name(self) -> &'static str {
        match self {
            EffectType::Imminent => "imminent",
            EffectType::Eventual => "eventual",
        }
    }
}

impl fmt::Display for EffectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EffectType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "imminent" | "imminently" => Ok(EffectType::Imminent),
            "eventual" | "eventually" => Ok(EffectType::Eventual),
            _ => Err(Error::invalid(format!("unknown effect type {s:?}"))),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: NodeId,
    /// Display text as supplied, with whitespace collapsed.
    pub text: String,
    pub normalized: String,
    pub is_root: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub source: NodeId,
    pub target: NodeId,
    pub relation: Relation,
    pub effect: EffectType,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceStatus {
    Added,
    SkippedCycle,
    SkippedDuplicate,
    /// Sample discarded because keeping it would exceed the node budget.
    OverBudget,
    Failed,
}

/// How one query contributed (or failed to contribute) to a graph.
///
/// Field order is the serialized key order and must stay sorted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub backend: String,
    pub detail: Option<String>,
    pub edge: Option<usize>,
    pub effect: EffectType,
    pub logprob: Option<f64>,
    pub query: String,
    pub relation: Relation,
    pub source: NodeId,
    pub status: ProvenanceStatus,
    pub stream: u64,
    pub truncated: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AddOutcome {
    Added { edge: usize },
    SkippedCycle,
    SkippedDuplicate,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct AddResult {
    pub node: NodeId,
    /// A fresh node was created (as opposed to merged by text).
    pub created: bool,
    pub outcome: AddOutcome,
}

impl AddResult {
    pub fn is_skipped(&self) -> bool {
        !matches!(self.outcome, AddOutcome::Added { .. })
    }
}

/// Invariant violation reported by [`StGraph::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    RootCount {
        roots: Vec<NodeId>,
    },
    EmptyText {
        node: NodeId,
    },
    SelfLoop {
        edge: usize,
    },
    DuplicateEdge {
        first: usize,
        second: usize,
    },
    /// Edges among the nodes left over after topological peeling; every
    /// directed cycle uses only these edges.
    Cycle {
        edges: Vec<usize>,
    },
    Unreachable {
        nodes: Vec<NodeId>,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RootCount { roots } => write!(f, "expected exactly one root, found {roots:?}"),
            Violation::EmptyText { node } => write!(f, "node {node} has empty normalized text"),
            Violation::SelfLoop { edge } => write!(f, "edge {edge} is a self loop"),
            Violation::DuplicateEdge { first, second } => {
                write!(f, "edges {first} and {second} are duplicates")
            }
            Violation::Cycle { edges } => write!(f, "directed cycle through edges {edges:?}"),
            Violation::Unreachable { nodes } => {
                write!(f, "nodes unreachable from root: {nodes:?}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TwoHopPath {
    pub first: NodeId,
    pub middle: NodeId,
    pub last: NodeId,
    pub first_relation: Relation,
    pub second_relation: Relation,
    pub first_edge: usize,
    pub second_edge: usize,
}

#[derive(Clone, Debug)]
pub struct StGraph {
    context: String,
    situation: String,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    provenance: Vec<ProvenanceRecord>,
    position: HashMap<NodeId, usize>,
    by_text: HashMap<String, NodeId>,
    /// Outgoing edge indices per node position.
    outgoing: Vec<Vec<usize>>,
}

impl PartialEq for StGraph {
    fn eq(&self, other: &Self) -> bool {
        self.context == other.context
            && self.situation == other.situation
            && self.nodes == other.nodes
            && self.edges == other.edges
            && self.provenance == other.provenance
    }
}

impl StGraph {
    /// Creates a graph holding only the root node for `situation`.
    pub fn new(context: &str, situation: &str) -> Result<Self> {
        let mut graph = StGraph {
            context: crate::text::collapse_whitespace(context),
            situation: crate::text::collapse_whitespace(situation),
            nodes: Vec::new(),
            edges: Vec::new(),
            provenance: Vec::new(),
            position: HashMap::new(),
            by_text: HashMap::new(),
            outgoing: Vec::new(),
        };
        let normalized = normalize(situation);
        if normalized.is_empty() {
            return Err(Error::invalid("situation is empty after normalization"));
        }
        graph.push_node(NodeId(0), graph.situation.clone(), true);
        Ok(graph)
    }

    pub fn context(&self) -> &str {
        &self.context
    }

    pub fn situation(&self) -> &str {
        &self.situation
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn provenance(&self) -> &[ProvenanceRecord] {
        &self.provenance
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// The first node flagged as root. Always present for graphs built in
    /// memory; a deserialized graph may lack one (see [`StGraph::validate`]).
    pub fn root(&self) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.is_root).map(|n| n.id)
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.position.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn find_by_text(&self, text: &str) -> Option<NodeId> {
        self.by_text.get(&normalize(text)).copied()
    }

    pub fn outgoing(&self, id: NodeId) -> impl Iterator<Item = (usize, &Edge)> {
        let list = self
            .position
            .get(&id)
            .map(|&i| self.outgoing[i].as_slice())
            .unwrap_or(&[]);
        list.iter().map(move |&e| (e, &self.edges[e]))
    }

    pub fn record(&mut self, record: ProvenanceRecord) {
        self.provenance.push(record);
    }

    fn push_node(&mut self, id: NodeId, text: String, is_root: bool) {
        let normalized = normalize(&text);
        self.position.insert(id, self.nodes.len());
        self.by_text.entry(normalized.clone()).or_insert(id);
        self.nodes.push(Node {
            id,
            text,
            normalized,
            is_root,
        });
        self.outgoing.push(Vec::new());
    }

    fn next_id(&self) -> NodeId {
        NodeId(self.nodes.iter().map(|n| n.id.0 + 1).max().unwrap_or(0))
    }

    /// Checks whether `to` can reach `from` following edges forward.
    fn reaches(&self, from: NodeId, to: NodeId) -> bool {
        let mut seen = HashSet::new();
        let mut stack = vec![from];
        while let Some(id) = stack.pop() {
            if id == to {
                return true;
            }
            if seen.insert(id) {
                stack.extend(self.outgoing(id).map(|(_, e)| e.target));
            }
        }
        false
    }

    /// Outcome [`StGraph::add_node`] would have, without mutating the graph.
    pub fn preview_add(
        &self,
        source: NodeId,
        relation: Relation,
        effect: EffectType,
        target_text: &str,
    ) -> Result<AddResult> {
        if !self.position.contains_key(&source) {
            return Err(Error::invalid(format!("unknown source node {source}")));
        }
        let normalized = normalize(target_text);
        if normalized.is_empty() {
            return Err(Error::invalid("target text is empty after normalization"));
        }
        let Some(&target) = self.by_text.get(&normalized) else {
            return Ok(AddResult {
                node: self.next_id(),
                created: true,
                outcome: AddOutcome::Added { edge: self.edges.len() },
            });
        };
        let outcome = if target == source || self.reaches(target, source) {
            AddOutcome::SkippedCycle
        } else if self
            .outgoing(source)
            .any(|(_, e)| e.target == target && e.relation == relation && e.effect == effect)
        {
            AddOutcome::SkippedDuplicate
        } else {
            AddOutcome::Added { edge: self.edges.len() }
        };
        Ok(AddResult {
            node: target,
            created: false,
            outcome,
        })
    }

    /// Attaches `target_text` below `source` with the given edge labels.
    ///
    /// Nodes are merged by normalized text. An edge that would close a
    /// directed cycle or duplicate an existing edge is skipped and the graph
    /// is left unchanged.
    pub fn add_node(
        &mut self,
        source: NodeId,
        relation: Relation,
        effect: EffectType,
        target_text: &str,
    ) -> Result<AddResult> {
        let result = self.preview_add(source, relation, effect, target_text)?;
        if let AddOutcome::Added { edge } = result.outcome {
            if result.created {
                self.push_node(result.node, crate::text::collapse_whitespace(target_text), false);
            }
            let src_pos = self.position[&source];
            self.outgoing[src_pos].push(edge);
            self.edges.push(Edge {
                source,
                target: result.node,
                relation,
                effect,
            });
        }
        Ok(result)
    }

    /// Shortest edge distance from the root for every reachable node.
    pub fn depths(&self) -> HashMap<NodeId, usize> {
        let mut depth = HashMap::new();
        let Some(root) = self.root() else {
            return depth;
        };
        depth.insert(root, 0);
        let mut queue = VecDeque::from([root]);
        while let Some(id) = queue.pop_front() {
            let d = depth[&id];
            for (_, edge) in self.outgoing(id) {
                if let std::collections::hash_map::Entry::Vacant(slot) = depth.entry(edge.target) {
                    slot.insert(d + 1);
                    queue.push_back(edge.target);
                }
            }
        }
        depth
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();

        let roots: Vec<NodeId> = self.nodes.iter().filter(|n| n.is_root).map(|n| n.id).collect();
        if roots.len() != 1 {
            violations.push(Violation::RootCount { roots: roots.clone() });
        }
        for node in &self.nodes {
            if node.normalized.is_empty() {
                violations.push(Violation::EmptyText { node: node.id });
            }
        }

        let mut seen: HashMap<Edge, usize> = HashMap::new();
        for (i, edge) in self.edges.iter().enumerate() {
            if edge.source == edge.target {
                violations.push(Violation::SelfLoop { edge: i });
            }
            if let Some(&first) = seen.get(edge) {
                violations.push(Violation::DuplicateEdge { first, second: i });
            } else {
                seen.insert(*edge, i);
            }
        }

        // Kahn peeling; whatever survives sits on or behind a cycle.
        let mut indegree: HashMap<NodeId, usize> = self.nodes.iter().map(|n| (n.id, 0)).collect();
        for edge in &self.edges {
            *indegree.get_mut(&edge.target).expect("edge endpoints are known") += 1;
        }
        let mut queue: VecDeque<NodeId> = self
            .nodes
            .iter()
            .filter(|n| indegree[&n.id] == 0)
            .map(|n| n.id)
            .collect();
        let mut removed = HashSet::new();
        while let Some(id) = queue.pop_front() {
            removed.insert(id);
            for (_, edge) in self.outgoing(id) {
                let d = indegree.get_mut(&edge.target).expect("known");
                *d -= 1;
                if *d == 0 {
                    queue.push_back(edge.target);
                }
            }
        }
        if removed.len() < self.nodes.len() {
            let edges = self
                .edges
                .iter()
                .enumerate()
                .filter(|(_, e)| !removed.contains(&e.source) && !removed.contains(&e.target))
                .map(|(i, _)| i)
                .collect();
            violations.push(Violation::Cycle { edges });
        }

        if roots.len() == 1 {
            let depths = self.depths();
            let nodes: Vec<NodeId> = self
                .nodes
                .iter()
                .filter(|n| !depths.contains_key(&n.id))
                .map(|n| n.id)
                .collect();
            if !nodes.is_empty() {
                violations.push(Violation::Unreachable { nodes });
            }
        }
        violations
    }

    /// Deterministic linearization used by the overlap metrics.
    ///
    /// Breadth-first from the root. Within one frontier, edges are ordered by
    /// relation, then effect type, then insertion index, and each renders as
    /// `<source> <relation> <effect> <target>` using normalized text. Clauses
    /// are joined by `" | "`. An edgeless graph flattens to its root text.
    pub fn flatten(&self) -> String {
        let Some(root) = self.root() else {
            return String::new();
        };
        let mut clauses = Vec::new();
        let mut visited = HashSet::from([root]);
        let mut frontier = vec![root];
        while !frontier.is_empty() {
            let mut layer: Vec<usize> = frontier
                .iter()
                .flat_map(|&id| self.outgoing(id).map(|(i, _)| i))
                .collect();
            layer.sort_by_key(|&i| (self.edges[i].relation, self.edges[i].effect, i));
            let mut next = Vec::new();
            for i in layer {
                let edge = &self.edges[i];
                let source = self.node(edge.source).expect("known");
                let target = self.node(edge.target).expect("known");
                clauses.push(format!(
                    "{} {} {} {}",
                    source.normalized,
                    edge.relation.name(),
                    edge.effect.name(),
                    target.normalized
                ));
                if visited.insert(edge.target) {
                    next.push(edge.target);
                }
            }
            frontier = next;
        }
        if clauses.is_empty() {
            self.node(root).map(|n| n.normalized.clone()).unwrap_or_default()
        } else {
            clauses.join(" | ")
        }
    }

    /// Every pair of consecutive edges `A -> B -> C`, in edge insertion order.
    pub fn paths_of_length_two(&self) -> Vec<TwoHopPath> {
        let mut paths = Vec::new();
        for (first_edge, first) in self.edges.iter().enumerate() {
            for (second_edge, second) in self.outgoing(first.target) {
                paths.push(TwoHopPath {
                    first: first.source,
                    middle: first.target,
                    last: second.target,
                    first_relation: first.relation,
                    second_relation: second.relation,
                    first_edge,
                    second_edge,
                });
            }
        }
        paths
    }

    /// Graphviz rendering. Positive relations are drawn green, negative red.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph stgraph {\n  rankdir=LR;\n");
        let mut nodes: Vec<&Node> = self.nodes.iter().collect();
        nodes.sort_by_key(|n| n.id);
        for node in nodes {
            let shape = if node.is_root { "doubleoctagon" } else { "box" };
            out.push_str(&format!(
                "  {} [label=\"{}\", shape={}];\n",
                node.id,
                escape_dot(&node.text),
                shape
            ));
        }
        for edge in &self.edges {
            let color = match edge.relation.polarity() {
                Polarity::Positive => "green",
                Polarity::Negative => "red",
            };
            out.push_str(&format!(
                "  {} -> {} [label=\"{} {}\", color={}];\n",
                edge.source,
                edge.target,
                edge.relation.name(),
                edge.effect.name(),
                color
            ));
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            context: self.context.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    dst: e.target,
                    effect: e.effect,
                    relation: e.relation,
                    src: e.source,
                })
                .collect(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id,
                    root: n.is_root,
                    text: n.text.clone(),
                })
                .collect(),
            provenance: self.provenance.clone(),
            situation: self.situation.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("graph serialization is infallible");
        text.push('\n');
        text
    }

    /// Parses the JSON graph format. Structure is checked (unique node ids,
    /// edges naming known nodes); graph invariants are left to
    /// [`StGraph::validate`].
    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        let mut graph = StGraph {
            context: file.context,
            situation: file.situation,
            nodes: Vec::with_capacity(file.nodes.len()),
            edges: Vec::with_capacity(file.edges.len()),
            provenance: file.provenance,
            position: HashMap::new(),
            by_text: HashMap::new(),
            outgoing: Vec::new(),
        };
        for node in file.nodes {
            if graph.position.contains_key(&node.id) {
                return Err(Error::invalid(format!("duplicate node id {}", node.id.0)));
            }
            graph.push_node(node.id, node.text, node.root);
        }
        for record in file.edges {
            let (Some(&src), Some(_)) = (graph.position.get(&record.src), graph.position.get(&record.dst)) else {
                return Err(Error::invalid(format!(
                    "edge {} -> {} names an unknown node",
                    record.src.0, record.dst.0
                )));
            };
            graph.outgoing[src].push(graph.edges.len());
            graph.edges.push(Edge {
                source: record.src,
                target: record.dst,
                relation: record.relation,
                effect: record.effect,
            });
        }
        Ok(graph)
    }
}

fn escape_dot(text: &str) -> String {
    text.replace('\\', "\\\\").replace('"', "\\\"")
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    context: String,
    edges: Vec<EdgeRecord>,
    nodes: Vec<NodeRecord>,
    provenance: Vec<ProvenanceRecord>,
    situation: String,
}

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    dst: NodeId,
    effect: EffectType,
    relation: Relation,
    src: NodeId,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: NodeId,
    root: bool,
    text: String,
}
