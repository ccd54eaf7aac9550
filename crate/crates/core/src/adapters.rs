//! Dataset adapters.
//!
//! Each supported dataset has a canonical JSONL record schema (see the
//! `*Record` types). Adapters turn one raw record into zero or more
//! [`StExample`]s: a question tuple plus the answer phrase that becomes the
//! target node. Examples sharing a (context, situation) pair form one
//! reference graph.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{AddOutcome, EffectType, ProvenanceRecord, ProvenanceStatus, Relation, StGraph};
use crate::query::{build_query, QueryTemplate};
use crate::text::normalize;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Wiqa,
    Quarel,
    Defeasible,
}

impl Dataset {
    pub const ALL: [Dataset; 3] = [Dataset::Wiqa, Dataset::Quarel, Dataset::Defeasible];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::Wiqa => "wiqa",
            Dataset::Quarel => "quarel",
            Dataset::Defeasible => "defeasible",
        }
    }

    /// Relations a record from this dataset may produce.
    pub fn relations(self) -> [Relation; 2] {
        match self {
            Dataset::Wiqa => [Relation::Helps, Relation::Hurts],
            Dataset::Quarel => [Relation::Entails, Relation::Contradicts],
            Dataset::Defeasible => [Relation::Strengthens, Relation::Weakens],
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Dataset::ALL
            .into_iter()
            .find(|d| d.name() == s.trim().to_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown dataset {s:?}")))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|d| d.name() == s.trim().to_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown split {s:?}")))
    }
}

/// One supervised question/answer pair. Field order is the serialized key
/// order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StExample {
    pub answer: String,
    pub context: String,
    pub dataset: Dataset,
    pub effect: EffectType,
    pub group_key: String,
    pub relation: Relation,
    pub situation: String,
    pub split: Split,
}

impl StExample {
    pub fn new(
        dataset: Dataset,
        split: Split,
        context: &str,
        situation: &str,
        relation: Relation,
        effect: EffectType,
        answer: &str,
    ) -> Self {
        StExample {
            answer: answer.trim().to_string(),
            context: context.trim().to_string(),
            dataset,
            effect,
            group_key: group_key(context, situation),
            relation,
            situation: situation.trim().to_string(),
            split,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("example serialization is infallible")
    }
}

/// Stable identifier of a (context, situation) pair: the first 16 hex digits
/// of SHA-256 over the normalized texts joined by U+001F.
pub fn group_key(context: &str, situation: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(normalize(context).as_bytes());
    hasher.update([0x1f]);
    hasher.update(normalize(situation).as_bytes());
    hex::encode(hasher.finalize())[..16].to_string()
}

/// Why a raw record produced no examples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopPolarity {
    Positive,
    Negative,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WiqaHop {
    pub node: String,
    /// Influence of the previous chain element on this one.
    pub polarity: HopPolarity,
}

/// `{"context", "perturbation", "chain": [{"node", "polarity"}], "label"?}`
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WiqaRecord {
    pub context: String,
    pub perturbation: String,
    #[serde(default)]
    pub chain: Option<Vec<WiqaHop>>,
    #[serde(default)]
    pub label: Option<String>,
}

/// `{"context", "logical_form", "answer", "conclusion"?}` where
/// `logical_form` reads `<premise> -> (a) <option> (or) (b) <option>` and
/// `answer` is `a` or `b`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarelRecord {
    pub context: String,
    pub logical_form: String,
    pub answer: String,
    #[serde(default)]
    pub conclusion: Option<String>,
}

/// `{"premise", "hypothesis", "update", "update_type"}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefeasibleRecord {
    pub premise: String,
    pub hypothesis: String,
    pub update: String,
    pub update_type: String,
}

pub type AdaptResult = std::result::Result<Vec<StExample>, String>;

/// One example per chain hop. The first hop is imminent, later hops
/// eventual; the relation follows the cumulative sign of the chain up to
/// that hop. Records labelled `no_effect` yield nothing.
pub fn adapt_wiqa(record: &WiqaRecord, split: Split) -> AdaptResult {
    if record.context.trim().is_empty() {
        return Err("empty context".into());
    }
    if normalize(&record.perturbation).is_empty() {
        return Err("empty perturbation".into());
    }
    if record.label.as_deref().map(str::trim) == Some("no_effect") {
        return Ok(Vec::new());
    }
    let chain = match &record.chain {
        Some(chain) if !chain.is_empty() => chain,
        _ => return Err("missing reasoning chain".into()),
    };
    let mut positive = true;
    let mut out = Vec::with_capacity(chain.len());
    for (i, hop) in chain.iter().enumerate() {
        if normalize(&hop.node).is_empty() {
            return Err(format!("empty chain node at hop {}", i + 1));
        }
        positive ^= hop.polarity == HopPolarity::Negative;
        let relation = if positive { Relation::Helps } else { Relation::Hurts };
        let effect = if i == 0 {
            EffectType::Imminent
        } else {
            EffectType::Eventual
        };
        out.push(StExample::new(
            Dataset::Wiqa,
            split,
            &record.context,
            &record.perturbation,
            relation,
            effect,
            &hop.node,
        ));
    }
    Ok(out)
}

/// Splits `<premise> -> (a) <x> (or) (b) <y>` into its three phrases.
pub fn parse_logical_form(form: &str) -> Option<(String, String, String)> {
    let (premise, rest) = form.split_once("->").or_else(|| form.split_once('→'))?;
    let rest = rest.trim().strip_prefix("(a)")?;
    let (first, second) = rest.split_once("(or)")?;
    let second = second.trim().strip_prefix("(b)")?;
    let parts = [premise.trim(), first.trim(), second.trim()];
    if parts.iter().any(|p| normalize(p).is_empty()) {
        return None;
    }
    Some((parts[0].to_string(), parts[1].to_string(), parts[2].to_string()))
}

/// Entails-imminent for the keyed option, contradicts-imminent for the other
/// one, and entails-eventual for the conclusion when the record has one.
/// Option texts are used verbatim.
pub fn adapt_quarel(record: &QuarelRecord, split: Split) -> AdaptResult {
    if record.context.trim().is_empty() {
        return Err("empty context".into());
    }
    let (premise, a, b) = parse_logical_form(&record.logical_form)
        .ok_or_else(|| format!("unparseable logical form {:?}", record.logical_form))?;
    let (correct, wrong) = match record
        .answer
        .trim()
        .trim_matches(|c| c == '(' || c == ')')
        .to_lowercase()
        .as_str()
    {
        "a" => (a, b),
        "b" => (b, a),
        other => return Err(format!("answer key {other:?} is neither a nor b")),
    };
    let example = |relation, effect, answer: &str| {
        StExample::new(
            Dataset::Quarel,
            split,
            &record.context,
            &premise,
            relation,
            effect,
            answer,
        )
    };
    let mut out = vec![
        example(Relation::Entails, EffectType::Imminent, &correct),
        example(Relation::Contradicts, EffectType::Imminent, &wrong),
    ];
    if let Some(conclusion) = record.conclusion.as_deref().filter(|c| !normalize(c).is_empty()) {
        out.push(example(Relation::Entails, EffectType::Eventual, conclusion));
    }
    Ok(out)
}

/// The update is the situation and the hypothesis the answer, turning the
/// abductive record into a deductive question.
pub fn adapt_defeasible(record: &DefeasibleRecord, split: Split) -> AdaptResult {
    if record.premise.trim().is_empty() {
        return Err("empty premise".into());
    }
    if normalize(&record.update).is_empty() || normalize(&record.hypothesis).is_empty() {
        return Err("empty update or hypothesis".into());
    }
    let relation = match record.update_type.trim().to_lowercase().as_str() {
        "strengthener" => Relation::Strengthens,
        "weakener" => Relation::Weakens,
        other => return Err(format!("unknown update type {other:?}")),
    };
    Ok(vec![StExample::new(
        Dataset::Defeasible,
        split,
        &record.premise,
        &record.update,
        relation,
        EffectType::Imminent,
        &record.hypothesis,
    )])
}

/// Adapts one JSON line for `dataset`. `Err` carries the skip diagnostic.
pub fn adapt_line(line: &str, dataset: Dataset, split: Split) -> std::result::Result<Vec<StExample>, String> {
    fn parse<T: serde::de::DeserializeOwned>(line: &str) -> std::result::Result<T, String> {
        serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))
    }
    match dataset {
        Dataset::Wiqa => adapt_wiqa(&parse(line)?, split),
        Dataset::Quarel => adapt_quarel(&parse(line)?, split),
        Dataset::Defeasible => adapt_defeasible(&parse(line)?, split),
    }
}

/// Published split sizes for the full datasets.
pub fn full_data_count(dataset: Dataset, split: Split) -> u64 {
    match (dataset, split) {
        (Dataset::Wiqa, Split::Train) => 119_200,
        (Dataset::Wiqa, Split::Dev) => 34_800,
        (Dataset::Wiqa, Split::Test) => 34_800,
        (Dataset::Quarel, Split::Train) => 4_600,
        (Dataset::Quarel, Split::Dev) => 1_300,
        (Dataset::Quarel, Split::Test) => 652,
        (Dataset::Defeasible, Split::Train) => 200_000,
        (Dataset::Defeasible, Split::Dev) => 14_900,
        (Dataset::Defeasible, Split::Test) => 15_400,
    }
}

/// Expected record counts for bundled mini splits:
/// `{"<dataset>": {"<split>": count}}`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FixtureManifest(pub BTreeMap<Dataset, BTreeMap<Split, u64>>);

impl FixtureManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn expected(&self, dataset: Dataset, split: Split) -> Option<u64> {
        self.0.get(&dataset)?.get(&split).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedSource {
    Fixture,
    FullData,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub dataset: Dataset,
    pub split: Split,
    pub expected_count: u64,
    pub expected_source: ExpectedSource,
    /// Well-formed records read.
    pub observed_count: u64,
    pub examples: u64,
    pub skipped_lines: u64,
    pub count_mismatch: bool,
}

/// Streaming reader over a raw JSONL split. Yields adapted examples in file
/// order; malformed or unusable lines are skipped and recorded.
pub struct SplitReader {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line_no: usize,
    dataset: Dataset,
    split: Split,
    expected: (u64, ExpectedSource),
    pending: std::vec::IntoIter<StExample>,
    observed: u64,
    examples: u64,
    diagnostics: Vec<Diagnostic>,
}

/// Opens `path` for streaming. Without a fixture count the published
/// full-data size is expected; a mismatch is only a warning.
pub fn load_split(path: &Path, dataset: Dataset, split: Split, fixture_count: Option<u64>) -> Result<SplitReader> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let expected = match fixture_count {
        Some(n) => (n, ExpectedSource::Fixture),
        None => (full_data_count(dataset, split), ExpectedSource::FullData),
    };
    Ok(SplitReader {
        path: path.to_path_buf(),
        lines: BufReader::new(file).lines(),
        line_no: 0,
        dataset,
        split,
        expected,
        pending: Vec::new().into_iter(),
        observed: 0,
        examples: 0,
        diagnostics: Vec::new(),
    })
}

impl SplitReader {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    /// Manifest for everything read so far.
    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            dataset: self.dataset,
            split: self.split,
            expected_count: self.expected.0,
            expected_source: self.expected.1,
            observed_count: self.observed,
            examples: self.examples,
            skipped_lines: self.diagnostics.len() as u64,
            count_mismatch: self.observed != self.expected.0,
        }
    }

    /// Drains the reader and returns the examples with the final manifest.
    pub fn read_all(mut self) -> Result<(Vec<StExample>, SplitManifest, Vec<Diagnostic>)> {
        let examples = self.by_ref().collect::<Result<Vec<_>>>()?;
        let manifest = self.finish();
        Ok((examples, manifest, self.diagnostics))
    }

    /// Final manifest; logs a warning on a count mismatch.
    pub fn finish(&self) -> SplitManifest {
        let manifest = self.manifest();
        if manifest.count_mismatch {
            log::warn!(
                target: "adapt",
                "{} {}: observed {} records, expected {} ({:?})",
                manifest.dataset,
                manifest.split,
                manifest.observed_count,
                manifest.expected_count,
                manifest.expected_source
            );
        }
        manifest
    }
}

impl Iterator for SplitReader {
    type Item = Result<StExample>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(example) = self.pending.next() {
                self.examples += 1;
                return Some(Ok(example));
            }
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let is_record = serde_json::from_str::<serde_json::Value>(&line)
                .map(|v| v.is_object())
                .unwrap_or(false);
            if is_record {
                self.observed += 1;
            }
            match adapt_line(&line, self.dataset, self.split) {
                Ok(examples) => self.pending = examples.into_iter(),
                Err(reason) => {
                    log::debug!(target: "adapt", "{}:{}: {reason}", self.path.display(), self.line_no);
                    self.diagnostics.push(Diagnostic {
                        line: self.line_no,
                        reason,
                    });
                }
            }
        }
    }
}

/// Groups examples by `group_key`, keeping first-appearance order.
pub fn group_examples(examples: impl IntoIterator<Item = StExample>) -> Vec<Vec<StExample>> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<Vec<StExample>> = Vec::new();
    for example in examples {
        match index.get(&example.group_key) {
            Some(&i) => groups[i].push(example),
            None => {
                index.insert(example.group_key.clone(), groups.len());
                groups.push(vec![example]);
            }
        }
    }
    groups
}

/// Rebuilds the graph a group of examples was decomposed from: the
/// situation is the root and each example adds one edge to its answer.
pub fn reference_graph(examples: &[StExample]) -> Result<StGraph> {
    let first = examples
        .first()
        .ok_or_else(|| Error::invalid("no examples to build a graph from"))?;
    if let Some(other) = examples.iter().find(|e| e.group_key != first.group_key) {
        return Err(Error::invalid(format!(
            "examples mix groups {} and {}",
            first.group_key, other.group_key
        )));
    }
    let mut graph = StGraph::new(&first.context, &first.situation)?;
    let root = graph.root().expect("fresh graph has a root");
    for (i, example) in examples.iter().enumerate() {
        let result = graph.add_node(root, example.relation, example.effect, &example.answer)?;
        let query = build_query(
            &example.context,
            &example.situation,
            example.relation,
            example.effect,
            QueryTemplate::Question,
        )?;
        let (status, edge) = match result.outcome {
            AddOutcome::Added { edge } => (ProvenanceStatus::Added, Some(edge)),
            AddOutcome::SkippedCycle => (ProvenanceStatus::SkippedCycle, None),
            AddOutcome::SkippedDuplicate => (ProvenanceStatus::SkippedDuplicate, None),
        };
        graph.record(ProvenanceRecord {
            backend: "reference".into(),
            detail: None,
            edge,
            effect: example.effect,
            logprob: None,
            query: query.surface,
            relation: example.relation,
            source: root,
            status,
            stream: i as u64,
            truncated: false,
        });
    }
    Ok(graph)
}

/// The (relation, effect, normalized answer) triple of every root edge.
pub fn root_triples(graph: &StGraph) -> Vec<(Relation, EffectType, String)> {
    let Some(root) = graph.root() else {
        return Vec::new();
    };
    graph
        .outgoing(root)
        .map(|(_, e)| {
            let target = graph.node(e.target).expect("edge endpoints are known");
            (e.relation, e.effect, target.normalized.clone())
        })
        .collect()
}
