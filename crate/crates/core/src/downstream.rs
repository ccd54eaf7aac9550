//! Graph-augmented QA export and two-option zero-shot evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backends::{GenerationConfig, GeneratorBackend};
use crate::error::{Error, Result};
use crate::graph::StGraph;
use crate::graphgen::{GraphGenerator, RelationSchedule};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 0.9;
pub const DEFAULT_SEPARATOR: &str = " [SEP] ";

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaLabel {
    Helps,
    Hurts,
    NoEffect,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    InPara,
    OutOfPara,
    Exogenous,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub context: String,
    pub cause: String,
    pub ending: String,
    pub label: QaLabel,
    #[serde(default)]
    pub hop_count: Option<u32>,
    #[serde(default)]
    pub question_type: Option<QuestionType>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub separator: String,
    pub cause_schedule: RelationSchedule,
    pub ending_schedule: RelationSchedule,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            separator: DEFAULT_SEPARATOR.into(),
            cause_schedule: RelationSchedule::forward(),
            ending_schedule: RelationSchedule::reverse(),
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
        }
    }
}

/// One line of an exported training file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub alpha: f64,
    pub beta: f64,
    pub input_aug: String,
    pub input_main: String,
    pub label: QaLabel,
}

#[derive(Clone, Debug)]
pub struct AugmentedQaItem {
    pub record: TrainingRecord,
    pub question_type: Option<QuestionType>,
    pub cause_graph: StGraph,
    pub ending_graph: StGraph,
}

/// Renders the classifier inputs from an item and its two graphs.
pub fn render_inputs(
    item: &QaItem,
    cause_graph: &StGraph,
    ending_graph: &StGraph,
    separator: &str,
) -> (String, String) {
    let main = [item.context.as_str(), &item.cause, &item.ending].join(separator);
    let aug = [cause_graph.flatten(), ending_graph.flatten()].join(separator);
    (main, aug)
}

/// Builds the forward graph of the cause and the reverse graph of the
/// ending. Failed queries stay in the graphs' provenance; the item is kept.
pub fn augment<B: GeneratorBackend + ?Sized>(
    backend: &B,
    item: &QaItem,
    gen_config: &GenerationConfig,
    config: &AugmentConfig,
    stream_base: u64,
) -> Result<AugmentedQaItem> {
    let mut generator = GraphGenerator::new(backend, gen_config)?.with_stream_base(stream_base);
    let cause_graph = generator.generate(&item.context, &item.cause, &config.cause_schedule)?;
    let ending_graph = generator.generate(&item.context, &item.ending, &config.ending_schedule)?;
    let (input_main, input_aug) = render_inputs(item, &cause_graph, &ending_graph, &config.separator);
    Ok(AugmentedQaItem {
        record: TrainingRecord {
            alpha: config.alpha,
            beta: config.beta,
            input_aug,
            input_main,
            label: item.label,
        },
        question_type: item.question_type,
        cause_graph,
        ending_graph,
    })
}

/// Augments items in parallel; item `i` draws from streams starting at `i << 32`.
pub fn augment_all<B: GeneratorBackend + ?Sized>(
    backend: &B,
    items: &[QaItem],
    gen_config: &GenerationConfig,
    config: &AugmentConfig,
) -> Result<Vec<AugmentedQaItem>> {
    items
        .par_iter()
        .enumerate()
        .map(|(i, item)| augment(backend, item, gen_config, config, (i as u64) << 32))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub n_items: usize,
    pub by_label: BTreeMap<QaLabel, usize>,
    /// Items without a question type are counted under `unknown`.
    pub by_question_type: BTreeMap<String, usize>,
}

pub fn export_training_file(items: &[AugmentedQaItem], path: &Path) -> Result<ExportManifest> {
    if items.is_empty() {
        return Err(Error::invalid("nothing to export"));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut manifest = ExportManifest::default();
    for item in items {
        let line = serde_json::to_string(&item.record)?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        manifest.n_items += 1;
        *manifest.by_label.entry(item.record.label).or_insert(0) += 1;
        let kind = match item.question_type {
            Some(q) => serde_json::to_value(q)?.as_str().unwrap_or("unknown").to_string(),
            None => "unknown".to_string(),
        };
        *manifest.by_question_type.entry(kind).or_insert(0) += 1;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

pub fn read_training_file(path: &Path) -> Result<Vec<TrainingRecord>> {
    read_jsonl(path)
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroShotItem {
    pub question: String,
    pub option1: String,
    pub option2: String,
    pub knowledge: String,
    /// 1 or 2.
    pub gold: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotConfig {
    pub separator: String,
    pub knowledge_first: bool,
    /// Compare mean per-token log-probabilities instead of sums.
    pub length_normalize: bool,
}

impl Default for ZeroShotConfig {
    fn default() -> Self {
        ZeroShotConfig {
            separator: " ".into(),
            knowledge_first: true,
            length_normalize: false,
        }
    }
}

impl ZeroShotConfig {
    pub fn prompt(&self, item: &ZeroShotItem) -> String {
        if self.knowledge_first {
            format!("{}{}{}", item.knowledge, self.separator, item.question)
        } else {
            format!("{}{}{}", item.question, self.separator, item.knowledge)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub choice: u8,
    /// Log-probabilities of the two options; `None` stands for `-inf`.
    pub scores: (Option<f64>, Option<f64>),
    pub tie: bool,
}

/// Picks the option with the higher log-probability given the rendered
/// knowledge and question. An exact tie picks option 1.
pub fn zero_shot_pick<B: GeneratorBackend + ?Sized>(
    backend: &B,
    item: &ZeroShotItem,
    config: &ZeroShotConfig,
) -> Result<Pick> {
    if !backend.capabilities().can_score {
        return Err(Error::invalid(format!("backend {} cannot score", backend.name())));
    }
    let prompt = config.prompt(item);
    let score = |option: &str| -> Result<f64> {
        let s = backend.score(&prompt, option)?;
        Ok(if config.length_normalize {
            s.per_token_logprob()
        } else {
            s.logprob
        })
    };
    let (s1, s2) = (score(&item.option1)?, score(&item.option2)?);
    Ok(pick_from_scores(s1, s2))
}

pub fn pick_from_scores(s1: f64, s2: f64) -> Pick {
    let tie = s1 == s2;
    let finite = |s: f64| if s == f64::NEG_INFINITY { None } else { Some(s) };
    Pick {
        choice: if s2 > s1 { 2 } else { 1 },
        scores: (finite(s1), finite(s2)),
        tie,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub accuracy: f64,
    pub n_items: usize,
    pub n_correct: usize,
    pub ties: usize,
    pub picks: Vec<Pick>,
}

pub fn zero_shot_eval<B: GeneratorBackend + ?Sized>(
    backend: &B,
    items: &[ZeroShotItem],
    config: &ZeroShotConfig,
) -> Result<ZeroShotReport> {
    if items.is_empty() {
        return Err(Error::invalid("no zero-shot items"));
    }
    if let Some((i, item)) = items.iter().enumerate().find(|(_, it)| !matches!(it.gold, 1 | 2)) {
        return Err(Error::invalid(format!(
            "item {i}: gold must be 1 or 2, got {}",
            item.gold
        )));
    }
    let picks = items
        .par_iter()
        .map(|item| zero_shot_pick(backend, item, config))
        .collect::<Result<Vec<_>>>()?;
    let n_correct = picks.iter().zip(items).filter(|(p, it)| p.choice == it.gold).count();
    Ok(ZeroShotReport {
        accuracy: n_correct as f64 / items.len() as f64,
        n_items: items.len(),
        n_correct,
        ties: picks.iter().filter(|p| p.tie).count(),
        picks,
    })
}
