//! Run configuration. Values are resolved as flags > environment > config
//! file > built-in defaults; the environment only supplies the backend
//! selector (`SITUGRAPH_BACKEND`) and timeout (`SITUGRAPH_TIMEOUT_SECS`).

use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use situgraph::backends::{oracle_backend, remote_backend, NGramModel, OracleTable};
use situgraph::downstream::{AugmentConfig, ZeroShotConfig};
use situgraph::graphgen::{ExpansionPolicy, RelationSchedule};
use situgraph::metrics::Criterion;
use situgraph::{GenerationConfig, GeneratorBackend, QueryTemplate};

pub const ENV_BACKEND: &str = "SITUGRAPH_BACKEND";
pub const ENV_TIMEOUT: &str = "SITUGRAPH_TIMEOUT_SECS";

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub backend: BackendSection,
    pub generation: GenerationSection,
    pub graphgen: GraphgenSection,
    pub expansion: ExpansionSection,
    pub consistency: ConsistencySection,
    pub augment: AugmentSection,
    pub zeroshot: ZeroShotSection,
    pub ngram: NgramSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    /// `oracle:<table.json>`, `ngram:<model.json>` or `remote:<url>`.
    pub selector: Option<String>,
    pub timeout_secs: f64,
    pub retries: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub top_p: f64,
    pub max_tokens: usize,
    pub template: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphgenSection {
    /// `default` (each group's own relations), `fwd`, `rev` or a list.
    pub schedule: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionSection {
    pub max_depth: usize,
    pub max_nodes: usize,
    pub schedule: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencySection {
    /// `token_f1` or `exact`.
    pub criterion: String,
    pub threshold: f64,
    pub max_depth: usize,
    pub max_nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub separator: String,
    pub alpha: f64,
    pub beta: f64,
    pub cause_schedule: String,
    pub ending_schedule: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroShotSection {
    pub separator: String,
    pub knowledge_first: bool,
    pub length_normalize: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgramSection {
    pub order: usize,
    pub backoff: f64,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            selector: None,
            timeout_secs: 30.0,
            retries: 2,
        }
    }
}

impl Default for GenerationSection {
    fn default() -> Self {
        let g = GenerationConfig::default();
        GenerationSection {
            top_p: g.top_p,
            max_tokens: g.max_tokens,
            template: QueryTemplate::default().to_string(),
        }
    }
}

impl Default for GraphgenSection {
    fn default() -> Self {
        GraphgenSection {
            schedule: "default".into(),
        }
    }
}

impl Default for ExpansionSection {
    fn default() -> Self {
        ExpansionSection {
            max_depth: 2,
            max_nodes: 32,
            schedule: "fwd".into(),
        }
    }
}

impl Default for ConsistencySection {
    fn default() -> Self {
        ConsistencySection {
            criterion: "token_f1".into(),
            threshold: situgraph::metrics::DEFAULT_F1_THRESHOLD,
            max_depth: 2,
            max_nodes: 32,
        }
    }
}

impl Default for AugmentSection {
    fn default() -> Self {
        let a = AugmentConfig::default();
        AugmentSection {
            separator: a.separator,
            alpha: a.alpha,
            beta: a.beta,
            cause_schedule: "fwd".into(),
            ending_schedule: "rev".into(),
        }
    }
}

impl Default for ZeroShotSection {
    fn default() -> Self {
        let z = ZeroShotConfig::default();
        ZeroShotSection {
            separator: z.separator,
            knowledge_first: z.knowledge_first,
            length_normalize: z.length_normalize,
        }
    }
}

impl Default for NgramSection {
    fn default() -> Self {
        NgramSection {
            order: 3,
            backoff: situgraph::backends::DEFAULT_BACKOFF,
        }
    }
}

pub enum ScheduleSpec {
    FromExamples,
    Fixed(RelationSchedule),
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn apply_env(&mut self) -> anyhow::Result<()> {
        if let Ok(selector) = std::env::var(ENV_BACKEND) {
            self.backend.selector = Some(selector);
        }
        if let Ok(timeout) = std::env::var(ENV_TIMEOUT) {
            self.backend.timeout_secs = timeout
                .parse()
                .with_context(|| format!("{ENV_TIMEOUT}={timeout:?} is not a number of seconds"))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn generation(&self) -> anyhow::Result<GenerationConfig> {
        Ok(GenerationConfig::new(
            self.generation.top_p,
            self.generation.max_tokens,
            self.seed,
        )?)
    }

    pub fn template(&self) -> anyhow::Result<QueryTemplate> {
        Ok(self.generation.template.parse()?)
    }

    pub fn schedule(&self) -> anyhow::Result<ScheduleSpec> {
        Ok(match self.graphgen.schedule.trim() {
            "default" => ScheduleSpec::FromExamples,
            other => ScheduleSpec::Fixed(other.parse()?),
        })
    }

    pub fn expansion_policy(&self) -> anyhow::Result<ExpansionPolicy> {
        let e = &self.expansion;
        Ok(ExpansionPolicy::new(e.max_depth, e.max_nodes, e.schedule.parse()?)?)
    }

    pub fn consistency_policy(&self) -> anyhow::Result<ExpansionPolicy> {
        let c = &self.consistency;
        Ok(ExpansionPolicy::new(
            c.max_depth,
            c.max_nodes,
            RelationSchedule::forward(),
        )?)
    }

    pub fn criterion(&self) -> anyhow::Result<Criterion> {
        match self.consistency.criterion.trim() {
            "exact" => Ok(Criterion::Exact),
            "token_f1" | "token-f1" | "f1" => {
                let threshold = self.consistency.threshold;
                if !(0.0..=1.0).contains(&threshold) {
                    bail!("consistency threshold must lie in [0, 1], got {threshold}");
                }
                Ok(Criterion::TokenF1 { threshold })
            }
            other => bail!("unknown consistency criterion {other:?} (expected exact or token_f1)"),
        }
    }

    pub fn augment(&self) -> anyhow::Result<AugmentConfig> {
        let a = &self.augment;
        Ok(AugmentConfig {
            separator: a.separator.clone(),
            cause_schedule: RelationSchedule::from_str(&a.cause_schedule)?,
            ending_schedule: RelationSchedule::from_str(&a.ending_schedule)?,
            alpha: a.alpha,
            beta: a.beta,
        })
    }

    pub fn zeroshot(&self) -> ZeroShotConfig {
        let z = &self.zeroshot;
        ZeroShotConfig {
            separator: z.separator.clone(),
            knowledge_first: z.knowledge_first,
            length_normalize: z.length_normalize,
        }
    }
}

pub enum BackendSelector<'a> {
    Oracle(&'a Path),
    Ngram(&'a Path),
    Remote(&'a str),
}

impl<'a> BackendSelector<'a> {
    pub fn parse(selector: &'a str) -> anyhow::Result<Self> {
        let Some((kind, rest)) = selector.split_once(':') else {
            bail!("backend selector {selector:?} must look like oracle:<path>, ngram:<path> or remote:<url>");
        };
        if rest.is_empty() {
            bail!("backend selector {selector:?} has an empty target");
        }
        Ok(match kind {
            "oracle" => BackendSelector::Oracle(Path::new(rest)),
            "ngram" => BackendSelector::Ngram(Path::new(rest)),
            "remote" => BackendSelector::Remote(rest),
            other => bail!("unknown backend kind {other:?}"),
        })
    }

    /// The file backing a local backend, for hashing into the run manifest.
    pub fn input_file(&self) -> Option<&'a Path> {
        match *self {
            BackendSelector::Oracle(p) | BackendSelector::Ngram(p) => Some(p),
            BackendSelector::Remote(_) => None,
        }
    }
}

pub fn open_backend(config: &RunConfig) -> anyhow::Result<Box<dyn GeneratorBackend>> {
    let selector = config
        .backend
        .selector
        .as_deref()
        .context("this command needs a backend (--backend or SITUGRAPH_BACKEND)")?;
    Ok(match BackendSelector::parse(selector)? {
        BackendSelector::Oracle(path) => Box::new(oracle_backend(&OracleTable::load(path)?)),
        BackendSelector::Ngram(path) => Box::new(NGramModel::load(path)?),
        BackendSelector::Remote(url) => {
            let timeout = Duration::try_from_secs_f64(config.backend.timeout_secs)
                .with_context(|| format!("bad timeout {}", config.backend.timeout_secs))?;
            Box::new(remote_backend(url, timeout, config.backend.retries)?)
        }
    })
}
