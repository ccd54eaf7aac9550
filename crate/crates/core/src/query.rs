use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EffectType, Relation};
use crate::text::collapse_whitespace;

/// Marks the end of the context inside a rendered query.
pub const CONTEXT_MARKER: &str = "</ctx>";
/// Marks the end of the question; generation starts right after it.
pub const QUERY_MARKER: &str = "</q>";

/// Surface form used to render a query tuple into a prompt.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryTemplate {
    /// `<context> </ctx> what does <situation> <verb> <effect> ? </q>`
    #[default]
    Question,
    /// Bare concatenation: `<context> <situation> <relation> <effect> </q>`
    Concat,
}

impl FromStr for QueryTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "question" | "default" => Ok(QueryTemplate::Question),
            "concat" => Ok(QueryTemplate::Concat),
            other => Err(Error::invalid(format!("unknown query template {other:?}"))),
        }
    }
}

impl fmt::Display for QueryTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryTemplate::Question => "question",
            QueryTemplate::Concat => "concat",
        })
    }
}

/// A (context, situation, relation, effect) tuple and its rendered prompt.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StQuery {
    pub context: String,
    pub situation: String,
    pub relation: Relation,
    pub effect: EffectType,
    pub surface: String,
}

pub fn build_query(
    context: &str,
    situation: &str,
    relation: Relation,
    effect: EffectType,
    template: QueryTemplate,
) -> Result<StQuery> {
    let context = collapse_whitespace(context);
    let situation = collapse_whitespace(situation);
    if context.is_empty() {
        return Err(Error::invalid("query context is empty"));
    }
    if situation.is_empty() {
        return Err(Error::invalid("query situation is empty"));
    }
    let surface = match template {
        QueryTemplate::Question => format!(
            "{context} {CONTEXT_MARKER} what does {situation} {} {} ? {QUERY_MARKER}",
            relation.verb(),
            effect.name()
        ),
        QueryTemplate::Concat => format!(
            "{context} {situation} {} {} {QUERY_MARKER}",
            relation.name(),
            effect.name()
        ),
    };
    Ok(StQuery {
        context,
        situation,
        relation,
        effect,
        surface,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const WIQA: &str = "Wind creates waves. Waves wash on beaches.";

    #[test]
    fn question_surface() {
        let q = build_query(
            WIQA,
            "there is a storm",
            Relation::Helps,
            EffectType::Imminent,
            QueryTemplate::Question,
        )
        .unwrap();
        assert!(q.surface.contains("what does there is a storm help imminent ?"));
        assert!(q.surface.starts_with(WIQA));
        assert!(q.surface.ends_with(QUERY_MARKER));
        let again = build_query(
            WIQA,
            "there is a storm",
            Relation::Helps,
            EffectType::Imminent,
            QueryTemplate::Question,
        )
        .unwrap();
        assert_eq!(q, again);
    }

    #[test]
    fn reversed_relations_render_spaced() {
        let q = build_query(
            WIQA,
            "bigger waves",
            Relation::HelpedBy,
            EffectType::Imminent,
            QueryTemplate::Question,
        )
        .unwrap();
        assert!(q.surface.contains("bigger waves helped by imminent"));
        let q = build_query(
            WIQA,
            "bigger waves",
            Relation::HurtBy,
            EffectType::Eventual,
            QueryTemplate::Concat,
        )
        .unwrap();
        assert!(q.surface.contains("bigger waves hurt_by eventual"));
    }

    #[test]
    fn empty_parts_rejected() {
        assert!(build_query(" ", "x", Relation::Helps, EffectType::Imminent, QueryTemplate::Question).is_err());
        assert!(build_query(
            "ctx",
            "",
            Relation::Helps,
            EffectType::Imminent,
            QueryTemplate::Question
        )
        .is_err());
    }
}
