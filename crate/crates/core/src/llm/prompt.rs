//! Prompt templates and the answer grammar.
//!
//! Pair prompts ask whether two papers share a category; the expected answer is
//! `True, <category>` or `False`. The category-free variant expects a bare
//! `True`/`False`. Single-node prompts ask for a category name.

use serde::{Deserialize, Serialize};

use super::GatewayError;
use crate::graph::{Edge, NodeRecord, TextGraph};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptTemplate {
    /// Lists the categories and asks for the shared one on `True`.
    #[default]
    WithCategory,
    /// No category clause; bare `True`/`False` answers.
    WithoutCategory,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPrompt {
    pub edge: Edge,
    /// Node rendered as "the first paper".
    pub first: usize,
    pub second: usize,
    pub prompt_text: String,
    pub categories: Vec<String>,
    pub template: PromptTemplate,
}

fn paper_slot(node: &NodeRecord) -> String {
    format!("{}, {}", node.title, node.abstract_text)
}

/// Pair prompt with node `i` as the first paper and `j` as the second.
pub fn build_pair_prompt(g: &TextGraph, i: usize, j: usize) -> Result<PairPrompt, GatewayError> {
    build_pair_prompt_with(g, i, j, PromptTemplate::WithCategory)
}

pub fn build_pair_prompt_with(
    g: &TextGraph,
    i: usize,
    j: usize,
    template: PromptTemplate,
) -> Result<PairPrompt, GatewayError> {
    let edge = Edge::new(i, j).ok_or(GatewayError::SelfPair(i))?;
    let first = g.node(i)?;
    let second = g.node(j)?;
    let papers = format!(
        "The first paper: {}. The second paper: {}.",
        paper_slot(first),
        paper_slot(second)
    );
    let prompt_text = match template {
        PromptTemplate::WithCategory => format!(
            "Based on the title and abstract of the two paper nodes. Do they belong to the same category among {}? \
             If the answer is \"True\", answer \"True\" and the category, otherwise answer \"False\". {papers}",
            g.category_names().join(", ")
        ),
        PromptTemplate::WithoutCategory => format!(
            "Based on the title and abstract of the two paper nodes. Do they belong to the same category? \
             Answer \"True\" or \"False\". {papers}"
        ),
    };
    Ok(PairPrompt {
        edge,
        first: i,
        second: j,
        prompt_text,
        categories: g.category_names().to_vec(),
        template,
    })
}

/// Single-paper category question used by the structure-free LLM baseline.
pub fn build_node_prompt(g: &TextGraph, i: usize) -> Result<String, GatewayError> {
    let node = g.node(i)?;
    Ok(format!(
        "Based on the title and abstract of the paper node. Which category does it belong to among {}? \
         Answer with the category. The paper: {}.",
        g.category_names().join(", "),
        paper_slot(node)
    ))
}

/// The answer a perfectly tuned model would give for a labeled pair.
pub fn answer_text(same_category: Option<&str>, template: PromptTemplate) -> String {
    match (same_category, template) {
        (Some(cat), PromptTemplate::WithCategory) => format!("True, {cat}"),
        (Some(_), PromptTemplate::WithoutCategory) => "True".into(),
        (None, _) => "False".into(),
    }
}

/// Consistency decision parsed from a free-text answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub same_category: bool,
    pub category: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("response contains neither \"true\" nor \"false\": {0:?}")]
pub struct ParseFailure(pub String);

/// Case-insensitive scan: the first `true`/`false` word decides; after a `true`,
/// the earliest category mention (longest name on ties) becomes the category.
pub fn parse_verdict(raw: &str, categories: &[String]) -> Result<Verdict, ParseFailure> {
    let lower = raw.to_lowercase();
    let mut word_start = None;
    let ends = lower.char_indices().chain(std::iter::once((lower.len(), ' ')));
    for (pos, ch) in ends {
        if ch.is_alphanumeric() {
            word_start.get_or_insert(pos);
            continue;
        }
        let Some(start) = word_start.take() else { continue };
        match &lower[start..pos] {
            "false" => {
                return Ok(Verdict {
                    same_category: false,
                    category: None,
                })
            }
            "true" => {
                return Ok(Verdict {
                    same_category: true,
                    category: find_category(&lower[pos..], categories),
                })
            }
            _ => {}
        }
    }
    Err(ParseFailure(raw.to_string()))
}

/// Earliest category mention in `text`, longest name winning at a shared start.
pub fn find_category(text: &str, categories: &[String]) -> Option<usize> {
    let lower = text.to_lowercase();
    let names: Vec<String> = categories.iter().map(|c| c.to_lowercase()).collect();
    for (pos, _) in lower.char_indices() {
        let hay = &lower[pos..];
        let best = names
            .iter()
            .enumerate()
            .filter(|(_, name)| !name.is_empty() && hay.starts_with(name.as_str()))
            .max_by_key(|(idx, name)| (name.len(), std::cmp::Reverse(*idx)));
        if let Some((idx, _)) = best {
            return Some(idx);
        }
    }
    None
}

/// Strict check of the training answer grammar: exactly `False` or `True, <category>`.
pub fn parse_answer_grammar(output: &str, categories: &[String]) -> Option<Option<usize>> {
    if output == "False" {
        return Some(None);
    }
    let cat = output.strip_prefix("True, ")?;
    categories.iter().position(|c| c == cat).map(Some)
}
