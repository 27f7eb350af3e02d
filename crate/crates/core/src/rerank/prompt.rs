use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::RerankError;
use crate::corpus::CellSentence;

/// Bumped whenever any template's wording changes.
pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Classify,
    Rerank,
    MarkerQuiz,
}

/// A rendered prompt plus the structured reply it admits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub template_id: TemplateId,
    pub version: String,
    pub text: String,
    /// Classify: sorted label list. Rerank: candidates in rank order.
    /// Quiz: the genes to place, in asked order.
    pub allowed_labels: Vec<String>,
    pub response_schema: Value,
}

/// Collapses control whitespace so a value occupies one line.
pub fn sanitize_line(s: &str) -> String {
    s.split(|c: char| c.is_control() || c.is_whitespace()).filter(|t| !t.is_empty()).collect::<Vec<_>>().join(" ")
}

fn render_sentence(sentence: &CellSentence, prefix: &str) -> Result<String, RerankError> {
    if sentence.is_empty() {
        return Err(RerankError::EmptySentence(sentence.cell_id.clone()));
    }
    let genes: Vec<String> = sentence.genes.iter().map(|g| sanitize_line(g)).collect();
    Ok(format!("{prefix}{}", genes.join(" ")))
}

fn label_schema(labels: &[String]) -> Value {
    json!({
        "type": "object",
        "properties": { "cell_type": { "type": "string", "enum": labels } },
        "required": ["cell_type"],
        "additionalProperties": false
    })
}

fn unique(labels: &[String]) -> Result<(), RerankError> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(RerankError::DuplicateLabel(l.clone()));
        }
    }
    Ok(())
}

/// Zero-shot classification against every label of the training set.
pub fn build_classify_prompt(sentence: &CellSentence, labels: &[String], prefix: &str) -> Result<PromptSpec, RerankError> {
    if labels.is_empty() {
        return Err(RerankError::EmptyCandidates);
    }
    let mut labels: Vec<String> = labels.iter().map(|l| sanitize_line(l)).collect();
    unique(&labels)?;
    labels.sort();
    let cell = render_sentence(sentence, prefix)?;
    let mut text = String::from(
        "The following cell sentence lists a cell's genes in descending order of expression.\n\n",
    );
    text.push_str(&cell);
    text.push_str("\n\nWhich cell type is this cell most likely to be? Choose exactly one of:\n");
    for l in &labels {
        text.push_str(&format!("- {l}\n"));
    }
    text.push_str("\nReply with a JSON object {\"cell_type\": <chosen type>}.");
    let response_schema = label_schema(&labels);
    Ok(PromptSpec {
        template_id: TemplateId::Classify,
        version: TEMPLATE_VERSION.into(),
        text,
        allowed_labels: labels,
        response_schema,
    })
}

/// Choice among up to three ranked candidates, defaulting to the first.
pub fn build_rerank_prompt(sentence: &CellSentence, candidates: &[String], prefix: &str) -> Result<PromptSpec, RerankError> {
    if candidates.is_empty() {
        return Err(RerankError::EmptyCandidates);
    }
    if candidates.len() > 3 {
        return Err(RerankError::TooManyCandidates(candidates.len()));
    }
    let candidates: Vec<String> = candidates.iter().map(|l| sanitize_line(l)).collect();
    unique(&candidates)?;
    let cell = render_sentence(sentence, prefix)?;
    let mut text = String::from(
        "The following cell sentence lists a cell's genes in descending order of expression.\n\n",
    );
    text.push_str(&cell);
    text.push_str("\n\nA reference classifier ranked these candidate cell types, most likely first:\n");
    for (i, l) in candidates.iter().enumerate() {
        text.push_str(&format!("{}. {l}\n", i + 1));
    }
    text.push_str(
        "\nSelect the candidate that best fits the cell. If you are uncertain, select candidate 1.\n\
         Reply with a JSON object {\"cell_type\": <chosen candidate>}.",
    );
    let response_schema = label_schema(&candidates);
    Ok(PromptSpec {
        template_id: TemplateId::Rerank,
        version: TEMPLATE_VERSION.into(),
        text,
        allowed_labels: candidates,
        response_schema,
    })
}

/// Numbered marker lists (no type names) and the withheld genes to place.
pub fn build_marker_quiz_prompt(lists: &[Vec<String>], genes: &[String]) -> Result<PromptSpec, RerankError> {
    if lists.is_empty() || genes.is_empty() {
        return Err(RerankError::Quiz("quiz has no questions".into()));
    }
    let mut text = String::from("Each numbered list below holds marker genes of one cell type:\n");
    for (i, l) in lists.iter().enumerate() {
        let l: Vec<String> = l.iter().map(|g| sanitize_line(g)).collect();
        text.push_str(&format!("{}. {}\n", i + 1, l.join(", ")));
    }
    text.push_str("\nFor each gene below, give the number of the list whose cell type it is also a marker of:\n");
    for g in genes {
        text.push_str(&format!("- {}\n", sanitize_line(g)));
    }
    text.push_str("\nReply with a JSON object mapping each gene to a list number.");
    let numbers: Vec<usize> = (1..=lists.len()).collect();
    let props: serde_json::Map<String, Value> =
        genes.iter().map(|g| (g.clone(), json!({ "type": "integer", "enum": numbers }))).collect();
    let response_schema = json!({
        "type": "object",
        "properties": props,
        "required": genes,
        "additionalProperties": false
    });
    Ok(PromptSpec {
        template_id: TemplateId::MarkerQuiz,
        version: TEMPLATE_VERSION.into(),
        text,
        allowed_labels: genes.to_vec(),
        response_schema,
    })
}
