use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::client::strip_fence;
use super::{build_marker_quiz_prompt, PromptSpec, RerankError};
use crate::interpret::MarkerDb;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizQuestion {
    pub cell_type: String,
    /// Top marker, withheld from the lists.
    pub hidden: String,
    /// Markers ranked 2 to 5.
    pub remaining: Vec<String>,
}

/// Questions are in cell-type order. `list_order[j]` is the question whose
/// remaining markers appear as list `j`; `ask_order` is the order in which
/// hidden genes are posed. The key stays local.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerQuiz {
    pub questions: Vec<QuizQuestion>,
    pub list_order: Vec<usize>,
    pub ask_order: Vec<usize>,
    pub excluded: Vec<String>,
}

impl MarkerQuiz {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    /// Correct list index for question `q`.
    pub fn key(&self, q: usize) -> usize {
        self.list_order.iter().position(|&x| x == q).expect("every question has a list")
    }

    pub fn prompt(&self) -> Result<PromptSpec, RerankError> {
        let lists: Vec<Vec<String>> = self.list_order.iter().map(|&q| self.questions[q].remaining.clone()).collect();
        let genes: Vec<String> = self.ask_order.iter().map(|&q| self.questions[q].hidden.clone()).collect();
        build_marker_quiz_prompt(&lists, &genes)
    }
}

/// Top-5 quiz over `cell_types`; types with fewer than 5 markers are left
/// out with a warning.
pub fn build_marker_quiz(db: &MarkerDb, cell_types: &[String], seed_: u64) -> Result<MarkerQuiz, RerankError> {
    let mut questions = Vec::new();
    let mut excluded = Vec::new();
    for t in cell_types {
        match db.markers(t) {
            Some(m) if m.len() >= 5 => questions.push(QuizQuestion {
                cell_type: t.clone(),
                hidden: m[0].to_owned(),
                remaining: m[1..5].iter().map(|g| g.to_string()).collect(),
            }),
            other => {
                log::warn!("cell type {t:?} has {} markers; excluded from quiz", other.map_or(0, |m| m.len()));
                excluded.push(t.clone());
            }
        }
    }
    if questions.len() < 2 {
        return Err(RerankError::Quiz(format!("need at least two eligible cell types, got {}", questions.len())));
    }
    for q in &questions {
        if let Some(o) = questions.iter().find(|o| o.remaining.contains(&q.hidden)) {
            return Err(RerankError::Quiz(format!(
                "hidden marker {} of {:?} also listed for {:?}",
                q.hidden, q.cell_type, o.cell_type
            )));
        }
    }
    let mut list_order: Vec<usize> = (0..questions.len()).collect();
    list_order.shuffle(&mut seed::rng(seed_, "quiz-lists", &[]));
    let mut ask_order: Vec<usize> = (0..questions.len()).collect();
    ask_order.shuffle(&mut seed::rng(seed_, "quiz-genes", &[]));
    Ok(MarkerQuiz { questions, list_order, ask_order, excluded })
}

/// Maps a JSON reply `{gene: list number (1-based)}` to a 0-based list
/// index per question; missing or malformed entries are `None`.
pub fn parse_quiz_reply(content: &str, quiz: &MarkerQuiz) -> Vec<Option<usize>> {
    let v: Option<Value> = serde_json::from_str(strip_fence(content)).ok();
    quiz.questions
        .iter()
        .map(|q| {
            let n = v.as_ref()?.get(&q.hidden)?;
            let n = n.as_u64().or_else(|| n.as_str().and_then(|s| s.trim().parse().ok()))?;
            (n as usize).checked_sub(1)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizScore {
    pub correct: usize,
    pub total: usize,
}

impl fmt::Display for QuizScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.correct, self.total)
    }
}

/// One answer (0-based list index) per question; out-of-range or missing
/// answers count as wrong.
pub fn score_quiz(responses: &[Option<usize>], quiz: &MarkerQuiz) -> Result<QuizScore, RerankError> {
    if responses.len() != quiz.len() {
        return Err(RerankError::Quiz(format!("{} responses for {} questions", responses.len(), quiz.len())));
    }
    let correct = responses.iter().enumerate().filter(|(q, r)| **r == Some(quiz.key(*q))).count();
    Ok(QuizScore { correct, total: quiz.len() })
}
