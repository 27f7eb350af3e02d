//! Generative-model pipelines over a chat-completions API: zero-shot
//! classification against a label list, reranking of k-NN candidates, and
//! the marker-matching quiz.

mod client;
mod prompt;
mod quiz;
mod run;

use thiserror::Error;

pub use client::{parse_label_reply, ChatClient, ChatProviderConfig, ChatReply, HttpChatClient, CHAT_KEY_ENV};
pub use prompt::{
    build_classify_prompt, build_marker_quiz_prompt, build_rerank_prompt, sanitize_line, PromptSpec, TemplateId,
    TEMPLATE_VERSION,
};
pub use quiz::{build_marker_quiz, parse_quiz_reply, score_quiz, MarkerQuiz, QuizQuestion, QuizScore};
pub use run::{
    classify_with_llm, run_llm_experiment, select_subset, Choice, LlmCell, LlmExperiment, LlmRecord, LlmRun, PromptMode,
    RunOptions, SubsetManifest,
};

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("sentence for cell {0:?} is empty")]
    EmptySentence(String),
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("no candidate labels")]
    EmptyCandidates,
    #[error("at most 3 candidates allowed, got {0}")]
    TooManyCandidates(usize),
    #[error("chat transport failed after {attempts} attempts: {msg}")]
    Transport { attempts: usize, msg: String },
    #[error("chat endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed chat response: {0}")]
    InvalidResponse(String),
    #[error("{failed} of {total} requests failed; aborting run")]
    TooManyFailures { failed: usize, total: usize },
    #[error("quiz: {0}")]
    Quiz(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}
