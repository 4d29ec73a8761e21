//! Prompt rendering, response parsing and completion backends.
//!
//! Three prompt families drive the pipeline (dependency analysis, method
//! generation, repair), plus the prompts of the direct-generation
//! baselines. Renderers are pure: the same inputs give the same bytes.

mod backend;
mod parse;
mod templates;

pub use backend::{
    backend_from_config, complete, BackendConfig, BackendError, BackendTarget, ChatMessage,
    ChatRequest, CompletionBackend, HttpBackend, MockBackend, MockEntry, RecordingBackend,
};
pub use parse::{
    extract_class_methods, extract_method_code, extract_reflection, parse_dep_response,
    DepAnalysisResult, DepParseError, ExtractError,
};
pub use templates::{
    render_compositional_prompt, render_dep_prompt, render_generation_prompt,
    render_holistic_prompt, render_incremental_prompt, render_repair_prompt, RepairFeedback,
    CONSTRUCTOR_NOTE, HELPER_GUIDANCE, REFLECTION_STEPS, TEMPLATE_VERSION,
};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Deps,
    Generate,
    Repair,
    Holistic,
}

impl PromptKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PromptKind::Deps => "deps",
            PromptKind::Generate => "generate",
            PromptKind::Repair => "repair",
            PromptKind::Holistic => "holistic",
        }
    }
}

/// Identifies one request; also the lookup key of mock scripts
/// (`task_id/method/kind/round`, method `*` for class-wide prompts).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptKey {
    pub task_id: String,
    pub method: String,
    pub kind: PromptKind,
    pub round: u32,
}

impl PromptKey {
    pub const CLASS_WIDE: &'static str = "*";

    pub fn new(task_id: &str, method: &str, kind: PromptKind, round: u32) -> Self {
        Self {
            task_id: task_id.to_string(),
            method: method.to_string(),
            kind,
            round,
        }
    }
}

impl fmt::Display for PromptKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.task_id,
            self.method,
            self.kind.as_str(),
            self.round
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseContract {
    DependencyJson,
    SingleMethodCode,
    ReflectionThenCode,
    ClassCode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub key: PromptKey,
    pub role_preamble: String,
    pub body: String,
    pub response_contract: ResponseContract,
}

impl PromptBundle {
    /// Full prompt text as seen by the model.
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.role_preamble, self.body)
    }

    /// Hex SHA-256 of the prompt text, recorded in traces.
    pub fn digest(&self) -> String {
        sha256_hex(&self.text())
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
