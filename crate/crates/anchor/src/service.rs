//! Anchor-phrase extraction: ask a chat model which words of the prompt
//! pin down each event, then hold the answer to the verbatim-substring
//! rule and map phrases back onto events.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use eventsteer_core::event_model::{plan_from_json, EventPlan};

use crate::transport::{ChatMessage, ChatRequest, ChatTransport, TransportError};

/// The extraction instruction sent as the system message. The wording is
/// deliberately strict about output shape (one comma-separated line) and
/// the substring rule, because both are machine-checked on the way back.
pub const EXTRACTION_INSTRUCTION: &str = "\
You are an assistant that analyzes a single text prompt describing a video with multiple temporally ordered events.
Your goal is to identify, for each event, a set of anchor phrases that clearly distinguish this event from the others. Anchors should be short noun phrases or verb phrases taken directly from the prompt, such as setting descriptors like \"sunny desert\" or \"icy cave\" or concise action phrases like \"walking forward\" or \"reading a book\".
Requirements:
1. Do NOT invent new events. Only use events that are explicitly described in the input prompt.
2. Every anchor phrase must be a substring of the original prompt.
3. Omit the shared subject and transitional words. Keep the full remaining verb phrase that describes what is happening in that specific event.
Input format: I will give you one prompt that may contain multiple events in temporal order.
Output format: List all anchor phrases you extract for this prompt on a single line, separated by commas, with no additional explanations.
Now analyze the following prompt and return the anchors in the exact format above.";

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("endpoint returned an empty anchor line")]
    EmptyResponse,
    #[error("expected a single comma-separated line, got {lines} lines")]
    MultiLine { lines: usize },
    #[error("phrase {phrase:?} is not a verbatim substring of the prompt")]
    NotASubstring { phrase: String },
    #[error("event {event_id} has no anchor phrases")]
    MissingAnchors { event_id: usize },
    #[error("event {event_id}'s text does not occur in the prompt, so phrases cannot be segmented")]
    EventTextNotInPrompt { event_id: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// What to extract and where from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorRequest {
    pub prompt: String,
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token; `None`
    /// sends the request unauthenticated.
    #[serde(default)]
    pub token_var: Option<String>,
    /// Retry a failed call once before giving up.
    #[serde(default = "default_retry")]
    pub retry: bool,
    /// Append a JSON line per attempt here when set.
    #[serde(default)]
    pub audit_log: Option<PathBuf>,
}

fn default_retry() -> bool {
    true
}

impl AnchorRequest {
    pub fn new(
        prompt: impl Into<String>,
        endpoint: impl Into<String>,
        model: impl Into<String>,
    ) -> Result<Self, AnchorError> {
        let prompt = prompt.into();
        if prompt.trim().is_empty() {
            return Err(AnchorError::EmptyPrompt);
        }
        Ok(AnchorRequest {
            prompt,
            endpoint: endpoint.into(),
            model: model.into(),
            token_var: None,
            retry: true,
            audit_log: None,
        })
    }
}

/// A validated anchor line: the ordered phrases plus the raw body they
/// were parsed from (kept for auditing).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorResponse {
    pub phrases: Vec<String>,
    pub raw: String,
}

impl AnchorResponse {
    /// Parse one comma-separated line and enforce the substring rule.
    pub fn parse(raw: &str, prompt: &str) -> Result<Self, AnchorError> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(AnchorError::EmptyResponse);
        }
        let lines = trimmed.lines().count();
        if lines > 1 {
            return Err(AnchorError::MultiLine { lines });
        }
        let phrases: Vec<String> = trimmed
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::to_owned)
            .collect();
        if phrases.is_empty() {
            return Err(AnchorError::EmptyResponse);
        }
        for phrase in &phrases {
            if !prompt.contains(phrase.as_str()) {
                return Err(AnchorError::NotASubstring {
                    phrase: phrase.clone(),
                });
            }
        }
        Ok(AnchorResponse {
            phrases,
            raw: raw.to_owned(),
        })
    }

    /// The canonical one-line form; `parse(to_line(r), prompt)` gives the
    /// same phrase list back.
    pub fn to_line(&self) -> String {
        self.phrases.join(", ")
    }
}

/// Send the extraction instruction plus the prompt, with a single retry
/// when enabled, and validate whatever comes back.
pub fn extract_anchors(
    req: &AnchorRequest,
    transport: &dyn ChatTransport,
) -> Result<AnchorResponse, AnchorError> {
    if req.prompt.trim().is_empty() {
        return Err(AnchorError::EmptyPrompt);
    }
    let chat = ChatRequest {
        model: req.model.clone(),
        messages: vec![
            ChatMessage::system(EXTRACTION_INSTRUCTION),
            ChatMessage::user(req.prompt.clone()),
        ],
        temperature: 0.0,
    };

    let mut outcome = transport.complete(&chat);
    if outcome.is_err() && req.retry {
        outcome = transport.complete(&chat);
    }
    if let Some(path) = &req.audit_log {
        audit_append(path, req, &outcome)?;
    }
    let raw = outcome?;
    AnchorResponse::parse(&raw, &req.prompt)
}

/// Group a flat phrase list by event: the prompt is segmented at the
/// first occurrence of each event's text, and a phrase belongs to the
/// segment containing its own first occurrence (anything before the
/// first segment counts as scene-setting for event 0).
pub fn assign_to_events(
    response: &AnchorResponse,
    prompt: &str,
    plan: &EventPlan,
) -> Result<Vec<Vec<String>>, AnchorError> {
    let mut starts = Vec::with_capacity(plan.events.len());
    let mut cursor = 0usize;
    for event in &plan.events {
        let found = prompt[cursor..].find(event.text.as_str()).ok_or(
            AnchorError::EventTextNotInPrompt {
                event_id: event.event_id,
            },
        )?;
        starts.push(cursor + found);
        cursor += found + event.text.len();
    }

    let mut per_event: Vec<Vec<String>> = vec![Vec::new(); plan.events.len()];
    for phrase in &response.phrases {
        let pos = prompt.find(phrase.as_str()).ok_or_else(|| {
            AnchorError::NotASubstring {
                phrase: phrase.clone(),
            }
        })?;
        let event = starts.iter().rposition(|&s| s <= pos).unwrap_or(0);
        per_event[event].push(phrase.clone());
    }
    Ok(per_event)
}

/// Offline provider: per-event phrase lists straight from a plan file,
/// held to the same substring rule as the live path.
#[derive(Debug, Clone)]
pub struct FileAnchors {
    pub per_event: Vec<Vec<String>>,
    /// Duplicate phrases shared between events are legal but worth
    /// flagging — overlapping anchors blur the subspaces downstream.
    pub warnings: Vec<String>,
}

pub fn anchors_from_file(path: &Path) -> Result<FileAnchors, AnchorError> {
    let contents = std::fs::read_to_string(path).map_err(|source| AnchorError::Io {
        path: path.to_owned(),
        source,
    })?;
    let plan = plan_from_json(&contents).map_err(|e| match e {
        eventsteer_core::event_model::PlanLoadError::Parse(source) => AnchorError::Parse {
            path: path.to_owned(),
            source,
        },
    })?;
    anchors_from_plan(&plan)
}

/// The validation half of [`anchors_from_file`], reusable for plans that
/// are already in memory.
pub fn anchors_from_plan(plan: &EventPlan) -> Result<FileAnchors, AnchorError> {
    let prompt = plan.prompt_text();
    let mut per_event = Vec::with_capacity(plan.events.len());
    let mut warnings = Vec::new();
    for event in &plan.events {
        if event.anchor_phrases.is_empty() {
            return Err(AnchorError::MissingAnchors {
                event_id: event.event_id,
            });
        }
        for phrase in &event.anchor_phrases {
            if !prompt.contains(phrase.as_str()) {
                return Err(AnchorError::NotASubstring {
                    phrase: phrase.clone(),
                });
            }
            let shared: Vec<usize> = plan
                .events
                .iter()
                .filter(|other| {
                    other.event_id != event.event_id
                        && other.anchor_phrases.iter().any(|p| p == phrase)
                })
                .map(|other| other.event_id)
                .collect();
            if !shared.is_empty() {
                warnings.push(format!(
                    "phrase {:?} is shared by events {} and {:?}",
                    phrase, event.event_id, shared
                ));
            }
        }
        per_event.push(event.anchor_phrases.clone());
    }
    Ok(FileAnchors {
        per_event,
        warnings,
    })
}

#[derive(Serialize)]
struct AuditLine<'a> {
    time_unix_secs: u64,
    endpoint: &'a str,
    model: &'a str,
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn audit_append(
    path: &Path,
    req: &AnchorRequest,
    outcome: &Result<String, TransportError>,
) -> Result<(), AnchorError> {
    let line = AuditLine {
        time_unix_secs: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        endpoint: &req.endpoint,
        model: &req.model,
        prompt: &req.prompt,
        response: outcome.as_ref().ok().map(String::as_str),
        error: outcome.as_ref().err().map(ToString::to_string),
    };
    let io_err = |source| AnchorError::Io {
        path: path.to_owned(),
        source,
    };
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err)?;
    let mut encoded = serde_json::to_string(&line).expect("audit line serializes");
    encoded.push('\n');
    file.write_all(encoded.as_bytes()).map_err(io_err)?;
    Ok(())
}
