//! Multi-event plans: temporal window assignment and anchor resolution.
//!
//! An [`EventPlan`] lists the ordered events of a prompt together with a
//! latent-frame budget. [`assign_windows`] splits that budget into one
//! contiguous half-open span per event by largest-remainder rounding of
//! the duration weights, and [`resolve_anchor_indices`] maps each event's
//! anchor phrases to positions in the text-token sequence.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One temporally ordered event of a multi-event prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventSpec {
    /// 0-based position of the event in the plan.
    pub event_id: usize,
    /// Event description text.
    pub text: String,
    /// Short phrases that distinguish this event from the others.
    pub anchor_phrases: Vec<String>,
    /// Positive relative duration weight.
    pub weight: f64,
}

/// The user's ordered events plus the latent-frame budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventPlan {
    pub events: Vec<EventSpec>,
    /// Latent frame count the spans must partition.
    pub latent_frames: usize,
    /// Video tokens per latent frame (spatial token count at toy scale).
    pub tokens_per_frame: usize,
    /// Optional full prompt text; defaults to the event texts joined in order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl EventPlan {
    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    /// The prompt the plan describes: the explicit `prompt` field when
    /// present, otherwise the event texts joined with ", then ".
    pub fn prompt_text(&self) -> String {
        match &self.prompt {
            Some(p) => p.clone(),
            None => {
                let texts: Vec<&str> = self.events.iter().map(|e| e.text.as_str()).collect();
                texts.join(", then ")
            }
        }
    }
}

/// One event's half-open latent-frame interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub event_id: usize,
    /// Inclusive start frame.
    pub start: usize,
    /// Exclusive end frame.
    pub end: usize,
}

impl Span {
    pub fn width(&self) -> usize {
        self.end - self.start
    }
}

/// Gapless, exhaustive assignment of latent frames to events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanAssignment {
    pub spans: Vec<Span>,
}

impl SpanAssignment {
    pub fn widths(&self) -> Vec<usize> {
        self.spans.iter().map(Span::width).collect()
    }

    /// Render as `[0,5),[5,10)`.
    pub fn display_compact(&self) -> String {
        let parts: Vec<String> = self
            .spans
            .iter()
            .map(|s| format!("[{},{})", s.start, s.end))
            .collect();
        parts.join(",")
    }
}

/// Sorted token-position sets per event, resolved from anchor phrases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorIndexSet {
    /// `per_event[event_id]` holds that event's token positions.
    pub per_event: Vec<BTreeSet<usize>>,
}

impl AnchorIndexSet {
    pub fn event_count(&self) -> usize {
        self.per_event.len()
    }

    /// Largest token position referenced by any event, if any.
    pub fn max_index(&self) -> Option<usize> {
        self.per_event
            .iter()
            .filter_map(|s| s.iter().next_back().copied())
            .max()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("plan has no events")]
    NoEvents,
    #[error("event {event_id} has nonpositive weight {weight}")]
    NonPositiveWeight { event_id: usize, weight: String },
    #[error("latent frame budget must be at least 1")]
    ZeroLatentFrames,
    #[error("event {event_id}: anchor phrase {phrase:?} matched no tokens")]
    UnresolvedPhrase { event_id: usize, phrase: String },
    #[error("event {event_id} has no anchor phrases")]
    MissingAnchors { event_id: usize },
}

/// Non-fatal findings the caller may surface or log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanWarning {
    /// `latent_frames < event count`, so some spans have zero width.
    ZeroWidthSpans { event_ids: Vec<usize> },
    /// A token position serves anchor phrases of more than one event.
    OverlappingAnchors { token_position: usize, event_ids: Vec<usize> },
}

impl std::fmt::Display for PlanWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlanWarning::ZeroWidthSpans { event_ids } => {
                write!(f, "some spans have zero width (events {event_ids:?})")
            }
            PlanWarning::OverlappingAnchors {
                token_position,
                event_ids,
            } => write!(
                f,
                "token position {token_position} is shared by events {event_ids:?}"
            ),
        }
    }
}

/// Validation outcome; the plan is usable iff `violations` is empty.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PlanReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl PlanReport {
    pub fn is_usable(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Resolution output: index sets plus overlap warnings.
#[derive(Debug, Clone)]
pub struct ResolvedAnchors {
    pub indices: AnchorIndexSet,
    pub warnings: Vec<PlanWarning>,
}

/// Split `latent_frames` into per-event widths proportional to `weights`
/// by largest-remainder rounding, then lay the widths out as contiguous
/// half-open spans in event order.
///
/// When fractional parts tie, the extra frame goes to the earliest event.
pub fn assign_windows(weights: &[f64], latent_frames: usize) -> Result<SpanAssignment, PlanError> {
    if weights.is_empty() {
        return Err(PlanError::NoEvents);
    }
    if latent_frames == 0 {
        return Err(PlanError::ZeroLatentFrames);
    }
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 || !w.is_finite() {
            return Err(PlanError::NonPositiveWeight {
                event_id: i,
                weight: format!("{w}"),
            });
        }
    }

    let total: f64 = weights.iter().sum();
    let f = latent_frames as f64;
    let mut widths = Vec::with_capacity(weights.len());
    let mut fracs = Vec::with_capacity(weights.len());
    let mut assigned = 0usize;
    for &w in weights {
        let target = f * w / total;
        let floor = target.floor();
        widths.push(floor as usize);
        fracs.push(target - floor);
        assigned += floor as usize;
    }

    // Hand out the truncation remainder to the largest fractional parts,
    // earliest event first on ties. Ties are detected with a tolerance:
    // fractional parts that are equal in exact arithmetic (common with
    // integer weights, e.g. 1/3 vs 7/3) can differ by an ulp after the
    // float division, and without the band the extra frame would land on
    // whichever event the rounding noise happened to favor.
    const FRAC_TIE_EPS: f64 = 1e-9;
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let diff = fracs[a] - fracs[b];
        if diff > FRAC_TIE_EPS {
            std::cmp::Ordering::Less
        } else if diff < -FRAC_TIE_EPS {
            std::cmp::Ordering::Greater
        } else {
            a.cmp(&b)
        }
    });
    let remainder = latent_frames - assigned.min(latent_frames);
    for &i in order.iter().take(remainder) {
        widths[i] += 1;
    }

    let mut spans = Vec::with_capacity(widths.len());
    let mut cursor = 0usize;
    for (event_id, &w) in widths.iter().enumerate() {
        spans.push(Span {
            event_id,
            start: cursor,
            end: cursor + w,
        });
        cursor += w;
    }
    debug_assert_eq!(cursor, latent_frames);
    Ok(SpanAssignment { spans })
}

/// Map a span to the contiguous query-row range it covers:
/// `[start * tokens_per_frame, end * tokens_per_frame)`.
pub fn span_row_indices(span: &Span, tokens_per_frame: usize) -> std::ops::Range<usize> {
    span.start * tokens_per_frame..span.end * tokens_per_frame
}

/// Resolve each event's anchor phrases to token positions.
///
/// `tokenization` lists `(token text, token position)` pairs in reading
/// order. Matching operates on the detokenized character spans: tokens
/// are joined with single spaces, except that a token starting with
/// `"##"` continues the previous token. Every token whose character
/// range intersects an occurrence of a phrase is picked up, so subword
/// splits resolve to all of their pieces.
pub fn resolve_anchor_indices(
    plan: &EventPlan,
    tokenization: &[(String, usize)],
) -> Result<ResolvedAnchors, PlanError> {
    let mut text = String::new();
    let mut ranges: Vec<(usize, usize, usize)> = Vec::with_capacity(tokenization.len());
    for (token, position) in tokenization {
        let piece = token.strip_prefix("##").unwrap_or(token.as_str());
        if !text.is_empty() && !token.starts_with("##") {
            text.push(' ');
        }
        let start = text.len();
        text.push_str(piece);
        ranges.push((start, text.len(), *position));
    }

    let mut per_event: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); plan.events.len()];
    for event in &plan.events {
        if event.anchor_phrases.is_empty() {
            return Err(PlanError::MissingAnchors {
                event_id: event.event_id,
            });
        }
        for phrase in &event.anchor_phrases {
            let phrase = phrase.trim();
            let mut matched = false;
            let mut search_from = 0usize;
            while let Some(found) = text[search_from..].find(phrase) {
                let occ_start = search_from + found;
                let occ_end = occ_start + phrase.len();
                for &(t_start, t_end, position) in &ranges {
                    if t_start < occ_end && occ_start < t_end {
                        per_event[event.event_id].insert(position);
                        matched = true;
                    }
                }
                search_from = occ_end;
            }
            if !matched {
                return Err(PlanError::UnresolvedPhrase {
                    event_id: event.event_id,
                    phrase: phrase.to_string(),
                });
            }
        }
    }

    let mut warnings = Vec::new();
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    for set in &per_event {
        seen.extend(set.iter().copied());
    }
    for position in seen {
        let owners: Vec<usize> = per_event
            .iter()
            .enumerate()
            .filter(|(_, s)| s.contains(&position))
            .map(|(e, _)| e)
            .collect();
        if owners.len() > 1 {
            warnings.push(PlanWarning::OverlappingAnchors {
                token_position: position,
                event_ids: owners,
            });
        }
    }

    Ok(ResolvedAnchors {
        indices: AnchorIndexSet { per_event },
        warnings,
    })
}

/// Check plan invariants, collecting violations and warnings instead of
/// failing on the first problem.
pub fn validate_plan(plan: &EventPlan) -> PlanReport {
    let mut report = PlanReport::default();
    if plan.events.len() < 2 {
        report
            .violations
            .push(format!("plan needs at least 2 events, has {}", plan.events.len()));
    }
    if plan.latent_frames == 0 {
        report.violations.push("latent_frames must be at least 1".into());
    }
    if plan.tokens_per_frame == 0 {
        report.violations.push("tokens_per_frame must be at least 1".into());
    }
    for event in &plan.events {
        if event.weight <= 0.0 || !event.weight.is_finite() {
            report
                .violations
                .push(format!("event {}: nonpositive weight {}", event.event_id, event.weight));
        }
        if event.anchor_phrases.is_empty() {
            report
                .violations
                .push(format!("event {}: no anchor phrases", event.event_id));
        }
        for phrase in &event.anchor_phrases {
            if phrase.trim().is_empty() {
                report
                    .violations
                    .push(format!("event {}: empty anchor phrase", event.event_id));
            }
        }
    }
    for (i, event) in plan.events.iter().enumerate() {
        if event.event_id != i {
            report
                .violations
                .push(format!("event at position {i} carries event_id {}", event.event_id));
        }
    }

    if report.violations.is_empty() && plan.latent_frames < plan.events.len() {
        let weights: Vec<f64> = plan.events.iter().map(|e| e.weight).collect();
        if let Ok(assignment) = assign_windows(&weights, plan.latent_frames) {
            let zero: Vec<usize> = assignment
                .spans
                .iter()
                .filter(|s| s.width() == 0)
                .map(|s| s.event_id)
                .collect();
            if !zero.is_empty() {
                report
                    .warnings
                    .push(PlanWarning::ZeroWidthSpans { event_ids: zero }.to_string());
            }
        }
    }
    report
}

/// JSON document shape for plans:
/// `{"latent_frames": n, "tokens_per_frame": n, "events": [{"text", "anchors", "weight"}]}`.
/// Weights are optional; leaving them out means an equal split.
#[derive(Debug, Deserialize)]
struct PlanDocument {
    latent_frames: usize,
    tokens_per_frame: usize,
    events: Vec<EventDocument>,
    #[serde(default)]
    prompt: Option<String>,
}

#[derive(Debug, Deserialize)]
struct EventDocument {
    text: String,
    #[serde(default)]
    anchors: Vec<String>,
    #[serde(default)]
    weight: Option<f64>,
}

#[derive(Debug, Error)]
pub enum PlanLoadError {
    #[error("failed to parse plan JSON: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Parse an [`EventPlan`] from its JSON document form.
pub fn plan_from_json(json: &str) -> Result<EventPlan, PlanLoadError> {
    let doc: PlanDocument = serde_json::from_str(json)?;
    let events = doc
        .events
        .into_iter()
        .enumerate()
        .map(|(event_id, e)| EventSpec {
            event_id,
            text: e.text,
            anchor_phrases: e.anchors,
            weight: e.weight.unwrap_or(1.0),
        })
        .collect();
    Ok(EventPlan {
        events,
        latent_frames: doc.latent_frames,
        tokens_per_frame: doc.tokens_per_frame,
        prompt: doc.prompt,
    })
}
