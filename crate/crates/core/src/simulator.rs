//! Synthetic multi-head cross-attention with controllable event structure.
//!
//! The simulator stands in for a video backbone at desk scale: text keys
//! form per-event clusters with a configurable pairwise angle, and every
//! video query leans toward event 0 with strength `b` — the failure mode
//! being corrected, where the first action bleeds into later temporal
//! spans. Runs sweep a (step × block) grid, steering the same query
//! tensors cumulatively wherever the schedule gate is open, and report
//! per-span attention masses, margins, and leakage.
//!
//! Everything is driven by one seeded generator: equal seeds, equal
//! bits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_model::{
    assign_windows, AnchorIndexSet, EventPlan, EventSpec, PlanError, SpanAssignment,
};
use crate::linalg::{norm2, Mat};
use crate::scheduler::{ScheduleError, SteeringSchedule};
use crate::steering::{apply_layer, AttentionState, SteerError, SteeringConfig};
use crate::subspace::{dominant_direction, KeySlice};

/// Report format version stamped into every serialized report.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Jitter applied to anchor keys around their event cluster center
/// (as a fraction of the unit center before renormalization).
const KEY_NOISE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(
        "cannot place {events} event clusters {angle}° apart in dimension {dim}; \
         raise head_dim or reduce events/angle"
    )]
    InfeasibleGeometry { events: usize, angle: f64, dim: usize },
    #[error("attention shapes disagree: Q is {q_rows}×{q_cols}, K is {k_rows}×{k_cols}")]
    AttentionShape {
        q_rows: usize,
        q_cols: usize,
        k_rows: usize,
        k_cols: usize,
    },
    #[error("softmax scale must be positive and finite, got {scale}")]
    InvalidScale { scale: f64 },
    #[error("reports are not comparable: {0}")]
    ReportShape(String),
    #[error(transparent)]
    Steer(#[from] SteerError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Subspace(#[from] crate::subspace::SubspaceError),
}

/// Knobs of the synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimScenario {
    pub head_count: usize,
    pub head_dim: usize,
    pub latent_frames: usize,
    pub tokens_per_frame: usize,
    pub anchor_tokens_per_event: usize,
    pub filler_tokens: usize,
    pub event_count: usize,
    /// How strongly every query leans toward event 0, in [0, 1].
    pub bias_strength: f64,
    /// Pairwise angle between event key clusters, degrees in (0, 90].
    pub cross_event_angle: f64,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            head_count: 4,
            head_dim: 32,
            latent_frames: 8,
            tokens_per_frame: 4,
            anchor_tokens_per_event: 3,
            filler_tokens: 4,
            event_count: 3,
            bias_strength: 0.8,
            cross_event_angle: 90.0,
            seed: 0,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let counts = [
            ("head_count", self.head_count),
            ("head_dim", self.head_dim),
            ("latent_frames", self.latent_frames),
            ("tokens_per_frame", self.tokens_per_frame),
            ("anchor_tokens_per_event", self.anchor_tokens_per_event),
            ("filler_tokens", self.filler_tokens),
            ("event_count", self.event_count),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(SimError::InvalidScenario(format!("{name} must be ≥ 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.bias_strength) || !self.bias_strength.is_finite() {
            return Err(SimError::InvalidScenario(format!(
                "bias_strength must lie in [0,1], got {}",
                self.bias_strength
            )));
        }
        if !(self.cross_event_angle > 0.0 && self.cross_event_angle <= 90.0) {
            return Err(SimError::InvalidScenario(format!(
                "cross_event_angle must lie in (0°, 90°], got {}",
                self.cross_event_angle
            )));
        }
        // Exactly-90° clusters need A orthonormal directions; tilted
        // clusters additionally need a shared blend axis.
        let needed = if self.cross_event_angle == 90.0 {
            self.event_count
        } else {
            self.event_count + 1
        };
        if needed > self.head_dim {
            return Err(SimError::InfeasibleGeometry {
                events: self.event_count,
                angle: self.cross_event_angle,
                dim: self.head_dim,
            });
        }
        Ok(())
    }

    pub fn video_tokens(&self) -> usize {
        self.latent_frames * self.tokens_per_frame
    }

    pub fn text_tokens(&self) -> usize {
        self.event_count * self.anchor_tokens_per_event + self.filler_tokens
    }
}

/// A generated scenario: the attention state plus the event bookkeeping
/// needed to steer and measure it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: SimScenario,
    pub state: AttentionState,
    pub plan: EventPlan,
    pub spans: SpanAssignment,
    pub anchors: AnchorIndexSet,
}

fn random_unit(rng: &mut ChaCha20Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm2(&v);
        if n > 1e-6 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Gram-Schmidt a set of `count` orthonormal vectors in `dim` dims.
fn orthonormal_set(rng: &mut ChaCha20Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (slot, c) in v.iter_mut().zip(b) {
                *slot -= proj * c;
            }
        }
        let n = norm2(&v);
        if n > 1e-6 {
            basis.push(v.iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn add_scaled(target: &mut [f64], source: &[f64], scale: f64) {
    for (t, s) in target.iter_mut().zip(source) {
        *t += scale * s;
    }
}

/// Build the deterministic synthetic state.
///
/// Event cluster centers are unit vectors exactly `cross_event_angle`
/// apart pairwise (orthonormal directions, optionally blended toward a
/// shared axis to close the angle below 90°). Anchor keys jitter around
/// their center; filler keys are independent random directions; each
/// query mixes its own noise with the event-0 center at weight `b`.
/// Keys and queries are scaled to norm √D so that the `d^{-1/2}`-scaled
/// logits land around ±√D and softmax produces decisive masses.
pub fn generate_scenario(cfg: &SimScenario) -> Result<Scenario, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let d = cfg.head_dim;
    let a = cfg.event_count;
    let sqrt_d = (d as f64).sqrt();

    // Cluster centers with exact pairwise angle θ: for orthonormal e_i
    // and a shared unit axis c ⊥ all e_i,
    //   u_i = √(1−cosθ)·e_i + √(cosθ)·c
    // gives u_i·u_j = cosθ for i ≠ j and ‖u_i‖ = 1.
    let cos_theta = cfg.cross_event_angle.to_radians().cos().max(0.0);
    let centers: Vec<Vec<f64>> = if cos_theta == 0.0 {
        orthonormal_set(&mut rng, a, d)
    } else {
        let basis = orthonormal_set(&mut rng, a + 1, d);
        let (axis, events) = basis.split_last().expect("a + 1 ≥ 2 vectors");
        events
            .iter()
            .map(|e| {
                let mut u = vec![0.0; d];
                add_scaled(&mut u, e, (1.0 - cos_theta).sqrt());
                add_scaled(&mut u, axis, cos_theta.sqrt());
                u
            })
            .collect()
    };

    // Text keys, head by head: anchors cluster around their event
    // center, fillers are unstructured.
    let text_tokens = cfg.text_tokens();
    let mut keys: Vec<Mat> = Vec::with_capacity(cfg.head_count);
    for _ in 0..cfg.head_count {
        let mut k = Mat::zeros(text_tokens, d);
        let mut row = 0usize;
        for center in &centers {
            for _ in 0..cfg.anchor_tokens_per_event {
                let mut dir = center.clone();
                add_scaled(&mut dir, &random_unit(&mut rng, d), KEY_NOISE);
                let n = norm2(&dir);
                for (j, v) in dir.iter().enumerate() {
                    k.set(row, j, v / n * sqrt_d);
                }
                row += 1;
            }
        }
        for _ in 0..cfg.filler_tokens {
            let dir = random_unit(&mut rng, d);
            for (j, v) in dir.iter().enumerate() {
                k.set(row, j, v * sqrt_d);
            }
            row += 1;
        }
        keys.push(k);
    }

    // Queries: (1−b)·own noise + b·event-0 center, renormalized.
    let video_tokens = cfg.video_tokens();
    let b = cfg.bias_strength;
    let mut queries: Vec<Mat> = Vec::with_capacity(cfg.head_count);
    for _ in 0..cfg.head_count {
        let mut q = Mat::zeros(video_tokens, d);
        for row in 0..video_tokens {
            let mut dir = vec![0.0; d];
            add_scaled(&mut dir, &random_unit(&mut rng, d), 1.0 - b);
            add_scaled(&mut dir, &centers[0], b);
            let n = norm2(&dir);
            for (j, v) in dir.iter().enumerate() {
                q.set(row, j, v / n * sqrt_d);
            }
        }
        queries.push(q);
    }

    let frame_map: Vec<usize> = (0..video_tokens)
        .map(|r| r / cfg.tokens_per_frame)
        .collect();
    let state = AttentionState::new(queries, keys, frame_map)?;

    let events: Vec<EventSpec> = (0..a)
        .map(|event_id| EventSpec {
            event_id,
            text: format!("synthetic event {event_id}"),
            anchor_phrases: (0..cfg.anchor_tokens_per_event)
                .map(|t| format!("evt{event_id}-anchor{t}"))
                .collect(),
            weight: 1.0,
        })
        .collect();
    let plan = EventPlan {
        events,
        latent_frames: cfg.latent_frames,
        tokens_per_frame: cfg.tokens_per_frame,
        prompt: None,
    };
    let weights: Vec<f64> = plan.events.iter().map(|e| e.weight).collect();
    let spans = assign_windows(&weights, cfg.latent_frames)?;
    let anchors = AnchorIndexSet {
        per_event: (0..a)
            .map(|i| {
                let start = i * cfg.anchor_tokens_per_event;
                (start..start + cfg.anchor_tokens_per_event).collect()
            })
            .collect(),
    };

    Ok(Scenario {
        cfg: cfg.clone(),
        state,
        plan,
        spans,
        anchors,
    })
}

/// Row-stochastic attention: softmax over each row of `scale·QKᵀ`.
pub fn attention(q: &Mat, k: &Mat, scale: f64) -> Result<Mat, SimError> {
    if q.cols() != k.cols() {
        return Err(SimError::AttentionShape {
            q_rows: q.rows(),
            q_cols: q.cols(),
            k_rows: k.rows(),
            k_cols: k.cols(),
        });
    }
    if scale <= 0.0 || !scale.is_finite() {
        return Err(SimError::InvalidScale { scale });
    }
    let mut out = Mat::zeros(q.rows(), k.rows());
    for i in 0..q.rows() {
        let qi = q.row(i);
        let mut logits: Vec<f64> = (0..k.rows())
            .map(|j| scale * qi.iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        for (j, l) in logits.iter().enumerate() {
            out.set(i, j, l / total);
        }
    }
    Ok(out)
}

/// Per-span attention masses and margins for one measured state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanReport {
    pub span: usize,
    pub event_id: usize,
    pub start: usize,
    pub end: usize,
    /// Mean post-softmax mass on each event's anchor columns, averaged
    /// over the span's rows and all heads. Indexed by event id.
    pub event_mass: Vec<f64>,
    /// `event_mass[event_id]` — the span's own event.
    pub target_mass: f64,
    /// Mass on non-target events' anchors (bleed from other events).
    pub leakage: f64,
    /// Mass on filler tokens.
    pub filler_mass: f64,
    /// Mean of `s_tgt − s_oth_max` over rows and heads, where the scores
    /// come from dominant key directions.
    pub mean_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub schema_version: u32,
    pub spans: Vec<SpanReport>,
}

/// Measure attention masses and margins of a state, span by span.
/// Zero-width spans produce no report row.
pub fn measure(
    state: &AttentionState,
    spans: &SpanAssignment,
    anchors: &AnchorIndexSet,
) -> Result<AttentionReport, SimError> {
    let event_count = anchors.event_count();
    let head_count = state.head_count();
    let scale = 1.0 / (state.head_dim() as f64).sqrt();

    // Per-head attention and dominant directions, computed once.
    let mut weights: Vec<Mat> = Vec::with_capacity(head_count);
    let mut dirs: Vec<Vec<Option<Vec<f64>>>> = Vec::with_capacity(head_count);
    for h in 0..head_count {
        let w = attention(state.queries(h), state.keys(h), scale)?;
        debug_assert!(
            (0..w.rows()).all(|i| (w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9),
            "attention rows must be stochastic"
        );
        weights.push(w);
        let mut per_event = Vec::with_capacity(event_count);
        for e in 0..event_count {
            if anchors.per_event[e].is_empty() {
                per_event.push(None);
            } else {
                let slice =
                    KeySlice::gather(state.keys(h), anchors.per_event[e].iter().copied(), e)?;
                per_event.push(Some(dominant_direction(&slice)?));
            }
        }
        dirs.push(per_event);
    }

    let mut rows_out = Vec::new();
    for (span_idx, span) in spans.spans.iter().enumerate() {
        if span.width() == 0 {
            continue;
        }
        let rows = state.rows_for_span(span);
        if rows.is_empty() {
            continue;
        }
        let denom = (rows.len() * head_count) as f64;

        let mut event_mass = vec![0.0f64; event_count];
        let mut filler_mass = 0.0f64;
        let mut margin_sum = 0.0f64;
        for h in 0..head_count {
            let w = &weights[h];
            for r in rows.clone() {
                let mut anchored = 0.0;
                for (mass, idx) in event_mass.iter_mut().zip(&anchors.per_event) {
                    let m: f64 = idx.iter().map(|&c| w.get(r, c)).sum();
                    *mass += m;
                    anchored += m;
                }
                filler_mass += 1.0 - anchored;

                let qr = state.queries(h).row(r);
                let score = |dir: &Option<Vec<f64>>| -> f64 {
                    dir.as_ref()
                        .map(|d| qr.iter().zip(d).map(|(a, b)| a * b).sum())
                        .unwrap_or(0.0)
                };
                let s_tgt = score(&dirs[h][span.event_id]);
                // Strongest competing alignment: plain max over the other
                // events that have a measurable direction; with none, a
                // zero-alignment phantom (mirrors the strength solver's
                // no-competitor convention).
                let s_oth_max = (0..event_count)
                    .filter(|&e| e != span.event_id)
                    .filter_map(|e| dirs[h][e].as_ref())
                    .map(|d| qr.iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
                let s_oth_max = if s_oth_max == f64::NEG_INFINITY {
                    0.0
                } else {
                    s_oth_max
                };
                margin_sum += s_tgt - s_oth_max;
            }
        }
        for m in event_mass.iter_mut() {
            *m /= denom;
        }
        let target_mass = event_mass[span.event_id];
        let leakage = event_mass
            .iter()
            .enumerate()
            .filter(|(e, _)| *e != span.event_id)
            .map(|(_, m)| m)
            .sum::<f64>();
        rows_out.push(SpanReport {
            span: span_idx,
            event_id: span.event_id,
            start: span.start,
            end: span.end,
            event_mass,
            target_mass,
            leakage,
            filler_mass: filler_mass / denom,
            mean_margin: margin_sum / denom,
        });
    }
    Ok(AttentionReport {
        schema_version: REPORT_SCHEMA_VERSION,
        spans: rows_out,
    })
}

/// One simulated run's report plus instrumentation that stays out of the
/// report itself (so on/off reports stay byte-comparable).
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: AttentionReport,
    /// Total steer invocations: one per (active step, block, span, head).
    pub steer_calls: usize,
    pub warnings: Vec<String>,
}

/// Sweep the (step × block) grid, steering cumulatively wherever the
/// gate is open, then measure the final state.
///
/// With `steering_enabled = false` the steering machinery is never
/// invoked, so the result is independent of schedule and solver mode.
pub fn run(
    scenario: &Scenario,
    steering_enabled: bool,
    steering: &SteeringConfig,
    schedule: &SteeringSchedule,
) -> Result<RunOutcome, SimError> {
    let mut state = scenario.state.clone();
    let mut steer_calls = 0usize;
    let mut warnings: Vec<String> = Vec::new();
    if steering_enabled {
        for step in 0..schedule.total_steps() {
            for block in 0..schedule.total_blocks() {
                if !schedule.is_active(step, block)? {
                    continue;
                }
                let outcome =
                    apply_layer(&mut state, &scenario.spans, &scenario.anchors, true, steering)?;
                steer_calls += outcome.steer_calls;
                if warnings.is_empty() {
                    warnings = outcome.warnings.iter().map(|w| w.to_string()).collect();
                }
            }
        }
    }
    let report = measure(&state, &scenario.spans, &scenario.anchors)?;
    Ok(RunOutcome {
        report,
        steer_calls,
        warnings,
    })
}

/// Per-span changes between a steering-off and a steering-on run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanDelta {
    pub span: usize,
    pub event_id: usize,
    pub target_mass_delta: f64,
    pub leakage_delta: f64,
    pub margin_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Spans after the first (the first span's event already dominates
    /// by construction).
    pub non_first_spans: usize,
    /// Non-first spans whose target mass strictly rose AND leakage
    /// strictly fell.
    pub improved_spans: usize,
    pub all_non_first_improved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub schema_version: u32,
    pub spans: Vec<SpanDelta>,
    pub verdict: Verdict,
}

/// Diff two reports from the same scenario shape.
pub fn compare(off: &AttentionReport, on: &AttentionReport) -> Result<DeltaReport, SimError> {
    if off.spans.len() != on.spans.len() {
        return Err(SimError::ReportShape(format!(
            "span counts differ: {} vs {}",
            off.spans.len(),
            on.spans.len()
        )));
    }
    let mut spans = Vec::with_capacity(off.spans.len());
    let mut non_first = 0usize;
    let mut improved = 0usize;
    for (a, b) in off.spans.iter().zip(&on.spans) {
        if (a.span, a.event_id, a.start, a.end, a.event_mass.len())
            != (b.span, b.event_id, b.start, b.end, b.event_mass.len())
        {
            return Err(SimError::ReportShape(format!(
                "span {} metadata differs between reports",
                a.span
            )));
        }
        let delta = SpanDelta {
            span: a.span,
            event_id: a.event_id,
            target_mass_delta: b.target_mass - a.target_mass,
            leakage_delta: b.leakage - a.leakage,
            margin_delta: b.mean_margin - a.mean_margin,
        };
        if a.span > 0 {
            non_first += 1;
            if delta.target_mass_delta > 0.0 && delta.leakage_delta < 0.0 {
                improved += 1;
            }
        }
        spans.push(delta);
    }
    Ok(DeltaReport {
        schema_version: REPORT_SCHEMA_VERSION,
        spans,
        verdict: Verdict {
            non_first_spans: non_first,
            improved_spans: improved,
            all_non_first_improved: improved == non_first,
        },
    })
}

/// The paired-run CSV summary: one row per span.
pub fn csv_summary(off: &AttentionReport, on: &AttentionReport) -> Result<String, SimError> {
    if off.spans.len() != on.spans.len() {
        return Err(SimError::ReportShape(format!(
            "span counts differ: {} vs {}",
            off.spans.len(),
            on.spans.len()
        )));
    }
    let mut out = String::from(
        "span,event,mass_off,mass_on,margin_off,margin_on,leakage_off,leakage_on\n",
    );
    for (a, b) in off.spans.iter().zip(&on.spans) {
        out.push_str(&format!(
            "{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
            a.span,
            a.event_id,
            a.target_mass,
            b.target_mass,
            a.mean_margin,
            b.mean_margin,
            a.leakage,
            b.leakage
        ));
    }
    Ok(out)
}
