//! Span-local query steering across one attention layer.
//!
//! [`steer_queries`] applies the per-head query update
//! `Q' = Q* + α·Q*P_tgt − β·Q*P_oth` followed by row-wise
//! renormalization to the pre-steering L2 norms, so steering changes
//! only query *directions*, never their magnitudes. [`apply_layer`]
//! drives the whole edit for one layer: for every event span it gathers
//! the event's anchor keys, builds target/competitor projectors and
//! dominant directions, solves for the strengths, and steers exactly the
//! query rows inside the span. Keys are never modified.

use std::ops::Range;

use thiserror::Error;

use crate::event_model::{Span, SpanAssignment};
use crate::linalg::{norm2, LinalgError, Mat};
use crate::strength_solver::{
    build_instance, solve, SolverError, SolverMode, SteeringStrengths,
};
use crate::subspace::{
    build_projector, dominant_direction, project, DominantDirections, KeySlice, Ridge,
    RidgeProjector, SubspaceError,
};
use crate::event_model::AnchorIndexSet;

/// Steered rows whose post-edit norm falls below this floor are passed
/// through without rescaling (the direction is numerically meaningless).
pub const RENORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SteerError {
    #[error("steering strengths must be nonnegative and finite: alpha={alpha}, beta={beta}")]
    InvalidStrength { alpha: f64, beta: f64 },
    #[error("queries have {q_dim} columns but the projector is {p_dim}×{p_dim}")]
    ProjectorDimension { q_dim: usize, p_dim: usize },
    #[error("attention state needs at least one head")]
    NoHeads,
    #[error("head {head}: expected {expected} {what}, got {got}")]
    InconsistentHead {
        head: usize,
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("frame map must be monotonically nondecreasing (row {row} maps {prev} → {next})")]
    FrameMapNotMonotone { row: usize, prev: usize, next: usize },
    #[error("frame map length {got} does not match query row count {expected}")]
    FrameMapLength { expected: usize, got: usize },
    #[error("anchor sets cover {anchors} events but the span assignment has {spans}")]
    EventCountMismatch { anchors: usize, spans: usize },
    #[error("event {event_id}: anchor index {index} exceeds key rows {available}")]
    AnchorOutOfRange {
        event_id: usize,
        index: usize,
        available: usize,
    },
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Non-fatal findings from a layer application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SteerWarning {
    /// The event has no competitor anchors (single-event degenerate);
    /// suppression was skipped by forcing β = 0.
    NoCompetitors { event_id: usize },
    /// The span maps to no query rows in this state; nothing was steered.
    NoRowsInSpan { event_id: usize },
}

impl std::fmt::Display for SteerWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SteerWarning::NoCompetitors { event_id } => write!(
                f,
                "event {event_id} has no competitor anchors; suppression skipped (beta = 0)"
            ),
            SteerWarning::NoRowsInSpan { event_id } => {
                write!(f, "event {event_id}: span covers no query rows")
            }
        }
    }
}

/// Per-head query/key matrices for one cross-attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionState {
    queries: Vec<Mat>,
    keys: Vec<Mat>,
    head_dim: usize,
    frame_map: Vec<usize>,
}

impl AttentionState {
    /// Validate and assemble a state. Every head must share the same
    /// query count, key count, and head dimension; `frame_map` assigns
    /// each query row its latent frame, in nondecreasing order.
    pub fn new(queries: Vec<Mat>, keys: Vec<Mat>, frame_map: Vec<usize>) -> Result<Self, SteerError> {
        if queries.is_empty() || queries.len() != keys.len() {
            return Err(SteerError::NoHeads);
        }
        let head_dim = queries[0].cols();
        let s = queries[0].rows();
        let l_k = keys[0].rows();
        for (h, q) in queries.iter().enumerate() {
            if q.cols() != head_dim {
                return Err(SteerError::InconsistentHead {
                    head: h,
                    what: "query columns",
                    expected: head_dim,
                    got: q.cols(),
                });
            }
            if q.rows() != s {
                return Err(SteerError::InconsistentHead {
                    head: h,
                    what: "query rows",
                    expected: s,
                    got: q.rows(),
                });
            }
        }
        for (h, k) in keys.iter().enumerate() {
            if k.cols() != head_dim {
                return Err(SteerError::InconsistentHead {
                    head: h,
                    what: "key columns",
                    expected: head_dim,
                    got: k.cols(),
                });
            }
            if k.rows() != l_k {
                return Err(SteerError::InconsistentHead {
                    head: h,
                    what: "key rows",
                    expected: l_k,
                    got: k.rows(),
                });
            }
        }
        if frame_map.len() != s {
            return Err(SteerError::FrameMapLength {
                expected: s,
                got: frame_map.len(),
            });
        }
        for i in 1..frame_map.len() {
            if frame_map[i] < frame_map[i - 1] {
                return Err(SteerError::FrameMapNotMonotone {
                    row: i,
                    prev: frame_map[i - 1],
                    next: frame_map[i],
                });
            }
        }
        Ok(AttentionState {
            queries,
            keys,
            head_dim,
            frame_map,
        })
    }

    pub fn head_count(&self) -> usize {
        self.queries.len()
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn query_rows(&self) -> usize {
        self.queries[0].rows()
    }

    pub fn key_rows(&self) -> usize {
        self.keys[0].rows()
    }

    pub fn queries(&self, head: usize) -> &Mat {
        &self.queries[head]
    }

    pub fn keys(&self, head: usize) -> &Mat {
        &self.keys[head]
    }

    pub fn frame_map(&self) -> &[usize] {
        &self.frame_map
    }

    /// Contiguous query-row range whose frames fall inside the span.
    /// (The frame map is nondecreasing, so the set is an interval.)
    pub fn rows_for_span(&self, span: &Span) -> Range<usize> {
        let lo = self.frame_map.partition_point(|&f| f < span.start);
        let hi = self.frame_map.partition_point(|&f| f < span.end);
        lo..hi
    }
}

/// How apply_layer obtains (α, β) for each span and head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrengthMode {
    /// Solve the margin-deficit program per (span, head).
    Solve(SolverMode),
    /// Use the same fixed strengths everywhere (testing hook; (0, 0)
    /// makes the whole layer application a no-op).
    Fixed { alpha: f64, beta: f64 },
}

impl Default for StrengthMode {
    fn default() -> Self {
        StrengthMode::Solve(SolverMode::ClosedForm)
    }
}

/// Knobs for one layer application.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteeringConfig {
    pub strength_mode: StrengthMode,
    pub ridge: Ridge,
    pub margin_eps: f64,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        SteeringConfig {
            strength_mode: StrengthMode::default(),
            ridge: Ridge::Auto,
            margin_eps: crate::strength_solver::DEFAULT_MARGIN_EPS,
        }
    }
}

/// Record of one (event, head) steering decision.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanHeadSteer {
    pub event_id: usize,
    pub head: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Solver output when strengths were solved (absent in fixed mode).
    pub solver: Option<SteeringStrengths>,
}

/// Summary of one apply_layer call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerApplication {
    /// Number of steer_queries invocations (one per steered span × head).
    pub steer_calls: usize,
    pub decisions: Vec<SpanHeadSteer>,
    pub warnings: Vec<SteerWarning>,
}

/// The core query edit: `Q' = Q* + α·Q*P_tgt − β·Q*P_oth`, each row then
/// rescaled to its pre-steering L2 norm. `α = β = 0` returns the input
/// bit-for-bit.
pub fn steer_queries(
    q_star: &Mat,
    p_tgt: &RidgeProjector,
    p_oth: &RidgeProjector,
    alpha: f64,
    beta: f64,
) -> Result<Mat, SteerError> {
    check_strengths(alpha, beta)?;
    if alpha == 0.0 && beta == 0.0 {
        return Ok(q_star.clone());
    }
    let pre_norms: Vec<f64> = (0..q_star.rows()).map(|i| norm2(q_star.row(i))).collect();
    let mut out = steer_queries_raw(q_star, p_tgt, p_oth, alpha, beta)?;
    for (i, &pre) in pre_norms.iter().enumerate() {
        let post = norm2(out.row(i));
        if pre == 0.0 || post < RENORM_FLOOR {
            continue;
        }
        let scale = pre / post;
        for v in out.row_mut(i) {
            *v *= scale;
        }
    }
    Ok(out)
}

/// The update of [`steer_queries`] *without* renormalization. Exposed so
/// tests can check the linearized margin algebra on the raw edit.
pub fn steer_queries_raw(
    q_star: &Mat,
    p_tgt: &RidgeProjector,
    p_oth: &RidgeProjector,
    alpha: f64,
    beta: f64,
) -> Result<Mat, SteerError> {
    check_strengths(alpha, beta)?;
    for p in [p_tgt, p_oth] {
        if p.dim() != q_star.cols() {
            return Err(SteerError::ProjectorDimension {
                q_dim: q_star.cols(),
                p_dim: p.dim(),
            });
        }
    }
    let enhance = project(q_star, p_tgt)?;
    let suppress = project(q_star, p_oth)?;
    let mut out = q_star.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v += alpha * enhance.get(i, j) - beta * suppress.get(i, j);
        }
    }
    Ok(out)
}

fn check_strengths(alpha: f64, beta: f64) -> Result<(), SteerError> {
    if alpha < 0.0 || beta < 0.0 || !alpha.is_finite() || !beta.is_finite() {
        return Err(SteerError::InvalidStrength { alpha, beta });
    }
    Ok(())
}

/// Steer one layer's queries, span by span and head by head.
///
/// With `schedule_active = false` the state is returned untouched (the
/// gate lives outside this function; passing it explicitly keeps call
/// sites honest about whether the step/block gate was consulted). Keys
/// are read-only throughout; query rows outside every positive-width
/// span are never written.
pub fn apply_layer(
    state: &mut AttentionState,
    spans: &SpanAssignment,
    anchors: &AnchorIndexSet,
    schedule_active: bool,
    cfg: &SteeringConfig,
) -> Result<LayerApplication, SteerError> {
    let mut outcome = LayerApplication::default();
    if !schedule_active {
        return Ok(outcome);
    }
    if anchors.event_count() != spans.spans.len() {
        return Err(SteerError::EventCountMismatch {
            anchors: anchors.event_count(),
            spans: spans.spans.len(),
        });
    }
    let l_k = state.key_rows();
    if let Some(max) = anchors.max_index() {
        if max >= l_k {
            let event_id = anchors
                .per_event
                .iter()
                .position(|s| s.contains(&max))
                .unwrap_or(0);
            return Err(SteerError::AnchorOutOfRange {
                event_id,
                index: max,
                available: l_k,
            });
        }
    }

    let event_count = anchors.event_count();
    for span in &spans.spans {
        if span.width() == 0 {
            continue;
        }
        let rows = state.rows_for_span(span);
        if rows.is_empty() {
            outcome.warnings.push(SteerWarning::NoRowsInSpan {
                event_id: span.event_id,
            });
            continue;
        }
        let target = span.event_id;
        let competitor_ids: Vec<usize> = (0..event_count)
            .filter(|&j| j != target && !anchors.per_event[j].is_empty())
            .collect();
        if competitor_ids.is_empty() {
            outcome
                .warnings
                .push(SteerWarning::NoCompetitors { event_id: target });
        }
        let oth_indices: Vec<usize> = competitor_ids
            .iter()
            .flat_map(|&j| anchors.per_event[j].iter().copied())
            .collect();

        let row_idx: Vec<usize> = rows.clone().collect();
        for head in 0..state.head_count() {
            let keys = &state.keys[head];
            let k_tgt = KeySlice::gather(keys, anchors.per_event[target].iter().copied(), target)?;
            let p_tgt = build_projector(&k_tgt, cfg.ridge)?;
            let p_oth = if oth_indices.is_empty() {
                RidgeProjector::empty(state.head_dim)
            } else {
                let k_oth = KeySlice::new(target, keys.select_rows(&oth_indices))?;
                build_projector(&k_oth, cfg.ridge)?
            };
            let dirs = DominantDirections {
                target: dominant_direction(&k_tgt)?,
                others: competitor_ids
                    .iter()
                    .map(|&j| {
                        let slice =
                            KeySlice::gather(keys, anchors.per_event[j].iter().copied(), j)?;
                        dominant_direction(&slice)
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            };

            let q_star = state.queries[head].select_rows(&row_idx);
            let (alpha, beta, solver) = match cfg.strength_mode {
                StrengthMode::Fixed { alpha, beta } => (alpha, beta, None),
                StrengthMode::Solve(mode) => {
                    let inst = build_instance(&q_star, &dirs, cfg.margin_eps)?
                        .expect("span rows are nonempty");
                    let s = solve(&inst, mode);
                    (s.alpha, s.beta, Some(s))
                }
            };
            // Without competitors there is nothing to suppress; the
            // empty projector already zeroes the term, but the recorded
            // strength should say so too.
            let beta = if oth_indices.is_empty() { 0.0 } else { beta };

            let steered = steer_queries(&q_star, &p_tgt, &p_oth, alpha, beta)?;
            outcome.steer_calls += 1;
            for (slot, &row) in row_idx.iter().enumerate() {
                let src: Vec<f64> = steered.row(slot).to_vec();
                state.queries[head].row_mut(row).copy_from_slice(&src);
            }
            outcome.decisions.push(SpanHeadSteer {
                event_id: target,
                head,
                alpha,
                beta,
                solver,
            });
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn projector_from(rows: &[&[f64]]) -> RidgeProjector {
        let mat = Mat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>());
        build_projector(&KeySlice::new(0, mat).unwrap(), Ridge::Fixed(0.0)).unwrap()
    }

    #[test]
    fn zero_strengths_are_a_bit_exact_identity() {
        let q = Mat::from_rows(&[vec![0.1, -0.7, 2.0], vec![1.0, 0.0, 0.5]]);
        let p = projector_from(&[&[1.0, 0.0, 0.0]]);
        let out = steer_queries(&q, &p, &p, 0.0, 0.0).unwrap();
        assert_eq!(out.as_slice(), q.as_slice());
    }

    #[test]
    fn orthogonal_decomposition_example() {
        // q = k_t + k_o with orthonormal k_t, k_o; exact projectors;
        // α = β = 1: raw update gives 2·k_t, renormalization restores
        // the original norm √2.
        let q = Mat::from_rows(&[vec![1.0, 1.0, 0.0]]);
        let p_t = projector_from(&[&[1.0, 0.0, 0.0]]);
        let p_o = projector_from(&[&[0.0, 1.0, 0.0]]);

        let raw = steer_queries_raw(&q, &p_t, &p_o, 1.0, 1.0).unwrap();
        assert!((raw.get(0, 0) - 2.0).abs() < 1e-12);
        assert!(raw.get(0, 1).abs() < 1e-12);

        let out = steer_queries(&q, &p_t, &p_o, 1.0, 1.0).unwrap();
        let sqrt2 = 2.0f64.sqrt();
        assert!((out.get(0, 0) - sqrt2).abs() < 1e-12);
        assert!(out.get(0, 1).abs() < 1e-12);
        assert!((norm2(out.row(0)) - norm2(q.row(0))).abs() < 1e-12);
    }

    #[test]
    fn row_norms_survive_and_directions_match_a_naive_evaluation() {
        let q = Mat::from_fn(6, 8, |i, j| ((i * 8 + j + 1) as f64).sin());
        let keys_t = Mat::from_fn(2, 8, |i, j| ((i * 8 + j + 3) as f64).cos());
        let keys_o = Mat::from_fn(3, 8, |i, j| ((i * 8 + j + 31) as f64).sin());
        let p_t = build_projector(&KeySlice::new(0, keys_t).unwrap(), Ridge::Fixed(0.0)).unwrap();
        let p_o = build_projector(&KeySlice::new(1, keys_o).unwrap(), Ridge::Fixed(0.0)).unwrap();
        let (alpha, beta) = (0.8, 0.3);

        let out = steer_queries(&q, &p_t, &p_o, alpha, beta).unwrap();
        for i in 0..q.rows() {
            assert!((norm2(out.row(i)) - norm2(q.row(i))).abs() < 1e-9, "row {i}");
        }

        // Straight-line reimplementation of the update + renorm.
        for i in 0..q.rows() {
            let qe = p_t.matrix().matvec(q.row(i)).unwrap();
            let qs = p_o.matrix().matvec(q.row(i)).unwrap();
            let mut want: Vec<f64> = (0..8)
                .map(|j| q.get(i, j) + alpha * qe[j] - beta * qs[j])
                .collect();
            let scale = norm2(q.row(i)) / norm2(&want);
            for v in want.iter_mut() {
                *v *= scale;
            }
            for (j, wv) in want.iter().enumerate() {
                assert!((out.get(i, j) - wv).abs() < 1e-9, "({i},{j})");
            }
        }
    }

    #[test]
    fn degenerate_rows_pass_through_unrescaled() {
        // Row 0 is zero (pre-norm 0); row 1 is annihilated by the edit
        // (post-norm under the floor). Neither gets rescaled.
        let q = Mat::from_rows(&[vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let p_t = RidgeProjector::empty(3);
        let p_o = projector_from(&[&[0.0, 1.0, 0.0]]);
        let out = steer_queries(&q, &p_t, &p_o, 0.0, 1.0).unwrap();
        assert_eq!(out.row(0), &[0.0, 0.0, 0.0]);
        assert!(out.row(1).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn invalid_strengths_and_shapes_are_rejected() {
        let q = Mat::zeros(1, 3);
        let p3 = RidgeProjector::empty(3);
        let p2 = RidgeProjector::empty(2);
        assert!(matches!(
            steer_queries(&q, &p3, &p3, -0.1, 0.0),
            Err(SteerError::InvalidStrength { .. })
        ));
        assert!(matches!(
            steer_queries(&q, &p3, &p3, f64::NAN, 0.0),
            Err(SteerError::InvalidStrength { .. })
        ));
        assert!(matches!(
            steer_queries_raw(&q, &p2, &p3, 0.1, 0.0),
            Err(SteerError::ProjectorDimension { q_dim: 3, p_dim: 2 })
        ));
    }

    // --- apply_layer fixtures ---------------------------------------

    /// Two heads, D = 4, 4 text keys in two orthogonal clusters
    /// ({e1-ish} for event 0, {e2-ish} for event 1), and one query row
    /// per frame, all biased toward event 0.
    fn toy_state(frames: usize) -> AttentionState {
        let keys: Vec<Mat> = (0..2)
            .map(|h| {
                let wobble = 0.05 * (h as f64 + 1.0);
                Mat::from_rows(&[
                    vec![1.0, 0.0, wobble, 0.0],
                    vec![1.0, 0.0, -wobble, 0.0],
                    vec![0.0, 1.0, 0.0, wobble],
                    vec![0.0, 1.0, 0.0, -wobble],
                ])
            })
            .collect();
        let queries: Vec<Mat> = (0..2)
            .map(|h| {
                Mat::from_fn(frames, 4, |i, j| match j {
                    0 => 1.0,
                    1 => 0.1,
                    _ => 0.01 * ((i + h) as f64 + 1.0),
                })
            })
            .collect();
        let frame_map: Vec<usize> = (0..frames).collect();
        AttentionState::new(queries, keys, frame_map).unwrap()
    }

    fn two_event_anchors() -> AnchorIndexSet {
        AnchorIndexSet {
            per_event: vec![BTreeSet::from([0usize, 1]), BTreeSet::from([2usize, 3])],
        }
    }

    fn two_spans() -> SpanAssignment {
        SpanAssignment {
            spans: vec![
                Span { event_id: 0, start: 0, end: 2 },
                Span { event_id: 1, start: 2, end: 4 },
            ],
        }
    }

    #[test]
    fn inactive_schedule_is_a_no_op() {
        let mut state = toy_state(4);
        let before = state.clone();
        let outcome = apply_layer(
            &mut state,
            &two_spans(),
            &two_event_anchors(),
            false,
            &SteeringConfig::default(),
        )
        .unwrap();
        assert_eq!(state, before);
        assert_eq!(outcome.steer_calls, 0);
        assert!(outcome.decisions.is_empty());
    }

    #[test]
    fn apply_layer_touches_only_in_span_rows_and_never_keys() {
        // Five frames, spans covering only [0, 4): frame-4 rows are
        // outside every span and must stay bit-identical.
        let mut state = toy_state(5);
        let before = state.clone();
        let outcome = apply_layer(
            &mut state,
            &two_spans(),
            &two_event_anchors(),
            true,
            &SteeringConfig::default(),
        )
        .unwrap();

        for h in 0..2 {
            assert_eq!(
                state.keys(h).as_slice(),
                before.keys(h).as_slice(),
                "keys moved on head {h}"
            );
            assert_eq!(
                state.queries(h).row(4),
                before.queries(h).row(4),
                "out-of-span row moved on head {h}"
            );
            // Steered rows keep their norms.
            for row in 0..4 {
                let a = norm2(state.queries(h).row(row));
                let b = norm2(before.queries(h).row(row));
                assert!((a - b).abs() < 1e-9, "norm drift at head {h} row {row}");
            }
        }

        // Queries lean toward event 0, so span 1 has positive deficits
        // and must actually move.
        assert!(
            state.queries(0).row(2) != before.queries(0).row(2),
            "span-1 rows were not steered"
        );
        // 2 spans × 2 heads.
        assert_eq!(outcome.steer_calls, 4);
        for d in &outcome.decisions {
            assert!(d.alpha >= 0.0 && d.beta >= 0.0);
        }
    }

    #[test]
    fn span_one_gains_alignment_with_its_event_direction() {
        let mut state = toy_state(4);
        let before = state.clone();
        apply_layer(
            &mut state,
            &two_spans(),
            &two_event_anchors(),
            true,
            &SteeringConfig::default(),
        )
        .unwrap();

        for h in 0..2 {
            let dir = dominant_direction(
                &KeySlice::gather(state.keys(h), [2usize, 3], 1).unwrap(),
            )
            .unwrap();
            let mean_align = |m: &Mat| -> f64 {
                (2..4)
                    .map(|r| m.row(r).iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>())
                    .sum::<f64>()
                    / 2.0
            };
            let gained = mean_align(state.queries(h)) - mean_align(before.queries(h));
            assert!(gained > 0.0, "head {h}: alignment did not improve ({gained})");
        }
    }

    #[test]
    fn single_event_skips_suppression_with_a_warning() {
        let mut state = toy_state(4);
        let spans = SpanAssignment {
            spans: vec![Span { event_id: 0, start: 0, end: 4 }],
        };
        let anchors = AnchorIndexSet {
            per_event: vec![BTreeSet::from([0usize, 1])],
        };
        let outcome =
            apply_layer(&mut state, &spans, &anchors, true, &SteeringConfig::default()).unwrap();
        assert!(outcome
            .warnings
            .contains(&SteerWarning::NoCompetitors { event_id: 0 }));
        for d in &outcome.decisions {
            assert_eq!(d.beta, 0.0);
        }
        for h in 0..2 {
            assert_eq!(state.keys(h).as_slice(), toy_state(4).keys(h).as_slice());
        }
    }

    #[test]
    fn fixed_zero_strengths_leave_the_state_bit_identical() {
        let mut state = toy_state(4);
        let before = state.clone();
        let cfg = SteeringConfig {
            strength_mode: StrengthMode::Fixed { alpha: 0.0, beta: 0.0 },
            ..SteeringConfig::default()
        };
        let outcome =
            apply_layer(&mut state, &two_spans(), &two_event_anchors(), true, &cfg).unwrap();
        assert_eq!(state, before);
        // The steering path still ran; it just had nothing to add.
        assert_eq!(outcome.steer_calls, 4);
    }

    #[test]
    fn zero_width_spans_are_skipped() {
        let mut state = toy_state(4);
        let spans = SpanAssignment {
            spans: vec![
                Span { event_id: 0, start: 0, end: 4 },
                Span { event_id: 1, start: 4, end: 4 },
            ],
        };
        let outcome = apply_layer(
            &mut state,
            &spans,
            &two_event_anchors(),
            true,
            &SteeringConfig::default(),
        )
        .unwrap();
        // Only event 0's span × 2 heads.
        assert_eq!(outcome.steer_calls, 2);
        assert!(outcome.decisions.iter().all(|d| d.event_id == 0));
    }

    #[test]
    fn state_validation_catches_shape_mistakes() {
        let q = vec![Mat::zeros(4, 3)];
        let k = vec![Mat::zeros(2, 4)];
        assert!(matches!(
            AttentionState::new(q, k, vec![0, 0, 1, 1]),
            Err(SteerError::InconsistentHead { what: "key columns", .. })
        ));

        let q = vec![Mat::zeros(4, 3)];
        let k = vec![Mat::zeros(2, 3)];
        assert!(matches!(
            AttentionState::new(q, k, vec![0, 1, 1, 0]),
            Err(SteerError::FrameMapNotMonotone { row: 3, .. })
        ));
        let q = vec![Mat::zeros(4, 3)];
        let k = vec![Mat::zeros(2, 3)];
        assert!(matches!(
            AttentionState::new(q, k, vec![0, 1]),
            Err(SteerError::FrameMapLength { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn rows_for_span_uses_the_frame_map() {
        let q = vec![Mat::zeros(6, 2)];
        let k = vec![Mat::zeros(2, 2)];
        let state = AttentionState::new(q, k, vec![0, 0, 1, 1, 2, 2]).unwrap();
        let span = Span { event_id: 0, start: 1, end: 3 };
        assert_eq!(state.rows_for_span(&span), 2..6);
        let empty = Span { event_id: 1, start: 3, end: 5 };
        assert!(state.rows_for_span(&empty).is_empty());
    }

    #[test]
    fn mismatched_event_counts_are_an_error() {
        let mut state = toy_state(4);
        let anchors = AnchorIndexSet {
            per_event: vec![BTreeSet::from([0usize])],
        };
        assert!(matches!(
            apply_layer(&mut state, &two_spans(), &anchors, true, &SteeringConfig::default()),
            Err(SteerError::EventCountMismatch { anchors: 1, spans: 2 })
        ));
    }
}
