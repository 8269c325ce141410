//! Adaptive steering strengths from margin deficits.
//!
//! For one event span, the solver receives per-row alignment scores of
//! the span's queries against the target event's dominant key direction
//! (`s_tgt`) and against each competitor direction (`s_oth`). Rows where
//! the strongest competitor beats the target by more than the margin
//! produce a positive deficit `d = s_oth_max − s_tgt + ε`. The strengths
//! `x = (α, β) ≥ 0` are chosen to close those deficits while penalizing
//! large edits:
//!
//! ```text
//! minimize  ½·xᵀMx + ½·‖max(0, d − Cx)‖²,   x ≥ 0
//! ```
//!
//! with `M = diag(‖s_tgt‖², ‖s_oth_max‖²)` and `C = [s_tgt  s_oth_max]`.
//!
//! Two solver modes exist. [`solve_closed_form`] performs the single
//! regularized linear solve `(M + CᵀC + λI)x = Cᵀd` followed by a clamp
//! to the nonnegative orthant — cheap, and exact whenever no clamp fires
//! and every hinge row stays active at the solution. [`solve_active_set`]
//! finds the true constrained minimizer by searching the boundary faces
//! exactly and iterating the hinge active set in the interior; it exists
//! because the closed form's assumptions fail on adversarial score
//! patterns (see `counterexample_where_closed_form_is_suboptimal`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Mat;
use crate::subspace::DominantDirections;

/// Default margin ε: competitors must trail the target by this much
/// before a row counts as satisfied.
pub const DEFAULT_MARGIN_EPS: f64 = 0.05;

/// Tikhonov term added to the 2×2 system diagonal. `M + CᵀC` is
/// singular when the span's queries are orthogonal to the target
/// direction (`s_tgt ≡ 0`), a reachable input; λ keeps the solve defined.
pub const TIKHONOV_LAMBDA: f64 = 1e-8;

/// Iteration cap for the projected-gradient polish in
/// [`solve_active_set`].
const POLISH_MAX_ITERS: usize = 4000;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("span has no query rows")]
    EmptySpan,
    #[error("{context}: expected {expected} entries, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("margin epsilon must be finite and nonnegative, got {value}")]
    InvalidMarginEps { value: f64 },
    #[error("alignment scores must be finite")]
    NonFiniteScores,
}

/// Which algorithm produced a [`SteeringStrengths`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    /// Single regularized solve + clamp.
    ClosedForm,
    /// Exact boundary-face search with hinge active-set iteration.
    ActiveSet,
}

/// One span's quadratic program, with all derived quantities cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceDoc")]
pub struct SolverInstance {
    /// Per-row alignment with the target direction (length R).
    s_tgt: Vec<f64>,
    /// Per-row alignment with each competitor direction (R × J; J may be
    /// zero when the span has no competitors).
    s_oth: Mat,
    /// Row-wise max over competitors; zero where J = 0, since absent
    /// competitors contribute no alignment to beat.
    s_oth_max: Vec<f64>,
    /// Margin deficits `s_oth_max − s_tgt + margin_eps`.
    d: Vec<f64>,
    /// Diagonal of M: `(‖s_tgt‖², ‖s_oth_max‖²)`.
    m: [f64; 2],
    /// Rows of C: `(s_tgt_r, s_oth_max_r)`.
    c: Vec<[f64; 2]>,
    margin_eps: f64,
}

/// Minimal JSON shape: `{"s_tgt": [...], "s_oth": [[...], ...],
/// "margin_eps": 0.05}`. Derived fields are recomputed, so documents
/// produced by serializing a full instance also parse.
#[derive(Debug, Deserialize)]
struct InstanceDoc {
    s_tgt: Vec<f64>,
    s_oth: Vec<Vec<f64>>,
    #[serde(default = "default_margin_eps")]
    margin_eps: f64,
}

fn default_margin_eps() -> f64 {
    DEFAULT_MARGIN_EPS
}

impl TryFrom<InstanceDoc> for SolverInstance {
    type Error = SolverError;

    fn try_from(doc: InstanceDoc) -> Result<Self, Self::Error> {
        let width = doc.s_oth.first().map_or(0, Vec::len);
        if let Some(bad) = doc.s_oth.iter().find(|row| row.len() != width) {
            return Err(SolverError::DimensionMismatch {
                context: "competitor score rows",
                expected: width,
                got: bad.len(),
            });
        }
        SolverInstance::from_scores(doc.s_tgt, Mat::from_rows(&doc.s_oth), doc.margin_eps)
    }
}

impl SolverInstance {
    /// Assemble an instance from raw score data, deriving deficits and
    /// the quadratic terms.
    pub fn from_scores(
        s_tgt: Vec<f64>,
        s_oth: Mat,
        margin_eps: f64,
    ) -> Result<Self, SolverError> {
        let r = s_tgt.len();
        if r == 0 {
            return Err(SolverError::EmptySpan);
        }
        if s_oth.rows() != r {
            return Err(SolverError::DimensionMismatch {
                context: "competitor score rows",
                expected: r,
                got: s_oth.rows(),
            });
        }
        if margin_eps < 0.0 || !margin_eps.is_finite() {
            return Err(SolverError::InvalidMarginEps { value: margin_eps });
        }
        if s_tgt.iter().any(|v| !v.is_finite()) || !s_oth.is_finite() {
            return Err(SolverError::NonFiniteScores);
        }

        // Plain rowwise maximum over the competitors. With no competitor
        // at all (J = 0) the strongest opposition is a zero-alignment
        // phantom, so the margin target degrades to ε above zero rather
        // than minus infinity.
        let s_oth_max: Vec<f64> = (0..r)
            .map(|i| {
                if s_oth.cols() == 0 {
                    0.0
                } else {
                    s_oth
                        .row(i)
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .collect();
        let d: Vec<f64> = (0..r)
            .map(|i| s_oth_max[i] - s_tgt[i] + margin_eps)
            .collect();
        let m = [
            s_tgt.iter().map(|v| v * v).sum(),
            s_oth_max.iter().map(|v| v * v).sum(),
        ];
        let c: Vec<[f64; 2]> = (0..r).map(|i| [s_tgt[i], s_oth_max[i]]).collect();
        Ok(SolverInstance {
            s_tgt,
            s_oth,
            s_oth_max,
            d,
            m,
            c,
            margin_eps,
        })
    }

    pub fn rows(&self) -> usize {
        self.s_tgt.len()
    }

    pub fn competitor_count(&self) -> usize {
        self.s_oth.cols()
    }

    pub fn margin_eps(&self) -> f64 {
        self.margin_eps
    }

    pub fn s_tgt(&self) -> &[f64] {
        &self.s_tgt
    }

    pub fn s_oth_max(&self) -> &[f64] {
        &self.s_oth_max
    }

    pub fn deficits(&self) -> &[f64] {
        &self.d
    }

    /// True when every row already satisfies the margin, so the minimum
    /// of the objective is exactly zero effort.
    pub fn all_deficits_nonpositive(&self) -> bool {
        self.d.iter().all(|&v| v <= 0.0)
    }
}

/// Build the span's instance from its query rows and the event's
/// dominant directions. Returns `Ok(None)` for an empty span (nothing to
/// steer — the caller skips it).
pub fn build_instance(
    q_star: &Mat,
    dirs: &DominantDirections,
    margin_eps: f64,
) -> Result<Option<SolverInstance>, SolverError> {
    if q_star.rows() == 0 {
        return Ok(None);
    }
    let d = q_star.cols();
    if dirs.target.len() != d {
        return Err(SolverError::DimensionMismatch {
            context: "target direction",
            expected: d,
            got: dirs.target.len(),
        });
    }
    for other in &dirs.others {
        if other.len() != d {
            return Err(SolverError::DimensionMismatch {
                context: "competitor direction",
                expected: d,
                got: other.len(),
            });
        }
    }

    let r = q_star.rows();
    let j = dirs.others.len();
    let s_tgt: Vec<f64> = (0..r)
        .map(|i| q_star.row(i).iter().zip(&dirs.target).map(|(a, b)| a * b).sum())
        .collect();
    let mut s_oth = Mat::zeros(r, j);
    for i in 0..r {
        for (jj, other) in dirs.others.iter().enumerate() {
            let score: f64 = q_star.row(i).iter().zip(other).map(|(a, b)| a * b).sum();
            s_oth.set(i, jj, score);
        }
    }
    SolverInstance::from_scores(s_tgt, s_oth, margin_eps).map(Some)
}

/// Objective value `½xᵀMx + ½‖max(0, d − Cx)‖²`.
pub fn objective(inst: &SolverInstance, x: [f64; 2]) -> f64 {
    let quad = 0.5 * (inst.m[0] * x[0] * x[0] + inst.m[1] * x[1] * x[1]);
    let hinge: f64 = inst
        .d
        .iter()
        .zip(&inst.c)
        .map(|(&d, c)| {
            let viol = (d - c[0] * x[0] - c[1] * x[1]).max(0.0);
            viol * viol
        })
        .sum();
    quad + 0.5 * hinge
}

/// Gradient `Mx − Cᵀ·max(0, d − Cx)`. On the region where every hinge
/// row is active this reduces to `Mx + CᵀCx − Cᵀd`; inactive rows drop
/// out of the sum.
pub fn objective_gradient(inst: &SolverInstance, x: [f64; 2]) -> [f64; 2] {
    let mut g = [inst.m[0] * x[0], inst.m[1] * x[1]];
    for (&d, c) in inst.d.iter().zip(&inst.c) {
        let viol = (d - c[0] * x[0] - c[1] * x[1]).max(0.0);
        g[0] -= c[0] * viol;
        g[1] -= c[1] * viol;
    }
    g
}

/// Solver output plus the numbers needed to audit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringStrengths {
    pub alpha: f64,
    pub beta: f64,
    pub mode: SolverMode,
    pub diagnostics: SolveDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub objective_at_zero: f64,
    pub objective_at_solution: f64,
    pub gradient_norm_at_solution: f64,
    /// The nonnegativity bound is active on α (its unconstrained value
    /// would be negative, or the minimizer sits on the α = 0 face).
    pub clamped_alpha: bool,
    pub clamped_beta: bool,
    /// `M + CᵀC` is (near-)singular, so the stationary point is not
    /// unique and the λ-regularized representative was returned.
    pub degenerate_system: bool,
}

impl SteeringStrengths {
    pub fn as_vec(&self) -> [f64; 2] {
        [self.alpha, self.beta]
    }

    pub fn is_zero(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }
}

/// Convenience dispatch over [`SolverMode`].
pub fn solve(inst: &SolverInstance, mode: SolverMode) -> SteeringStrengths {
    match mode {
        SolverMode::ClosedForm => solve_closed_form(inst),
        SolverMode::ActiveSet => solve_active_set(inst),
    }
}

/// The 2×2 normal matrix `M + CᵀC` as (a11, a12, a22).
fn normal_matrix(inst: &SolverInstance) -> (f64, f64, f64) {
    let mut a11 = inst.m[0];
    let mut a12 = 0.0;
    let mut a22 = inst.m[1];
    for c in &inst.c {
        a11 += c[0] * c[0];
        a12 += c[0] * c[1];
        a22 += c[1] * c[1];
    }
    (a11, a12, a22)
}

fn near_singular(a11: f64, a12: f64, a22: f64) -> bool {
    // Smallest eigenvalue of the symmetric 2×2, relative to the largest.
    let tr = a11 + a22;
    let disc = ((a11 - a22) * (a11 - a22) + 4.0 * a12 * a12).sqrt();
    let eig_min = 0.5 * (tr - disc);
    let eig_max = 0.5 * (tr + disc);
    eig_min <= 1e-10 * (1.0 + eig_max)
}

fn finish(inst: &SolverInstance, x: [f64; 2], mode: SolverMode, clamped: [bool; 2]) -> SteeringStrengths {
    let g = objective_gradient(inst, x);
    let (a11, a12, a22) = normal_matrix(inst);
    SteeringStrengths {
        alpha: x[0],
        beta: x[1],
        mode,
        diagnostics: SolveDiagnostics {
            objective_at_zero: objective(inst, [0.0, 0.0]),
            objective_at_solution: objective(inst, x),
            gradient_norm_at_solution: (g[0] * g[0] + g[1] * g[1]).sqrt(),
            clamped_alpha: clamped[0],
            clamped_beta: clamped[1],
            degenerate_system: near_singular(a11, a12, a22),
        },
    }
}

/// Single regularized solve `(M + CᵀC + λI)x = Cᵀd`, clamped to the
/// nonnegative orthant. Exactly `(0, 0)` whenever no deficit is
/// positive — no steering is needed and none is applied.
///
/// The normal equations treat every hinge as active, so rows whose
/// deficit is already negative still pull on the solution. With mixed
/// deficit signs the clamped result can even score slightly worse than
/// doing nothing; this mode intentionally reproduces that plain
/// solve-then-clamp behavior (the diagnostics expose both objective
/// values), while [`solve_active_set`] guarantees monotone improvement.
pub fn solve_closed_form(inst: &SolverInstance) -> SteeringStrengths {
    if inst.all_deficits_nonpositive() {
        return finish(inst, [0.0, 0.0], SolverMode::ClosedForm, [false, false]);
    }
    let (a11, a12, a22) = normal_matrix(inst);
    let mut rhs = [0.0f64; 2];
    for (&d, c) in inst.d.iter().zip(&inst.c) {
        rhs[0] += c[0] * d;
        rhs[1] += c[1] * d;
    }
    let raw = solve_2x2(
        a11 + TIKHONOV_LAMBDA,
        a12,
        a22 + TIKHONOV_LAMBDA,
        rhs[0],
        rhs[1],
    );
    let x = [raw[0].max(0.0), raw[1].max(0.0)];
    finish(
        inst,
        x,
        SolverMode::ClosedForm,
        [raw[0] < 0.0, raw[1] < 0.0],
    )
}

/// Exact minimizer of the objective over `x ≥ 0`.
///
/// The minimum of a convex piecewise quadratic over the nonnegative
/// quadrant sits either at the origin, on one of the two axis faces, or
/// in the open interior. The axis faces are one-dimensional piecewise
/// quadratics and are minimized exactly by enumerating hinge
/// breakpoints; the interior stationary point is found by iterating the
/// hinge active set (≤ R+2 rounds). A short projected-gradient polish
/// tightens the winner, and a final safeguard guarantees the result
/// never scores worse than doing nothing.
pub fn solve_active_set(inst: &SolverInstance) -> SteeringStrengths {
    if inst.all_deficits_nonpositive() {
        return finish(inst, [0.0, 0.0], SolverMode::ActiveSet, [false, false]);
    }

    let mut candidates: Vec<[f64; 2]> = vec![[0.0, 0.0]];

    // Axis faces, minimized exactly.
    let beta_only = minimize_on_axis(inst, 1);
    candidates.push([0.0, beta_only]);
    let alpha_only = minimize_on_axis(inst, 0);
    candidates.push([alpha_only, 0.0]);

    // Interior: iterate the hinge active set to a fixed point, keeping
    // every (clamped) iterate as a candidate.
    let r = inst.rows();
    let mut active: Vec<bool> = inst.d.iter().map(|&d| d > 0.0).collect();
    for _ in 0..(r + 2) {
        let mut a11 = inst.m[0] + TIKHONOV_LAMBDA;
        let mut a12 = 0.0;
        let mut a22 = inst.m[1] + TIKHONOV_LAMBDA;
        let mut rhs = [0.0f64; 2];
        for (i, &on) in active.iter().enumerate() {
            if on {
                let c = inst.c[i];
                a11 += c[0] * c[0];
                a12 += c[0] * c[1];
                a22 += c[1] * c[1];
                rhs[0] += c[0] * inst.d[i];
                rhs[1] += c[1] * inst.d[i];
            }
        }
        let raw = solve_2x2(a11, a12, a22, rhs[0], rhs[1]);
        candidates.push([raw[0].max(0.0), raw[1].max(0.0)]);
        let next: Vec<bool> = (0..r)
            .map(|i| inst.d[i] - inst.c[i][0] * raw[0] - inst.c[i][1] * raw[1] > 0.0)
            .collect();
        if next == active {
            break;
        }
        active = next;
    }

    let mut best = candidates[0];
    let mut best_f = objective(inst, best);
    for &cand in &candidates[1..] {
        let f = objective(inst, cand);
        if f < best_f {
            best_f = f;
            best = cand;
        }
    }

    let polished = polish(inst, best);
    let (x, clamped) = if objective(inst, polished) <= best_f {
        (polished, bound_flags(inst, polished))
    } else {
        (best, bound_flags(inst, best))
    };

    // Monotone safeguard: never worse than doing nothing.
    if objective(inst, x) > objective(inst, [0.0, 0.0]) {
        return finish(inst, [0.0, 0.0], SolverMode::ActiveSet, [false, false]);
    }
    finish(inst, x, SolverMode::ActiveSet, clamped)
}

/// Which nonnegativity bounds are active at `x` (component pinned at
/// zero while the objective still pushes downward into the bound).
fn bound_flags(inst: &SolverInstance, x: [f64; 2]) -> [bool; 2] {
    let g = objective_gradient(inst, x);
    [x[0] == 0.0 && g[0] > 0.0, x[1] == 0.0 && g[1] > 0.0]
}

/// Exact minimum of `t ↦ objective` along one axis (`which` = 0 for α,
/// 1 for β), over t ≥ 0. The restriction is a convex piecewise
/// quadratic whose pieces break where hinge rows switch off, so the
/// minimizer is a breakpoint or a per-piece vertex.
fn minimize_on_axis(inst: &SolverInstance, which: usize) -> f64 {
    let m = inst.m[which];
    let eval = |t: f64| {
        let x = if which == 0 { [t, 0.0] } else { [0.0, t] };
        objective(inst, x)
    };

    let mut breakpoints: Vec<f64> = inst
        .d
        .iter()
        .zip(&inst.c)
        .filter(|(_, c)| c[which] != 0.0)
        .map(|(&d, c)| d / c[which])
        .filter(|t| *t > 0.0 && t.is_finite())
        .collect();
    breakpoints.push(0.0);
    breakpoints.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    breakpoints.dedup();

    let mut best_t = 0.0;
    let mut best_f = eval(0.0);
    let mut consider = |t: f64| {
        let f = eval(t);
        if f < best_f {
            best_f = f;
            best_t = t;
        }
    };

    for (i, &lo) in breakpoints.iter().enumerate() {
        consider(lo);
        let hi = breakpoints.get(i + 1).copied();
        let probe = match hi {
            Some(h) => 0.5 * (lo + h),
            None => lo + 1.0,
        };
        // Active rows are constant on the open piece; the piece's
        // quadratic vertex is the candidate interior minimizer.
        let mut denom = m + TIKHONOV_LAMBDA;
        let mut num = 0.0;
        for (&d, c) in inst.d.iter().zip(&inst.c) {
            if d - c[which] * probe > 0.0 {
                denom += c[which] * c[which];
                num += c[which] * d;
            }
        }
        let mut vertex = num / denom;
        vertex = vertex.max(lo);
        if let Some(h) = hi {
            vertex = vertex.min(h);
        }
        if vertex >= 0.0 && vertex.is_finite() {
            consider(vertex);
        }
    }
    best_t
}

/// Projected gradient descent with the safe step 1/L, monotone by
/// construction. Used only to polish an already-good candidate.
fn polish(inst: &SolverInstance, start: [f64; 2]) -> [f64; 2] {
    let (a11, a12, a22) = normal_matrix(inst);
    // Largest eigenvalue of M + CᵀC bounds the Hessian everywhere
    // (inactive hinge rows only remove curvature).
    let tr = a11 + a22;
    let disc = ((a11 - a22) * (a11 - a22) + 4.0 * a12 * a12).sqrt();
    let lip = 0.5 * (tr + disc) + TIKHONOV_LAMBDA;
    if lip <= 0.0 {
        return start;
    }
    let step = 1.0 / lip;
    let mut x = start;
    for _ in 0..POLISH_MAX_ITERS {
        let g = objective_gradient(inst, x);
        let next = [(x[0] - step * g[0]).max(0.0), (x[1] - step * g[1]).max(0.0)];
        let moved = ((next[0] - x[0]).powi(2) + (next[1] - x[1]).powi(2)).sqrt();
        x = next;
        if moved <= 1e-14 * (1.0 + x[0].abs() + x[1].abs()) {
            break;
        }
    }
    x
}

fn solve_2x2(a11: f64, a12: f64, a22: f64, b1: f64, b2: f64) -> [f64; 2] {
    let det = a11 * a22 - a12 * a12;
    [(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_instance(s_tgt: f64, s_oth: f64, eps: f64) -> SolverInstance {
        SolverInstance::from_scores(
            vec![s_tgt],
            Mat::from_rows(&[vec![s_oth]]),
            eps,
        )
        .unwrap()
    }

    #[test]
    fn orthogonal_target_row_has_negative_deficit() {
        // q = 2·k_tgt with k_tgt ⟂ k_oth: alignment 2 with the target,
        // 0 with the competitor, so d = −2 + ε.
        let q = Mat::from_rows(&[vec![2.0, 0.0, 0.0, 0.0]]);
        let dirs = DominantDirections {
            target: vec![1.0, 0.0, 0.0, 0.0],
            others: vec![vec![0.0, 1.0, 0.0, 0.0]],
        };
        let inst = build_instance(&q, &dirs, 0.05).unwrap().unwrap();
        assert_eq!(inst.s_tgt(), &[2.0]);
        assert_eq!(inst.s_oth_max(), &[0.0]);
        assert!((inst.deficits()[0] - (-1.95)).abs() < 1e-15);
        assert!(inst.all_deficits_nonpositive());
    }

    #[test]
    fn zero_queries_leave_only_the_margin() {
        let q = Mat::zeros(3, 4);
        let dirs = DominantDirections {
            target: vec![1.0, 0.0, 0.0, 0.0],
            others: vec![vec![0.0, 1.0, 0.0, 0.0]],
        };
        let inst = build_instance(&q, &dirs, 0.05).unwrap().unwrap();
        assert_eq!(inst.s_tgt(), &[0.0; 3]);
        assert_eq!(inst.s_oth_max(), &[0.0; 3]);
        assert_eq!(inst.deficits(), &[0.05; 3]);
    }

    #[test]
    fn empty_span_is_a_skip_signal() {
        let q = Mat::zeros(0, 4);
        let dirs = DominantDirections {
            target: vec![1.0, 0.0, 0.0, 0.0],
            others: vec![],
        };
        assert!(build_instance(&q, &dirs, 0.05).unwrap().is_none());
    }

    #[test]
    fn mismatched_direction_dims_are_rejected() {
        let q = Mat::zeros(2, 4);
        let dirs = DominantDirections {
            target: vec![1.0, 0.0],
            others: vec![],
        };
        assert!(matches!(
            build_instance(&q, &dirs, 0.05),
            Err(SolverError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn row_max_matches_a_direct_loop() {
        let s_tgt = vec![0.1, -0.4, 2.0, 0.0];
        let s_oth = Mat::from_rows(&[
            vec![0.5, -1.0],
            vec![-0.3, -0.7],
            vec![1.9, 2.1],
            vec![0.0, 0.0],
        ]);
        let inst = SolverInstance::from_scores(s_tgt, s_oth.clone(), 0.05).unwrap();
        for i in 0..4 {
            let mut m = f64::NEG_INFINITY;
            for j in 0..2 {
                m = m.max(s_oth.get(i, j));
            }
            assert_eq!(inst.s_oth_max()[i], m);
        }
        // An all-negative competitor row keeps its true (negative) max
        // rather than being floored at zero.
        assert_eq!(inst.s_oth_max()[1], -0.3);
    }

    #[test]
    fn objective_at_origin_is_half_squared_positive_deficits() {
        let inst = SolverInstance::from_scores(
            vec![0.0, 1.0],
            Mat::from_rows(&[vec![2.0], vec![0.0]]),
            0.0,
        )
        .unwrap();
        // d = (2, -1); only the positive deficit contributes.
        assert!((objective(&inst, [0.0, 0.0]) - 2.0).abs() < 1e-15);

        let satisfied = scalar_instance(2.0, 0.5, 0.0);
        assert_eq!(objective(&satisfied, [0.0, 0.0]), 0.0);
    }

    #[test]
    fn objective_value_frozen_from_hand_evaluation() {
        // s_tgt = 1, s_oth_max = 2, ε = 0 at x = (1/3, 1/6):
        //   quadratic: ½(1·(1/3)² + 4·(1/6)²) = ½(1/9 + 1/9) = 1/9
        //   hinge:     d − Cx = 1 − (1/3 + 2/6) = 1/3 → ½(1/3)² = 1/18
        //   total 1/9 + 1/18 = 1/6.
        let inst = scalar_instance(1.0, 2.0, 0.0);
        let value = objective(&inst, [1.0 / 3.0, 1.0 / 6.0]);
        assert!((value - 1.0 / 6.0).abs() < 1e-12, "got {value}");
    }

    #[test]
    fn gradient_at_origin() {
        // All hinges active: g(0) = −Cᵀd.
        let inst = SolverInstance::from_scores(
            vec![1.0, 0.5],
            Mat::from_rows(&[vec![2.0], vec![1.5]]),
            0.1,
        )
        .unwrap();
        let g = objective_gradient(&inst, [0.0, 0.0]);
        let d = inst.deficits();
        let expect = [
            -(1.0 * d[0] + 0.5 * d[1]),
            -(2.0 * d[0] + 1.5 * d[1]),
        ];
        assert!((g[0] - expect[0]).abs() < 1e-15);
        assert!((g[1] - expect[1]).abs() < 1e-15);

        // No hinge active: gradient vanishes at the origin.
        let calm = scalar_instance(3.0, 0.5, 0.0);
        assert_eq!(objective_gradient(&calm, [0.0, 0.0]), [0.0, 0.0]);
    }

    #[test]
    fn closed_form_matches_the_two_by_two_solve() {
        // s_tgt=1, s_oth_max=2, ε=0: M+CᵀC = [[2,2],[2,8]], Cᵀd = (1,2),
        // giving x = (1/3, 1/6) by direct inversion.
        let inst = scalar_instance(1.0, 2.0, 0.0);
        let s = solve_closed_form(&inst);
        assert!((s.alpha - 1.0 / 3.0).abs() < 1e-6, "alpha {}", s.alpha);
        assert!((s.beta - 1.0 / 6.0).abs() < 1e-6, "beta {}", s.beta);
        assert!(!s.diagnostics.clamped_alpha && !s.diagnostics.clamped_beta);
        assert!(!s.diagnostics.degenerate_system);
    }

    #[test]
    fn degenerate_target_scores_fall_back_to_suppression() {
        // s_tgt ≡ 0 makes the system singular in α; the λ-regularized
        // solve keeps α at 0 and closes the deficit with β ≈ 0.5.
        let inst = scalar_instance(0.0, 1.0, 0.0);
        let s = solve_closed_form(&inst);
        assert!(s.alpha.abs() < 1e-6, "alpha {}", s.alpha);
        assert!((s.beta - 0.5).abs() < 1e-6, "beta {}", s.beta);
        assert!(s.diagnostics.degenerate_system);
    }

    #[test]
    fn nonpositive_deficits_return_exact_zero_in_both_modes() {
        let inst = scalar_instance(2.0, 0.5, 0.05);
        assert!(inst.all_deficits_nonpositive());
        for mode in [SolverMode::ClosedForm, SolverMode::ActiveSet] {
            let s = solve(&inst, mode);
            assert_eq!(s.alpha, 0.0);
            assert_eq!(s.beta, 0.0);
            assert_eq!(s.diagnostics.objective_at_solution, 0.0);
            assert_eq!(s.diagnostics.gradient_norm_at_solution, 0.0);
        }
    }

    #[test]
    fn active_set_agrees_with_closed_form_when_its_assumptions_hold() {
        // At (1/3, 1/6) both components are positive and the single
        // hinge is still violated, so the closed form is already the
        // true constrained minimizer.
        let inst = scalar_instance(1.0, 2.0, 0.0);
        let cf = solve_closed_form(&inst);
        let act = solve_active_set(&inst);
        assert!((cf.alpha - act.alpha).abs() < 1e-8);
        assert!((cf.beta - act.beta).abs() < 1e-8);
    }

    #[test]
    fn counterexample_where_closed_form_is_suboptimal() {
        // s_tgt = −1, s_oth_max = 1, ε = 0: d = 2, M = I, C = [−1, 1].
        // The unconstrained stationary point is (−2/3, 2/3); clamping α
        // lands at (0, 2/3) with objective 10/9. The true constrained
        // minimum lives on the α = 0 face at (0, 1) with objective 1.
        let inst = scalar_instance(-1.0, 1.0, 0.0);
        let cf = solve_closed_form(&inst);
        assert!((cf.diagnostics.objective_at_solution - 10.0 / 9.0).abs() < 1e-6);

        let act = solve_active_set(&inst);
        assert!(act.alpha.abs() < 1e-8, "alpha {}", act.alpha);
        assert!((act.beta - 1.0).abs() < 1e-6, "beta {}", act.beta);
        assert!(act.diagnostics.objective_at_solution <= 1.0 + 1e-9);
        assert!(
            act.diagnostics.objective_at_solution
                < cf.diagnostics.objective_at_solution - 1e-2
        );
        assert!(act.diagnostics.clamped_alpha);
    }

    #[test]
    fn active_set_never_scores_worse_than_doing_nothing() {
        let cases = [
            (1.0, 2.0, 0.0),
            (-1.0, 1.0, 0.0),
            (0.0, 1.0, 0.05),
            (-0.5, -0.2, 0.3),
            (1.5, 1.4, 0.05),
        ];
        for (t, o, eps) in cases {
            let inst = scalar_instance(t, o, eps);
            let s = solve_active_set(&inst);
            assert!(
                s.diagnostics.objective_at_solution
                    <= s.diagnostics.objective_at_zero + 1e-12,
                "({t},{o},{eps})"
            );
            assert!(s.alpha >= 0.0 && s.beta >= 0.0);
        }
    }

    #[test]
    fn closed_form_is_scale_invariant_at_zero_margin() {
        // Scaling all scores by t scales M by t², C by t, d by t; both
        // sides of the stationary system scale by t², so x is unchanged.
        let base = SolverInstance::from_scores(
            vec![0.7, -0.2, 1.1],
            Mat::from_rows(&[vec![1.2, 0.4], vec![0.9, -0.3], vec![0.5, 1.4]]),
            0.0,
        )
        .unwrap();
        let reference = solve_closed_form(&base);
        for t in [0.5, 2.0, 10.0] {
            let scaled = SolverInstance::from_scores(
                base.s_tgt().iter().map(|v| v * t).collect(),
                Mat::from_fn(3, 2, |i, j| base.s_oth.get(i, j) * t),
                0.0,
            )
            .unwrap();
            let s = solve_closed_form(&scaled);
            assert!((s.alpha - reference.alpha).abs() < 1e-6, "t={t}");
            assert!((s.beta - reference.beta).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn stationarity_holds_when_no_clamp_fires() {
        let inst = scalar_instance(1.0, 2.0, 0.0);
        let s = solve_closed_form(&inst);
        assert!(s.alpha > 0.0 && s.beta > 0.0);
        // Residual of the unregularized stationary system.
        let (a11, a12, a22) = normal_matrix(&inst);
        let rhs = [
            inst.s_tgt()[0] * inst.deficits()[0],
            inst.s_oth_max()[0] * inst.deficits()[0],
        ];
        let r1 = a11 * s.alpha + a12 * s.beta - rhs[0];
        let r2 = a12 * s.alpha + a22 * s.beta - rhs[1];
        let res = (r1 * r1 + r2 * r2).sqrt();
        let scale = 1.0 + (rhs[0] * rhs[0] + rhs[1] * rhs[1]).sqrt();
        assert!(res <= 1e-6 * scale, "residual {res}");
    }

    #[test]
    fn competitor_free_instance_gets_no_suppression() {
        // J = 0: absent competitors score 0, so only enhancement can act
        // and β comes out exactly 0.
        let inst = SolverInstance::from_scores(
            vec![-0.3, -0.1],
            Mat::from_rows(&[vec![], vec![]]),
            0.05,
        )
        .unwrap();
        assert_eq!(inst.competitor_count(), 0);
        assert_eq!(inst.s_oth_max(), &[0.0, 0.0]);
        for mode in [SolverMode::ClosedForm, SolverMode::ActiveSet] {
            let s = solve(&inst, mode);
            assert_eq!(s.beta, 0.0, "{mode:?}");
            assert!(s.alpha >= 0.0);
        }
    }

    #[test]
    fn instance_json_round_trips() {
        let inst = SolverInstance::from_scores(
            vec![1.0, -0.5],
            Mat::from_rows(&[vec![0.3, 2.0], vec![0.1, -0.2]]),
            0.05,
        )
        .unwrap();
        let json = serde_json::to_string(&inst).unwrap();
        let back: SolverInstance = serde_json::from_str(&json).unwrap();
        assert_eq!(inst, back);

        // Minimal documents parse too, with the margin defaulting.
        let minimal: SolverInstance =
            serde_json::from_str(r#"{"s_tgt":[1.0],"s_oth":[[2.0]]}"#).unwrap();
        assert_eq!(minimal.margin_eps(), DEFAULT_MARGIN_EPS);
    }
}
