//! Key-subspace projectors and dominant key directions.
//!
//! Each event owns a small bundle of key vectors (one per resolved anchor
//! token), gathered into a [`KeySlice`]. [`build_projector`] turns that
//! bundle into the ridge-regularized right projector
//! `P = Kᵀ(KKᵀ + εI)⁻¹K`, which maps a query onto (a shrunk copy of) the
//! span of the keys. [`dominant_direction`] compresses the bundle into a
//! single unit vector — the top right-singular vector of the
//! row-normalized keys — used for alignment scoring.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{norm2, solve_spd, LinalgError, Mat};

/// Scale factor for the automatic ridge: `ε = 1e-4 · trace(KKᵀ) / n_tokens`.
pub const DEFAULT_RIDGE_FACTOR: f64 = 1e-4;

/// Convergence threshold for the power iteration in [`dominant_direction`].
pub const POWER_ITER_TOL: f64 = 1e-10;

/// Iteration cap for [`dominant_direction`].
pub const POWER_ITER_MAX: usize = 500;

#[derive(Debug, Error)]
pub enum SubspaceError {
    #[error("event {event_id}: key slice is empty")]
    EmptyKeySet { event_id: usize },
    #[error("event {event_id}: anchor index {index} out of range for {available} key rows")]
    AnchorOutOfRange {
        event_id: usize,
        index: usize,
        available: usize,
    },
    #[error(
        "event {event_id}: key Gram matrix is singular at ridge 0 \
         (duplicate or dependent keys); use a positive ridge"
    )]
    SingularGram { event_id: usize },
    #[error("event {event_id}: every key row has zero norm")]
    DegenerateKeys { event_id: usize },
    #[error("event {event_id}: key entries must be finite")]
    NonFiniteKeys { event_id: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// An event's key rows, gathered from the full key matrix by anchor
/// token indices.
#[derive(Debug, Clone)]
pub struct KeySlice {
    pub event_id: usize,
    /// n_tokens × D matrix; one row per anchor token.
    pub rows: Mat,
}

impl KeySlice {
    pub fn new(event_id: usize, rows: Mat) -> Result<Self, SubspaceError> {
        if rows.rows() == 0 || rows.cols() == 0 {
            return Err(SubspaceError::EmptyKeySet { event_id });
        }
        if !rows.is_finite() {
            return Err(SubspaceError::NonFiniteKeys { event_id });
        }
        Ok(KeySlice { event_id, rows })
    }

    /// Gather the rows of `all_keys` at `indices` (anchor token positions).
    pub fn gather<I>(all_keys: &Mat, indices: I, event_id: usize) -> Result<Self, SubspaceError>
    where
        I: IntoIterator<Item = usize>,
    {
        let idx: Vec<usize> = indices.into_iter().collect();
        for &i in &idx {
            if i >= all_keys.rows() {
                return Err(SubspaceError::AnchorOutOfRange {
                    event_id,
                    index: i,
                    available: all_keys.rows(),
                });
            }
        }
        if idx.is_empty() {
            return Err(SubspaceError::EmptyKeySet { event_id });
        }
        Self::new(event_id, all_keys.select_rows(&idx))
    }

    pub fn token_count(&self) -> usize {
        self.rows.rows()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }
}

/// How to pick the ridge ε added to the key Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    /// `ε = DEFAULT_RIDGE_FACTOR · trace(KKᵀ) / n_tokens`, which tracks
    /// the mean squared key norm so the shrinkage is scale-free.
    Auto,
    /// Explicit ε ≥ 0. Zero keeps the exact projector but requires the
    /// key rows to be linearly independent.
    Fixed(f64),
}

impl Ridge {
    /// Resolve to a concrete ε for the given key slice.
    pub fn resolve(&self, keys: &KeySlice) -> f64 {
        match *self {
            Ridge::Fixed(eps) => eps,
            Ridge::Auto => {
                let trace: f64 = keys.rows.as_slice().iter().map(|v| v * v).sum();
                DEFAULT_RIDGE_FACTOR * trace / keys.token_count() as f64
            }
        }
    }
}

/// Symmetric right projector onto (a shrunk copy of) an event's key span.
///
/// Eigenvalues lie in `[0, 1]`; with ε = 0 and independent key rows the
/// matrix is idempotent and acts as the exact orthogonal projector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RidgeProjector {
    matrix: Mat,
    ridge: f64,
    source_rows: usize,
}

impl RidgeProjector {
    /// The D×D projector matrix.
    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    /// Head dimension the projector operates in.
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    /// Ridge ε the projector was built with.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Number of key rows the projector summarizes.
    pub fn source_rows(&self) -> usize {
        self.source_rows
    }

    /// Projector onto the trivial subspace: the zero matrix. Used when an
    /// event has no competitors, so the suppression term must vanish.
    pub fn empty(dim: usize) -> Self {
        RidgeProjector {
            matrix: Mat::zeros(dim, dim),
            ridge: 0.0,
            source_rows: 0,
        }
    }
}

/// Build `P = Kᵀ(KKᵀ + εI)⁻¹K` from an event's key slice.
///
/// The n×n system is solved by Cholesky factorization (n = anchor count,
/// typically small); the result is symmetrized to remove the last bits of
/// round-off skew. At ε = 0 a rank-deficient key set makes the Gram
/// matrix singular, which surfaces as [`SubspaceError::SingularGram`]
/// rather than a garbage projector.
pub fn build_projector(keys: &KeySlice, ridge: Ridge) -> Result<RidgeProjector, SubspaceError> {
    let eps = ridge.resolve(keys);
    let k = &keys.rows;
    let n = k.rows();

    let kt = k.transpose();
    let mut gram = k.matmul(&kt)?;
    for i in 0..n {
        let v = gram.get(i, i) + eps;
        gram.set(i, i, v);
    }

    // X = (KKᵀ + εI)⁻¹ K, then P = KᵀX.
    let d = k.cols();
    let x = solve_spd(&gram, k).map_err(|e| match e {
        LinalgError::NotPositiveDefinite { .. } => SubspaceError::SingularGram {
            event_id: keys.event_id,
        },
        other => SubspaceError::Linalg(other),
    })?;

    let mut p = kt.matmul(&x)?;
    // Symmetrize: P is symmetric in exact arithmetic.
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (p.get(i, j) + p.get(j, i));
            p.set(i, j, avg);
            p.set(j, i, avg);
        }
    }

    Ok(RidgeProjector {
        matrix: p,
        ridge: eps,
        source_rows: n,
    })
}

/// Project each row of `q` onto the subspace: `Q ↦ QP`.
pub fn project(q: &Mat, p: &RidgeProjector) -> Result<Mat, SubspaceError> {
    Ok(q.matmul(p.matrix())?)
}

/// One unit direction per event: the steering target plus its competitors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominantDirections {
    /// Unit direction of the target event's keys.
    pub target: Vec<f64>,
    /// Unit directions of the competitor events' keys, one per competitor.
    pub others: Vec<Vec<f64>>,
}

impl DominantDirections {
    pub fn competitor_count(&self) -> usize {
        self.others.len()
    }

    pub fn dim(&self) -> usize {
        self.target.len()
    }
}

/// Leading direction of a key bundle: the top right-singular vector of
/// the matrix of unit-normalized nonzero key rows (equivalently, the top
/// eigenvector of its Gram matrix, found by power iteration).
///
/// A fixed start vector keeps the result deterministic; the sign is
/// chosen so the mean projection of the normalized rows onto the
/// direction is nonnegative — a flipped direction would negate every
/// alignment score downstream.
pub fn dominant_direction(keys: &KeySlice) -> Result<Vec<f64>, SubspaceError> {
    let d = keys.dim();
    let mut normalized: Vec<Vec<f64>> = Vec::with_capacity(keys.token_count());
    for i in 0..keys.token_count() {
        let row = keys.rows.row(i);
        let n = norm2(row);
        if n > 0.0 {
            normalized.push(row.iter().map(|v| v / n).collect());
        }
    }
    if normalized.is_empty() {
        return Err(SubspaceError::DegenerateKeys {
            event_id: keys.event_id,
        });
    }

    // Gram of the normalized bundle, D×D PSD.
    let mut gram = vec![0.0f64; d * d];
    for row in &normalized {
        for a in 0..d {
            for b in 0..d {
                gram[a * d + b] += row[a] * row[b];
            }
        }
    }
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0f64; d];
        for a in 0..d {
            let mut acc = 0.0;
            for b in 0..d {
                acc += gram[a * d + b] * v[b];
            }
            out[a] = acc;
        }
        out
    };

    // Deterministic start; shift the phase if it happens to sit in the
    // null space of the Gram matrix.
    let mut v = vec![0.0f64; d];
    for shift in 0..=d {
        for (j, slot) in v.iter_mut().enumerate() {
            *slot = ((j + 1 + shift) as f64).sin();
        }
        let n = norm2(&v);
        for slot in v.iter_mut() {
            *slot /= n;
        }
        if norm2(&apply(&v)) > 1e-14 {
            break;
        }
    }

    for _ in 0..POWER_ITER_MAX {
        let mut next = apply(&v);
        let n = norm2(&next);
        if n == 0.0 {
            break;
        }
        for slot in next.iter_mut() {
            *slot /= n;
        }
        let delta: f64 = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        v = next;
        if delta < POWER_ITER_TOL {
            break;
        }
    }

    let mean_proj: f64 = normalized
        .iter()
        .map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>())
        .sum::<f64>()
        / normalized.len() as f64;
    if mean_proj < 0.0 {
        for slot in v.iter_mut() {
            *slot = -*slot;
        }
    }
    Ok(v)
}
