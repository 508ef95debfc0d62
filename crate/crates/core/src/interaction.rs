//! Pairwise interaction functions.
//!
//! Every interaction maps two K-vectors to a K-vector through an implicit
//! K x K matrix W: `f(a, b, W) = (a^T W) (.) b`. Four matrix structures are
//! supported, ordered by capacity:
//!
//! * `Naive` - W = I, no parameters
//! * `Weighted` - W = w * I, one scalar
//! * `Diagonal` - W = diag(d), K scalars
//! * `Projected` - full matrix, K^2 scalars (row-major)
//!
//! The `fwd_*` / `bwd_*` functions are the allocation-free kernels the layer
//! pooling hot path runs on; [`interact`] and [`interact_backward`] are the
//! checked value-level API built on top of them.

use crate::error::{Error, Result};
use crate::linalg::SeededRng;

/// Structure of the implicit interaction matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum InteractionKind {
    /// Identity matrix; plain Hadamard product.
    Naive,
    /// Scaled identity; one trainable scalar per pair.
    Weighted,
    /// Diagonal matrix; K trainable scalars per pair.
    Diagonal,
    /// Full K x K matrix per pair.
    Projected,
}

impl InteractionKind {
    /// Number of trainable scalars for embedding dimension `k`.
    pub fn param_size(self, k: usize) -> usize {
        match self {
            InteractionKind::Naive => 0,
            InteractionKind::Weighted => 1,
            InteractionKind::Diagonal => k,
            InteractionKind::Projected => k * k,
        }
    }

    /// Code letter used in three-letter model codes.
    pub fn letter(self) -> char {
        match self {
            InteractionKind::Naive => 'N',
            InteractionKind::Weighted => 'W',
            InteractionKind::Diagonal => 'D',
            InteractionKind::Projected => 'P',
        }
    }

    /// Parses a code letter (case-insensitive).
    pub fn from_letter(c: char) -> Result<Self> {
        match c.to_ascii_uppercase() {
            'N' => Ok(InteractionKind::Naive),
            'W' => Ok(InteractionKind::Weighted),
            'D' => Ok(InteractionKind::Diagonal),
            'P' => Ok(InteractionKind::Projected),
            other => Err(Error::Parse(format!(
                "unknown interaction letter '{other}' (expected N, W, D or P)"
            ))),
        }
    }

    /// Fresh parameter values for one pair weight.
    ///
    /// Weighted and Diagonal start at 1.0 and Projected at the identity plus
    /// N(0, 0.01) noise, so every kind starts near the Naive product.
    pub fn init_values(self, k: usize, rng: &mut SeededRng) -> Vec<f64> {
        match self {
            InteractionKind::Naive => Vec::new(),
            InteractionKind::Weighted => vec![1.0],
            InteractionKind::Diagonal => vec![1.0; k],
            InteractionKind::Projected => {
                let mut vals = vec![0.0; k * k];
                for r in 0..k {
                    for c in 0..k {
                        let base = if r == c { 1.0 } else { 0.0 };
                        vals[r * k + c] = base + 0.01 * rng.standard_normal();
                    }
                }
                vals
            }
        }
    }
}

/// Trainable weight of one (term, term) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairWeight {
    /// Matrix structure.
    pub kind: InteractionKind,
    /// Flat parameter storage, length `kind.param_size(K)`.
    pub values: Vec<f64>,
}

impl PairWeight {
    /// Identity-like weight of the given kind.
    pub fn identity(kind: InteractionKind, k: usize) -> Self {
        let values = match kind {
            InteractionKind::Naive => Vec::new(),
            InteractionKind::Weighted => vec![1.0],
            InteractionKind::Diagonal => vec![1.0; k],
            InteractionKind::Projected => {
                let mut v = vec![0.0; k * k];
                for i in 0..k {
                    v[i * k + i] = 1.0;
                }
                v
            }
        };
        PairWeight { kind, values }
    }
}

// ---------------------------------------------------------------------------
// Allocation-free kernels. `k = a.len() = b.len() = out.len()`; weight slice
// length is `kind.param_size(k)`. All backward kernels accumulate with `+=`.
// ---------------------------------------------------------------------------

#[inline]
pub(crate) fn fwd_naive(a: &[f64], b: &[f64], out: &mut [f64]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o += x * y;
    }
}

#[inline]
pub(crate) fn fwd_weighted(w: f64, a: &[f64], b: &[f64], out: &mut [f64]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o += w * x * y;
    }
}

#[inline]
pub(crate) fn fwd_diag(d: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..out.len() {
        out[i] += d[i] * a[i] * b[i];
    }
}

/// Projected forward; also writes `a^T W` into `atw` for reuse in backward.
#[inline]
pub(crate) fn fwd_proj(w: &[f64], a: &[f64], b: &[f64], atw: &mut [f64], out: &mut [f64]) {
    let k = a.len();
    let a0 = a[0];
    for (t, &wv) in atw.iter_mut().zip(&w[..k]) {
        *t = a0 * wv;
    }
    for (r, &ar) in a.iter().enumerate().skip(1) {
        let row = &w[r * k..(r + 1) * k];
        for (t, &wv) in atw.iter_mut().zip(row) {
            *t += ar * wv;
        }
    }
    for i in 0..k {
        out[i] += atw[i] * b[i];
    }
}

#[inline]
pub(crate) fn bwd_naive(a: &[f64], b: &[f64], u: &[f64], ga: &mut [f64], gb: &mut [f64]) {
    for i in 0..u.len() {
        ga[i] += u[i] * b[i];
        gb[i] += u[i] * a[i];
    }
}

#[inline]
pub(crate) fn bwd_weighted(
    w: f64,
    a: &[f64],
    b: &[f64],
    u: &[f64],
    ga: &mut [f64],
    gb: &mut [f64],
    gw: &mut [f64],
) {
    let mut acc = 0.0;
    for i in 0..u.len() {
        ga[i] += w * u[i] * b[i];
        gb[i] += w * u[i] * a[i];
        acc += u[i] * a[i] * b[i];
    }
    gw[0] += acc;
}

#[inline]
pub(crate) fn bwd_diag(
    d: &[f64],
    a: &[f64],
    b: &[f64],
    u: &[f64],
    ga: &mut [f64],
    gb: &mut [f64],
    gd: &mut [f64],
) {
    for i in 0..u.len() {
        ga[i] += d[i] * u[i] * b[i];
        gb[i] += d[i] * u[i] * a[i];
        gd[i] += u[i] * a[i] * b[i];
    }
}

/// Projected backward; `atw` is the cached `a^T W` from the forward pass.
#[inline]
pub(crate) fn bwd_proj(
    w: &[f64],
    a: &[f64],
    b: &[f64],
    u: &[f64],
    atw: &[f64],
    ga: &mut [f64],
    gb: &mut [f64],
    gw: &mut [f64],
) {
    let k = a.len();
    // ub = u (.) b drives both dW (outer product with a) and da (W ub).
    let mut ub_stack = [0.0f64; MAX_STACK_K];
    let mut ub_heap: Vec<f64>;
    let ub: &mut [f64] = if k <= MAX_STACK_K {
        &mut ub_stack[..k]
    } else {
        ub_heap = vec![0.0; k];
        &mut ub_heap
    };
    for i in 0..k {
        ub[i] = u[i] * b[i];
        gb[i] += u[i] * atw[i];
    }
    for (r, &ar) in a.iter().enumerate() {
        let wrow = &w[r * k..(r + 1) * k];
        let grow = &mut gw[r * k..(r + 1) * k];
        let mut acc = 0.0;
        for i in 0..k {
            grow[i] += ar * ub[i];
            acc += wrow[i] * ub[i];
        }
        ga[r] += acc;
    }
}

/// Stack-buffer size for per-pair scratch; larger embedding dims fall back
/// to a heap allocation.
pub(crate) const MAX_STACK_K: usize = 64;

fn check_shapes(t_i: &[f64], t_j: &[f64], w: &PairWeight) -> Result<usize> {
    let k = t_i.len();
    if t_j.len() != k {
        return Err(Error::Dimension(format!(
            "interact: embedding lengths differ ({k} vs {})",
            t_j.len()
        )));
    }
    let expect = w.kind.param_size(k);
    if w.values.len() != expect {
        return Err(Error::Dimension(format!(
            "interact: {:?} weight expects {expect} values for K={k}, got {}",
            w.kind,
            w.values.len()
        )));
    }
    Ok(k)
}

/// Interaction term `(t_i^T W) (.) t_j`.
pub fn interact(t_i: &[f64], t_j: &[f64], w: &PairWeight) -> Result<Vec<f64>> {
    let k = check_shapes(t_i, t_j, w)?;
    let mut out = vec![0.0; k];
    match w.kind {
        InteractionKind::Naive => fwd_naive(t_i, t_j, &mut out),
        InteractionKind::Weighted => fwd_weighted(w.values[0], t_i, t_j, &mut out),
        InteractionKind::Diagonal => fwd_diag(&w.values, t_i, t_j, &mut out),
        InteractionKind::Projected => {
            let mut atw = vec![0.0; k];
            fwd_proj(&w.values, t_i, t_j, &mut atw, &mut out);
        }
    }
    Ok(out)
}

/// Analytic partials of [`interact`] with respect to both embeddings and the
/// pair weight. `grad_w` is empty for `Naive`.
pub fn interact_backward(
    t_i: &[f64],
    t_j: &[f64],
    w: &PairWeight,
    upstream: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let k = check_shapes(t_i, t_j, w)?;
    if upstream.len() != k {
        return Err(Error::Dimension(format!(
            "interact_backward: upstream length {} vs K={k}",
            upstream.len()
        )));
    }
    let mut ga = vec![0.0; k];
    let mut gb = vec![0.0; k];
    let mut gw = vec![0.0; w.values.len()];
    match w.kind {
        InteractionKind::Naive => bwd_naive(t_i, t_j, upstream, &mut ga, &mut gb),
        InteractionKind::Weighted => {
            bwd_weighted(w.values[0], t_i, t_j, upstream, &mut ga, &mut gb, &mut gw)
        }
        InteractionKind::Diagonal => {
            bwd_diag(&w.values, t_i, t_j, upstream, &mut ga, &mut gb, &mut gw)
        }
        InteractionKind::Projected => {
            let mut atw = vec![0.0; k];
            let mut scratch = vec![0.0; k];
            fwd_proj(&w.values, t_i, t_j, &mut atw, &mut scratch);
            bwd_proj(&w.values, t_i, t_j, upstream, &atw, &mut ga, &mut gb, &mut gw);
        }
    }
    Ok((ga, gb, gw))
}

/// All four kinds, in code-letter order.
pub const ALL_KINDS: [InteractionKind; 4] = [
    InteractionKind::Naive,
    InteractionKind::Weighted,
    InteractionKind::Diagonal,
    InteractionKind::Projected,
];
