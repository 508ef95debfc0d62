//! Layer construction: the embedding layer and the pooled interaction layers
//! stacked on top of it.
//!
//! The first layer holds one term per field (Eq.-style mean pooling over
//! active features). Higher layers are built either field-wise (one term per
//! field, each pooling that field's embedding against every term of the
//! previous layer) or globally (a fixed number of free terms, each pooling
//! every (field, previous-term) combination). Field pooling optionally adds
//! a residual skip from the previous layer, which is how CrossNet-style
//! models fit in.
//!
//! The Naive product admits closed-form pooling sums, so field pooling with
//! `Naive` runs in O(M K) per layer instead of O(M^2 K); that is what makes
//! the FM configuration linear in the number of fields.

use crate::data::FieldInput;
use crate::error::{Error, Result};
use crate::interaction::{
    bwd_diag, bwd_naive, bwd_proj, bwd_weighted, fwd_diag, fwd_naive, fwd_proj, fwd_weighted,
    InteractionKind,
};
use crate::linalg::SeededRng;

/// Per-field feature embeddings plus optional first-order weights live in
/// [`crate::model`]; this table is the embedding half.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    /// Embedding dimension K.
    pub k: usize,
    /// Vocabulary size per field (numeric fields use 1).
    pub vocabs: Vec<u32>,
    /// Row-major `vocab x K` values per field.
    pub fields: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    /// Table with N(0, sigma^2) entries.
    pub fn random(vocabs: &[u32], k: usize, sigma: f64, rng: &mut SeededRng) -> Self {
        let fields = vocabs
            .iter()
            .map(|&v| {
                (0..v as usize * k)
                    .map(|_| sigma * rng.standard_normal())
                    .collect()
            })
            .collect();
        EmbeddingTable { k, vocabs: vocabs.to_vec(), fields }
    }

    /// Number of fields M.
    pub fn num_fields(&self) -> usize {
        self.vocabs.len()
    }

    /// Borrowed view for lookups.
    pub fn view(&self) -> EmbeddingView<'_> {
        EmbeddingView { k: self.k, vocabs: &self.vocabs, fields: &self.fields }
    }

    /// Embedding row of `feature` in `field`.
    pub fn row(&self, field: usize, feature: u32) -> Result<&[f64]> {
        self.view().row(field, feature)
    }
}

/// Borrowed embedding storage; the lookup surface without owning the data.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingView<'a> {
    /// Embedding dimension K.
    pub k: usize,
    /// Vocabulary size per field.
    pub vocabs: &'a [u32],
    /// Row-major `vocab x K` values per field.
    pub fields: &'a [Vec<f64>],
}

impl<'a> EmbeddingView<'a> {
    /// Embedding row of `feature` in `field`.
    pub fn row(&self, field: usize, feature: u32) -> Result<&'a [f64]> {
        let vocab = self.vocabs[field];
        if feature >= vocab {
            return Err(Error::Lookup { field, feature, vocab });
        }
        let start = feature as usize * self.k;
        Ok(&self.fields[field][start..start + self.k])
    }
}

/// Builds the first layer: one K-vector per field.
///
/// One-hot fields yield that feature's embedding, multi-hot fields the mean
/// of the active embeddings, empty fields a zero vector. Numeric fields
/// scale the field's single learnable vector by the input value.
pub fn build_first_layer(sample: &[FieldInput], table: EmbeddingView<'_>) -> Result<Vec<Vec<f64>>> {
    if sample.len() != table.vocabs.len() {
        return Err(Error::Dimension(format!(
            "sample has {} fields, table has {}",
            sample.len(),
            table.vocabs.len()
        )));
    }
    let k = table.k;
    let mut h1 = Vec::with_capacity(sample.len());
    for (field, input) in sample.iter().enumerate() {
        let mut term = vec![0.0; k];
        match input {
            FieldInput::Cat(ids) => {
                if !ids.is_empty() {
                    for &id in ids {
                        let row = table.row(field, id)?;
                        for (t, &r) in term.iter_mut().zip(row) {
                            *t += r;
                        }
                    }
                    let inv = 1.0 / ids.len() as f64;
                    for t in &mut term {
                        *t *= inv;
                    }
                }
            }
            FieldInput::Num(x) => {
                let row = table.row(field, 0)?;
                for (t, &r) in term.iter_mut().zip(row) {
                    *t = x * r;
                }
            }
        }
        h1.push(term);
    }
    Ok(h1)
}

/// Accumulates first-layer gradients back into per-field embedding blocks.
pub fn first_layer_backward(
    sample: &[FieldInput],
    grad_h1: &[Vec<f64>],
    k: usize,
    grad_fields: &mut [Vec<f64>],
) {
    for (field, input) in sample.iter().enumerate() {
        let g = &grad_h1[field];
        match input {
            FieldInput::Cat(ids) => {
                if ids.is_empty() {
                    continue;
                }
                let inv = 1.0 / ids.len() as f64;
                for &id in ids {
                    let start = id as usize * k;
                    let dst = &mut grad_fields[field][start..start + k];
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += inv * gv;
                    }
                }
            }
            FieldInput::Num(x) => {
                let dst = &mut grad_fields[field][0..k];
                for (d, &gv) in dst.iter_mut().zip(g) {
                    *d += x * gv;
                }
            }
        }
    }
}

/// Which pooling builds layers 2..=L.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PoolingKind {
    /// One term per field.
    Field,
    /// H_l free terms per layer.
    Global,
}

impl PoolingKind {
    /// Code letter (`F` or `G`).
    pub fn letter(self) -> char {
        match self {
            PoolingKind::Field => 'F',
            PoolingKind::Global => 'G',
        }
    }
}

/// Full pooling configuration for a stack of depth L.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingSpec {
    /// Field or Global pooling.
    pub kind: PoolingKind,
    /// Add the previous layer's matching term (CrossNet-style). Field only.
    pub residual: bool,
    /// Number of layers L including the embedding layer; >= 1.
    pub depth: usize,
    /// Global pooling width H_l for layers 2..=L (ignored for Field).
    pub global_widths: Vec<usize>,
    /// Field pooling: include the m == n self pair.
    pub include_self: bool,
    /// Field pooling: pool each unordered pair exactly once (m < n into
    /// term n, lower field as first argument). Used by the classic
    /// second-order reconstructions.
    pub pair_once: bool,
    /// Field pooling: one stored weight per unordered pair; the reverse
    /// orientation applies the transposed matrix.
    pub symmetric_share: bool,
}

impl PoolingSpec {
    /// Plain field pooling of the given depth.
    pub fn field(depth: usize) -> Self {
        PoolingSpec {
            kind: PoolingKind::Field,
            residual: false,
            depth,
            global_widths: Vec::new(),
            include_self: false,
            pair_once: false,
            symmetric_share: false,
        }
    }

    /// Global pooling with uniform width.
    pub fn global(depth: usize, width: usize) -> Self {
        PoolingSpec {
            kind: PoolingKind::Global,
            residual: false,
            depth,
            global_widths: vec![width; depth.saturating_sub(1)],
            include_self: false,
            pair_once: false,
            symmetric_share: false,
        }
    }

    /// Checks internal consistency for M fields.
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("pooling depth L must be >= 1".into()));
        }
        if m < 1 {
            return Err(Error::Config("field count M must be >= 1".into()));
        }
        match self.kind {
            PoolingKind::Field => Ok(()),
            PoolingKind::Global => {
                if self.residual {
                    return Err(Error::Config(
                        "residual pooling requires Field kind (term alignment)".into(),
                    ));
                }
                if self.pair_once || self.symmetric_share {
                    return Err(Error::Config(
                        "pair_once/symmetric_share only apply to Field pooling".into(),
                    ));
                }
                if self.global_widths.len() != self.depth - 1 {
                    return Err(Error::Config(format!(
                        "global pooling needs {} widths, got {}",
                        self.depth - 1,
                        self.global_widths.len()
                    )));
                }
                if self.global_widths.iter().any(|&h| h == 0) {
                    return Err(Error::Config("global widths must be >= 1".into()));
                }
                Ok(())
            }
        }
    }

    /// Term count of 1-based `layer`.
    pub fn width(&self, layer: usize, m: usize) -> usize {
        match self.kind {
            PoolingKind::Field => m,
            PoolingKind::Global => {
                if layer == 1 {
                    m
                } else {
                    self.global_widths[layer - 2]
                }
            }
        }
    }

    /// Pair wiring of a field layer.
    pub fn field_wiring(&self, m: usize) -> FieldWiring {
        FieldWiring {
            m,
            include_self: self.include_self,
            pair_once: self.pair_once,
            symmetric_share: self.symmetric_share,
        }
    }

    /// Pair wiring of 1-based global `layer` (>= 2).
    pub fn global_wiring(&self, layer: usize, m: usize) -> GlobalWiring {
        GlobalWiring {
            h_out: self.width(layer, m),
            h_prev: self.width(layer - 1, m),
            m,
        }
    }

    /// Weight scalars stored for 1-based `layer` (>= 2).
    pub fn layer_weight_len(&self, layer: usize, m: usize, kind: InteractionKind, k: usize) -> usize {
        let pairs = match self.kind {
            PoolingKind::Field => self.field_wiring(m).pair_count(),
            PoolingKind::Global => self.global_wiring(layer, m).pair_count(),
        };
        pairs * kind.param_size(k)
    }

    /// Total interaction weight scalars across all layers.
    pub fn total_weight_scalars(&self, m: usize, kind: InteractionKind, k: usize) -> usize {
        (2..=self.depth)
            .map(|l| self.layer_weight_len(l, m, kind, k))
            .sum()
    }
}

/// Pair enumeration and weight-slot layout of one field-pooling layer.
#[derive(Debug, Clone, Copy)]
pub struct FieldWiring {
    /// Field count.
    pub m: usize,
    /// Include the (n, n) self pair.
    pub include_self: bool,
    /// Only m < n pairs, pooled into term n.
    pub pair_once: bool,
    /// One stored weight per unordered pair.
    pub symmetric_share: bool,
}

impl FieldWiring {
    #[inline]
    fn tri_rank(hi: usize, lo: usize) -> usize {
        hi * (hi - 1) / 2 + lo
    }

    /// Number of stored pair weights.
    pub fn pair_count(&self) -> usize {
        let off_diag = self.m * (self.m - 1);
        if self.pair_once {
            off_diag / 2
        } else if self.symmetric_share {
            off_diag / 2 + if self.include_self { self.m } else { 0 }
        } else if self.include_self {
            self.m * self.m
        } else {
            off_diag
        }
    }

    /// Storage rank of ordered pair (n, m).
    #[inline]
    pub fn slot(&self, n: usize, m: usize) -> usize {
        if self.pair_once {
            debug_assert!(m < n);
            Self::tri_rank(n, m)
        } else if self.symmetric_share {
            if n == m {
                self.m * (self.m - 1) / 2 + n
            } else {
                Self::tri_rank(n.max(m), n.min(m))
            }
        } else if self.include_self {
            n * self.m + m
        } else {
            n * (self.m - 1) + if m < n { m } else { m - 1 }
        }
    }

    /// Whether the stored Projected matrix is applied transposed for the
    /// ordered pair (n, m). Shared storage keeps the (lower, higher)
    /// orientation, so the reverse direction transposes.
    #[inline]
    pub fn transposed(&self, n: usize, m: usize) -> bool {
        !self.pair_once && self.symmetric_share && n > m
    }

    /// Partner fields pooled into term n.
    pub fn partners(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        let (end, skip) = if self.pair_once {
            (n, None)
        } else {
            (self.m, if self.include_self { None } else { Some(n) })
        };
        (0..end).filter(move |&m| Some(m) != skip)
    }
}

/// Pair layout of one global-pooling layer.
#[derive(Debug, Clone, Copy)]
pub struct GlobalWiring {
    /// Output terms H_l.
    pub h_out: usize,
    /// Previous layer width H_{l-1} (M when the previous layer is h_1).
    pub h_prev: usize,
    /// Field count.
    pub m: usize,
}

impl GlobalWiring {
    /// Number of stored pair weights.
    pub fn pair_count(&self) -> usize {
        self.h_out * self.h_prev * self.m
    }

    /// Storage rank of (out-term n, prev-term n', field m).
    #[inline]
    pub fn slot(&self, n: usize, np: usize, m: usize) -> usize {
        (n * self.h_prev + np) * self.m + m
    }
}

/// Fresh weight blocks for every layer of a stack.
pub fn init_layer_blocks(
    spec: &PoolingSpec,
    m: usize,
    kind: InteractionKind,
    k: usize,
    rng: &mut SeededRng,
) -> Vec<Vec<f64>> {
    (2..=spec.depth)
        .map(|layer| {
            let pairs = match spec.kind {
                PoolingKind::Field => spec.field_wiring(m).pair_count(),
                PoolingKind::Global => spec.global_wiring(layer, m).pair_count(),
            };
            let mut block = Vec::with_capacity(pairs * kind.param_size(k));
            for _ in 0..pairs {
                block.extend(kind.init_values(k, rng));
            }
            block
        })
        .collect()
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Transposed-matrix counterparts of the Projected kernels; `atw` receives
/// `W a` instead of `a^T W`.
#[inline]
fn fwd_proj_t(w: &[f64], a: &[f64], b: &[f64], atw: &mut [f64], out: &mut [f64]) {
    let k = a.len();
    for i in 0..k {
        let row = &w[i * k..(i + 1) * k];
        let mut acc = 0.0;
        for (wv, av) in row.iter().zip(a) {
            acc += wv * av;
        }
        atw[i] = acc;
        out[i] += acc * b[i];
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn bwd_proj_t(
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
    for i in 0..k {
        let ub = u[i] * b[i];
        let wrow = &w[i * k..(i + 1) * k];
        let grow = &mut gw[i * k..(i + 1) * k];
        for r in 0..k {
            grow[r] += ub * a[r];
            ga[r] += wrow[r] * ub;
        }
        gb[i] += u[i] * atw[i];
    }
}

struct PairCtx<'a> {
    kind: InteractionKind,
    k: usize,
    weights: &'a [f64],
    stride: usize,
}

impl PairCtx<'_> {
    #[inline]
    fn wslice(&self, slot: usize) -> &[f64] {
        &self.weights[slot * self.stride..(slot + 1) * self.stride]
    }

    /// out += f(a, b, W_slot); Projected appends its a^T W cache.
    #[inline]
    fn forward(&self, slot: usize, transposed: bool, a: &[f64], b: &[f64], out: &mut [f64], atw_cache: &mut Vec<f64>) {
        match self.kind {
            InteractionKind::Naive => fwd_naive(a, b, out),
            InteractionKind::Weighted => fwd_weighted(self.wslice(slot)[0], a, b, out),
            InteractionKind::Diagonal => fwd_diag(self.wslice(slot), a, b, out),
            InteractionKind::Projected => {
                let base = atw_cache.len();
                atw_cache.resize(base + self.k, 0.0);
                let atw = &mut atw_cache[base..];
                if transposed {
                    fwd_proj_t(self.wslice(slot), a, b, atw, out);
                } else {
                    fwd_proj(self.wslice(slot), a, b, atw, out);
                }
            }
        }
    }

    #[inline]
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        slot: usize,
        transposed: bool,
        a: &[f64],
        b: &[f64],
        u: &[f64],
        atw: &[f64],
        ga: &mut [f64],
        gb: &mut [f64],
        gw_block: &mut [f64],
    ) {
        let gw = &mut gw_block[slot * self.stride..(slot + 1) * self.stride];
        match self.kind {
            InteractionKind::Naive => bwd_naive(a, b, u, ga, gb),
            InteractionKind::Weighted => {
                bwd_weighted(self.wslice(slot)[0], a, b, u, ga, gb, gw)
            }
            InteractionKind::Diagonal => bwd_diag(self.wslice(slot), a, b, u, ga, gb, gw),
            InteractionKind::Projected => {
                if transposed {
                    bwd_proj_t(self.wslice(slot), a, b, u, atw, ga, gb, gw);
                } else {
                    bwd_proj(self.wslice(slot), a, b, u, atw, ga, gb, gw);
                }
            }
        }
    }
}

fn check_terms(terms: &[Vec<f64>], expect: usize, k: usize, what: &str) -> Result<()> {
    if terms.len() != expect {
        return Err(Error::Dimension(format!(
            "{what}: expected {expect} terms, got {}",
            terms.len()
        )));
    }
    if let Some(t) = terms.iter().find(|t| t.len() != k) {
        return Err(Error::Dimension(format!(
            "{what}: term length {} vs K={k}",
            t.len()
        )));
    }
    Ok(())
}

/// One field-pooling layer: term n pools field n's embedding against the
/// previous layer's terms (or, with `pair_once`, lower fields against the
/// previous term n).
pub fn field_pool(
    h_prev: &[Vec<f64>],
    h1: &[Vec<f64>],
    kind: InteractionKind,
    k: usize,
    weights: &[f64],
    wiring: FieldWiring,
    residual: bool,
) -> Result<Vec<Vec<f64>>> {
    check_terms(h1, wiring.m, k, "field_pool h1")?;
    check_terms(h_prev, wiring.m, k, "field_pool h_prev")?;
    let expect = wiring.pair_count() * kind.param_size(k);
    if weights.len() != expect {
        return Err(Error::Dimension(format!(
            "field_pool: weight block length {} vs expected {expect}",
            weights.len()
        )));
    }
    let mut atw = Vec::new();
    Ok(field_forward(kind, k, wiring, residual, weights, h1, h_prev, &mut atw))
}

/// One global-pooling layer: every output term pools all (field,
/// previous-term) combinations under its own weights.
pub fn global_pool(
    h_prev: &[Vec<f64>],
    h1: &[Vec<f64>],
    kind: InteractionKind,
    k: usize,
    weights: &[f64],
    wiring: GlobalWiring,
) -> Result<Vec<Vec<f64>>> {
    check_terms(h1, wiring.m, k, "global_pool h1")?;
    check_terms(h_prev, wiring.h_prev, k, "global_pool h_prev")?;
    let expect = wiring.pair_count() * kind.param_size(k);
    if weights.len() != expect {
        return Err(Error::Dimension(format!(
            "global_pool: weight block length {} vs expected {expect}",
            weights.len()
        )));
    }
    let mut atw = Vec::new();
    Ok(global_forward(kind, k, wiring, weights, h1, h_prev, &mut atw))
}

#[allow(clippy::too_many_arguments)]
fn field_forward(
    kind: InteractionKind,
    k: usize,
    wiring: FieldWiring,
    residual: bool,
    weights: &[f64],
    h1: &[Vec<f64>],
    h_prev: &[Vec<f64>],
    atw_cache: &mut Vec<f64>,
) -> Vec<Vec<f64>> {
    let m = wiring.m;
    let mut out = vec![vec![0.0; k]; m];

    if kind == InteractionKind::Naive {
        // Closed-form pooling sums: O(M K) instead of O(M^2 K).
        if wiring.pair_once {
            // prefix[n] = sum_{m < n} t_m; term n = prefix[n] (.) p_n.
            let mut prefix = vec![0.0; k];
            for n in 0..m {
                for i in 0..k {
                    out[n][i] = prefix[i] * h_prev[n][i];
                }
                add_into(&mut prefix, &h1[n]);
            }
        } else {
            let mut total = vec![0.0; k];
            for p in h_prev {
                add_into(&mut total, p);
            }
            for n in 0..m {
                if wiring.include_self {
                    for i in 0..k {
                        out[n][i] = h1[n][i] * total[i];
                    }
                } else {
                    for i in 0..k {
                        out[n][i] = h1[n][i] * (total[i] - h_prev[n][i]);
                    }
                }
            }
        }
    } else {
        let ctx = PairCtx { kind, k, weights, stride: kind.param_size(k) };
        for n in 0..m {
            for pm in wiring.partners(n) {
                let (a, b) = if wiring.pair_once {
                    (&h1[pm], &h_prev[n])
                } else {
                    (&h1[n], &h_prev[pm])
                };
                ctx.forward(wiring.slot(n, pm), wiring.transposed(n, pm), a, b, &mut out[n], atw_cache);
            }
        }
    }

    if residual {
        for n in 0..m {
            add_into(&mut out[n], &h_prev[n]);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn field_backward(
    kind: InteractionKind,
    k: usize,
    wiring: FieldWiring,
    residual: bool,
    weights: &[f64],
    h1: &[Vec<f64>],
    h_prev: &[Vec<f64>],
    upstream: &[Vec<f64>],
    atw_cache: &[f64],
    gw: &mut [f64],
    gh1: &mut [Vec<f64>],
    gprev: &mut [Vec<f64>],
) {
    let m = wiring.m;
    if kind == InteractionKind::Naive {
        if wiring.pair_once {
            // term n = prefix[n] (.) p_n with prefix[n] = sum_{m<n} t_m.
            let mut prefix = vec![0.0; k];
            for n in 0..m {
                for i in 0..k {
                    gprev[n][i] += prefix[i] * upstream[n][i];
                }
                add_into(&mut prefix, &h1[n]);
            }
            // d/dt_m: every later term n > m contributes p_n (.) u_n.
            let mut suffix = vec![0.0; k];
            for n in (0..m).rev() {
                for i in 0..k {
                    gh1[n][i] += suffix[i];
                    suffix[i] += h_prev[n][i] * upstream[n][i];
                }
            }
        } else {
            let mut total = vec![0.0; k];
            for p in h_prev {
                add_into(&mut total, p);
            }
            // q = sum_n t_n (.) u_n feeds every previous-layer term.
            let mut q = vec![0.0; k];
            for n in 0..m {
                for i in 0..k {
                    q[i] += h1[n][i] * upstream[n][i];
                }
            }
            for n in 0..m {
                if wiring.include_self {
                    for i in 0..k {
                        gh1[n][i] += upstream[n][i] * total[i];
                        gprev[n][i] += q[i];
                    }
                } else {
                    for i in 0..k {
                        gh1[n][i] += upstream[n][i] * (total[i] - h_prev[n][i]);
                        gprev[n][i] += q[i] - h1[n][i] * upstream[n][i];
                    }
                }
            }
        }
    } else {
        let ctx = PairCtx { kind, k, weights, stride: kind.param_size(k) };
        let mut cursor = 0usize;
        for n in 0..m {
            for pm in wiring.partners(n) {
                let atw = if kind == InteractionKind::Projected {
                    let s = &atw_cache[cursor..cursor + k];
                    cursor += k;
                    s
                } else {
                    &[]
                };
                let slot = wiring.slot(n, pm);
                let tr = wiring.transposed(n, pm);
                if wiring.pair_once {
                    let (ga, gb) = index_two(gh1, gprev, pm, n);
                    ctx.backward(slot, tr, &h1[pm], &h_prev[n], &upstream[n], atw, ga, gb, gw);
                } else {
                    let (ga, gb) = index_two(gh1, gprev, n, pm);
                    ctx.backward(slot, tr, &h1[n], &h_prev[pm], &upstream[n], atw, ga, gb, gw);
                }
            }
        }
    }

    if residual {
        for n in 0..m {
            add_into(&mut gprev[n], &upstream[n]);
        }
    }
}

/// Disjoint mutable borrows into the h1-gradient and prev-gradient buffers.
#[inline]
fn index_two<'a>(
    gh1: &'a mut [Vec<f64>],
    gprev: &'a mut [Vec<f64>],
    ai: usize,
    bi: usize,
) -> (&'a mut [f64], &'a mut [f64]) {
    (&mut gh1[ai], &mut gprev[bi])
}

#[allow(clippy::too_many_arguments)]
fn global_forward(
    kind: InteractionKind,
    k: usize,
    wiring: GlobalWiring,
    weights: &[f64],
    h1: &[Vec<f64>],
    h_prev: &[Vec<f64>],
    atw_cache: &mut Vec<f64>,
) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; k]; wiring.h_out];
    if kind == InteractionKind::Naive {
        // Every term equals (sum_m t_m) (.) (sum_n' p_n').
        let mut s1 = vec![0.0; k];
        for t in h1 {
            add_into(&mut s1, t);
        }
        let mut sp = vec![0.0; k];
        for p in h_prev {
            add_into(&mut sp, p);
        }
        for term in &mut out {
            for i in 0..k {
                term[i] = s1[i] * sp[i];
            }
        }
    } else {
        let ctx = PairCtx { kind, k, weights, stride: kind.param_size(k) };
        for n in 0..wiring.h_out {
            for np in 0..wiring.h_prev {
                for fm in 0..wiring.m {
                    ctx.forward(wiring.slot(n, np, fm), false, &h1[fm], &h_prev[np], &mut out[n], atw_cache);
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn global_backward(
    kind: InteractionKind,
    k: usize,
    wiring: GlobalWiring,
    weights: &[f64],
    h1: &[Vec<f64>],
    h_prev: &[Vec<f64>],
    upstream: &[Vec<f64>],
    atw_cache: &[f64],
    gw: &mut [f64],
    gh1: &mut [Vec<f64>],
    gprev: &mut [Vec<f64>],
) {
    if kind == InteractionKind::Naive {
        let mut s1 = vec![0.0; k];
        for t in h1 {
            add_into(&mut s1, t);
        }
        let mut sp = vec![0.0; k];
        for p in h_prev {
            add_into(&mut sp, p);
        }
        let mut usum = vec![0.0; k];
        for u in upstream {
            add_into(&mut usum, u);
        }
        for g in gh1.iter_mut() {
            for i in 0..k {
                g[i] += usum[i] * sp[i];
            }
        }
        for g in gprev.iter_mut() {
            for i in 0..k {
                g[i] += usum[i] * s1[i];
            }
        }
    } else {
        let ctx = PairCtx { kind, k, weights, stride: kind.param_size(k) };
        let mut cursor = 0usize;
        for n in 0..wiring.h_out {
            for np in 0..wiring.h_prev {
                for fm in 0..wiring.m {
                    let atw = if kind == InteractionKind::Projected {
                        let s = &atw_cache[cursor..cursor + k];
                        cursor += k;
                        s
                    } else {
                        &[]
                    };
                    let (ga, gb) = index_two(gh1, gprev, fm, np);
                    ctx.backward(
                        wiring.slot(n, np, fm),
                        false,
                        &h1[fm],
                        &h_prev[np],
                        &upstream[n],
                        atw,
                        ga,
                        gb,
                        gw,
                    );
                }
            }
        }
    }
}

/// Forward pass over a whole stack, caching every term (and the projected
/// `a^T W` products) for the backward pass.
#[derive(Debug, Clone)]
pub struct StackCache {
    /// `layers[0]` is h_1; `layers[l-1]` holds layer l's terms.
    pub layers: Vec<Vec<Vec<f64>>>,
    /// Per interaction layer (2..=L): projected products in traversal order.
    atw: Vec<Vec<f64>>,
}

impl StackCache {
    /// Term widths per layer.
    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.len()).collect()
    }
}

/// Runs all pooling layers on top of `h1`.
pub fn stack_forward(
    h1: Vec<Vec<f64>>,
    spec: &PoolingSpec,
    kind: InteractionKind,
    k: usize,
    blocks: &[Vec<f64>],
) -> Result<StackCache> {
    let m = h1.len();
    spec.validate(m)?;
    if blocks.len() != spec.depth - 1 {
        return Err(Error::Dimension(format!(
            "stack_forward: {} weight blocks for depth {}",
            blocks.len(),
            spec.depth
        )));
    }
    let mut layers = Vec::with_capacity(spec.depth);
    let mut atw = Vec::with_capacity(spec.depth.saturating_sub(1));
    layers.push(h1);
    for layer in 2..=spec.depth {
        let mut cache = Vec::new();
        let weights = &blocks[layer - 2];
        let prev = &layers[layer - 2];
        let h1_ref = &layers[0];
        let next = match spec.kind {
            PoolingKind::Field => {
                let wiring = spec.field_wiring(m);
                expect_len(weights.len(), wiring.pair_count() * kind.param_size(k), layer)?;
                field_forward(kind, k, wiring, spec.residual, weights, h1_ref, prev, &mut cache)
            }
            PoolingKind::Global => {
                let wiring = spec.global_wiring(layer, m);
                expect_len(weights.len(), wiring.pair_count() * kind.param_size(k), layer)?;
                global_forward(kind, k, wiring, weights, h1_ref, prev, &mut cache)
            }
        };
        layers.push(next);
        atw.push(cache);
    }
    Ok(StackCache { layers, atw })
}

fn expect_len(got: usize, expect: usize, layer: usize) -> Result<()> {
    if got != expect {
        return Err(Error::Dimension(format!(
            "layer {layer}: weight block length {got} vs expected {expect}"
        )));
    }
    Ok(())
}

/// Backward pass through the whole stack.
///
/// `upstream[l-1]` is the loss gradient arriving at layer l's terms from the
/// aggregator. Weight gradients accumulate into `block_grads`; the total
/// first-layer gradient (aggregator fan-in plus every layer's use of h_1)
/// accumulates into `h1_grad`.
#[allow(clippy::too_many_arguments)]
pub fn stack_backward(
    cache: &StackCache,
    spec: &PoolingSpec,
    kind: InteractionKind,
    k: usize,
    blocks: &[Vec<f64>],
    upstream: &[Vec<Vec<f64>>],
    block_grads: &mut [Vec<f64>],
    h1_grad: &mut [Vec<f64>],
) -> Result<()> {
    let m = cache.layers[0].len();
    if upstream.len() != spec.depth {
        return Err(Error::Dimension(format!(
            "stack_backward: upstream for {} layers, depth is {}",
            upstream.len(),
            spec.depth
        )));
    }
    let h1 = &cache.layers[0];
    let mut carry = upstream[spec.depth - 1].clone();
    for layer in (2..=spec.depth).rev() {
        let prev = &cache.layers[layer - 2];
        let mut gprev = vec![vec![0.0; k]; prev.len()];
        match spec.kind {
            PoolingKind::Field => field_backward(
                kind,
                k,
                spec.field_wiring(m),
                spec.residual,
                &blocks[layer - 2],
                h1,
                prev,
                &carry,
                &cache.atw[layer - 2],
                &mut block_grads[layer - 2],
                h1_grad,
                &mut gprev,
            ),
            PoolingKind::Global => global_backward(
                kind,
                k,
                spec.global_wiring(layer, m),
                &blocks[layer - 2],
                h1,
                prev,
                &carry,
                &cache.atw[layer - 2],
                &mut block_grads[layer - 2],
                h1_grad,
                &mut gprev,
            ),
        }
        // Fold in the aggregator's direct gradient for the layer below.
        for (g, u) in gprev.iter_mut().zip(&upstream[layer - 2]) {
            add_into(g, u);
        }
        carry = gprev;
    }
    for (g, c) in h1_grad.iter_mut().zip(&carry) {
        add_into(g, c);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::ALL_KINDS;

    fn table_from_rows(k: usize, rows: &[&[f64]]) -> EmbeddingTable {
        EmbeddingTable {
            k,
            vocabs: rows.iter().map(|_| 1u32).collect(),
            fields: rows.iter().map(|r| r.to_vec()).collect(),
        }
    }

    #[test]
    fn first_layer_examples() {
        // One-hot lookups.
        let table = EmbeddingTable {
            k: 2,
            vocabs: vec![2, 2],
            fields: vec![vec![1.0, 0.0, 3.0, 2.0], vec![5.0, 6.0, 7.0, 8.0]],
        };
        let h1 = build_first_layer(
            &[FieldInput::Cat(vec![1]), FieldInput::Cat(vec![0])],
            table.view(),
        )
        .unwrap();
        assert_eq!(h1, vec![vec![3.0, 2.0], vec![5.0, 6.0]]);

        // Multi-hot mean pooling.
        let h1 = build_first_layer(
            &[FieldInput::Cat(vec![0, 1]), FieldInput::Cat(vec![])],
            table.view(),
        )
        .unwrap();
        assert_eq!(h1[0], vec![2.0, 1.0]);
        assert_eq!(h1[1], vec![0.0, 0.0]);

        // Out-of-range feature.
        let err = build_first_layer(&[FieldInput::Cat(vec![5]), FieldInput::Cat(vec![0])], table.view());
        assert!(matches!(err, Err(Error::Lookup { .. })));

        // Numeric scaling.
        let table = table_from_rows(2, &[&[0.5, -1.0]]);
        let h1 = build_first_layer(&[FieldInput::Num(2.0)], table.view()).unwrap();
        assert_eq!(h1[0], vec![1.0, -2.0]);
    }

    fn naive_wiring(m: usize, include_self: bool) -> FieldWiring {
        FieldWiring { m, include_self, pair_once: false, symmetric_share: false }
    }

    #[test]
    fn field_pool_examples() {
        // M=1, include_self, Naive.
        let out = field_pool(
            &[vec![2.0, 3.0]],
            &[vec![1.0, 2.0]],
            InteractionKind::Naive,
            2,
            &[],
            naive_wiring(1, true),
            false,
        )
        .unwrap();
        assert_eq!(out, vec![vec![2.0, 6.0]]);

        // Orthogonal one-hot embeddings: cross terms vanish.
        let basis = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let out = field_pool(
            &basis,
            &basis,
            InteractionKind::Naive,
            2,
            &[],
            naive_wiring(2, false),
            false,
        )
        .unwrap();
        assert_eq!(out, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);

        // Residual passes the previous layer through.
        let out = field_pool(
            &basis,
            &basis,
            InteractionKind::Naive,
            2,
            &[],
            naive_wiring(2, false),
            true,
        )
        .unwrap();
        assert_eq!(out, basis);
    }

    #[test]
    fn global_pool_examples() {
        // Degenerate widths coincide with the field case.
        let out = global_pool(
            &[vec![2.0, 3.0]],
            &[vec![1.0, 2.0]],
            InteractionKind::Naive,
            2,
            &[],
            GlobalWiring { h_out: 1, h_prev: 1, m: 1 },
        )
        .unwrap();
        assert_eq!(out, vec![vec![2.0, 6.0]]);

        // Zero weights annihilate.
        let out = global_pool(
            &[vec![1.0, 1.0], vec![2.0, 2.0]],
            &[vec![1.0, 2.0], vec![3.0, 4.0]],
            InteractionKind::Weighted,
            2,
            &vec![0.0; 2 * 2 * 2],
            GlobalWiring { h_out: 2, h_prev: 2, m: 2 },
        )
        .unwrap();
        assert_eq!(out, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);

        // Sum of two Hadamard products.
        let out = global_pool(
            &[vec![1.0, 1.0]],
            &[vec![1.0, 2.0], vec![3.0, 4.0]],
            InteractionKind::Naive,
            2,
            &[],
            GlobalWiring { h_out: 1, h_prev: 1, m: 2 },
        )
        .unwrap();
        assert_eq!(out, vec![vec![4.0, 6.0]]);
    }

    #[test]
    fn naive_fast_path_matches_generic() {
        // The closed-form Naive pooling must agree with per-pair Weighted
        // pooling at w = 1 in every wiring.
        let mut rng = SeededRng::new(77, 0);
        let (m, k) = (4, 3);
        for include_self in [false, true] {
            for pair_once in [false, true] {
                if pair_once && include_self {
                    continue;
                }
                for residual in [false, true] {
                    let h1: Vec<Vec<f64>> =
                        (0..m).map(|_| (0..k).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
                    let hp: Vec<Vec<f64>> =
                        (0..m).map(|_| (0..k).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
                    let wiring = FieldWiring { m, include_self, pair_once, symmetric_share: false };
                    let fast = field_pool(&hp, &h1, InteractionKind::Naive, k, &[], wiring, residual)
                        .unwrap();
                    let ones = vec![1.0; wiring.pair_count()];
                    let generic =
                        field_pool(&hp, &h1, InteractionKind::Weighted, k, &ones, wiring, residual)
                            .unwrap();
                    for (f, g) in fast.iter().zip(&generic) {
                        for (a, b) in f.iter().zip(g) {
                            assert!((a - b).abs() < 1e-12, "fast {a} vs generic {b}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pair_sum_matches_doubled_brute_force() {
        // Symmetrically shared L=2 field pooling, summed over all terms and
        // components, counts each unordered pair twice.
        use crate::interaction::{interact, PairWeight};
        let mut rng = SeededRng::new(99, 0);
        let (m, k) = (4, 3);
        for kind in ALL_KINDS {
            let h1: Vec<Vec<f64>> =
                (0..m).map(|_| (0..k).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
            let wiring = FieldWiring { m, include_self: false, pair_once: false, symmetric_share: true };
            let stride = kind.param_size(k);
            let mut weights = vec![0.0; wiring.pair_count() * stride];
            for w in &mut weights {
                *w = rng.uniform(-1.0, 1.0);
            }
            let pooled = field_pool(&h1, &h1, kind, k, &weights, wiring, false).unwrap();
            let total: f64 = pooled.iter().flat_map(|t| t.iter()).sum();

            let mut oracle = 0.0;
            for i in 0..m {
                for j in (i + 1)..m {
                    let slot = wiring.slot(j, i);
                    let w = PairWeight {
                        kind,
                        values: weights[slot * stride..(slot + 1) * stride].to_vec(),
                    };
                    oracle += interact(&h1[i], &h1[j], &w).unwrap().iter().sum::<f64>();
                }
            }
            assert!(
                (total - 2.0 * oracle).abs() < 1e-10 * (1.0 + oracle.abs()),
                "{kind:?}: pooled {total} vs 2x oracle {}",
                2.0 * oracle
            );
        }
    }

    #[test]
    fn residual_identity_with_zero_weights() {
        let mut rng = SeededRng::new(5, 0);
        let (m, k, depth) = (3, 2, 4);
        let h1: Vec<Vec<f64>> =
            (0..m).map(|_| (0..k).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let mut spec = PoolingSpec::field(depth);
        spec.residual = true;
        let wiring = spec.field_wiring(m);
        let blocks: Vec<Vec<f64>> = (2..=depth).map(|_| vec![0.0; wiring.pair_count()]).collect();
        let cache = stack_forward(h1.clone(), &spec, InteractionKind::Weighted, k, &blocks).unwrap();
        for layer in &cache.layers {
            assert_eq!(layer, &h1);
        }
    }

    #[test]
    fn order_property_scaling() {
        // With t_n = x_n * ones, include_self, Naive, no residual, layer l
        // terms are degree-l monomial sums: scaling inputs by c scales
        // layer l by c^l.
        let mut rng = SeededRng::new(8, 0);
        let (m, k, depth) = (3, 2, 4);
        let xs: Vec<f64> = (0..m).map(|_| rng.uniform(0.5, 1.5)).collect();
        let h1: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x; k]).collect();
        let mut spec = PoolingSpec::field(depth);
        spec.include_self = true;
        let blocks: Vec<Vec<f64>> = (2..=depth).map(|_| Vec::new()).collect();
        let base = stack_forward(h1, &spec, InteractionKind::Naive, k, &blocks).unwrap();

        let c = 1.3;
        let h1s: Vec<Vec<f64>> = xs.iter().map(|&x| vec![c * x; k]).collect();
        let scaled = stack_forward(h1s, &spec, InteractionKind::Naive, k, &blocks).unwrap();
        for (l, (bl, sl)) in base.layers.iter().zip(&scaled.layers).enumerate() {
            let factor = c.powi(l as i32 + 1);
            for (bt, st) in bl.iter().zip(sl) {
                for (b, s) in bt.iter().zip(st) {
                    assert!(
                        (s - factor * b).abs() < 1e-10 * (1.0 + b.abs()),
                        "layer {}: {s} vs {b} * c^{}",
                        l + 1,
                        l + 1
                    );
                }
            }
        }
    }

    #[test]
    fn depth_one_stack_is_first_layer() {
        let h1 = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let spec = PoolingSpec::field(1);
        let cache = stack_forward(h1.clone(), &spec, InteractionKind::Naive, 2, &[]).unwrap();
        assert_eq!(cache.layers, vec![h1.clone()]);

        let upstream = vec![vec![vec![0.5, 0.5], vec![1.0, -1.0]]];
        let mut gh1 = vec![vec![0.0; 2]; 2];
        stack_backward(&cache, &spec, InteractionKind::Naive, 2, &[], &upstream, &mut [], &mut gh1)
            .unwrap();
        assert_eq!(gh1, upstream[0]);
    }

    #[test]
    fn parameter_count_formulas() {
        // Field, unshared: (L-1) * M * (M - delta) * s.
        let (m, k, depth) = (4, 3, 5);
        for kind in ALL_KINDS {
            let s = kind.param_size(k);
            for include_self in [false, true] {
                let mut spec = PoolingSpec::field(depth);
                spec.include_self = include_self;
                let delta = if include_self { 0 } else { 1 };
                let expect = (depth - 1) * m * (m - delta) * s;
                assert_eq!(spec.total_weight_scalars(m, kind, k), expect);
            }
            // Global: sum_l H_l * H_{l-1} * M * s with H_1 = M.
            let spec = PoolingSpec::global(depth, 2);
            let mut expect = 0;
            let mut h_prev = m;
            for _ in 2..=depth {
                expect += 2 * h_prev * m * s;
                h_prev = 2;
            }
            assert_eq!(spec.total_weight_scalars(m, kind, k), expect);
        }
    }

    /// Finite-difference check of the full stack backward.
    fn stack_gradcheck(spec: &PoolingSpec, kind: InteractionKind, m: usize, k: usize, seed: u64) {
        let mut rng = SeededRng::new(seed, 0);
        let h1: Vec<Vec<f64>> =
            (0..m).map(|_| (0..k).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let mut blocks = init_layer_blocks(spec, m, kind, k, &mut rng);
        for b in blocks.iter_mut().flat_map(|b| b.iter_mut()) {
            *b = rng.uniform(-1.0, 1.0);
        }
        // Random linear functional over every term of every layer.
        let probe = stack_forward(h1.clone(), spec, kind, k, &blocks).unwrap();
        let upstream: Vec<Vec<Vec<f64>>> = probe
            .layers
            .iter()
            .map(|terms| {
                terms
                    .iter()
                    .map(|t| t.iter().map(|_| rng.uniform(-1.0, 1.0)).collect())
                    .collect()
            })
            .collect();

        let loss = |h1: &Vec<Vec<f64>>, blocks: &[Vec<f64>]| -> f64 {
            let cache = stack_forward(h1.clone(), spec, kind, k, blocks).unwrap();
            cache
                .layers
                .iter()
                .zip(&upstream)
                .flat_map(|(lt, lu)| lt.iter().zip(lu))
                .flat_map(|(t, u)| t.iter().zip(u))
                .map(|(x, w)| x * w)
                .sum()
        };

        let cache = stack_forward(h1.clone(), spec, kind, k, &blocks).unwrap();
        let mut gw: Vec<Vec<f64>> = blocks.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut gh1 = vec![vec![0.0; k]; m];
        stack_backward(&cache, spec, kind, k, &blocks, &upstream, &mut gw, &mut gh1).unwrap();

        let h = 1e-5;
        let check = |analytic: f64, numeric: f64, what: String| {
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic - numeric).abs() / denom < 1e-4,
                "{what}: analytic {analytic} vs numeric {numeric}"
            );
        };
        for n in 0..m {
            for i in 0..k {
                let mut hp = h1.clone();
                let mut hm = h1.clone();
                hp[n][i] += h;
                hm[n][i] -= h;
                check(gh1[n][i], (loss(&hp, &blocks) - loss(&hm, &blocks)) / (2.0 * h), format!("dh1[{n}][{i}]"));
            }
        }
        for (bi, block) in blocks.iter().enumerate() {
            for wi in 0..block.len() {
                let mut bp = blocks.clone();
                let mut bm = blocks.clone();
                bp[bi][wi] += h;
                bm[bi][wi] -= h;
                check(gw[bi][wi], (loss(&h1, &bp) - loss(&h1, &bm)) / (2.0 * h), format!("dw[{bi}][{wi}]"));
            }
        }
    }

    #[test]
    fn field_stack_gradients_match_central_differences() {
        for kind in ALL_KINDS {
            let mut spec = PoolingSpec::field(3);
            spec.include_self = false;
            stack_gradcheck(&spec, kind, 3, 2, 41);

            // Residual + shared variants.
            spec.residual = true;
            stack_gradcheck(&spec, kind, 3, 2, 42);
            spec.residual = false;
            spec.symmetric_share = true;
            stack_gradcheck(&spec, kind, 3, 2, 43);
            spec.symmetric_share = false;
            spec.pair_once = true;
            stack_gradcheck(&spec, kind, 3, 2, 44);
        }
    }

    #[test]
    fn global_stack_gradients_match_central_differences() {
        for kind in ALL_KINDS {
            let spec = PoolingSpec::global(3, 2);
            stack_gradcheck(&spec, kind, 2, 2, 51);
        }
    }
}
