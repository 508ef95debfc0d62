//! Layer aggregation: combining the layer stack into the representation
//! vector `r` that feeds the classifier.
//!
//! Four weight granularities are supported - none (Direct), one scalar per
//! layer, one per term, one per element. Two combine modes exist because
//! field pooling keeps all layer widths equal (cross-layer Sum is the
//! literal table form) while global pooling generally does not (Concat).
//! `term_scalar_pool` sum-pools each term to a scalar before weighting,
//! which is how CIN's output head fits the Term aggregator.

use crate::error::{Error, Result};

/// Weight granularity of the aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AggregatorKind {
    /// No weights; layers combine as-is.
    Direct,
    /// One weight per layer.
    Layer,
    /// One weight per term.
    Term,
    /// One weight per element.
    Element,
}

impl AggregatorKind {
    /// Code letter used in three-letter model codes.
    pub fn letter(self) -> char {
        match self {
            AggregatorKind::Direct => 'D',
            AggregatorKind::Layer => 'L',
            AggregatorKind::Term => 'T',
            AggregatorKind::Element => 'E',
        }
    }

    /// Parses a code letter (case-insensitive).
    pub fn from_letter(c: char) -> Result<Self> {
        match c.to_ascii_uppercase() {
            'D' => Ok(AggregatorKind::Direct),
            'L' => Ok(AggregatorKind::Layer),
            'T' => Ok(AggregatorKind::Term),
            'E' => Ok(AggregatorKind::Element),
            other => Err(Error::Parse(format!(
                "unknown aggregator letter '{other}' (expected D, L, T or E)"
            ))),
        }
    }
}

/// How weighted layers combine into `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CombineMode {
    /// Sum across layers; requires equal layer widths.
    Sum,
    /// Concatenate across layers; always valid.
    Concat,
}

/// Full aggregator configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatorSpec {
    /// Weight granularity.
    pub kind: AggregatorKind,
    /// Sum or Concat across layers.
    pub mode: CombineMode,
    /// Whether the raw embedding layer participates.
    pub include_first: bool,
    /// Sum-pool each term to a scalar before weighting.
    pub term_scalar_pool: bool,
}

impl AggregatorSpec {
    /// Direct aggregation over all layers.
    pub fn direct(mode: CombineMode) -> Self {
        AggregatorSpec {
            kind: AggregatorKind::Direct,
            mode,
            include_first: true,
            term_scalar_pool: false,
        }
    }

    /// Elements kept per term after optional scalar pooling.
    fn elem_k(&self, k: usize) -> usize {
        if self.term_scalar_pool {
            1
        } else {
            k
        }
    }

    /// 0-based indices of participating layers.
    pub fn participating(&self, depth: usize) -> std::ops::Range<usize> {
        if self.include_first {
            0..depth
        } else {
            1..depth
        }
    }

    fn check(&self, widths: &[usize]) -> Result<()> {
        let part = self.participating(widths.len());
        if part.is_empty() {
            return Err(Error::Config(
                "aggregation over an empty layer set (depth 1 with the first layer excluded)"
                    .into(),
            ));
        }
        if self.mode == CombineMode::Sum {
            let w0 = widths[part.clone().next().unwrap()];
            if widths[part].iter().any(|&w| w != w0) {
                return Err(Error::Config(
                    "Sum combine mode requires equal layer widths; use Concat".into(),
                ));
            }
        }
        Ok(())
    }

    /// Number of aggregator weights for the given layer widths.
    pub fn weight_count(&self, widths: &[usize], k: usize) -> usize {
        let part = self.participating(widths.len());
        let ek = self.elem_k(k);
        match self.kind {
            AggregatorKind::Direct => 0,
            AggregatorKind::Layer => part.len(),
            AggregatorKind::Term => widths[part].iter().sum(),
            AggregatorKind::Element => widths[part].iter().map(|w| w * ek).sum::<usize>(),
        }
    }

    /// Fresh weights, initialized to 1.0.
    pub fn init_weights(&self, widths: &[usize], k: usize) -> Vec<f64> {
        vec![1.0; self.weight_count(widths, k)]
    }

    /// Length of the representation vector `r`.
    pub fn output_len(&self, widths: &[usize], k: usize) -> Result<usize> {
        self.check(widths)?;
        let part = self.participating(widths.len());
        let ek = self.elem_k(k);
        Ok(match self.mode {
            CombineMode::Sum => widths[part.clone().next().unwrap()] * ek,
            CombineMode::Concat => widths[part].iter().map(|w| w * ek).sum(),
        })
    }
}

/// Weight index bookkeeping shared by forward and backward.
struct Walk {
    layer_pos: usize,
    term_base: usize,
    elem_base: usize,
    out_base: usize,
}

/// Combines the layer stack into `r`.
///
/// `stack[l-1]` holds layer l's terms; `weights` is the flat aggregator
/// weight vector in (layer, term, element) traversal order.
pub fn aggregate(stack: &[Vec<Vec<f64>>], spec: &AggregatorSpec, weights: &[f64], k: usize) -> Result<Vec<f64>> {
    let widths: Vec<usize> = stack.iter().map(|l| l.len()).collect();
    let out_len = spec.output_len(&widths, k)?;
    let expect = spec.weight_count(&widths, k);
    if weights.len() != expect {
        return Err(Error::Dimension(format!(
            "aggregate: {} weights vs expected {expect}",
            weights.len()
        )));
    }
    let ek = spec.elem_k(k);
    let mut out = vec![0.0; out_len];
    let mut w = Walk { layer_pos: 0, term_base: 0, elem_base: 0, out_base: 0 };
    for li in spec.participating(stack.len()) {
        let terms = &stack[li];
        for (n, term) in terms.iter().enumerate() {
            for e in 0..ek {
                let val = if spec.term_scalar_pool {
                    term.iter().sum::<f64>()
                } else {
                    term[e]
                };
                let weight = match spec.kind {
                    AggregatorKind::Direct => 1.0,
                    AggregatorKind::Layer => weights[w.layer_pos],
                    AggregatorKind::Term => weights[w.term_base + n],
                    AggregatorKind::Element => weights[w.elem_base + n * ek + e],
                };
                let slot = match spec.mode {
                    CombineMode::Sum => n * ek + e,
                    CombineMode::Concat => w.out_base + n * ek + e,
                };
                out[slot] += weight * val;
            }
        }
        w.layer_pos += 1;
        w.term_base += terms.len();
        w.elem_base += terms.len() * ek;
        w.out_base += terms.len() * ek;
    }
    Ok(out)
}

/// Exact partials of [`aggregate`]: per-layer term gradients (zero for
/// non-participating layers) and aggregator weight gradients.
pub fn aggregate_backward(
    stack: &[Vec<Vec<f64>>],
    spec: &AggregatorSpec,
    weights: &[f64],
    k: usize,
    upstream: &[f64],
) -> Result<(Vec<Vec<Vec<f64>>>, Vec<f64>)> {
    let widths: Vec<usize> = stack.iter().map(|l| l.len()).collect();
    let out_len = spec.output_len(&widths, k)?;
    if upstream.len() != out_len {
        return Err(Error::Dimension(format!(
            "aggregate_backward: upstream length {} vs r length {out_len}",
            upstream.len()
        )));
    }
    let ek = spec.elem_k(k);
    let mut term_grads: Vec<Vec<Vec<f64>>> = stack
        .iter()
        .map(|terms| terms.iter().map(|t| vec![0.0; t.len()]).collect())
        .collect();
    let mut weight_grads = vec![0.0; weights.len()];

    let mut w = Walk { layer_pos: 0, term_base: 0, elem_base: 0, out_base: 0 };
    for li in spec.participating(stack.len()) {
        let terms = &stack[li];
        for (n, term) in terms.iter().enumerate() {
            for e in 0..ek {
                let val = if spec.term_scalar_pool {
                    term.iter().sum::<f64>()
                } else {
                    term[e]
                };
                let slot = match spec.mode {
                    CombineMode::Sum => n * ek + e,
                    CombineMode::Concat => w.out_base + n * ek + e,
                };
                let u = upstream[slot];
                let (weight, wslot) = match spec.kind {
                    AggregatorKind::Direct => (1.0, None),
                    AggregatorKind::Layer => (weights[w.layer_pos], Some(w.layer_pos)),
                    AggregatorKind::Term => (weights[w.term_base + n], Some(w.term_base + n)),
                    AggregatorKind::Element => {
                        let s = w.elem_base + n * ek + e;
                        (weights[s], Some(s))
                    }
                };
                if let Some(slot) = wslot {
                    weight_grads[slot] += u * val;
                }
                let gval = u * weight;
                if spec.term_scalar_pool {
                    for g in term_grads[li][n].iter_mut() {
                        *g += gval;
                    }
                } else {
                    term_grads[li][n][e] += gval;
                }
            }
        }
        w.layer_pos += 1;
        w.term_base += terms.len();
        w.elem_base += terms.len() * ek;
        w.out_base += terms.len() * ek;
    }
    Ok((term_grads, weight_grads))
}

/// All four kinds, in code-letter order.
pub const ALL_AGGREGATORS: [AggregatorKind; 4] = [
    AggregatorKind::Direct,
    AggregatorKind::Layer,
    AggregatorKind::Term,
    AggregatorKind::Element,
];
