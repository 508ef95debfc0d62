//! Model assembly: a three-letter code picks an interaction function, a
//! layer pooling and a layer aggregator; the result is a trainable model
//! with hand-derived gradients end to end.

mod checkpoint;
mod presets;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use presets::{preset, PRESET_NAMES};
pub use train::{
    adam_step, batch_gradients, batch_gradients_serial, evaluate, predict_scores, train,
    AdamState, DropoutKey, EpochRecord, EvalReport, TrainHistory, TrainOptions,
};

use crate::aggregate::{aggregate, aggregate_backward, AggregatorKind, AggregatorSpec, CombineMode};
use crate::data::{FieldInput, Task};
use crate::error::{Error, Result};
use crate::interaction::InteractionKind;
use crate::layers::{
    build_first_layer, first_layer_backward, init_layer_blocks, stack_backward, stack_forward,
    EmbeddingView, PoolingKind, PoolingSpec, StackCache,
};
use crate::linalg::SeededRng;

/// Parsed three-letter model code, e.g. `PFL` or `PF'D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelCode {
    /// Interaction function letter (N/W/D/P).
    pub interaction: InteractionKind,
    /// Pooling letter (F/G).
    pub pooling: PoolingKind,
    /// Residual field pooling (the F' variant).
    pub residual: bool,
    /// Aggregator letter (D/L/T/E).
    pub aggregator: AggregatorKind,
}

impl std::fmt::Display for ModelCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}{}{}{}",
            self.interaction.letter(),
            self.pooling.letter(),
            if self.residual { "'" } else { "" },
            self.aggregator.letter()
        )
    }
}

/// Parses a model code. Case-insensitive; the residual pooling is spelled
/// either `F'` or `R`.
pub fn parse_code(text: &str) -> Result<ModelCode> {
    let chars: Vec<char> = text.trim().chars().collect();
    let mut pos = 0;
    fn take(chars: &[char], pos: &mut usize, text: &str, what: &str) -> Result<char> {
        let c = chars.get(*pos).copied().ok_or_else(|| {
            Error::Parse(format!("model code '{text}' too short: missing {what} letter"))
        })?;
        *pos += 1;
        Ok(c)
    }

    let interaction = InteractionKind::from_letter(take(&chars, &mut pos, text, "interaction")?)?;
    let pool_char = take(&chars, &mut pos, text, "pooling")?;
    let (pooling, mut residual) = match pool_char.to_ascii_uppercase() {
        'F' => (PoolingKind::Field, false),
        'G' => (PoolingKind::Global, false),
        'R' => (PoolingKind::Field, true),
        other => {
            return Err(Error::Parse(format!(
                "unknown pooling letter '{other}' (expected F, G, F' or R)"
            )))
        }
    };
    if chars.get(pos) == Some(&'\'') {
        if pooling != PoolingKind::Field || residual {
            return Err(Error::Parse("residual marker ' only follows F".into()));
        }
        residual = true;
        pos += 1;
    }
    let aggregator = AggregatorKind::from_letter(take(&chars, &mut pos, text, "aggregator")?)?;
    if pos != chars.len() {
        return Err(Error::Parse(format!(
            "trailing character '{}' in model code '{text}'",
            chars[pos]
        )));
    }
    Ok(ModelCode { interaction, pooling, residual, aggregator })
}

/// Classifier head applied to the representation vector.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ClassifierSpec {
    /// Sum of the representation entries; no parameters.
    SumPool,
    /// One linear layer.
    Linear,
    /// Small MLP with ReLU hidden layers of the given sizes.
    Mlp(Vec<usize>),
}

/// Full structural configuration of a model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Component triplet.
    pub code: ModelCode,
    /// Field count M.
    pub m: usize,
    /// Embedding dimension K.
    pub k: usize,
    /// Layer count L (including the embedding layer).
    pub l: usize,
    /// Global pooling width H (uniform across layers).
    pub global_width: usize,
    /// Field pooling: include the self pair.
    pub include_self: bool,
    /// Field pooling: one stored weight per unordered pair.
    pub symmetric_share: bool,
    /// Field pooling: pool each unordered pair exactly once (classic
    /// second-order reconstructions).
    pub pair_once: bool,
    /// Classifier head.
    pub classifier: ClassifierSpec,
    /// Per-feature first-order weights plus a global bias.
    pub first_order: bool,
    /// Whether the embedding layer participates in aggregation.
    pub agg_include_first: bool,
    /// Sum-pool terms to scalars before aggregation (CIN-style head).
    pub term_scalar_pool: bool,
    /// Cross-layer combine mode.
    pub combine: CombineMode,
    /// Dropout rate on the representation at train time, in [0, 1).
    pub dropout_rate: f64,
    /// Prediction task.
    pub task: Task,
    /// Vocabulary size per field.
    pub vocabs: Vec<u32>,
}

impl ModelConfig {
    /// Config for a parsed code with library defaults: no sharing, no self
    /// pairs, sum classifier, Sum combine for field pooling and Concat for
    /// global pooling.
    pub fn from_code(code: ModelCode, m: usize, k: usize, l: usize, vocabs: &[u32], task: Task) -> Self {
        let combine = match code.pooling {
            PoolingKind::Field => CombineMode::Sum,
            PoolingKind::Global => CombineMode::Concat,
        };
        ModelConfig {
            code,
            m,
            k,
            l,
            global_width: 10,
            include_self: false,
            symmetric_share: false,
            pair_once: false,
            classifier: ClassifierSpec::SumPool,
            first_order: false,
            agg_include_first: true,
            term_scalar_pool: false,
            combine,
            dropout_rate: 0.0,
            task,
            vocabs: vocabs.to_vec(),
        }
    }

    /// Checks invariants.
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if self.l < 1 {
            return Err(Error::Config("L must be >= 1".into()));
        }
        if self.vocabs.len() != self.m {
            return Err(Error::Config(format!(
                "{} vocabs for M={} fields",
                self.vocabs.len(),
                self.m
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        if self.code.residual && self.code.pooling != PoolingKind::Field {
            return Err(Error::Config("residual pooling requires Field".into()));
        }
        self.pooling_spec().validate(self.m)?;
        self.agg_spec().output_len(&self.layer_widths(), self.k)?;
        Ok(())
    }

    /// Pooling configuration derived from the code and flags.
    pub fn pooling_spec(&self) -> PoolingSpec {
        PoolingSpec {
            kind: self.code.pooling,
            residual: self.code.residual,
            depth: self.l,
            global_widths: match self.code.pooling {
                PoolingKind::Field => Vec::new(),
                PoolingKind::Global => vec![self.global_width; self.l.saturating_sub(1)],
            },
            include_self: self.include_self,
            pair_once: self.pair_once,
            symmetric_share: self.symmetric_share,
        }
    }

    /// Aggregator configuration derived from the code and flags.
    pub fn agg_spec(&self) -> AggregatorSpec {
        AggregatorSpec {
            kind: self.code.aggregator,
            mode: self.combine,
            include_first: self.agg_include_first,
            term_scalar_pool: self.term_scalar_pool,
        }
    }

    /// Term count per layer, layer 1 first.
    pub fn layer_widths(&self) -> Vec<usize> {
        (1..=self.l)
            .map(|layer| self.pooling_spec().width(layer, self.m))
            .collect()
    }

    /// Length of the representation vector.
    pub fn representation_len(&self) -> Result<usize> {
        self.agg_spec().output_len(&self.layer_widths(), self.k)
    }

    /// Classifier parameter block shapes (lengths in traversal order).
    fn classifier_shapes(&self) -> Result<Vec<usize>> {
        let r_len = self.representation_len()?;
        Ok(match &self.classifier {
            ClassifierSpec::SumPool => Vec::new(),
            ClassifierSpec::Linear => vec![r_len, 1],
            ClassifierSpec::Mlp(hidden) => {
                let mut shapes = Vec::new();
                let mut inp = r_len;
                for &h in hidden {
                    shapes.push(inp * h);
                    shapes.push(h);
                    inp = h;
                }
                shapes.push(inp);
                shapes.push(1);
                shapes
            }
        })
    }
}

/// Exact count of trainable scalars for a config.
pub fn count_params(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let emb: usize = config.vocabs.iter().map(|&v| v as usize * config.k).sum();
    let interaction = config
        .pooling_spec()
        .total_weight_scalars(config.m, config.code.interaction, config.k);
    let agg = config.agg_spec().weight_count(&config.layer_widths(), config.k);
    let classifier: usize = config.classifier_shapes()?.iter().sum();
    let first_order = if config.first_order {
        config.vocabs.iter().map(|&v| v as usize).sum::<usize>() + 1
    } else {
        0
    };
    Ok(emb + interaction + agg + classifier + first_order)
}

/// All trainable parameters, grouped into named blocks with a fixed
/// traversal order. Gradients and Adam moments reuse the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    /// Per-field embedding matrices (vocab x K, row-major).
    pub embeddings: Vec<Vec<f64>>,
    /// Per-field first-order weights (empty when disabled).
    pub first_order: Vec<Vec<f64>>,
    /// Global bias (one entry when first-order is enabled).
    pub bias: Vec<f64>,
    /// Interaction weight blocks for layers 2..=L.
    pub layer_blocks: Vec<Vec<f64>>,
    /// Aggregator weights.
    pub agg_weights: Vec<f64>,
    /// Classifier blocks.
    pub classifier: Vec<Vec<f64>>,
}

impl ParamStore {
    /// Immutable views of all blocks in checkpoint order.
    pub fn blocks(&self) -> Vec<&Vec<f64>> {
        let mut out: Vec<&Vec<f64>> = Vec::new();
        out.extend(self.embeddings.iter());
        out.extend(self.first_order.iter());
        out.push(&self.bias);
        out.extend(self.layer_blocks.iter());
        out.push(&self.agg_weights);
        out.extend(self.classifier.iter());
        out
    }

    /// Mutable views of all blocks in checkpoint order.
    pub fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        out.extend(self.embeddings.iter_mut());
        out.extend(self.first_order.iter_mut());
        out.push(&mut self.bias);
        out.extend(self.layer_blocks.iter_mut());
        out.push(&mut self.agg_weights);
        out.extend(self.classifier.iter_mut());
        out
    }

    /// Same shape, all zeros.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            embeddings: self.embeddings.iter().map(|b| vec![0.0; b.len()]).collect(),
            first_order: self.first_order.iter().map(|b| vec![0.0; b.len()]).collect(),
            bias: vec![0.0; self.bias.len()],
            layer_blocks: self.layer_blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
            agg_weights: vec![0.0; self.agg_weights.len()],
            classifier: self.classifier.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Total stored scalars.
    pub fn total_scalars(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &ParamStore) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    /// Elementwise scale.
    pub fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            for v in block.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// A configured model with its parameters.
#[derive(Debug, Clone)]
pub struct IpaModel {
    /// Structural configuration.
    pub config: ModelConfig,
    /// Trainable parameters.
    pub params: ParamStore,
}

const STREAM_EMB_INIT: u64 = 0xE0B;
const STREAM_WEIGHT_INIT: u64 = 0x3A1;
const STREAM_CLF_INIT: u64 = 0xC1F;

impl IpaModel {
    /// Fresh model with deterministic seeded initialization: embeddings
    /// N(0, 0.01), interaction weights near identity, aggregator weights 1,
    /// linear classifier weights zero, MLP hidden layers He-scaled.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let k = config.k;

        let mut emb_rng = SeededRng::new(seed, STREAM_EMB_INIT);
        let embeddings: Vec<Vec<f64>> = config
            .vocabs
            .iter()
            .map(|&v| {
                (0..v as usize * k)
                    .map(|_| 0.01 * emb_rng.standard_normal())
                    .collect()
            })
            .collect();

        let mut w_rng = SeededRng::new(seed, STREAM_WEIGHT_INIT);
        let layer_blocks = init_layer_blocks(
            &config.pooling_spec(),
            config.m,
            config.code.interaction,
            k,
            &mut w_rng,
        );

        let agg_weights = config.agg_spec().init_weights(&config.layer_widths(), k);

        let mut clf_rng = SeededRng::new(seed, STREAM_CLF_INIT);
        let classifier = init_classifier(&config, &mut clf_rng)?;

        let (first_order, bias) = if config.first_order {
            (
                config.vocabs.iter().map(|&v| vec![0.0; v as usize]).collect(),
                vec![0.0],
            )
        } else {
            (Vec::new(), Vec::new())
        };

        Ok(IpaModel {
            config,
            params: ParamStore {
                embeddings,
                first_order,
                bias,
                layer_blocks,
                agg_weights,
                classifier,
            },
        })
    }

    /// Borrowed embedding view for layer construction.
    pub fn embedding_view(&self) -> EmbeddingView<'_> {
        EmbeddingView {
            k: self.config.k,
            vocabs: &self.config.vocabs,
            fields: &self.params.embeddings,
        }
    }

    /// Raw score for one sample (logit for classification). No dropout.
    pub fn forward(&self, sample: &[FieldInput]) -> Result<f64> {
        Ok(self.forward_traced(sample, None)?.score)
    }

    /// Forward pass caching everything the backward pass needs.
    pub fn forward_traced(
        &self,
        sample: &[FieldInput],
        dropout_rng: Option<&mut SeededRng>,
    ) -> Result<SampleTrace> {
        let cfg = &self.config;
        if sample.len() != cfg.m {
            return Err(Error::Dimension(format!(
                "sample has {} fields, model expects {}",
                sample.len(),
                cfg.m
            )));
        }
        let h1 = build_first_layer(sample, self.embedding_view())?;
        let stack = stack_forward(
            h1,
            &cfg.pooling_spec(),
            cfg.code.interaction,
            cfg.k,
            &self.params.layer_blocks,
        )?;
        let r_pre = aggregate(&stack.layers, &cfg.agg_spec(), &self.params.agg_weights, cfg.k)?;

        let (r, dropout_mask) = match dropout_rng {
            Some(rng) if cfg.dropout_rate > 0.0 => {
                let keep = 1.0 - cfg.dropout_rate;
                let mask: Vec<f64> = r_pre
                    .iter()
                    .map(|_| if rng.next_f64() < cfg.dropout_rate { 0.0 } else { 1.0 / keep })
                    .collect();
                let r = r_pre.iter().zip(&mask).map(|(v, m)| v * m).collect();
                (r, Some(mask))
            }
            _ => (r_pre.clone(), None),
        };

        let (clf_out, mlp_acts) = classifier_forward(cfg, &self.params.classifier, &r)?;
        let mut score = clf_out;
        if cfg.first_order {
            score += first_order_term(cfg, &self.params.first_order, sample);
            score += self.params.bias[0];
        }
        Ok(SampleTrace { stack, r_pre, r, dropout_mask, mlp_acts, score })
    }

    /// Accumulates one sample's parameter gradients (scaled by `scale`)
    /// into `grads` and returns the sample loss.
    pub fn accumulate_gradient(
        &self,
        sample: &[FieldInput],
        label: f64,
        grads: &mut ParamStore,
        scale: f64,
        dropout_rng: Option<&mut SeededRng>,
    ) -> Result<f64> {
        let cfg = &self.config;
        let trace = self.forward_traced(sample, dropout_rng)?;
        let sample_loss = loss(trace.score, label, cfg.task)?;
        let dscore = scale * loss_grad(trace.score, label, cfg.task);

        if cfg.first_order {
            grads.bias[0] += dscore;
            first_order_backward(cfg, sample, dscore, &mut grads.first_order);
        }

        let mut dr = classifier_backward(
            cfg,
            &self.params.classifier,
            &trace,
            dscore,
            &mut grads.classifier,
        )?;
        if let Some(mask) = &trace.dropout_mask {
            for (d, &m) in dr.iter_mut().zip(mask) {
                *d *= m;
            }
        }

        let (term_grads, agg_grads) =
            aggregate_backward(&trace.stack.layers, &cfg.agg_spec(), &self.params.agg_weights, cfg.k, &dr)?;
        for (g, a) in grads.agg_weights.iter_mut().zip(&agg_grads) {
            *g += a;
        }

        let mut gh1 = vec![vec![0.0; cfg.k]; cfg.m];
        stack_backward(
            &trace.stack,
            &cfg.pooling_spec(),
            cfg.code.interaction,
            cfg.k,
            &self.params.layer_blocks,
            &term_grads,
            &mut grads.layer_blocks,
            &mut gh1,
        )?;
        first_layer_backward(sample, &gh1, cfg.k, &mut grads.embeddings);
        Ok(sample_loss)
    }
}

/// Cached intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    /// Layer stack with pooled-term caches.
    pub stack: StackCache,
    /// Representation before dropout.
    pub r_pre: Vec<f64>,
    /// Representation fed to the classifier.
    pub r: Vec<f64>,
    /// Dropout multipliers (None outside training).
    pub dropout_mask: Option<Vec<f64>>,
    /// MLP hidden pre-activations and activations, innermost first.
    pub mlp_acts: Vec<Vec<f64>>,
    /// Raw model output (logit for classification).
    pub score: f64,
}

fn init_classifier(config: &ModelConfig, rng: &mut SeededRng) -> Result<Vec<Vec<f64>>> {
    let r_len = config.representation_len()?;
    Ok(match &config.classifier {
        ClassifierSpec::SumPool => Vec::new(),
        ClassifierSpec::Linear => vec![vec![0.0; r_len], vec![0.0]],
        ClassifierSpec::Mlp(hidden) => {
            // He-scaled hidden layers; a zero-initialized MLP cannot break
            // symmetry. Final layer zero so the head starts neutral.
            let mut blocks = Vec::new();
            let mut inp = r_len;
            for &h in hidden {
                let scale = (2.0 / inp as f64).sqrt();
                blocks.push((0..inp * h).map(|_| scale * rng.standard_normal()).collect());
                blocks.push(vec![0.0; h]);
                inp = h;
            }
            blocks.push(vec![0.0; inp]);
            blocks.push(vec![0.0]);
            blocks
        }
    })
}

/// Classifier forward; returns the scalar head output and cached MLP
/// activations (pre-activation, activation pairs per hidden layer).
fn classifier_forward(
    config: &ModelConfig,
    blocks: &[Vec<f64>],
    r: &[f64],
) -> Result<(f64, Vec<Vec<f64>>)> {
    match &config.classifier {
        ClassifierSpec::SumPool => Ok((r.iter().sum(), Vec::new())),
        ClassifierSpec::Linear => {
            let w = &blocks[0];
            let b = blocks[1][0];
            Ok((r.iter().zip(w).map(|(x, wv)| x * wv).sum::<f64>() + b, Vec::new()))
        }
        ClassifierSpec::Mlp(hidden) => {
            let mut acts: Vec<Vec<f64>> = Vec::new();
            let mut a: Vec<f64> = r.to_vec();
            let mut bi = 0;
            for &h in hidden {
                let w = &blocks[bi];
                let b = &blocks[bi + 1];
                bi += 2;
                let inp = a.len();
                let mut z = vec![0.0; h];
                for (i, &ai) in a.iter().enumerate() {
                    let row = &w[i * h..(i + 1) * h];
                    for (zo, &wv) in z.iter_mut().zip(row) {
                        *zo += ai * wv;
                    }
                }
                for (zo, &bv) in z.iter_mut().zip(b) {
                    *zo += bv;
                }
                let act: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
                acts.push(z);
                acts.push(act.clone());
                a = act;
                let _ = inp;
            }
            let w = &blocks[bi];
            let b = blocks[bi + 1][0];
            let out = a.iter().zip(w).map(|(x, wv)| x * wv).sum::<f64>() + b;
            Ok((out, acts))
        }
    }
}

/// Classifier backward; accumulates parameter grads and returns d(loss)/dr.
fn classifier_backward(
    config: &ModelConfig,
    blocks: &[Vec<f64>],
    trace: &SampleTrace,
    dscore: f64,
    grads: &mut [Vec<f64>],
) -> Result<Vec<f64>> {
    let r = &trace.r;
    match &config.classifier {
        ClassifierSpec::SumPool => Ok(vec![dscore; r.len()]),
        ClassifierSpec::Linear => {
            let w = &blocks[0];
            for (g, &x) in grads[0].iter_mut().zip(r.iter()) {
                *g += dscore * x;
            }
            grads[1][0] += dscore;
            Ok(w.iter().map(|&wv| dscore * wv).collect())
        }
        ClassifierSpec::Mlp(hidden) => {
            // Final linear layer input is the last hidden activation.
            let last_act: &[f64] = if hidden.is_empty() { r } else { &trace.mlp_acts[trace.mlp_acts.len() - 1] };
            let bi_final = 2 * hidden.len();
            let w_final = &blocks[bi_final];
            for (g, &x) in grads[bi_final].iter_mut().zip(last_act) {
                *g += dscore * x;
            }
            grads[bi_final + 1][0] += dscore;
            let mut delta: Vec<f64> = w_final.iter().map(|&wv| dscore * wv).collect();

            for li in (0..hidden.len()).rev() {
                // ReLU gate on this layer's pre-activation.
                let z = &trace.mlp_acts[2 * li];
                for (d, &zv) in delta.iter_mut().zip(z) {
                    if zv <= 0.0 {
                        *d = 0.0;
                    }
                }
                let input: Vec<f64> = if li == 0 {
                    r.clone()
                } else {
                    trace.mlp_acts[2 * li - 1].clone()
                };
                let h = hidden[li];
                let w = &blocks[2 * li];
                let gw = &mut grads[2 * li];
                for (i, &ai) in input.iter().enumerate() {
                    let grow = &mut gw[i * h..(i + 1) * h];
                    for (g, &d) in grow.iter_mut().zip(&delta) {
                        *g += ai * d;
                    }
                }
                for (g, &d) in grads[2 * li + 1].iter_mut().zip(&delta) {
                    *g += d;
                }
                let mut da = vec![0.0; input.len()];
                for (i, dai) in da.iter_mut().enumerate() {
                    let row = &w[i * h..(i + 1) * h];
                    *dai = row.iter().zip(&delta).map(|(&wv, &d)| wv * d).sum();
                }
                delta = da;
            }
            Ok(delta)
        }
    }
}

fn first_order_term(config: &ModelConfig, weights: &[Vec<f64>], sample: &[FieldInput]) -> f64 {
    let mut total = 0.0;
    for (field, input) in sample.iter().enumerate() {
        match input {
            FieldInput::Cat(ids) => {
                if !ids.is_empty() {
                    let sum: f64 = ids.iter().map(|&id| weights[field][id as usize]).sum();
                    total += sum / ids.len() as f64;
                }
            }
            FieldInput::Num(x) => total += x * weights[field][0],
        }
    }
    let _ = config;
    total
}

fn first_order_backward(
    config: &ModelConfig,
    sample: &[FieldInput],
    dscore: f64,
    grads: &mut [Vec<f64>],
) {
    for (field, input) in sample.iter().enumerate() {
        match input {
            FieldInput::Cat(ids) => {
                if !ids.is_empty() {
                    let g = dscore / ids.len() as f64;
                    for &id in ids {
                        grads[field][id as usize] += g;
                    }
                }
            }
            FieldInput::Num(x) => grads[field][0] += dscore * x,
        }
    }
    let _ = config;
}

/// Per-sample loss: numerically stable binary cross-entropy on the logit
/// for classification, squared error for regression.
pub fn loss(score: f64, label: f64, task: Task) -> Result<f64> {
    match task {
        Task::Classification => {
            if label != 0.0 && label != 1.0 {
                return Err(Error::Contract(format!(
                    "classification label {label} not in {{0,1}}"
                )));
            }
            Ok(score.max(0.0) - score * label + (-score.abs()).exp().ln_1p())
        }
        Task::Regression => Ok((score - label) * (score - label)),
    }
}

/// d(loss)/d(score).
pub fn loss_grad(score: f64, label: f64, task: Task) -> f64 {
    match task {
        Task::Classification => sigmoid(score) - label,
        Task::Regression => 2.0 * (score - label),
    }
}

/// Logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FieldSchema;

    #[test]
    fn parse_code_examples() {
        let pfl = parse_code("PFL").unwrap();
        assert_eq!(pfl.interaction, InteractionKind::Projected);
        assert_eq!(pfl.pooling, PoolingKind::Field);
        assert!(!pfl.residual);
        assert_eq!(pfl.aggregator, AggregatorKind::Layer);

        let wgt = parse_code("wgt").unwrap();
        assert_eq!(wgt.interaction, InteractionKind::Weighted);
        assert_eq!(wgt.pooling, PoolingKind::Global);
        assert_eq!(wgt.aggregator, AggregatorKind::Term);

        let err = parse_code("XFL").unwrap_err();
        assert!(err.to_string().contains('X'), "{err}");

        for text in ["PF'D", "PRD", "prd"] {
            let code = parse_code(text).unwrap();
            assert!(code.residual);
            assert_eq!(code.pooling, PoolingKind::Field);
            assert_eq!(code.to_string(), "PF'D");
        }
        assert!(parse_code("PG'D").is_err());
        assert!(parse_code("PFLL").is_err());
        assert!(parse_code("PF").is_err());
    }

    fn one_hot_sample(m: usize) -> Vec<FieldInput> {
        (0..m).map(|_| FieldInput::Cat(vec![0])).collect()
    }

    /// FM with K=1, M=3 and embeddings (1, 2, 3) scores the pair sum 11.
    #[test]
    fn fm_forward_example() {
        let mut config = preset("FM", 3, 1, &[1, 1, 1], Task::Regression).unwrap();
        config.first_order = false;
        let mut model = IpaModel::new(config, 0).unwrap();
        model.params.embeddings = vec![vec![1.0], vec![2.0], vec![3.0]];
        let score = model.forward(&one_hot_sample(3)).unwrap();
        assert!((score - 11.0).abs() < 1e-12, "score {score}");
    }

    #[test]
    fn zero_embeddings_score_zero() {
        let config = preset("FM", 3, 4, &[2, 2, 2], Task::Classification).unwrap();
        let mut model = IpaModel::new(config, 0).unwrap();
        for block in &mut model.params.embeddings {
            block.fill(0.0);
        }
        let score = model.forward(&one_hot_sample(3)).unwrap();
        assert_eq!(score, 0.0);
    }

    #[test]
    fn fast_fm_identity() {
        // sum_{i<j} <v_i, v_j> = 1/2 ((sum v)^2 - sum v^2), elementwise-summed.
        let mut rng = SeededRng::new(3, 9);
        let (m, k) = (6, 4);
        for _ in 0..50 {
            let vs: Vec<Vec<f64>> =
                (0..m).map(|_| (0..k).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
            let brute: f64 = (0..m)
                .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
                .map(|(i, j)| vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            let mut closed = 0.0;
            for c in 0..k {
                let s: f64 = vs.iter().map(|v| v[c]).sum();
                let sq: f64 = vs.iter().map(|v| v[c] * v[c]).sum();
                closed += 0.5 * (s * s - sq);
            }
            assert!((brute - closed).abs() < 1e-10, "{brute} vs {closed}");
        }
    }

    #[test]
    fn loss_examples() {
        assert!((loss(0.0, 1.0, Task::Classification).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(loss(1.5, 1.5, Task::Regression).unwrap(), 0.0);
        let big = loss(100.0, 0.0, Task::Classification).unwrap();
        assert!(big.is_finite() && (big - 100.0).abs() < 1e-12, "{big}");
        assert!(loss(0.0, 0.5, Task::Classification).is_err());
    }

    #[test]
    fn count_params_examples() {
        // FM with vocab V per field: V*K embeddings, no interaction or agg
        // weights, plus V + 1 when first-order is on.
        let vocabs = [7u32, 7, 7];
        let mut config = preset("FM", 3, 4, &vocabs, Task::Classification).unwrap();
        config.first_order = false;
        let vk = 21 * 4;
        assert_eq!(count_params(&config).unwrap(), vk);
        config.first_order = true;
        assert_eq!(count_params(&config).unwrap(), vk + 21 + 1);

        // PFD field, M=3, K=2, L=3, no self, no sharing:
        // interaction = (L-1) * M * (M-1) * K^2 = 2*3*2*4 = 48.
        let code = parse_code("PFD").unwrap();
        let config = ModelConfig::from_code(code, 3, 2, 3, &[1, 1, 1], Task::Regression);
        let emb = 3 * 2;
        assert_eq!(count_params(&config).unwrap(), emb + 48);

        // Switching Direct -> Layer adds exactly L scalars.
        let mut layered = config.clone();
        layered.code.aggregator = AggregatorKind::Layer;
        assert_eq!(count_params(&layered).unwrap(), emb + 48 + 3);
    }

    #[test]
    fn count_params_matches_reflection() {
        let schema_small = vec![FieldSchema::Categorical { vocab: 3 }; 3];
        let vocabs: Vec<u32> = schema_small.iter().map(|s| s.vocab()).collect();
        for interaction in crate::interaction::ALL_KINDS {
            for (pooling, residual) in
                [(PoolingKind::Field, false), (PoolingKind::Field, true), (PoolingKind::Global, false)]
            {
                for aggregator in crate::aggregate::ALL_AGGREGATORS {
                    let code = ModelCode { interaction, pooling, residual, aggregator };
                    let mut config =
                        ModelConfig::from_code(code, 3, 2, 3, &vocabs, Task::Classification);
                    config.global_width = 2;
                    config.first_order = true;
                    config.classifier = ClassifierSpec::Linear;
                    let model = IpaModel::new(config.clone(), 5).unwrap();
                    assert_eq!(
                        count_params(&config).unwrap(),
                        model.params.total_scalars(),
                        "reflection mismatch for {code}"
                    );
                }
            }
        }
    }

    #[test]
    fn full_model_gradcheck_pfl() {
        // Every trainable scalar of a small PFL matches central differences.
        let code = parse_code("PFL").unwrap();
        let mut config = ModelConfig::from_code(code, 3, 2, 3, &[2, 3, 2], Task::Classification);
        config.first_order = true;
        config.classifier = ClassifierSpec::Linear;
        let model = IpaModel::new(config, 11).unwrap();

        let samples: Vec<(Vec<FieldInput>, f64)> = vec![
            (vec![FieldInput::Cat(vec![0]), FieldInput::Cat(vec![2]), FieldInput::Cat(vec![1])], 1.0),
            (vec![FieldInput::Cat(vec![1]), FieldInput::Cat(vec![0, 1]), FieldInput::Cat(vec![])], 0.0),
        ];
        check_model_gradients(&model, &samples);
    }

    #[test]
    fn full_model_gradcheck_mlp_head() {
        let code = parse_code("WGD").unwrap();
        let mut config = ModelConfig::from_code(code, 2, 2, 3, &[2, 2], Task::Regression);
        config.global_width = 2;
        config.classifier = ClassifierSpec::Mlp(vec![4]);
        let model = IpaModel::new(config, 13).unwrap();
        let samples: Vec<(Vec<FieldInput>, f64)> = vec![
            (vec![FieldInput::Cat(vec![0]), FieldInput::Cat(vec![1])], 0.7),
            (vec![FieldInput::Cat(vec![1]), FieldInput::Cat(vec![0])], -0.3),
        ];
        check_model_gradients(&model, &samples);
    }

    /// Shared helper: batch-mean loss gradient vs central differences.
    pub(crate) fn check_model_gradients(model: &IpaModel, samples: &[(Vec<FieldInput>, f64)]) {
        let batch_loss = |m: &IpaModel| -> f64 {
            samples
                .iter()
                .map(|(s, y)| loss(m.forward(s).unwrap(), *y, m.config.task).unwrap())
                .sum::<f64>()
                / samples.len() as f64
        };
        let mut grads = model.params.zeros_like();
        let scale = 1.0 / samples.len() as f64;
        for (s, y) in samples {
            model.accumulate_gradient(s, *y, &mut grads, scale, None).unwrap();
        }

        let h = 1e-5;
        let mut probe = model.clone();
        let n_blocks = grads.blocks().len();
        for bi in 0..n_blocks {
            for i in 0..grads.blocks()[bi].len() {
                let orig = probe.params.blocks()[bi][i];
                probe.params.blocks_mut()[bi][i] = orig + h;
                let up = batch_loss(&probe);
                probe.params.blocks_mut()[bi][i] = orig - h;
                let down = batch_loss(&probe);
                probe.params.blocks_mut()[bi][i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.blocks()[bi][i];
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-4
                        || (analytic - numeric).abs() < 1e-8,
                    "block {bi} index {i}: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }
}
