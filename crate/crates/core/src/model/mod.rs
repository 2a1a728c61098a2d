//! The attention seq2seq translation network: embeddings, stacked recurrent
//! encoder/decoder with selectable cell type, attention variant, residual
//! connections and directionality, teacher-forced loss, and greedy decoding.

mod checkpoint;
pub(crate) mod net;
mod params;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use params::{AttentionParams, BiLayerParams, CellParams, EncoderParams, ModelParams};

use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::corpus::{Vocabulary, EOS, SOS};
use crate::graph::{log_softmax, Tape};
use crate::lexing::{Language, TokenSequence};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("token id {id} out of range for vocabulary of {vocab} entries")]
    IdOutOfRange { id: usize, vocab: usize },
    #[error("sequence length {len} exceeds the {what} cap {cap}")]
    LengthExceeded { len: usize, cap: usize, what: &'static str },
    #[error("non-finite activation encountered")]
    NonFiniteActivation,
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("empty batch")]
    EmptyBatch,
}

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name {
            $($variant),+
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match self {
                    $(Self::$variant => write!(f, $text)),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                let norm = s.to_ascii_lowercase().replace('_', "-");
                match norm.as_str() {
                    $($text => Ok(Self::$variant),)+
                    _ => Err(format!(concat!("unknown ", stringify!($name), " {:?}"), s)),
                }
            }
        }
    };
}

string_enum!(UnitType {
    Lstm => "lstm",
    Gru => "gru",
    LayerNormLstm => "layer-norm-lstm",
});

string_enum!(AttentionKind {
    None => "none",
    Bahdanau => "bahdanau",
    NormedBahdanau => "normed-bahdanau",
    Luong => "luong",
    ScaledLuong => "scaled-luong",
});

string_enum!(OptimizerKind {
    Sgd => "sgd",
    Adam => "adam",
});

string_enum!(EncoderType {
    Unidirectional => "unidirectional",
    Bidirectional => "bidirectional",
});

impl FromStr for Language {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "latex" => Ok(Language::Latex),
            "mizar" => Ok(Language::Mizar),
            _ => Err(format!("unknown language {s:?} (expected latex or mizar)")),
        }
    }
}

/// Translation direction; the pipeline is symmetric in the two sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Direction {
    pub src: Language,
    pub tgt: Language,
}

impl Direction {
    pub const LATEX_TO_MIZAR: Direction =
        Direction { src: Language::Latex, tgt: Language::Mizar };
    pub const MIZAR_TO_LATEX: Direction =
        Direction { src: Language::Mizar, tgt: Language::Latex };
}

/// One point in the hyperparameter space. Defaults follow the common
/// experiment configuration: 12,000 training steps, learning rate 1.0
/// (use 0.001 under Adam), forget bias 1.0, dropout 0.2, batch size 128,
/// greedy decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub unit_type: UnitType,
    pub attention: AttentionKind,
    pub num_layers: usize,
    pub residual: bool,
    pub optimizer: OptimizerKind,
    pub encoder_type: EncoderType,
    pub num_units: usize,
    pub dropout: f64,
    pub forget_bias: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_steps: u64,
    pub seed: u64,
    pub clip_norm: f64,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            unit_type: UnitType::Lstm,
            attention: AttentionKind::None,
            num_layers: 2,
            residual: false,
            optimizer: OptimizerKind::Sgd,
            encoder_type: EncoderType::Unidirectional,
            num_units: 128,
            dropout: 0.2,
            forget_bias: 1.0,
            learning_rate: 1.0,
            batch_size: 128,
            train_steps: 12000,
            seed: 1,
            clip_norm: 5.0,
            max_src_len: 50,
            max_tgt_len: 50,
        }
    }
}

impl HyperParams {
    /// The default learning rate for an optimizer (1.0 for SGD, 0.001 for
    /// Adam).
    pub fn default_learning_rate(optimizer: OptimizerKind) -> f64 {
        match optimizer {
            OptimizerKind::Sgd => 1.0,
            OptimizerKind::Adam => 0.001,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidHyperParams(msg));
        if self.num_layers < 1 {
            return fail("num_layers must be at least 1".into());
        }
        if self.encoder_type == EncoderType::Bidirectional && self.num_layers % 2 != 0 {
            return fail(format!(
                "bidirectional encoding only works on an even number of layers (got {})",
                self.num_layers
            ));
        }
        if self.num_units < 1 {
            return fail("num_units must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.learning_rate > 0.0) {
            return fail(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.clip_norm > 0.0) {
            return fail(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.max_src_len < 1 || self.max_tgt_len < 1 {
            return fail("length caps must be at least 1".into());
        }
        if !self.forget_bias.is_finite() {
            return fail("forget_bias must be finite".into());
        }
        Ok(())
    }
}

/// The independent seeded streams derived from one experiment seed. Keeping
/// them separate means e.g. the dropout draw count cannot perturb batching.
pub(crate) struct SeedStreams {
    pub init: Rng,
    pub batching: Rng,
    pub dropout: Rng,
}

impl SeedStreams {
    pub fn from_seed(seed: u64) -> Self {
        let mut root = Rng::new(seed);
        SeedStreams { init: root.split(), batching: root.split(), dropout: root.split() }
    }
}

/// Draw a fresh parameter set for the given vocabulary sizes.
pub fn init_params(hp: &HyperParams, vocab_src: usize, vocab_tgt: usize) -> ModelParams {
    let mut rng = SeedStreams::from_seed(hp.seed).init;
    ModelParams::init(hp, vocab_src, vocab_tgt, &mut rng)
}

/// Recurrent state of one layer: hidden vector plus, for the LSTM variants,
/// the memory cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Tensor,
    pub c: Option<Tensor>,
}

impl CellState {
    pub fn zeros(cell: &CellParams, rows: usize, d: usize) -> Self {
        match cell {
            CellParams::Gru { .. } => CellState { h: Tensor::zeros(rows, d), c: None },
            _ => CellState { h: Tensor::zeros(rows, d), c: Some(Tensor::zeros(rows, d)) },
        }
    }

    fn to_vars(&self, tape: &mut Tape) -> net::StateVars {
        match &self.c {
            Some(c) => net::StateVars::Lstm { h: tape.leaf(self.h.clone()), c: tape.leaf(c.clone()) },
            None => net::StateVars::Gru { h: tape.leaf(self.h.clone()) },
        }
    }

    fn from_vars(tape: &Tape, vars: &net::StateVars) -> Self {
        match vars {
            net::StateVars::Lstm { h, c } => CellState {
                h: tape.value(*h).clone(),
                c: Some(tape.value(*c).clone()),
            },
            net::StateVars::Gru { h } => CellState { h: tape.value(*h).clone(), c: None },
        }
    }
}

/// One recurrent step of any cell variant. `x` and the state rows are
/// `rows x d`; the new state is returned.
pub fn cell_step(cell: &CellParams, x: &Tensor, state: &CellState) -> Result<CellState, ModelError> {
    let mut tape = Tape::new();
    let cell_vars = {
        let mut one = |t: &Tensor| tape.leaf(t.clone());
        match cell {
            CellParams::Lstm { kernel, bias } => net::CellVars::Lstm {
                kernel: one(kernel),
                bias: one(bias),
            },
            CellParams::Gru { gate_kernel, gate_bias, cand_kernel, cand_bias } => {
                net::CellVars::Gru {
                    gate_kernel: one(gate_kernel),
                    gate_bias: one(gate_bias),
                    cand_kernel: one(cand_kernel),
                    cand_bias: one(cand_bias),
                }
            }
            CellParams::LayerNormLstm { kernel, gains, shifts } => net::CellVars::LayerNormLstm {
                kernel: one(kernel),
                gains: one(gains),
                shifts: one(shifts),
            },
        }
    };
    let x = tape.leaf(x.clone());
    let state_vars = state.to_vars(&mut tape);
    let next = net::cell_step(&mut tape, &cell_vars, x, &state_vars);
    let out = CellState::from_vars(&tape, &next);
    if !out.h.is_finite() || out.c.as_ref().is_some_and(|c| !c.is_finite()) {
        return Err(ModelError::NonFiniteActivation);
    }
    Ok(out)
}

/// Attention score of a single (query, key) pair of `1 x d` vectors.
///
/// This is a direct evaluation kept deliberately separate from the tape
/// route the decoder uses; the two are cross-checked in tests.
pub fn attention_score(attn: &AttentionParams, query: &Tensor, key: &Tensor) -> f64 {
    match attn {
        AttentionParams::None => 0.0,
        AttentionParams::Luong { w } => query.matmul(w).matmul_nt(key).item(),
        AttentionParams::ScaledLuong { w, g } => g.item() * query.matmul(w).matmul_nt(key).item(),
        AttentionParams::Bahdanau { w_query, w_key, v } => {
            let mut pre = query.matmul(w_query);
            pre.add_in_place(&key.matmul(w_key));
            pre.map(f64::tanh).matmul(v).item()
        }
        AttentionParams::NormedBahdanau { w_query, w_key, u, g, b } => {
            let norm = u.sq_norm().sqrt();
            let v_eff = u.map(|x| g.item() * x / norm);
            let mut pre = query.matmul(w_query);
            pre.add_in_place(&key.matmul(w_key));
            pre.add_in_place(b);
            pre.map(f64::tanh).matmul(&v_eff).item()
        }
    }
}

fn check_ids(ids: &[usize], vocab: usize) -> Result<(), ModelError> {
    match ids.iter().find(|&&id| id >= vocab) {
        Some(&id) => Err(ModelError::IdOutOfRange { id, vocab }),
        None => Ok(()),
    }
}

/// Encode one source sentence. Returns the per-position annotations of the
/// top encoder layer and the final state for each decoder layer.
pub fn encode(
    src_ids: &[usize],
    hp: &HyperParams,
    params: &ModelParams,
) -> Result<(Vec<Tensor>, Vec<CellState>), ModelError> {
    hp.validate()?;
    check_ids(src_ids, params.src_embedding.rows())?;
    if src_ids.len() > hp.max_src_len {
        return Err(ModelError::LengthExceeded {
            len: src_ids.len(),
            cap: hp.max_src_len,
            what: "source",
        });
    }
    let mut tape = Tape::new();
    let vars = net::register(&mut tape, params);
    let mut dropper = net::Dropper::inference();
    let (ann, finals) =
        net::build_encoder(&mut tape, &vars, hp, &[src_ids.to_vec()], &mut dropper);
    let annotations = ann.iter().map(|&a| tape.value(a).clone()).collect();
    let states = finals.iter().map(|s| CellState::from_vars(&tape, s)).collect();
    Ok((annotations, states))
}

/// One greedy-decoding step: embed the previous target token, advance the
/// stacked decoder, attend over the annotations, and produce output logits.
pub fn decode_step(
    prev_tgt_id: usize,
    state: &[CellState],
    annotations: &[Tensor],
    hp: &HyperParams,
    params: &ModelParams,
) -> Result<(Vec<f64>, Vec<CellState>), ModelError> {
    check_ids(&[prev_tgt_id], params.tgt_embedding.rows())?;
    let mut tape = Tape::new();
    let vars = net::register(&mut tape, params);
    let ann_vars: Vec<_> = annotations.iter().map(|a| tape.leaf(a.clone())).collect();
    let mut states: Vec<net::StateVars> = state.iter().map(|s| s.to_vars(&mut tape)).collect();
    let prep = net::prepare_attention(&mut tape, &vars, &ann_vars);
    let mut dropper = net::Dropper::inference();
    let prev_emb = tape.embed(vars.tgt_embedding, &[prev_tgt_id]);
    let logits = net::decoder_step(&mut tape, &vars, hp, &prep, prev_emb, &mut states, &mut dropper);
    let row = tape.value(logits).row(0).to_vec();
    if !row.iter().all(|v| v.is_finite()) {
        return Err(ModelError::NonFiniteActivation);
    }
    let new_states = states.iter().map(|s| CellState::from_vars(&tape, s)).collect();
    Ok((row, new_states))
}

/// A batch of encoded sentence pairs (token ids without sos/eos wrapping).
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub src: Vec<Vec<usize>>,
    pub tgt: Vec<Vec<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    fn validate(&self, hp: &HyperParams, params: &ModelParams) -> Result<(), ModelError> {
        if self.is_empty() || self.src.len() != self.tgt.len() {
            return Err(ModelError::EmptyBatch);
        }
        for (s, t) in self.src.iter().zip(&self.tgt) {
            check_ids(s, params.src_embedding.rows())?;
            check_ids(t, params.tgt_embedding.rows())?;
            if s.len() > hp.max_src_len {
                return Err(ModelError::LengthExceeded {
                    len: s.len(),
                    cap: hp.max_src_len,
                    what: "source",
                });
            }
            if t.len() > hp.max_tgt_len {
                return Err(ModelError::LengthExceeded {
                    len: t.len(),
                    cap: hp.max_tgt_len,
                    what: "target",
                });
            }
        }
        Ok(())
    }
}

/// Teacher-forced cross-entropy loss of a batch: the sum over target
/// positions (including the closing eos) of the gold token's negative log
/// probability, divided by the batch size. Returns the loss and the number
/// of gold tokens. Dropout is active iff `training`.
pub fn forward_loss(
    batch: &Batch,
    hp: &HyperParams,
    params: &ModelParams,
    training: bool,
) -> Result<(f64, usize), ModelError> {
    hp.validate()?;
    batch.validate(hp, params)?;
    let mut tape = Tape::new();
    let vars = net::register(&mut tape, params);
    let mut rng = SeedStreams::from_seed(hp.seed).dropout;
    let mut dropper = if training {
        net::Dropper::new(hp.dropout, Some(&mut rng))
    } else {
        net::Dropper::inference()
    };
    let (loss, tokens) = net::build_loss(&mut tape, &vars, hp, batch, &mut dropper);
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(ModelError::NonFiniteLoss);
    }
    Ok((value, tokens))
}

/// One training-step evaluation: loss, gold token count, and the gradient
/// of the loss with respect to every parameter (same shapes as the params).
pub fn loss_and_grads(
    batch: &Batch,
    hp: &HyperParams,
    params: &ModelParams,
    dropout_rng: Option<&mut Rng>,
) -> Result<(f64, usize, ModelParams), ModelError> {
    hp.validate()?;
    batch.validate(hp, params)?;
    let mut tape = Tape::new();
    let vars = net::register(&mut tape, params);
    let mut dropper = net::Dropper::new(hp.dropout, dropout_rng);
    let (loss, tokens) = net::build_loss(&mut tape, &vars, hp, batch, &mut dropper);
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(ModelError::NonFiniteLoss);
    }
    let grads = tape.backward(loss);
    Ok((value, tokens, net::collect_grads(grads, &vars, params)))
}

/// Greedy decoding output in id space.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutcome {
    pub ids: Vec<usize>,
    /// Natural-log probability of each emitted token, plus the final eos
    /// when decoding ended by eos.
    pub logprobs: Vec<f64>,
    pub ended_by_eos: bool,
}

/// Greedy decoding output in token space.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub tokens: TokenSequence,
    pub token_logprobs: Vec<f64>,
    pub ended_by_eos: bool,
}

/// Decode a source sentence by picking the argmax token at every step,
/// stopping at eos or after `max_len` tokens.
pub fn greedy_decode(
    src_ids: &[usize],
    hp: &HyperParams,
    params: &ModelParams,
    max_len: usize,
) -> Result<GreedyOutcome, ModelError> {
    hp.validate()?;
    check_ids(src_ids, params.src_embedding.rows())?;
    if src_ids.len() > hp.max_src_len {
        return Err(ModelError::LengthExceeded {
            len: src_ids.len(),
            cap: hp.max_src_len,
            what: "source",
        });
    }

    let mut tape = Tape::new();
    let vars = net::register(&mut tape, params);
    let mut dropper = net::Dropper::inference();
    let (annotations, finals) =
        net::build_encoder(&mut tape, &vars, hp, &[src_ids.to_vec()], &mut dropper);
    let prep = net::prepare_attention(&mut tape, &vars, &annotations);
    let mut states = finals;

    let mut outcome =
        GreedyOutcome { ids: Vec::new(), logprobs: Vec::new(), ended_by_eos: false };
    let mut prev = SOS;
    while outcome.ids.len() < max_len {
        let prev_emb = tape.embed(vars.tgt_embedding, &[prev]);
        let logits =
            net::decoder_step(&mut tape, &vars, hp, &prep, prev_emb, &mut states, &mut dropper);
        let row = tape.value(logits).row(0);
        if !row.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFiniteActivation);
        }
        let logprobs = log_softmax(row);
        let chosen = argmax(&logprobs);
        outcome.logprobs.push(logprobs[chosen]);
        if chosen == EOS {
            outcome.ended_by_eos = true;
            break;
        }
        outcome.ids.push(chosen);
        prev = chosen;
    }
    Ok(outcome)
}

/// Greedy decoding straight from and to token sequences.
pub fn greedy_decode_tokens(
    src: &TokenSequence,
    vocab_src: &Vocabulary,
    vocab_tgt: &Vocabulary,
    tgt_lang: Language,
    hp: &HyperParams,
    params: &ModelParams,
    max_len: usize,
) -> Result<DecodeResult, ModelError> {
    let src_ids = vocab_src.encode(src);
    let outcome = greedy_decode(&src_ids, hp, params, max_len)?;
    Ok(DecodeResult {
        tokens: vocab_tgt.decode(&outcome.ids, tgt_lang),
        token_logprobs: outcome.logprobs,
        ended_by_eos: outcome.ended_by_eos,
    })
}

/// Index of the largest value; earlier index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Teacher-forced per-token gold log-probabilities for a set of sentence
/// pairs, in input order. Used for perplexity evaluation.
pub fn gold_logprobs(
    pairs: &[(Vec<usize>, Vec<usize>)],
    hp: &HyperParams,
    params: &ModelParams,
) -> Result<Vec<Vec<f64>>, ModelError> {
    hp.validate()?;
    // Group by source length so each group encodes as one uniform batch.
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by_key(|&i| pairs[i].0.len());
    let mut out: Vec<Vec<f64>> = vec![Vec::new(); pairs.len()];
    let mut start = 0;
    while start < order.len() {
        let len = pairs[order[start]].0.len();
        let mut end = start + 1;
        while end < order.len() && pairs[order[end]].0.len() == len {
            end += 1;
        }
        let idxs = &order[start..end];
        let src: Vec<Vec<usize>> = idxs.iter().map(|&i| pairs[i].0.clone()).collect();
        let tgt: Vec<Vec<usize>> = idxs.iter().map(|&i| pairs[i].1.clone()).collect();
        let mut tape = Tape::new();
        let vars = net::register(&mut tape, params);
        let lps = net::gold_logprobs(&mut tape, &vars, hp, &src, &tgt);
        for (slot, lp) in idxs.iter().zip(lps) {
            if lp.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteActivation);
            }
            out[*slot] = lp;
        }
        start = end;
    }
    Ok(out)
}
