//! Tape-graph builders for the seq2seq network.
//!
//! Training, evaluation and greedy decoding all build their forward passes
//! through these functions, so there is exactly one implementation of the
//! cell and attention arithmetic in the crate.

use crate::graph::{Grads, Tape, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::params::{
    AttentionParams, BiLayerParams, CellParams, EncoderParams, ModelParams,
};
use super::{Batch, EncoderType, HyperParams};
use crate::corpus::{EOS, SOS};

pub(crate) enum CellVars {
    Lstm { kernel: Var, bias: Var },
    Gru { gate_kernel: Var, gate_bias: Var, cand_kernel: Var, cand_bias: Var },
    LayerNormLstm { kernel: Var, gains: Var, shifts: Var },
}

pub(crate) struct BiLayerVars {
    fwd: CellVars,
    bwd: CellVars,
    proj: Var,
}

pub(crate) enum EncoderVars {
    Uni(Vec<CellVars>),
    Bi(Vec<BiLayerVars>),
}

pub(crate) enum AttentionVars {
    None,
    Luong { w: Var },
    ScaledLuong { w: Var, g: Var },
    Bahdanau { w_query: Var, w_key: Var, v: Var },
    NormedBahdanau { w_query: Var, w_key: Var, u: Var, g: Var, b: Var },
}

pub(crate) struct ModelVars {
    pub src_embedding: Var,
    pub tgt_embedding: Var,
    pub encoder: EncoderVars,
    pub decoder: Vec<CellVars>,
    pub attention: AttentionVars,
    pub attn_combine: Option<Var>,
    pub output_projection: Var,
}

fn register_cell(tape: &mut Tape, cell: &CellParams) -> CellVars {
    match cell {
        CellParams::Lstm { kernel, bias } => CellVars::Lstm {
            kernel: tape.leaf(kernel.clone()),
            bias: tape.leaf(bias.clone()),
        },
        CellParams::Gru { gate_kernel, gate_bias, cand_kernel, cand_bias } => CellVars::Gru {
            gate_kernel: tape.leaf(gate_kernel.clone()),
            gate_bias: tape.leaf(gate_bias.clone()),
            cand_kernel: tape.leaf(cand_kernel.clone()),
            cand_bias: tape.leaf(cand_bias.clone()),
        },
        CellParams::LayerNormLstm { kernel, gains, shifts } => CellVars::LayerNormLstm {
            kernel: tape.leaf(kernel.clone()),
            gains: tape.leaf(gains.clone()),
            shifts: tape.leaf(shifts.clone()),
        },
    }
}

/// Put every parameter tensor on the tape as a leaf. The traversal order
/// matches [`ModelParams::named_tensors`].
pub(crate) fn register(tape: &mut Tape, params: &ModelParams) -> ModelVars {
    let src_embedding = tape.leaf(params.src_embedding.clone());
    let tgt_embedding = tape.leaf(params.tgt_embedding.clone());
    let encoder = match &params.encoder {
        EncoderParams::Uni(layers) => {
            EncoderVars::Uni(layers.iter().map(|c| register_cell(tape, c)).collect())
        }
        EncoderParams::Bi(layers) => EncoderVars::Bi(
            layers
                .iter()
                .map(|BiLayerParams { fwd, bwd, proj }| BiLayerVars {
                    fwd: register_cell(tape, fwd),
                    bwd: register_cell(tape, bwd),
                    proj: tape.leaf(proj.clone()),
                })
                .collect(),
        ),
    };
    let decoder = params.decoder.iter().map(|c| register_cell(tape, c)).collect();
    let attention = match &params.attention {
        AttentionParams::None => AttentionVars::None,
        AttentionParams::Luong { w } => AttentionVars::Luong { w: tape.leaf(w.clone()) },
        AttentionParams::ScaledLuong { w, g } => AttentionVars::ScaledLuong {
            w: tape.leaf(w.clone()),
            g: tape.leaf(g.clone()),
        },
        AttentionParams::Bahdanau { w_query, w_key, v } => AttentionVars::Bahdanau {
            w_query: tape.leaf(w_query.clone()),
            w_key: tape.leaf(w_key.clone()),
            v: tape.leaf(v.clone()),
        },
        AttentionParams::NormedBahdanau { w_query, w_key, u, g, b } => {
            AttentionVars::NormedBahdanau {
                w_query: tape.leaf(w_query.clone()),
                w_key: tape.leaf(w_key.clone()),
                u: tape.leaf(u.clone()),
                g: tape.leaf(g.clone()),
                b: tape.leaf(b.clone()),
            }
        }
    };
    let attn_combine = params.attn_combine.as_ref().map(|c| tape.leaf(c.clone()));
    let output_projection = tape.leaf(params.output_projection.clone());
    ModelVars {
        src_embedding,
        tgt_embedding,
        encoder,
        decoder,
        attention,
        attn_combine,
        output_projection,
    }
}

impl ModelVars {
    /// Vars in [`ModelParams::named_tensors`] order.
    pub(crate) fn ordered(&self) -> Vec<Var> {
        let mut out = Vec::new();
        out.push(self.src_embedding);
        out.push(self.tgt_embedding);
        let push_cell = |cell: &CellVars, out: &mut Vec<Var>| match cell {
            CellVars::Lstm { kernel, bias } => out.extend([*kernel, *bias]),
            CellVars::Gru { gate_kernel, gate_bias, cand_kernel, cand_bias } => {
                out.extend([*gate_kernel, *gate_bias, *cand_kernel, *cand_bias])
            }
            CellVars::LayerNormLstm { kernel, gains, shifts } => {
                out.extend([*kernel, *gains, *shifts])
            }
        };
        match &self.encoder {
            EncoderVars::Uni(layers) => {
                for cell in layers {
                    push_cell(cell, &mut out);
                }
            }
            EncoderVars::Bi(layers) => {
                for layer in layers {
                    push_cell(&layer.fwd, &mut out);
                    push_cell(&layer.bwd, &mut out);
                    out.push(layer.proj);
                }
            }
        }
        for cell in &self.decoder {
            push_cell(cell, &mut out);
        }
        match &self.attention {
            AttentionVars::None => {}
            AttentionVars::Luong { w } => out.push(*w),
            AttentionVars::ScaledLuong { w, g } => out.extend([*w, *g]),
            AttentionVars::Bahdanau { w_query, w_key, v } => out.extend([*w_query, *w_key, *v]),
            AttentionVars::NormedBahdanau { w_query, w_key, u, g, b } => {
                out.extend([*w_query, *w_key, *u, *g, *b])
            }
        }
        if let Some(c) = self.attn_combine {
            out.push(c);
        }
        out.push(self.output_projection);
        out
    }
}

/// Move gradients off the tape into a parameter-shaped container.
pub(crate) fn collect_grads(
    mut grads: Grads,
    vars: &ModelVars,
    template: &ModelParams,
) -> ModelParams {
    let mut out = template.zeros_like();
    let ordered = vars.ordered();
    let mut slots = out.named_tensors_mut();
    assert_eq!(ordered.len(), slots.len());
    for (var, (_, slot)) in ordered.into_iter().zip(slots.iter_mut()) {
        **slot = grads.take(var, slot.rows(), slot.cols());
    }
    drop(slots);
    out
}

/// Recurrent state of one layer on the tape.
#[derive(Clone)]
pub(crate) enum StateVars {
    Lstm { h: Var, c: Var },
    Gru { h: Var },
}

impl StateVars {
    pub(crate) fn h(&self) -> Var {
        match self {
            StateVars::Lstm { h, .. } => *h,
            StateVars::Gru { h } => *h,
        }
    }
}

pub(crate) fn zero_state(tape: &mut Tape, cell: &CellVars, batch: usize, d: usize) -> StateVars {
    match cell {
        CellVars::Gru { .. } => StateVars::Gru { h: tape.leaf(Tensor::zeros(batch, d)) },
        _ => StateVars::Lstm {
            h: tape.leaf(Tensor::zeros(batch, d)),
            c: tape.leaf(Tensor::zeros(batch, d)),
        },
    }
}

/// One recurrent step. `x` and the state are `batch x d`.
pub(crate) fn cell_step(tape: &mut Tape, cell: &CellVars, x: Var, state: &StateVars) -> StateVars {
    let d = tape.value(x).cols();
    match (cell, state) {
        (CellVars::Lstm { kernel, bias }, StateVars::Lstm { h, c }) => {
            let xs = tape.concat_cols(&[x, *h]);
            let lin = tape.matmul(xs, *kernel);
            let pre = tape.add_row(lin, *bias);
            let (h2, c2) = lstm_combine(tape, pre, *c, d, None);
            StateVars::Lstm { h: h2, c: c2 }
        }
        (CellVars::LayerNormLstm { kernel, gains, shifts }, StateVars::Lstm { h, c }) => {
            let xs = tape.concat_cols(&[x, *h]);
            let pre = tape.matmul(xs, *kernel);
            let (h2, c2) = lstm_combine(tape, pre, *c, d, Some((*gains, *shifts)));
            StateVars::Lstm { h: h2, c: c2 }
        }
        (CellVars::Gru { gate_kernel, gate_bias, cand_kernel, cand_bias }, StateVars::Gru { h }) => {
            let xs = tape.concat_cols(&[x, *h]);
            let lin = tape.matmul(xs, *gate_kernel);
            let pre = tape.add_row(lin, *gate_bias);
            let gates = tape.sigmoid(pre);
            let z = tape.slice_cols(gates, 0, d);
            let r = tape.slice_cols(gates, d, d);
            let rh = tape.mul(r, *h);
            let xrh = tape.concat_cols(&[x, rh]);
            let clin = tape.matmul(xrh, *cand_kernel);
            let cpre = tape.add_row(clin, *cand_bias);
            let cand = tape.tanh(cpre);
            // h' = (1-z)*h + z*cand, written as h + z*(cand - h).
            let neg_h = tape.scale(*h, -1.0);
            let diff = tape.add(cand, neg_h);
            let step = tape.mul(z, diff);
            let h2 = tape.add(*h, step);
            StateVars::Gru { h: h2 }
        }
        _ => unreachable!("cell/state variant mismatch"),
    }
}

/// Shared tail of the two LSTM variants: split the fused pre-activation into
/// gates (i, g, f, o), optionally layer-normalizing each block first.
fn lstm_combine(
    tape: &mut Tape,
    pre: Var,
    c: Var,
    d: usize,
    norm: Option<(Var, Var)>,
) -> (Var, Var) {
    let block = |tape: &mut Tape, idx: usize| {
        let raw = tape.slice_cols(pre, idx * d, d);
        match norm {
            Some((gains, shifts)) => {
                let gain = tape.slice_cols(gains, idx * d, d);
                let shift = tape.slice_cols(shifts, idx * d, d);
                tape.layer_norm(raw, gain, shift)
            }
            None => raw,
        }
    };
    let pre_i = block(tape, 0);
    let pre_g = block(tape, 1);
    let pre_f = block(tape, 2);
    let pre_o = block(tape, 3);
    let i = tape.sigmoid(pre_i);
    let g = tape.tanh(pre_g);
    let f = tape.sigmoid(pre_f);
    let o = tape.sigmoid(pre_o);
    let fc = tape.mul(f, c);
    let ig = tape.mul(i, g);
    let c2 = tape.add(fc, ig);
    let tc = tape.tanh(c2);
    let h2 = tape.mul(o, tc);
    (h2, c2)
}

/// Inverted dropout on non-recurrent connections; active only in training.
pub(crate) struct Dropper<'a> {
    rate: f64,
    rng: Option<&'a mut Rng>,
}

impl<'a> Dropper<'a> {
    pub(crate) fn new(rate: f64, rng: Option<&'a mut Rng>) -> Self {
        Dropper { rate, rng }
    }

    pub(crate) fn inference() -> Self {
        Dropper { rate: 0.0, rng: None }
    }

    fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        let Some(rng) = self.rng.as_deref_mut() else { return x };
        if self.rate <= 0.0 {
            return x;
        }
        let (rows, cols) = tape.value(x).shape();
        let keep = 1.0 / (1.0 - self.rate);
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| if rng.next_f64() < self.rate { 0.0 } else { keep })
            .collect();
        let mask = tape.leaf(Tensor::from_vec(rows, cols, data));
        tape.mul(x, mask)
    }
}

/// Run one cell over a sequence of `batch x d` inputs, optionally reversed.
/// Outputs are returned in source order regardless of direction.
fn run_layer(
    tape: &mut Tape,
    cell: &CellVars,
    inputs: &[Var],
    reverse: bool,
    batch: usize,
    d: usize,
    dropper: &mut Dropper,
) -> (Vec<Var>, StateVars) {
    let mut state = zero_state(tape, cell, batch, d);
    let mut outputs: Vec<Option<Var>> = vec![None; inputs.len()];
    let order: Vec<usize> = if reverse {
        (0..inputs.len()).rev().collect()
    } else {
        (0..inputs.len()).collect()
    };
    for t in order {
        let x = dropper.apply(tape, inputs[t]);
        state = cell_step(tape, cell, x, &state);
        outputs[t] = Some(state.h());
    }
    (outputs.into_iter().map(|v| v.expect("every step visited")).collect(), state)
}

/// Encode a uniform-length batch of source id sequences.
///
/// Returns the per-position annotations of the top layer and the final
/// states handed to the decoder (one per decoder layer).
pub(crate) fn build_encoder(
    tape: &mut Tape,
    vars: &ModelVars,
    hp: &HyperParams,
    src: &[Vec<usize>],
    dropper: &mut Dropper,
) -> (Vec<Var>, Vec<StateVars>) {
    let batch = src.len();
    let d = hp.num_units;
    let steps = src.first().map_or(0, Vec::len);
    debug_assert!(src.iter().all(|s| s.len() == steps), "encoder batch must be uniform length");

    let mut inputs: Vec<Var> = (0..steps)
        .map(|t| {
            let ids: Vec<usize> = src.iter().map(|s| s[t]).collect();
            tape.embed(vars.src_embedding, &ids)
        })
        .collect();

    let mut finals = Vec::new();
    match (&vars.encoder, hp.encoder_type) {
        (EncoderVars::Uni(layers), EncoderType::Unidirectional) => {
            for (l, cell) in layers.iter().enumerate() {
                let (mut outs, fin) = run_layer(tape, cell, &inputs, false, batch, d, dropper);
                if hp.residual && l >= 1 {
                    for (out, inp) in outs.iter_mut().zip(&inputs) {
                        *out = tape.add(*out, *inp);
                    }
                }
                finals.push(fin);
                inputs = outs;
            }
        }
        (EncoderVars::Bi(layers), EncoderType::Bidirectional) => {
            for (l, layer) in layers.iter().enumerate() {
                let (fouts, ffin) = run_layer(tape, &layer.fwd, &inputs, false, batch, d, dropper);
                let (bouts, bfin) = run_layer(tape, &layer.bwd, &inputs, true, batch, d, dropper);
                let mut outs = Vec::with_capacity(steps);
                for t in 0..steps {
                    let cat = tape.concat_cols(&[fouts[t], bouts[t]]);
                    let mut merged = tape.matmul(cat, layer.proj);
                    if hp.residual && l >= 1 {
                        merged = tape.add(merged, inputs[t]);
                    }
                    outs.push(merged);
                }
                // Each direction's final state seeds one decoder layer.
                finals.push(ffin);
                finals.push(bfin);
                inputs = outs;
            }
        }
        _ => unreachable!("encoder variant does not match hyperparameters"),
    }
    (inputs, finals)
}

/// Attention quantities that depend only on the encoder annotations.
pub(crate) struct AttnPrep {
    /// Raw annotations, used as attention values.
    values: Vec<Var>,
    /// Projected keys for the Bahdanau variants.
    keys: Vec<Var>,
    /// Effective score vector (g * u / |u| for the normed variant).
    score_vec: Option<Var>,
}

pub(crate) fn prepare_attention(
    tape: &mut Tape,
    vars: &ModelVars,
    annotations: &[Var],
) -> AttnPrep {
    match &vars.attention {
        AttentionVars::None | AttentionVars::Luong { .. } | AttentionVars::ScaledLuong { .. } => {
            AttnPrep { values: annotations.to_vec(), keys: Vec::new(), score_vec: None }
        }
        AttentionVars::Bahdanau { w_key, v, .. } => AttnPrep {
            values: annotations.to_vec(),
            keys: annotations.iter().map(|&a| tape.matmul(a, *w_key)).collect(),
            score_vec: Some(*v),
        },
        AttentionVars::NormedBahdanau { w_key, u, g, .. } => {
            let keys = annotations.iter().map(|&a| tape.matmul(a, *w_key)).collect();
            // v = g * u / |u|
            let uu = tape.mul(*u, *u);
            let ss = tape.sum_all(uu);
            let norm = tape.sqrt(ss);
            let inv = tape.recip(norm);
            let gu = tape.mul_scalar(*u, *g);
            let v_eff = tape.mul_scalar(gu, inv);
            AttnPrep { values: annotations.to_vec(), keys, score_vec: Some(v_eff) }
        }
    }
}

/// One decoder step over the whole batch: embeds nothing itself, takes the
/// already-embedded previous target token and returns the output logits.
pub(crate) fn decoder_step(
    tape: &mut Tape,
    vars: &ModelVars,
    hp: &HyperParams,
    prep: &AttnPrep,
    prev_emb: Var,
    states: &mut [StateVars],
    dropper: &mut Dropper,
) -> Var {
    let mut x = prev_emb;
    for (l, cell) in vars.decoder.iter().enumerate() {
        let xd = dropper.apply(tape, x);
        states[l] = cell_step(tape, cell, xd, &states[l]);
        let mut h = states[l].h();
        if hp.residual && l >= 1 {
            h = tape.add(h, x);
        }
        x = h;
    }
    let top = x;

    if matches!(vars.attention, AttentionVars::None) || prep.values.is_empty() {
        return tape.matmul(top, vars.output_projection);
    }

    let score_cols: Vec<Var> = match &vars.attention {
        AttentionVars::Luong { w } | AttentionVars::ScaledLuong { w, .. } => {
            let qw = tape.matmul(top, *w);
            prep.values.iter().map(|&val| tape.row_dot(qw, val)).collect()
        }
        AttentionVars::Bahdanau { w_query, .. } => {
            let qp = tape.matmul(top, *w_query);
            let v = prep.score_vec.expect("bahdanau score vector");
            prep.keys
                .iter()
                .map(|&key| {
                    let pre = tape.add(qp, key);
                    let act = tape.tanh(pre);
                    tape.matmul(act, v)
                })
                .collect()
        }
        AttentionVars::NormedBahdanau { w_query, b, .. } => {
            let qp = tape.matmul(top, *w_query);
            let v = prep.score_vec.expect("normed bahdanau score vector");
            prep.keys
                .iter()
                .map(|&key| {
                    let pre = tape.add(qp, key);
                    let pre = tape.add_row(pre, *b);
                    let act = tape.tanh(pre);
                    tape.matmul(act, v)
                })
                .collect()
        }
        AttentionVars::None => unreachable!(),
    };

    let mut scores = tape.concat_cols(&score_cols);
    if let AttentionVars::ScaledLuong { g, .. } = &vars.attention {
        scores = tape.mul_scalar(scores, *g);
    }
    let weights = tape.softmax_rows(scores);

    let mut context: Option<Var> = None;
    for (t, &val) in prep.values.iter().enumerate() {
        let w_t = tape.slice_cols(weights, t, 1);
        let term = tape.mul_col(val, w_t);
        context = Some(match context {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    }
    let context = context.expect("non-empty annotations");

    let combine = vars.attn_combine.expect("attention requires a combine matrix");
    let cat = tape.concat_cols(&[context, top]);
    let lin = tape.matmul(cat, combine);
    let attn_hidden = tape.tanh(lin);
    tape.matmul(attn_hidden, vars.output_projection)
}

/// Teacher-forced cross-entropy over a batch, summed over target positions
/// and scaled by 1/batch. Returns the loss var and the gold token count.
///
/// The batch may mix source lengths; runs of equal length are encoded
/// together (training batches are bucketed, so they form a single run).
pub(crate) fn build_loss(
    tape: &mut Tape,
    vars: &ModelVars,
    hp: &HyperParams,
    batch: &Batch,
    dropper: &mut Dropper,
) -> (Var, usize) {
    assert!(!batch.src.is_empty(), "empty batch");
    let total_rows = batch.src.len();

    let mut ce_terms: Vec<Var> = Vec::new();
    let mut token_count = 0usize;

    let mut start = 0;
    while start < batch.src.len() {
        let len = batch.src[start].len();
        let mut end = start + 1;
        while end < batch.src.len() && batch.src[end].len() == len {
            end += 1;
        }
        let src = &batch.src[start..end];
        let tgt = &batch.tgt[start..end];
        token_count += tgt.iter().map(|t| t.len() + 1).sum::<usize>();

        let (annotations, enc_finals) = build_encoder(tape, vars, hp, src, dropper);
        let prep = prepare_attention(tape, vars, &annotations);
        let mut states = enc_finals;

        let dec_steps = tgt.iter().map(Vec::len).max().unwrap_or(0) + 1;
        for t in 0..dec_steps {
            let prev_ids: Vec<usize> = tgt
                .iter()
                .map(|seq| if t == 0 { SOS } else { seq.get(t - 1).copied().unwrap_or(EOS) })
                .collect();
            let prev_emb = tape.embed(vars.tgt_embedding, &prev_ids);
            let logits = decoder_step(tape, vars, hp, &prep, prev_emb, &mut states, dropper);

            let mut gold = Vec::with_capacity(tgt.len());
            let mut mask = Vec::with_capacity(tgt.len());
            for seq in tgt {
                if t < seq.len() {
                    gold.push(seq[t]);
                    mask.push(true);
                } else if t == seq.len() {
                    gold.push(EOS);
                    mask.push(true);
                } else {
                    gold.push(EOS);
                    mask.push(false);
                }
            }
            ce_terms.push(tape.cross_entropy(logits, &gold, &mask));
        }
        start = end;
    }

    let mut total = ce_terms[0];
    for &term in &ce_terms[1..] {
        total = tape.add(total, term);
    }
    let loss = tape.scale(total, 1.0 / total_rows as f64);
    (loss, token_count)
}

/// Teacher-forced log-probabilities of each gold token (including the
/// closing eos) for every sentence in the batch, in batch order.
pub(crate) fn gold_logprobs(
    tape: &mut Tape,
    vars: &ModelVars,
    hp: &HyperParams,
    src: &[Vec<usize>],
    tgt: &[Vec<usize>],
) -> Vec<Vec<f64>> {
    let mut dropper = Dropper::inference();
    let (annotations, enc_finals) = build_encoder(tape, vars, hp, src, &mut dropper);
    let prep = prepare_attention(tape, vars, &annotations);
    let mut states = enc_finals;

    let mut out: Vec<Vec<f64>> = tgt.iter().map(|t| Vec::with_capacity(t.len() + 1)).collect();
    let dec_steps = tgt.iter().map(Vec::len).max().unwrap_or(0) + 1;
    for t in 0..dec_steps {
        let prev_ids: Vec<usize> = tgt
            .iter()
            .map(|seq| if t == 0 { SOS } else { seq.get(t - 1).copied().unwrap_or(EOS) })
            .collect();
        let prev_emb = tape.embed(vars.tgt_embedding, &prev_ids);
        let logits = decoder_step(tape, vars, hp, &prep, prev_emb, &mut states, &mut dropper);
        let values = tape.value(logits);
        for (b, seq) in tgt.iter().enumerate() {
            if t <= seq.len() {
                let gold = if t < seq.len() { seq[t] } else { EOS };
                let lp = crate::graph::log_softmax(values.row(b));
                out[b].push(lp[gold]);
            }
        }
    }
    out
}
