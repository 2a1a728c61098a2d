//! Learnable tensors of one seq2seq instance and their initialization.
//!
//! Shapes are fully determined by the hyperparameters and the two vocabulary
//! sizes. Tensors are visited in one fixed structural order everywhere
//! (initialization, checkpointing, gradient collection, optimizer updates),
//! which keeps seeded runs bit-for-bit reproducible.

use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{AttentionKind, EncoderType, HyperParams, UnitType};

/// Gate order inside fused LSTM kernels/biases: input, candidate, forget,
/// output. Each block is `num_units` wide.
pub const LSTM_GATES: usize = 4;
/// Gate order inside fused GRU gate kernels: update (z), reset (r).
pub const GRU_GATES: usize = 2;

/// Column offset of the forget-gate block in a fused LSTM tensor.
pub fn forget_block(d: usize) -> std::ops::Range<usize> {
    2 * d..3 * d
}

/// Weights of one recurrent cell. Cell inputs are `[x; h]` rows of width
/// `2d`, so every kernel has `2d` rows.
#[derive(Debug, Clone, PartialEq)]
pub enum CellParams {
    Lstm {
        /// 2d x 4d fused gate kernel.
        kernel: Tensor,
        /// 1 x 4d fused gate bias; the forget block starts at `forget_bias`.
        bias: Tensor,
    },
    Gru {
        /// 2d x 2d fused kernel for the update/reset gates.
        gate_kernel: Tensor,
        gate_bias: Tensor,
        /// 2d x d kernel for the candidate, applied to `[x; r*h]`.
        cand_kernel: Tensor,
        cand_bias: Tensor,
    },
    LayerNormLstm {
        /// 2d x 4d fused gate kernel (no additive bias; shifts play that role).
        kernel: Tensor,
        /// 1 x 4d per-gate normalization gains.
        gains: Tensor,
        /// 1 x 4d per-gate normalization shifts.
        shifts: Tensor,
    },
}

impl CellParams {
    fn init(hp: &HyperParams, rng: &mut Rng) -> Self {
        let d = hp.num_units;
        let u = |r: usize, c: usize, rng: &mut Rng| Tensor::uniform(r, c, -0.1, 0.1, rng);
        match hp.unit_type {
            UnitType::Lstm => {
                let kernel = u(2 * d, LSTM_GATES * d, rng);
                let mut bias = u(1, LSTM_GATES * d, rng);
                for j in forget_block(d) {
                    bias.set(0, j, hp.forget_bias);
                }
                CellParams::Lstm { kernel, bias }
            }
            UnitType::Gru => CellParams::Gru {
                gate_kernel: u(2 * d, GRU_GATES * d, rng),
                gate_bias: u(1, GRU_GATES * d, rng),
                cand_kernel: u(2 * d, d, rng),
                cand_bias: u(1, d, rng),
            },
            UnitType::LayerNormLstm => {
                let kernel = u(2 * d, LSTM_GATES * d, rng);
                let gains = Tensor::filled(1, LSTM_GATES * d, 1.0);
                let mut shifts = Tensor::zeros(1, LSTM_GATES * d);
                for j in forget_block(d) {
                    shifts.set(0, j, hp.forget_bias);
                }
                CellParams::LayerNormLstm { kernel, gains, shifts }
            }
        }
    }

    fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        match self {
            CellParams::Lstm { kernel, bias } => {
                out.push((format!("{prefix}.kernel"), kernel));
                out.push((format!("{prefix}.bias"), bias));
            }
            CellParams::Gru { gate_kernel, gate_bias, cand_kernel, cand_bias } => {
                out.push((format!("{prefix}.gate_kernel"), gate_kernel));
                out.push((format!("{prefix}.gate_bias"), gate_bias));
                out.push((format!("{prefix}.cand_kernel"), cand_kernel));
                out.push((format!("{prefix}.cand_bias"), cand_bias));
            }
            CellParams::LayerNormLstm { kernel, gains, shifts } => {
                out.push((format!("{prefix}.kernel"), kernel));
                out.push((format!("{prefix}.gains"), gains));
                out.push((format!("{prefix}.shifts"), shifts));
            }
        }
    }

    fn push_named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        match self {
            CellParams::Lstm { kernel, bias } => {
                out.push((format!("{prefix}.kernel"), kernel));
                out.push((format!("{prefix}.bias"), bias));
            }
            CellParams::Gru { gate_kernel, gate_bias, cand_kernel, cand_bias } => {
                out.push((format!("{prefix}.gate_kernel"), gate_kernel));
                out.push((format!("{prefix}.gate_bias"), gate_bias));
                out.push((format!("{prefix}.cand_kernel"), cand_kernel));
                out.push((format!("{prefix}.cand_bias"), cand_bias));
            }
            CellParams::LayerNormLstm { kernel, gains, shifts } => {
                out.push((format!("{prefix}.kernel"), kernel));
                out.push((format!("{prefix}.gains"), gains));
                out.push((format!("{prefix}.shifts"), shifts));
            }
        }
    }
}

/// One bidirectional encoder layer: a forward and a backward cell whose
/// concatenated outputs are merged back to width d by a linear projection.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLayerParams {
    pub fwd: CellParams,
    pub bwd: CellParams,
    /// 2d x d merge projection.
    pub proj: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderParams {
    /// `num_layers` stacked cells.
    Uni(Vec<CellParams>),
    /// `num_layers / 2` bidirectional layers (each counts as two).
    Bi(Vec<BiLayerParams>),
}

/// Attention scoring weights, one variant per mechanism.
#[derive(Debug, Clone, PartialEq)]
pub enum AttentionParams {
    None,
    Luong {
        /// d x d bilinear score matrix.
        w: Tensor,
    },
    ScaledLuong {
        w: Tensor,
        /// Learned scalar multiplier on the scores.
        g: Tensor,
    },
    Bahdanau {
        w_query: Tensor,
        w_key: Tensor,
        /// d x 1 score vector.
        v: Tensor,
    },
    NormedBahdanau {
        w_query: Tensor,
        w_key: Tensor,
        /// d x 1 unnormalized direction; the effective vector is g*u/|u|.
        u: Tensor,
        g: Tensor,
        /// 1 x d bias added inside the tanh.
        b: Tensor,
    },
}

/// All learnable tensors of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub src_embedding: Tensor,
    pub tgt_embedding: Tensor,
    pub encoder: EncoderParams,
    pub decoder: Vec<CellParams>,
    pub attention: AttentionParams,
    /// 2d x d combination of [context; top hidden], present iff attention is.
    pub attn_combine: Option<Tensor>,
    /// d x |V_tgt| output projection.
    pub output_projection: Tensor,
}

impl ModelParams {
    /// Initialize all weights uniformly in [-0.1, 0.1) from the seeded
    /// generator; forget-gate biases are set to `hp.forget_bias` exactly and
    /// normalization gains/shifts and attention scalars to their identity
    /// values.
    pub fn init(hp: &HyperParams, vocab_src: usize, vocab_tgt: usize, rng: &mut Rng) -> Self {
        let d = hp.num_units;
        let u = |r: usize, c: usize, rng: &mut Rng| Tensor::uniform(r, c, -0.1, 0.1, rng);

        let src_embedding = u(vocab_src, d, rng);
        let tgt_embedding = u(vocab_tgt, d, rng);

        let encoder = match hp.encoder_type {
            EncoderType::Unidirectional => {
                EncoderParams::Uni((0..hp.num_layers).map(|_| CellParams::init(hp, rng)).collect())
            }
            EncoderType::Bidirectional => EncoderParams::Bi(
                (0..hp.num_layers / 2)
                    .map(|_| BiLayerParams {
                        fwd: CellParams::init(hp, rng),
                        bwd: CellParams::init(hp, rng),
                        proj: u(2 * d, d, rng),
                    })
                    .collect(),
            ),
        };

        let decoder = (0..hp.num_layers).map(|_| CellParams::init(hp, rng)).collect();

        let attention = match hp.attention {
            AttentionKind::None => AttentionParams::None,
            AttentionKind::Luong => AttentionParams::Luong { w: u(d, d, rng) },
            AttentionKind::ScaledLuong => {
                AttentionParams::ScaledLuong { w: u(d, d, rng), g: Tensor::scalar(1.0) }
            }
            AttentionKind::Bahdanau => AttentionParams::Bahdanau {
                w_query: u(d, d, rng),
                w_key: u(d, d, rng),
                v: u(d, 1, rng),
            },
            AttentionKind::NormedBahdanau => AttentionParams::NormedBahdanau {
                w_query: u(d, d, rng),
                w_key: u(d, d, rng),
                u: u(d, 1, rng),
                g: Tensor::scalar(1.0),
                b: Tensor::zeros(1, d),
            },
        };

        let attn_combine = match hp.attention {
            AttentionKind::None => None,
            _ => Some(u(2 * d, d, rng)),
        };

        let output_projection = u(d, vocab_tgt, rng);

        ModelParams {
            src_embedding,
            tgt_embedding,
            encoder,
            decoder,
            attention,
            attn_combine,
            output_projection,
        }
    }

    /// Every tensor with a stable name, in the fixed structural order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        out.push(("src_embedding".to_owned(), &self.src_embedding));
        out.push(("tgt_embedding".to_owned(), &self.tgt_embedding));
        match &self.encoder {
            EncoderParams::Uni(layers) => {
                for (i, cell) in layers.iter().enumerate() {
                    cell.push_named(&format!("encoder.l{i}"), &mut out);
                }
            }
            EncoderParams::Bi(layers) => {
                for (i, layer) in layers.iter().enumerate() {
                    layer.fwd.push_named(&format!("encoder.bi{i}.fwd"), &mut out);
                    layer.bwd.push_named(&format!("encoder.bi{i}.bwd"), &mut out);
                    out.push((format!("encoder.bi{i}.proj"), &layer.proj));
                }
            }
        }
        for (i, cell) in self.decoder.iter().enumerate() {
            cell.push_named(&format!("decoder.l{i}"), &mut out);
        }
        match &self.attention {
            AttentionParams::None => {}
            AttentionParams::Luong { w } => out.push(("attention.w".to_owned(), w)),
            AttentionParams::ScaledLuong { w, g } => {
                out.push(("attention.w".to_owned(), w));
                out.push(("attention.g".to_owned(), g));
            }
            AttentionParams::Bahdanau { w_query, w_key, v } => {
                out.push(("attention.w_query".to_owned(), w_query));
                out.push(("attention.w_key".to_owned(), w_key));
                out.push(("attention.v".to_owned(), v));
            }
            AttentionParams::NormedBahdanau { w_query, w_key, u, g, b } => {
                out.push(("attention.w_query".to_owned(), w_query));
                out.push(("attention.w_key".to_owned(), w_key));
                out.push(("attention.u".to_owned(), u));
                out.push(("attention.g".to_owned(), g));
                out.push(("attention.b".to_owned(), b));
            }
        }
        if let Some(c) = &self.attn_combine {
            out.push(("attn_combine".to_owned(), c));
        }
        out.push(("output_projection".to_owned(), &self.output_projection));
        out
    }

    /// Mutable variant of [`named_tensors`](Self::named_tensors), same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        out.push(("src_embedding".to_owned(), &mut self.src_embedding));
        out.push(("tgt_embedding".to_owned(), &mut self.tgt_embedding));
        match &mut self.encoder {
            EncoderParams::Uni(layers) => {
                for (i, cell) in layers.iter_mut().enumerate() {
                    cell.push_named_mut(&format!("encoder.l{i}"), &mut out);
                }
            }
            EncoderParams::Bi(layers) => {
                for (i, layer) in layers.iter_mut().enumerate() {
                    layer.fwd.push_named_mut(&format!("encoder.bi{i}.fwd"), &mut out);
                    layer.bwd.push_named_mut(&format!("encoder.bi{i}.bwd"), &mut out);
                    out.push((format!("encoder.bi{i}.proj"), &mut layer.proj));
                }
            }
        }
        for (i, cell) in self.decoder.iter_mut().enumerate() {
            cell.push_named_mut(&format!("decoder.l{i}"), &mut out);
        }
        match &mut self.attention {
            AttentionParams::None => {}
            AttentionParams::Luong { w } => out.push(("attention.w".to_owned(), w)),
            AttentionParams::ScaledLuong { w, g } => {
                out.push(("attention.w".to_owned(), w));
                out.push(("attention.g".to_owned(), g));
            }
            AttentionParams::Bahdanau { w_query, w_key, v } => {
                out.push(("attention.w_query".to_owned(), w_query));
                out.push(("attention.w_key".to_owned(), w_key));
                out.push(("attention.v".to_owned(), v));
            }
            AttentionParams::NormedBahdanau { w_query, w_key, u, g, b } => {
                out.push(("attention.w_query".to_owned(), w_query));
                out.push(("attention.w_key".to_owned(), w_key));
                out.push(("attention.u".to_owned(), u));
                out.push(("attention.g".to_owned(), g));
                out.push(("attention.b".to_owned(), b));
            }
        }
        if let Some(c) = &mut self.attn_combine {
            out.push(("attn_combine".to_owned(), c));
        }
        out.push(("output_projection".to_owned(), &mut self.output_projection));
        out
    }

    /// Same structure with every tensor zeroed, used for gradient and
    /// optimizer-moment storage.
    pub fn zeros_like(&self) -> ModelParams {
        let mut copy = self.clone();
        for (_, t) in copy.named_tensors_mut() {
            t.data_mut().fill(0.0);
        }
        copy
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}
