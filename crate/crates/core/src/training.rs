//! The optimization loop: SGD/Adam with global-norm gradient clipping,
//! bucketed minibatching, snapshot checkpoints at a fixed cadence, and
//! divergence detection with early stop.

use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

use crate::corpus::{CorpusSplit, SentencePair, Vocabulary};
use crate::evaluation::{self, EvalError};
use crate::lexing::Language;
use crate::model::{
    self, Batch, Direction, HyperParams, ModelError, ModelParams, OptimizerKind,
};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty (or every pair exceeds the length caps)")]
    EmptyTrainSet,
    #[error("tensor {name} shape mismatch: params {params:?} vs grads {grads:?}")]
    ShapeMismatch { name: String, params: (usize, usize), grads: (usize, usize) },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Scale all gradients by clip_norm/N when their global L2 norm N exceeds
/// clip_norm. Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut ModelParams, clip_norm: f64) -> f64 {
    let norm = grads
        .named_tensors()
        .iter()
        .map(|(_, t)| t.sq_norm())
        .sum::<f64>()
        .sqrt();
    if norm > clip_norm {
        let scale = clip_norm / norm;
        for (_, t) in grads.named_tensors_mut() {
            t.scale_in_place(scale);
        }
    }
    norm
}

fn check_aligned(
    params: &ModelParams,
    grads: &ModelParams,
) -> Result<(), TrainError> {
    let p = params.named_tensors();
    let g = grads.named_tensors();
    if p.len() != g.len() {
        return Err(TrainError::ShapeMismatch {
            name: "<structure>".into(),
            params: (p.len(), 0),
            grads: (g.len(), 0),
        });
    }
    for ((pn, pt), (gn, gt)) in p.iter().zip(&g) {
        if pn != gn || pt.shape() != gt.shape() {
            return Err(TrainError::ShapeMismatch {
                name: pn.clone(),
                params: pt.shape(),
                grads: gt.shape(),
            });
        }
    }
    Ok(())
}

/// Plain gradient descent: theta <- theta - lr * g, elementwise.
pub fn sgd_update(
    params: &mut ModelParams,
    grads: &ModelParams,
    lr: f64,
) -> Result<(), TrainError> {
    check_aligned(params, grads)?;
    for ((_, p), (_, g)) in params.named_tensors_mut().into_iter().zip(grads.named_tensors()) {
        p.add_scaled_in_place(g, -lr);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment accumulators, shaped exactly like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(template: &ModelParams) -> Self {
        AdamState { m: template.zeros_like(), v: template.zeros_like(), step: 0 }
    }
}

/// Standard Adam with bias-corrected moments. The step counter advances
/// before the corrections are computed.
pub fn adam_update(
    params: &mut ModelParams,
    state: &mut AdamState,
    grads: &ModelParams,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    check_aligned(params, grads)?;
    check_aligned(&state.m, grads)?;
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    let mut p_slots = params.named_tensors_mut();
    let mut m_slots = state.m.named_tensors_mut();
    let mut v_slots = state.v.named_tensors_mut();
    for (i, (_, g)) in grads.named_tensors().into_iter().enumerate() {
        let p = p_slots[i].1.data_mut();
        let m = m_slots[i].1.data_mut();
        let v = v_slots[i].1.data_mut();
        for e in 0..g.len() {
            let ge = g.data()[e];
            m[e] = cfg.beta1 * m[e] + (1.0 - cfg.beta1) * ge;
            v[e] = cfg.beta2 * v[e] + (1.0 - cfg.beta2) * ge * ge;
            let m_hat = m[e] / bc1;
            let v_hat = v[e] / bc2;
            p[e] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Optimizer dispatch for the training loop.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd,
    Adam(AdamState),
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, template: &ModelParams) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => OptimizerState::Adam(AdamState::new(template)),
        }
    }

    fn apply(
        &mut self,
        params: &mut ModelParams,
        grads: &ModelParams,
        lr: f64,
    ) -> Result<(), TrainError> {
        match self {
            OptimizerState::Sgd => sgd_update(params, grads, lr),
            OptimizerState::Adam(state) => {
                adam_update(params, state, grads, lr, &AdamConfig::default())
            }
        }
    }
}

/// Persisted generator positions, for inspection of a finished run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub batching: u64,
    pub dropout: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub step: u64,
    pub train_loss: f64,
    pub dev_ppl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub rng_state: RngState,
    pub history: Vec<HistoryEntry>,
}

/// Model parameters captured at one point of the snapshot schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: u64,
    pub params: ModelParams,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub direction: Direction,
    /// Snapshot cadence in steps.
    pub snapshot_every: u64,
    /// Test hook: poison the gradients at this step with a NaN.
    pub inject_nan_at_step: Option<u64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            direction: Direction::LATEX_TO_MIZAR,
            snapshot_every: 1000,
            inject_nan_at_step: None,
        }
    }
}

/// Progress callbacks emitted by [`train`].
pub enum TrainEvent<'a> {
    Step { step: u64, loss: f64 },
    Snapshot { step: u64, dev_ppl: Option<f64>, params: &'a ModelParams },
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub snapshots: Vec<Snapshot>,
    pub diverged: bool,
    pub vocab_src: Vocabulary,
    pub vocab_tgt: Vocabulary,
    /// Training pairs dropped for exceeding the length caps.
    pub skipped_long: usize,
}

fn side(pair: &SentencePair, lang: Language) -> &crate::lexing::TokenSequence {
    match lang {
        Language::Latex => &pair.latex,
        Language::Mizar => &pair.mizar,
    }
}

/// Encode pairs into id space for one direction, dropping pairs that exceed
/// the length caps.
fn encode_pairs(
    pairs: &[SentencePair],
    direction: Direction,
    vocab_src: &Vocabulary,
    vocab_tgt: &Vocabulary,
    hp: &HyperParams,
) -> (Vec<(Vec<usize>, Vec<usize>)>, usize) {
    let mut out = Vec::with_capacity(pairs.len());
    let mut skipped = 0;
    for pair in pairs {
        let src = vocab_src.encode(side(pair, direction.src));
        let tgt = vocab_tgt.encode(side(pair, direction.tgt));
        if src.len() > hp.max_src_len || tgt.len() > hp.max_tgt_len {
            skipped += 1;
            continue;
        }
        out.push((src, tgt));
    }
    (out, skipped)
}

/// Deterministic epoch batching: bucket by source length, shuffle within
/// buckets, then shuffle the batch order.
struct Batcher {
    buckets: Vec<Vec<usize>>,
    batch_size: usize,
    queue: VecDeque<Vec<usize>>,
}

impl Batcher {
    fn new(ids: &[(Vec<usize>, Vec<usize>)], batch_size: usize) -> Self {
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, (src, _)) in ids.iter().enumerate() {
            by_len.entry(src.len()).or_default().push(i);
        }
        Batcher {
            buckets: by_len.into_values().collect(),
            batch_size,
            queue: VecDeque::new(),
        }
    }

    fn next(&mut self, rng: &mut Rng) -> Vec<usize> {
        if self.queue.is_empty() {
            let mut batches = Vec::new();
            for bucket in &mut self.buckets {
                rng.shuffle(bucket);
                for chunk in bucket.chunks(self.batch_size) {
                    batches.push(chunk.to_vec());
                }
            }
            rng.shuffle(&mut batches);
            self.queue.extend(batches);
        }
        self.queue.pop_front().expect("refilled above")
    }
}

fn gather(ids: &[(Vec<usize>, Vec<usize>)], idxs: &[usize]) -> Batch {
    Batch {
        src: idxs.iter().map(|&i| ids[i].0.clone()).collect(),
        tgt: idxs.iter().map(|&i| ids[i].1.clone()).collect(),
    }
}

fn poison(grads: &mut ModelParams) {
    if let Some((_, t)) = grads.named_tensors_mut().first_mut() {
        t.data_mut()[0] = f64::NAN;
    }
}

/// Run the full optimization: `hp.train_steps` minibatch steps over the
/// training part of `corpus`, with vocabularies built from that same part.
///
/// A snapshot is captured every `opts.snapshot_every` steps. If the loss or
/// any parameter becomes non-finite the run stops early with
/// `diverged = true` and the returned parameters are the last finite ones
/// (the parameters in every emitted snapshot are always finite).
pub fn train(
    corpus: &CorpusSplit,
    hp: &HyperParams,
    opts: &TrainOptions,
    mut observer: impl FnMut(TrainEvent),
) -> Result<TrainOutcome, TrainError> {
    hp.validate().map_err(TrainError::Model)?;
    if corpus.train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let vocab_src = crate::corpus::build_vocab(
        corpus.train.iter().map(|p| side(p, opts.direction.src)),
    );
    let vocab_tgt = crate::corpus::build_vocab(
        corpus.train.iter().map(|p| side(p, opts.direction.tgt)),
    );
    let (train_ids, skipped_long) =
        encode_pairs(&corpus.train, opts.direction, &vocab_src, &vocab_tgt, hp);
    if train_ids.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let (dev_ids, _) = encode_pairs(&corpus.dev, opts.direction, &vocab_src, &vocab_tgt, hp);

    let mut params = model::init_params(hp, vocab_src.len(), vocab_tgt.len());
    let mut streams = model::SeedStreams::from_seed(hp.seed);
    let mut optimizer = OptimizerState::new(hp.optimizer, &params);
    let mut batcher = Batcher::new(&train_ids, hp.batch_size);

    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut last_finite = params.clone();
    let mut diverged = false;
    let mut completed = 0u64;

    for step in 1..=hp.train_steps {
        let batch = gather(&train_ids, &batcher.next(&mut streams.batching));
        let step_result = model::loss_and_grads(&batch, hp, &params, Some(&mut streams.dropout));
        let loss = match step_result {
            Ok((loss, _tokens, mut grads)) => {
                if opts.inject_nan_at_step == Some(step) {
                    poison(&mut grads);
                }
                clip_gradients(&mut grads, hp.clip_norm);
                optimizer.apply(&mut params, &grads, hp.learning_rate)?;
                loss
            }
            Err(ModelError::NonFiniteLoss) => f64::NAN,
            Err(other) => return Err(other.into()),
        };
        completed = step;
        history.push(HistoryEntry { step, train_loss: loss, dev_ppl: None });
        observer(TrainEvent::Step { step, loss });

        if !loss.is_finite() || !params.is_finite() {
            diverged = true;
            params = last_finite.clone();
            break;
        }
        if opts.snapshot_every > 0 && step % opts.snapshot_every == 0 {
            let dev_ppl = if dev_ids.is_empty() {
                None
            } else {
                Some(perplexity_of(hp, &params, &dev_ids)?)
            };
            if let Some(entry) = history.last_mut() {
                entry.dev_ppl = dev_ppl;
            }
            snapshots.push(Snapshot { step, params: params.clone() });
            last_finite = params.clone();
            observer(TrainEvent::Snapshot { step, dev_ppl, params: &params });
        }
    }

    Ok(TrainOutcome {
        state: TrainState {
            step: completed,
            params,
            optimizer,
            rng_state: RngState {
                batching: streams.batching.state(),
                dropout: streams.dropout.state(),
            },
            history,
        },
        snapshots,
        diverged,
        vocab_src,
        vocab_tgt,
        skipped_long,
    })
}

fn perplexity_of(
    hp: &HyperParams,
    params: &ModelParams,
    ids: &[(Vec<usize>, Vec<usize>)],
) -> Result<f64, TrainError> {
    let logprobs = model::gold_logprobs(ids, hp, params)?;
    Ok(evaluation::perplexity(&logprobs)?)
}

/// Teacher-forced perplexity of a model on a held-out set, used at snapshot
/// times for model selection.
pub fn dev_perplexity(
    hp: &HyperParams,
    params: &ModelParams,
    vocab_src: &Vocabulary,
    vocab_tgt: &Vocabulary,
    direction: Direction,
    dev: &[SentencePair],
) -> Result<f64, TrainError> {
    let (ids, _) = encode_pairs(dev, direction, vocab_src, vocab_tgt, hp);
    if ids.is_empty() {
        return Err(TrainError::Eval(EvalError::EmptyEvalSet));
    }
    perplexity_of(hp, params, &ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SplitSizes;
    use crate::lexing::TokenSequence;
    use crate::model::{init_params, AttentionKind, UnitType};

    fn tiny_params() -> ModelParams {
        let hp = HyperParams { num_units: 2, num_layers: 1, seed: 3, ..HyperParams::default() };
        init_params(&hp, 5, 5)
    }

    #[test]
    fn sgd_zero_gradient_is_identity() {
        let mut params = tiny_params();
        let before = params.clone();
        let grads = params.zeros_like();
        sgd_update(&mut params, &grads, 1.0).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn sgd_simple_arithmetic() {
        let mut params = tiny_params();
        for (_, t) in params.named_tensors_mut() {
            t.data_mut().fill(1.0);
        }
        let mut grads = params.zeros_like();
        for (_, t) in grads.named_tensors_mut() {
            t.data_mut().fill(0.5);
        }
        sgd_update(&mut params, &grads, 1.0).unwrap();
        for (_, t) in params.named_tensors() {
            assert!(t.data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn sgd_matches_elementwise_oracle() {
        let mut params = tiny_params();
        let mut grads = params.zeros_like();
        let mut rng = Rng::new(17);
        for (_, t) in grads.named_tensors_mut() {
            for v in t.data_mut() {
                *v = rng.uniform(-1.0, 1.0);
            }
        }
        let before = params.clone();
        sgd_update(&mut params, &grads, 0.3).unwrap();
        for (((_, after), (_, b)), (_, g)) in params
            .named_tensors()
            .into_iter()
            .zip(before.named_tensors())
            .zip(grads.named_tensors())
        {
            for e in 0..after.len() {
                let want = b.data()[e] - 0.3 * g.data()[e];
                assert!((after.data()[e] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn adam_first_step_magnitude() {
        // With constant gradient from zero moments, bias correction makes
        // the first update approximately lr in magnitude.
        let mut params = tiny_params();
        let before = params.clone();
        let mut grads = params.zeros_like();
        for (_, t) in grads.named_tensors_mut() {
            t.data_mut().fill(0.37);
        }
        let mut state = AdamState::new(&params);
        let lr = 0.01;
        adam_update(&mut params, &mut state, &grads, lr, &AdamConfig::default()).unwrap();
        for ((_, after), (_, b)) in params.named_tensors().into_iter().zip(before.named_tensors())
        {
            for e in 0..after.len() {
                let delta = (after.data()[e] - b.data()[e]).abs();
                assert!(delta >= 0.9 * lr && delta <= lr, "delta {delta}");
            }
        }
    }

    #[test]
    fn adam_zero_gradient_never_moves() {
        let mut params = tiny_params();
        let before = params.clone();
        let grads = params.zeros_like();
        let mut state = AdamState::new(&params);
        for _ in 0..5 {
            adam_update(&mut params, &mut state, &grads, 0.5, &AdamConfig::default()).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn adam_two_steps_match_scalar_oracle() {
        let mut params = tiny_params();
        let before = params.clone();
        let cfg = AdamConfig::default();
        let g1 = 0.2f64;
        let g2 = -0.6f64;
        let mut grads = params.zeros_like();
        let mut state = AdamState::new(&params);
        for (_, t) in grads.named_tensors_mut() {
            t.data_mut().fill(g1);
        }
        adam_update(&mut params, &mut state, &grads, 0.1, &cfg).unwrap();
        for (_, t) in grads.named_tensors_mut() {
            t.data_mut().fill(g2);
        }
        adam_update(&mut params, &mut state, &grads, 0.1, &cfg).unwrap();

        // Scalar oracle for two Adam steps on one coordinate.
        let mut m = 0.0f64;
        let mut v = 0.0f64;
        let mut delta = 0.0f64;
        for (t, g) in [(1, g1), (2, g2)] {
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            delta -= 0.1 * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        for ((_, after), (_, b)) in params.named_tensors().into_iter().zip(before.named_tensors())
        {
            for e in 0..after.len() {
                let want = b.data()[e] + delta;
                assert!((after.data()[e] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clip_identity_below_threshold() {
        let mut grads = tiny_params().zeros_like();
        for (_, t) in grads.named_tensors_mut() {
            t.data_mut().fill(1e-3);
        }
        let copy = grads.clone();
        let norm = clip_gradients(&mut grads, 5.0);
        assert!(norm < 5.0);
        assert_eq!(grads, copy);
    }

    #[test]
    fn clip_three_four_five() {
        // A single [3, 4] tensor clipped to norm 1 becomes [0.6, 0.8]; fill
        // everything else with zero so only that tensor carries norm.
        let mut grads = tiny_params().zeros_like();
        {
            let mut slots = grads.named_tensors_mut();
            let (_, t) = &mut slots[0];
            t.data_mut()[0] = 3.0;
            t.data_mut()[1] = 4.0;
        }
        let norm = clip_gradients(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let slots = grads.named_tensors();
        assert!((slots[0].1.data()[0] - 0.6).abs() < 1e-12);
        assert!((slots[0].1.data()[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn clip_multi_tensor_matches_oracle_and_never_grows() {
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let mut grads = tiny_params().zeros_like();
            for (_, t) in grads.named_tensors_mut() {
                for v in t.data_mut() {
                    *v = rng.uniform(-2.0, 2.0);
                }
            }
            let want_norm = grads
                .named_tensors()
                .iter()
                .flat_map(|(_, t)| t.data())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            let clip = 1.5;
            let norm = clip_gradients(&mut grads, clip);
            assert!((norm - want_norm).abs() < 1e-9);
            let after = grads
                .named_tensors()
                .iter()
                .flat_map(|(_, t)| t.data())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!(after <= want_norm + 1e-12);
            assert!(after <= clip + 1e-9);
        }
    }

    fn toy_corpus() -> CorpusSplit {
        let pair = |l: &str, m: &str| SentencePair {
            latex: TokenSequence::from_line(l, Language::Latex),
            mizar: TokenSequence::from_line(m, Language::Mizar),
            position: None,
        };
        let pairs = vec![
            pair("$ a $", "a ;"),
            pair("$ b $", "b ;"),
            pair("$ a + b $", "a + b ;"),
            pair("$ b + a $", "b + a ;"),
        ];
        CorpusSplit {
            train: pairs.clone(),
            dev: vec![pairs[0].clone()],
            test: vec![],
            inference: vec![],
            seed: 0,
        }
    }

    fn toy_hp(train_steps: u64) -> HyperParams {
        HyperParams {
            unit_type: UnitType::Lstm,
            attention: AttentionKind::Luong,
            num_units: 16,
            num_layers: 1,
            dropout: 0.0,
            batch_size: 4,
            learning_rate: 1.0,
            clip_norm: 1.0,
            train_steps,
            seed: 11,
            ..HyperParams::default()
        }
    }

    #[test]
    fn zero_steps_returns_initial_params() {
        let corpus = toy_corpus();
        let hp = toy_hp(0);
        let outcome = train(&corpus, &hp, &TrainOptions::default(), |_| {}).unwrap();
        let want = init_params(&hp, outcome.vocab_src.len(), outcome.vocab_tgt.len());
        assert_eq!(outcome.state.params, want);
        assert!(outcome.snapshots.is_empty());
        assert!(!outcome.diverged);
        assert_eq!(outcome.state.step, 0);
    }

    #[test]
    fn injected_nan_stops_early_with_finite_params() {
        let corpus = toy_corpus();
        let hp = toy_hp(40);
        let opts = TrainOptions {
            snapshot_every: 10,
            inject_nan_at_step: Some(25),
            ..TrainOptions::default()
        };
        let outcome = train(&corpus, &hp, &opts, |_| {}).unwrap();
        assert!(outcome.diverged);
        assert_eq!(outcome.state.step, 25);
        // Snapshots up to the failure are preserved; params are the last
        // finite snapshot.
        assert_eq!(
            outcome.snapshots.iter().map(|s| s.step).collect::<Vec<_>>(),
            vec![10, 20]
        );
        assert!(outcome.state.params.is_finite());
        assert_eq!(outcome.state.params, outcome.snapshots[1].params);
    }

    #[test]
    fn training_is_reproducible() {
        let corpus = toy_corpus();
        let hp = toy_hp(12);
        let run = || {
            let mut losses = Vec::new();
            let outcome = train(&corpus, &hp, &TrainOptions::default(), |event| {
                if let TrainEvent::Step { loss, .. } = event {
                    losses.push(loss);
                }
            })
            .unwrap();
            (losses, outcome.state.params)
        };
        let (l1, p1) = run();
        let (l2, p2) = run();
        assert_eq!(l1, l2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn toy_corpus_memorized_by_short_training() {
        let corpus = toy_corpus();
        let mut hp = toy_hp(800);
        hp.num_units = 24;
        let opts = TrainOptions { snapshot_every: 100, ..TrainOptions::default() };
        let outcome = train(&corpus, &hp, &opts, |_| {}).unwrap();
        assert!(!outcome.diverged);
        let exact = corpus
            .train
            .iter()
            .filter(|p| {
                let out = model::greedy_decode_tokens(
                    &p.latex,
                    &outcome.vocab_src,
                    &outcome.vocab_tgt,
                    Language::Mizar,
                    &hp,
                    &outcome.state.params,
                    hp.max_tgt_len,
                )
                .unwrap();
                out.tokens.tokens() == p.mizar.tokens()
            })
            .count();
        assert_eq!(exact, corpus.train.len(), "toy corpus not memorized");

        let ppl = dev_perplexity(
            &hp,
            &outcome.state.params,
            &outcome.vocab_src,
            &outcome.vocab_tgt,
            Direction::LATEX_TO_MIZAR,
            &corpus.train,
        )
        .unwrap();
        assert!(ppl < 1.1, "train perplexity {ppl}");
    }

    #[test]
    fn dev_perplexity_of_uniform_model_is_vocab_size() {
        let corpus = toy_corpus();
        let hp = toy_hp(1);
        let vocab_src = crate::corpus::build_vocab(corpus.train.iter().map(|p| &p.latex));
        let vocab_tgt = crate::corpus::build_vocab(corpus.train.iter().map(|p| &p.mizar));
        let mut params = init_params(&hp, vocab_src.len(), vocab_tgt.len());
        params.output_projection.data_mut().fill(0.0);
        let ppl = dev_perplexity(
            &hp,
            &params,
            &vocab_src,
            &vocab_tgt,
            Direction::LATEX_TO_MIZAR,
            &corpus.dev,
        )
        .unwrap();
        assert!((ppl - vocab_tgt.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn dev_perplexity_rejects_empty_set() {
        let corpus = toy_corpus();
        let hp = toy_hp(1);
        let vocab = crate::corpus::build_vocab(corpus.train.iter().map(|p| &p.latex));
        let params = init_params(&hp, vocab.len(), vocab.len());
        let err =
            dev_perplexity(&hp, &params, &vocab, &vocab, Direction::LATEX_TO_MIZAR, &[]).unwrap_err();
        assert!(matches!(err, TrainError::Eval(EvalError::EmptyEvalSet)));
    }

    #[test]
    fn empty_train_set_is_rejected() {
        let corpus = CorpusSplit {
            train: vec![],
            dev: vec![],
            test: vec![],
            inference: vec![],
            seed: 0,
        };
        let err = train(&corpus, &toy_hp(5), &TrainOptions::default(), |_| {}).unwrap_err();
        assert!(matches!(err, TrainError::EmptyTrainSet));
    }

    #[test]
    fn split_corpus_feeds_training() {
        // End-to-end split -> train smoke check.
        let pair = |i: usize| SentencePair {
            latex: TokenSequence::from_line(&format!("$ x_{i} $"), Language::Latex),
            mizar: TokenSequence::from_line(&format!("x{i} ;"), Language::Mizar),
            position: None,
        };
        let pairs: Vec<SentencePair> = (0..20).map(pair).collect();
        let split = crate::corpus::split_corpus(
            pairs,
            SplitSizes { train: 16, dev: 2, test: 1, inference: 1 },
            9,
        )
        .unwrap();
        let hp = toy_hp(3);
        let outcome = train(&split, &hp, &TrainOptions::default(), |_| {}).unwrap();
        assert_eq!(outcome.state.step, 3);
        assert_eq!(outcome.state.history.len(), 3);
    }
}
