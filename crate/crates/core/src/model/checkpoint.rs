//! Versioned text container for a trained model: hyperparameters, the two
//! vocabularies, and every tensor with its name and shape.
//!
//! Floats are written in Rust's shortest round-trip decimal form, so a
//! loaded checkpoint reproduces greedy decoding bit for bit.

use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

use crate::corpus::Vocabulary;
use crate::lexing::Language;
use crate::rng::Rng;

use super::{HyperParams, ModelError, ModelParams};

const MAGIC: &str = "miztex-checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format error at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A complete, self-describing model snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub hp: HyperParams,
    pub src_lang: Language,
    pub tgt_lang: Language,
    pub vocab_src: Vocabulary,
    pub vocab_tgt: Vocabulary,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.params.parameter_count() * 20);
        let hp = &self.hp;
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "src_lang {}", self.src_lang);
        let _ = writeln!(out, "tgt_lang {}", self.tgt_lang);
        let _ = writeln!(out, "unit_type {}", hp.unit_type);
        let _ = writeln!(out, "attention {}", hp.attention);
        let _ = writeln!(out, "num_layers {}", hp.num_layers);
        let _ = writeln!(out, "residual {}", hp.residual);
        let _ = writeln!(out, "optimizer {}", hp.optimizer);
        let _ = writeln!(out, "encoder_type {}", hp.encoder_type);
        let _ = writeln!(out, "num_units {}", hp.num_units);
        let _ = writeln!(out, "dropout {}", hp.dropout);
        let _ = writeln!(out, "forget_bias {}", hp.forget_bias);
        let _ = writeln!(out, "learning_rate {}", hp.learning_rate);
        let _ = writeln!(out, "batch_size {}", hp.batch_size);
        let _ = writeln!(out, "train_steps {}", hp.train_steps);
        let _ = writeln!(out, "seed {}", hp.seed);
        let _ = writeln!(out, "clip_norm {}", hp.clip_norm);
        let _ = writeln!(out, "max_src_len {}", hp.max_src_len);
        let _ = writeln!(out, "max_tgt_len {}", hp.max_tgt_len);
        let _ = writeln!(out, "vocab_src {}", self.vocab_src.len());
        for tok in self.vocab_src.tokens() {
            let _ = writeln!(out, "{tok}");
        }
        let _ = writeln!(out, "vocab_tgt {}", self.vocab_tgt.len());
        for tok in self.vocab_tgt.tokens() {
            let _ = writeln!(out, "{tok}");
        }
        for (name, tensor) in self.params.named_tensors() {
            let _ = writeln!(out, "tensor {name} {} {}", tensor.rows(), tensor.cols());
            for i in 0..tensor.rows() {
                let mut first = true;
                for v in tensor.row(i) {
                    if !first {
                        out.push(' ');
                    }
                    let _ = write!(out, "{v}");
                    first = false;
                }
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        let lines: Vec<&str> = text.lines().collect();
        let mut cursor = Cursor { lines: &lines, pos: 0 };

        let magic = cursor.next_line()?;
        if magic != MAGIC {
            return Err(cursor.err(format!("expected {MAGIC:?}, found {magic:?}")));
        }

        let mut fields: HashMap<String, String> = HashMap::new();
        let vocab_src_len = loop {
            let line = cursor.next_line()?;
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| cursor.err(format!("expected `key value`, found {line:?}")))?;
            if key == "vocab_src" {
                break cursor.parse_field::<usize>(value, "vocab_src")?;
            }
            fields.insert(key.to_owned(), value.to_owned());
        };

        let take = |cursor: &Cursor, key: &str| -> Result<String, CheckpointError> {
            fields
                .get(key)
                .cloned()
                .ok_or_else(|| cursor.err(format!("missing header field {key:?}")))
        };
        macro_rules! field {
            ($key:literal) => {{
                let raw = take(&cursor, $key)?;
                cursor.parse_field(&raw, $key)?
            }};
        }

        let src_lang: Language = field!("src_lang");
        let tgt_lang: Language = field!("tgt_lang");
        let hp = HyperParams {
            unit_type: field!("unit_type"),
            attention: field!("attention"),
            num_layers: field!("num_layers"),
            residual: field!("residual"),
            optimizer: field!("optimizer"),
            encoder_type: field!("encoder_type"),
            num_units: field!("num_units"),
            dropout: field!("dropout"),
            forget_bias: field!("forget_bias"),
            learning_rate: field!("learning_rate"),
            batch_size: field!("batch_size"),
            train_steps: field!("train_steps"),
            seed: field!("seed"),
            clip_norm: field!("clip_norm"),
            max_src_len: field!("max_src_len"),
            max_tgt_len: field!("max_tgt_len"),
        };
        hp.validate()?;

        fn read_vocab(cursor: &mut Cursor, count: usize) -> Result<Vocabulary, CheckpointError> {
            let mut text = String::new();
            for _ in 0..count {
                text.push_str(cursor.next_line()?);
                text.push('\n');
            }
            Ok(Vocabulary::parse(&text))
        }
        let vocab_src = read_vocab(&mut cursor, vocab_src_len)?;
        if vocab_src.len() != vocab_src_len {
            return Err(cursor.err(format!(
                "vocab_src declared {vocab_src_len} entries but parsed {}",
                vocab_src.len()
            )));
        }

        let header = cursor.next_line()?;
        let vocab_tgt_len = match header.split_once(' ') {
            Some(("vocab_tgt", n)) => cursor.parse_field::<usize>(n, "vocab_tgt")?,
            _ => return Err(cursor.err(format!("expected `vocab_tgt <n>`, found {header:?}"))),
        };
        let vocab_tgt = read_vocab(&mut cursor, vocab_tgt_len)?;
        if vocab_tgt.len() != vocab_tgt_len {
            return Err(cursor.err(format!(
                "vocab_tgt declared {vocab_tgt_len} entries but parsed {}",
                vocab_tgt.len()
            )));
        }

        // Shape template, then fill every tensor from the file.
        let mut params = ModelParams::init(&hp, vocab_src.len(), vocab_tgt.len(), &mut Rng::new(0));
        let mut filled: HashMap<String, bool> = params
            .named_tensors()
            .into_iter()
            .map(|(name, _)| (name, false))
            .collect();
        loop {
            let line = cursor.next_line()?;
            if line == "end" {
                break;
            }
            let mut parts = line.split(' ');
            if parts.next() != Some("tensor") {
                return Err(cursor.err(format!("expected `tensor ...` or `end`, found {line:?}")));
            }
            let name = parts
                .next()
                .ok_or_else(|| cursor.err("tensor line missing a name".into()))?
                .to_owned();
            let rows: usize = cursor.parse_field(parts.next().unwrap_or(""), "tensor rows")?;
            let cols: usize = cursor.parse_field(parts.next().unwrap_or(""), "tensor cols")?;

            let mut slots = params.named_tensors_mut();
            let slot = slots
                .iter_mut()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| cursor.err(format!("unknown tensor {name:?}")))?;
            if slot.1.shape() != (rows, cols) {
                return Err(cursor.err(format!(
                    "tensor {name:?} has shape {:?} but file declares ({rows}, {cols})",
                    slot.1.shape()
                )));
            }
            for i in 0..rows {
                let line = cursor.next_line()?;
                let mut count = 0;
                for (j, field) in line.split(' ').enumerate() {
                    if j >= cols {
                        return Err(cursor.err(format!("tensor {name:?} row {i} too wide")));
                    }
                    slot.1.set(i, j, cursor.parse_field(field, "tensor value")?);
                    count += 1;
                }
                if count != cols {
                    return Err(cursor.err(format!(
                        "tensor {name:?} row {i} has {count} values, expected {cols}"
                    )));
                }
            }
            match filled.insert(name.clone(), true) {
                Some(false) => {}
                _ => return Err(cursor.err(format!("tensor {name:?} appears twice"))),
            }
        }
        if let Some((name, _)) = filled.iter().find(|(_, &done)| !done) {
            return Err(cursor.err(format!("tensor {name:?} missing from checkpoint")));
        }

        Ok(Checkpoint { hp, src_lang, tgt_lang, vocab_src, vocab_tgt, params })
    }
}

struct Cursor<'a> {
    lines: &'a [&'a str],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn next_line(&mut self) -> Result<&'a str, CheckpointError> {
        let line = self
            .lines
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err("unexpected end of file".into()))?;
        self.pos += 1;
        Ok(line.trim_end_matches('\r'))
    }

    fn parse_field<T: std::str::FromStr>(
        &self,
        raw: &str,
        what: &str,
    ) -> Result<T, CheckpointError>
    where
        T::Err: std::fmt::Display,
    {
        raw.parse().map_err(|e| self.err(format!("bad {what} value {raw:?}: {e}")))
    }

    fn err(&self, reason: String) -> CheckpointError {
        CheckpointError::Format { line: self.pos.max(1), reason }
    }
}
