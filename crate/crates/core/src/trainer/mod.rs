//! Labeled candidate sentences, the fine-tuning loop, data subsampling and
//! checkpoints.

pub mod checkpoint;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta,
};

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{encoder_forward, nsp_logits, Bound, EncoderConfig, MaskPlan, Model, IS_NEXT, NOT_NEXT};
use crate::error::{Error, Result};
use crate::numcore::{adamw_step, Graph, LrSchedule, MaskMatrix, NodeId, OptimState, Scalar, Tensor};
use crate::schema::{candidate_inputs, generate_candidates, ParseIndex, Schema};
use crate::seeds;
use crate::tokenizer::{Encoding, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    NotNext = 0,
    IsNext = 1,
}

impl Label {
    /// Index of this label among the NSP logits.
    pub fn class(self) -> usize {
        match self {
            Label::IsNext => IS_NEXT,
            Label::NotNext => NOT_NEXT,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainExample {
    pub encoding: Encoding,
    pub mask: MaskMatrix,
    pub label: Label,
    pub schema_id: String,
    pub candidate: usize,
}

/// Two examples per schema: the correct substitution is IsNext, the other
/// NotNext. Ordered by schema id, then candidate index.
pub fn make_training_examples(
    schemas: &[Schema],
    vocab: &Vocab,
    parses: &ParseIndex,
    max_len: usize,
) -> Result<Vec<TrainExample>> {
    let mut sorted: Vec<&Schema> = schemas.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = Vec::with_capacity(2 * schemas.len());
    for s in sorted {
        let pair = generate_candidates(s);
        for sentence in &pair.0 {
            let parse = parses.get(&s.id, sentence.candidate)?;
            let (encoding, mask) = candidate_inputs(&s.id, sentence, parse, vocab, max_len)?;
            let label = if sentence.candidate == s.answer_index {
                Label::IsNext
            } else {
                Label::NotNext
            };
            out.push(TrainExample {
                encoding,
                mask,
                label,
                schema_id: s.id.clone(),
                candidate: sentence.candidate,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub base_lr: f64,
    pub batch_size: usize,
    pub warmup_frac: f64,
    pub max_epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    pub max_seq_len: usize,
    pub weight_decay: f64,
}

impl Default for Hyperparams {
    /// Toy-scale defaults.
    fn default() -> Self {
        Hyperparams {
            base_lr: 5e-4,
            batch_size: 8,
            warmup_frac: 0.1,
            max_epochs: 50,
            dropout: 0.1,
            seed: 42,
            max_seq_len: 64,
            weight_decay: 0.01,
        }
    }
}

impl Hyperparams {
    /// Fine-tuning settings for a 12-layer pretrained encoder.
    pub fn bert_base_preset() -> Self {
        Hyperparams {
            base_lr: 2e-5,
            batch_size: 16,
            warmup_frac: 0.5,
            max_epochs: 15,
            dropout: 0.1,
            seed: 42,
            max_seq_len: 128,
            weight_decay: 0.01,
        }
    }

    /// Fine-tuning settings for a 24-layer pretrained encoder.
    pub fn bert_large_preset() -> Self {
        Hyperparams {
            batch_size: 2,
            warmup_frac: 0.7,
            ..Self::bert_base_preset()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::contract("base_lr must be finite and non-negative"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.max_seq_len < 3 {
            return Err(Error::contract("batch_size, max_epochs and max_seq_len must be positive"));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::contract("warmup_frac must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Forward pass plus cross-entropy of one example on `g`. With `rng` the pass
/// runs in train mode.
pub fn example_loss<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound,
    cfg: &EncoderConfig,
    plan: &MaskPlan,
    ex: &TrainExample,
    rng: Option<&mut dyn RngCore>,
) -> Result<NodeId> {
    let mask = plan.uses_mask().then_some(&ex.mask);
    let out = encoder_forward(g, p, &ex.encoding, mask, cfg, plan, rng)?;
    let logits = nsp_logits(g, p, out.pooled)?;
    g.cross_entropy(logits, ex.label.class())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean train-mode loss over the epoch's examples.
    pub loss: f64,
    /// Eval-mode accuracy on the training examples at the end of the epoch
    /// (IsNext iff probability > 0.5).
    pub train_accuracy: f64,
    pub step: usize,
    pub lr: f64,
}

/// Eval-mode fraction of examples classified correctly.
pub fn classification_accuracy(model: &Model, examples: &[TrainExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::contract("no examples"));
    }
    let hits: Vec<bool> = examples
        .par_iter()
        .map(|ex| {
            let p = model.score(&ex.encoding, Some(&ex.mask))?;
            Ok((p > 0.5) == (ex.label == Label::IsNext))
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / examples.len() as f64)
}

fn example_grads(
    model: &Model,
    cfg: &EncoderConfig,
    ex: &TrainExample,
    dropout_seed: u64,
) -> Result<(f64, BTreeMap<String, Tensor<f32>>)> {
    let mut g = Graph::<f32>::new();
    let p = Bound::new(&mut g, &model.params, true);
    let mut rng = seeds::rng(dropout_seed, seeds::DROPOUT);
    let train_rng: Option<&mut dyn RngCore> = if cfg.dropout_rate > 0.0 { Some(&mut rng) } else { None };
    let loss = example_loss(&mut g, &p, cfg, &model.plan, ex, train_rng)?;
    let value = g.value(loss).data()[0] as f64;
    let mut grads = g.backward(loss)?;
    let map = p.iter().map(|(name, &id)| (name.clone(), grads.take(id))).collect();
    Ok((value, map))
}

/// Fine-tunes a copy of `model` on `examples`: 2-class cross-entropy, AdamW
/// with linear warmup/decay over `epochs * ceil(N / batch)` steps, reshuffled
/// each epoch from the seed. Per-example gradients are reduced in example
/// order, so results do not depend on thread scheduling.
pub fn fine_tune(model: &Model, examples: &[TrainExample], hyper: &Hyperparams) -> Result<(Model, Vec<EpochLog>)> {
    hyper.validate()?;
    model.validate()?;
    if examples.is_empty() {
        return Err(Error::contract("fine-tuning needs at least one example"));
    }
    let mut model = model.clone();
    let mut train_cfg = model.config.clone();
    train_cfg.dropout_rate = hyper.dropout;

    let steps_per_epoch = examples.len().div_ceil(hyper.batch_size);
    let total_steps = hyper.max_epochs * steps_per_epoch;
    let mut state = OptimState::new(
        LrSchedule::LinearWarmup {
            base_lr: hyper.base_lr,
            warmup_frac: hyper.warmup_frac,
            total_steps,
        },
        hyper.weight_decay,
    );
    let mut shuffle = seeds::rng(hyper.seed, seeds::SHUFFLE);
    let dropout_master = seeds::derive(hyper.seed, seeds::DROPOUT);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = Vec::with_capacity(hyper.max_epochs);

    for epoch in 0..hyper.max_epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let step = state.step();
            let results: Vec<(f64, BTreeMap<String, Tensor<f32>>)> = batch
                .par_iter()
                .map(|&i| {
                    let seed = seeds::derive(dropout_master, &format!("{step}/{i}"));
                    example_grads(&model, &train_cfg, &examples[i], seed)
                })
                .collect::<Result<_>>()?;

            let mut total: Option<BTreeMap<String, Tensor<f32>>> = None;
            for (loss, grads) in results {
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step });
                }
                loss_sum += loss;
                match &mut total {
                    None => total = Some(grads),
                    Some(acc) => {
                        for (name, g) in grads {
                            acc.get_mut(&name).expect("same parameter set").add_assign(&g)?;
                        }
                    }
                }
            }
            let mut grads = total.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f32;
            for g in grads.values_mut() {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            lr = adamw_step(model.params.tensors_mut(), &grads, &mut state)?;
        }
        let entry = EpochLog {
            epoch,
            loss: loss_sum / examples.len() as f64,
            train_accuracy: classification_accuracy(&model, examples)?,
            step: state.step(),
            lr,
        };
        log::debug!(
            "epoch {} loss {:.5} train acc {:.3}",
            entry.epoch,
            entry.loss,
            entry.train_accuracy
        );
        log.push(entry);
    }
    Ok((model, log))
}

/// `round(fraction * N)` schemas drawn uniformly without replacement,
/// returned in their original order.
pub fn subsample(schemas: &[Schema], fraction: f64, seed: u64) -> Result<Vec<Schema>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::contract(format!("fraction {fraction} outside [0, 1]")));
    }
    let n = schemas.len();
    let k = ((fraction * n as f64).round() as usize).min(n);
    let mut rng = seeds::rng(seed, seeds::SUBSAMPLE);
    let mut picked = index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| schemas[i].clone()).collect())
}

/// SHA-256 of the corpus in its JSON-lines form, hex encoded.
pub fn corpus_digest(schemas: &[Schema]) -> Result<String> {
    let text = crate::schema::to_jsonl(schemas)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}
