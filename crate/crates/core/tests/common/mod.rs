//! Helpers shared by the integration tests: random trees and encodings, a
//! small config, and a loop-by-loop f64 reference forward pass.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use wsc_core::depmask::{build_word_mask, expand_to_subwords, DepParse};
use wsc_core::encoder::{EncoderConfig, MaskPlan, Model, ModelParams};
use wsc_core::numcore::{MaskMatrix, MaskMode, Tensor};
use wsc_core::tokenizer::{encode_pair, Encoding, Vocab};

/// Uniformly attaches each node to an earlier one, then relabels at random.
pub fn random_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DepParse {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut heads = vec![None; n];
    for k in 1..n {
        let parent = rng.random_range(0..k);
        heads[perm[k]] = Some(perm[parent]);
    }
    let words = (0..n).map(|i| format!("w{i}")).collect();
    DepParse::new(words, heads, vec!["dep".into(); n]).expect("random tree is valid")
}

/// Same tree shape, but over the given words.
pub fn random_parse<R: Rng + ?Sized>(words: &[String], rng: &mut R) -> DepParse {
    let mut p = random_tree(words.len(), rng);
    p.words = words.to_vec();
    p
}

/// L=2, two heads, width 8, no dropout.
pub fn toy_config(vocab_size: usize, max_positions: usize) -> EncoderConfig {
    EncoderConfig {
        num_layers: 2,
        num_heads: 2,
        hidden_size: 8,
        ff_size: 16,
        max_positions,
        dropout_rate: 0.0,
        ..EncoderConfig::desk(vocab_size)
    }
}

/// Vocabulary with a few words that split into pieces.
pub fn toy_vocab() -> Vocab {
    Vocab::from_pieces([
        "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "the", "cat", "sat", "on", "mat", "dog", "ran", "to", "it", "was",
        "big", "suit", "##case", "book", "##s", ".", ",",
    ])
    .unwrap()
}

pub const TOY_WORDS: &[&str] = &[
    "the", "cat", "sat", "on", "mat", "dog", "ran", "to", "it", "was", "big", "suitcase", "books", ".", "zebra",
];

/// Random `[CLS] A [SEP] B [SEP]` encoding of at most `max_len` tokens with a
/// random parse over its words, plus the expanded token mask.
pub fn random_encoding<R: Rng + ?Sized>(vocab: &Vocab, max_len: usize, rng: &mut R) -> (Encoding, MaskMatrix) {
    let n_words = rng.random_range(2..=max_len.saturating_sub(3).max(2));
    let words: Vec<String> = (0..n_words)
        .map(|_| TOY_WORDS[rng.random_range(0..TOY_WORDS.len())].to_string())
        .collect();
    let split = rng.random_range(0..n_words);
    let enc = encode_pair(&words[..split], &words[split..], vocab, max_len).unwrap();
    let parse = random_parse(&words, rng);
    let mask = expand_to_subwords(&build_word_mask(&parse), &enc).unwrap();
    (enc, mask)
}

pub fn model<R: Rng + ?Sized>(cfg: EncoderConfig, plan: MaskPlan, rng: &mut R) -> Model {
    Model::init(cfg, plan, rng).unwrap()
}

/// Adds uniform noise in `(-scale, scale)` to every parameter so biases and
/// norm gains are not exactly zero or one.
pub fn perturb<R: Rng + ?Sized>(params: &mut ModelParams, scale: f32, rng: &mut R) {
    for t in params.tensors_mut().values_mut() {
        for x in t.data_mut() {
            *x += rng.random_range(-scale..scale);
        }
    }
}

type Matrix = Vec<Vec<f64>>;

struct Reference<'a> {
    p: BTreeMap<&'a str, (Vec<usize>, Vec<f64>)>,
    cfg: &'a EncoderConfig,
}

impl<'a> Reference<'a> {
    fn new(params: &'a ModelParams, cfg: &'a EncoderConfig) -> Self {
        let p = params
            .tensors()
            .iter()
            .map(|(k, t): (&String, &Tensor<f32>)| {
                (k.as_str(), (t.dims().to_vec(), t.data().iter().map(|&x| x as f64).collect()))
            })
            .collect();
        Reference { p, cfg }
    }

    fn vec(&self, name: &str) -> &[f64] {
        &self.p[name].1
    }

    fn entry(&self, name: &str, r: usize, c: usize) -> f64 {
        let (dims, data) = &self.p[name];
        data[r * dims[1] + c]
    }

    /// `x W + b` with `W` stored as `in x out`.
    fn affine(&self, x: &Matrix, prefix: &str) -> Matrix {
        let w = format!("{prefix}.weight");
        let b = self.vec(&format!("{prefix}.bias")).to_vec();
        let out = self.p[w.as_str()].0[1];
        x.iter()
            .map(|row| {
                (0..out)
                    .map(|j| b[j] + row.iter().enumerate().map(|(i, &v)| v * self.entry(&w, i, j)).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    fn norm(&self, x: &Matrix, prefix: &str) -> Matrix {
        let gain = self.vec(&format!("{prefix}.gain"));
        let bias = self.vec(&format!("{prefix}.bias"));
        x.iter()
            .map(|row| {
                let n = row.len() as f64;
                let mean = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let sd = (var + self.cfg.layer_norm_eps).sqrt();
                row.iter().enumerate().map(|(j, v)| (v - mean) / sd * gain[j] + bias[j]).collect()
            })
            .collect()
    }

    fn layer(&self, h: &Matrix, prefix: &str, mask: Option<&MaskMatrix>) -> Matrix {
        let n = h.len();
        let heads = self.cfg.num_heads;
        let dk = self.cfg.hidden_size / heads;
        let q = self.affine(h, &format!("{prefix}.attn.query"));
        let k = self.affine(h, &format!("{prefix}.attn.key"));
        let v = self.affine(h, &format!("{prefix}.attn.value"));
        let mut ctx = vec![vec![0.0; self.cfg.hidden_size]; n];
        for hd in 0..heads {
            let cols = hd * dk..(hd + 1) * dk;
            for i in 0..n {
                let mut logits: Vec<f64> = (0..n)
                    .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() * self.cfg.attention_scale())
                    .collect();
                let allowed: Vec<bool> = (0..n).map(|j| mask.is_none_or(|m| m.get(i, j))).collect();
                if self.cfg.mask_mode == MaskMode::Multiplicative {
                    for j in 0..n {
                        if !allowed[j] {
                            logits[j] = 0.0;
                        }
                    }
                }
                let drop = |j: usize| self.cfg.mask_mode == MaskMode::Additive && !allowed[j];
                let top = (0..n).filter(|&j| !drop(j)).map(|j| logits[j]).fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> =
                    (0..n).map(|j| if drop(j) { 0.0 } else { (logits[j] - top).exp() }).collect();
                let z: f64 = weights.iter().sum();
                for c in cols.clone() {
                    ctx[i][c] = (0..n).map(|j| weights[j] / z * v[j][c]).sum();
                }
            }
        }
        let attn = self.affine(&ctx, &format!("{prefix}.attn.output"));
        let res: Matrix = attn.iter().zip(h).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
        let h1 = self.norm(&res, &format!("{prefix}.attn.norm"));
        let inner = self.affine(&h1, &format!("{prefix}.ffn.in"));
        // GELU written as x * sigmoid(2u), u = sqrt(2/pi) (x + 0.044715 x^3)
        let act: Matrix = inner
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&x| {
                        let u = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3));
                        x / (1.0 + (-2.0 * u).exp())
                    })
                    .collect()
            })
            .collect();
        let out = self.affine(&act, &format!("{prefix}.ffn.out"));
        let res: Matrix = out.iter().zip(&h1).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
        self.norm(&res, &format!("{prefix}.ffn.norm"))
    }
}

/// Eval-mode IsNext probability computed with nested loops in f64.
pub fn reference_probability(model: &Model, enc: &Encoding, mask: Option<&MaskMatrix>) -> f64 {
    let cfg = &model.config;
    let r = Reference::new(&model.params, cfg);
    let d = cfg.hidden_size;
    let emb: Matrix = (0..enc.len())
        .map(|i| {
            let t = enc.token_ids[i] as usize;
            let s = enc.segment_ids[i] as usize;
            (0..d)
                .map(|c| {
                    r.entry("embeddings.token", t, c)
                        + r.entry("embeddings.position", i, c)
                        + r.entry("embeddings.segment", s, c)
                })
                .collect()
        })
        .collect();
    let mut h = r.norm(&emb, "embeddings.norm");
    let mask = if model.plan.uses_mask() { mask } else { None };
    for l in 0..cfg.num_layers {
        let m = if model.plan.masks_layer(l) { mask } else { None };
        h = r.layer(&h, &format!("layer.{l}"), m);
    }
    if let MaskPlan::Outside { steps } = model.plan {
        for _ in 0..steps {
            h = r.layer(&h, "outer", mask);
        }
    }
    let pooled: Vec<f64> = r.affine(&vec![h[0].clone()], "pooler")[0].iter().map(|x| x.tanh()).collect();
    let logits = &r.affine(&vec![pooled], "classifier")[0];
    // two-class softmax, IsNext first
    1.0 / (1.0 + (logits[1] - logits[0]).exp())
}

/// Gradcheck of `CE(nsp) + sum(hidden * weights)` with respect to every
/// parameter of `model`, in f64. The hidden-state term makes masked positions
/// other than `[CLS]` contribute to the loss.
pub fn encoder_gradcheck<R: Rng + ?Sized>(
    model: &Model,
    enc: &Encoding,
    mask: &MaskMatrix,
    rng: &mut R,
) -> wsc_core::numcore::GradcheckReport {
    use wsc_core::encoder::{encoder_forward, nsp_logits, Bound};
    let params = model.params.cast::<f64>();
    let names: Vec<String> = params.tensors().keys().cloned().collect();
    let inputs: Vec<Tensor<f64>> = params.tensors().values().cloned().collect();
    let n = enc.len();
    let d = model.config.hidden_size;
    let weights = Tensor::<f64>::new(vec![n, d], (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mask = model.plan.uses_mask().then_some(mask);
    wsc_core::numcore::gradcheck(
        |g, ids| {
            let bound = Bound::from_ids(names.iter().cloned().zip(ids.iter().copied()).collect());
            let out = encoder_forward(g, &bound, enc, mask, &model.config, &model.plan, None)?;
            let logits = nsp_logits(g, &bound, out.pooled)?;
            let ce = g.cross_entropy(logits, 0)?;
            let w = g.constant(weights.clone());
            let weighted = g.mul(out.hidden, w)?;
            let extra = g.sum(weighted);
            g.add(ce, extra)
        },
        &inputs,
        1e-4,
    )
    .unwrap()
}

/// Gradcheck of one masked attention head, `sum(softmax(mask(Q K^T / sqrt(dk))) V * R)`,
/// with respect to `X, Wq, Wk, Wv`.
pub fn head_gradcheck<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    dk: usize,
    mask: &MaskMatrix,
    mode: MaskMode,
    rng: &mut R,
) -> wsc_core::numcore::GradcheckReport {
    let mut rand_t = |r: usize, c: usize| {
        Tensor::<f64>::new(vec![r, c], (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let inputs = [rand_t(n, d), rand_t(d, dk), rand_t(d, dk), rand_t(d, dk)];
    let weights = rand_t(n, dk);
    let scale = 1.0 / (dk as f64).sqrt();
    wsc_core::numcore::gradcheck(
        |g, ids| {
            let q = g.matmul(ids[0], ids[1])?;
            let k = g.matmul(ids[0], ids[2])?;
            let v = g.matmul(ids[0], ids[3])?;
            let kt = g.transpose(k);
            let raw = g.matmul(q, kt)?;
            let scores = g.scale(raw, scale);
            let probs = g.masked_softmax(scores, mask, mode)?;
            let ctx = g.matmul(probs, v)?;
            let w = g.constant(weights.clone());
            let weighted = g.mul(ctx, w)?;
            Ok(g.sum(weighted))
        },
        &inputs,
        1e-4,
    )
    .unwrap()
}
