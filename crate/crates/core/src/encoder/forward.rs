use std::collections::BTreeMap;

use rand::RngCore;

use super::config::{EncoderConfig, MaskPlan};
use super::params::{layer_prefix, ModelParams, OUTER};
use crate::error::{Error, Result};
use crate::numcore::{ops, Graph, MaskMatrix, NodeId, Scalar, Tensor};
use crate::tokenizer::Encoding;

/// Logit index of the IsNext class.
pub const IS_NEXT: usize = 0;
/// Logit index of the NotNext class.
pub const NOT_NEXT: usize = 1;

/// Parameter tensors placed on a graph, by name.
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    /// Binds every tensor; `trainable` decides whether gradients are tracked.
    pub fn new<T: Scalar>(g: &mut Graph<T>, params: &ModelParams<T>, trainable: bool) -> Self {
        let ids = params
            .tensors()
            .iter()
            .map(|(name, t)| {
                let id = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (name.clone(), id)
            })
            .collect();
        Bound { ids }
    }

    /// Binds names to nodes already on a graph.
    pub fn from_ids(ids: BTreeMap<String, NodeId>) -> Self {
        Bound { ids }
    }

    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("missing tensor {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NodeId)> {
        self.ids.iter()
    }
}

/// Dropout source for train-mode passes; `None` means eval mode.
pub type Dropout<'a> = Option<&'a mut dyn RngCore>;

fn dropout<T: Scalar>(g: &mut Graph<T>, x: NodeId, cfg: &EncoderConfig, rng: &mut Dropout<'_>) -> NodeId {
    match rng {
        Some(r) => g.dropout(x, cfg.dropout_rate, &mut **r),
        None => x,
    }
}

fn affine<T: Scalar>(g: &mut Graph<T>, x: NodeId, p: &Bound, prefix: &str) -> Result<NodeId> {
    let xw = g.matmul(x, p.get(&format!("{prefix}.weight"))?)?;
    g.add_row(xw, p.get(&format!("{prefix}.bias"))?)
}

fn norm<T: Scalar>(g: &mut Graph<T>, x: NodeId, p: &Bound, prefix: &str, eps: f64) -> Result<NodeId> {
    let gain = p.get(&format!("{prefix}.gain"))?;
    let bias = p.get(&format!("{prefix}.bias"))?;
    g.layer_norm(x, gain, bias, T::from_f64(eps))
}

/// One encoder layer: multi-head self-attention (masked when `mask` is
/// given) and a GELU feed-forward block, each followed by residual add and
/// layer norm.
pub fn attention_layer<T: Scalar>(
    g: &mut Graph<T>,
    h: NodeId,
    p: &Bound,
    prefix: &str,
    mask: Option<&MaskMatrix>,
    cfg: &EncoderConfig,
    rng: &mut Dropout<'_>,
) -> Result<NodeId> {
    let (n, _) = g.value(h).shape2();
    if let Some(m) = mask {
        if m.dims() != (n, n) {
            return Err(Error::Shape {
                op: "attention_layer",
                lhs: vec![n, n],
                rhs: vec![m.rows(), m.cols()],
            });
        }
    }
    let dk = cfg.head_size();
    let scale = T::from_f64(cfg.attention_scale());
    let q = affine(g, h, p, &format!("{prefix}.attn.query"))?;
    let k = affine(g, h, p, &format!("{prefix}.attn.key"))?;
    let v = affine(g, h, p, &format!("{prefix}.attn.value"))?;

    let mut heads = Vec::with_capacity(cfg.num_heads);
    for head in 0..cfg.num_heads {
        let qh = g.slice_cols(q, head * dk, dk)?;
        let kh = g.slice_cols(k, head * dk, dk)?;
        let vh = g.slice_cols(v, head * dk, dk)?;
        let kt = g.transpose(kh);
        let raw = g.matmul(qh, kt)?;
        let scores = g.scale(raw, scale);
        let probs = match mask {
            Some(m) => g.masked_softmax(scores, m, cfg.mask_mode)?,
            None => g.softmax_rows(scores)?,
        };
        heads.push(g.matmul(probs, vh)?);
    }
    let ctx = g.concat_cols(&heads)?;
    let attn = affine(g, ctx, p, &format!("{prefix}.attn.output"))?;
    let attn = dropout(g, attn, cfg, rng);
    let res = g.add(attn, h)?;
    let h1 = norm(g, res, p, &format!("{prefix}.attn.norm"), cfg.layer_norm_eps)?;

    let inner = affine(g, h1, p, &format!("{prefix}.ffn.in"))?;
    let act = g.gelu(inner);
    let out = affine(g, act, p, &format!("{prefix}.ffn.out"))?;
    let out = dropout(g, out, cfg, rng);
    let res = g.add(out, h1)?;
    norm(g, res, p, &format!("{prefix}.ffn.norm"), cfg.layer_norm_eps)
}

pub struct EncoderOutput {
    /// Final hidden states, `n x d`.
    pub hidden: NodeId,
    /// `tanh(W h_cls + b)`, `1 x d`.
    pub pooled: NodeId,
}

/// Embeddings, the base stack with the plan's masking, the outer recurrent
/// layer for outside plans, and the `[CLS]` pooler.
pub fn encoder_forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound,
    enc: &Encoding,
    mask: Option<&MaskMatrix>,
    cfg: &EncoderConfig,
    plan: &MaskPlan,
    mut rng: Dropout<'_>,
) -> Result<EncoderOutput> {
    let n = enc.len();
    if n == 0 {
        return Err(Error::contract("empty encoding"));
    }
    if n > cfg.max_positions {
        return Err(Error::contract(format!(
            "sequence of {n} tokens exceeds max_positions {}",
            cfg.max_positions
        )));
    }
    plan.validate(cfg.num_layers)?;
    let mask = match (plan.uses_mask(), mask) {
        (true, None) => return Err(Error::contract(format!("plan {plan} needs a dependency mask"))),
        (false, Some(_)) => return Err(Error::contract("mask supplied to an unmasked plan")),
        (_, m) => m,
    };

    let ids: Vec<usize> = enc.token_ids.iter().map(|&t| t as usize).collect();
    let positions: Vec<usize> = (0..n).collect();
    let segments: Vec<usize> = enc.segment_ids.iter().map(|&s| s as usize).collect();
    if let Some(&bad) = ids.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::contract(format!("token id {bad} outside vocab of {}", cfg.vocab_size)));
    }
    let tok = g.gather_rows(p.get("embeddings.token")?, &ids)?;
    let pos = g.gather_rows(p.get("embeddings.position")?, &positions)?;
    let seg = g.gather_rows(p.get("embeddings.segment")?, &segments)?;
    let sum = g.add(tok, pos)?;
    let sum = g.add(sum, seg)?;
    let emb = norm(g, sum, p, "embeddings.norm", cfg.layer_norm_eps)?;
    let mut h = dropout(g, emb, cfg, &mut rng);

    for layer in 0..cfg.num_layers {
        let m = if plan.masks_layer(layer) { mask } else { None };
        h = attention_layer(g, h, p, &layer_prefix(layer), m, cfg, &mut rng)?;
    }
    if let MaskPlan::Outside { steps } = plan {
        for _ in 0..*steps {
            h = attention_layer(g, h, p, OUTER, mask, cfg, &mut rng)?;
        }
    }

    let cls = g.gather_rows(h, &[0])?;
    let pre = affine(g, cls, p, "pooler")?;
    let pooled = g.tanh(pre);
    Ok(EncoderOutput { hidden: h, pooled })
}

/// Two-class NSP logits `[IsNext, NotNext]`, `1 x 2`.
pub fn nsp_logits<T: Scalar>(g: &mut Graph<T>, p: &Bound, pooled: NodeId) -> Result<NodeId> {
    affine(g, pooled, p, "classifier")
}

/// Probability of IsNext from a pooled vector and the classifier weights
/// (`d x 2`) and bias (`2`).
pub fn nsp_probability<T: Scalar>(pooled: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<f64> {
    let d = pooled.len();
    let row = pooled.clone().reshape(vec![1, d])?;
    let mut logits = ops::matmul(&row, weight)?;
    if bias.len() != logits.len() || logits.len() != 2 {
        return Err(Error::Shape {
            op: "nsp_probability",
            lhs: logits.dims().to_vec(),
            rhs: bias.dims().to_vec(),
        });
    }
    for (l, &b) in logits.data_mut().iter_mut().zip(bias.data()) {
        *l = *l + b;
    }
    let probs = ops::softmax_rows(&logits)?;
    Ok(probs.data()[IS_NEXT].as_f64())
}
