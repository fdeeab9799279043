use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{EncoderConfig, PlanKind};
use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};

/// Name prefix of the shared layer used by outside plans.
pub const OUTER: &str = "outer";

pub const INIT_STD: f64 = 0.02;

/// Named learnable tensors. Names sort deterministically, which fixes the
/// checkpoint layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

pub fn layer_prefix(layer: usize) -> String {
    format!("layer.{layer}")
}

fn layer_shapes(prefix: &str, cfg: &EncoderConfig, out: &mut BTreeMap<String, Vec<usize>>) {
    let d = cfg.hidden_size;
    let ff = cfg.ff_size;
    for proj in ["query", "key", "value", "output"] {
        out.insert(format!("{prefix}.attn.{proj}.weight"), vec![d, d]);
        out.insert(format!("{prefix}.attn.{proj}.bias"), vec![d]);
    }
    out.insert(format!("{prefix}.attn.norm.gain"), vec![d]);
    out.insert(format!("{prefix}.attn.norm.bias"), vec![d]);
    out.insert(format!("{prefix}.ffn.in.weight"), vec![d, ff]);
    out.insert(format!("{prefix}.ffn.in.bias"), vec![ff]);
    out.insert(format!("{prefix}.ffn.out.weight"), vec![ff, d]);
    out.insert(format!("{prefix}.ffn.out.bias"), vec![d]);
    out.insert(format!("{prefix}.ffn.norm.gain"), vec![d]);
    out.insert(format!("{prefix}.ffn.norm.bias"), vec![d]);
}

/// Every tensor name and its dims for a given config and plan kind.
pub fn expected_shapes(cfg: &EncoderConfig, kind: PlanKind) -> BTreeMap<String, Vec<usize>> {
    let d = cfg.hidden_size;
    let mut out = BTreeMap::new();
    out.insert("embeddings.token".into(), vec![cfg.vocab_size, d]);
    out.insert("embeddings.position".into(), vec![cfg.max_positions, d]);
    out.insert("embeddings.segment".into(), vec![cfg.segment_types, d]);
    out.insert("embeddings.norm.gain".into(), vec![d]);
    out.insert("embeddings.norm.bias".into(), vec![d]);
    for l in 0..cfg.num_layers {
        layer_shapes(&layer_prefix(l), cfg, &mut out);
    }
    if kind == PlanKind::Outside {
        layer_shapes(OUTER, cfg, &mut out);
    }
    out.insert("pooler.weight".into(), vec![d, d]);
    out.insert("pooler.bias".into(), vec![d]);
    out.insert("classifier.weight".into(), vec![d, 2]);
    out.insert("classifier.bias".into(), vec![2]);
    out
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    let normal = Normal::new(0.0, std).expect("positive std");
    loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= 2.0 * std {
            return x;
        }
    }
}

impl ModelParams<f32> {
    /// Truncated-normal weights (std 0.02), zero biases, unit norm gains.
    pub fn init<R: Rng + ?Sized>(cfg: &EncoderConfig, kind: PlanKind, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut tensors = BTreeMap::new();
        for (name, dims) in expected_shapes(cfg, kind) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = if name.ends_with(".gain") {
                vec![1.0; n]
            } else if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                (0..n).map(|_| truncated_normal(rng, INIT_STD) as f32).collect()
            };
            tensors.insert(name, Tensor::new(dims, data)?);
        }
        Ok(ModelParams { tensors })
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn from_tensors(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        ModelParams { tensors }
    }

    /// Checks names and dims against what `cfg` and `kind` imply.
    pub fn check_shapes(&self, cfg: &EncoderConfig, kind: PlanKind) -> Result<()> {
        let expected = expected_shapes(cfg, kind);
        for (name, dims) in &expected {
            match self.tensors.get(name) {
                None => return Err(Error::contract(format!("missing tensor {name}"))),
                Some(t) if t.dims() != dims.as_slice() => {
                    return Err(Error::contract(format!(
                        "tensor {name} has dims {:?}, config implies {dims:?}",
                        t.dims()
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::contract(format!("unexpected tensor {extra}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing tensor {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> BTreeMap<String, Tensor<T>> {
        self.tensors
    }

    /// Number of distinct named tensors.
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}
