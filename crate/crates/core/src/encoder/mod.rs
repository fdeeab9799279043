//! Transformer encoder with dependency-mask injection and the
//! next-sentence-prediction head.

pub mod config;
pub mod forward;
pub mod params;

pub use config::{resolve_inside_indices, EncoderConfig, LayerPosition, MaskPlan, PlanKind, ScaleMode};
pub use forward::{
    attention_layer, encoder_forward, nsp_logits, nsp_probability, Bound, EncoderOutput, IS_NEXT, NOT_NEXT,
};
pub use params::{expected_shapes, ModelParams};

use rand::Rng;

use crate::error::Result;
use crate::numcore::{Graph, MaskMatrix};
use crate::tokenizer::Encoding;

/// Config, mask plan and parameters of one encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: EncoderConfig,
    pub plan: MaskPlan,
    pub params: ModelParams,
}

impl Model {
    pub fn init<R: Rng + ?Sized>(config: EncoderConfig, plan: MaskPlan, rng: &mut R) -> Result<Self> {
        config.validate()?;
        plan.validate(config.num_layers)?;
        let params = ModelParams::init(&config, plan.kind(), rng)?;
        Ok(Model { config, plan, params })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.plan.validate(self.config.num_layers)?;
        self.params.check_shapes(&self.config, self.plan.kind())
    }

    /// Eval-mode IsNext probability. `mask` is ignored by unmasked plans.
    pub fn score(&self, enc: &Encoding, mask: Option<&MaskMatrix>) -> Result<f64> {
        let mut g = Graph::<f32>::new();
        let p = Bound::new(&mut g, &self.params, false);
        let mask = if self.plan.uses_mask() { mask } else { None };
        let out = encoder_forward(&mut g, &p, enc, mask, &self.config, &self.plan, None)?;
        nsp_probability(
            g.value(out.pooled),
            self.params.get("classifier.weight")?,
            self.params.get("classifier.bias")?,
        )
    }
}
