use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::MaskMode;

/// Divisor applied to `Q K^T`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    #[default]
    SqrtDk,
    Dk,
}

impl FromStr for ScaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt_dk" => Ok(ScaleMode::SqrtDk),
            "dk" => Ok(ScaleMode::Dk),
            other => Err(Error::contract(format!("unknown scale mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    pub ff_size: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub segment_types: usize,
    pub dropout_rate: f64,
    pub scale_mode: ScaleMode,
    pub mask_mode: MaskMode,
    pub layer_norm_eps: f64,
}

impl EncoderConfig {
    /// Two layers, two heads, width 32.
    pub fn desk(vocab_size: usize) -> Self {
        EncoderConfig {
            num_layers: 2,
            num_heads: 2,
            hidden_size: 32,
            ff_size: 64,
            vocab_size,
            max_positions: 64,
            segment_types: 2,
            dropout_rate: 0.1,
            scale_mode: ScaleMode::SqrtDk,
            mask_mode: MaskMode::Additive,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn head_size(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn attention_scale(&self) -> f64 {
        let dk = self.head_size() as f64;
        match self.scale_mode {
            ScaleMode::SqrtDk => 1.0 / dk.sqrt(),
            ScaleMode::Dk => 1.0 / dk,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("hidden_size", self.hidden_size),
            ("ff_size", self.ff_size),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(Error::contract(format!("{name} must be positive")));
        }
        if self.segment_types != 2 {
            return Err(Error::contract("segment_types must be 2"));
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::contract(format!(
                "hidden_size {} not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::contract("dropout_rate must lie in [0, 1)"));
        }
        if self.layer_norm_eps <= 0.0 {
            return Err(Error::contract("layer_norm_eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerPosition {
    First,
    Middle,
    Last,
}

impl FromStr for LayerPosition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(LayerPosition::First),
            "middle" => Ok(LayerPosition::Middle),
            "last" => Ok(LayerPosition::Last),
            other => Err(Error::contract(format!("unknown layer position {other:?}"))),
        }
    }
}

impl fmt::Display for LayerPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerPosition::First => "first",
            LayerPosition::Middle => "middle",
            LayerPosition::Last => "last",
        })
    }
}

/// The `t` consecutive layer indices at `position` in an `num_layers` stack.
///
/// `middle` picks the window whose center is closest to `(L - 1) / 2`,
/// breaking ties toward lower indices.
pub fn resolve_inside_indices(position: LayerPosition, t: usize, num_layers: usize) -> Result<Vec<usize>> {
    if t == 0 || t > num_layers {
        return Err(Error::contract(format!(
            "cannot mask {t} layers of a {num_layers}-layer encoder"
        )));
    }
    let start = match position {
        LayerPosition::First => 0,
        LayerPosition::Last => num_layers - t,
        LayerPosition::Middle => {
            // compare doubled centers to stay in integers: 2s + t - 1 vs L - 1
            let target = num_layers as i64 - 1;
            (0..=num_layers - t)
                .min_by_key(|&s| ((2 * s + t) as i64 - 1 - target).abs())
                .expect("non-empty range")
        }
    };
    Ok((start..start + t).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    None,
    Inside,
    Outside,
}

/// Where the dependency mask enters the encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskPlan {
    None,
    /// Mask the listed base layers.
    Inside { layers: Vec<usize> },
    /// `steps` applications of one shared extra layer on top of the base
    /// stack, each masked.
    Outside { steps: usize },
}

impl MaskPlan {
    pub fn inside(position: LayerPosition, t: usize, num_layers: usize) -> Result<Self> {
        Ok(MaskPlan::Inside {
            layers: resolve_inside_indices(position, t, num_layers)?,
        })
    }

    pub fn kind(&self) -> PlanKind {
        match self {
            MaskPlan::None => PlanKind::None,
            MaskPlan::Inside { .. } => PlanKind::Inside,
            MaskPlan::Outside { .. } => PlanKind::Outside,
        }
    }

    pub fn uses_mask(&self) -> bool {
        !matches!(self, MaskPlan::None)
    }

    pub fn masks_layer(&self, layer: usize) -> bool {
        matches!(self, MaskPlan::Inside { layers } if layers.contains(&layer))
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        match self {
            MaskPlan::None => Ok(()),
            MaskPlan::Inside { layers } => match layers.iter().find(|&&l| l >= num_layers) {
                Some(l) => Err(Error::contract(format!(
                    "masked layer {l} outside a {num_layers}-layer encoder"
                ))),
                None => Ok(()),
            },
            MaskPlan::Outside { steps: 0 } => Err(Error::contract("outside plan needs at least one step")),
            MaskPlan::Outside { .. } => Ok(()),
        }
    }
}

impl fmt::Display for MaskPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskPlan::None => f.write_str("none"),
            MaskPlan::Inside { layers } => {
                let l: Vec<String> = layers.iter().map(usize::to_string).collect();
                write!(f, "inside[{}]", l.join(","))
            }
            MaskPlan::Outside { steps } => write!(f, "outside-{steps}"),
        }
    }
}
