//! Run configuration: a flat JSON object whose keys mirror the command-line
//! flags. Unknown keys are rejected; missing keys take the toy defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wsc_core::encoder::{EncoderConfig, LayerPosition, MaskPlan, PlanKind, ScaleMode};
use wsc_core::numcore::MaskMode;
use wsc_core::trainer::Hyperparams;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// WordPiece vocabulary, one piece per line.
    pub vocab: Option<PathBuf>,
    /// Training schemas (JSON lines).
    pub corpus: Option<PathBuf>,
    /// CoNLL-U parses of the training candidates.
    pub parses: Option<PathBuf>,
    /// Evaluation schemas; the training corpus when absent.
    pub eval_corpus: Option<PathBuf>,
    pub eval_parses: Option<PathBuf>,
    /// Starting weights for `train` and `curve`; fresh init when absent.
    pub init_checkpoint: Option<PathBuf>,
    /// Checkpoint written by `train` and read by `eval`;
    /// `<out_dir>/model.ckpt` when absent.
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,

    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    pub ff_size: usize,
    pub max_positions: usize,
    pub scale_mode: ScaleMode,
    pub mask_mode: MaskMode,
    pub layer_norm_eps: f64,

    pub plan: PlanKind,
    /// Window position for inside plans; unused otherwise.
    pub plan_position: LayerPosition,
    /// Number of masked layers (inside) or shared-layer steps (outside).
    pub plan_t: usize,

    pub base_lr: f64,
    pub batch_size: usize,
    pub warmup_frac: f64,
    pub max_epochs: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub weight_decay: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderConfig::desk(0);
        let hyper = Hyperparams::default();
        RunConfig {
            vocab: None,
            corpus: None,
            parses: None,
            eval_corpus: None,
            eval_parses: None,
            init_checkpoint: None,
            checkpoint: None,
            out_dir: PathBuf::from("out"),
            seed: hyper.seed,
            num_layers: enc.num_layers,
            num_heads: enc.num_heads,
            hidden_size: enc.hidden_size,
            ff_size: enc.ff_size,
            max_positions: enc.max_positions,
            scale_mode: enc.scale_mode,
            mask_mode: enc.mask_mode,
            layer_norm_eps: enc.layer_norm_eps,
            plan: PlanKind::None,
            plan_position: LayerPosition::Last,
            plan_t: 1,
            base_lr: hyper.base_lr,
            batch_size: hyper.batch_size,
            warmup_frac: hyper.warmup_frac,
            max_epochs: hyper.max_epochs,
            dropout: hyper.dropout,
            max_seq_len: hyper.max_seq_len,
            weight_decay: hyper.weight_decay,
        }
    }
}

/// Flag values that override config keys.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub plan: Option<PlanKind>,
    pub mask_mode: Option<MaskMode>,
    pub layers: Option<LayerSpec>,
    pub out_dir: Option<PathBuf>,
}

/// `POS:T`, or a bare `T` that keeps the configured position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub position: Option<LayerPosition>,
    pub t: usize,
}

impl std::str::FromStr for LayerSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (position, t) = match s.split_once(':') {
            Some((p, t)) => (Some(p.parse::<LayerPosition>().map_err(|e| e.to_string())?), t),
            None => (None, s),
        };
        let t = t.parse::<usize>().map_err(|_| format!("expected POS:T, got {s:?}"))?;
        Ok(LayerSpec { position, t })
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(plan) = o.plan {
            self.plan = plan;
        }
        if let Some(mode) = o.mask_mode {
            self.mask_mode = mode;
        }
        if let Some(layers) = o.layers {
            if let Some(p) = layers.position {
                self.plan_position = p;
            }
            self.plan_t = layers.t;
        }
        if let Some(dir) = &o.out_dir {
            self.out_dir = dir.clone();
        }
    }

    /// Pretty-printed JSON, newline terminated.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            hidden_size: self.hidden_size,
            ff_size: self.ff_size,
            vocab_size,
            max_positions: self.max_positions,
            segment_types: 2,
            dropout_rate: self.dropout,
            scale_mode: self.scale_mode,
            mask_mode: self.mask_mode,
            layer_norm_eps: self.layer_norm_eps,
        }
    }

    pub fn mask_plan(&self) -> Result<MaskPlan> {
        let plan = match self.plan {
            PlanKind::None => MaskPlan::None,
            PlanKind::Inside => MaskPlan::inside(self.plan_position, self.plan_t, self.num_layers)?,
            PlanKind::Outside => MaskPlan::Outside { steps: self.plan_t },
        };
        plan.validate(self.num_layers)?;
        Ok(plan)
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            base_lr: self.base_lr,
            batch_size: self.batch_size,
            warmup_frac: self.warmup_frac,
            max_epochs: self.max_epochs,
            dropout: self.dropout,
            seed: self.seed,
            max_seq_len: self.max_seq_len,
            weight_decay: self.weight_decay,
        }
    }

    /// Checks everything that does not depend on the vocabulary.
    pub fn validate(&self) -> Result<()> {
        self.encoder_config(1).validate()?;
        self.mask_plan()?;
        self.hyperparams().validate()?;
        if self.max_seq_len > self.max_positions {
            return Err(CliError::Config(format!(
                "max_seq_len {} exceeds max_positions {}",
                self.max_seq_len, self.max_positions
            )));
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }

    pub fn eval_paths(&self) -> (Option<&PathBuf>, Option<&PathBuf>) {
        match &self.eval_corpus {
            Some(c) => (Some(c), self.eval_parses.as_ref()),
            None => (self.corpus.as_ref(), self.parses.as_ref()),
        }
    }
}

/// The path stored under `key`, which must be set and exist.
pub fn require<'a>(key: &'static str, path: Option<&'a PathBuf>) -> Result<&'a Path> {
    let path = path.ok_or_else(|| CliError::Config(format!("{key} is not set")))?;
    if !path.exists() {
        return Err(CliError::MissingPath {
            key,
            path: path.clone(),
        });
    }
    Ok(path)
}
