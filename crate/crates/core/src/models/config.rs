use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[serde(rename = "convlstm")]
    ConvLstm,
    LrcnCustomCnn,
    LrcnVgg,
    C3d,
    CnnTransformer,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::ConvLstm, Variant::LrcnCustomCnn, Variant::LrcnVgg, Variant::C3d, Variant::CnnTransformer];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::ConvLstm => "convlstm",
            Variant::LrcnCustomCnn => "lrcn_custom_cnn",
            Variant::LrcnVgg => "lrcn_vgg",
            Variant::C3d => "c3d",
            Variant::CnnTransformer => "cnn_transformer",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Ok(match key.as_str() {
            "convlstm" | "conv_lstm" => Variant::ConvLstm,
            "lrcn_custom_cnn" | "lrcn_custom" | "lrcn_cnn" => Variant::LrcnCustomCnn,
            "lrcn_vgg" | "vgg" => Variant::LrcnVgg,
            "c3d" => Variant::C3d,
            "cnn_transformer" | "transformer" => Variant::CnnTransformer,
            _ => {
                return Err(Error::config(format!(
                    "unknown variant '{s}' (expected convlstm, lrcn_custom_cnn, lrcn_vgg, c3d, cnn_transformer)"
                )))
            }
        })
    }
}

/// Clip geometry `frames × height × width × channels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputShape {
    pub const FULL: InputShape = InputShape { frames: 25, height: 90, width: 90, channels: 3 };
    pub const DESK: InputShape = InputShape { frames: 16, height: 24, width: 24, channels: 3 };

    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }
}

impl fmt::Display for InputShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}×{}×{}", self.frames, self.height, self.width, self.channels)
    }
}

/// Per-frame extractor: one `conv k×k (valid) + relu + maxpool 2×2` block
/// per entry of `filters`, then flatten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    pub filters: Vec<usize>,
    pub kernel: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig { filters: vec![16, 32, 64, 64], kernel: 3 }
    }
}

/// VGG-16 shape ladder: `convs[b]` same-padded 3×3 convolutions of width
/// `widths[b]` per block. Only the first `pooled_blocks` blocks are closed
/// by a 2×2 max-pool; small inputs need an unpooled tail to keep the later
/// blocks above 1×1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VggConfig {
    pub widths: Vec<usize>,
    pub convs: Vec<usize>,
    pub pooled_blocks: usize,
}

impl Default for VggConfig {
    fn default() -> Self {
        VggConfig { widths: vec![64, 128, 256, 512, 512], convs: vec![2, 2, 3, 3, 3], pooled_blocks: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvLstmConfig {
    pub filters: usize,
    pub kernel: usize,
}

impl Default for ConvLstmConfig {
    fn default() -> Self {
        ConvLstmConfig { filters: 32, kernel: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrcnConfig {
    pub lstm_hidden: usize,
    /// Width of the hidden dense layer of the VGG head.
    pub head_hidden: usize,
}

impl Default for LrcnConfig {
    fn default() -> Self {
        LrcnConfig { lstm_hidden: 256, head_hidden: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct C3dConfig {
    pub filters: [usize; 2],
    pub kernel: usize,
    pub pool: usize,
    pub dense: usize,
    pub dropout: f64,
}

impl Default for C3dConfig {
    fn default() -> Self {
        C3dConfig { filters: [64, 32], kernel: 3, pool: 2, dense: 256, dropout: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub blocks: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig { d_model: 128, heads: 4, d_ff: 256, blocks: 2 }
    }
}

/// Architecture description. Only the sub-config of the selected variant is
/// used (the CNN-Transformer also uses `cnn`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    #[serde(default = "full_input")]
    pub input: InputShape,
    #[serde(default = "two")]
    pub classes: usize,
    /// Require the full-size 25×90×90×3 input.
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub cnn: CnnConfig,
    #[serde(default)]
    pub vgg: VggConfig,
    #[serde(default)]
    pub convlstm: ConvLstmConfig,
    #[serde(default)]
    pub lrcn: LrcnConfig,
    #[serde(default)]
    pub c3d: C3dConfig,
    #[serde(default)]
    pub transformer: TransformerConfig,
}

fn full_input() -> InputShape {
    InputShape::FULL
}

fn two() -> usize {
    2
}

impl ModelConfig {
    /// Full-size input geometry with the default hyperparameters, strict.
    pub fn full(variant: Variant) -> Self {
        ModelConfig {
            variant,
            input: InputShape::FULL,
            classes: 2,
            strict: true,
            cnn: CnnConfig::default(),
            vgg: VggConfig::default(),
            convlstm: ConvLstmConfig::default(),
            lrcn: LrcnConfig::default(),
            c3d: C3dConfig::default(),
            transformer: TransformerConfig::default(),
        }
    }

    /// Reduced 16×24×24×3 geometry with narrow layers, sized to train on a
    /// single CPU core in minutes.
    pub fn desk(variant: Variant) -> Self {
        ModelConfig {
            variant,
            input: InputShape::DESK,
            classes: 2,
            strict: false,
            cnn: CnnConfig { filters: vec![8, 16], kernel: 3 },
            vgg: VggConfig { widths: vec![8, 16, 16, 32, 32], convs: vec![2, 2, 3, 3, 3], pooled_blocks: 3 },
            convlstm: ConvLstmConfig { filters: 4, kernel: 3 },
            lrcn: LrcnConfig { lstm_hidden: 16, head_hidden: 16 },
            c3d: C3dConfig { filters: [8, 8], kernel: 3, pool: 2, dense: 32, dropout: 0.5 },
            transformer: TransformerConfig { d_model: 16, heads: 2, d_ff: 32, blocks: 2 },
        }
    }

    /// Static checks. Shape feasibility of the whole stack is checked when
    /// the model is built.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if self.classes != 2 {
            return bad(format!("class count must be 2, got {}", self.classes));
        }
        if self.strict && self.input != InputShape::FULL {
            return bad(format!("strict mode requires input {}, got {}", InputShape::FULL, self.input));
        }
        if self.input.dims().contains(&0) {
            return bad(format!("input dimensions must be positive, got {}", self.input));
        }
        match self.variant {
            Variant::ConvLstm => {
                if self.convlstm.filters == 0 || self.convlstm.kernel == 0 {
                    return bad("convlstm filters and kernel must be positive".into());
                }
            }
            Variant::LrcnCustomCnn => {
                self.check_cnn()?;
                if self.lrcn.lstm_hidden == 0 {
                    return bad("lstm_hidden must be positive".into());
                }
            }
            Variant::LrcnVgg => {
                let v = &self.vgg;
                if v.widths.is_empty() || v.widths.len() != v.convs.len() {
                    return bad(format!(
                        "vgg widths ({}) and convs ({}) must be non-empty and the same length",
                        v.widths.len(),
                        v.convs.len()
                    ));
                }
                if v.widths.contains(&0) || v.convs.contains(&0) {
                    return bad("vgg widths and conv counts must be positive".into());
                }
                if v.pooled_blocks > v.widths.len() {
                    return bad(format!("vgg pooled_blocks {} exceeds {} blocks", v.pooled_blocks, v.widths.len()));
                }
                if self.lrcn.lstm_hidden == 0 || self.lrcn.head_hidden == 0 {
                    return bad("lstm_hidden and head_hidden must be positive".into());
                }
            }
            Variant::C3d => {
                let c = &self.c3d;
                if c.filters.contains(&0) || c.kernel == 0 || c.pool == 0 || c.dense == 0 {
                    return bad("c3d filters, kernel, pool and dense must be positive".into());
                }
                if !(0.0..1.0).contains(&c.dropout) {
                    return bad(format!("c3d dropout must be in [0, 1), got {}", c.dropout));
                }
            }
            Variant::CnnTransformer => {
                self.check_cnn()?;
                let t = &self.transformer;
                if t.d_model == 0 || t.heads == 0 || t.d_ff == 0 || t.blocks == 0 {
                    return bad("transformer sizes must be positive".into());
                }
                if t.d_model % t.heads != 0 {
                    return bad(format!("d_model {} is not divisible by {} heads", t.d_model, t.heads));
                }
            }
        }
        Ok(())
    }

    fn check_cnn(&self) -> Result<()> {
        if self.cnn.filters.is_empty() || self.cnn.filters.contains(&0) || self.cnn.kernel == 0 {
            return Err(Error::config("cnn needs at least one block with positive filters and kernel"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::config(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_mode_rejects_other_shapes() {
        let mut cfg = ModelConfig::full(Variant::C3d);
        cfg.validate().unwrap();
        cfg.input.frames = 24;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.strict = false;
        cfg.validate().unwrap();
    }

    #[test]
    fn class_count_is_fixed() {
        let mut cfg = ModelConfig::desk(Variant::ConvLstm);
        cfg.classes = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut cfg = ModelConfig::desk(Variant::CnnTransformer);
        cfg.transformer.heads = 3;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("divisible"), "{err}");
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.tag().parse::<Variant>().unwrap(), v);
        }
        assert!("resnet".parse::<Variant>().is_err());
    }

    #[test]
    fn toml_overrides_defaults() {
        let cfg = ModelConfig::from_toml(
            "variant = \"c3d\"\nstrict = false\n[input]\nframes = 8\nheight = 16\nwidth = 16\nchannels = 3\n[c3d]\ndense = 12\n",
        )
        .unwrap();
        assert_eq!(cfg.c3d.dense, 12);
        assert_eq!(cfg.c3d.filters, [64, 32]);
        assert_eq!(cfg.input.frames, 8);
    }
}
