use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hs::HsVariant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockType {
    PlainBottleneck,
    HsBottleneck,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WidthRule {
    /// `w_j = base_w * 2^(j-1)` for stage `j = 1..=4`.
    #[default]
    DoublePerStage,
    Custom([usize; 4]),
}

impl WidthRule {
    pub fn name(&self) -> String {
        match self {
            WidthRule::DoublePerStage => "double-per-stage".into(),
            WidthRule::Custom(w) => format!("custom-{}-{}-{}-{}", w[0], w[1], w[2], w[3]),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stem {
    /// 7x7/2 conv, then 3x3/2 max pool.
    #[serde(rename = "classic-7x7")]
    Classic7x7,
    /// Three 3x3 convs (first strided), then 3x3/2 max pool.
    #[default]
    #[serde(rename = "resnet-d-3x3x3")]
    ResnetD3x3x3,
}

fn one() -> usize {
    1
}
fn three() -> usize {
    3
}
fn sixty_four() -> usize {
    64
}
fn two_fifty_six() -> usize {
    256
}
fn yes() -> bool {
    true
}
fn version_one() -> u32 {
    1
}

/// Declarative description of a 4-stage bottleneck network.
///
/// Stage `j` (1-based) has mid width `s * w_j`, output width
/// `base_out * 2^(j-1)`, and downsamples by 2 in its first block for
/// `j > 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "version_one")]
    pub version: u32,
    pub block_type: BlockType,
    pub stage_blocks: [usize; 4],
    pub base_w: usize,
    /// Groups per HS stage; mid-width multiplier (normally 1) for plain blocks.
    #[serde(default = "one")]
    pub s: usize,
    #[serde(default)]
    pub width_rule: WidthRule,
    #[serde(default)]
    pub stem: Stem,
    pub num_classes: usize,
    pub image_size: usize,
    #[serde(default)]
    pub variant: HsVariant,
    #[serde(default = "three")]
    pub kernel: usize,
    /// Output channels of the stem.
    #[serde(default = "sixty_four")]
    pub stem_width: usize,
    /// Output channels of stage 1; doubled per stage.
    #[serde(default = "two_fifty_six")]
    pub base_out: usize,
    /// Start each block's last batch-norm at gamma = 0.
    #[serde(default = "yes")]
    pub zero_init_last_bn: bool,
}

/// Named configurations.
pub const PRESETS: [&str; 8] = [
    "resnet50",
    "resnet50-d",
    "hs-18w-8s",
    "hs-22w-7s",
    "hs-28w-6s",
    "hs-40w-5s",
    "tiny-hs",
    "tiny-plain",
];

/// The four HS-ResNet50 `(w, s)` settings of the width/groups sweep.
pub const HS_PRESETS: [(&str, usize, usize); 4] = [
    ("hs-18w-8s", 18, 8),
    ("hs-22w-7s", 22, 7),
    ("hs-28w-6s", 28, 6),
    ("hs-40w-5s", 40, 5),
];

impl NetworkConfig {
    pub fn resnet50() -> Self {
        NetworkConfig {
            version: 1,
            block_type: BlockType::PlainBottleneck,
            stage_blocks: [3, 4, 6, 3],
            base_w: 64,
            s: 1,
            width_rule: WidthRule::DoublePerStage,
            stem: Stem::Classic7x7,
            num_classes: 1000,
            image_size: 224,
            variant: HsVariant::BPreserve,
            kernel: 3,
            stem_width: 64,
            base_out: 256,
            zero_init_last_bn: true,
        }
    }

    pub fn hs_resnet50(base_w: usize, s: usize) -> Self {
        NetworkConfig {
            block_type: BlockType::HsBottleneck,
            base_w,
            s,
            stem: Stem::ResnetD3x3x3,
            ..Self::resnet50()
        }
    }

    /// `[1,1,1,1]` stages, `w = 4`, `s = 4`, narrow stem and outputs, for
    /// 32x32 inputs and 10 classes.
    pub fn tiny_hs() -> Self {
        NetworkConfig {
            block_type: BlockType::HsBottleneck,
            stage_blocks: [1, 1, 1, 1],
            base_w: 4,
            s: 4,
            stem: Stem::ResnetD3x3x3,
            num_classes: 10,
            image_size: 32,
            stem_width: 16,
            base_out: 64,
            ..Self::resnet50()
        }
    }

    /// Plain-bottleneck counterpart of [`tiny_hs`](Self::tiny_hs) with a
    /// comparable parameter budget.
    pub fn tiny_plain() -> Self {
        NetworkConfig {
            block_type: BlockType::PlainBottleneck,
            base_w: 12,
            s: 1,
            ..Self::tiny_hs()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let cfg = match name {
            "resnet50" => Self::resnet50(),
            "resnet50-d" => NetworkConfig {
                stem: Stem::ResnetD3x3x3,
                ..Self::resnet50()
            },
            "tiny-hs" => Self::tiny_hs(),
            "tiny-plain" => Self::tiny_plain(),
            other => {
                let (_, w, s) =
                    HS_PRESETS
                        .iter()
                        .find(|(n, _, _)| *n == other)
                        .ok_or_else(|| {
                            Error::Config(format!(
                                "unknown preset `{other}` (known: {})",
                                PRESETS.join(", ")
                            ))
                        })?;
                Self::hs_resnet50(*w, *s)
            }
        };
        Ok(cfg)
    }

    /// Per-stage group width `w_j`.
    pub fn stage_widths(&self) -> [usize; 4] {
        match self.width_rule {
            WidthRule::DoublePerStage => std::array::from_fn(|j| self.base_w << j),
            WidthRule::Custom(w) => w,
        }
    }

    pub fn stage_out_channels(&self) -> [usize; 4] {
        std::array::from_fn(|j| self.base_out << j)
    }

    pub fn stage_mid_channels(&self) -> [usize; 4] {
        self.stage_widths().map(|w| self.s * w)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.version != 1 {
            return bad(format!("unsupported config version {}", self.version));
        }
        if self.stage_blocks.contains(&0) {
            return bad(format!(
                "every stage needs a block: {:?}",
                self.stage_blocks
            ));
        }
        if self.stage_widths().contains(&0) {
            return bad(format!(
                "stage widths must be positive: {:?}",
                self.stage_widths()
            ));
        }
        match self.block_type {
            BlockType::HsBottleneck if self.s < 2 => {
                return bad(format!("hs-bottleneck needs s >= 2, got {}", self.s))
            }
            BlockType::PlainBottleneck if self.s < 1 => return bad("s must be at least 1".into()),
            _ => {}
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.num_classes == 0 || self.base_out == 0 || self.stem_width == 0 {
            return bad("num_classes, base_out and stem_width must be positive".into());
        }
        if self.stem == Stem::ResnetD3x3x3 && !self.stem_width.is_multiple_of(2) {
            return bad(format!(
                "resnet-d stem width must be even, got {}",
                self.stem_width
            ));
        }
        if let WidthRule::DoublePerStage = self.width_rule {
            if self.base_w.checked_shl(3).is_none() {
                return bad("base_w too large".into());
            }
        }
        Ok(())
    }
}
