//! Residual blocks and complete receiver networks.
//!
//! A block is described declaratively by [`BlockConfig`]; its behaviour is
//! driven entirely by the four [`Ablation`] switches so that the traditional
//! ResNet-T block (all switches off) and the split/shuffle ResNet-SS block
//! (all switches on) are two corners of the same lattice.

mod block;
mod input;
mod network;
mod params;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::TensorError;

pub use block::Block;
pub use input::{assemble_input, input_channels, stack_batch};
pub use network::{Network, NetworkOutput};
pub use params::{ParamId, ParamSet};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    ResnetT,
    ResnetSs,
    /// Two ResNet-SS blocks followed by one ResNet-T block.
    ResnetTSs,
}

/// Component switches of a residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    /// Process only the upper half of the channels.
    pub use_split: bool,
    /// Join pass-through and processed paths by concatenation instead of addition.
    pub use_concat: bool,
    /// Shuffle channels at the block output.
    pub use_shuffle: bool,
    /// GELU instead of ReLU.
    pub use_gelu: bool,
}

impl Ablation {
    pub const TRADITIONAL: Ablation = Ablation {
        use_split: false,
        use_concat: false,
        use_shuffle: false,
        use_gelu: false,
    };
    pub const SPLIT_SHUFFLE: Ablation = Ablation {
        use_split: true,
        use_concat: true,
        use_shuffle: true,
        use_gelu: true,
    };

    /// All sixteen switch combinations, indexed by the bit pattern
    /// `split | concat << 1 | shuffle << 2 | gelu << 3`.
    pub fn lattice() -> impl Iterator<Item = Ablation> {
        (0u8..16).map(|b| Ablation {
            use_split: b & 1 != 0,
            use_concat: b & 2 != 0,
            use_shuffle: b & 4 != 0,
            use_gelu: b & 8 != 0,
        })
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.use_split {
            parts.push("cs");
        }
        if self.use_concat {
            parts.push("concat");
        }
        if self.use_shuffle {
            parts.push("csh");
        }
        if self.use_gelu {
            parts.push("gelu");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub kind: BlockKind,
    pub filters: usize,
    pub kernel: (usize, usize),
    pub dilation: (usize, usize),
    pub depth_multiplier: usize,
    pub ablation: Ablation,
    pub groups: usize,
}

impl BlockConfig {
    pub fn resnet_t(filters: usize) -> Self {
        BlockConfig {
            kind: BlockKind::ResnetT,
            filters,
            kernel: (3, 3),
            dilation: (1, 1),
            depth_multiplier: 1,
            ablation: Ablation::TRADITIONAL,
            groups: (filters / 2).max(1),
        }
    }

    pub fn resnet_ss(filters: usize) -> Self {
        BlockConfig {
            kind: BlockKind::ResnetSs,
            ablation: Ablation::SPLIT_SHUFFLE,
            ..Self::resnet_t(filters)
        }
    }

    pub fn resnet_t_ss(filters: usize) -> Self {
        BlockConfig {
            kind: BlockKind::ResnetTSs,
            ..Self::resnet_t(filters)
        }
    }

    pub fn with_ablation(filters: usize, ablation: Ablation) -> Self {
        BlockConfig {
            ablation,
            ..Self::resnet_t(filters)
        }
    }

    /// Physical blocks this entry stands for.
    pub fn expand(&self) -> Vec<BlockConfig> {
        match self.kind {
            BlockKind::ResnetTSs => {
                let ss = BlockConfig {
                    kind: BlockKind::ResnetSs,
                    ablation: Ablation::SPLIT_SHUFFLE,
                    ..self.clone()
                };
                let t = BlockConfig {
                    kind: BlockKind::ResnetT,
                    ablation: Ablation::TRADITIONAL,
                    ..self.clone()
                };
                vec![ss.clone(), ss, t]
            }
            _ => vec![self.clone()],
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.0
    }

    pub fn dilation_rate(&self) -> usize {
        self.dilation.0
    }

    /// Channels on the pass-through path (`C'`).
    pub fn pass_channels(&self) -> usize {
        self.filters / 2
    }

    /// Channels entering the processed path.
    pub fn branch_in(&self) -> usize {
        if self.ablation.use_split {
            self.filters - self.pass_channels()
        } else {
            self.filters
        }
    }

    /// Channels leaving the processed path.
    pub fn branch_out(&self) -> usize {
        let a = self.ablation;
        if a.use_split || a.use_concat {
            self.filters - self.pass_channels()
        } else {
            self.filters
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::Config(m));
        if self.filters == 0 {
            return bad("filter count must be positive".into());
        }
        if self.kernel.0 != self.kernel.1 || self.kernel.0 % 2 == 0 {
            return bad(format!("kernel {:?} must be square and odd", self.kernel));
        }
        if self.dilation.0 != self.dilation.1 || self.dilation.0 == 0 {
            return bad(format!(
                "dilation {:?} must be equal and at least 1",
                self.dilation
            ));
        }
        if self.depth_multiplier == 0 {
            return bad("depth multiplier must be at least 1".into());
        }
        let a = self.ablation;
        if (a.use_split || a.use_concat) && (self.filters % 2 != 0 || self.filters < 2) {
            return bad(format!(
                "channel split/concat needs an even filter count, got {}",
                self.filters
            ));
        }
        if a.use_shuffle && (self.groups == 0 || self.filters % self.groups != 0) {
            return bad(format!(
                "shuffle groups {} must divide filter count {}",
                self.groups, self.filters
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputVariant {
    /// Received grid only.
    Y,
    /// Received grid, LS channel estimate and pilot plane.
    #[serde(rename = "YHP")]
    Yhp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_variant: InputVariant,
    pub rx_antennas: usize,
    pub filters: usize,
    pub stem_kernel: (usize, usize),
    pub blocks: Vec<BlockConfig>,
    pub head_kernel: (usize, usize),
    pub bits_per_symbol: usize,
    pub layer_norm_eps: f64,
}

impl NetworkConfig {
    fn base(variant: InputVariant, rx_antennas: usize, filters: usize, bits: usize) -> Self {
        NetworkConfig {
            input_variant: variant,
            rx_antennas,
            filters,
            stem_kernel: (3, 3),
            blocks: Vec::new(),
            head_kernel: (1, 1),
            bits_per_symbol: bits,
            layer_norm_eps: 1e-5,
        }
    }

    /// Stem, `floor(R_n/2)` ResNet-T-SS groups, two ResNet-SS blocks, head.
    pub fn proposed(
        rn: usize,
        filters: usize,
        rx_antennas: usize,
        variant: InputVariant,
        bits: usize,
    ) -> Self {
        let mut cfg = Self::base(variant, rx_antennas, filters, bits);
        cfg.blocks = vec![BlockConfig::resnet_t_ss(filters); rn / 2];
        cfg.blocks.extend([
            BlockConfig::resnet_ss(filters),
            BlockConfig::resnet_ss(filters),
        ]);
        cfg
    }

    /// Stem, `R_n` ResNet-T blocks, head.
    pub fn traditional(
        rn: usize,
        filters: usize,
        rx_antennas: usize,
        variant: InputVariant,
        bits: usize,
    ) -> Self {
        let mut cfg = Self::base(variant, rx_antennas, filters, bits);
        cfg.blocks = vec![BlockConfig::resnet_t(filters); rn];
        cfg
    }

    /// Explicit block list.
    pub fn custom(
        blocks: Vec<BlockConfig>,
        filters: usize,
        rx_antennas: usize,
        variant: InputVariant,
        bits: usize,
    ) -> Self {
        let mut cfg = Self::base(variant, rx_antennas, filters, bits);
        cfg.blocks = blocks;
        cfg
    }

    pub fn input_channels(&self) -> usize {
        input_channels(self.input_variant, self.rx_antennas)
    }

    pub fn physical_blocks(&self) -> Vec<BlockConfig> {
        self.blocks.iter().flat_map(BlockConfig::expand).collect()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::Config(m));
        if self.rx_antennas == 0 || self.bits_per_symbol == 0 || self.filters == 0 {
            return bad("antenna count, bits per symbol and filters must be positive".into());
        }
        if self.stem_kernel != (3, 3) {
            return bad(format!(
                "stem kernel must be (3, 3), got {:?}",
                self.stem_kernel
            ));
        }
        if self.head_kernel != (1, 1) {
            return bad(format!(
                "head kernel must be (1, 1), got {:?}",
                self.head_kernel
            ));
        }
        if self.blocks.is_empty() {
            return bad("at least one residual block is required".into());
        }
        if self.layer_norm_eps <= 0.0 {
            return bad("layer-norm eps must be positive".into());
        }
        for b in self.physical_blocks() {
            if b.filters != self.filters {
                return bad(format!(
                    "block filters {} differ from network filters {}",
                    b.filters, self.filters
                ));
            }
            b.validate()?;
        }
        Ok(())
    }
}
