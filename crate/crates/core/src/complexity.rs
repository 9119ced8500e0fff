//! Parameter, FLOP, memory-access and energy accounting.
//!
//! Conventions:
//! * dense conv: `2 HW Cin Cout Keff^2` FLOPs
//! * depthwise-separable conv: `2 HW Dm Cin (Keff^2 + Cout)` FLOPs
//! * layer norm: 8 FLOPs per element; element-wise add: 1 FLOP per element
//! * activations, bias adds, split, concat and shuffle: 0 FLOPs
//! * energy: 4.6 pJ per FLOP
//!
//! The memory-access estimate counts one read per input element, one write
//! per output element and one read per kernel weight. A separable conv is
//! counted as its depthwise and pointwise halves. The lower bound applies to
//! the channel-mixing multiply-accumulates `HW Cin Dm Cout` of a layer.

use std::fmt::Write as _;

use serde::Serialize;

use crate::nn::{BlockConfig, NetworkConfig};
use crate::tensor::Activation;

pub const ENERGY_PER_FLOP_MJ: f64 = 4.6e-9;

/// Reference op counts for the classical receivers at the paper's dimensions.
pub const REFERENCE_LS_NFLOPS: u64 = 1_218_540;
pub const REFERENCE_LMMSE_NFLOPS: u64 = 3_411_326_635;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
    },
    Separable {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        depth_multiplier: usize,
    },
    LayerNorm {
        channels: usize,
    },
    Activation {
        channels: usize,
        kind: Activation,
    },
    Add {
        channels: usize,
    },
    Split {
        channels: usize,
    },
    Concat {
        channels: usize,
    },
    Shuffle {
        channels: usize,
    },
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv2d",
            LayerKind::Separable { .. } => "ds_conv2d",
            LayerKind::LayerNorm { .. } => "layer_norm",
            LayerKind::Activation { kind, .. } => match kind {
                Activation::Relu => "relu",
                Activation::Gelu => "gelu",
                Activation::Sigmoid => "sigmoid",
            },
            LayerKind::Add { .. } => "add",
            LayerKind::Split { .. } => "split",
            LayerKind::Concat { .. } => "concat",
            LayerKind::Shuffle { .. } => "shuffle",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LayerCost {
    pub nparam: u64,
    pub nflops: u64,
    pub mac_estimate: u64,
    pub mac_lower_bound: u64,
    pub energy_mj: f64,
}

impl std::ops::Add for LayerCost {
    type Output = LayerCost;

    fn add(self, o: LayerCost) -> LayerCost {
        LayerCost {
            nparam: self.nparam + o.nparam,
            nflops: self.nflops + o.nflops,
            mac_estimate: self.mac_estimate + o.mac_estimate,
            mac_lower_bound: self.mac_lower_bound + o.mac_lower_bound,
            energy_mj: self.energy_mj + o.energy_mj,
        }
    }
}

impl std::iter::Sum for LayerCost {
    fn sum<I: Iterator<Item = LayerCost>>(iter: I) -> LayerCost {
        iter.fold(LayerCost::default(), |a, b| a + b)
    }
}

pub fn effective_kernel(kernel: usize, dilation: usize) -> usize {
    dilation * (kernel - 1) + 1
}

/// `2 sqrt(HW n) + n / HW`, rounded up, for `n` multiply-accumulates.
pub fn mac_lower_bound(n: u64, height: usize, width: usize) -> u64 {
    let hw = (height * width) as f64;
    let n = n as f64;
    (2.0 * (hw * n).sqrt() + n / hw - 1e-9).ceil() as u64
}

pub fn energy_mj(nflops: u64) -> f64 {
    nflops as f64 * ENERGY_PER_FLOP_MJ
}

/// Parameter ratio of a separable conv to a dense conv with the same shape.
pub fn separable_param_ratio(kernel: usize, c_out: usize) -> f64 {
    1.0 / c_out as f64 + 1.0 / (kernel * kernel) as f64
}

/// Dense-conv FLOP ratio between dilation `d` and dilation 1.
pub fn dilation_flop_ratio(kernel: usize, dilation: usize) -> f64 {
    let k = effective_kernel(kernel, dilation);
    (k * k) as f64 / (kernel * kernel) as f64
}

pub fn layer_cost(kind: &LayerKind, height: usize, width: usize) -> LayerCost {
    let hw = (height * width) as u64;
    let u = |v: usize| v as u64;
    let (nparam, nflops, mac, bound) = match *kind {
        LayerKind::Conv {
            c_in,
            c_out,
            kernel,
            dilation,
        } => {
            let k2 = u(effective_kernel(kernel, dilation).pow(2));
            let weights = u(kernel * kernel * c_in * c_out);
            let flops = 2 * hw * u(c_in * c_out) * k2;
            let mac = hw * u(c_in + c_out) + weights;
            let mixing = hw * u(c_in * c_out);
            (
                weights + u(c_out),
                flops,
                mac,
                mac_lower_bound(mixing, height, width),
            )
        }
        LayerKind::Separable {
            c_in,
            c_out,
            kernel,
            dilation,
            depth_multiplier,
        } => {
            let mid = u(c_in * depth_multiplier);
            let k2 = u(effective_kernel(kernel, dilation).pow(2));
            let dw = u(kernel * kernel) * mid;
            let pw = mid * u(c_out);
            let flops = 2 * hw * mid * (k2 + u(c_out));
            let mac = (hw * u(c_in) + hw * mid + dw) + (hw * mid + hw * u(c_out) + pw);
            (
                dw + mid + pw + u(c_out),
                flops,
                mac,
                mac_lower_bound(hw * pw, height, width),
            )
        }
        LayerKind::LayerNorm { channels } => {
            let n = hw * u(channels);
            (2 * u(channels), 8 * n, 2 * n + 2 * u(channels), 0)
        }
        LayerKind::Activation { channels, .. } => (0, 0, 2 * hw * u(channels), 0),
        LayerKind::Add { channels } => (0, hw * u(channels), 3 * hw * u(channels), 0),
        LayerKind::Split { .. } | LayerKind::Concat { .. } => (0, 0, 0, 0),
        LayerKind::Shuffle { channels } => (0, 0, 2 * hw * u(channels), 0),
    };
    LayerCost {
        nparam,
        nflops,
        mac_estimate: mac,
        mac_lower_bound: bound,
        energy_mj: energy_mj(nflops),
    }
}

/// Layers of one physical block, in execution order.
pub fn block_layers(cfg: &BlockConfig, prefix: &str) -> Vec<LayerSpec> {
    let a = cfg.ablation;
    let c = cfg.filters;
    let (cin, cout) = (cfg.branch_in(), cfg.branch_out());
    let act = if a.use_gelu {
        Activation::Gelu
    } else {
        Activation::Relu
    };
    let sep = |c_out| LayerKind::Separable {
        c_in: cin,
        c_out,
        kernel: cfg.kernel_size(),
        dilation: cfg.dilation_rate(),
        depth_multiplier: cfg.depth_multiplier,
    };
    let mut layers = Vec::new();
    let mut push = |name: &str, kind| {
        layers.push(LayerSpec {
            name: format!("{prefix}.{name}"),
            kind,
        })
    };
    if a.use_split {
        push("split", LayerKind::Split { channels: c });
    }
    push("norm1", LayerKind::LayerNorm { channels: cin });
    push(
        "act1",
        LayerKind::Activation {
            channels: cin,
            kind: act,
        },
    );
    push("conv1", sep(cin));
    push("norm2", LayerKind::LayerNorm { channels: cin });
    push(
        "act2",
        LayerKind::Activation {
            channels: cin,
            kind: act,
        },
    );
    push("conv2", sep(cout));
    match (a.use_split, a.use_concat) {
        (true, true) | (false, true) => push("concat", LayerKind::Concat { channels: c }),
        (true, false) => {
            push("add", LayerKind::Add { channels: cin });
            push("concat", LayerKind::Concat { channels: c });
        }
        (false, false) => push("add", LayerKind::Add { channels: c }),
    }
    if a.use_shuffle {
        push("shuffle", LayerKind::Shuffle { channels: c });
    }
    layers
}

pub fn network_layers(cfg: &NetworkConfig) -> Vec<LayerSpec> {
    let c = cfg.filters;
    let conv = |name: &str, c_in, c_out, kernel| LayerSpec {
        name: name.into(),
        kind: LayerKind::Conv {
            c_in,
            c_out,
            kernel,
            dilation: 1,
        },
    };
    let mut layers = vec![conv("stem", cfg.input_channels(), c, cfg.stem_kernel.0)];
    for (i, b) in cfg.physical_blocks().iter().enumerate() {
        layers.extend(block_layers(b, &format!("blocks.{i}")));
    }
    layers.push(conv("head", c, c, cfg.head_kernel.0));
    layers.push(conv("output", c, cfg.bits_per_symbol, 1));
    layers.push(LayerSpec {
        name: "output.sigmoid".into(),
        kind: LayerKind::Activation {
            channels: cfg.bits_per_symbol,
            kind: Activation::Sigmoid,
        },
    });
    layers
}

#[derive(Clone, Debug, Serialize)]
pub struct LayerRow {
    pub spec: LayerSpec,
    pub cost: LayerCost,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReceiverRow {
    pub name: String,
    pub nflops: u64,
    pub energy_mj: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComplexityReport {
    pub height: usize,
    pub width: usize,
    pub layers: Vec<LayerRow>,
    pub total: LayerCost,
    /// Cost of the residual blocks alone.
    pub blocks: LayerCost,
    /// Separable vs dense parameter ratio at the block kernel size and width.
    pub separable_ratio: f64,
    /// Dense-conv FLOP ratios for dilation 3 and 5 against dilation 1.
    pub dilation_ratios: [f64; 2],
    pub receivers: Vec<ReceiverRow>,
}

pub fn block_cost(cfg: &BlockConfig, height: usize, width: usize) -> LayerCost {
    block_layers(cfg, "block")
        .iter()
        .map(|l| layer_cost(&l.kind, height, width))
        .sum()
}

pub fn network_report(cfg: &NetworkConfig, height: usize, width: usize) -> ComplexityReport {
    let layers: Vec<LayerRow> = network_layers(cfg)
        .into_iter()
        .map(|spec| LayerRow {
            cost: layer_cost(&spec.kind, height, width),
            spec,
        })
        .collect();
    let total = layers.iter().map(|l| l.cost).sum();
    let blocks = layers
        .iter()
        .filter(|l| l.spec.name.starts_with("blocks."))
        .map(|l| l.cost)
        .sum();
    let k = cfg
        .physical_blocks()
        .first()
        .map_or(3, BlockConfig::kernel_size);
    ComplexityReport {
        height,
        width,
        layers,
        total,
        blocks,
        separable_ratio: separable_param_ratio(k, cfg.filters),
        dilation_ratios: [dilation_flop_ratio(k, 3), dilation_flop_ratio(k, 5)],
        receivers: Vec::new(),
    }
}

impl ComplexityReport {
    pub fn add_receiver(&mut self, name: &str, nflops: u64) {
        self.receivers.push(ReceiverRow {
            name: name.into(),
            nflops,
            energy_mj: energy_mj(nflops),
        });
    }

    /// Rows `layer,kind,nparam,nflops,mac_bound,mac_estimate,energy_mJ`, totals last.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,kind,nparam,nflops,mac_bound,mac_estimate,energy_mJ\n");
        let mut row = |name: &str, kind: &str, c: &LayerCost| {
            let _ = writeln!(
                s,
                "{name},{kind},{},{},{},{},{:.6}",
                c.nparam, c.nflops, c.mac_lower_bound, c.mac_estimate, c.energy_mj
            );
        };
        for l in &self.layers {
            row(&l.spec.name, l.spec.kind.label(), &l.cost);
        }
        row("blocks", "subtotal", &self.blocks);
        row("total", "total", &self.total);
        for r in &self.receivers {
            let c = LayerCost {
                nflops: r.nflops,
                energy_mj: r.energy_mj,
                ..LayerCost::default()
            };
            row(&r.name, "receiver", &c);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "grid {}x{}", self.height, self.width);
        let _ = writeln!(
            s,
            "{:<24} {:<11} {:>10} {:>15} {:>13} {:>13} {:>10}",
            "layer", "kind", "nparam", "nflops", "mac_bound", "mac_est", "energy_mJ"
        );
        let mut row = |name: &str, kind: &str, c: &LayerCost| {
            let _ = writeln!(
                s,
                "{:<24} {:<11} {:>10} {:>15} {:>13} {:>13} {:>10.4}",
                name, kind, c.nparam, c.nflops, c.mac_lower_bound, c.mac_estimate, c.energy_mj
            );
        };
        for l in &self.layers {
            row(&l.spec.name, l.spec.kind.label(), &l.cost);
        }
        row("blocks", "subtotal", &self.blocks);
        row("total", "total", &self.total);
        for r in &self.receivers {
            let _ = writeln!(
                s,
                "{:<24} {:<11} {:>10} {:>15} {:>13} {:>13} {:>10.4}",
                r.name, "receiver", 0, r.nflops, "-", "-", r.energy_mj
            );
        }
        let _ = writeln!(
            s,
            "separable/dense parameter ratio {:.4}",
            self.separable_ratio
        );
        let _ = writeln!(
            s,
            "dense FLOP ratio, dilation 3 and 5 vs 1: {:.4} {:.4}",
            self.dilation_ratios[0], self.dilation_ratios[1]
        );
        s
    }
}
