//! Experiment configuration: presets, TOML round trip and validation.

use std::path::{Path, PathBuf};

use nrx_core::coding::{DecoderKind, DEFAULT_MAX_ITERATIONS};
use nrx_core::nn::{BlockConfig, BlockKind, InputVariant, NetworkConfig};
use nrx_core::phy::{dmrs_positions, ChannelProfile, LinkConfig, LlrMethod};
use nrx_core::receivers::ReceiverKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Small grid and network, trainable on a laptop.
    Desk,
    /// AWGN-only demapping sanity run.
    Toy,
    /// Full-size grid and network.
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "desk" => Ok(Preset::Desk),
            "toy" => Ok(Preset::Toy),
            "paper" => Ok(Preset::Paper),
            _ => Err(HarnessError::Config(format!(
                "unknown preset {s:?} (desk, toy, paper)"
            ))),
        }
    }
}

/// Ranges for per-TTI randomization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub ebn0_db: (f64, f64),
    pub train_delay_spread_ns: (f64, f64),
    pub test_delay_spread_ns: (f64, f64),
    pub doppler_hz: (f64, f64),
    pub train_profiles: Vec<ChannelProfile>,
    pub test_profiles: Vec<ChannelProfile>,
    pub dmrs_counts: Vec<usize>,
    /// Reject ranges outside the reference training/testing table.
    pub paper_faithful: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        use ChannelProfile::*;
        ScenarioConfig {
            ebn0_db: (0.0, 35.0),
            train_delay_spread_ns: (10.0, 1000.0),
            test_delay_spread_ns: (100.0, 700.0),
            doppler_hz: (0.0, 700.0),
            train_profiles: vec![TdlA, TdlC, TdlE],
            test_profiles: vec![TdlB, TdlD],
            dmrs_counts: vec![1, 2],
            paper_faithful: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Proposed,
    Traditional,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub architecture: Architecture,
    /// Number of residual blocks `R_n` for the proposed/traditional layouts.
    pub blocks: usize,
    pub filters: usize,
    pub input: InputVariant,
    /// Block list for the custom layout.
    pub custom_blocks: Vec<BlockKind>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            architecture: Architecture::Proposed,
            blocks: 2,
            filters: 32,
            input: InputVariant::Y,
            custom_blocks: Vec::new(),
        }
    }
}

impl NetworkSpec {
    pub fn build(&self, link: &LinkConfig) -> NetworkConfig {
        let (c, a, b) = (self.filters, link.rx_antennas, link.bits_per_symbol);
        match self.architecture {
            Architecture::Proposed => NetworkConfig::proposed(self.blocks, c, a, self.input, b),
            Architecture::Traditional => {
                NetworkConfig::traditional(self.blocks, c, a, self.input, b)
            }
            Architecture::Custom => {
                let blocks = self
                    .custom_blocks
                    .iter()
                    .map(|k| match k {
                        BlockKind::ResnetT => BlockConfig::resnet_t(c),
                        BlockKind::ResnetSs => BlockConfig::resnet_ss(c),
                        BlockKind::ResnetTSs => BlockConfig::resnet_t_ss(c),
                    })
                    .collect();
                NetworkConfig::custom(blocks, c, a, self.input, b)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub validation_every: u64,
    pub validation_ttis: usize,
    /// Validate at this Eb/N0 instead of drawing it from the scenario.
    pub validation_ebn0_db: Option<f64>,
    /// Train on a generated dataset instead of fresh draws.
    pub dataset: Option<PathBuf>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            steps: 20_000,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            validation_every: 500,
            validation_ttis: 64,
            validation_ebn0_db: None,
            dataset: None,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ebn0_db: Vec<f64>,
    pub ttis: usize,
    pub receivers: Vec<ReceiverKind>,
    pub decoder: DecoderKind,
    pub max_iterations: usize,
    pub llr_method: LlrMethod,
    /// Draw profile, delay spread, Doppler and DMRS count per TTI from the
    /// test ranges; otherwise use the fixed values in `[link]`.
    pub randomize: bool,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ebn0_db: vec![4.0, 8.0, 12.0],
            ttis: 200,
            receivers: vec![ReceiverKind::Pcsi, ReceiverKind::Lmmse, ReceiverKind::Ls],
            decoder: DecoderKind::MinSum,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            llr_method: LlrMethod::MaxLog,
            randomize: false,
            checkpoint: None,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub link: LinkConfig,
    pub scenario: ScenarioConfig,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::preset(Preset::Desk)
    }
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let base = ExperimentConfig {
            link: LinkConfig::default(),
            scenario: ScenarioConfig::default(),
            network: NetworkSpec::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        };
        match p {
            Preset::Desk => ExperimentConfig {
                link: LinkConfig {
                    subcarriers: 32,
                    ..base.link
                },
                ..base
            },
            Preset::Toy => ExperimentConfig {
                link: LinkConfig {
                    subcarriers: 16,
                    profile: ChannelProfile::Awgn,
                    delay_spread_s: 0.0,
                    doppler_hz: 0.0,
                    ..base.link
                },
                scenario: ScenarioConfig {
                    ebn0_db: (8.0, 20.0),
                    train_profiles: vec![ChannelProfile::Awgn],
                    test_profiles: vec![ChannelProfile::Awgn],
                    dmrs_counts: vec![2],
                    train_delay_spread_ns: (0.0, 0.0),
                    test_delay_spread_ns: (0.0, 0.0),
                    doppler_hz: (0.0, 0.0),
                    paper_faithful: false,
                },
                network: NetworkSpec {
                    architecture: Architecture::Custom,
                    custom_blocks: vec![BlockKind::ResnetSs, BlockKind::ResnetT],
                    ..base.network
                },
                train: TrainConfig {
                    validation_ebn0_db: Some(14.0),
                    ..base.train
                },
                eval: EvalConfig {
                    ebn0_db: vec![10.0, 14.0],
                    receivers: vec![ReceiverKind::Pcsi, ReceiverKind::Neural],
                    ..base.eval
                },
            },
            Preset::Paper => ExperimentConfig {
                scenario: ScenarioConfig {
                    paper_faithful: true,
                    ..base.scenario
                },
                network: NetworkSpec {
                    blocks: 7,
                    filters: 128,
                    ..base.network
                },
                train: TrainConfig {
                    batch_size: 128,
                    weight_decay: 0.01,
                    ..base.train
                },
                ..base
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn network_config(&self) -> NetworkConfig {
        self.network.build(&self.link)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.link
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.network_config()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let s = &self.scenario;
        for (name, (lo, hi)) in [
            ("ebn0_db", s.ebn0_db),
            ("train_delay_spread_ns", s.train_delay_spread_ns),
            ("test_delay_spread_ns", s.test_delay_spread_ns),
            ("doppler_hz", s.doppler_hz),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return bad(format!(
                    "scenario.{name} range ({lo}, {hi}) is empty or not finite"
                ));
            }
        }
        if s.train_delay_spread_ns.0 < 0.0 || s.test_delay_spread_ns.0 < 0.0 || s.doppler_hz.0 < 0.0
        {
            return bad("delay spread and Doppler ranges must be non-negative".into());
        }
        if s.train_profiles.is_empty() || s.test_profiles.is_empty() {
            return bad("train and test profile sets must be non-empty".into());
        }
        if s.dmrs_counts.is_empty() || s.dmrs_counts.iter().any(|&d| d == 0 || d > 4) {
            return bad(format!("DMRS counts {:?} must lie in 1..=4", s.dmrs_counts));
        }
        for &d in &s.dmrs_counts {
            let positions = dmrs_positions(d);
            if positions.iter().any(|&p| p >= self.link.symbols) {
                return bad(format!(
                    "{d} DMRS symbols do not fit {} symbols",
                    self.link.symbols
                ));
            }
        }
        if s.paper_faithful {
            self.check_paper_ranges()?;
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        if !(t.learning_rate > 0.0) || !(t.weight_decay >= 0.0) {
            return bad(
                "train.learning_rate must be positive and weight_decay non-negative".into(),
            );
        }
        if t.validation_every == 0 || t.validation_ttis == 0 {
            return bad("train.validation_every and validation_ttis must be positive".into());
        }
        let e = &self.eval;
        if e.ebn0_db.is_empty() || e.ebn0_db.iter().any(|x| !x.is_finite()) {
            return bad("eval.ebn0_db must list finite points".into());
        }
        if e.ttis == 0 || e.receivers.is_empty() || e.max_iterations == 0 {
            return bad("eval needs TTIs, receivers and at least one decoder iteration".into());
        }
        Ok(())
    }

    fn check_paper_ranges(&self) -> Result<(), HarnessError> {
        let s = &self.scenario;
        let within = |(lo, hi): (f64, f64), (a, b): (f64, f64)| lo >= a && hi <= b;
        let train_ok = [
            ChannelProfile::TdlA,
            ChannelProfile::TdlC,
            ChannelProfile::TdlE,
        ];
        let test_ok = [ChannelProfile::TdlB, ChannelProfile::TdlD];
        let ok = within(s.ebn0_db, (0.0, 35.0))
            && within(s.train_delay_spread_ns, (10.0, 1000.0))
            && within(s.test_delay_spread_ns, (100.0, 700.0))
            && within(s.doppler_hz, (0.0, 700.0))
            && s.train_profiles.iter().all(|p| train_ok.contains(p))
            && s.test_profiles.iter().all(|p| test_ok.contains(p))
            && s.dmrs_counts.iter().all(|d| [1, 2].contains(d))
            && self.link.rx_antennas == 2
            && self.link.bits_per_symbol == 6
            && (self.link.code_rate - 0.5).abs() < 1e-12
            && self.link.symbols == 14
            && self.link.subcarrier_spacing_hz == 30e3;
        if ok {
            Ok(())
        } else {
            Err(HarnessError::Config(
                "paper_faithful is set but the link or scenario ranges leave the reference table"
                    .into(),
            ))
        }
    }

    /// Identity of everything that shapes the network's parameters and inputs.
    pub fn model_hash(&self) -> [u8; 32] {
        #[derive(Serialize)]
        struct Identity<'a> {
            network: NetworkConfig,
            symbols: usize,
            subcarriers: usize,
            rx_antennas: usize,
            bits_per_symbol: usize,
            pilot_seed: u64,
            _marker: &'a str,
        }
        let id = Identity {
            network: self.network_config(),
            symbols: self.link.symbols,
            subcarriers: self.link.subcarriers,
            rx_antennas: self.link.rx_antennas,
            bits_per_symbol: self.link.bits_per_symbol,
            pilot_seed: self.link.pilot_seed,
            _marker: "nrx-model-v1",
        };
        Sha256::digest(serde_json::to_vec(&id).expect("identity serializes")).into()
    }
}
