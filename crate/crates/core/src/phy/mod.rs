//! Frequency-domain OFDM link.
//!
//! The simulation works directly on the post-FFT resource grid,
//! `y = h x + z`, assuming the cyclic prefix covers the channel delay spread.

mod grid;
mod link;
mod qam;
mod tdl;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{PlaneRole, ResourceGrid};
pub use link::{apply_channel, build_tti, data_re_count, noise_grid, ReceivedTti, Tti};
pub use qam::{Constellation, LlrMethod};
pub use tdl::{
    realize_channel, realize_tdl, ChannelRealization, FadingKind, GridSpec, PowerDelayProfile, Tap,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown channel profile {0:?}")]
    UnknownProfile(String),
    #[error("expected {expected} bits, got {got}")]
    BitCount { expected: usize, got: usize },
    #[error("malformed profile data: {0}")]
    ProfileData(String),
}

/// Offset between OFDM symbol starts, CP included.
pub const SYMBOL_DURATION_S: f64 = 38.02e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelProfile {
    #[serde(rename = "TDL-A")]
    TdlA,
    #[serde(rename = "TDL-B")]
    TdlB,
    #[serde(rename = "TDL-C")]
    TdlC,
    #[serde(rename = "TDL-D")]
    TdlD,
    #[serde(rename = "TDL-E")]
    TdlE,
    /// Single Rayleigh tap at zero delay.
    #[serde(rename = "flat")]
    Flat,
    /// `h = 1` everywhere.
    #[serde(rename = "awgn")]
    Awgn,
}

impl ChannelProfile {
    pub const TDL: [ChannelProfile; 5] =
        [Self::TdlA, Self::TdlB, Self::TdlC, Self::TdlD, Self::TdlE];

    pub fn name(self) -> &'static str {
        match self {
            Self::TdlA => "TDL-A",
            Self::TdlB => "TDL-B",
            Self::TdlC => "TDL-C",
            Self::TdlD => "TDL-D",
            Self::TdlE => "TDL-E",
            Self::Flat => "flat",
            Self::Awgn => "awgn",
        }
    }
}

impl std::str::FromStr for ChannelProfile {
    type Err = PhyError;

    fn from_str(s: &str) -> Result<Self, PhyError> {
        let norm = s.trim().to_ascii_uppercase().replace(['_', ' '], "-");
        Ok(match norm.as_str() {
            "TDL-A" | "A" => Self::TdlA,
            "TDL-B" | "B" => Self::TdlB,
            "TDL-C" | "C" => Self::TdlC,
            "TDL-D" | "D" => Self::TdlD,
            "TDL-E" | "E" => Self::TdlE,
            "FLAT" => Self::Flat,
            "AWGN" => Self::Awgn,
            _ => return Err(PhyError::UnknownProfile(s.to_string())),
        })
    }
}

impl std::fmt::Display for ChannelProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Link parameters for one TTI. Ranges used for randomized training live in the harness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub symbols: usize,
    pub subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub bits_per_symbol: usize,
    pub code_rate: f64,
    pub dmrs_symbols: Vec<usize>,
    pub ebn0_db: (f64, f64),
    pub profile: ChannelProfile,
    pub delay_spread_s: f64,
    pub doppler_hz: f64,
    pub seed: u64,
    /// Seeds the DMRS sequence; kept apart from `seed` so pilots stay fixed across TTIs.
    pub pilot_seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            tx_antennas: 1,
            rx_antennas: 2,
            symbols: 14,
            subcarriers: 256,
            subcarrier_spacing_hz: 30e3,
            bits_per_symbol: 6,
            code_rate: 0.5,
            dmrs_symbols: dmrs_positions(2),
            ebn0_db: (-4.0, 10.0),
            profile: ChannelProfile::TdlC,
            delay_spread_s: 300e-9,
            doppler_hz: 100.0,
            seed: 0,
            pilot_seed: 0x9e37_79b9,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), PhyError> {
        let fail = |m: String| Err(PhyError::Config(m));
        if self.tx_antennas != 1 {
            return fail(format!(
                "only one transmit antenna is supported, got {}",
                self.tx_antennas
            ));
        }
        if self.rx_antennas == 0 || self.symbols == 0 || self.subcarriers == 0 {
            return fail("antenna, symbol and subcarrier counts must be positive".into());
        }
        if self.bits_per_symbol == 0 || self.bits_per_symbol % 2 != 0 {
            return fail(format!(
                "modulation order must be even, got {}",
                self.bits_per_symbol
            ));
        }
        if !(self.code_rate > 0.0 && self.code_rate <= 1.0) {
            return fail(format!(
                "code rate must lie in (0, 1], got {}",
                self.code_rate
            ));
        }
        if self.dmrs_symbols.is_empty() {
            return fail("at least one DMRS symbol is required".into());
        }
        let mut seen = vec![false; self.symbols];
        for &d in &self.dmrs_symbols {
            if d >= self.symbols || seen[d] {
                return fail(format!(
                    "DMRS position {d} invalid for {} symbols",
                    self.symbols
                ));
            }
            seen[d] = true;
        }
        if self.dmrs_symbols.len() == self.symbols {
            return fail("no data symbols left after DMRS".into());
        }
        if !(self.subcarrier_spacing_hz > 0.0)
            || !(self.delay_spread_s >= 0.0)
            || !(self.doppler_hz >= 0.0)
        {
            return fail("spacing must be positive, delay spread and Doppler non-negative".into());
        }
        if !(self.ebn0_db.0 <= self.ebn0_db.1) {
            return fail(format!("Eb/N0 range {:?} is empty", self.ebn0_db));
        }
        Ok(())
    }

    pub fn data_symbols(&self) -> Vec<usize> {
        (0..self.symbols)
            .filter(|m| !self.dmrs_symbols.contains(m))
            .collect()
    }

    /// Raw (coded) bits carried by one TTI.
    pub fn coded_bits(&self) -> usize {
        data_re_count(self) * self.bits_per_symbol
    }
}

/// DMRS symbol indices within a 14-symbol slot for one or two DMRS symbols.
pub fn dmrs_positions(count: usize) -> Vec<usize> {
    match count {
        1 => vec![2],
        2 => vec![2, 11],
        n => (0..n).map(|i| 2 + i * 3).collect(),
    }
}

/// Noise spectral density for a unit-energy constellation over a unit-power channel.
pub fn ebn0_to_n0(ebn0_db: f64, bits_per_symbol: usize, code_rate: f64) -> f64 {
    1.0 / (10f64.powf(ebn0_db / 10.0) * bits_per_symbol as f64 * code_rate)
}
