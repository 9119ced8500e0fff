//! Per-TTI scenario draws and the transmit/channel/noise chain.

use nrx_core::phy::{
    apply_channel, build_tti, dmrs_positions, ebn0_to_n0, realize_tdl, ChannelProfile, LinkConfig,
    ReceivedTti, Tti,
};
use nrx_core::seed;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Everything that varies between TTIs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtiDraw {
    pub ebn0_db: f64,
    pub profile: ChannelProfile,
    pub delay_spread_s: f64,
    pub doppler_hz: f64,
    pub dmrs_count: usize,
    /// Root of the channel, noise and payload streams.
    pub seed: u64,
}

// stream identifiers under a TTI seed
const CHANNEL_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const BITS_STREAM: u64 = 3;

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

impl ScenarioConfig {
    pub fn profiles(&self, split: Split) -> &[ChannelProfile] {
        match split {
            Split::Train => &self.train_profiles,
            Split::Test => &self.test_profiles,
        }
    }

    /// Independent uniform draws of every randomized parameter.
    pub fn draw(&self, split: Split, rng: &mut impl Rng) -> TtiDraw {
        let profiles = self.profiles(split);
        let ds = match split {
            Split::Train => self.train_delay_spread_ns,
            Split::Test => self.test_delay_spread_ns,
        };
        TtiDraw {
            ebn0_db: uniform(rng, self.ebn0_db),
            profile: profiles[rng.random_range(0..profiles.len())],
            delay_spread_s: uniform(rng, ds) * 1e-9,
            doppler_hz: uniform(rng, self.doppler_hz),
            dmrs_count: self.dmrs_counts[rng.random_range(0..self.dmrs_counts.len())],
            seed: rng.random(),
        }
    }
}

impl TtiDraw {
    /// The fixed scenario in `link` at the given Eb/N0.
    pub fn fixed(link: &LinkConfig, ebn0_db: f64, seed: u64) -> Self {
        TtiDraw {
            ebn0_db,
            profile: link.profile,
            delay_spread_s: link.delay_spread_s,
            doppler_hz: link.doppler_hz,
            dmrs_count: link.dmrs_symbols.len(),
            seed,
        }
    }

    /// `base` with this TTI's channel, DMRS layout and seed applied.
    pub fn link(&self, base: &LinkConfig) -> LinkConfig {
        LinkConfig {
            dmrs_symbols: if self.dmrs_count == base.dmrs_symbols.len() {
                base.dmrs_symbols.clone()
            } else {
                dmrs_positions(self.dmrs_count)
            },
            profile: self.profile,
            delay_spread_s: self.delay_spread_s,
            doppler_hz: self.doppler_hz,
            seed: seed::derive(self.seed, CHANNEL_STREAM, 0),
            ..base.clone()
        }
    }

    pub fn noise_var(&self, link: &LinkConfig) -> f64 {
        ebn0_to_n0(self.ebn0_db, link.bits_per_symbol, link.code_rate)
    }

    /// Uniform random payload filling every data RE.
    pub fn random_bits(&self, link: &LinkConfig) -> Vec<u8> {
        let mut rng = seed::rng(seed::derive(self.seed, BITS_STREAM, 0));
        (0..link.coded_bits())
            .map(|_| rng.random_range(0..2))
            .collect()
    }
}

/// One transmitted and received TTI.
#[derive(Clone, Debug)]
pub struct SimulatedTti {
    pub link: LinkConfig,
    pub draw: TtiDraw,
    pub bits: Vec<u8>,
    pub tti: Tti,
    pub received: ReceivedTti,
}

impl SimulatedTti {
    pub fn noise_var(&self) -> f64 {
        self.received.noise_var
    }

    /// Data-RE LLRs in transmission order, picked from a full-grid LLR vector
    /// laid out `[symbol][subcarrier][bit]`.
    pub fn data_llrs(&self, grid_llrs: &[f64]) -> Vec<f64> {
        let b = self.link.bits_per_symbol;
        let mut out = Vec::with_capacity(self.bits.len());
        for (re, &is_data) in self.tti.data_mask.iter().enumerate() {
            if is_data {
                out.extend_from_slice(&grid_llrs[re * b..][..b]);
            }
        }
        out
    }
}

/// Maps `bits` onto a TTI and passes it through the drawn channel and noise.
pub fn simulate(base: &LinkConfig, draw: &TtiDraw, bits: Vec<u8>) -> Result<SimulatedTti> {
    let link = draw.link(base);
    let tti = build_tti(&bits, &link)?;
    let channel = realize_tdl(
        link.profile,
        link.delay_spread_s,
        link.doppler_hz,
        (&link).into(),
        link.seed,
    )?;
    let mut noise = seed::rng(seed::derive(draw.seed, NOISE_STREAM, 0));
    let received = apply_channel(&tti.tx, &channel, draw.noise_var(&link), &mut noise)?;
    Ok(SimulatedTti {
        link,
        draw: *draw,
        bits,
        tti,
        received,
    })
}

/// TTI with a uniform random payload, as used for training.
pub fn simulate_random(base: &LinkConfig, draw: &TtiDraw) -> Result<SimulatedTti> {
    let link = draw.link(base);
    simulate(base, draw, draw.random_bits(&link))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_draw_reproduces_link() {
        let link = LinkConfig::default();
        let d = TtiDraw::fixed(&link, 10.0, 3);
        let l = d.link(&link);
        assert_eq!(l.dmrs_symbols, link.dmrs_symbols);
        assert_eq!(l.profile, link.profile);
        let a = simulate_random(&link, &d).unwrap();
        let b = simulate_random(&link, &d).unwrap();
        assert_eq!(a.received.rx, b.received.rx);
    }

    #[test]
    fn data_llrs_follow_the_mask() {
        let link = LinkConfig {
            subcarriers: 4,
            ..LinkConfig::default()
        };
        let sim = simulate_random(&link, &TtiDraw::fixed(&link, 10.0, 1)).unwrap();
        let grid: Vec<f64> = (0..14 * 4 * 6).map(|i| i as f64).collect();
        let d = sim.data_llrs(&grid);
        assert_eq!(d.len(), link.coded_bits());
        // symbols 0 and 1 are data, symbol 2 is DMRS
        assert_eq!(d[47], 47.0);
        assert_eq!(d[48], (3 * 4 * 6) as f64);
    }
}
