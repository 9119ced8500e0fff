//! Tapped-delay-line fading channels.
//!
//! Tap tables are the normalized power-delay profiles of the 3GPP TDL models,
//! bundled under `data/tdl`. Delays scale linearly with the RMS delay spread.
//! Rayleigh taps evolve with a 16-oscillator sum-of-sinusoids (Zheng-Xiao)
//! generator; LOS taps rotate deterministically at the maximum Doppler.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ChannelProfile, LinkConfig, PhyError, PlaneRole, ResourceGrid, SYMBOL_DURATION_S};

const OSCILLATORS: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FadingKind {
    Rayleigh,
    Los,
    /// Constant unit-phase gain, used for the AWGN profile.
    Static,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    /// Normalized delay in a [`PowerDelayProfile`], seconds in a [`ChannelRealization`].
    pub delay: f64,
    /// Linear power.
    pub power: f64,
    pub kind: FadingKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerDelayProfile {
    pub taps: Vec<Tap>,
}

impl PowerDelayProfile {
    /// Parses `normalized_delay power_db fading` rows; `#` starts a comment.
    /// Powers are normalized to sum to one.
    pub fn parse(text: &str) -> Result<Self, PhyError> {
        let mut taps = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || PhyError::ProfileData(format!("line {}: {line:?}", no + 1));
            let mut it = line.split_whitespace();
            let delay: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let power_db: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let kind = match it.next() {
                Some("rayleigh") => FadingKind::Rayleigh,
                Some("los") => FadingKind::Los,
                Some("static") => FadingKind::Static,
                _ => return Err(bad()),
            };
            if it.next().is_some() || delay < 0.0 || !power_db.is_finite() {
                return Err(bad());
            }
            taps.push(Tap {
                delay,
                power: 10f64.powf(power_db / 10.0),
                kind,
            });
        }
        if taps.is_empty() {
            return Err(PhyError::ProfileData("no taps".into()));
        }
        let total: f64 = taps.iter().map(|t| t.power).sum();
        for t in &mut taps {
            t.power /= total;
        }
        Ok(PowerDelayProfile { taps })
    }

    pub fn for_profile(profile: ChannelProfile) -> Self {
        let text = match profile {
            ChannelProfile::TdlA => include_str!("../../data/tdl/tdl_a.txt"),
            ChannelProfile::TdlB => include_str!("../../data/tdl/tdl_b.txt"),
            ChannelProfile::TdlC => include_str!("../../data/tdl/tdl_c.txt"),
            ChannelProfile::TdlD => include_str!("../../data/tdl/tdl_d.txt"),
            ChannelProfile::TdlE => include_str!("../../data/tdl/tdl_e.txt"),
            ChannelProfile::Flat => "0 0 rayleigh",
            ChannelProfile::Awgn => "0 0 static",
        };
        Self::parse(text).expect("bundled profile data is well formed")
    }

    /// RMS delay spread of the (normalized) taps.
    pub fn rms_delay(&self) -> f64 {
        let mean: f64 = self.taps.iter().map(|t| t.power * t.delay).sum();
        let sq: f64 = self.taps.iter().map(|t| t.power * t.delay * t.delay).sum();
        (sq - mean * mean).max(0.0).sqrt()
    }
}

/// One channel draw for a TTI: per-antenna, per-tap, per-symbol gains and the
/// frequency response `H[antenna, symbol, subcarrier]` they imply.
#[derive(Clone, Debug)]
pub struct ChannelRealization {
    /// Delays in seconds.
    pub taps: Vec<Tap>,
    /// `gains[(antenna * taps + tap) * symbols + symbol]`.
    pub gains: Vec<Complex64>,
    pub response: ResourceGrid,
    /// Transmit precoder; a scalar 1 for a single transmit antenna.
    pub precoder: Complex64,
}

impl ChannelRealization {
    pub fn gain(&self, antenna: usize, tap: usize, symbol: usize) -> Complex64 {
        let m = self.response.symbols();
        self.gains[(antenna * self.taps.len() + tap) * m + symbol]
    }
}

/// Dimensions and numerology of the grid a channel is realized for.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub antennas: usize,
    pub symbols: usize,
    pub subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub symbol_duration_s: f64,
}

impl From<&LinkConfig> for GridSpec {
    fn from(cfg: &LinkConfig) -> Self {
        GridSpec {
            antennas: cfg.rx_antennas,
            symbols: cfg.symbols,
            subcarriers: cfg.subcarriers,
            subcarrier_spacing_hz: cfg.subcarrier_spacing_hz,
            symbol_duration_s: SYMBOL_DURATION_S,
        }
    }
}

fn sos_gains<R: Rng + ?Sized>(doppler: f64, times: &[f64], rng: &mut R, out: &mut [Complex64]) {
    let theta = rng.random_range(-PI..PI);
    let mut osc = [(0.0, 0.0, 0.0, 0.0); OSCILLATORS];
    for (n, o) in osc.iter_mut().enumerate() {
        let alpha = (2.0 * PI * (n + 1) as f64 - PI + theta) / (4 * OSCILLATORS) as f64;
        let phi = rng.random_range(-PI..PI);
        let psi = rng.random_range(-PI..PI);
        *o = (
            2.0 * PI * doppler * alpha.cos(),
            phi,
            2.0 * PI * doppler * alpha.sin(),
            psi,
        );
    }
    let scale = 1.0 / (OSCILLATORS as f64).sqrt();
    for (g, &t) in out.iter_mut().zip(times) {
        let (mut re, mut im) = (0.0, 0.0);
        for &(wc, phi, ws, psi) in &osc {
            re += (wc * t + phi).cos();
            im += (ws * t + psi).cos();
        }
        *g = Complex64::new(re * scale, im * scale);
    }
}

/// Draws a channel for `profile` with the given RMS delay spread (s) and
/// maximum Doppler (Hz). Each receive antenna fades independently.
pub fn realize_tdl(
    profile: ChannelProfile,
    delay_spread_s: f64,
    doppler_hz: f64,
    grid: GridSpec,
    seed: u64,
) -> Result<ChannelRealization, PhyError> {
    if !(delay_spread_s >= 0.0) || !(doppler_hz >= 0.0) {
        return Err(PhyError::Config(format!(
            "delay spread {delay_spread_s} and Doppler {doppler_hz} must be non-negative"
        )));
    }
    if grid.antennas == 0 || grid.symbols == 0 || grid.subcarriers == 0 {
        return Err(PhyError::Dimension("empty channel grid".into()));
    }
    let pdp = PowerDelayProfile::for_profile(profile);
    let taps: Vec<Tap> = pdp
        .taps
        .iter()
        .map(|t| Tap {
            delay: t.delay * delay_spread_s,
            ..*t
        })
        .collect();
    let (ant, m, n) = (grid.antennas, grid.symbols, grid.subcarriers);
    let times: Vec<f64> = (0..m).map(|i| i as f64 * grid.symbol_duration_s).collect();
    let mut rng = crate::seed::rng(seed);
    let mut gains = vec![Complex64::new(0.0, 0.0); ant * taps.len() * m];
    for a in 0..ant {
        for (k, tap) in taps.iter().enumerate() {
            let out = &mut gains[(a * taps.len() + k) * m..][..m];
            match tap.kind {
                FadingKind::Rayleigh => sos_gains(doppler_hz, &times, &mut rng, out),
                FadingKind::Los => {
                    for (g, &t) in out.iter_mut().zip(&times) {
                        *g = Complex64::from_polar(1.0, 2.0 * PI * doppler_hz * t);
                    }
                }
                FadingKind::Static => out.fill(Complex64::new(1.0, 0.0)),
            }
            let amp = tap.power.sqrt();
            out.iter_mut().for_each(|g| *g *= amp);
        }
    }
    // phasor[k][n] = exp(-j 2 pi n df tau_k)
    let phasors: Vec<Vec<Complex64>> = taps
        .iter()
        .map(|t| {
            (0..n)
                .map(|sc| {
                    Complex64::from_polar(
                        1.0,
                        -2.0 * PI * sc as f64 * grid.subcarrier_spacing_hz * t.delay,
                    )
                })
                .collect()
        })
        .collect();
    let mut response = ResourceGrid::zeros(PlaneRole::Channel, ant, m, n);
    for a in 0..ant {
        for s in 0..m {
            let row = response.row_mut(a, s);
            for (k, ph) in phasors.iter().enumerate() {
                let g = gains[(a * taps.len() + k) * m + s];
                for (h, p) in row.iter_mut().zip(ph) {
                    *h += g * p;
                }
            }
        }
    }
    Ok(ChannelRealization {
        taps,
        gains,
        response,
        precoder: Complex64::new(1.0, 0.0),
    })
}

/// Channel for `cfg` using its profile, delay spread, Doppler and seed.
pub fn realize_channel(cfg: &LinkConfig) -> Result<ChannelRealization, PhyError> {
    realize_tdl(
        cfg.profile,
        cfg.delay_spread_s,
        cfg.doppler_hz,
        cfg.into(),
        cfg.seed,
    )
}
