use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{ChannelRealization, Constellation, LinkConfig, PhyError, PlaneRole, ResourceGrid};

/// Transmit side of one TTI.
#[derive(Clone, Debug)]
pub struct Tti {
    /// Pilots on DMRS symbols, QAM data elsewhere; one antenna.
    pub tx: ResourceGrid,
    /// Pilots only, zero on data symbols.
    pub pilots: ResourceGrid,
    /// `mask[symbol * subcarriers + subcarrier]` is true on data REs.
    pub data_mask: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct ReceivedTti {
    pub rx: ResourceGrid,
    /// True channel, kept for perfect-CSI reception.
    pub channel: ResourceGrid,
    pub noise_var: f64,
}

pub fn data_re_count(cfg: &LinkConfig) -> usize {
    (cfg.symbols - cfg.dmrs_symbols.len()) * cfg.subcarriers
}

fn qpsk_pilot(seed: u64, symbol: usize, subcarrier: usize) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let bits = crate::seed::derive(seed, symbol as u64, subcarrier as u64);
    let re = if bits & 1 == 0 { s } else { -s };
    let im = if bits & 2 == 0 { s } else { -s };
    Complex64::new(re, im)
}

/// Maps `bits` onto the data REs frequency-first and fills the DMRS symbols
/// with the seeded QPSK pilot sequence.
pub fn build_tti(bits: &[u8], cfg: &LinkConfig) -> Result<Tti, PhyError> {
    cfg.validate()?;
    let expected = cfg.coded_bits();
    if bits.len() != expected {
        return Err(PhyError::BitCount {
            expected,
            got: bits.len(),
        });
    }
    let qam = Constellation::square(cfg.bits_per_symbol)?;
    let (m, n) = (cfg.symbols, cfg.subcarriers);
    let mut tx = ResourceGrid::zeros(PlaneRole::TxData, 1, m, n);
    let mut pilots = ResourceGrid::zeros(PlaneRole::Pilot, 1, m, n);
    let mut data_mask = vec![true; m * n];
    for &d in &cfg.dmrs_symbols {
        for sc in 0..n {
            let p = qpsk_pilot(cfg.pilot_seed, d, sc);
            pilots.set(0, d, sc, p);
            tx.set(0, d, sc, p);
            data_mask[d * n + sc] = false;
        }
    }
    let mut chunks = bits.chunks_exact(cfg.bits_per_symbol);
    for s in cfg.data_symbols() {
        for x in tx.row_mut(0, s) {
            *x = qam.map_unchecked(chunks.next().expect("bit count checked"));
        }
    }
    Ok(Tti {
        tx,
        pilots,
        data_mask,
    })
}

/// Circular complex Gaussian noise of variance `n0` per element.
pub fn noise_grid<R: Rng + ?Sized>(
    antennas: usize,
    symbols: usize,
    subcarriers: usize,
    n0: f64,
    rng: &mut R,
) -> ResourceGrid {
    let mut z = ResourceGrid::zeros(PlaneRole::Noise, antennas, symbols, subcarriers);
    let sd = (n0 / 2.0).sqrt();
    for v in z.data_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v = Complex64::new(re * sd, im * sd);
    }
    z
}

/// `y = h w x + z` on every RE and receive antenna, pilots included.
pub fn apply_channel<R: Rng + ?Sized>(
    tx: &ResourceGrid,
    channel: &ChannelRealization,
    n0: f64,
    rng: &mut R,
) -> Result<ReceivedTti, PhyError> {
    let h = &channel.response;
    if tx.antennas() != 1 || tx.symbols() != h.symbols() || tx.subcarriers() != h.subcarriers() {
        return Err(PhyError::Dimension(format!(
            "tx grid {:?} does not match channel {:?}",
            tx.dims(),
            h.dims()
        )));
    }
    if !(n0 >= 0.0) || !n0.is_finite() {
        return Err(PhyError::Config(format!(
            "noise variance must be non-negative, got {n0}"
        )));
    }
    let (a, m, n) = h.dims();
    let mut rx = if n0 > 0.0 {
        noise_grid(a, m, n, n0, rng)
    } else {
        ResourceGrid::zeros(PlaneRole::Noise, a, m, n)
    };
    let w = channel.precoder;
    for ant in 0..a {
        for s in 0..m {
            let x = tx.row(0, s);
            for ((y, hv), xv) in rx.row_mut(ant, s).iter_mut().zip(h.row(ant, s)).zip(x) {
                *y += hv * w * xv;
            }
        }
    }
    rx.role = PlaneRole::Rx;
    Ok(ReceivedTti {
        rx,
        channel: h.clone(),
        noise_var: n0,
    })
}
