//! Classical baseline receivers: perfect CSI, LS and LMMSE channel
//! estimation, followed by MMSE combining and soft demapping.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phy::{Constellation, LlrMethod, PlaneRole, ResourceGrid, SYMBOL_DURATION_S};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RxError {
    #[error("pilot at symbol {symbol}, subcarrier {subcarrier} is zero")]
    ZeroPilot { symbol: usize, subcarrier: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReceiverKind {
    Pcsi,
    Ls,
    Lmmse,
    Neural,
}

impl ReceiverKind {
    pub fn name(self) -> &'static str {
        match self {
            ReceiverKind::Pcsi => "pcsi",
            ReceiverKind::Ls => "ls",
            ReceiverKind::Lmmse => "lmmse",
            ReceiverKind::Neural => "neural",
        }
    }
}

impl std::str::FromStr for ReceiverKind {
    type Err = RxError;

    fn from_str(s: &str) -> Result<Self, RxError> {
        match s.to_ascii_lowercase().as_str() {
            "pcsi" => Ok(ReceiverKind::Pcsi),
            "ls" => Ok(ReceiverKind::Ls),
            "lmmse" => Ok(ReceiverKind::Lmmse),
            "neural" => Ok(ReceiverKind::Neural),
            _ => Err(RxError::Argument(format!("unknown receiver {s:?}"))),
        }
    }
}

/// Channel estimate with a per-RE error variance, laid out like the rx grid.
#[derive(Clone, Debug)]
pub struct ChannelEstimate {
    pub h: ResourceGrid,
    pub error_var: Vec<f64>,
}

/// Genie estimate: the true channel with zero error.
pub fn perfect_csi(h: &ResourceGrid) -> ChannelEstimate {
    let mut h = h.clone();
    h.role = PlaneRole::Estimate;
    let n = h.data().len();
    ChannelEstimate {
        h,
        error_var: vec![0.0; n],
    }
}

fn check_inputs(rx: &ResourceGrid, pilots: &ResourceGrid, dmrs: &[usize]) -> Result<(), RxError> {
    if pilots.antennas() != 1
        || pilots.symbols() != rx.symbols()
        || pilots.subcarriers() != rx.subcarriers()
    {
        return Err(RxError::Dimension(format!(
            "pilot grid {:?} does not match rx grid {:?}",
            pilots.dims(),
            rx.dims()
        )));
    }
    if dmrs.is_empty()
        || dmrs.iter().any(|&d| d >= rx.symbols())
        || dmrs.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(RxError::Argument(format!(
            "invalid DMRS positions {dmrs:?}"
        )));
    }
    for &d in dmrs {
        if let Some(n) = pilots.row(0, d).iter().position(|p| p.norm_sqr() == 0.0) {
            return Err(RxError::ZeroPilot {
                symbol: d,
                subcarrier: n,
            });
        }
    }
    Ok(())
}

/// Real weights over DMRS symbols for linear interpolation in time;
/// constant hold with a single DMRS symbol, linear extrapolation outside.
pub fn linear_time_weights(symbol: usize, dmrs: &[usize]) -> Vec<(usize, f64)> {
    if dmrs.len() == 1 {
        return vec![(0, 1.0)];
    }
    let j = dmrs
        .iter()
        .position(|&d| d > symbol)
        .unwrap_or(dmrs.len() - 1)
        .clamp(1, dmrs.len() - 1);
    let (a, b) = (dmrs[j - 1] as f64, dmrs[j] as f64);
    let t = (symbol as f64 - a) / (b - a);
    vec![(j - 1, 1.0 - t), (j, t)]
}

/// Least-squares estimate on DMRS symbols, linearly interpolated in time.
pub fn ls_estimate(
    rx: &ResourceGrid,
    pilots: &ResourceGrid,
    dmrs: &[usize],
    n0: f64,
) -> Result<ChannelEstimate, RxError> {
    check_inputs(rx, pilots, dmrs)?;
    let (ant, m, n) = rx.dims();
    let mut ls = vec![Complex64::new(0.0, 0.0); ant * dmrs.len() * n];
    let mut ls_var = vec![0.0; dmrs.len() * n];
    for (i, &d) in dmrs.iter().enumerate() {
        let p = pilots.row(0, d);
        for (k, pk) in p.iter().enumerate() {
            ls_var[i * n + k] = n0 / pk.norm_sqr();
        }
        for a in 0..ant {
            let out = &mut ls[(a * dmrs.len() + i) * n..][..n];
            for ((o, y), pk) in out.iter_mut().zip(rx.row(a, d)).zip(p) {
                *o = y / pk;
            }
        }
    }
    let mut h = ResourceGrid::zeros(PlaneRole::Estimate, ant, m, n);
    let mut error_var = vec![0.0; ant * m * n];
    for s in 0..m {
        let w = linear_time_weights(s, dmrs);
        for a in 0..ant {
            let base = h.index(a, s, 0);
            for k in 0..n {
                let mut v = Complex64::new(0.0, 0.0);
                let mut var = 0.0;
                for &(i, wi) in &w {
                    v += ls[(a * dmrs.len() + i) * n + k] * wi;
                    var += wi * wi * ls_var[i * n + k];
                }
                h.data_mut()[base + k] = v;
                error_var[base + k] = var;
            }
        }
    }
    Ok(ChannelEstimate { h, error_var })
}

/// Correlation priors for LMMSE estimation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmmsePrior {
    /// RMS delay spread of the assumed exponential power-delay profile.
    pub delay_spread_s: f64,
    /// Maximum Doppler of the assumed Jakes spectrum.
    pub doppler_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub symbol_duration_s: f64,
}

impl Default for LmmsePrior {
    fn default() -> Self {
        LmmsePrior {
            delay_spread_s: 300e-9,
            doppler_hz: 100.0,
            subcarrier_spacing_hz: 30e3,
            symbol_duration_s: SYMBOL_DURATION_S,
        }
    }
}

/// Frequency smoother `I - s2 (R + s2 I)^-1` and its error-variance diagonal.
#[derive(Clone, Debug)]
struct FrequencyFilter {
    filter: DMatrix<Complex64>,
    error_var: Vec<f64>,
}

fn frequency_filter(n: usize, prior: &LmmsePrior, noise_var: f64) -> FrequencyFilter {
    let c = 2.0 * PI * prior.subcarrier_spacing_hz * prior.delay_spread_s;
    let r = DMatrix::from_fn(n, n, |a, b| {
        Complex64::new(1.0, c * (a as f64 - b as f64)).inv()
    });
    let mut ridge = 0.0;
    let inv = loop {
        let shift = noise_var + ridge;
        let m = &r + DMatrix::from_diagonal_element(n, n, Complex64::new(shift, 0.0));
        if let Some(chol) = m.cholesky() {
            break chol.inverse();
        }
        ridge = if ridge == 0.0 { 1e-12 } else { ridge * 10.0 };
    };
    let s2 = Complex64::new(noise_var, 0.0);
    let filter = DMatrix::identity(n, n) - inv.map(|v| v * s2);
    let error_var = (0..n)
        .map(|i| (noise_var * (1.0 - noise_var * inv[(i, i)].re)).max(0.0))
        .collect();
    FrequencyFilter { filter, error_var }
}

const FILTER_CACHE_LIMIT: usize = 16;

/// LMMSE estimator; caches frequency filters per (subcarriers, noise variance, prior).
#[derive(Clone, Debug, Default)]
pub struct LmmseEstimator {
    pub prior: LmmsePrior,
    cache: HashMap<(usize, u64, u64, u64), FrequencyFilter>,
}

impl LmmseEstimator {
    pub fn new(prior: LmmsePrior) -> Self {
        LmmseEstimator {
            prior,
            cache: HashMap::new(),
        }
    }

    /// Wiener smoothing of LS values over frequency on each DMRS symbol, then
    /// Wiener interpolation over time with Jakes correlation.
    pub fn estimate(
        &mut self,
        rx: &ResourceGrid,
        pilots: &ResourceGrid,
        dmrs: &[usize],
        n0: f64,
    ) -> Result<ChannelEstimate, RxError> {
        check_inputs(rx, pilots, dmrs)?;
        if !(n0 >= 0.0) {
            return Err(RxError::Argument(format!(
                "noise variance must be non-negative, got {n0}"
            )));
        }
        let (ant, m, n) = rx.dims();
        let nd = dmrs.len();
        // pilots have unit modulus, so the LS noise variance is n0 on every RE
        let ls = ls_estimate(rx, pilots, dmrs, n0)?;
        let prior = self.prior;
        if self.cache.len() >= FILTER_CACHE_LIMIT {
            self.cache.clear();
        }
        let ff = self
            .cache
            .entry((
                n,
                n0.to_bits(),
                prior.delay_spread_s.to_bits(),
                prior.subcarrier_spacing_hz.to_bits(),
            ))
            .or_insert_with(|| frequency_filter(n, &prior, n0));
        let mut smooth = vec![Complex64::new(0.0, 0.0); ant * nd * n];
        for a in 0..ant {
            for (i, &d) in dmrs.iter().enumerate() {
                let v = nalgebra::DVector::from_column_slice(ls.h.row(a, d));
                let out = &ff.filter * v;
                smooth[(a * nd + i) * n..][..n].copy_from_slice(out.as_slice());
            }
        }
        let rho = |dt: f64| libm::j0(2.0 * PI * prior.doppler_hz * dt * prior.symbol_duration_s);
        let mut h = ResourceGrid::zeros(PlaneRole::Estimate, ant, m, n);
        let mut error_var = vec![0.0; ant * m * n];
        let mut weights = vec![0.0; nd];
        for k in 0..n {
            let v = ff.error_var[k];
            let mut rt = DMatrix::from_fn(nd, nd, |i, j| {
                rho(dmrs[i] as f64 - dmrs[j] as f64) + if i == j { v } else { 0.0 }
            });
            let mut ridge = 1e-12;
            let chol = loop {
                if let Some(c) = rt.clone().cholesky() {
                    break c;
                }
                for i in 0..nd {
                    rt[(i, i)] += ridge;
                }
                ridge *= 10.0;
            };
            for s in 0..m {
                let r = nalgebra::DVector::from_fn(nd, |i, _| rho(s as f64 - dmrs[i] as f64));
                let w = chol.solve(&r);
                weights.copy_from_slice(w.as_slice());
                let var = (1.0 - r.dot(&w)).max(0.0);
                for a in 0..ant {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (i, wi) in weights.iter().enumerate() {
                        acc += smooth[(a * nd + i) * n + k] * *wi;
                    }
                    let idx = h.index(a, s, k);
                    h.data_mut()[idx] = acc;
                    error_var[idx] = var;
                }
            }
        }
        Ok(ChannelEstimate { h, error_var })
    }
}

pub fn lmmse_estimate(
    rx: &ResourceGrid,
    pilots: &ResourceGrid,
    dmrs: &[usize],
    prior: LmmsePrior,
    n0: f64,
) -> Result<ChannelEstimate, RxError> {
    LmmseEstimator::new(prior).estimate(rx, pilots, dmrs, n0)
}

/// Combined symbols and their post-combining noise variance, per RE.
#[derive(Clone, Debug)]
pub struct Equalized {
    pub symbols: Vec<Complex64>,
    /// `f64::INFINITY` where the estimate carries no energy.
    pub noise_var: Vec<f64>,
}

/// Smallest noise variance handed to the demapper.
const MIN_NOISE_VAR: f64 = 1e-12;

/// Largest LLR magnitude produced by [`demap`].
pub const LLR_CLIP: f64 = 500.0;

/// Unbiased MMSE combining across receive antennas: each antenna is weighted
/// by `conj(h) / (n0 + error_var)`.
pub fn equalize(rx: &ResourceGrid, est: &ChannelEstimate, n0: f64) -> Result<Equalized, RxError> {
    if !rx.same_dims(&est.h) || est.error_var.len() != rx.data().len() {
        return Err(RxError::Dimension(format!(
            "estimate {:?} does not match rx grid {:?}",
            est.h.dims(),
            rx.dims()
        )));
    }
    let (ant, m, n) = rx.dims();
    let mut symbols = vec![Complex64::new(0.0, 0.0); m * n];
    let mut noise_var = vec![f64::INFINITY; m * n];
    for re in 0..m * n {
        let (mut num, mut snr) = (Complex64::new(0.0, 0.0), 0.0);
        for a in 0..ant {
            let idx = a * m * n + re;
            let h = est.h.data()[idx];
            let var = (n0 + est.error_var[idx]).max(MIN_NOISE_VAR);
            num += h.conj() * rx.data()[idx] / var;
            snr += h.norm_sqr() / var;
        }
        if snr > 0.0 && snr.is_finite() {
            symbols[re] = num / snr;
            noise_var[re] = (1.0 / snr).max(MIN_NOISE_VAR);
        }
    }
    Ok(Equalized { symbols, noise_var })
}

/// LLRs for every RE, `bits_per_symbol` per RE; erased REs get zeros.
pub fn demap(eq: &Equalized, qam: &Constellation, method: LlrMethod) -> Vec<f64> {
    let b = qam.bits_per_symbol();
    let mut out = vec![0.0; eq.symbols.len() * b];
    for ((y, &var), llr) in eq
        .symbols
        .iter()
        .zip(&eq.noise_var)
        .zip(out.chunks_exact_mut(b))
    {
        if var.is_finite() {
            qam.llr_into(*y, var, method, llr);
            llr.iter_mut()
                .for_each(|l| *l = l.clamp(-LLR_CLIP, LLR_CLIP));
        }
    }
    out
}

pub fn equalize_and_demap(
    rx: &ResourceGrid,
    est: &ChannelEstimate,
    n0: f64,
    qam: &Constellation,
    method: LlrMethod,
) -> Result<Vec<f64>, RxError> {
    Ok(demap(&equalize(rx, est, n0)?, qam, method))
}

/// Real FLOPs of [`ls_estimate`]: a complex multiply by the conjugate pilot
/// per DMRS RE (6) and a two-tap real-weighted interpolation per other RE (6).
pub fn ls_flops(antennas: usize, symbols: usize, subcarriers: usize, dmrs: usize) -> u64 {
    let (a, m, n, d) = (
        antennas as u64,
        symbols as u64,
        subcarriers as u64,
        dmrs as u64,
    );
    let interp = if d > 1 { 6 * (m - d) } else { 0 };
    a * n * (6 * d + interp)
}

/// Real FLOPs of [`LmmseEstimator::estimate`] without filter caching: the LS
/// step, a complex `N x N` inverse (`8 N^3`), one complex matrix-vector product
/// per DMRS symbol and antenna (`8 N^2`), and `D`-tap real-weighted time
/// interpolation on every RE (`4 D`).
pub fn lmmse_flops(antennas: usize, symbols: usize, subcarriers: usize, dmrs: usize) -> u64 {
    let (a, m, n, d) = (
        antennas as u64,
        symbols as u64,
        subcarriers as u64,
        dmrs as u64,
    );
    let ls = a * n * 6 * d;
    ls + 8 * n * n * n + a * d * 8 * n * n + a * m * n * 4 * d
}
