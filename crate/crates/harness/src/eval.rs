//! Paired BLER/BER sweeps: every receiver decodes the same received grids.

use std::path::Path;

use nrx_core::coding::{pad_bits, DecoderKind, ErrorStats, LdpcCode, Segmentation};
use nrx_core::phy::{Constellation, LinkConfig, LlrMethod};
use nrx_core::receivers::{
    equalize_and_demap, ls_estimate, perfect_csi, ChannelEstimate, LmmseEstimator, LmmsePrior,
    ReceiverKind,
};
use nrx_core::seed;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::neural::NeuralRx;
use crate::scenario::{simulate, SimulatedTti, Split, TtiDraw};
use crate::{HarnessError, Result};

const TTI_STREAM: u64 = 0x6576_616c;
const INFO_STREAM: u64 = 4;
const PAD_STREAM: u64 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub ebn0_db: f64,
    pub receiver: ReceiverKind,
    pub ttis: usize,
    /// Decoded information-bit statistics.
    pub coded: ErrorStats,
    /// Hard decisions on the coded bits before decoding.
    pub uncoded_bits: u64,
    pub uncoded_bit_errors: u64,
    /// SHA-256 over every received grid of the point, in TTI order.
    pub rx_digest: String,
}

impl PointResult {
    pub fn bler(&self) -> f64 {
        self.coded.bler()
    }

    pub fn interval(&self) -> (f64, f64) {
        self.coded.bler_interval()
    }

    pub fn uncoded_ber(&self) -> f64 {
        self.uncoded_bit_errors as f64 / self.uncoded_bits.max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Sorted by Eb/N0, then by the configured receiver order.
    pub points: Vec<PointResult>,
    pub code_seed: u64,
    pub eval_seed: u64,
    pub config: String,
}

pub const CSV_HEADER: &str = "ebn0_db,receiver,bler,bler_lo,bler_hi,ber,ttis";

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for p in &self.points {
            let (lo, hi) = p.interval();
            s.push_str(&format!(
                "{},{},{:.6e},{:.6e},{:.6e},{:.6e},{}\n",
                p.ebn0_db,
                p.receiver.name(),
                p.bler(),
                lo,
                hi,
                p.coded.ber(),
                p.ttis
            ));
        }
        s
    }

    pub fn rows(&self) -> Vec<crate::plot::CsvRow> {
        self.points
            .iter()
            .map(|p| {
                let (bler_lo, bler_hi) = p.interval();
                crate::plot::CsvRow {
                    ebn0_db: p.ebn0_db,
                    receiver: p.receiver,
                    bler: p.bler(),
                    bler_lo,
                    bler_hi,
                    ber: p.coded.ber(),
                    ttis: p.ttis,
                }
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn curve(&self, receiver: ReceiverKind) -> Vec<&PointResult> {
        self.points
            .iter()
            .filter(|p| p.receiver == receiver)
            .collect()
    }

    pub fn point(&self, ebn0_db: f64, receiver: ReceiverKind) -> Option<&PointResult> {
        self.points
            .iter()
            .find(|p| p.ebn0_db == ebn0_db && p.receiver == receiver)
    }
}

/// Coded TTI: codeword info bits, the assembled coded bits and pads.
pub struct CodedTti {
    pub sim: SimulatedTti,
    pub info: Vec<Vec<u8>>,
}

/// Encodes fresh information bits for `draw` and sends them.
pub fn coded_tti(base: &LinkConfig, code: &LdpcCode, draw: &TtiDraw) -> Result<CodedTti> {
    let link = draw.link(base);
    let seg = Segmentation::new(link.coded_bits(), code.n())?;
    let mut rng = seed::rng(seed::derive(draw.seed, INFO_STREAM, 0));
    let info: Vec<Vec<u8>> = (0..seg.codewords)
        .map(|_| (0..code.k()).map(|_| rng.random_range(0..2)).collect())
        .collect();
    let codewords = info
        .iter()
        .map(|i| code.encode(i))
        .collect::<Result<Vec<_>, _>>()?;
    let pad = pad_bits(seg.pad_bits(), seed::derive(draw.seed, PAD_STREAM, 0));
    let bits = seg.assemble(&codewords, &pad)?;
    Ok(CodedTti {
        sim: simulate(base, draw, bits)?,
        info,
    })
}

/// LMMSE prior matching the nominal channel of a TTI.
pub fn lmmse_prior(sim: &SimulatedTti) -> LmmsePrior {
    LmmsePrior {
        delay_spread_s: sim.link.delay_spread_s,
        doppler_hz: sim.link.doppler_hz,
        subcarrier_spacing_hz: sim.link.subcarrier_spacing_hz,
        ..LmmsePrior::default()
    }
}

/// Full-grid LLRs of a classical receiver.
pub fn baseline_llrs(
    kind: ReceiverKind,
    sim: &SimulatedTti,
    lmmse: &mut LmmseEstimator,
    method: LlrMethod,
) -> Result<Vec<f64>> {
    let rx = &sim.received.rx;
    let n0 = sim.noise_var();
    let dmrs = &sim.link.dmrs_symbols;
    let est: ChannelEstimate = match kind {
        ReceiverKind::Pcsi => perfect_csi(&sim.received.channel),
        ReceiverKind::Ls => ls_estimate(rx, &sim.tti.pilots, dmrs, n0)?,
        ReceiverKind::Lmmse => {
            lmmse.prior = lmmse_prior(sim);
            lmmse.estimate(rx, &sim.tti.pilots, dmrs, n0)?
        }
        ReceiverKind::Neural => unreachable!("neural LLRs come from the network"),
    };
    let qam = Constellation::square(sim.link.bits_per_symbol)?;
    Ok(equalize_and_demap(rx, &est, n0, &qam, method)?)
}

fn grid_digest(hasher: &mut Sha256, sim: &SimulatedTti) {
    for v in sim.received.rx.data() {
        hasher.update(v.re.to_le_bytes());
        hasher.update(v.im.to_le_bytes());
    }
}

struct TtiOutcome {
    coded: Vec<ErrorStats>,
    uncoded: Vec<(u64, u64)>,
}

fn decode_tti(
    code: &LdpcCode,
    tti: &CodedTti,
    grid_llrs: &[f64],
    decoder: DecoderKind,
    max_iterations: usize,
) -> Result<(ErrorStats, (u64, u64))> {
    let sim = &tti.sim;
    let llrs = sim.data_llrs(grid_llrs);
    let wrong = llrs
        .iter()
        .zip(&sim.bits)
        .filter(|(l, b)| (**l > 0.0) != (**b == 1))
        .count() as u64;
    let seg = Segmentation::new(sim.link.coded_bits(), code.n())?;
    let mut stats = ErrorStats::default();
    // pad positions are known and not scored
    let scored = (seg.codewords * seg.n) as u64;
    let pad_wrong = llrs[seg.codewords * seg.n..]
        .iter()
        .zip(&sim.bits[seg.codewords * seg.n..])
        .filter(|(l, b)| (**l > 0.0) != (**b == 1))
        .count() as u64;
    for (cw, info) in seg.split(&llrs)?.zip(&tti.info) {
        let d = code.decode(cw, decoder, max_iterations)?;
        stats.record(d.info(), info);
    }
    Ok((stats, (scored, wrong - pad_wrong)))
}

/// Draw of TTI `index` at sweep point `point`.
pub fn eval_draw(cfg: &ExperimentConfig, point: usize, index: usize) -> TtiDraw {
    let ebn0 = cfg.eval.ebn0_db[point];
    let s = seed::derive(
        seed::derive(cfg.eval.seed, TTI_STREAM, point as u64),
        index as u64,
        0,
    );
    if cfg.eval.randomize {
        let mut d = cfg.scenario.draw(Split::Test, &mut seed::rng(s));
        d.ebn0_db = ebn0;
        d
    } else {
        TtiDraw::fixed(&cfg.link, ebn0, s)
    }
}

/// Runs the configured sweep. Neural receivers need `neural`.
pub fn evaluate(cfg: &ExperimentConfig, neural: Option<&NeuralRx>) -> Result<SweepResult> {
    let code = LdpcCode::default_code();
    if (code.rate() - cfg.link.code_rate).abs() > 1e-6 {
        return Err(HarnessError::Config(format!(
            "link code rate {} does not match the bundled code rate {}",
            cfg.link.code_rate,
            code.rate()
        )));
    }
    let receivers = &cfg.eval.receivers;
    if receivers.contains(&ReceiverKind::Neural) && neural.is_none() {
        return Err(HarnessError::Config(
            "a neural receiver needs a checkpoint (eval.checkpoint)".into(),
        ));
    }
    let e = &cfg.eval;
    let mut order: Vec<usize> = (0..e.ebn0_db.len()).collect();
    order.sort_by(|&a, &b| e.ebn0_db[a].total_cmp(&e.ebn0_db[b]));
    let mut points = Vec::new();
    for pi in order {
        let outcomes: Vec<(TtiOutcome, SimulatedTti)> = (0..e.ttis)
            .into_par_iter()
            .map_init(
                || LmmseEstimator::new(LmmsePrior::default()),
                |lmmse, i| -> Result<(TtiOutcome, SimulatedTti)> {
                    let tti = coded_tti(&cfg.link, &code, &eval_draw(cfg, pi, i))?;
                    let mut out = TtiOutcome {
                        coded: Vec::new(),
                        uncoded: Vec::new(),
                    };
                    for &r in receivers {
                        let llrs = match r {
                            ReceiverKind::Neural => {
                                let n = neural.expect("checked above");
                                n.llrs(std::slice::from_ref(&tti.sim))?.remove(0)
                            }
                            _ => baseline_llrs(r, &tti.sim, lmmse, e.llr_method)?,
                        };
                        let (c, u) = decode_tti(&code, &tti, &llrs, e.decoder, e.max_iterations)?;
                        out.coded.push(c);
                        out.uncoded.push(u);
                    }
                    Ok((out, tti.sim))
                },
            )
            .collect::<Result<_>>()?;
        let mut hasher = Sha256::new();
        outcomes
            .iter()
            .for_each(|(_, s)| grid_digest(&mut hasher, s));
        let digest = hex::encode(hasher.finalize());
        for (ri, &r) in receivers.iter().enumerate() {
            let mut coded = ErrorStats::default();
            let (mut bits, mut wrong) = (0, 0);
            for (o, _) in &outcomes {
                coded.merge(&o.coded[ri]);
                bits += o.uncoded[ri].0;
                wrong += o.uncoded[ri].1;
            }
            points.push(PointResult {
                ebn0_db: e.ebn0_db[pi],
                receiver: r,
                ttis: e.ttis,
                coded,
                uncoded_bits: bits,
                uncoded_bit_errors: wrong,
                rx_digest: digest.clone(),
            });
        }
    }
    Ok(SweepResult {
        points,
        code_seed: code.seed(),
        eval_seed: e.seed,
        config: cfg.to_toml(),
    })
}
