//! Gray-labelled square QAM with exact and max-log soft demapping.
//!
//! Bits alternate between axes: even bit positions select the in-phase
//! amplitude, odd positions the quadrature amplitude. On each axis the
//! amplitude is `s0 (2^(m-1) - s1 (2^(m-2) - ... s_(m-1)))` with `s = 1 - 2b`,
//! the 3GPP construction, scaled to unit average energy.
//!
//! LLRs follow the convention `LLR = ln P(b=1|y) / P(b=0|y)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::PhyError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlrMethod {
    Exact,
    MaxLog,
}

#[derive(Clone, Debug)]
pub struct Constellation {
    bits: usize,
    /// Amplitude per axis label; label bit 0 is the first (sign) bit of that axis.
    levels: Vec<f64>,
    /// Bit `j` of each axis label, for every label.
    axis_bits: Vec<Vec<u8>>,
}

impl Constellation {
    /// Square QAM with `bits` bits per symbol (even, at least 2).
    pub fn square(bits: usize) -> Result<Self, PhyError> {
        if bits < 2 || bits % 2 != 0 || bits > 12 {
            return Err(PhyError::Config(format!(
                "square QAM needs an even bit count in 2..=12, got {bits}"
            )));
        }
        let m = bits / 2;
        let count = 1usize << m;
        let norm = (2.0 * ((count * count) as f64 - 1.0) / 3.0).sqrt();
        let mut levels = Vec::with_capacity(count);
        let mut axis_bits = Vec::with_capacity(count);
        for label in 0..count {
            let b: Vec<u8> = (0..m).map(|j| ((label >> (m - 1 - j)) & 1) as u8).collect();
            let mut amp = 0.0;
            for j in (0..m).rev() {
                let s = 1.0 - 2.0 * f64::from(b[j]);
                amp = s * ((1u64 << (m - 1 - j)) as f64 - amp);
            }
            levels.push(amp / norm);
            axis_bits.push(b);
        }
        Ok(Constellation {
            bits,
            levels,
            axis_bits,
        })
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits
    }

    pub fn size(&self) -> usize {
        1 << self.bits
    }

    pub fn axis_levels(&self) -> &[f64] {
        &self.levels
    }

    fn axis_label(bits: &[u8], axis: usize) -> usize {
        bits.iter()
            .skip(axis)
            .step_by(2)
            .fold(0, |acc, &b| (acc << 1) | usize::from(b & 1))
    }

    pub fn map(&self, bits: &[u8]) -> Result<Complex64, PhyError> {
        if bits.len() != self.bits {
            return Err(PhyError::Config(format!(
                "{} bits per symbol expected, got {}",
                self.bits,
                bits.len()
            )));
        }
        Ok(self.map_unchecked(bits))
    }

    #[inline]
    pub(crate) fn map_unchecked(&self, bits: &[u8]) -> Complex64 {
        Complex64::new(
            self.levels[Self::axis_label(bits, 0)],
            self.levels[Self::axis_label(bits, 1)],
        )
    }

    /// Point for the label whose bits, read MSB first, form `index`.
    pub fn point(&self, index: usize) -> Complex64 {
        let bits: Vec<u8> = (0..self.bits)
            .map(|j| ((index >> (self.bits - 1 - j)) & 1) as u8)
            .collect();
        self.map_unchecked(&bits)
    }

    pub fn map_all(&self, bits: &[u8]) -> Result<Vec<Complex64>, PhyError> {
        if bits.len() % self.bits != 0 {
            return Err(PhyError::Config(format!(
                "{} bits is not a multiple of {}",
                bits.len(),
                self.bits
            )));
        }
        Ok(bits
            .chunks_exact(self.bits)
            .map(|c| self.map_unchecked(c))
            .collect())
    }

    fn nearest_level(&self, v: f64) -> usize {
        let mut best = 0;
        for (i, &l) in self.levels.iter().enumerate() {
            if (v - l).abs() < (v - self.levels[best]).abs() {
                best = i;
            }
        }
        best
    }

    /// Minimum-distance hard decision.
    pub fn hard_demap(&self, y: Complex64, out: &mut [u8]) {
        let m = self.bits / 2;
        let i = &self.axis_bits[self.nearest_level(y.re)];
        let q = &self.axis_bits[self.nearest_level(y.im)];
        for j in 0..m {
            out[2 * j] = i[j];
            out[2 * j + 1] = q[j];
        }
    }

    /// Bit LLRs of `y` observed in complex noise of variance `noise_var`.
    pub fn llr(
        &self,
        y: Complex64,
        noise_var: f64,
        method: LlrMethod,
    ) -> Result<Vec<f64>, PhyError> {
        if noise_var.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(PhyError::Config(format!(
                "noise variance must be positive, got {noise_var}"
            )));
        }
        let mut out = vec![0.0; self.bits];
        self.llr_into(y, noise_var, method, &mut out);
        Ok(out)
    }

    /// In-place variant of [`llr`](Self::llr); `noise_var` must be positive.
    pub fn llr_into(&self, y: Complex64, noise_var: f64, method: LlrMethod, out: &mut [f64]) {
        let m = self.bits / 2;
        let mut metric = [0.0f64; 64];
        for (axis, v) in [y.re, y.im].into_iter().enumerate() {
            for (i, &l) in self.levels.iter().enumerate() {
                metric[i] = -(v - l) * (v - l) / noise_var;
            }
            let metric = &metric[..self.levels.len()];
            for j in 0..m {
                let (mut one, mut zero) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for (i, &d) in metric.iter().enumerate() {
                    let slot = if self.axis_bits[i][j] == 1 {
                        &mut one
                    } else {
                        &mut zero
                    };
                    *slot = match method {
                        LlrMethod::MaxLog => slot.max(d),
                        LlrMethod::Exact => log_add(*slot, d),
                    };
                }
                out[2 * j + axis] = one - zero;
            }
        }
    }
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}
