//! Regular LDPC code with systematic encoding, belief-propagation decoding,
//! codeword segmentation of a TTI and BLER statistics.
//!
//! Matrix file format (text, `#` starts a comment line):
//!
//! ```text
//! n k seed
//! row col        one line per nonzero of H, 0-based
//! ```
//!
//! Columns are in codeword order: the first `k` are information bits and
//! the last `n - k` parity bits.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodingError {
    #[error("malformed code file: {0}")]
    Format(String),
    #[error("parity part of H is singular (rank {rank} of {rows})")]
    RankDeficient { rank: usize, rows: usize },
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid code parameters: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    SumProduct,
    #[default]
    MinSum,
}

/// Scaling applied to min-sum check messages.
pub const MIN_SUM_SCALE: f64 = 0.75;

pub const DEFAULT_MAX_ITERATIONS: usize = 50;

/// Message magnitude cap inside the decoder.
const MSG_CLIP: f64 = 60.0;

const DEFAULT_CODE: &str = include_str!("../data/ldpc_648_324.txt");

/// Bit-packed GF(2) row.
#[derive(Clone, Debug, PartialEq, Eq)]
struct BitRow(Vec<u64>);

impl BitRow {
    fn zeros(bits: usize) -> Self {
        BitRow(vec![0; bits.div_ceil(64)])
    }

    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    fn flip(&mut self, i: usize) {
        self.0[i / 64] ^= 1 << (i % 64);
    }

    fn xor(&mut self, other: &BitRow) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a ^= b);
    }

    fn or(&mut self, other: &BitRow) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a |= b);
    }

    fn dot(&self, other: &BitRow) -> u8 {
        let ones: u32 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a & b).count_ones())
            .sum();
        (ones & 1) as u8
    }
}

/// Gauss-Jordan elimination over GF(2) with pivots taken from `columns` in
/// order. Returns the pivot column of each reduced row.
fn eliminate(rows: &mut [BitRow], columns: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut pivots = Vec::new();
    for col in columns {
        let r = pivots.len();
        if r == rows.len() {
            break;
        }
        let Some(p) = (r..rows.len()).find(|&i| rows[i].get(col)) else {
            continue;
        };
        rows.swap(r, p);
        let pivot = rows[r].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i != r && row.get(col) {
                row.xor(&pivot);
            }
        }
        pivots.push(col);
    }
    pivots
}

#[derive(Clone, Debug)]
pub struct LdpcCode {
    n: usize,
    k: usize,
    seed: u64,
    /// Variable indices of each check, sorted.
    checks: Vec<Vec<usize>>,
    /// `parity[i] = <a_i, info>` over GF(2).
    encoder: Vec<BitRow>,
    // edge-indexed adjacency for the decoder
    check_start: Vec<usize>,
    edge_var: Vec<usize>,
    var_start: Vec<usize>,
    var_edges: Vec<usize>,
}

impl LdpcCode {
    /// Builds a code from parity checks; the last `n - k` columns must form
    /// an invertible matrix.
    pub fn from_checks(n: usize, checks: Vec<Vec<usize>>, seed: u64) -> Result<Self, CodingError> {
        let m = checks.len();
        if m == 0 || m >= n {
            return Err(CodingError::Config(format!("{m} checks for length {n}")));
        }
        let k = n - m;
        let mut rows = Vec::with_capacity(m);
        let mut checks = checks;
        for c in &mut checks {
            c.sort_unstable();
            c.dedup();
            if c.is_empty() || c.last().is_some_and(|&v| v >= n) {
                return Err(CodingError::Format(format!(
                    "check {c:?} out of range for n = {n}"
                )));
            }
            let mut row = BitRow::zeros(n);
            c.iter().for_each(|&v| row.flip(v));
            rows.push(row);
        }
        let pivots = eliminate(&mut rows, k..n);
        if pivots.len() < m {
            return Err(CodingError::RankDeficient {
                rank: pivots.len(),
                rows: m,
            });
        }
        // rows are now [A | I] up to row order; row i solves parity bit pivots[i]
        let mut encoder = vec![BitRow::zeros(k); m];
        for (row, &p) in rows.iter().zip(&pivots) {
            let a = &mut encoder[p - k];
            (0..k).filter(|&j| row.get(j)).for_each(|j| a.flip(j));
        }
        let mut check_start = vec![0];
        let mut edge_var = Vec::new();
        for c in &checks {
            edge_var.extend_from_slice(c);
            check_start.push(edge_var.len());
        }
        let mut var_lists = vec![Vec::new(); n];
        for (e, &v) in edge_var.iter().enumerate() {
            var_lists[v].push(e);
        }
        if let Some(v) = var_lists.iter().position(Vec::is_empty) {
            return Err(CodingError::Config(format!("bit {v} is in no check")));
        }
        let mut var_start = vec![0];
        let mut var_edges = Vec::new();
        for l in var_lists {
            var_edges.extend(l);
            var_start.push(var_edges.len());
        }
        Ok(LdpcCode {
            n,
            k,
            seed,
            checks,
            encoder,
            check_start,
            edge_var,
            var_start,
            var_edges,
        })
    }

    /// Random regular code with column weight `dv` and row weight `dc`,
    /// free of length-4 cycles. Seeds are tried from `seed` upwards until a
    /// full-rank matrix is found; the seed used is recorded.
    pub fn generate(n: usize, dv: usize, dc: usize, seed: u64) -> Result<Self, CodingError> {
        if dv == 0 || dc <= dv || (n * dv) % dc != 0 {
            return Err(CodingError::Config(format!(
                "no regular ({dv},{dc}) code of length {n}"
            )));
        }
        let m = n * dv / dc;
        for s in seed..seed + 1000 {
            let Some(checks) = regular_graph(n, m, dv, dc, s) else {
                continue;
            };
            let mut rows: Vec<BitRow> = checks
                .iter()
                .map(|c| {
                    let mut r = BitRow::zeros(n);
                    c.iter().for_each(|&v| r.flip(v));
                    r
                })
                .collect();
            let pivots = eliminate(&mut rows, 0..n);
            if pivots.len() < m {
                continue;
            }
            // move pivot columns to the end so the parity part is invertible
            let mut order: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
            order.extend(&pivots);
            let mut position = vec![0; n];
            order
                .iter()
                .enumerate()
                .for_each(|(new, &old)| position[old] = new);
            let checks = checks
                .iter()
                .map(|c| c.iter().map(|&v| position[v]).collect())
                .collect();
            return LdpcCode::from_checks(n, checks, s);
        }
        Err(CodingError::Config(format!(
            "no full-rank ({dv},{dc}) code found from seed {seed}"
        )))
    }

    /// The bundled rate-1/2, n = 648 regular (3,6) code.
    pub fn default_code() -> Self {
        LdpcCode::parse(DEFAULT_CODE).expect("bundled LDPC code is valid")
    }

    pub fn parse(text: &str) -> Result<Self, CodingError> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let numbers = |(i, l): (usize, &str)| -> Result<Vec<u64>, CodingError> {
            l.split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| CodingError::Format(format!("line {}: {l:?}", i + 1)))
                })
                .collect()
        };
        let header = numbers(
            lines
                .next()
                .ok_or_else(|| CodingError::Format("empty file".into()))?,
        )?;
        let [n, k, seed] = header[..] else {
            return Err(CodingError::Format(format!(
                "header needs n k seed, got {header:?}"
            )));
        };
        let (n, k) = (n as usize, k as usize);
        if k >= n {
            return Err(CodingError::Format(format!(
                "k = {k} must be below n = {n}"
            )));
        }
        let mut checks = vec![Vec::new(); n - k];
        for line in lines {
            let (i, l) = line;
            let rc = numbers(line)?;
            match rc[..] {
                [r, c] if (r as usize) < n - k && (c as usize) < n => {
                    checks[r as usize].push(c as usize)
                }
                _ => {
                    return Err(CodingError::Format(format!(
                        "line {}: bad entry {l:?}",
                        i + 1
                    )))
                }
            }
        }
        let code = LdpcCode::from_checks(n, checks, seed)?;
        if code.k != k {
            return Err(CodingError::Format(format!(
                "header k = {k}, matrix gives {}",
                code.k
            )));
        }
        Ok(code)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# LDPC parity-check matrix\n# header: n k seed; then one \"row col\" line per nonzero (0-based)\n{} {} {}\n",
            self.n, self.k, self.seed
        );
        for (r, c) in self.checks.iter().enumerate() {
            for v in c {
                writeln!(s, "{r} {v}").unwrap();
            }
        }
        s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    pub fn checks(&self) -> &[Vec<usize>] {
        &self.checks
    }

    /// True when every parity check is satisfied.
    pub fn is_codeword(&self, bits: &[u8]) -> bool {
        bits.len() == self.n
            && self
                .checks
                .iter()
                .all(|c| c.iter().fold(0, |acc, &v| acc ^ bits[v]) & 1 == 0)
    }

    /// Systematic codeword `[info | parity]`.
    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>, CodingError> {
        if info.len() != self.k {
            return Err(CodingError::Length {
                expected: self.k,
                got: info.len(),
            });
        }
        let mut packed = BitRow::zeros(self.k);
        info.iter()
            .enumerate()
            .filter(|(_, &b)| b & 1 == 1)
            .for_each(|(i, _)| packed.flip(i));
        let mut out = Vec::with_capacity(self.n);
        out.extend(info.iter().map(|b| b & 1));
        out.extend(self.encoder.iter().map(|a| a.dot(&packed)));
        Ok(out)
    }

    /// Flooding belief propagation. Input LLRs are `ln P(1)/P(0)`, i.e.
    /// positive favours bit 1, matching the demapper.
    pub fn decode(
        &self,
        llrs: &[f64],
        kind: DecoderKind,
        max_iterations: usize,
    ) -> Result<Decoded, CodingError> {
        if llrs.len() != self.n {
            return Err(CodingError::Length {
                expected: self.n,
                got: llrs.len(),
            });
        }
        // internally L = ln P(0)/P(1)
        let channel: Vec<f64> = llrs
            .iter()
            .map(|&l| (-l).clamp(-MSG_CLIP, MSG_CLIP))
            .collect();
        let edges = self.edge_var.len();
        let mut c2v = vec![0.0; edges];
        let mut v2c = vec![0.0; edges];
        let mut total = channel.clone();
        let mut bits = vec![0u8; self.n];
        let mut scratch = Vec::new();
        for it in 1..=max_iterations.max(1) {
            for (e, &v) in self.edge_var.iter().enumerate() {
                v2c[e] = total[v] - c2v[e];
            }
            for c in 0..self.checks.len() {
                let range = self.check_start[c]..self.check_start[c + 1];
                match kind {
                    DecoderKind::MinSum => min_sum_check(&v2c[range.clone()], &mut c2v[range]),
                    DecoderKind::SumProduct => {
                        sum_product_check(&v2c[range.clone()], &mut c2v[range], &mut scratch)
                    }
                }
            }
            let mut erased = false;
            for v in 0..self.n {
                let s: f64 = self.var_edges[self.var_start[v]..self.var_start[v + 1]]
                    .iter()
                    .map(|&e| c2v[e])
                    .sum();
                total[v] = channel[v] + s;
                bits[v] = u8::from(total[v] < 0.0);
                erased |= total[v] == 0.0;
            }
            // a bit with no information either way is not a decision
            if !erased && self.is_codeword(&bits) {
                return Ok(Decoded::new(bits, self.k, true, it));
            }
        }
        Ok(Decoded::new(bits, self.k, false, max_iterations.max(1)))
    }
}

fn min_sum_check(input: &[f64], out: &mut [f64]) {
    let (mut min1, mut min2, mut at, mut negative) = (f64::INFINITY, f64::INFINITY, 0, false);
    for (i, &x) in input.iter().enumerate() {
        let a = x.abs();
        negative ^= x < 0.0;
        if a < min1 {
            (min2, min1, at) = (min1, a, i);
        } else if a < min2 {
            min2 = a;
        }
    }
    for (i, (o, &x)) in out.iter_mut().zip(input).enumerate() {
        let mag = MIN_SUM_SCALE * if i == at { min2 } else { min1 };
        let neg = negative ^ (x < 0.0);
        *o = if neg { -mag } else { mag };
    }
}

fn sum_product_check(input: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
    let d = input.len();
    scratch.clear();
    scratch.extend(input.iter().map(|&x| (x / 2.0).tanh()));
    // prefix products stored in `out`, suffix product carried along
    let mut acc = 1.0;
    for (o, t) in out.iter_mut().zip(scratch.iter()) {
        *o = acc;
        acc *= t;
    }
    let mut suffix = 1.0;
    for i in (0..d).rev() {
        let p = (out[i] * suffix).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
        out[i] = (2.0 * p.atanh()).clamp(-MSG_CLIP, MSG_CLIP);
        suffix *= scratch[i];
    }
}

/// Random regular bipartite graph built column by column: each bit joins
/// the least-filled checks that do not close a length-4 cycle.
fn regular_graph(n: usize, m: usize, dv: usize, dc: usize, seed: u64) -> Option<Vec<Vec<usize>>> {
    let mut rng = crate::seed::rng(seed);
    let mut checks: Vec<Vec<usize>> = vec![Vec::with_capacity(dc); m];
    // rows sharing a column with each row
    let mut neighbours = vec![BitRow::zeros(m); m];
    for v in 0..n {
        let mut chosen: Vec<usize> = Vec::with_capacity(dv);
        let mut blocked = BitRow::zeros(m);
        for _ in 0..dv {
            let usable = |r: usize, strict: bool| {
                checks[r].len() < dc && !chosen.contains(&r) && (!strict || !blocked.get(r))
            };
            let pick = |strict: bool, rng: &mut rand_chacha::ChaCha8Rng| {
                let candidates: Vec<usize> = (0..m).filter(|&r| usable(r, strict)).collect();
                let fewest = candidates.iter().map(|&r| checks[r].len()).min()?;
                let best: Vec<usize> = candidates
                    .into_iter()
                    .filter(|&r| checks[r].len() == fewest)
                    .collect();
                Some(best[rng.random_range(0..best.len())])
            };
            let r = pick(true, &mut rng).or_else(|| pick(false, &mut rng))?;
            blocked.or(&neighbours[r]);
            chosen.push(r);
        }
        for &a in &chosen {
            for &b in &chosen {
                if a != b && !neighbours[a].get(b) {
                    neighbours[a].flip(b);
                }
            }
            checks[a].push(v);
        }
    }
    Some(checks)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Hard decisions on all `n` bits.
    pub codeword: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
    k: usize,
}

impl Decoded {
    fn new(codeword: Vec<u8>, k: usize, converged: bool, iterations: usize) -> Self {
        Decoded {
            codeword,
            converged,
            iterations,
            k,
        }
    }

    pub fn info(&self) -> &[u8] {
        &self.codeword[..self.k]
    }
}

/// Block and bit error counts with a Wilson score interval.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub blocks: u64,
    pub block_errors: u64,
    pub bits: u64,
    pub bit_errors: u64,
}

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

impl ErrorStats {
    /// Records one block; a block is in error if any info bit differs.
    pub fn record(&mut self, decoded: &[u8], truth: &[u8]) {
        let errors = decoded.iter().zip(truth).filter(|(a, b)| a != b).count() as u64;
        self.blocks += 1;
        self.block_errors += u64::from(errors > 0);
        self.bits += truth.len() as u64;
        self.bit_errors += errors;
    }

    pub fn merge(&mut self, other: &ErrorStats) {
        self.blocks += other.blocks;
        self.block_errors += other.block_errors;
        self.bits += other.bits;
        self.bit_errors += other.bit_errors;
    }

    pub fn bler(&self) -> f64 {
        ratio(self.block_errors, self.blocks)
    }

    pub fn ber(&self) -> f64 {
        ratio(self.bit_errors, self.bits)
    }

    /// 95% Wilson interval on the BLER.
    pub fn bler_interval(&self) -> (f64, f64) {
        wilson_interval(self.block_errors, self.blocks, Z95)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let successes = successes.min(trials);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if successes == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

/// Fraction of blocks with any error, with its 95% interval.
pub fn bler(decoded: &[Vec<u8>], truth: &[Vec<u8>]) -> Result<(f64, (f64, f64)), CodingError> {
    if decoded.is_empty() || decoded.len() != truth.len() {
        return Err(CodingError::Length {
            expected: truth.len().max(1),
            got: decoded.len(),
        });
    }
    let mut s = ErrorStats::default();
    decoded.iter().zip(truth).for_each(|(d, t)| s.record(d, t));
    Ok((s.bler(), s.bler_interval()))
}

/// Consecutive codewords filling a TTI's coded-bit capacity; the tail that
/// does not fit a whole codeword carries known pad bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segmentation {
    pub capacity: usize,
    pub n: usize,
    pub codewords: usize,
}

impl Segmentation {
    pub fn new(capacity: usize, n: usize) -> Result<Self, CodingError> {
        if n == 0 || capacity < n {
            return Err(CodingError::Config(format!(
                "capacity {capacity} cannot hold a length-{n} codeword"
            )));
        }
        Ok(Segmentation {
            capacity,
            n,
            codewords: capacity / n,
        })
    }

    pub fn pad_bits(&self) -> usize {
        self.capacity - self.codewords * self.n
    }

    /// Concatenates the codewords and appends `pad`.
    pub fn assemble(&self, codewords: &[Vec<u8>], pad: &[u8]) -> Result<Vec<u8>, CodingError> {
        if codewords.len() != self.codewords || pad.len() != self.pad_bits() {
            return Err(CodingError::Length {
                expected: self.codewords * self.n + self.pad_bits(),
                got: codewords.iter().map(Vec::len).sum::<usize>() + pad.len(),
            });
        }
        let mut out = Vec::with_capacity(self.capacity);
        for c in codewords {
            if c.len() != self.n {
                return Err(CodingError::Length {
                    expected: self.n,
                    got: c.len(),
                });
            }
            out.extend_from_slice(c);
        }
        out.extend_from_slice(pad);
        Ok(out)
    }

    /// Per-codeword slices of a TTI's data LLRs; pad LLRs are dropped.
    pub fn split<'a, T>(
        &self,
        values: &'a [T],
    ) -> Result<impl Iterator<Item = &'a [T]>, CodingError> {
        if values.len() != self.capacity {
            return Err(CodingError::Length {
                expected: self.capacity,
                got: values.len(),
            });
        }
        Ok(values[..self.codewords * self.n].chunks_exact(self.n))
    }
}

/// Known pad bits for a TTI, drawn from `seed`.
pub fn pad_bits(count: usize, seed: u64) -> Vec<u8> {
    let mut rng = crate::seed::rng(seed);
    (0..count).map(|_| rng.random_range(0..2)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elimination_finds_rank() {
        let mut rows = vec![BitRow::zeros(3), BitRow::zeros(3), BitRow::zeros(3)];
        rows[0].flip(0);
        rows[0].flip(1);
        rows[1].flip(1);
        rows[1].flip(2);
        rows[2].flip(0);
        rows[2].flip(2);
        assert_eq!(eliminate(&mut rows, 0..3).len(), 2);
    }

    #[test]
    fn min_sum_excludes_own_message() {
        let mut out = [0.0; 3];
        min_sum_check(&[1.0, -2.0, 3.0], &mut out);
        assert_eq!(out, [-1.5, 0.75, -0.75]);
    }

    #[test]
    fn sum_product_of_two_is_pass_through() {
        let mut out = [0.0; 2];
        sum_product_check(&[1.5, -0.7], &mut out, &mut Vec::new());
        assert!((out[0] + 0.7).abs() < 1e-12 && (out[1] - 1.5).abs() < 1e-12);
    }
}
