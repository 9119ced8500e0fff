#![allow(dead_code)]

use nrx_core::phy::Constellation;

/// Exact Gray-QAM bit error rate from per-axis decision regions.
pub fn analytic_ber(c: &Constellation, n0: f64) -> f64 {
    let levels = c.axis_levels();
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&a, &b| levels[a].partial_cmp(&levels[b]).unwrap());
    let sorted: Vec<f64> = order.iter().map(|&i| levels[i]).collect();
    let sigma = (n0 / 2.0).sqrt();
    let cdf = |x: f64| 0.5 * libm::erfc(-x / (sigma * 2f64.sqrt()));
    let m = c.bits_per_symbol() / 2;
    let axis_bit = |label: usize, j: usize| (label >> (m - 1 - j)) & 1;
    let mut errors = 0.0;
    for (ti, &tx) in order.iter().enumerate() {
        for (ri, &rx) in order.iter().enumerate() {
            let lo = if ri == 0 {
                f64::NEG_INFINITY
            } else {
                (sorted[ri - 1] + sorted[ri]) / 2.0
            };
            let hi = if ri + 1 == sorted.len() {
                f64::INFINITY
            } else {
                (sorted[ri] + sorted[ri + 1]) / 2.0
            };
            let p = cdf(hi - sorted[ti]) - cdf(lo - sorted[ti]);
            let diff = (0..m)
                .filter(|&j| axis_bit(tx, j) != axis_bit(rx, j))
                .count();
            errors += p * diff as f64;
        }
    }
    errors / (levels.len() * m) as f64
}
