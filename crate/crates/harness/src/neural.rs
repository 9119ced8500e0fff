//! Neural receiver glue: network inputs, bit targets and LLR output.

use nrx_core::nn::{assemble_input, stack_batch, InputVariant, Network};
use nrx_core::receivers::ls_estimate;
use nrx_core::tensor::Tensor;

use crate::scenario::SimulatedTti;
use crate::Result;

/// `[1, symbols, subcarriers, channels]` input tensor for one TTI.
pub fn network_input(variant: InputVariant, sim: &SimulatedTti) -> Result<Tensor<f32>> {
    let rx = &sim.received.rx;
    Ok(match variant {
        InputVariant::Y => assemble_input(variant, rx, None, None)?,
        InputVariant::Yhp => {
            let est = ls_estimate(rx, &sim.tti.pilots, &sim.link.dmrs_symbols, sim.noise_var())?;
            assemble_input(variant, rx, Some(&est.h), Some(&sim.tti.pilots))?
        }
    })
}

/// Per-output bit targets and the data-RE mask, laid out `[symbol][subcarrier][bit]`.
pub fn targets(sim: &SimulatedTti) -> (Vec<f32>, Vec<bool>) {
    let b = sim.link.bits_per_symbol;
    let mut t = vec![0.0; sim.tti.data_mask.len() * b];
    let mut mask = vec![false; t.len()];
    let mut bits = sim.bits.chunks_exact(b);
    for (re, &is_data) in sim.tti.data_mask.iter().enumerate() {
        if is_data {
            let chunk = bits.next().expect("bit count matches data REs");
            for (j, &bit) in chunk.iter().enumerate() {
                t[re * b + j] = f32::from(bit);
                mask[re * b + j] = true;
            }
        }
    }
    (t, mask)
}

/// Batched input tensor and flattened targets/mask for several TTIs.
pub fn batch(
    variant: InputVariant,
    sims: &[SimulatedTti],
) -> Result<(Tensor<f32>, Vec<f32>, Vec<bool>)> {
    let inputs = sims
        .iter()
        .map(|s| network_input(variant, s))
        .collect::<Result<Vec<_>>>()?;
    let mut t = Vec::new();
    let mut m = Vec::new();
    for s in sims {
        let (a, b) = targets(s);
        t.extend(a);
        m.extend(b);
    }
    Ok((stack_batch(&inputs)?, t, m))
}

#[derive(Clone, Debug)]
pub struct NeuralRx {
    pub net: Network<f32>,
}

impl NeuralRx {
    pub fn new(net: Network<f32>) -> Self {
        NeuralRx { net }
    }

    /// Full-grid LLRs (`ln P(1)/P(0)`), one vector per TTI.
    pub fn llrs(&self, sims: &[SimulatedTti]) -> Result<Vec<Vec<f64>>> {
        if sims.is_empty() {
            return Ok(Vec::new());
        }
        let (x, _, _) = batch(self.net.config().input_variant, sims)?;
        let (logits, _) = self.net.predict(&x)?;
        let per = logits.len() / sims.len();
        Ok(logits
            .data()
            .chunks_exact(per)
            .map(|c| c.iter().map(|&v| f64::from(v)).collect())
            .collect())
    }
}
