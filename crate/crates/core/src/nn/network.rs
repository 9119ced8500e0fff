use rand::Rng;

use super::{Block, NetworkConfig, NnError, ParamId, ParamSet};
use crate::tensor::{Activation, Real, Tape, Tensor, Var};

#[derive(Clone, Debug)]
struct ConvIds {
    weight: ParamId,
    bias: ParamId,
}

/// Complete receiver: stem conv, residual blocks, 1x1 head conv and a 1x1
/// output conv with sigmoid giving one probability per bit.
#[derive(Clone, Debug)]
pub struct Network<T> {
    config: NetworkConfig,
    params: ParamSet<T>,
    stem: ConvIds,
    blocks: Vec<Block>,
    head: ConvIds,
    output: ConvIds,
}

#[derive(Clone, Copy, Debug)]
pub struct NetworkOutput {
    /// Pre-sigmoid values; these are the bit LLRs with `LLR > 0` meaning bit 1.
    pub logits: Var,
    pub probabilities: Var,
}

fn conv<T: Real, R: Rng + ?Sized>(
    params: &mut ParamSet<T>,
    name: &str,
    k: usize,
    c_in: usize,
    c_out: usize,
    rng: &mut R,
) -> ConvIds {
    ConvIds {
        weight: params.push_kernel(
            format!("{name}.weight"),
            &[k, k, c_in, c_out],
            k * k * c_in,
            rng,
        ),
        bias: params.push(format!("{name}.bias"), Tensor::zeros(&[c_out])),
    }
}

impl<T: Real> Network<T> {
    pub fn new<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self, NnError> {
        config.validate()?;
        let c = config.filters;
        let mut params = ParamSet::new();
        let stem = conv(
            &mut params,
            "stem",
            config.stem_kernel.0,
            config.input_channels(),
            c,
            rng,
        );
        let blocks = config
            .physical_blocks()
            .into_iter()
            .enumerate()
            .map(|(i, b)| Block::new(b, &format!("blocks.{i}"), &mut params, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let head = conv(&mut params, "head", config.head_kernel.0, c, c, rng);
        let output = conv(&mut params, "output", 1, c, config.bits_per_symbol, rng);
        Ok(Network {
            config,
            params,
            stem,
            blocks,
            head,
            output,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Replaces all parameters, keeping names and shapes.
    pub fn load_params(&mut self, tensors: Vec<Tensor<T>>) -> Result<(), NnError> {
        if tensors.len() != self.params.len()
            || tensors
                .iter()
                .zip(self.params.tensors())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(NnError::Config(
                "parameter shapes do not match the network".into(),
            ));
        }
        for (dst, src) in self.params.tensors_mut().iter_mut().zip(tensors) {
            *dst = src;
        }
        Ok(())
    }

    /// Records the forward pass; `vars` must come from `self.params().bind(..)` on the same tape.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        vars: &[Var],
    ) -> Result<NetworkOutput, NnError> {
        let c_in = tape.value(input).channels();
        if c_in != self.config.input_channels() {
            return Err(NnError::Config(format!(
                "network expects {} input channels, got {c_in}",
                self.config.input_channels()
            )));
        }
        let mut x = tape.conv2d(input, vars[self.stem.weight.0], vars[self.stem.bias.0], 1)?;
        for block in &self.blocks {
            x = block.forward(tape, x, vars, self.config.layer_norm_eps)?;
        }
        x = tape.conv2d(x, vars[self.head.weight.0], vars[self.head.bias.0], 1)?;
        let logits = tape.conv2d(x, vars[self.output.weight.0], vars[self.output.bias.0], 1)?;
        let probabilities = tape.activation(Activation::Sigmoid, logits)?;
        Ok(NetworkOutput {
            logits,
            probabilities,
        })
    }

    /// Inference without gradient tracking; returns `(logits, probabilities)`.
    pub fn predict(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>), NnError> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let x = tape.leaf(input.clone(), false);
        let out = self.forward(&mut tape, x, &vars)?;
        Ok((
            tape.value(out.logits).clone(),
            tape.value(out.probabilities).clone(),
        ))
    }
}
