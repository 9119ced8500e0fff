use rand::Rng;

use super::{BlockConfig, NnError, ParamId, ParamSet};
use crate::tensor::{Activation, Real, Tape, Var};

#[derive(Clone, Debug)]
struct NormIds {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Debug)]
struct SeparableIds {
    depthwise: ParamId,
    depthwise_bias: ParamId,
    pointwise: ParamId,
    pointwise_bias: ParamId,
}

/// One residual block: two `norm -> activation -> separable conv` stages on
/// the processed path, joined back to the pass-through path.
#[derive(Clone, Debug)]
pub struct Block {
    pub config: BlockConfig,
    norm1: NormIds,
    conv1: SeparableIds,
    norm2: NormIds,
    conv2: SeparableIds,
}

fn norm<T: Real>(params: &mut ParamSet<T>, prefix: &str, c: usize) -> NormIds {
    use crate::tensor::Tensor;
    NormIds {
        gamma: params.push(format!("{prefix}.gamma"), Tensor::full(&[c], T::one())),
        beta: params.push(format!("{prefix}.beta"), Tensor::zeros(&[c])),
    }
}

fn separable<T: Real, R: Rng + ?Sized>(
    params: &mut ParamSet<T>,
    prefix: &str,
    k: usize,
    c_in: usize,
    mult: usize,
    c_out: usize,
    rng: &mut R,
) -> SeparableIds {
    use crate::tensor::Tensor;
    let mid = c_in * mult;
    SeparableIds {
        depthwise: params.push_kernel(
            format!("{prefix}.depthwise.weight"),
            &[k, k, c_in, mult],
            k * k,
            rng,
        ),
        depthwise_bias: params.push(format!("{prefix}.depthwise.bias"), Tensor::zeros(&[mid])),
        pointwise: params.push_kernel(
            format!("{prefix}.pointwise.weight"),
            &[1, 1, mid, c_out],
            mid,
            rng,
        ),
        pointwise_bias: params.push(format!("{prefix}.pointwise.bias"), Tensor::zeros(&[c_out])),
    }
}

impl Block {
    /// Allocates the block's parameters in `params` under `prefix`.
    pub fn new<T: Real, R: Rng + ?Sized>(
        config: BlockConfig,
        prefix: &str,
        params: &mut ParamSet<T>,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        config.validate()?;
        let (k, dm) = (config.kernel_size(), config.depth_multiplier);
        let (cin, cout) = (config.branch_in(), config.branch_out());
        let norm1 = norm(params, &format!("{prefix}.norm1"), cin);
        let conv1 = separable(params, &format!("{prefix}.conv1"), k, cin, dm, cin, rng);
        let norm2 = norm(params, &format!("{prefix}.norm2"), cin);
        let conv2 = separable(params, &format!("{prefix}.conv2"), k, cin, dm, cout, rng);
        Ok(Block {
            config,
            norm1,
            conv1,
            norm2,
            conv2,
        })
    }

    fn stage<T: Real>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        norm: &NormIds,
        conv: &SeparableIds,
        vars: &[Var],
        eps: f64,
    ) -> Result<Var, NnError> {
        let act = if self.config.ablation.use_gelu {
            Activation::Gelu
        } else {
            Activation::Relu
        };
        let h = tape.layer_norm(x, vars[norm.gamma.0], vars[norm.beta.0], eps)?;
        let h = tape.activation(act, h)?;
        Ok(tape.depthwise_separable_conv2d(
            h,
            vars[conv.depthwise.0],
            vars[conv.depthwise_bias.0],
            vars[conv.pointwise.0],
            vars[conv.pointwise_bias.0],
            self.config.dilation_rate(),
        )?)
    }

    /// Runs the block on `x`; `vars` are the bound parameters of the owning [`ParamSet`].
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        vars: &[Var],
        eps: f64,
    ) -> Result<Var, NnError> {
        let cfg = &self.config;
        let c = tape.value(x).channels();
        if c != cfg.filters {
            return Err(NnError::Config(format!(
                "block expects {} channels, input has {c}",
                cfg.filters
            )));
        }
        let a = cfg.ablation;
        let c_pass = cfg.pass_channels();
        let (pass, branch_in) = if a.use_split {
            tape.channel_split(x, c_pass)?
        } else {
            (x, x)
        };
        let h = self.stage(tape, branch_in, &self.norm1, &self.conv1, vars, eps)?;
        let h = self.stage(tape, h, &self.norm2, &self.conv2, vars, eps)?;
        let joined = match (a.use_split, a.use_concat) {
            (true, true) => tape.channel_concat(pass, h)?,
            (true, false) => {
                let sum = tape.add(branch_in, h)?;
                tape.channel_concat(pass, sum)?
            }
            (false, true) => {
                let head = tape.channel_slice(x, 0, c_pass)?;
                tape.channel_concat(head, h)?
            }
            (false, false) => tape.add(x, h)?,
        };
        if a.use_shuffle {
            Ok(tape.channel_shuffle(joined, cfg.groups)?)
        } else {
            Ok(joined)
        }
    }
}
