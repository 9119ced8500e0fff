use num_complex::Complex64;

use super::{InputVariant, NnError};
use crate::phy::ResourceGrid;
use crate::tensor::{Real, Tensor};

/// Network input channels for `antennas` receive antennas.
pub fn input_channels(variant: InputVariant, antennas: usize) -> usize {
    match variant {
        InputVariant::Y => 2 * antennas,
        InputVariant::Yhp => 6 * antennas,
    }
}

fn push_plane(planes: &mut Vec<(usize, bool, usize)>, grid: usize, antennas: usize) {
    for a in 0..antennas {
        planes.push((grid, false, a));
        planes.push((grid, true, a));
    }
}

/// Builds one `[1, symbols, subcarriers, C]` input from the received grid and,
/// for the YHP variant, a channel estimate and the pilot plane.
///
/// Channel order is `Y`, then `H`, then `P`; within each, antenna-major with
/// real part before imaginary part. The single-antenna pilot plane is repeated
/// per receive antenna.
pub fn assemble_input<T: Real>(
    variant: InputVariant,
    rx: &ResourceGrid,
    estimate: Option<&ResourceGrid>,
    pilots: Option<&ResourceGrid>,
) -> Result<Tensor<T>, NnError> {
    let (ant, m, n) = rx.dims();
    let mut grids: Vec<&ResourceGrid> = vec![rx];
    let mut planes = Vec::new();
    push_plane(&mut planes, 0, ant);
    if variant == InputVariant::Yhp {
        let (Some(h), Some(p)) = (estimate, pilots) else {
            return Err(NnError::Config(
                "YHP input needs a channel estimate and pilots".into(),
            ));
        };
        if !h.same_dims(rx) || p.symbols() != m || p.subcarriers() != n {
            return Err(NnError::Config(
                "estimate or pilot grid does not match the received grid".into(),
            ));
        }
        grids.push(h);
        grids.push(p);
        push_plane(&mut planes, 1, ant);
        push_plane(&mut planes, 2, ant);
    }
    let c = planes.len();
    let mut data = vec![T::zero(); m * n * c];
    for s in 0..m {
        for sc in 0..n {
            let base = (s * n + sc) * c;
            for (ch, &(g, imag, a)) in planes.iter().enumerate() {
                let grid = grids[g];
                let a = if grid.antennas() == 1 { 0 } else { a };
                let v: Complex64 = grid.get(a, s, sc);
                data[base + ch] = T::of(if imag { v.im } else { v.re });
            }
        }
    }
    Ok(Tensor::from_vec(&[1, m, n, c], data)?)
}

/// Concatenates `[1, H, W, C]` samples along the batch axis.
pub fn stack_batch<T: Real>(samples: &[Tensor<T>]) -> Result<Tensor<T>, NnError> {
    let first = samples
        .first()
        .ok_or_else(|| NnError::Config("cannot stack an empty batch".into()))?;
    let shape = first.shape();
    if shape.len() != 4 || shape[0] != 1 {
        return Err(NnError::Config(format!(
            "samples must be [1, H, W, C], got {shape:?}"
        )));
    }
    let mut data = Vec::with_capacity(first.len() * samples.len());
    for s in samples {
        if s.shape() != shape {
            return Err(NnError::Config(format!(
                "sample shape {:?} differs from {shape:?}",
                s.shape()
            )));
        }
        data.extend_from_slice(s.data());
    }
    Ok(Tensor::from_vec(
        &[samples.len(), shape[1], shape[2], shape[3]],
        data,
    )?)
}
