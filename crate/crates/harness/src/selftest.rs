//! `nrx selftest`: a few seconds of end-to-end sanity checks.

use nrx_core::coding::{DecoderKind, LdpcCode};
use nrx_core::complexity::block_cost;
use nrx_core::nn::{Block, BlockConfig, NnError, ParamSet};
use nrx_core::phy::{LinkConfig, LlrMethod};
use nrx_core::receivers::{LmmseEstimator, LmmsePrior, ReceiverKind};
use nrx_core::seed;
use nrx_core::tensor::gradcheck::check_gradients;
use nrx_core::tensor::{shuffle_permutation, Tape, Tensor, Var};
use nrx_harness::eval::{baseline_llrs, coded_tti};
use nrx_harness::scenario::TtiDraw;
use nrx_harness::{HarnessError, Result};
use rand::Rng;

fn report(name: &str, ok: bool, detail: String) -> bool {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn complexity() -> bool {
    let t = block_cost(&BlockConfig::resnet_t(128), 14, 256);
    let ss = block_cost(&BlockConfig::resnet_ss(128), 14, 256);
    let ok = (t.nparam, t.nflops, ss.nparam, ss.nflops) == (36_096, 259_194_880, 9_856, 70_647_808);
    report(
        "block complexity at 14x256, C=128",
        ok,
        format!(
            "T {}/{}  SS {}/{}",
            t.nparam, t.nflops, ss.nparam, ss.nflops
        ),
    )
}

fn shuffle() -> bool {
    let a = shuffle_permutation(4, 2).ok();
    let b = shuffle_permutation(8, 4).ok();
    let ok = a.as_deref() == Some(&[0, 2, 1, 3][..])
        && b.as_deref() == Some(&[0, 4, 1, 5, 2, 6, 3, 7][..]);
    report("channel shuffle", ok, format!("{a:?} {b:?}"))
}

fn gradients() -> Result<bool> {
    let mut rng = seed::rng(11);
    let mut worst = 0.0f64;
    for cfg in [BlockConfig::resnet_t(4), BlockConfig::resnet_ss(4)] {
        let mut params = ParamSet::<f64>::new();
        let block = Block::new(cfg, "b", &mut params, &mut rng)?;
        let mut inputs = vec![Tensor::uniform(&[1, 3, 3, 4], 1.0, &mut rng)];
        inputs.extend(params.tensors().iter().cloned());
        let w: Vec<f64> = (0..inputs[0].len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let e = check_gradients(
            &inputs,
            |t: &mut Tape<f64>, v: &[Var]| -> Result<Var, NnError> {
                let y = block.forward(t, v[0], &v[1..], 1e-5)?;
                Ok(t.weighted_sum(y, w.clone())?)
            },
        )?;
        worst = worst.max(e);
    }
    Ok(report(
        "block gradients",
        worst <= 1e-4,
        format!("max relative error {worst:.2e}"),
    ))
}

fn link() -> Result<bool> {
    let base = LinkConfig {
        subcarriers: 48,
        ..LinkConfig::default()
    };
    let code = LdpcCode::default_code();
    let mut lmmse = LmmseEstimator::new(LmmsePrior::default());
    let (mut errors, mut bits) = (0, 0);
    for i in 0..4 {
        let tti = coded_tti(&base, &code, &TtiDraw::fixed(&base, 60.0, i))?;
        let llrs = baseline_llrs(ReceiverKind::Pcsi, &tti.sim, &mut lmmse, LlrMethod::MaxLog)?;
        let llrs = tti.sim.data_llrs(&llrs);
        let segments = llrs.chunks_exact(code.n()).zip(&tti.info);
        for (cw, info) in segments {
            let d = code.decode(cw, DecoderKind::MinSum, 50)?;
            errors += d.info().iter().zip(info).filter(|(a, b)| a != b).count();
            bits += info.len();
        }
    }
    Ok(report(
        "coded link at 60 dB with perfect CSI",
        errors == 0 && bits > 0,
        format!("{errors} errors in {bits} information bits"),
    ))
}

pub fn run() -> Result<()> {
    let results = [complexity(), shuffle(), gradients()?, link()?];
    let failed = results.iter().filter(|ok| !**ok).count();
    if failed > 0 {
        return Err(HarnessError::Format(format!(
            "{failed} self-test check(s) failed"
        )));
    }
    Ok(())
}
