//! Acceptance run: one PASS/FAIL line per criterion. Runs without the libtest
//! harness so the lines always reach the terminal. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 1 4`.

use std::process::ExitCode;
use std::time::Instant;

use nrx_core::complexity::{
    block_cost, dilation_flop_ratio, layer_cost, network_report, separable_param_ratio, LayerKind,
};
use nrx_core::gradsuite::{operator_and_block_cases, INSTANCES};
use nrx_core::nn::{Ablation, Block, BlockConfig, InputVariant, NetworkConfig, ParamSet};
use nrx_core::phy::{
    apply_channel, build_tti, ebn0_to_n0, realize_tdl, ChannelProfile, Constellation, LinkConfig,
    LlrMethod, ResourceGrid, SYMBOL_DURATION_S,
};
use nrx_core::receivers::{ls_estimate, LmmseEstimator, LmmsePrior, ReceiverKind};
use nrx_core::seed;
use nrx_core::tensor::{shuffle_permutation, Tape, Tensor};
use nrx_harness::config::{ExperimentConfig, Preset};
use nrx_harness::eval::{baseline_llrs, evaluate};
use nrx_harness::neural::NeuralRx;
use nrx_harness::scenario::{simulate_random, SimulatedTti, TtiDraw};
use nrx_harness::train::{TrainState, Trainer};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- 1

fn allocated(cfg: &BlockConfig) -> usize {
    let mut p = ParamSet::<f32>::new();
    Block::new(cfg.clone(), "b", &mut p, &mut seed::rng(0)).expect("block builds");
    p.count()
}

fn criterion_1() -> Outcome {
    let t_cfg = BlockConfig::resnet_t(128);
    let ss_cfg = BlockConfig::resnet_ss(128);
    let t = block_cost(&t_cfg, 14, 256);
    let ss = block_cost(&ss_cfg, 14, 256);
    let pass = t.nparam == 36_096
        && ss.nparam == 9_856
        && allocated(&t_cfg) == 36_096
        && allocated(&ss_cfg) == 9_856
        && t.nflops == 259_194_880
        && ss.nflops == 70_647_808
        && (t.energy_mj - 1.19).abs() <= 0.01
        && (ss.energy_mj - 0.33).abs() <= 0.01;
    outcome(
        pass,
        format!(
            "T {} params / {} FLOPs / {:.4} mJ; SS {} params / {} FLOPs / {:.4} mJ",
            t.nparam, t.nflops, t.energy_mj, ss.nparam, ss.nflops, ss.energy_mj
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let ratio = separable_param_ratio(3, 128);
    let conv = |d| {
        layer_cost(
            &LayerKind::Conv {
                c_in: 128,
                c_out: 128,
                kernel: 3,
                dilation: d,
            },
            14,
            256,
        )
        .nflops
    };
    // integer cross-multiplication: exact rational equality
    let exact_49 = conv(3) * 9 == conv(1) * 49 && dilation_flop_ratio(3, 3) == 49.0 / 9.0;
    let exact_121 = conv(5) * 9 == conv(1) * 121 && dilation_flop_ratio(3, 5) == 121.0 / 9.0;
    let y = network_report(
        &NetworkConfig::traditional(7, 128, 2, InputVariant::Y, 6),
        14,
        256,
    );
    let yhp = network_report(
        &NetworkConfig::traditional(7, 128, 2, InputVariant::Yhp, 6),
        14,
        256,
    );
    let dp = yhp.total.nparam - y.total.nparam;
    let df = yhp.total.nflops - y.total.nflops;
    let pass =
        (ratio - 0.1189).abs() <= 1e-4 && exact_49 && exact_121 && dp == 9_216 && df == 66_060_288;
    outcome(
        pass,
        format!(
            "separable ratio {ratio:.5}; dilation 3 and 5 ratios exact 49/9 {exact_49}, 121/9 {exact_121}; YHP +{dp} params, +{df} FLOPs"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let cases = operator_and_block_cases();
    for case in &cases {
        match case.run(INSTANCES) {
            Ok(r) => {
                worst = worst.max(r.worst);
                if !r.passed() || r.instances < 20 {
                    failures.push(format!("{} ({:.2e})", r.name, r.worst));
                }
            }
            Err(e) => failures.push(format!("{}: {e}", case.name)),
        }
    }
    let names: Vec<&str> = cases.iter().map(|c| c.name.as_str()).collect();
    let blocks = names.contains(&"resnet_t") && names.contains(&"resnet_ss");
    outcome(
        failures.is_empty() && blocks,
        format!(
            "{} cases x {INSTANCES} instances, worst relative error {worst:.2e}{}",
            cases.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failures.join(", "))
            }
        ),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let p4 = shuffle_permutation(4, 2).expect("valid");
    let p8 = shuffle_permutation(8, 4).expect("valid");
    let perms = p4 == [0, 2, 1, 3] && p8 == [0, 4, 1, 5, 2, 6, 3, 7];

    let x = Tensor::<f64>::uniform(&[2, 3, 5, 8], 1.0, &mut seed::rng(4));
    let mut split_ok = true;
    for cp in 1..8 {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone(), false);
        let (a, b) = tape.channel_split(v, cp).expect("split");
        let y = tape.channel_concat(a, b).expect("concat");
        split_ok &= tape
            .value(y)
            .data()
            .iter()
            .zip(x.data())
            .all(|(p, q)| p.to_bits() == q.to_bits());
    }

    let c = 8;
    let mut params = ParamSet::<f64>::new();
    let block = Block::new(
        BlockConfig::resnet_ss(c),
        "b",
        &mut params,
        &mut seed::rng(1),
    )
    .expect("block");
    let conv_ids: Vec<_> = params
        .names()
        .iter()
        .filter(|n| n.contains(".conv"))
        .map(|n| params.find(n).expect("listed"))
        .collect();
    for id in conv_ids {
        params.get_mut(id).data_mut().fill(0.0);
    }
    let xin = Tensor::<f64>::uniform(&[1, 3, 4, c], 1.0, &mut seed::rng(9));
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let xv = tape.leaf(xin.clone(), false);
    let out = block.forward(&mut tape, xv, &vars, 1e-5).expect("forward");
    let out = tape.value(out);
    // pass-through half lands where the inverse shuffle puts it; the zeroed branch is 0
    let perm = shuffle_permutation(c, c / 2).expect("valid");
    let mut pass_through = true;
    for (pin, pout) in xin.data().chunks(c).zip(out.data().chunks(c)) {
        for i in 0..c {
            let expect = if perm[i] < c / 2 { pin[perm[i]] } else { 0.0 };
            pass_through &= pout[i].to_bits() == expect.to_bits();
        }
    }
    outcome(
        perms && split_ok && pass_through,
        format!("C=4,G=2 {p4:?}; C=8,G=4 {p8:?}; split/concat identity {split_ok}; zero-branch pass-through {pass_through}"),
    )
}

// ---------------------------------------------------------------- 5

/// Exact Gray-QAM BER: per-axis PAM decision regions, counting differing bits.
fn analytic_ber(c: &Constellation, n0: f64) -> f64 {
    let levels = c.axis_levels();
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| levels[i]).collect();
    let sigma = (n0 / 2.0).sqrt();
    let cdf = |x: f64| 0.5 * libm::erfc(-x / (sigma * 2f64.sqrt()));
    let m = c.bits_per_symbol() / 2;
    let bit = |label: usize, j: usize| (label >> (m - 1 - j)) & 1;
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
            errors += p * (0..m).filter(|&j| bit(tx, j) != bit(rx, j)).count() as f64;
        }
    }
    errors / (levels.len() * m) as f64
}

fn hard_errors(llrs: &[f64], bits: &[u8]) -> usize {
    llrs.iter()
        .zip(bits)
        .filter(|(l, b)| (**l > 0.0) != (**b == 1))
        .count()
}

fn criterion_5() -> Outcome {
    let link = LinkConfig {
        rx_antennas: 1,
        profile: ChannelProfile::Awgn,
        delay_spread_s: 0.0,
        doppler_hz: 0.0,
        ..LinkConfig::default()
    };
    let qam = Constellation::square(link.bits_per_symbol).expect("64-QAM");
    let ber_at =
        |ebn0: f64| analytic_ber(&qam, ebn0_to_n0(ebn0, link.bits_per_symbol, link.code_rate));
    // bisection on the analytic curve for BER = 1e-2
    let (mut lo, mut hi) = (0.0, 30.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ber_at(mid) > 1e-2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let ebn0 = 0.5 * (lo + hi);
    let analytic = ber_at(ebn0);
    let mut lmmse = LmmseEstimator::new(LmmsePrior::default());
    let (mut errors, mut bits) = (0usize, 0usize);
    let mut i = 0;
    while bits < 1_000_000 {
        let sim = simulate_random(&link, &TtiDraw::fixed(&link, ebn0, seed::derive(5, 0, i)))
            .expect("simulate");
        let llrs =
            baseline_llrs(ReceiverKind::Pcsi, &sim, &mut lmmse, LlrMethod::Exact).expect("demap");
        let llrs = sim.data_llrs(&llrs);
        errors += hard_errors(&llrs, &sim.bits);
        bits += sim.bits.len();
        i += 1;
    }
    let ber = errors as f64 / bits as f64;
    let rel = (ber / analytic - 1.0).abs();
    outcome(
        rel <= 0.05,
        format!("Eb/N0 {ebn0:.3} dB: simulated {ber:.4e} over {bits} bits, analytic {analytic:.4e}, relative error {rel:.4}"),
    )
}

// ---------------------------------------------------------------- 6

fn mse(est: &ResourceGrid, truth: &ResourceGrid) -> f64 {
    est.data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        / truth.data().len() as f64
}

fn criterion_6() -> Outcome {
    let link = LinkConfig {
        profile: ChannelProfile::TdlC,
        delay_spread_s: 300e-9,
        doppler_hz: 100.0,
        ..LinkConfig::default()
    };
    let n0 = ebn0_to_n0(10.0, link.bits_per_symbol, link.code_rate);
    let mut lmmse = LmmseEstimator::new(LmmsePrior {
        delay_spread_s: link.delay_spread_s,
        doppler_hz: link.doppler_hz,
        subcarrier_spacing_hz: link.subcarrier_spacing_hz,
        symbol_duration_s: SYMBOL_DURATION_S,
    });
    let (mut ls_se, mut lm_se) = (0.0, 0.0);
    let mut noiseless_worst = 0.0f64;
    let ttis = 1000;
    for t in 0..ttis {
        let mut rng = seed::rng(seed::derive(6, 0, t));
        let ch = realize_tdl(
            link.profile,
            link.delay_spread_s,
            link.doppler_hz,
            (&link).into(),
            rng.random(),
        )
        .expect("channel");
        let bits: Vec<u8> = (0..link.coded_bits())
            .map(|_| rng.random_range(0..2))
            .collect();
        let tti = build_tti(&bits, &link).expect("tti");
        let rx = apply_channel(&tti.tx, &ch, n0, &mut rng).expect("channel");
        let ls = ls_estimate(&rx.rx, &tti.pilots, &link.dmrs_symbols, n0).expect("ls");
        let lm = lmmse
            .estimate(&rx.rx, &tti.pilots, &link.dmrs_symbols, n0)
            .expect("lmmse");
        ls_se += mse(&ls.h, &ch.response);
        lm_se += mse(&lm.h, &ch.response);
        if t < 20 {
            let clean = apply_channel(&tti.tx, &ch, 0.0, &mut rng).expect("channel");
            let est = ls_estimate(&clean.rx, &tti.pilots, &link.dmrs_symbols, 0.0).expect("ls");
            for a in 0..link.rx_antennas {
                for &s in &link.dmrs_symbols {
                    for (x, y) in est.h.row(a, s).iter().zip(ch.response.row(a, s)) {
                        noiseless_worst = noiseless_worst.max((x - y).norm());
                    }
                }
            }
        }
    }
    let (ls_mse, lm_mse) = (ls_se / ttis as f64, lm_se / ttis as f64);
    outcome(
        lm_mse <= ls_mse && noiseless_worst <= 1e-12,
        format!(
            "{ttis} paired TTIs: MSE LMMSE {lm_mse:.4e} vs LS {ls_mse:.4e}; noiseless LS max error on pilots {noiseless_worst:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let mut cfg = ExperimentConfig::preset(Preset::Desk);
    cfg.link = LinkConfig::default();
    cfg.eval.ebn0_db = vec![6.0, 8.0, 10.0];
    cfg.eval.ttis = 1000;
    cfg.eval.receivers = vec![ReceiverKind::Pcsi, ReceiverKind::Lmmse, ReceiverKind::Ls];
    let result = match evaluate(&cfg, None) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("sweep failed: {e}")),
    };
    let mut pass = true;
    let mut detail = Vec::new();
    for &e in &cfg.eval.ebn0_db {
        let get = |r| result.point(e, r).expect("point present");
        let (p, m, l) = (
            get(ReceiverKind::Pcsi),
            get(ReceiverKind::Lmmse),
            get(ReceiverKind::Ls),
        );
        let overlap = |a: &nrx_harness::eval::PointResult, b: &nrx_harness::eval::PointResult| {
            a.interval().0 <= b.interval().1 && b.interval().0 <= a.interval().1
        };
        // adjacent pairs may tie within their intervals; the outer pair must be strictly separated
        let ok = (p.bler() <= m.bler() || overlap(p, m))
            && (m.bler() <= l.bler() || overlap(m, l))
            && p.bler() <= l.bler()
            && p.interval().1 < l.interval().0;
        pass &= ok;
        detail.push(format!(
            "{e} dB: pcsi {:.4} lmmse {:.4} ls {:.4} ({} blocks)",
            p.bler(),
            m.bler(),
            l.bler(),
            p.coded.blocks
        ));
    }
    outcome(pass, detail.join("; "))
}

// ---------------------------------------------------------------- 8

fn hard_ber(cfg: &ExperimentConfig, ebn0: f64, ttis: u64, neural: Option<&NeuralRx>) -> f64 {
    let mut lmmse = LmmseEstimator::new(LmmsePrior::default());
    let (mut errors, mut bits) = (0usize, 0usize);
    let draws: Vec<TtiDraw> = (0..ttis)
        .map(|i| TtiDraw::fixed(&cfg.link, ebn0, seed::derive(8, 0, i)))
        .collect();
    for chunk in draws.chunks(32) {
        let sims: Vec<SimulatedTti> = chunk
            .iter()
            .map(|d| simulate_random(&cfg.link, d).expect("simulate"))
            .collect();
        let llrs: Vec<Vec<f64>> = match neural {
            Some(n) => n.llrs(&sims).expect("network"),
            None => sims
                .iter()
                .map(|s| {
                    baseline_llrs(ReceiverKind::Pcsi, s, &mut lmmse, cfg.eval.llr_method)
                        .expect("demap")
                })
                .collect(),
        };
        for (s, l) in sims.iter().zip(&llrs) {
            errors += hard_errors(&s.data_llrs(l), &s.bits);
            bits += s.bits.len();
        }
    }
    errors as f64 / bits as f64
}

fn criterion_8() -> Outcome {
    let cfg = ExperimentConfig::preset(Preset::Toy);
    let trainer = Trainer::new(&cfg, None).expect("validation set");
    let mut state = TrainState::new(&cfg).expect("network");
    let start = Instant::now();
    if let Err(e) = trainer.run(&mut state, cfg.train.steps, |_, r| {
        if let Some(v) = r.val_loss {
            if r.step % 5000 == 0 {
                println!(
                    "    step {:>5}: validation BCE {v:.4} ({:.0} s)",
                    r.step,
                    start.elapsed().as_secs_f64()
                );
            }
        }
    }) {
        return outcome(false, format!("training failed: {e}"));
    }
    if let Some(best) = state.best_params.clone() {
        state.net.load_params(best).expect("same shapes");
    }
    let bce = state.best_val;
    let neural = NeuralRx::new(state.net.clone());
    let ttis = 1000;
    let nrx_14 = hard_ber(&cfg, 14.0, ttis, Some(&neural));
    let pcsi: Vec<(f64, f64)> = [12.0, 13.0, 14.0]
        .iter()
        .map(|&e| (e, hard_ber(&cfg, e, ttis, None)))
        .collect();
    // Eb/N0 at which the demapper matches the network's BER, log-linear in BER
    let equivalent = pcsi.windows(2).find_map(|w| {
        let ((e0, b0), (e1, b1)) = (w[0], w[1]);
        (nrx_14 <= b0 && nrx_14 >= b1)
            .then(|| e0 + (e1 - e0) * (b0.ln() - nrx_14.ln()) / (b0.ln() - b1.ln()))
    });
    let gap = equivalent.map_or("outside 12-14 dB".to_string(), |e| {
        format!("{:.2} dB", 14.0 - e)
    });
    let pass = bce < 0.08 && nrx_14 <= pcsi[1].1;
    outcome(
        pass,
        format!(
            "{} steps: best validation BCE {bce:.4} at 14 dB; hard BER neural {nrx_14:.3e} at 14 dB vs PCSI {:.3e} at 13 dB ({:.3e} at 14 dB); gap {gap}",
            state.step, pcsi[1].1, pcsi[2].1
        ),
    )
}

// ---------------------------------------------------------------- 9

const NOT_REPRODUCED: &str = "Not reproduced at desk scale: absolute BLER-vs-Eb/N0 curves of the full \
receivers, the 0.2-1.2 dB gains of the neural receivers over the baselines, and convergence versus \
dataset size. These need training on the order of 10^7 TTIs with the 256-subcarrier, C=128, 7-block \
network and are replaced by criteria 1-8 plus the ablation-lattice build, gradient and training checks.";

fn criterion_9() -> Outcome {
    println!("    {NOT_REPRODUCED}");
    let mut cfg = ExperimentConfig::preset(Preset::Toy);
    cfg.train.batch_size = 8;
    cfg.train.validation_every = 200;
    cfg.train.validation_ttis = 8;
    let grads = nrx_core::gradsuite::cases()
        .into_iter()
        .filter(|c| c.name.starts_with("ablation"))
        .map(|c| c.run(INSTANCES).map(|r| r.passed()).unwrap_or(false))
        .filter(|ok| *ok)
        .count();
    let trainer = Trainer::new(&cfg, None).expect("validation set");
    let mut trained = 0;
    let mut lines = Vec::new();
    for a in Ablation::lattice() {
        let net = NetworkConfig::custom(
            vec![BlockConfig::with_ablation(32, a)],
            32,
            2,
            InputVariant::Y,
            6,
        );
        let result = TrainState::with_network(&cfg, net)
            .and_then(|mut s| trainer.run(&mut s, 200, |_, _| {}).map(|_| s));
        match result {
            Ok(s) => {
                // the step-0 record carries no training loss
                let finite = s.trace.iter().all(|r| {
                    (r.step == 0 || r.train_loss.is_finite())
                        && r.val_loss.is_none_or(f64::is_finite)
                });
                let vals: Vec<f64> = s.trace.iter().filter_map(|r| r.val_loss).collect();
                if finite && s.step == 200 {
                    trained += 1;
                }
                lines.push(format!(
                    "{} {:.3}->{:.3}",
                    a.label(),
                    vals[0],
                    vals[vals.len() - 1]
                ));
            }
            Err(e) => lines.push(format!("{} {e}", a.label())),
        }
    }
    println!("    validation BCE, step 0 -> 200: {}", lines.join(", "));
    outcome(
        grads == 16 && trained == 16,
        format!("{grads}/16 lattice points pass gradient checks, {trained}/16 train 200 steps without divergence; statement printed"),
    )
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "complexity exact match", criterion_1),
        (2, "ratio claims", criterion_2),
        (3, "gradient suite", criterion_3),
        (4, "shuffle and split structure", criterion_4),
        (5, "link-level physics", criterion_5),
        (6, "estimator quality", criterion_6),
        (7, "receiver ordering", criterion_7),
        (8, "toy learnability", criterion_8),
        (9, "non-reproducibility and ablation lattice", criterion_9),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        println!(
            "{} criterion {n} ({name}, {:.1} s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
