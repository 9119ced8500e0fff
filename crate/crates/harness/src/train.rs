//! Training loop: per-step seeded batches, masked BCE, AdamW, periodic
//! validation with best-model tracking.

use std::path::Path;

use nrx_core::nn::{Network, NetworkConfig};
use nrx_core::seed;
use nrx_core::tensor::{AdamW, AdamWConfig, Tape, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::Dataset;
use crate::neural::batch;
use crate::scenario::{simulate_random, SimulatedTti, Split, TtiDraw};
use crate::{HarnessError, Result};

// seed streams under the training seed
const BATCH_STREAM: u64 = 0x7261_696e;
const VALIDATION_STREAM: u64 = 0x76616c;
const INIT_STREAM: u64 = 0x696e_6974;

/// Probability clamp used when scoring BCE outside the tape.
const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub net: Network<f32>,
    pub optimizer: AdamW<f32>,
    /// Completed optimizer steps.
    pub step: u64,
    pub best_val: f64,
    pub best_params: Option<Vec<Tensor<f32>>>,
    pub trace: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Self::with_network(cfg, cfg.network_config())
    }

    /// Fresh state for an explicit network, e.g. an ablation variant that the
    /// configuration file cannot express.
    pub fn with_network(cfg: &ExperimentConfig, network: NetworkConfig) -> Result<Self> {
        let mut rng = seed::rng(seed::derive(cfg.train.seed, INIT_STREAM, 0));
        let net = Network::new(network, &mut rng)?;
        let optimizer = AdamW::new(adamw_config(cfg), net.params().tensors());
        Ok(TrainState {
            net,
            optimizer,
            step: 0,
            best_val: f64::INFINITY,
            best_params: None,
            trace: Vec::new(),
        })
    }

    pub fn from_checkpoint(
        cfg: &ExperimentConfig,
        ck: crate::checkpoint::Checkpoint,
    ) -> Result<Self> {
        let mut net = Network::new(cfg.network_config(), &mut seed::rng(0))?;
        net.load_params(ck.params)?;
        Ok(TrainState {
            net,
            optimizer: ck.optimizer,
            step: ck.step,
            best_val: ck.best_val,
            best_params: None,
            trace: ck.trace,
        })
    }
}

fn adamw_config(cfg: &ExperimentConfig) -> AdamWConfig {
    AdamWConfig {
        learning_rate: cfg.train.learning_rate,
        weight_decay: cfg.train.weight_decay,
        ..AdamWConfig::default()
    }
}

/// Scenario of sample `index` in the batch for `step`; depends on nothing else.
pub fn batch_draw(
    cfg: &ExperimentConfig,
    dataset: Option<&Dataset>,
    step: u64,
    index: usize,
) -> TtiDraw {
    let s = seed::derive(
        seed::derive(cfg.train.seed, BATCH_STREAM, step),
        index as u64,
        0,
    );
    match dataset {
        Some(d) if !d.draws.is_empty() => d.draws[(s % d.draws.len() as u64) as usize],
        _ => cfg.scenario.draw(Split::Train, &mut seed::rng(s)),
    }
}

pub fn simulate_batch(cfg: &ExperimentConfig, draws: &[TtiDraw]) -> Result<Vec<SimulatedTti>> {
    draws
        .par_iter()
        .map(|d| simulate_random(&cfg.link, d))
        .collect()
}

/// Fixed validation TTIs drawn from the training distribution.
pub fn validation_set(cfg: &ExperimentConfig) -> Result<Vec<SimulatedTti>> {
    let draws: Vec<TtiDraw> = (0..cfg.train.validation_ttis)
        .map(|i| {
            let mut rng = seed::rng(seed::derive(cfg.train.seed, VALIDATION_STREAM, i as u64));
            let mut d = cfg.scenario.draw(Split::Train, &mut rng);
            if let Some(e) = cfg.train.validation_ebn0_db {
                d.ebn0_db = e;
            }
            d
        })
        .collect();
    simulate_batch(cfg, &draws)
}

/// Mean masked BCE of `net` over `set`, evaluated in chunks of `chunk` TTIs.
pub fn evaluate_bce(net: &Network<f32>, set: &[SimulatedTti], chunk: usize) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for part in set.chunks(chunk.max(1)) {
        let (x, t, m) = batch(net.config().input_variant, part)?;
        let (_, p) = net.predict(&x)?;
        for ((&pv, &tv), &mv) in p.data().iter().zip(&t).zip(&m) {
            if mv {
                let q = f64::from(pv).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                total -= if tv > 0.5 { q.ln() } else { (1.0 - q).ln() };
                count += 1;
            }
        }
    }
    Ok(if count == 0 {
        f64::NAN
    } else {
        total / count as f64
    })
}

/// One optimizer step on `sims`; returns the batch loss before the update.
/// A non-finite loss leaves the parameters untouched.
pub fn train_step(state: &mut TrainState, sims: &[SimulatedTti]) -> Result<f64> {
    let (x, t, m) = batch(state.net.config().input_variant, sims)?;
    let mut tape = Tape::new();
    let vars = state.net.params().bind(&mut tape, true);
    let xv = tape.leaf(x, false);
    let out = state.net.forward(&mut tape, xv, &vars)?;
    let loss = tape.bce_loss(out.probabilities, &t, &m)?;
    let value = f64::from(tape.value(loss).item().expect("scalar loss"));
    if !value.is_finite() {
        return Err(HarnessError::Diverged {
            step: state.step,
            loss: value,
        });
    }
    let mut grads = tape.backward(loss)?;
    let grads: Vec<Tensor<f32>> = vars
        .iter()
        .zip(state.net.params().tensors())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    state
        .optimizer
        .step(state.net.params_mut().tensors_mut(), &grads)?;
    state.step += 1;
    Ok(value)
}

pub struct Trainer<'a> {
    pub cfg: &'a ExperimentConfig,
    pub dataset: Option<&'a Dataset>,
    pub validation: Vec<SimulatedTti>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a ExperimentConfig, dataset: Option<&'a Dataset>) -> Result<Self> {
        Ok(Trainer {
            cfg,
            dataset,
            validation: validation_set(cfg)?,
        })
    }

    pub fn validate(&self, state: &TrainState) -> Result<f64> {
        evaluate_bce(
            &state.net,
            &self.validation,
            self.cfg.train.batch_size.max(8),
        )
    }

    /// Runs until `state.step == until`, validating every
    /// `validation_every` steps and at step 0 and the end. `on_record` sees
    /// every trace entry as it is produced.
    pub fn run(
        &self,
        state: &mut TrainState,
        until: u64,
        mut on_record: impl FnMut(&TrainState, &LossRecord),
    ) -> Result<()> {
        let every = self.cfg.train.validation_every;
        if state.step == 0 && state.trace.is_empty() {
            let v = self.validate(state)?;
            self.record(state, f64::NAN, Some(v), &mut on_record);
        }
        while state.step < until {
            let draws: Vec<TtiDraw> = (0..self.cfg.train.batch_size)
                .map(|i| batch_draw(self.cfg, self.dataset, state.step, i))
                .collect();
            let sims = simulate_batch(self.cfg, &draws)?;
            let loss = train_step(state, &sims)?;
            let val = if state.step % every == 0 || state.step == until {
                Some(self.validate(state)?)
            } else {
                None
            };
            self.record(state, loss, val, &mut on_record);
        }
        Ok(())
    }

    fn record(
        &self,
        state: &mut TrainState,
        loss: f64,
        val: Option<f64>,
        on_record: &mut impl FnMut(&TrainState, &LossRecord),
    ) {
        if let Some(v) = val {
            if v < state.best_val {
                state.best_val = v;
                state.best_params = Some(state.net.params().tensors().to_vec());
            }
        }
        let r = LossRecord {
            step: state.step,
            train_loss: loss,
            val_loss: val,
        };
        state.trace.push(r);
        on_record(state, &r);
    }
}

pub fn write_trace_csv(path: &Path, trace: &[LossRecord]) -> Result<()> {
    let mut s = String::from("step,train_loss,val_loss\n");
    for r in trace {
        let fmt = |v: f64| {
            if v.is_finite() {
                format!("{v:.6}")
            } else {
                String::new()
            }
        };
        s.push_str(&format!(
            "{},{},{}\n",
            r.step,
            fmt(r.train_loss),
            r.val_loss.map(fmt).unwrap_or_default()
        ));
    }
    std::fs::write(path, s).map_err(|e| HarnessError::io(path, e))
}
