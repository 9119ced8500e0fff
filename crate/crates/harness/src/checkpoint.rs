//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `NRXC`, format version `u32`, 32-byte model
//! hash, seed `u64`, step `u64`, best validation loss `f64`, config TOML
//! (`u32` length + UTF-8), named parameter tensors, AdamW state, loss trace.
//! A tensor is name (`u32` length + UTF-8), rank `u32`, dims `u64` each,
//! then `f32` values.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nrx_core::tensor::{AdamW, AdamWConfig, Tensor};

use crate::config::ExperimentConfig;
use crate::train::{LossRecord, TrainState};
use crate::{HarnessError, Result};

const MAGIC: &[u8; 4] = b"NRXC";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model_hash: [u8; 32],
    pub config: ExperimentConfig,
    pub seed: u64,
    pub step: u64,
    pub best_val: f64,
    pub names: Vec<String>,
    pub params: Vec<Tensor<f32>>,
    pub optimizer: AdamW<f32>,
    pub trace: Vec<LossRecord>,
}

fn fmt_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Format(format!("checkpoint: {}", msg.into()))
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let n = r.read_u32::<LE>().map_err(|e| fmt_err(e.to_string()))? as usize;
    if n > 1 << 24 {
        return Err(fmt_err("string length out of range"));
    }
    let mut b = vec![0; n];
    r.read_exact(&mut b).map_err(|e| fmt_err(e.to_string()))?;
    String::from_utf8(b).map_err(|_| fmt_err("invalid UTF-8"))
}

fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor<f32>) -> std::io::Result<()> {
    write_str(w, name)?;
    w.write_u32::<LE>(t.shape().len() as u32)?;
    for &d in t.shape() {
        w.write_u64::<LE>(d as u64)?;
    }
    for &v in t.data() {
        w.write_f32::<LE>(v)?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read) -> Result<(String, Tensor<f32>)> {
    let name = read_str(r)?;
    let io = |e: std::io::Error| fmt_err(e.to_string());
    let rank = r.read_u32::<LE>().map_err(io)? as usize;
    if rank > 8 {
        return Err(fmt_err(format!("tensor {name} has rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| r.read_u64::<LE>().map(|d| d as usize))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(io)?;
    let len = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&n| n <= 1 << 28);
    let len = len.ok_or_else(|| fmt_err(format!("tensor {name} is too large")))?;
    let mut data = vec![0f32; len];
    r.read_f32_into::<LE>(&mut data).map_err(io)?;
    let t = Tensor::from_vec(&shape, data).map_err(|e| fmt_err(e.to_string()))?;
    Ok((name, t))
}

impl Checkpoint {
    pub fn from_state(config: &ExperimentConfig, state: &TrainState) -> Self {
        let params = state.net.params();
        Checkpoint {
            model_hash: config.model_hash(),
            config: config.clone(),
            seed: config.train.seed,
            step: state.step,
            best_val: state.best_val,
            names: params.names().to_vec(),
            params: params.tensors().to_vec(),
            optimizer: state.optimizer.clone(),
            trace: state.trace.clone(),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        w.write_all(&self.model_hash)?;
        w.write_u64::<LE>(self.seed)?;
        w.write_u64::<LE>(self.step)?;
        w.write_f64::<LE>(self.best_val)?;
        write_str(w, &self.config.to_toml())?;
        w.write_u32::<LE>(self.params.len() as u32)?;
        for (n, t) in self.names.iter().zip(&self.params) {
            write_tensor(w, n, t)?;
        }
        let c = self.optimizer.config;
        for v in [c.learning_rate, c.beta1, c.beta2, c.eps, c.weight_decay] {
            w.write_f64::<LE>(v)?;
        }
        w.write_u64::<LE>(self.optimizer.step_count())?;
        let (m, v) = self.optimizer.moments();
        for (i, t) in m.iter().chain(v).enumerate() {
            write_tensor(w, &format!("moment.{i}"), t)?;
        }
        w.write_u64::<LE>(self.trace.len() as u64)?;
        for r in &self.trace {
            w.write_u64::<LE>(r.step)?;
            w.write_f64::<LE>(r.train_loss)?;
            w.write_f64::<LE>(r.val_loss.unwrap_or(f64::NAN))?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let io = |e: std::io::Error| fmt_err(e.to_string());
        let mut magic = [0; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(fmt_err("not a checkpoint file"));
        }
        let version = r.read_u32::<LE>().map_err(io)?;
        if version != VERSION {
            return Err(fmt_err(format!("unsupported version {version}")));
        }
        let mut model_hash = [0; 32];
        r.read_exact(&mut model_hash).map_err(io)?;
        let seed = r.read_u64::<LE>().map_err(io)?;
        let step = r.read_u64::<LE>().map_err(io)?;
        let best_val = r.read_f64::<LE>().map_err(io)?;
        let config = ExperimentConfig::from_toml(&read_str(r)?)?;
        let count = r.read_u32::<LE>().map_err(io)? as usize;
        let mut names = Vec::with_capacity(count);
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, t) = read_tensor(r)?;
            names.push(n);
            params.push(t);
        }
        let mut c = [0.0; 5];
        for v in &mut c {
            *v = r.read_f64::<LE>().map_err(io)?;
        }
        let opt_config = AdamWConfig {
            learning_rate: c[0],
            beta1: c[1],
            beta2: c[2],
            eps: c[3],
            weight_decay: c[4],
        };
        let opt_step = r.read_u64::<LE>().map_err(io)?;
        let mut moments = Vec::with_capacity(2 * count);
        for _ in 0..2 * count {
            moments.push(read_tensor(r)?.1);
        }
        let second = moments.split_off(count);
        let optimizer = AdamW::from_state(opt_config, opt_step, moments, second)
            .map_err(|e| fmt_err(e.to_string()))?;
        let n = r.read_u64::<LE>().map_err(io)?;
        if n > 1 << 32 {
            return Err(fmt_err("loss trace length out of range"));
        }
        let mut trace = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let step = r.read_u64::<LE>().map_err(io)?;
            let train_loss = r.read_f64::<LE>().map_err(io)?;
            let val = r.read_f64::<LE>().map_err(io)?;
            trace.push(LossRecord {
                step,
                train_loss,
                val_loss: (!val.is_nan()).then_some(val),
            });
        }
        Ok(Checkpoint {
            model_hash,
            config,
            seed,
            step,
            best_val,
            names,
            params,
            optimizer,
            trace,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, buf).map_err(|e| HarnessError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::read_from(&mut bytes.as_slice())
    }

    /// Refuses a checkpoint whose model hash differs from `config`'s unless `force`.
    pub fn check_compatible(&self, config: &ExperimentConfig, force: bool) -> Result<()> {
        let expected = config.model_hash();
        if expected != self.model_hash && !force {
            return Err(HarnessError::HashMismatch {
                expected: hex::encode(expected),
                found: hex::encode(self.model_hash),
            });
        }
        Ok(())
    }
}
