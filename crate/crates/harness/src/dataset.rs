//! Dataset files: the randomized scenario of every TTI plus its seed. Grids
//! are regenerated from the seed when used, so a 10^5-TTI dataset is a few
//! megabytes.
//!
//! Layout (little endian): magic `NRXD`, version `u32`, split `u8`
//! (0 train, 1 test), generation seed `u64`, count `u64`, then per TTI:
//! Eb/N0 `f64`, profile `u8`, delay spread in seconds `f64`, Doppler `f64`,
//! DMRS count `u8`, TTI seed `u64`.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nrx_core::phy::ChannelProfile;
use nrx_core::seed;
use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::scenario::{Split, TtiDraw};
use crate::{HarnessError, Result};

const MAGIC: &[u8; 4] = b"NRXD";
const VERSION: u32 = 1;
const PROFILES: [ChannelProfile; 7] = [
    ChannelProfile::TdlA,
    ChannelProfile::TdlB,
    ChannelProfile::TdlC,
    ChannelProfile::TdlD,
    ChannelProfile::TdlE,
    ChannelProfile::Flat,
    ChannelProfile::Awgn,
];

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub seed: u64,
    pub draws: Vec<TtiDraw>,
}

/// Draws `count` independent TTI scenarios; TTI `i` depends only on `(seed, i)`.
pub fn generate_dataset(
    scenario: &ScenarioConfig,
    split: Split,
    count: usize,
    seed_: u64,
) -> Result<Dataset> {
    if count == 0 {
        return Err(HarnessError::Config(
            "dataset size must be at least 1".into(),
        ));
    }
    let draws = (0..count as u64)
        .into_par_iter()
        .map(|i| scenario.draw(split, &mut seed::rng(seed::derive(seed_, 0x6461_7461, i))))
        .collect();
    Ok(Dataset {
        split,
        seed: seed_,
        draws,
    })
}

fn fmt_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Format(format!("dataset: {}", msg.into()))
}

impl Dataset {
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        w.write_u8(match self.split {
            Split::Train => 0,
            Split::Test => 1,
        })?;
        w.write_u64::<LE>(self.seed)?;
        w.write_u64::<LE>(self.draws.len() as u64)?;
        for d in &self.draws {
            w.write_f64::<LE>(d.ebn0_db)?;
            let p = PROFILES
                .iter()
                .position(|&p| p == d.profile)
                .expect("profile is listed");
            w.write_u8(p as u8)?;
            w.write_f64::<LE>(d.delay_spread_s)?;
            w.write_f64::<LE>(d.doppler_hz)?;
            w.write_u8(d.dmrs_count as u8)?;
            w.write_u64::<LE>(d.seed)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let io = |e: std::io::Error| fmt_err(e.to_string());
        let mut magic = [0; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(fmt_err("not a dataset file"));
        }
        let version = r.read_u32::<LE>().map_err(io)?;
        if version != VERSION {
            return Err(fmt_err(format!("unsupported version {version}")));
        }
        let split = match r.read_u8().map_err(io)? {
            0 => Split::Train,
            1 => Split::Test,
            s => return Err(fmt_err(format!("unknown split {s}"))),
        };
        let seed = r.read_u64::<LE>().map_err(io)?;
        let count = r.read_u64::<LE>().map_err(io)?;
        if count > 1 << 32 {
            return Err(fmt_err("TTI count out of range"));
        }
        let mut draws = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let ebn0_db = r.read_f64::<LE>().map_err(io)?;
            let p = r.read_u8().map_err(io)? as usize;
            let profile = *PROFILES
                .get(p)
                .ok_or_else(|| fmt_err(format!("unknown profile {p}")))?;
            let delay_spread_s = r.read_f64::<LE>().map_err(io)?;
            let doppler_hz = r.read_f64::<LE>().map_err(io)?;
            let dmrs_count = r.read_u8().map_err(io)? as usize;
            let seed = r.read_u64::<LE>().map_err(io)?;
            draws.push(TtiDraw {
                ebn0_db,
                profile,
                delay_spread_s,
                doppler_hz,
                dmrs_count,
                seed,
            });
        }
        Ok(Dataset { split, seed, draws })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        self.write_to(&mut b).expect("writing to memory");
        b
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::read_from(&mut bytes.as_slice())
    }
}
