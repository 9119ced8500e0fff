use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::PhyError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneRole {
    TxData,
    Rx,
    Channel,
    Pilot,
    Noise,
    Estimate,
}

/// Complex values indexed by `(antenna, symbol, subcarrier)`, subcarrier fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ResourceGrid {
    pub role: PlaneRole,
    antennas: usize,
    symbols: usize,
    subcarriers: usize,
    data: Vec<Complex64>,
}

impl ResourceGrid {
    pub fn zeros(role: PlaneRole, antennas: usize, symbols: usize, subcarriers: usize) -> Self {
        ResourceGrid {
            role,
            antennas,
            symbols,
            subcarriers,
            data: vec![Complex64::new(0.0, 0.0); antennas * symbols * subcarriers],
        }
    }

    pub fn from_vec(
        role: PlaneRole,
        antennas: usize,
        symbols: usize,
        subcarriers: usize,
        data: Vec<Complex64>,
    ) -> Result<Self, PhyError> {
        if data.len() != antennas * symbols * subcarriers {
            return Err(PhyError::Dimension(format!(
                "{antennas}x{symbols}x{subcarriers} grid needs {} values, got {}",
                antennas * symbols * subcarriers,
                data.len()
            )));
        }
        Ok(ResourceGrid {
            role,
            antennas,
            symbols,
            subcarriers,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.antennas, self.symbols, self.subcarriers)
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    #[inline]
    pub fn index(&self, antenna: usize, symbol: usize, subcarrier: usize) -> usize {
        (antenna * self.symbols + symbol) * self.subcarriers + subcarrier
    }

    #[inline]
    pub fn get(&self, antenna: usize, symbol: usize, subcarrier: usize) -> Complex64 {
        self.data[self.index(antenna, symbol, subcarrier)]
    }

    #[inline]
    pub fn set(&mut self, antenna: usize, symbol: usize, subcarrier: usize, v: Complex64) {
        let i = self.index(antenna, symbol, subcarrier);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Values of one OFDM symbol on one antenna.
    pub fn row(&self, antenna: usize, symbol: usize) -> &[Complex64] {
        let start = self.index(antenna, symbol, 0);
        &self.data[start..start + self.subcarriers]
    }

    pub fn row_mut(&mut self, antenna: usize, symbol: usize) -> &mut [Complex64] {
        let start = self.index(antenna, symbol, 0);
        &mut self.data[start..start + self.subcarriers]
    }

    pub fn all_finite(&self) -> bool {
        self.data
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Copies a single-antenna grid onto `antennas` antennas.
    pub fn replicate(&self, antennas: usize) -> ResourceGrid {
        let plane = self.symbols * self.subcarriers;
        let mut data = Vec::with_capacity(antennas * plane);
        for _ in 0..antennas {
            data.extend_from_slice(&self.data[..plane]);
        }
        ResourceGrid {
            role: self.role,
            antennas,
            symbols: self.symbols,
            subcarriers: self.subcarriers,
            data,
        }
    }

    pub fn same_dims(&self, other: &ResourceGrid) -> bool {
        self.dims() == other.dims()
    }
}
