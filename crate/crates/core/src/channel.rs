//! Per-UE, per-resource-block achievable throughput.
//!
//! Gains are static for the whole run. Random matrices are drawn from
//! [`SplitMix64`] so any implementation can reproduce them bit-exactly:
//!
//! ```text
//! state  = state + 0x9E3779B97F4A7C15            (wrapping)
//! z      = state
//! z      = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9  (wrapping)
//! z      = (z ^ (z >> 27)) * 0x94D049BB133111EB  (wrapping)
//! output = z ^ (z >> 31)
//! unit   = (output >> 11) * 2^-53                 in [0, 1)
//! gain   = low + (high - low) * unit
//! ```
//!
//! Entries are drawn row-major (UE 0 blocks 0..Z, then UE 1, ...).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.next_unit()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() % (hi - lo + 1) as u64) as usize
    }
}

/// How a gain matrix was (or is to be) produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum GainModel {
    Unity,
    /// One gain per UE, equal on every block.
    Constant { per_ue: Vec<f64> },
    Explicit { values: Vec<Vec<f64>> },
    Random { low: f64, high: f64 },
}

/// Throughput per unit share, one row per UE and one column per resource block.
#[derive(Clone, Debug, PartialEq)]
pub struct GainMatrix {
    values: Matrix,
    provenance: GainModel,
}

fn check_dims(ues: usize, blocks: usize) -> Result<()> {
    if ues == 0 || blocks == 0 {
        return Err(Error::Structure(format!(
            "gain matrix needs at least one UE and one block, got {ues}x{blocks}"
        )));
    }
    Ok(())
}

fn check_entry(v: f64, row: usize, col: usize) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "gain [{row}][{col}] must be finite and >= 0, got {v}"
        )))
    }
}

impl GainMatrix {
    pub fn unity(ues: usize, blocks: usize) -> Result<Self> {
        check_dims(ues, blocks)?;
        Ok(Self {
            values: Matrix::filled(ues, blocks, 1.0),
            provenance: GainModel::Unity,
        })
    }

    pub fn constant(per_ue: &[f64], blocks: usize) -> Result<Self> {
        check_dims(per_ue.len(), blocks)?;
        let rows: Vec<Vec<f64>> = per_ue.iter().map(|&g| vec![g; blocks]).collect();
        let mut m = Self::explicit(&rows)?;
        m.provenance = GainModel::Constant {
            per_ue: per_ue.to_vec(),
        };
        Ok(m)
    }

    /// Wraps the given rows verbatim after checking shape and entries.
    pub fn explicit(rows: &[Vec<f64>]) -> Result<Self> {
        let values = Matrix::from_rows(rows)?;
        check_dims(values.rows(), values.cols())?;
        for (i, row) in rows.iter().enumerate() {
            for (z, &v) in row.iter().enumerate() {
                check_entry(v, i, z)?;
            }
        }
        Ok(Self {
            values,
            provenance: GainModel::Explicit {
                values: rows.to_vec(),
            },
        })
    }

    /// I.i.d. uniform gains in `[low, high]`, reproducible from `seed`.
    /// `low == high` is accepted and yields a constant matrix.
    pub fn seeded_random(ues: usize, blocks: usize, seed: u64, low: f64, high: f64) -> Result<Self> {
        check_dims(ues, blocks)?;
        if !(low.is_finite() && high.is_finite() && low >= 0.0 && low <= high) {
            return Err(Error::Range(format!(
                "random gains need 0 <= low <= high, got [{low}, {high}]"
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let mut values = Matrix::zeros(ues, blocks);
        for i in 0..ues {
            for z in 0..blocks {
                values.set(i, z, rng.uniform(low, high));
            }
        }
        Ok(Self {
            values,
            provenance: GainModel::Random { low, high },
        })
    }

    pub fn ues(&self) -> usize {
        self.values.rows()
    }

    pub fn blocks(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn get(&self, ue: usize, block: usize) -> f64 {
        self.values.get(ue, block)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn provenance(&self) -> &GainModel {
        &self.provenance
    }
}
