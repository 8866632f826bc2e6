//! Scenario files.
//!
//! A scenario is one JSON object:
//!
//! ```json
//! {
//!   "cells":  [{ "id": 0, "resource_blocks": 100, "ues": [0, 1] }],
//!   "ues":    [{ "id": 0, "utility": { "kind": "sigmoidal", "a": 5, "b": 10 }, "weight": 1 },
//!              { "id": 1, "utility": { "kind": "logarithmic", "k": 15, "r_max": 100 } }],
//!   "gains":  { "model": "unity" },
//!   "policy": "upf",
//!   "frames": 10000,
//!   "eps":    1e-6,
//!   "seed":   0
//! }
//! ```
//!
//! `cells`, `ues`, `gains` and `policy` are required. `weight` defaults to 1,
//! `frames` to 10000, `eps` to 1e-6 and `seed` to 0.
//!
//! Gain models: `unity`; `constant` with `per_ue` (one value per UE, in `ues`
//! order); `explicit` with `values` (one row per UE in `ues` order, each as
//! long as its cell's block count); `random` with `low`/`high`. Random cell
//! `c` (0-based position in `cells`) is drawn with seed `seed + c`.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::channel::{GainMatrix, GainModel};
use crate::engine::{Cell, CellInstance, Policy};
use crate::error::{Error, Result};
use crate::utility::{catalog, UtilityFunction, UtilitySpec, DEFAULT_RATE_FLOOR};

pub const DEFAULT_FRAMES: u64 = 10_000;

const REQUIRED: [&str; 4] = ["cells", "ues", "gains", "policy"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// Utility proportional fairness.
    Upf,
    /// Weighted proportional fairness with the per-UE weights.
    Wpf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ue {
    pub id: u32,
    pub utility: UtilityFunction,
    pub weight: f64,
}

/// A validated scenario. Obtain one from [`parse_scenario`],
/// [`RawScenario::validate`] or [`Scenario::reference`].
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    cells: Vec<Cell>,
    ues: Vec<Ue>,
    gains: GainModel,
    policy: PolicyKind,
    frames: u64,
    eps: f64,
    seed: u64,
    /// Position in `ues` for each cell member, parallel to `cells[c].ues`.
    members: Vec<Vec<usize>>,
}

/// Wire form of a scenario, before validation.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScenario {
    pub cells: Vec<RawCell>,
    pub ues: Vec<RawUe>,
    pub gains: GainModel,
    pub policy: PolicyKind,
    #[serde(default = "default_frames")]
    pub frames: u64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCell {
    pub id: u32,
    pub resource_blocks: usize,
    pub ues: Vec<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawUe {
    pub id: u32,
    pub utility: RawUtility,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

/// Same shape as [`UtilityFunction`] but without the parameter checks, so
/// every violation in a file can be reported at once.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RawUtility {
    Sigmoidal { a: f64, b: f64 },
    Logarithmic { k: f64, r_max: f64 },
}

fn default_frames() -> u64 {
    DEFAULT_FRAMES
}

fn default_eps() -> f64 {
    DEFAULT_RATE_FLOOR
}

fn default_weight() -> f64 {
    1.0
}

impl From<UtilityFunction> for RawUtility {
    fn from(u: UtilityFunction) -> Self {
        match u {
            UtilityFunction::Sigmoidal { a, b } => Self::Sigmoidal { a, b },
            UtilityFunction::Logarithmic { k, r_max } => Self::Logarithmic { k, r_max },
        }
    }
}

impl From<RawUtility> for UtilitySpec {
    fn from(u: RawUtility) -> Self {
        match u {
            RawUtility::Sigmoidal { a, b } => Self::Sigmoidal { a, b },
            RawUtility::Logarithmic { k, r_max } => Self::Logarithmic { k, r_max },
        }
    }
}

impl RawScenario {
    /// Checks every constraint and returns all violations together.
    pub fn validate(self) -> Result<Scenario> {
        let mut errs = Vec::new();

        if self.cells.is_empty() {
            errs.push("cells: at least one cell is required".to_string());
        }
        if self.ues.is_empty() {
            errs.push("ues: at least one UE is required".to_string());
        }
        if self.frames == 0 {
            errs.push("frames: must be >= 1".to_string());
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            errs.push(format!("eps: must be finite and > 0, got {}", self.eps));
        }

        let mut ues = Vec::with_capacity(self.ues.len());
        for (n, ue) in self.ues.iter().enumerate() {
            if self.ues[..n].iter().any(|other| other.id == ue.id) {
                errs.push(format!("ues[{n}]: duplicate UE id {}", ue.id));
            }
            if !(ue.weight.is_finite() && ue.weight > 0.0) {
                errs.push(format!("ues[{n}].weight: must be finite and > 0, got {}", ue.weight));
            }
            match UtilityFunction::try_from(UtilitySpec::from(ue.utility)) {
                Ok(utility) => ues.push(Ue {
                    id: ue.id,
                    utility,
                    weight: ue.weight,
                }),
                Err(e) => errs.push(format!("ues[{n}].utility: {e}")),
            }
        }

        let mut owner: Vec<Option<usize>> = vec![None; self.ues.len()];
        let mut members = Vec::with_capacity(self.cells.len());
        for (c, cell) in self.cells.iter().enumerate() {
            if self.cells[..c].iter().any(|other| other.id == cell.id) {
                errs.push(format!("cells[{c}]: duplicate cell id {}", cell.id));
            }
            if cell.resource_blocks == 0 {
                errs.push(format!("cells[{c}].resource_blocks: must be >= 1"));
            }
            if cell.ues.is_empty() {
                errs.push(format!("cells[{c}].ues: a cell needs at least one UE"));
            }
            let mut idx = Vec::with_capacity(cell.ues.len());
            for id in &cell.ues {
                match self.ues.iter().position(|u| u.id == *id) {
                    None => errs.push(format!("cells[{c}].ues: unknown UE id {id}")),
                    Some(pos) => {
                        if let Some(prev) = owner[pos] {
                            errs.push(format!(
                                "cells[{c}].ues: UE {id} is already attached to cell {}",
                                self.cells[prev].id
                            ));
                        } else {
                            owner[pos] = Some(c);
                        }
                        idx.push(pos);
                    }
                }
            }
            members.push(idx);
        }
        for (pos, o) in owner.iter().enumerate() {
            if o.is_none() {
                errs.push(format!("ues[{pos}]: UE {} is not attached to any cell", self.ues[pos].id));
            }
        }

        match &self.gains {
            GainModel::Unity => {}
            GainModel::Constant { per_ue } => {
                if per_ue.len() != self.ues.len() {
                    errs.push(format!(
                        "gains.per_ue: {} values for {} UEs",
                        per_ue.len(),
                        self.ues.len()
                    ));
                }
                for (n, g) in per_ue.iter().enumerate() {
                    if !(g.is_finite() && *g >= 0.0) {
                        errs.push(format!("gains.per_ue[{n}]: must be finite and >= 0, got {g}"));
                    }
                }
            }
            GainModel::Explicit { values } => {
                if values.len() != self.ues.len() {
                    errs.push(format!("gains.values: {} rows for {} UEs", values.len(), self.ues.len()));
                }
                for (n, row) in values.iter().enumerate() {
                    if let Some(c) = owner.get(n).copied().flatten() {
                        let want = self.cells[c].resource_blocks;
                        if row.len() != want {
                            errs.push(format!(
                                "gains.values[{n}]: {} entries but cell {} has {want} blocks",
                                row.len(),
                                self.cells[c].id
                            ));
                        }
                    }
                    if let Some(g) = row.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
                        errs.push(format!("gains.values[{n}]: entries must be finite and >= 0, got {g}"));
                    }
                }
            }
            GainModel::Random { low, high } => {
                if !(low.is_finite() && high.is_finite() && *low >= 0.0 && low <= high) {
                    errs.push(format!("gains: random model needs 0 <= low <= high, got [{low}, {high}]"));
                }
            }
        }

        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }

        Ok(Scenario {
            cells: self
                .cells
                .into_iter()
                .map(|c| Cell {
                    id: c.id,
                    resource_blocks: c.resource_blocks,
                    ues: c.ues,
                })
                .collect(),
            ues,
            gains: self.gains,
            policy: self.policy,
            frames: self.frames,
            eps: self.eps,
            seed: self.seed,
            members,
        })
    }
}

fn syntax_error(e: serde_json::Error) -> Error {
    Error::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let missing = |keys: &[&str]| {
        Error::Validation(
            keys.iter()
                .map(|k| format!("missing required section `{k}`"))
                .collect(),
        )
    };
    if text.trim().is_empty() {
        return Err(missing(&REQUIRED));
    }
    let value: Value = serde_json::from_str(text).map_err(syntax_error)?;
    let Some(object) = value.as_object() else {
        return Err(Error::Validation(vec!["scenario must be a JSON object".into()]));
    };
    let absent: Vec<&str> = REQUIRED.into_iter().filter(|k| !object.contains_key(*k)).collect();
    if !absent.is_empty() {
        return Err(missing(&absent));
    }
    let raw: RawScenario =
        serde_json::from_value(value).map_err(|e| Error::Validation(vec![e.to_string()]))?;
    raw.validate()
}

impl Scenario {
    /// Six UEs in one cell of 100 blocks with unity gains: three sigmoidal
    /// (a, b) = (5, 10), (3, 20), (1, 30) and three logarithmic
    /// k = 15, 3, 0.5 with r_max = 100.
    pub fn reference() -> Self {
        RawScenario {
            cells: vec![RawCell {
                id: 0,
                resource_blocks: 100,
                ues: (0..6).collect(),
            }],
            ues: catalog::REFERENCE_SIX
                .iter()
                .zip(0..)
                .map(|(u, id)| RawUe {
                    id,
                    utility: (*u).into(),
                    weight: 1.0,
                })
                .collect(),
            gains: GainModel::Unity,
            policy: PolicyKind::Upf,
            frames: DEFAULT_FRAMES,
            eps: DEFAULT_RATE_FLOOR,
            seed: 0,
        }
        .validate()
        .expect("reference scenario is valid")
    }

    /// Single-cell scenario from parts.
    pub fn single_cell(
        utilities: &[UtilityFunction],
        blocks: usize,
        gains: GainModel,
        policy: PolicyKind,
        seed: u64,
    ) -> Result<Self> {
        RawScenario {
            cells: vec![RawCell {
                id: 0,
                resource_blocks: blocks,
                ues: (0..utilities.len() as u32).collect(),
            }],
            ues: utilities
                .iter()
                .zip(0..)
                .map(|(u, id)| RawUe {
                    id,
                    utility: (*u).into(),
                    weight: 1.0,
                })
                .collect(),
            gains,
            policy,
            frames: DEFAULT_FRAMES,
            eps: DEFAULT_RATE_FLOOR,
            seed,
        }
        .validate()
    }

    pub fn to_raw(&self) -> RawScenario {
        RawScenario {
            cells: self
                .cells
                .iter()
                .map(|c| RawCell {
                    id: c.id,
                    resource_blocks: c.resource_blocks,
                    ues: c.ues.clone(),
                })
                .collect(),
            ues: self
                .ues
                .iter()
                .map(|u| RawUe {
                    id: u.id,
                    utility: u.utility.into(),
                    weight: u.weight,
                })
                .collect(),
            gains: self.gains.clone(),
            policy: self.policy,
            frames: self.frames,
            eps: self.eps,
            seed: self.seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("scenario serializes")
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let compact = serde_json::to_vec(&self.to_raw()).expect("scenario serializes");
        hex::encode(Sha256::digest(compact))
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn ues(&self) -> &[Ue] {
        &self.ues
    }

    pub fn utilities(&self) -> Vec<UtilityFunction> {
        self.ues.iter().map(|u| u.utility).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.ues.iter().map(|u| u.weight).collect()
    }

    pub fn gains(&self) -> &GainModel {
        &self.gains
    }

    pub fn policy_kind(&self) -> PolicyKind {
        self.policy
    }

    pub fn policy(&self) -> Policy {
        match self.policy {
            PolicyKind::Upf => Policy::UtilityProportionalFair,
            PolicyKind::Wpf => Policy::WeightedProportionalFair { weights: self.weights() },
        }
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_policy(mut self, policy: PolicyKind) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_frames(mut self, frames: u64) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Validation(vec!["frames: must be >= 1".into()]));
        }
        self.frames = frames;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_weights(mut self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.ues.len() {
            return Err(Error::Structure(format!(
                "{} weights for {} UEs",
                weights.len(),
                self.ues.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Domain(format!("weights must be > 0, got {w}")));
        }
        for (ue, &w) in self.ues.iter_mut().zip(weights) {
            ue.weight = w;
        }
        Ok(self)
    }

    /// Per-cell problem data with materialized gain matrices.
    pub fn cell_instances(&self) -> Result<Vec<CellInstance>> {
        self.cells
            .iter()
            .zip(&self.members)
            .enumerate()
            .map(|(c, (cell, members))| {
                let (m, z) = (members.len(), cell.resource_blocks);
                let gains = match &self.gains {
                    GainModel::Unity => GainMatrix::unity(m, z)?,
                    GainModel::Constant { per_ue } => {
                        let picked: Vec<f64> = members.iter().map(|&i| per_ue[i]).collect();
                        GainMatrix::constant(&picked, z)?
                    }
                    GainModel::Explicit { values } => {
                        let rows: Vec<Vec<f64>> = members.iter().map(|&i| values[i].clone()).collect();
                        GainMatrix::explicit(&rows)?
                    }
                    GainModel::Random { low, high } => {
                        GainMatrix::seeded_random(m, z, self.seed.wrapping_add(c as u64), *low, *high)?
                    }
                };
                Ok(CellInstance {
                    cell_id: cell.id,
                    ues: members.clone(),
                    utilities: members.iter().map(|&i| self.ues[i].utility).collect(),
                    gains,
                    eps: self.eps,
                })
            })
            .collect()
    }
}
