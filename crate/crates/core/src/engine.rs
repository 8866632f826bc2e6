//! Online frame-by-frame scheduler.
//!
//! Each frame visits every cell and, within a cell, every resource block in
//! ascending order. A block goes to the UE with the largest policy metric,
//! and the assignment fractions of that block's column are updated as a
//! running average over frames:
//!
//! ```text
//! phi[i][z] <- (k-1)/k * phi[i][z] + 1/k   for the winner
//! phi[i][z] <- (k-1)/k * phi[i][z]         for everyone else
//! ```
//!
//! Rates are refreshed after every block so later blocks of the same frame
//! see earlier decisions. Cells share the frame counter but never interact.

use serde::Serialize;

use crate::channel::GainMatrix;
use crate::error::{Error, Result};
use crate::harness::qoe;
use crate::matrix::Matrix;
use crate::scenario::Scenario;
use crate::utility::UtilityFunction;

/// Rule used to pick the UE for each resource block.
#[derive(Clone, Debug, PartialEq)]
pub enum Policy {
    /// `argmax_i U_i'(r_i) H_iz / U_i(r_i)`.
    UtilityProportionalFair,
    /// `argmax_i w_i H_iz / r_i`, with a-priori weights indexed like the UEs
    /// the policy is applied to.
    WeightedProportionalFair { weights: Vec<f64> },
}

impl Policy {
    pub fn weighted(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Domain(format!("policy weights must be > 0, got {w}")));
        }
        Ok(Self::WeightedProportionalFair { weights })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::UtilityProportionalFair => "upf",
            Self::WeightedProportionalFair { .. } => "wpf",
        }
    }

    /// The same policy restricted to the given UE indices.
    fn restrict(&self, members: &[usize]) -> Self {
        match self {
            Self::UtilityProportionalFair => Self::UtilityProportionalFair,
            Self::WeightedProportionalFair { weights } => Self::WeightedProportionalFair {
                weights: members.iter().map(|&i| weights[i]).collect(),
            },
        }
    }
}

/// One eNodeB: its block count and the UEs attached to it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub id: u32,
    pub resource_blocks: usize,
    pub ues: Vec<u32>,
}

/// Everything needed to schedule, or optimize, a single cell.
///
/// `ues[j]` is the scenario-wide index of the cell's `j`-th member; the
/// gain matrix and utility list use member order.
#[derive(Clone, Debug)]
pub struct CellInstance {
    pub cell_id: u32,
    pub ues: Vec<usize>,
    pub utilities: Vec<UtilityFunction>,
    pub gains: GainMatrix,
    pub eps: f64,
}

impl CellInstance {
    pub fn new(utilities: Vec<UtilityFunction>, gains: GainMatrix, eps: f64) -> Result<Self> {
        if utilities.len() != gains.ues() {
            return Err(Error::Structure(format!(
                "{} utilities for a gain matrix with {} rows",
                utilities.len(),
                gains.ues()
            )));
        }
        Ok(Self {
            cell_id: 0,
            ues: (0..utilities.len()).collect(),
            utilities,
            gains,
            eps,
        })
    }

    pub fn members(&self) -> usize {
        self.utilities.len()
    }

    pub fn blocks(&self) -> usize {
        self.gains.blocks()
    }

    /// `sum_i ln U_i(max(r_i, eps))` at the given assignment.
    pub fn objective(&self, phi: &Matrix) -> Result<Objective> {
        objective_at_rates(&rates_from_phi(phi, &self.gains)?, &self.utilities, self.eps)
    }

    /// `dL/dphi[i][z] = U_i'(r_i) H_iz / U_i(r_i)`, with the rate floor applied.
    pub fn gradient(&self, phi: &Matrix) -> Result<Matrix> {
        let rates = rates_from_phi(phi, &self.gains)?;
        let mut grad = Matrix::zeros(self.members(), self.blocks());
        for (i, (u, &r)) in self.utilities.iter().zip(&rates).enumerate() {
            let per_unit_gain = u.marginal_metric(r, 1.0, self.eps)?;
            for z in 0..self.blocks() {
                grad.set(i, z, per_unit_gain * self.gains.get(i, z));
            }
        }
        Ok(grad)
    }
}

/// Assignment fractions for one cell plus the frame counter and cached rates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleState {
    phi: Matrix,
    frame: u64,
    rates: Vec<f64>,
}

impl ScheduleState {
    /// All-zero fractions before the first frame.
    pub fn new(ues: usize, blocks: usize) -> Self {
        Self {
            phi: Matrix::zeros(ues, blocks),
            frame: 0,
            rates: vec![0.0; ues],
        }
    }

    pub fn from_phi(phi: Matrix, frame: u64, gains: &GainMatrix) -> Result<Self> {
        let rates = rates_from_phi(&phi, gains)?;
        Ok(Self { phi, frame, rates })
    }

    pub fn phi(&self) -> &Matrix {
        &self.phi
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn begin_frame(&mut self) {
        self.frame += 1;
    }

    /// Running-average update of block `z`'s column for the current frame.
    pub fn update_phi(&mut self, z: usize, winner: usize) -> Result<()> {
        if self.frame == 0 {
            return Err(Error::Structure("update before the first frame".into()));
        }
        if winner >= self.phi.rows() || z >= self.phi.cols() {
            return Err(Error::Structure(format!(
                "UE {winner} / block {z} outside a {}x{} schedule",
                self.phi.rows(),
                self.phi.cols()
            )));
        }
        let k = self.frame as f64;
        let keep = (k - 1.0) / k;
        for i in 0..self.phi.rows() {
            let mut v = keep * self.phi.get(i, z);
            if i == winner {
                v += 1.0 / k;
            }
            self.phi.set(i, z, v);
        }
        Ok(())
    }

    /// [`Self::update_phi`] followed by an incremental rate refresh.
    pub fn assign(&mut self, z: usize, winner: usize, gains: &GainMatrix) -> Result<()> {
        let before = self.phi.column(z);
        self.update_phi(z, winner)?;
        for (i, old) in before.into_iter().enumerate() {
            self.rates[i] += (self.phi.get(i, z) - old) * gains.get(i, z);
        }
        Ok(())
    }

    /// Recomputes the cached rates exactly from the fractions.
    pub fn refresh_rates(&mut self, gains: &GainMatrix) -> Result<()> {
        self.rates = rates_from_phi(&self.phi, gains)?;
        Ok(())
    }
}

/// `r_i = sum_z phi[i][z] * H[i][z]`.
pub fn rates_from_phi(phi: &Matrix, gains: &GainMatrix) -> Result<Vec<f64>> {
    if !phi.same_shape(gains.values()) {
        return Err(Error::Structure(format!(
            "assignment is {}x{} but gains are {}x{}",
            phi.rows(),
            phi.cols(),
            gains.ues(),
            gains.blocks()
        )));
    }
    Ok((0..phi.rows())
        .map(|i| {
            phi.row(i)
                .iter()
                .zip(gains.values().row(i))
                .map(|(p, h)| p * h)
                .sum()
        })
        .collect())
}

/// Picks the UE for block `z`. Ties go to the lowest index.
pub fn select_ue(
    policy: &Policy,
    state: &ScheduleState,
    gains: &GainMatrix,
    utilities: &[UtilityFunction],
    z: usize,
    eps: f64,
) -> Result<usize> {
    let members = state.rates.len();
    if members == 0 {
        return Err(Error::Structure("cannot schedule a block in an empty cell".into()));
    }
    if z >= gains.blocks() {
        return Err(Error::Structure(format!("block {z} outside 0..{}", gains.blocks())));
    }
    let mut best = 0;
    let mut best_metric = f64::NEG_INFINITY;
    for i in 0..members {
        let h = gains.get(i, z);
        let r = state.rates[i];
        let metric = match policy {
            Policy::UtilityProportionalFair => utilities[i].marginal_metric(r, h, eps)?,
            Policy::WeightedProportionalFair { weights } => weights[i] * h / r.max(eps),
        };
        if metric > best_metric {
            best = i;
            best_metric = metric;
        }
    }
    Ok(best)
}

/// Objective value together with a starvation flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Objective {
    pub value: f64,
    /// Some UE's rate was below the floor and its utility was evaluated at the floor.
    pub below_floor: bool,
}

pub fn objective_at_rates(rates: &[f64], utilities: &[UtilityFunction], eps: f64) -> Result<Objective> {
    let mut value = 0.0;
    let mut below_floor = false;
    for (u, &r) in utilities.iter().zip(rates) {
        below_floor |= r < eps;
        value += u.log_eval(r.max(eps))?;
    }
    Ok(Objective { value, below_floor })
}

pub fn objective(
    state: &ScheduleState,
    gains: &GainMatrix,
    utilities: &[UtilityFunction],
    eps: f64,
) -> Result<Objective> {
    objective_at_rates(&rates_from_phi(&state.phi, gains)?, utilities, eps)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub frame: u64,
    pub objective: f64,
    pub below_floor: bool,
    /// Rates of every UE in scenario order at the end of the frame.
    pub rates: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Keep the winner of every block of every frame.
    pub record_assignments: bool,
}

/// Result of one run. Equal inputs give bit-identical reports.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub policy: String,
    pub frames: u64,
    pub rates: Vec<f64>,
    /// Utility percentage per UE.
    pub qoe: Vec<f64>,
    pub objective: Objective,
    pub trace: Vec<TraceRow>,
    /// Final fractions, one matrix per cell in scenario order.
    pub phi: Vec<Matrix>,
    /// `assignments[frame][cell][block]` is the scenario-wide UE index.
    pub assignments: Option<Vec<Vec<Vec<u32>>>>,
    pub scenario_digest: String,
}

pub fn run_frames(scenario: &Scenario, frames: u64) -> Result<RunReport> {
    run_frames_with(scenario, frames, RunOptions::default())
}

pub fn run_frames_with(scenario: &Scenario, frames: u64, options: RunOptions) -> Result<RunReport> {
    if frames == 0 {
        return Err(Error::Validation(vec!["frame budget must be >= 1".into()]));
    }
    let instances = scenario.cell_instances()?;
    let policy = scenario.policy();
    let policies: Vec<Policy> = instances.iter().map(|c| policy.restrict(&c.ues)).collect();
    let mut states: Vec<ScheduleState> = instances
        .iter()
        .map(|c| ScheduleState::new(c.members(), c.blocks()))
        .collect();

    let utilities = scenario.utilities();
    let mut rates = vec![0.0; utilities.len()];
    let mut trace = Vec::with_capacity(frames as usize);
    let mut assignments = options.record_assignments.then(Vec::new);

    for _ in 0..frames {
        let mut frame_log = Vec::with_capacity(instances.len());
        for ((cell, state), cell_policy) in instances.iter().zip(&mut states).zip(&policies) {
            state.begin_frame();
            let mut winners = Vec::with_capacity(cell.blocks());
            for z in 0..cell.blocks() {
                let w = select_ue(cell_policy, state, &cell.gains, &cell.utilities, z, cell.eps)?;
                state.assign(z, w, &cell.gains)?;
                winners.push(cell.ues[w] as u32);
            }
            state.refresh_rates(&cell.gains)?;
            for (&global, &r) in cell.ues.iter().zip(state.rates()) {
                rates[global] = r;
            }
            frame_log.push(winners);
        }
        let obj = objective_at_rates(&rates, &utilities, scenario.eps())?;
        trace.push(TraceRow {
            frame: states[0].frame(),
            objective: obj.value,
            below_floor: obj.below_floor,
            rates: rates.clone(),
        });
        if let Some(log) = assignments.as_mut() {
            log.push(frame_log);
        }
    }

    let objective = objective_at_rates(&rates, &utilities, scenario.eps())?;
    Ok(RunReport {
        policy: policy.label().to_string(),
        frames,
        qoe: qoe(&utilities, &rates)?,
        rates,
        objective,
        trace,
        phi: states.into_iter().map(|s| s.phi).collect(),
        assignments,
        scenario_digest: scenario.digest(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::catalog;
    use approx::assert_relative_eq;

    const EPS: f64 = 1e-6;

    fn log3() -> UtilityFunction {
        UtilityFunction::logarithmic(3.0, 100.0).unwrap()
    }

    #[test]
    fn rates_from_zero_phi() {
        let g = GainMatrix::unity(3, 4).unwrap();
        assert_eq!(rates_from_phi(&Matrix::zeros(3, 4), &g).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn rates_single_ue_full_allocation() {
        let g = GainMatrix::unity(1, 7).unwrap();
        assert_eq!(rates_from_phi(&Matrix::filled(1, 7, 1.0), &g).unwrap(), vec![7.0]);
    }

    #[test]
    fn rates_hand_expansion() {
        let g = GainMatrix::explicit(&[vec![3.0, 5.0], vec![2.0, 7.0]]).unwrap();
        let phi = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(rates_from_phi(&phi, &g).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn rates_dimension_mismatch() {
        let g = GainMatrix::unity(2, 2).unwrap();
        assert!(matches!(rates_from_phi(&Matrix::zeros(2, 3), &g), Err(Error::Structure(_))));
    }

    #[test]
    fn select_tie_goes_to_lowest_index() {
        let g = GainMatrix::unity(2, 1).unwrap();
        let state = ScheduleState::from_phi(Matrix::from_rows(&[vec![0.5], vec![0.5]]).unwrap(), 3, &g).unwrap();
        let us = [log3(), log3()];
        assert_eq!(select_ue(&Policy::UtilityProportionalFair, &state, &g, &us, 0, EPS).unwrap(), 0);
        let eq = Policy::weighted(vec![1.0, 1.0]).unwrap();
        assert_eq!(select_ue(&eq, &state, &g, &us, 0, EPS).unwrap(), 0);
    }

    #[test]
    fn select_weighted_dominant_weight() {
        let g = GainMatrix::unity(2, 1).unwrap();
        let state = ScheduleState::from_phi(Matrix::from_rows(&[vec![0.5], vec![0.5]]).unwrap(), 3, &g).unwrap();
        let p = Policy::weighted(vec![1.0, 10.0]).unwrap();
        assert_eq!(select_ue(&p, &state, &g, &[log3(), log3()], 0, EPS).unwrap(), 1);
    }

    #[test]
    fn select_utility_prefers_starved_log_user() {
        // Rates 10 and 50 over 60 blocks with unity gains.
        let g = GainMatrix::unity(2, 60).unwrap();
        let mut phi = Matrix::zeros(2, 60);
        for z in 0..60 {
            let first = if z < 10 { 1.0 } else { 0.0 };
            phi.set(0, z, first);
            phi.set(1, z, 1.0 - first);
        }
        let state = ScheduleState::from_phi(phi, 5, &g).unwrap();
        assert_eq!(state.rates(), &[10.0, 50.0]);
        let us = [log3(), log3()];
        // Metrics 0.02818 vs 0.00396.
        assert_eq!(select_ue(&Policy::UtilityProportionalFair, &state, &g, &us, 0, EPS).unwrap(), 0);

        // Swap roles to rule out the tie-break doing the work.
        let mut swapped = Matrix::zeros(2, 60);
        for z in 0..60 {
            swapped.set(0, z, state.phi().get(1, z));
            swapped.set(1, z, state.phi().get(0, z));
        }
        let state = ScheduleState::from_phi(swapped, 5, &g).unwrap();
        assert_eq!(select_ue(&Policy::UtilityProportionalFair, &state, &g, &us, 0, EPS).unwrap(), 1);
    }

    #[test]
    fn select_rejects_empty_cell() {
        let g = GainMatrix::unity(1, 1).unwrap();
        let state = ScheduleState::new(0, 1);
        assert!(select_ue(&Policy::UtilityProportionalFair, &state, &g, &[], 0, EPS).is_err());
    }

    #[test]
    fn first_frame_update_is_indicator() {
        let mut s = ScheduleState::from_phi(
            Matrix::from_rows(&[vec![0.3], vec![0.7], vec![0.0]]).unwrap(),
            0,
            &GainMatrix::unity(3, 1).unwrap(),
        )
        .unwrap();
        s.begin_frame();
        s.update_phi(0, 2).unwrap();
        assert_eq!(s.phi().column(0), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn update_preserves_column_sum() {
        let mut s = ScheduleState::from_phi(
            Matrix::from_rows(&[vec![0.25], vec![0.75]]).unwrap(),
            6,
            &GainMatrix::unity(2, 1).unwrap(),
        )
        .unwrap();
        s.begin_frame();
        s.update_phi(0, 0).unwrap();
        let col = s.phi().column(0);
        assert_relative_eq!(col[0], 6.0 / 7.0 * 0.25 + 1.0 / 7.0, max_relative = 1e-15);
        assert_relative_eq!(col.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn scheduled_every_frame_reaches_one() {
        let mut s = ScheduleState::new(2, 1);
        for _ in 0..2 {
            s.begin_frame();
            s.update_phi(0, 1).unwrap();
        }
        assert_eq!(s.phi().column(0), vec![0.0, 1.0]);
    }

    #[test]
    fn update_before_first_frame_fails() {
        let mut s = ScheduleState::new(2, 1);
        assert!(s.update_phi(0, 0).is_err());
    }

    #[test]
    fn objective_values() {
        let g = GainMatrix::unity(1, 100).unwrap();
        let s = ScheduleState::from_phi(Matrix::filled(1, 100, 1.0), 1, &g).unwrap();
        let obj = objective(&s, &g, &[catalog::ELASTIC_FAST], EPS).unwrap();
        assert_eq!(obj.value, 0.0);
        assert!(!obj.below_floor);

        let g2 = GainMatrix::unity(2, 100).unwrap();
        let full = ScheduleState::from_phi(Matrix::filled(2, 100, 0.5), 1, &g2).unwrap();
        let sat = UtilityFunction::logarithmic(2.0, 50.0).unwrap();
        assert_relative_eq!(objective(&full, &g2, &[sat, sat], EPS).unwrap().value, 0.0, epsilon = 1e-15);
        let short = UtilityFunction::logarithmic(2.0, 80.0).unwrap();
        assert!(objective(&full, &g2, &[sat, short], EPS).unwrap().value < 0.0);
    }

    #[test]
    fn objective_flags_starvation() {
        let g = GainMatrix::unity(2, 1).unwrap();
        let s = ScheduleState::from_phi(Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap(), 1, &g).unwrap();
        let obj = objective(&s, &g, &[log3(), log3()], EPS).unwrap();
        assert!(obj.below_floor);
        assert!(obj.value.is_finite());
    }

    #[test]
    fn objective_equal_split_reference_six() {
        let g = GainMatrix::unity(6, 100).unwrap();
        let s = ScheduleState::from_phi(Matrix::filled(6, 100, 1.0 / 6.0), 1, &g).unwrap();
        let obj = objective(&s, &g, &catalog::REFERENCE_SIX, EPS).unwrap();
        let expected: f64 = catalog::REFERENCE_SIX
            .iter()
            .map(|u| u.eval(100.0 / 6.0).unwrap().ln())
            .sum();
        assert_relative_eq!(obj.value, expected, max_relative = 1e-12);
        assert!(obj.value < 0.0 && obj.value.is_finite());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let us = vec![catalog::VOIP, catalog::ELASTIC_MEDIUM, UtilityFunction::sigmoidal(1.0, 3.0).unwrap()];
        let gains = GainMatrix::seeded_random(3, 4, 11, 0.5, 2.0).unwrap();
        let inst = CellInstance::new(us, gains, EPS).unwrap();
        let mut rng = crate::channel::SplitMix64::new(3);
        for _ in 0..20 {
            let mut phi = Matrix::zeros(3, 4);
            for z in 0..4 {
                let raw: Vec<f64> = (0..3).map(|_| rng.uniform(0.05, 1.0)).collect();
                let total: f64 = raw.iter().sum();
                for (i, v) in raw.iter().enumerate() {
                    phi.set(i, z, v / total);
                }
            }
            let grad = inst.gradient(&phi).unwrap();
            for i in 0..3 {
                for z in 0..4 {
                    let h = 1e-6;
                    let mut up = phi.clone();
                    up.set(i, z, phi.get(i, z) + h);
                    let mut down = phi.clone();
                    down.set(i, z, phi.get(i, z) - h);
                    let fd = (inst.objective(&up).unwrap().value - inst.objective(&down).unwrap().value) / (2.0 * h);
                    let rel = ((grad.get(i, z) - fd) / grad.get(i, z)).abs();
                    assert!(rel < 1e-5, "({i},{z}): analytic {} fd {fd}", grad.get(i, z));
                }
            }
        }
    }
}
