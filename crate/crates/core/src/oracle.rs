//! Offline solution of the scheduling program
//!
//! ```text
//! maximize    sum_i ln U_i(sum_z phi[i][z] H[i][z])
//! subject to  sum_i phi[i][z] = 1,  phi >= 0     for every block z
//! ```
//!
//! by projected gradient ascent, plus a grid search and a first-order
//! optimality check used to certify both the solver and the online scheduler.

use serde::Serialize;

use crate::engine::{rates_from_phi, CellInstance};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scenario::Scenario;
use crate::channel::GainMatrix;
use crate::utility::UtilityFunction;

/// UEs with a fraction at or below this are treated as off the support.
pub const DEFAULT_SUPPORT_TOL: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: usize = 100_000;

pub const BRUTE_FORCE_MAX_UES: usize = 3;
pub const BRUTE_FORCE_MAX_BLOCKS: usize = 2;
/// Upper bound on grid points evaluated by one brute-force search.
pub const BRUTE_FORCE_MAX_POINTS: u64 = 50_000_000;

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-30;
const MAX_STEP: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleSolution {
    /// Optimal fractions, one matrix per cell.
    pub phi_star: Vec<Matrix>,
    pub l_star: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl OracleSolution {
    fn merge(parts: Vec<OracleSolution>) -> Self {
        Self {
            l_star: parts.iter().map(|p| p.l_star).sum(),
            kkt_residual: parts.iter().map(|p| p.kkt_residual).fold(0.0, f64::max),
            iterations: parts.iter().map(|p| p.iterations).sum(),
            converged: parts.iter().all(|p| p.converged),
            phi_star: parts.into_iter().flat_map(|p| p.phi_star).collect(),
        }
    }
}

/// Euclidean projection onto `{x >= 0, sum x = 1}` by the sorted-threshold method.
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Structure("cannot project an empty vector".into()));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("cannot project non-finite entry {x}")));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &s) in sorted.iter().enumerate() {
        cumulative += s;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if s - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    Ok(v.iter().map(|x| (x - theta).max(0.0)).collect())
}

fn project_columns(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for z in 0..m.cols() {
        out.set_column(z, &project_simplex(&m.column(z))?);
    }
    Ok(out)
}

/// First-order optimality gap on the support of `phi`.
///
/// For each block, every UE holding more than `support_tol` of it must have
/// the block's largest metric `U'(r) H / U(r)`. Returns the worst relative
/// shortfall `(m* - m_i) / m*` over all blocks; zero at an exact optimum.
pub fn kkt_residual(
    phi: &Matrix,
    gains: &GainMatrix,
    utilities: &[UtilityFunction],
    support_tol: f64,
    eps: f64,
) -> Result<f64> {
    let rates = rates_from_phi(phi, gains)?;
    let per_unit: Vec<f64> = utilities
        .iter()
        .zip(&rates)
        .map(|(u, &r)| u.marginal_metric(r, 1.0, eps))
        .collect::<Result<_>>()?;
    let mut residual: f64 = 0.0;
    for z in 0..phi.cols() {
        let metrics: Vec<f64> = (0..phi.rows()).map(|i| per_unit[i] * gains.get(i, z)).collect();
        let best = metrics.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if best <= 0.0 {
            continue;
        }
        for (i, m) in metrics.iter().enumerate() {
            if phi.get(i, z) > support_tol {
                residual = residual.max((best - m) / best);
            }
        }
    }
    Ok(residual)
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    /// Stop once an accepted step improves the objective by less than this.
    pub tol: f64,
    pub max_iters: usize,
    pub support_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            support_tol: DEFAULT_SUPPORT_TOL,
        }
    }
}

/// Projected gradient ascent with Armijo backtracking, from the uniform split.
pub fn solve_cell(cell: &CellInstance, opts: &SolveOptions) -> Result<OracleSolution> {
    let (m, z) = (cell.members(), cell.blocks());
    if m == 0 {
        return Err(Error::Structure(format!("cell {} has no UEs", cell.cell_id)));
    }
    let mut phi = Matrix::filled(m, z, 1.0 / m as f64);
    let mut value = cell.objective(&phi)?.value;
    let mut step: f64 = 1.0;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < opts.max_iters {
        iterations += 1;
        let grad = cell.gradient(&phi)?;
        let mut t = (2.0 * step).min(MAX_STEP);
        loop {
            let mut trial = phi.clone();
            for i in 0..m {
                for b in 0..z {
                    trial.set(i, b, phi.get(i, b) + t * grad.get(i, b));
                }
            }
            let trial = project_columns(&trial)?;
            let ascent: f64 = trial
                .as_slice()
                .iter()
                .zip(phi.as_slice())
                .zip(grad.as_slice())
                .map(|((n, o), g)| (n - o) * g)
                .sum();
            if ascent <= 0.0 {
                // Projected gradient vanished: stationary.
                converged = true;
                break 'outer;
            }
            let trial_value = cell.objective(&trial)?.value;
            if trial_value >= value + ARMIJO * ascent {
                let gain = trial_value - value;
                phi = trial;
                value = trial_value;
                step = t;
                if gain < opts.tol {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            t *= 0.5;
            if t < MIN_STEP {
                converged = true;
                break 'outer;
            }
        }
    }

    let kkt = kkt_residual(&phi, &cell.gains, &cell.utilities, opts.support_tol, cell.eps)?;
    Ok(OracleSolution {
        phi_star: vec![phi],
        l_star: value,
        kkt_residual: kkt,
        iterations,
        converged,
    })
}

/// Global optimum of every cell of the scenario.
pub fn solve_optimal_phi(scenario: &Scenario, tol: f64, max_iters: usize) -> Result<OracleSolution> {
    let opts = SolveOptions {
        tol,
        max_iters,
        ..SolveOptions::default()
    };
    let parts = scenario
        .cell_instances()?
        .iter()
        .map(|c| solve_cell(c, &opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleSolution::merge(parts))
}

/// All ways to split `units` grid steps among `parts` UEs.
fn compositions(units: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![units]];
    }
    let mut out = Vec::new();
    for first in (0..=units).rev() {
        for mut rest in compositions(units - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, j| acc.saturating_mul(n - j) / (j + 1))
}

fn grid_units(grid_step: f64) -> Result<usize> {
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::Range(format!("grid step must be in (0, 1], got {grid_step}")));
    }
    let units = (1.0 / grid_step).round();
    if (units * grid_step - 1.0).abs() > 1e-9 {
        return Err(Error::Range(format!("grid step {grid_step} does not divide 1")));
    }
    Ok(units as usize)
}

/// Exhaustive search over the simplex grid of each block.
pub fn brute_force_cell(cell: &CellInstance, grid_step: f64) -> Result<OracleSolution> {
    let (m, z) = (cell.members(), cell.blocks());
    if m > BRUTE_FORCE_MAX_UES || z > BRUTE_FORCE_MAX_BLOCKS {
        return Err(Error::TooLarge(format!(
            "{m} UEs x {z} blocks exceeds the limit of {BRUTE_FORCE_MAX_UES} UEs x {BRUTE_FORCE_MAX_BLOCKS} blocks"
        )));
    }
    let units = grid_units(grid_step)?;
    let per_block = binomial((units + m - 1) as u64, (m - 1) as u64);
    let total = (0..z).fold(1u64, |acc, _| acc.saturating_mul(per_block));
    if total > BRUTE_FORCE_MAX_POINTS {
        return Err(Error::TooLarge(format!(
            "{total} grid points exceeds the limit of {BRUTE_FORCE_MAX_POINTS}"
        )));
    }

    let splits = compositions(units, m);
    let fractions: Vec<Vec<f64>> = splits
        .iter()
        .map(|s| s.iter().map(|&c| c as f64 / units as f64).collect())
        .collect();
    // contribution[b][p][i]: rate UE i gets from block b under split p.
    let contribution: Vec<Vec<Vec<f64>>> = (0..z)
        .map(|b| {
            fractions
                .iter()
                .map(|f| (0..m).map(|i| f[i] * cell.gains.get(i, b)).collect())
                .collect()
        })
        .collect();

    let mut choice = vec![0usize; z];
    let mut best_choice = choice.clone();
    let mut best_value = f64::NEG_INFINITY;
    let mut evaluated = 0usize;
    let mut rates = vec![0.0; m];
    loop {
        rates.iter_mut().for_each(|r| *r = 0.0);
        for (b, &p) in choice.iter().enumerate() {
            for (r, c) in rates.iter_mut().zip(&contribution[b][p]) {
                *r += c;
            }
        }
        let mut value = 0.0;
        for (u, &r) in cell.utilities.iter().zip(&rates) {
            value += u.log_eval(r.max(cell.eps))?;
        }
        evaluated += 1;
        if value > best_value {
            best_value = value;
            best_choice.copy_from_slice(&choice);
        }
        // Odometer over blocks.
        let mut b = 0;
        loop {
            if b == z {
                let mut phi = Matrix::zeros(m, z);
                for (blk, &p) in best_choice.iter().enumerate() {
                    phi.set_column(blk, &fractions[p]);
                }
                let kkt = kkt_residual(&phi, &cell.gains, &cell.utilities, DEFAULT_SUPPORT_TOL, cell.eps)?;
                return Ok(OracleSolution {
                    phi_star: vec![phi],
                    l_star: best_value,
                    kkt_residual: kkt,
                    iterations: evaluated,
                    converged: true,
                });
            }
            choice[b] += 1;
            if choice[b] < splits.len() {
                break;
            }
            choice[b] = 0;
            b += 1;
        }
    }
}

pub fn brute_force_phi(scenario: &Scenario, grid_step: f64) -> Result<OracleSolution> {
    let parts = scenario
        .cell_instances()?
        .iter()
        .map(|c| brute_force_cell(c, grid_step))
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleSolution::merge(parts))
}

/// Largest objective change from moving one grid step of a block between two
/// UEs, starting at `phi`. Bounds how far a grid optimum can sit from the
/// continuous one.
pub fn grid_cell_variation(cell: &CellInstance, phi: &Matrix, grid_step: f64) -> Result<f64> {
    let base = cell.objective(phi)?.value;
    let mut worst: f64 = 0.0;
    for b in 0..phi.cols() {
        for from in 0..phi.rows() {
            if phi.get(from, b) < grid_step - 1e-12 {
                continue;
            }
            for to in (0..phi.rows()).filter(|&t| t != from) {
                let mut moved = phi.clone();
                moved.set(from, b, (phi.get(from, b) - grid_step).max(0.0));
                moved.set(to, b, phi.get(to, b) + grid_step);
                worst = worst.max((cell.objective(&moved)?.value - base).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::SplitMix64;
    use crate::utility::catalog;
    use approx::assert_relative_eq;

    const EPS: f64 = 1e-6;

    fn instance(us: Vec<UtilityFunction>, gains: GainMatrix) -> CellInstance {
        CellInstance::new(us, gains, EPS).unwrap()
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]).unwrap(), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let half = project_simplex(&[0.6, 0.6]).unwrap();
        assert_relative_eq!(half[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(half[1], 0.5, epsilon = 1e-15);
        assert_eq!(project_simplex(&[-3.0]).unwrap(), vec![1.0]);
        assert!(matches!(project_simplex(&[]), Err(Error::Structure(_))));
        assert!(project_simplex(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn projection_is_nearest_point() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..50 {
            let n = rng.range_inclusive(1, 6);
            let v: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let p = project_simplex(&v).unwrap();
            assert!(p.iter().all(|&x| x >= 0.0));
            assert_relative_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            let dist = |x: &[f64]| x.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = dist(&p);
            for _ in 0..1000 {
                let raw: Vec<f64> = (0..n).map(|_| -rng.next_unit().max(1e-300).ln()).collect();
                let s: f64 = raw.iter().sum();
                let q: Vec<f64> = raw.iter().map(|x| x / s).collect();
                assert!(dist(&q) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn kkt_trivial_cases() {
        let g = GainMatrix::unity(1, 3).unwrap();
        let phi = Matrix::filled(1, 3, 1.0);
        assert_eq!(kkt_residual(&phi, &g, &[catalog::VOIP], 1e-6, EPS).unwrap(), 0.0);

        let g = GainMatrix::unity(2, 1).unwrap();
        let phi = Matrix::from_rows(&[vec![0.5], vec![0.5]]).unwrap();
        let u = catalog::ELASTIC_MEDIUM;
        assert_eq!(kkt_residual(&phi, &g, &[u, u], 1e-6, EPS).unwrap(), 0.0);
    }

    #[test]
    fn kkt_detects_suboptimal_split() {
        let g = GainMatrix::unity(2, 1).unwrap();
        let phi = Matrix::from_rows(&[vec![0.9], vec![0.1]]).unwrap();
        let u = catalog::ELASTIC_MEDIUM;
        assert!(kkt_residual(&phi, &g, &[u, u], 1e-6, EPS).unwrap() > 0.1);
        // Off-support UEs are ignored.
        let phi = Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let big = UtilityFunction::logarithmic(1.0, 1.0).unwrap();
        assert!(kkt_residual(&phi, &GainMatrix::explicit(&[vec![5.0], vec![0.0]]).unwrap(), &[big, big], 1e-6, EPS).unwrap() == 0.0);
    }

    #[test]
    fn solver_single_ue() {
        let g = GainMatrix::explicit(&[vec![2.0, 0.5, 1.0]]).unwrap();
        let sol = solve_cell(&instance(vec![catalog::HD_VIDEO], g), &SolveOptions::default()).unwrap();
        assert_eq!(sol.phi_star[0].as_slice(), &[1.0, 1.0, 1.0]);
        assert_relative_eq!(sol.l_star, catalog::HD_VIDEO.log_eval(3.5).unwrap(), max_relative = 1e-14);
        assert!(sol.converged);
    }

    #[test]
    fn solver_symmetric_pair() {
        let u = catalog::SD_VIDEO;
        let sol = solve_cell(&instance(vec![u, u], GainMatrix::unity(2, 1).unwrap()), &SolveOptions::default()).unwrap();
        assert_relative_eq!(sol.phi_star[0].get(0, 0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(sol.phi_star[0].get(1, 0), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn solver_matches_grid_on_mixed_pair() {
        let us = vec![
            UtilityFunction::logarithmic(3.0, 100.0).unwrap(),
            UtilityFunction::sigmoidal(1.0, 30.0).unwrap(),
        ];
        let cell = instance(us, GainMatrix::explicit(&[vec![100.0], vec![100.0]]).unwrap());
        let sol = solve_cell(&cell, &SolveOptions::default()).unwrap();
        let grid = brute_force_cell(&cell, 0.001).unwrap();
        assert!(sol.converged);
        assert!((sol.phi_star[0].get(0, 0) - grid.phi_star[0].get(0, 0)).abs() <= 1e-3);
        assert!(sol.l_star >= grid.l_star - 1e-12);
        assert!(sol.kkt_residual < 1e-4, "kkt {}", sol.kkt_residual);
    }

    #[test]
    fn brute_force_single_ue_and_counts() {
        let cell = instance(vec![catalog::VOIP], GainMatrix::unity(1, 2).unwrap());
        let sol = brute_force_cell(&cell, 0.1).unwrap();
        assert_eq!(sol.phi_star[0].as_slice(), &[1.0, 1.0]);
        assert_eq!(sol.iterations, 1);

        let u = catalog::ELASTIC_SLOW;
        let pair = instance(vec![u, u], GainMatrix::unity(2, 1).unwrap());
        let sol = brute_force_cell(&pair, 0.5).unwrap();
        assert_eq!(sol.iterations, 3);
        assert_eq!(sol.phi_star[0].column(0), vec![0.5, 0.5]);

        let sol = brute_force_cell(&pair, 0.001).unwrap();
        assert_eq!(sol.iterations, 1001);
        assert_relative_eq!(sol.phi_star[0].get(0, 0), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn brute_force_refuses_large_instances() {
        let u = catalog::ELASTIC_SLOW;
        let wide = instance(vec![u, u], GainMatrix::unity(2, 3).unwrap());
        let Err(Error::TooLarge(msg)) = brute_force_cell(&wide, 0.1) else {
            panic!("expected refusal");
        };
        assert!(msg.contains("3 UEs x 2 blocks"));
        let many = instance(vec![u; 4], GainMatrix::unity(4, 1).unwrap());
        assert!(matches!(brute_force_cell(&many, 0.1), Err(Error::TooLarge(_))));
        let dense = instance(vec![u; 3], GainMatrix::unity(3, 2).unwrap());
        assert!(matches!(brute_force_cell(&dense, 0.001), Err(Error::TooLarge(_))));
        assert!(brute_force_cell(&dense, 0.05).is_ok());
    }

    #[test]
    fn grid_step_must_divide_one() {
        let cell = instance(vec![catalog::VOIP], GainMatrix::unity(1, 1).unwrap());
        assert!(matches!(brute_force_cell(&cell, 0.3), Err(Error::Range(_))));
        assert!(brute_force_cell(&cell, 0.0).is_err());
    }

    #[test]
    fn compositions_count() {
        assert_eq!(compositions(4, 1), vec![vec![4]]);
        assert_eq!(compositions(10, 3).len() as u64, binomial(12, 2));
        assert!(compositions(5, 3).iter().all(|c| c.iter().sum::<usize>() == 5));
    }
}
