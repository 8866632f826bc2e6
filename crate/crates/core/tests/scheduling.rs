mod common;

use rbsched_core::engine::{rates_from_phi, run_frames_with, RunOptions};
use rbsched_core::oracle::{solve_cell, SolveOptions};
use rbsched_core::scenario::PolicyKind;
use rbsched_core::utility::catalog;
use rbsched_core::{parse_scenario, run_frames, GainModel, Scenario, SplitMix64};

fn tail_spread(trace: &[f64]) -> f64 {
    let tail = &trace[trace.len() - trace.len() / 10..];
    let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

fn objective_trace(report: &rbsched_core::RunReport) -> Vec<f64> {
    report.trace.iter().map(|t| t.objective).collect()
}

#[test]
fn lone_ue_owns_every_block() {
    let gains = vec![vec![0.7, 1.3, 2.0]];
    for policy in [PolicyKind::Upf, PolicyKind::Wpf] {
        let s = Scenario::single_cell(&[catalog::HD_VIDEO], 3, GainModel::Explicit { values: gains.clone() }, policy, 0)
            .unwrap();
        let report = run_frames(&s, 50).unwrap();
        assert!((report.rates[0] - 4.0).abs() < 1e-12);
        assert!(report.phi[0].as_slice().iter().all(|&p| p == 1.0));
    }
}

#[test]
fn weighted_fixed_point_under_equal_gains() {
    // Closed form r_i = Z w_i / sum(w); small enough to check by simulation.
    let us = [catalog::VOIP, catalog::ELASTIC_FAST, catalog::ELASTIC_SLOW];
    let weights = [1.0, 2.0, 3.0];
    let s = Scenario::single_cell(&us, 4, GainModel::Unity, PolicyKind::Wpf, 0)
        .unwrap()
        .with_weights(&weights)
        .unwrap();
    let report = run_frames(&s, 20_000).unwrap();
    for (r, w) in report.rates.iter().zip(weights) {
        let expected = 4.0 * w / 6.0;
        assert!(((r - expected) / expected).abs() < 0.01, "rate {r} vs {expected}");
    }
}

#[test]
fn objective_trace_settles() {
    let mut rng = SplitMix64::new(99);
    let mut scenarios = vec![Scenario::reference()];
    for n in 0..5 {
        scenarios.push(common::random_instance(&mut rng, 3, 4, n));
    }
    for s in scenarios {
        for policy in [PolicyKind::Upf, PolicyKind::Wpf] {
            let report = run_frames(&s.clone().with_policy(policy), 10_000).unwrap();
            let spread = tail_spread(&objective_trace(&report));
            assert!(spread < 1e-3, "tail spread {spread} under {policy:?}");
        }
    }
}

#[test]
fn reference_run_reaches_optimum() {
    let s = Scenario::reference();
    let report = run_frames(&s, s.frames()).unwrap();
    let oracle = solve_cell(&s.cell_instances().unwrap()[0], &SolveOptions::default()).unwrap();
    assert!(oracle.converged);
    assert!((report.objective.value - oracle.l_star).abs() < 1e-3);
    // Sigmoidal users are favored: every real-time UE ends above every elastic one.
    let worst_realtime = report.qoe[..3].iter().copied().fold(f64::INFINITY, f64::min);
    let best_elastic = report.qoe[3..].iter().copied().fold(0.0, f64::max);
    assert!(worst_realtime > best_elastic);
}

#[test]
fn cached_rates_match_recomputation() {
    let mut rng = SplitMix64::new(4);
    let s = common::random_instance(&mut rng, 3, 4, 1);
    let report = run_frames(&s, 777).unwrap();
    let cell = &s.cell_instances().unwrap()[0];
    let fresh = rates_from_phi(&report.phi[0], &cell.gains).unwrap();
    for (a, b) in fresh.iter().zip(&report.rates) {
        assert!((a - b).abs() <= 1e-12);
    }
    let last = report.trace.last().unwrap();
    assert_eq!(last.rates, report.rates);
    assert_eq!(last.frame, 777);
}

#[test]
fn cells_are_scheduled_independently() {
    let text = include_str!("../../../scenarios/two_cells_random.json");
    let both = parse_scenario(text).unwrap();
    let joint = run_frames(&both, 3_000).unwrap();
    let instances = both.cell_instances().unwrap();
    let oracle = rbsched_core::solve_optimal_phi(&both, 1e-12, 100_000).unwrap();
    assert_eq!(oracle.phi_star.len(), 2);
    assert!((joint.objective.value - oracle.l_star).abs() < 1e-2);

    for (c, cell) in instances.iter().enumerate() {
        let alone = Scenario::single_cell(
            &cell.utilities,
            cell.blocks(),
            GainModel::Explicit { values: cell.gains.values().to_rows() },
            PolicyKind::Upf,
            0,
        )
        .unwrap();
        let solo = run_frames(&alone, 3_000).unwrap();
        assert_eq!(solo.phi[0], joint.phi[c]);
        for (j, &global) in cell.ues.iter().enumerate() {
            assert_eq!(solo.rates[j], joint.rates[global]);
        }
    }
}

#[test]
fn assignment_log_shape_and_start() {
    let s = Scenario::reference();
    let report = run_frames_with(&s, 5, RunOptions { record_assignments: true }).unwrap();
    let log = report.assignments.as_ref().unwrap();
    assert_eq!(log.len(), 5);
    assert!(log.iter().all(|f| f.len() == 1 && f[0].len() == 100));
    // From the all-zero start every UE sits at the floor, where the metric is
    // about (1/eps)(1 + a/2 eps) for sigmoids and (1/eps)(1 - k/2 eps) for
    // logarithmic utilities. Each winner leaves the floor after its block.
    assert_eq!(&log[0][0][..6], &[0, 1, 2, 5, 4, 3]);
    assert!(run_frames(&s, 5).unwrap().assignments.is_none());
}

#[test]
fn zero_frames_is_rejected() {
    assert!(run_frames(&Scenario::reference(), 0).is_err());
}
