//! Experiment orchestration and CSV output.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::engine::{run_frames_with, RunOptions, RunReport};
use crate::error::{Error, Result};
use crate::scenario::{PolicyKind, Scenario};
use crate::utility::UtilityFunction;

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";

/// Quality of experience as utility percentage, `100 * U_i(r_i)`.
pub fn qoe(utilities: &[UtilityFunction], rates: &[f64]) -> Result<Vec<f64>> {
    if utilities.len() != rates.len() {
        return Err(Error::Structure(format!(
            "{} utilities for {} rates",
            utilities.len(),
            rates.len()
        )));
    }
    utilities
        .iter()
        .zip(rates)
        .map(|(u, &r)| Ok(100.0 * u.eval(r)?))
        .collect()
}

/// Named scheduling policies accepted on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyPreset {
    /// Utility proportional fairness.
    Upf,
    /// Weighted proportional fairness with the scenario's own weights.
    Wpf,
    /// Weighted proportional fairness, all weights 1.
    WpfEqual,
    /// Weighted proportional fairness, weight 10 for sigmoidal (real-time)
    /// UEs and 1 for logarithmic (elastic) UEs.
    Wpf10To1,
}

impl PolicyPreset {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Upf => "upf",
            Self::Wpf => "wpf",
            Self::WpfEqual => "wpf-equal",
            Self::Wpf10To1 => "wpf-10-1",
        }
    }

    /// The scenario with this policy and, where the preset fixes them, its weights.
    pub fn apply(&self, scenario: &Scenario) -> Result<Scenario> {
        let s = scenario.clone();
        match self {
            Self::Upf => Ok(s.with_policy(PolicyKind::Upf)),
            Self::Wpf => Ok(s.with_policy(PolicyKind::Wpf)),
            Self::WpfEqual => {
                let ones = vec![1.0; s.ues().len()];
                Ok(s.with_weights(&ones)?.with_policy(PolicyKind::Wpf))
            }
            Self::Wpf10To1 => {
                let w: Vec<f64> = s
                    .ues()
                    .iter()
                    .map(|u| if u.utility.is_sigmoidal() { 10.0 } else { 1.0 })
                    .collect();
                Ok(s.with_weights(&w)?.with_policy(PolicyKind::Wpf))
            }
        }
    }

    pub fn parse_list(list: &str) -> Result<Vec<Self>> {
        list.split(',').map(|p| p.trim().parse()).collect()
    }
}

impl FromStr for PolicyPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upf" => Ok(Self::Upf),
            "wpf" => Ok(Self::Wpf),
            "wpf-equal" => Ok(Self::WpfEqual),
            "wpf-10-1" => Ok(Self::Wpf10To1),
            other => Err(Error::Validation(vec![format!(
                "unknown policy `{other}` (expected upf, wpf, wpf-equal or wpf-10-1)"
            )])),
        }
    }
}

impl fmt::Display for PolicyPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub report: RunReport,
    pub wall_clock: Duration,
}

/// Runs the scenario for its frame budget and, if `out_dir` is given,
/// writes `trace.csv` and `summary.csv` there.
pub fn run_experiment(scenario: &Scenario, out_dir: Option<&Path>) -> Result<Experiment> {
    let start = Instant::now();
    let report = run_frames_with(scenario, scenario.frames(), RunOptions::default())?;
    let wall_clock = start.elapsed();
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        write_trace_csv(&report, &dir.join(TRACE_FILE))?;
        write_summary_csv(scenario, &report, &dir.join(SUMMARY_FILE))?;
    }
    Ok(Experiment { report, wall_clock })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub objective: f64,
    pub below_floor: bool,
    pub rates: Vec<f64>,
    pub qoe: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, policy: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }
}

/// Runs every policy on the same scenario, one thread per policy.
///
/// With an output directory, each policy's trace and summary go to a
/// subdirectory named after the policy, and `comparison.csv` holds one row
/// per policy.
pub fn compare_policies(scenario: &Scenario, presets: &[PolicyPreset], out_dir: Option<&Path>) -> Result<Comparison> {
    if presets.len() < 2 {
        return Err(Error::Validation(vec!["compare needs at least two policies".into()]));
    }
    let variants = presets
        .iter()
        .map(|p| p.apply(scenario))
        .collect::<Result<Vec<_>>>()?;
    let dirs: Vec<Option<PathBuf>> = presets
        .iter()
        .enumerate()
        .map(|(n, p)| {
            out_dir.map(|d| {
                // Duplicates get a positional suffix so runs never share files.
                if presets[..n].contains(p) {
                    d.join(format!("{}-{n}", p.label()))
                } else {
                    d.join(p.label())
                }
            })
        })
        .collect();

    let results: Vec<Result<Experiment>> = std::thread::scope(|scope| {
        let handles: Vec<_> = variants
            .iter()
            .zip(&dirs)
            .map(|(s, d)| scope.spawn(move || run_experiment(s, d.as_deref())))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect()
    });

    let mut rows = Vec::with_capacity(presets.len());
    for (preset, result) in presets.iter().zip(results) {
        let report = result?.report;
        rows.push(ComparisonRow {
            policy: preset.label().to_string(),
            objective: report.objective.value,
            below_floor: report.objective.below_floor,
            rates: report.rates,
            qoe: report.qoe,
        });
    }
    let comparison = Comparison { rows };
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        write_comparison_csv(scenario, &comparison, &dir.join(COMPARISON_FILE))?;
    }
    Ok(comparison)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn write_rows<I>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv_writer(path)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `frame,L,rate_ue0,...,rate_ue{M-1}`, one row per frame.
pub fn write_trace_csv(report: &RunReport, path: &Path) -> Result<()> {
    let ues = report.rates.len();
    let header = ["frame".to_string(), "L".to_string()]
        .into_iter()
        .chain((0..ues).map(|i| format!("rate_ue{i}")))
        .collect();
    let body = report.trace.iter().map(|row| {
        [row.frame.to_string(), row.objective.to_string()]
            .into_iter()
            .chain(row.rates.iter().map(f64::to_string))
            .collect()
    });
    write_rows(path, std::iter::once(header).chain(body))
}

/// `ue,utility_kind,params,rate,qoe`, one row per UE.
pub fn write_summary_csv(scenario: &Scenario, report: &RunReport, path: &Path) -> Result<()> {
    let header = ["ue", "utility_kind", "params", "rate", "qoe"]
        .map(String::from)
        .to_vec();
    let body = scenario.ues().iter().enumerate().map(|(i, ue)| {
        vec![
            ue.id.to_string(),
            ue.utility.kind().to_string(),
            ue.utility.params(),
            report.rates[i].to_string(),
            report.qoe[i].to_string(),
        ]
    });
    write_rows(path, std::iter::once(header).chain(body))
}

/// `policy,L,qoe_ue0,...`, one row per policy.
pub fn write_comparison_csv(scenario: &Scenario, comparison: &Comparison, path: &Path) -> Result<()> {
    let header = ["policy".to_string(), "L".to_string()]
        .into_iter()
        .chain(scenario.ues().iter().map(|u| format!("qoe_ue{}", u.id)))
        .collect();
    let body = comparison.rows.iter().map(|r| {
        [r.policy.clone(), r.objective.to_string()]
            .into_iter()
            .chain(r.qoe.iter().map(f64::to_string))
            .collect()
    });
    write_rows(path, std::iter::once(header).chain(body))
}
