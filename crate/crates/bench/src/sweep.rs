//! Agent-count sweeps: every point is run `repetitions` times, averaged, and
//! turned into per-doubling growth ratios.

use std::collections::BTreeMap;
use std::path::Path;

use marl_core::profiler::{self, GrowthTable, PhaseGroup, PhaseReport, Taxonomy};
use serde::{Deserialize, Serialize};

use crate::compare::{compare_to_reference, Comparison};
use crate::config::{RunConfig, SweepConfig};
use crate::train::{run_training, ReportFile};
use crate::{BenchError, Result};

/// Produces one report per run configuration. The real runner trains; tests
/// plug in synthetic workloads.
pub trait PointRunner: Sync {
    fn run(&self, cfg: &RunConfig) -> Result<PhaseReport>;
}

impl<F> PointRunner for F
where
    F: Fn(&RunConfig) -> Result<PhaseReport> + Sync,
{
    fn run(&self, cfg: &RunConfig) -> Result<PhaseReport> {
        self(cfg)
    }
}

pub struct TrainingRunner;

impl PointRunner for TrainingRunner {
    fn run(&self, cfg: &RunConfig) -> Result<PhaseReport> {
        Ok(run_training(cfg)?.report)
    }
}

/// Mean report over the repetitions of one agent count, plus the spread of
/// each phase group's seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub n_agents: usize,
    pub mean: PhaseReport,
    pub min_seconds: BTreeMap<PhaseGroup, f64>,
    pub max_seconds: BTreeMap<PhaseGroup, f64>,
    pub contended: bool,
}

impl PointSummary {
    fn from_reports(reports: &[PhaseReport], contended: bool) -> Result<Self> {
        let mean = profiler::mean(reports)?;
        let spread = |pick: fn(f64, f64) -> f64| {
            PhaseGroup::GROWTH_ROWS
                .iter()
                .map(|&g| {
                    let v = reports.iter().map(|r| r.group_seconds(g)).reduce(pick).unwrap_or(0.0);
                    (g, v)
                })
                .collect()
        };
        Ok(Self {
            n_agents: mean.meta.n_agents,
            min_seconds: spread(f64::min),
            max_seconds: spread(f64::max),
            mean,
            contended,
        })
    }

    pub fn share(&self, taxonomy: Taxonomy, group: PhaseGroup) -> Option<f64> {
        self.mean.share(taxonomy, group).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub points: Vec<PointSummary>,
    pub growth: GrowthTable,
    /// Absent when the agent counts are not on the published ladder.
    pub comparison: Option<Comparison>,
}

/// Runs every point of `cfg`. With `out` set, each repetition's report is
/// written as soon as it finishes, so a failing point leaves the earlier
/// results on disk.
pub fn run_sweep(cfg: &SweepConfig, runner: &dyn PointRunner, out: Option<&Path>) -> Result<SweepOutcome> {
    cfg.validate()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir.join("points")).map_err(BenchError::io(dir))?;
    }
    let groups = cfg.points();
    let contended = cfg.parallel_points;
    let run_point = |runs: &Vec<RunConfig>| -> Result<PointSummary> {
        let mut reports = Vec::with_capacity(runs.len());
        for run in runs {
            log::info!("sweep point N={} seed {}", run.n_agents, run.seed);
            let report = runner.run(run).map_err(|e| BenchError::Point {
                n_agents: run.n_agents,
                seed: run.seed,
                source: Box::new(e),
            })?;
            if let Some(dir) = out {
                let file = ReportFile { report: report.clone(), config: Some(run.clone()), contended };
                file.write(&dir.join("points").join(format!("n{}_seed{}.json", run.n_agents, run.seed)))?;
            }
            reports.push(report);
        }
        let summary = PointSummary::from_reports(&reports, contended)?;
        if let Some(dir) = out {
            let file = ReportFile { report: summary.mean.clone(), config: None, contended };
            file.write(&dir.join("points").join(format!("n{}_mean.json", summary.n_agents)))?;
        }
        Ok(summary)
    };

    let points = if cfg.parallel_points {
        std::thread::scope(|s| {
            let handles: Vec<_> = groups.iter().map(|runs| s.spawn(|| run_point(runs))).collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect::<Result<Vec<_>>>()
        })?
    } else {
        groups.iter().map(run_point).collect::<Result<Vec<_>>>()?
    };

    let means: Vec<PhaseReport> = points.iter().map(|p| p.mean.clone()).collect();
    let growth = profiler::growth_rates(&means)?;
    let comparison = match compare_to_reference(&growth) {
        Ok(c) => Some(c),
        Err(BenchError::MissingReference { n_from, n_to }) => {
            log::warn!("no published growth for N={n_from}->{n_to}; skipping the comparison");
            None
        }
        Err(e) => return Err(e),
    };
    let outcome = SweepOutcome { points, growth, comparison };
    if let Some(dir) = out {
        write_outputs(&outcome, dir)?;
    }
    Ok(outcome)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(BenchError::io(path))
}

fn write_outputs(outcome: &SweepOutcome, dir: &Path) -> Result<()> {
    write_json(&outcome.growth, &dir.join("growth.json"))?;
    write_growth_csv(&outcome.growth, &dir.join("growth.csv"))?;
    if let Some(c) = &outcome.comparison {
        write_json(c, &dir.join("comparison.json"))?;
    }
    write_json(outcome, &dir.join("sweep.json"))
}

/// Columns: `n_from, n_to, phase, ratio`.
pub fn write_growth_csv(table: &GrowthTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n_from", "n_to", "phase", "ratio"])?;
    for row in &table.rows {
        for (group, ratio) in &row.ratios {
            w.write_record([row.n_from.to_string(), row.n_to.to_string(), phase_key(*group), ratio.to_string()])?;
        }
    }
    w.flush().map_err(BenchError::io(path))
}

/// The snake_case name used in JSON and CSV output.
pub fn phase_key(group: PhaseGroup) -> String {
    serde_json::to_value(group).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}
