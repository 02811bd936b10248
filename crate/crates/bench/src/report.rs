//! Human-readable breakdown tables and the tidy CSV export.
//!
//! Tidy rows hold both views. Top-level phases (`action_selection`,
//! `update_all_trainers`, `other_segments`) are percentages of all timed
//! time. Update phases (`mini_batch_sampling`, `target_q_calculation`,
//! `q_loss`, `p_loss`) are percentages of update time only.

use std::fmt::Write as _;
use std::path::Path;

use marl_core::algos::Algorithm;
use marl_core::profiler::{self, PhaseReport, Taxonomy};
use serde::{Deserialize, Serialize};

use crate::compare::reference_share;
use crate::sweep::phase_key;
use crate::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TidyRow {
    pub run_id: String,
    pub phase: String,
    pub seconds: f64,
    pub percent: f64,
    #[serde(rename = "N")]
    pub n_agents: usize,
    pub algorithm: Algorithm,
}

pub fn tidy_rows(run_id: &str, report: &PhaseReport) -> Result<Vec<TidyRow>> {
    let mut rows = Vec::new();
    for taxonomy in [Taxonomy::TopLevel, Taxonomy::UpdateDetail] {
        let breakdown = match report.breakdown(taxonomy) {
            Ok(b) => b,
            // An update-free run (short warm-up) still has a top-level view.
            Err(marl_core::Error::EmptyReport) if taxonomy == Taxonomy::UpdateDetail => continue,
            Err(e) => return Err(e.into()),
        };
        rows.extend(breakdown.into_iter().map(|b| TidyRow {
            run_id: run_id.into(),
            phase: phase_key(b.group),
            seconds: b.seconds,
            percent: b.percent,
            n_agents: report.meta.n_agents,
            algorithm: report.meta.algorithm,
        }));
    }
    Ok(rows)
}

pub fn write_tidy_csv(rows: &[TidyRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(BenchError::io(path))
}

pub fn read_tidy_csv(path: &Path) -> Result<Vec<TidyRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<TidyRow>, csv::Error>>()?)
}

/// Both breakdowns with published shares alongside where they exist.
pub fn render(title: &str, report: &PhaseReport) -> String {
    let mut out = String::new();
    let m = &report.meta;
    let _ = writeln!(
        out,
        "== {title}: {} on {}, N={}, K={}, {} episodes, seeds {:?}",
        m.algorithm, m.scenario, m.n_agents, m.batch_size, m.episodes, m.seeds
    );
    let c = &report.counters;
    let _ = writeln!(
        out,
        "   rounds {}  env steps {}  buffer lookups {}  cross-agent reads {}  critic width {}",
        c.update_rounds, c.env_steps, c.buffer_lookups, c.cross_agent_policy_reads, c.critic_input_dim
    );
    if !report.timing_enabled {
        let _ = writeln!(out, "   timing disabled; counters only");
        return out;
    }
    let _ = writeln!(out, "   total wall time {:.3} s", report.total_seconds);
    for (taxonomy, heading) in [(Taxonomy::TopLevel, "training time"), (Taxonomy::UpdateDetail, "update all trainers")]
    {
        let Ok(rows) = report.breakdown(taxonomy) else {
            let _ = writeln!(out, "   {heading}: no time recorded");
            continue;
        };
        let _ = writeln!(out, "   {heading}:");
        for row in rows {
            let published = reference_share(m.algorithm, taxonomy, row.group, m.n_agents)
                .map_or(String::new(), |p| format!("  (published {p:.2}%)"));
            let _ = writeln!(
                out,
                "     {:<22} {:>12.4} s {:>7.2}%{published}",
                row.group.label(),
                row.seconds,
                row.percent
            );
        }
    }
    out
}

/// Renders each report and, when they share metadata, their merge.
pub fn render_all(named: &[(String, PhaseReport)]) -> String {
    let mut out = String::new();
    for (name, report) in named {
        out.push_str(&render(name, report));
    }
    if named.len() > 1 {
        let reports: Vec<PhaseReport> = named.iter().map(|(_, r)| r.clone()).collect();
        if let Ok(merged) = profiler::merge(&reports) {
            out.push_str(&render("merged", &merged));
        }
    }
    out
}
