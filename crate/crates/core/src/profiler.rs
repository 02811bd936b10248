//! Phase-level wall-clock accounting plus deterministic software counters.
//!
//! Training time is attributed to eight leaf phases. Five of them
//! (sampling, target-Q, Q loss, P loss, target update) make up the derived
//! "update all trainers" aggregate. Reports can be broken down into the
//! top-level three-way split or the four-way update detail, merged across
//! seeds, and compared across agent counts as per-doubling growth ratios.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::algos::Algorithm;
use crate::env::Scenario;
use crate::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseId {
    ActionSelection,
    ExperienceCollection,
    MiniBatchSampling,
    TargetQCalculation,
    QLoss,
    PLoss,
    TargetUpdate,
    Other,
    /// Derived: sum of the five update sub-phases. Never timed directly.
    UpdateAllTrainers,
}

impl PhaseId {
    pub const LEAVES: [PhaseId; 8] = [
        PhaseId::ActionSelection,
        PhaseId::ExperienceCollection,
        PhaseId::MiniBatchSampling,
        PhaseId::TargetQCalculation,
        PhaseId::QLoss,
        PhaseId::PLoss,
        PhaseId::TargetUpdate,
        PhaseId::Other,
    ];

    pub const UPDATE_CHILDREN: [PhaseId; 5] = [
        PhaseId::MiniBatchSampling,
        PhaseId::TargetQCalculation,
        PhaseId::QLoss,
        PhaseId::PLoss,
        PhaseId::TargetUpdate,
    ];

    fn leaf_index(self) -> Option<usize> {
        PhaseId::LEAVES.iter().position(|&p| p == self)
    }

    pub fn is_leaf(self) -> bool {
        self.leaf_index().is_some()
    }
}

/// Rows of the breakdown and growth views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseGroup {
    ActionSelection,
    UpdateAllTrainers,
    OtherSegments,
    MiniBatchSampling,
    TargetQCalculation,
    QLoss,
    /// Actor loss with target updates folded in.
    PLoss,
    QAndPLoss,
    Total,
}

impl PhaseGroup {
    pub fn label(self) -> &'static str {
        match self {
            PhaseGroup::ActionSelection => "Action selection",
            PhaseGroup::UpdateAllTrainers => "Update all trainers",
            PhaseGroup::OtherSegments => "Other segments",
            PhaseGroup::MiniBatchSampling => "Mini-batch sampling",
            PhaseGroup::TargetQCalculation => "Target Q calculation",
            PhaseGroup::QLoss => "Q loss",
            PhaseGroup::PLoss => "P loss",
            PhaseGroup::QAndPLoss => "Q loss & P loss",
            PhaseGroup::Total => "Total",
        }
    }

    fn members(self) -> &'static [PhaseId] {
        use PhaseId::*;
        match self {
            PhaseGroup::ActionSelection => &[ActionSelection],
            PhaseGroup::UpdateAllTrainers => &PhaseId::UPDATE_CHILDREN,
            PhaseGroup::OtherSegments => &[ExperienceCollection, Other],
            PhaseGroup::MiniBatchSampling => &[MiniBatchSampling],
            PhaseGroup::TargetQCalculation => &[TargetQCalculation],
            PhaseGroup::QLoss => &[QLoss],
            PhaseGroup::PLoss => &[PLoss, TargetUpdate],
            PhaseGroup::QAndPLoss => &[QLoss, PLoss, TargetUpdate],
            PhaseGroup::Total => &PhaseId::LEAVES,
        }
    }

    pub const GROWTH_ROWS: [PhaseGroup; 9] = [
        PhaseGroup::ActionSelection,
        PhaseGroup::UpdateAllTrainers,
        PhaseGroup::OtherSegments,
        PhaseGroup::MiniBatchSampling,
        PhaseGroup::TargetQCalculation,
        PhaseGroup::QLoss,
        PhaseGroup::PLoss,
        PhaseGroup::QAndPLoss,
        PhaseGroup::Total,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taxonomy {
    TopLevel,
    UpdateDetail,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub seconds: f64,
    pub calls: u64,
}

/// Deterministic work counters accumulated over a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub buffer_lookups: u64,
    pub cross_agent_policy_reads: u64,
    pub critic_backprops: u64,
    pub actor_backprops: u64,
    pub update_rounds: u64,
    pub env_steps: u64,
    /// Width of each centralized critic's input (not summed on merge).
    pub critic_input_dim: u64,
    /// Trainable parameters across all agents' actors and critics (not summed on merge).
    pub trainable_params: u64,
}

impl CounterSnapshot {
    fn add(&mut self, other: &CounterSnapshot) {
        self.buffer_lookups += other.buffer_lookups;
        self.cross_agent_policy_reads += other.cross_agent_policy_reads;
        self.critic_backprops += other.critic_backprops;
        self.actor_backprops += other.actor_backprops;
        self.update_rounds += other.update_rounds;
        self.env_steps += other.env_steps;
        self.critic_input_dim = self.critic_input_dim.max(other.critic_input_dim);
        self.trainable_params = self.trainable_params.max(other.trainable_params);
    }

    fn div(&mut self, k: u64) {
        self.buffer_lookups /= k;
        self.cross_agent_policy_reads /= k;
        self.critic_backprops /= k;
        self.actor_backprops /= k;
        self.update_rounds /= k;
        self.env_steps /= k;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub algorithm: Algorithm,
    pub scenario: Scenario,
    pub n_agents: usize,
    pub batch_size: usize,
    pub episodes: usize,
    pub seeds: Vec<u64>,
}

impl RunMeta {
    fn compatible(&self, other: &RunMeta) -> bool {
        self.algorithm == other.algorithm
            && self.scenario == other.scenario
            && self.n_agents == other.n_agents
            && self.batch_size == other.batch_size
            && self.episodes == other.episodes
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScopeToken {
    phase: PhaseId,
    start: Option<Instant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub schema_version: u32,
    pub meta: RunMeta,
    pub timing_enabled: bool,
    /// Keyed by leaf phase.
    pub phases: BTreeMap<PhaseId, PhaseTiming>,
    pub counters: CounterSnapshot,
    /// Wall time of the whole run, including untimed gaps.
    pub total_seconds: f64,
    #[serde(skip)]
    active: [bool; 8],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub group: PhaseGroup,
    pub seconds: f64,
    pub percent: f64,
}

impl PhaseReport {
    pub fn new(meta: RunMeta, timing_enabled: bool) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            meta,
            timing_enabled,
            phases: PhaseId::LEAVES.iter().map(|&p| (p, PhaseTiming::default())).collect(),
            counters: CounterSnapshot::default(),
            total_seconds: 0.0,
            active: [false; 8],
        }
    }

    /// A report with no time, calls, counters or seeds; the identity of [`merge`].
    pub fn empty(mut meta: RunMeta) -> Self {
        meta.seeds.clear();
        Self::new(meta, true)
    }

    pub fn seconds(&self, phase: PhaseId) -> f64 {
        if phase == PhaseId::UpdateAllTrainers {
            return PhaseId::UPDATE_CHILDREN.iter().map(|&p| self.seconds(p)).sum();
        }
        self.phases.get(&phase).map_or(0.0, |t| t.seconds)
    }

    pub fn calls(&self, phase: PhaseId) -> u64 {
        self.phases.get(&phase).map_or(0, |t| t.calls)
    }

    pub fn group_seconds(&self, group: PhaseGroup) -> f64 {
        group.members().iter().map(|&p| self.seconds(p)).sum()
    }

    pub fn leaf_seconds(&self) -> f64 {
        self.group_seconds(PhaseGroup::Total)
    }

    /// Starts timing `phase`. Fails if the phase is not a leaf or is already open.
    pub fn begin(&mut self, phase: PhaseId) -> Result<ScopeToken> {
        let idx = phase.leaf_index().ok_or(Error::NotALeaf(phase))?;
        if self.active[idx] {
            return Err(Error::NestedScope(phase));
        }
        self.active[idx] = true;
        let start = self.timing_enabled.then(Instant::now);
        Ok(ScopeToken { phase, start })
    }

    pub fn end(&mut self, token: ScopeToken) {
        let elapsed = token.start.map_or(0.0, |s| s.elapsed().as_secs_f64());
        let idx = token.phase.leaf_index().expect("tokens are only issued for leaves");
        self.active[idx] = false;
        let entry = self.phases.entry(token.phase).or_default();
        entry.seconds += elapsed;
        entry.calls += 1;
    }

    /// Runs `work`, charging its wall time to `phase` even if it returns an
    /// error or panics.
    pub fn scoped_time<R>(&mut self, phase: PhaseId, work: impl FnOnce() -> R) -> Result<R> {
        struct Guard<'a> {
            report: &'a mut PhaseReport,
            token: Option<ScopeToken>,
        }
        impl Drop for Guard<'_> {
            fn drop(&mut self) {
                if let Some(token) = self.token.take() {
                    self.report.end(token);
                }
            }
        }
        let token = self.begin(phase)?;
        let _guard = Guard { report: self, token: Some(token) };
        Ok(work())
    }

    /// Adds seconds directly; used for synthetic reports and tests.
    pub fn charge(&mut self, phase: PhaseId, seconds: f64, calls: u64) -> Result<()> {
        if !phase.is_leaf() {
            return Err(Error::NotALeaf(phase));
        }
        let entry = self.phases.entry(phase).or_default();
        entry.seconds += seconds;
        entry.calls += calls;
        Ok(())
    }

    pub fn breakdown(&self, taxonomy: Taxonomy) -> Result<Vec<BreakdownRow>> {
        let (groups, denominator): (&[PhaseGroup], f64) = match taxonomy {
            Taxonomy::TopLevel => (
                &[PhaseGroup::ActionSelection, PhaseGroup::UpdateAllTrainers, PhaseGroup::OtherSegments],
                self.leaf_seconds(),
            ),
            Taxonomy::UpdateDetail => (
                &[PhaseGroup::MiniBatchSampling, PhaseGroup::TargetQCalculation, PhaseGroup::QLoss, PhaseGroup::PLoss],
                self.group_seconds(PhaseGroup::UpdateAllTrainers),
            ),
        };
        if denominator <= 0.0 {
            return Err(Error::EmptyReport);
        }
        Ok(groups
            .iter()
            .map(|&group| {
                let seconds = self.group_seconds(group);
                BreakdownRow { group, seconds, percent: 100.0 * seconds / denominator }
            })
            .collect())
    }

    /// Share of leaf time in `group`, in percent of the relevant denominator.
    pub fn share(&self, taxonomy: Taxonomy, group: PhaseGroup) -> Result<f64> {
        self.breakdown(taxonomy)?
            .into_iter()
            .find(|row| row.group == group)
            .map(|row| row.percent)
            .ok_or(Error::EmptyReport)
    }

    /// Multiplies every duration by `factor`.
    pub fn scaled(&self, factor: f64) -> PhaseReport {
        let mut out = self.clone();
        for timing in out.phases.values_mut() {
            timing.seconds *= factor;
        }
        out.total_seconds *= factor;
        out
    }
}

/// Sums seconds, calls and counters. Metadata must agree except for seeds,
/// which are collected.
pub fn merge(reports: &[PhaseReport]) -> Result<PhaseReport> {
    let first = reports.first().ok_or(Error::EmptyReport)?;
    if let Some(bad) = reports.iter().find(|r| !r.meta.compatible(&first.meta)) {
        return Err(Error::IncompatibleReports(format!("{:?} vs {:?}", first.meta, bad.meta)));
    }
    // Fixed summation order keeps the result independent of input order.
    let mut ordered: Vec<&PhaseReport> = reports.iter().collect();
    ordered.sort_by(|a, b| {
        a.meta
            .seeds
            .cmp(&b.meta.seeds)
            .then(a.total_seconds.total_cmp(&b.total_seconds))
            .then(a.leaf_seconds().total_cmp(&b.leaf_seconds()))
    });
    let mut out = PhaseReport::new(first.meta.clone(), reports.iter().any(|r| r.timing_enabled));
    out.meta.seeds.clear();
    for report in ordered {
        for (&phase, timing) in &report.phases {
            let entry = out.phases.entry(phase).or_default();
            entry.seconds += timing.seconds;
            entry.calls += timing.calls;
        }
        out.counters.add(&report.counters);
        out.total_seconds += report.total_seconds;
        out.meta.seeds.extend_from_slice(&report.meta.seeds);
    }
    out.meta.seeds.sort_unstable();
    Ok(out)
}

/// Average of repetitions: the merge divided by the number of reports.
pub fn mean(reports: &[PhaseReport]) -> Result<PhaseReport> {
    let mut merged = merge(reports)?;
    let k = reports.len() as u64;
    merged = merged.scaled(1.0 / k as f64);
    for timing in merged.phases.values_mut() {
        timing.calls /= k;
    }
    merged.counters.div(k);
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub n_from: usize,
    pub n_to: usize,
    /// `T(2N) / T(N)` per group; groups with no time at `N` are absent.
    pub ratios: BTreeMap<PhaseGroup, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthTable {
    pub algorithm: Algorithm,
    pub scenario: Scenario,
    pub rows: Vec<GrowthRow>,
}

impl GrowthTable {
    pub fn ratio(&self, n_from: usize, group: PhaseGroup) -> Option<f64> {
        self.rows.iter().find(|r| r.n_from == n_from).and_then(|r| r.ratios.get(&group).copied())
    }
}

/// Per-doubling ratios between consecutive reports.
pub fn growth_rates(reports: &[PhaseReport]) -> Result<GrowthTable> {
    let counts: Vec<usize> = reports.iter().map(|r| r.meta.n_agents).collect();
    if reports.len() < 2 || counts.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(Error::NonDoubling(counts));
    }
    let rows = reports
        .windows(2)
        .map(|pair| {
            let ratios = PhaseGroup::GROWTH_ROWS
                .iter()
                .filter_map(|&g| {
                    let base = pair[0].group_seconds(g);
                    (base > 0.0).then(|| (g, pair[1].group_seconds(g) / base))
                })
                .collect();
            GrowthRow { n_from: pair[0].meta.n_agents, n_to: pair[1].meta.n_agents, ratios }
        })
        .collect();
    Ok(GrowthTable { algorithm: reports[0].meta.algorithm, scenario: reports[0].meta.scenario, rows })
}
