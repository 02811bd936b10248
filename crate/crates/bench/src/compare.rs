//! Reference trends from the published characterization and direction-only
//! comparison against measured growth tables.
//!
//! The published numbers come from different hardware and a different
//! runtime, so they are never compared for equality. Only the direction of
//! growth is checked.

use marl_core::algos::Algorithm;
use marl_core::profiler::{GrowthTable, PhaseGroup, Taxonomy};
use serde::{Deserialize, Serialize};

use crate::{BenchError, Result};

/// Per-doubling growth ratios, averaged over MADDPG, MATD3 and MASAC on
/// predator-prey.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceGrowth {
    pub n_from: usize,
    pub n_to: usize,
    pub mini_batch_sampling: f64,
    pub target_q_calculation: f64,
    pub q_and_p_loss: f64,
    pub action_selection: f64,
    pub update_all_trainers: f64,
    pub total: f64,
}

impl ReferenceGrowth {
    pub fn ratio(&self, group: PhaseGroup) -> Option<f64> {
        match group {
            PhaseGroup::MiniBatchSampling => Some(self.mini_batch_sampling),
            PhaseGroup::TargetQCalculation => Some(self.target_q_calculation),
            PhaseGroup::QAndPLoss => Some(self.q_and_p_loss),
            PhaseGroup::ActionSelection => Some(self.action_selection),
            PhaseGroup::UpdateAllTrainers => Some(self.update_all_trainers),
            PhaseGroup::Total => Some(self.total),
            _ => None,
        }
    }
}

/// Percent shares at N = 3, 6, 12, 24, 48 for one algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceShares {
    pub algorithm: Algorithm,
    /// Action selection, update all trainers, other segments.
    pub top_level: [[f64; 5]; 3],
    /// Mini-batch sampling, target Q, Q loss, P loss; over update time only.
    pub update_detail: [[f64; 5]; 4],
}

pub const REFERENCE_AGENT_COUNTS: [usize; 5] = [3, 6, 12, 24, 48];

pub const REFERENCE_GROWTH: [ReferenceGrowth; 4] = [
    ReferenceGrowth {
        n_from: 3,
        n_to: 6,
        mini_batch_sampling: 3.5,
        target_q_calculation: 3.8,
        q_and_p_loss: 2.6,
        action_selection: 2.0,
        update_all_trainers: 3.3,
        total: 2.8,
    },
    ReferenceGrowth {
        n_from: 6,
        n_to: 12,
        mini_batch_sampling: 3.7,
        target_q_calculation: 4.2,
        q_and_p_loss: 3.2,
        action_selection: 2.0,
        update_all_trainers: 3.7,
        total: 3.2,
    },
    ReferenceGrowth {
        n_from: 12,
        n_to: 24,
        mini_batch_sampling: 4.0,
        target_q_calculation: 4.5,
        q_and_p_loss: 3.4,
        action_selection: 2.0,
        update_all_trainers: 4.0,
        total: 3.4,
    },
    ReferenceGrowth {
        n_from: 24,
        n_to: 48,
        mini_batch_sampling: 4.2,
        target_q_calculation: 4.7,
        q_and_p_loss: 3.7,
        action_selection: 2.1,
        update_all_trainers: 4.3,
        total: 3.9,
    },
];

pub const REFERENCE_SHARES: [ReferenceShares; 3] = [
    ReferenceShares {
        algorithm: Algorithm::Maddpg,
        top_level: [[62.0, 50.0, 35.64, 22.0, 12.0], [34.0, 46.3, 61.29, 75.72, 87.0], [4.0, 3.7, 3.0, 2.0, 1.0]],
        update_detail: [
            [59.08, 64.0, 65.0, 65.0, 64.0],
            [17.69, 19.0, 21.0, 23.0, 24.0],
            [10.69, 9.0, 8.0, 6.0, 6.0],
            [12.08, 8.0, 6.0, 6.0, 6.0],
        ],
    },
    ReferenceShares {
        algorithm: Algorithm::Matd3,
        top_level: [[61.62, 49.97, 36.0, 21.0, 10.0], [37.20, 48.96, 63.0, 78.0, 90.0], [1.12, 1.0, 1.0, 1.0, 0.0]],
        update_detail: [
            [56.0, 60.0, 61.0, 61.0, 61.0],
            [18.0, 20.0, 22.0, 24.0, 25.0],
            [15.0, 12.0, 10.0, 9.0, 9.0],
            [11.0, 8.0, 7.0, 6.0, 5.0],
        ],
    },
    ReferenceShares {
        algorithm: Algorithm::Masac,
        top_level: [[63.0, 55.0, 45.0, 31.0, 17.0], [34.0, 42.0, 53.0, 68.0, 82.0], [3.0, 3.0, 2.0, 1.0, 1.0]],
        update_detail: [
            [58.0, 62.0, 63.0, 63.0, 62.0],
            [19.0, 21.0, 23.0, 24.0, 25.0],
            [12.0, 10.0, 8.0, 7.0, 7.0],
            [11.0, 7.0, 6.0, 6.0, 6.0],
        ],
    },
];

pub fn reference_growth(n_from: usize) -> Option<&'static ReferenceGrowth> {
    REFERENCE_GROWTH.iter().find(|g| g.n_from == n_from)
}

/// Published share (percent) of `group` at `n` agents.
pub fn reference_share(algorithm: Algorithm, taxonomy: Taxonomy, group: PhaseGroup, n: usize) -> Option<f64> {
    let col = REFERENCE_AGENT_COUNTS.iter().position(|&c| c == n)?;
    let shares = REFERENCE_SHARES.iter().find(|s| s.algorithm == algorithm)?;
    let row = match (taxonomy, group) {
        (Taxonomy::TopLevel, PhaseGroup::ActionSelection) => shares.top_level[0],
        (Taxonomy::TopLevel, PhaseGroup::UpdateAllTrainers) => shares.top_level[1],
        (Taxonomy::TopLevel, PhaseGroup::OtherSegments) => shares.top_level[2],
        (Taxonomy::UpdateDetail, PhaseGroup::MiniBatchSampling) => shares.update_detail[0],
        (Taxonomy::UpdateDetail, PhaseGroup::TargetQCalculation) => shares.update_detail[1],
        (Taxonomy::UpdateDetail, PhaseGroup::QLoss) => shares.update_detail[2],
        (Taxonomy::UpdateDetail, PhaseGroup::PLoss) => shares.update_detail[3],
        _ => return None,
    };
    Some(row[col])
}

/// The direction each phase is expected to follow per doubling of `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expectation {
    Above { threshold: f64 },
    Within { low: f64, high: f64 },
}

impl Expectation {
    pub fn holds(self, ratio: f64) -> bool {
        match self {
            Expectation::Above { threshold } => ratio > threshold,
            Expectation::Within { low, high } => (low..=high).contains(&ratio),
        }
    }
}

/// Phases with a direction rule. Losses are checked separately and combined.
pub const CHECKED_PHASES: [(PhaseGroup, Expectation); 6] = [
    (PhaseGroup::MiniBatchSampling, Expectation::Above { threshold: 3.0 }),
    (PhaseGroup::TargetQCalculation, Expectation::Above { threshold: 3.0 }),
    (PhaseGroup::QLoss, Expectation::Above { threshold: 2.0 }),
    (PhaseGroup::PLoss, Expectation::Above { threshold: 2.0 }),
    (PhaseGroup::QAndPLoss, Expectation::Above { threshold: 2.0 }),
    (PhaseGroup::ActionSelection, Expectation::Within { low: 1.5, high: 3.0 }),
];

/// Update sub-phases whose growth should beat linear (2× per doubling).
const SUPERLINEAR_PHASES: [PhaseGroup; 3] =
    [PhaseGroup::MiniBatchSampling, PhaseGroup::TargetQCalculation, PhaseGroup::QAndPLoss];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    DirectionMatch,
    DirectionMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseVerdict {
    pub n_from: usize,
    pub n_to: usize,
    pub group: PhaseGroup,
    pub measured: Option<f64>,
    /// Published ratio where one exists; Q and P loss share the combined value.
    pub reference: Option<f64>,
    pub expectation: Expectation,
    pub verdict: Verdict,
    /// `T(2N)/T(N) > 2` for update sub-phases; `None` elsewhere.
    pub superlinear: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub algorithm: Algorithm,
    pub verdicts: Vec<PhaseVerdict>,
    pub all_match: bool,
    pub superlinearity_observed: bool,
    pub summary: String,
}

/// Direction-only verdicts for every row of `table`.
pub fn compare_to_reference(table: &GrowthTable) -> Result<Comparison> {
    let mut verdicts = Vec::new();
    for row in &table.rows {
        let reference = reference_growth(row.n_from)
            .filter(|g| g.n_to == row.n_to)
            .ok_or(BenchError::MissingReference { n_from: row.n_from, n_to: row.n_to })?;
        for (group, expectation) in CHECKED_PHASES {
            let measured = row.ratios.get(&group).copied();
            let published = match group {
                PhaseGroup::QLoss | PhaseGroup::PLoss => reference.ratio(PhaseGroup::QAndPLoss),
                _ => reference.ratio(group),
            };
            let ok = measured.is_some_and(|m| expectation.holds(m));
            verdicts.push(PhaseVerdict {
                n_from: row.n_from,
                n_to: row.n_to,
                group,
                measured,
                reference: published,
                expectation,
                verdict: if ok { Verdict::DirectionMatch } else { Verdict::DirectionMismatch },
                superlinear: SUPERLINEAR_PHASES.contains(&group).then(|| measured.is_some_and(|m| m > 2.0)),
            });
        }
    }
    let all_match = verdicts.iter().all(|v| v.verdict == Verdict::DirectionMatch);
    let superlinearity_observed = verdicts.iter().filter_map(|v| v.superlinear).all(|s| s);
    let summary = format!(
        "{} of {} phase checks match the published direction; superlinearity {}observed",
        verdicts.iter().filter(|v| v.verdict == Verdict::DirectionMatch).count(),
        verdicts.len(),
        if superlinearity_observed { "" } else { "NOT " },
    );
    Ok(Comparison { algorithm: table.algorithm, verdicts, all_match, superlinearity_observed, summary })
}
