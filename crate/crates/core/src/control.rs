//! Cycle-preserving phase timing transform.
//!
//! Each phase keeps 20% of its base duration as a fixed floor. The remaining
//! 80% of an intersection's green time forms a shared budget that is split
//! among its phases according to normalized ratios, so every intersection
//! keeps its cycle length no matter what the agent outputs.

use std::ops::Range;

use crate::netgraph::Scenario;

/// Share of each base duration that the agent may redistribute.
pub const ADJUSTABLE_SHARE: f64 = 0.8;
/// Share of each base duration that is always kept.
pub const FLOOR_SHARE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("expected {expected} per-phase values, got {got}")]
    WrongLength { expected: usize, got: usize },
    #[error("non-finite action value {value} at phase {phase}")]
    NonFinite { phase: usize, value: f64 },
}

/// Grouping of the flattened phase vector by intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLayout {
    base: Vec<f64>,
    groups: Vec<Range<usize>>,
    phase_group: Vec<usize>,
}

impl PhaseLayout {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        Self::from_groups(
            scenario
                .intersections
                .iter()
                .map(|ix| ix.phases.iter().map(|p| p.duration).collect())
                .collect(),
        )
    }

    /// Builds a layout from base durations listed per intersection.
    pub fn from_groups(groups: Vec<Vec<f64>>) -> Self {
        let mut base = Vec::new();
        let mut ranges = Vec::new();
        let mut phase_group = Vec::new();
        for (g, durations) in groups.into_iter().enumerate() {
            let start = base.len();
            phase_group.extend(std::iter::repeat_n(g, durations.len()));
            base.extend(durations);
            ranges.push(start..base.len());
        }
        PhaseLayout {
            base,
            groups: ranges,
            phase_group,
        }
    }

    pub fn n_phases(&self) -> usize {
        self.base.len()
    }

    pub fn groups(&self) -> &[Range<usize>] {
        &self.groups
    }

    pub fn group_of(&self, phase: usize) -> usize {
        self.phase_group[phase]
    }

    pub fn base_durations(&self) -> &[f64] {
        &self.base
    }

    /// Σ base durations of one intersection.
    pub fn green_time(&self, group: usize) -> f64 {
        self.base[self.groups[group].clone()].iter().sum()
    }

    pub fn budget(&self, group: usize) -> f64 {
        ADJUSTABLE_SHARE * self.green_time(group)
    }

    pub fn floor(&self, phase: usize) -> f64 {
        FLOOR_SHARE * self.base[phase]
    }

    /// Base durations as ratios of their intersection's green time.
    pub fn base_ratios(&self) -> Vec<f64> {
        weighted_group_ratios(&self.base, self)
    }

    fn check(&self, values: &[f64]) -> Result<(), ControlError> {
        if values.len() != self.n_phases() {
            return Err(ControlError::WrongLength {
                expected: self.n_phases(),
                got: values.len(),
            });
        }
        if let Some((phase, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ControlError::NonFinite { phase, value });
        }
        Ok(())
    }
}

/// Per-intersection softmax of raw actor outputs.
pub fn softmax_by_group(raw: &[f64], layout: &PhaseLayout) -> Result<Vec<f64>, ControlError> {
    layout.check(raw)?;
    Ok(softmax_weighted(raw, None, layout))
}

/// exp(x_i - max) · w_i normalized within each group.
fn softmax_weighted(raw: &[f64], weights: Option<&[f64]>, layout: &PhaseLayout) -> Vec<f64> {
    let mut out = vec![0.0; raw.len()];
    for g in layout.groups() {
        let max = raw[g.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for i in g.clone() {
            let w = weights.map_or(1.0, |w| w[i]);
            out[i] = w * (raw[i] - max).exp();
        }
        let sum: f64 = out[g.clone()].iter().sum();
        for v in &mut out[g.clone()] {
            *v /= sum;
        }
    }
    out
}

fn weighted_group_ratios(values: &[f64], layout: &PhaseLayout) -> Vec<f64> {
    let mut out = values.to_vec();
    for g in layout.groups() {
        let sum: f64 = out[g.clone()].iter().sum();
        for v in &mut out[g.clone()] {
            *v /= sum;
        }
    }
    out
}

/// Distributes each intersection's budget by `ratios` on top of the floors.
///
/// Written as `base + budget·(ratio − base_ratio)`, which equals
/// `floor + ratio·budget` and reproduces the base plan bit-for-bit when the
/// ratios are the base proportions.
pub fn adjust_durations(ratios: &[f64], layout: &PhaseLayout) -> Vec<f64> {
    let base_ratios = layout.base_ratios();
    let mut out = Vec::with_capacity(ratios.len());
    for i in 0..layout.n_phases() {
        let budget = layout.budget(layout.group_of(i));
        let d = layout.base[i] + budget * (ratios[i] - base_ratios[i]);
        out.push(d.max(layout.floor(i)));
    }
    out
}

/// Raw actor outputs to phase durations.
///
/// Each output acts as a log-scale multiplier on its phase's base duration:
/// the weights `base_i · exp(x_i)` are normalized per intersection, so any
/// group-constant output reproduces the base plan exactly.
pub fn durations_from_raw(raw: &[f64], layout: &PhaseLayout) -> Result<Vec<f64>, ControlError> {
    layout.check(raw)?;
    let ratios = softmax_weighted(raw, Some(&layout.base), layout);
    Ok(adjust_durations(&ratios, layout))
}

/// Positive per-phase multipliers to phase durations (Q-learning and random
/// timing). Groups whose multipliers are all zero fall back to the base plan.
pub fn durations_from_multipliers(
    multipliers: &[f64],
    layout: &PhaseLayout,
) -> Result<Vec<f64>, ControlError> {
    layout.check(multipliers)?;
    let base_ratios = layout.base_ratios();
    let mut ratios = vec![0.0; multipliers.len()];
    for g in layout.groups() {
        let sum: f64 = g.clone().map(|i| multipliers[i].max(0.0) * layout.base[i]).sum();
        for i in g.clone() {
            ratios[i] = if sum > 0.0 {
                multipliers[i].max(0.0) * layout.base[i] / sum
            } else {
                base_ratios[i]
            };
        }
    }
    Ok(adjust_durations(&ratios, layout))
}

/// Block-diagonal group-membership operator: entry (i, j) is 1 when phases
/// i and j belong to the same intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseAdjustmentMatrix {
    layout: PhaseLayout,
}

pub fn phase_adjustment_matrix(layout: &PhaseLayout) -> PhaseAdjustmentMatrix {
    PhaseAdjustmentMatrix {
        layout: layout.clone(),
    }
}

impl PhaseAdjustmentMatrix {
    pub fn dim(&self) -> usize {
        self.layout.n_phases()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.layout.groups().iter().map(|g| g.len()).collect()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if self.layout.group_of(i) == self.layout.group_of(j) {
            1.0
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.entry(i, j)).collect())
            .collect()
    }

    /// M·v: each entry replaced by the sum over its group.
    pub fn group_sums(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for g in self.layout.groups() {
            let s: f64 = v[g.clone()].iter().sum();
            out[g.clone()].fill(s);
        }
        out
    }

    /// M·v scaled by 1/group size: each entry replaced by its group mean.
    pub fn group_means(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.group_sums(v);
        for g in self.layout.groups() {
            let n = g.len() as f64;
            for x in &mut out[g.clone()] {
                *x /= n;
            }
        }
        out
    }

    /// v_i / (M·v)_i, the per-group normalization used by the action transform.
    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        let sums = self.group_sums(v);
        v.iter().zip(sums).map(|(x, s)| x / s).collect()
    }
}
