//! Adaptive dimensioning of the resources a level keeps active for its
//! current situation.
//!
//! With `N` nodes available and `fired` of them active, undershoot is
//! `max(0, required - fired)` and overshoot `max(0, fired - required)`. The
//! distance to failure is `undershoot / N`. Undershoot is corrected right
//! away; overshoot is trimmed only in stable situations, after `window`
//! consecutive overabundant assessments, and never below the situation's
//! minimum threshold.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classification::ContextFigure;

pub type Dtof = Ratio<u64>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AllocationError {
    #[error("capacity is zero; distance to failure is undefined")]
    UndefinedCapacity,
    #[error("no minimum threshold configured for situation `{0}`")]
    MissingThreshold(String),
    #[error("{0} must be at least 1")]
    ZeroParameter(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Situation {
    pub id: String,
    /// Nodes this situation calls for at its level.
    pub required: u32,
    #[serde(default)]
    pub stable: bool,
    /// Critical situations never decay below `required`.
    #[serde(default)]
    pub critical: bool,
    #[serde(default)]
    pub relevant_figures: BTreeSet<ContextFigure>,
    /// Protocols launched when this situation is set.
    #[serde(default)]
    pub protocols: Vec<String>,
}

impl Situation {
    pub fn new(id: impl Into<String>, required: u32, stable: bool) -> Self {
        Self {
            id: id.into(),
            required,
            stable,
            critical: false,
            relevant_figures: BTreeSet::new(),
            protocols: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Zone {
    /// Too few nodes; carries the undershoot.
    Unsafe(u32),
    /// Too many nodes; carries the overshoot.
    Overabundant(u32),
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AllocationDecision {
    Free(u32),
    Reselect,
    Enroll(u32),
    NoChange,
}

impl fmt::Display for AllocationDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AllocationDecision::Free(k) => write!(f, "free({k})"),
            AllocationDecision::Reselect => f.write_str("reselect"),
            AllocationDecision::Enroll(k) => write!(f, "enroll({k})"),
            AllocationDecision::NoChange => f.write_str("no_change"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AllocatorConfig {
    /// Nodes added or freed per decision.
    pub step_size: u32,
    /// Consecutive overabundant assessments required before freeing.
    pub window: u32,
    /// Length of the retained distance-to-failure history.
    pub history: usize,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        Self {
            step_size: 1,
            window: 5,
            history: 64,
        }
    }
}

impl AllocatorConfig {
    pub fn validate(&self) -> Result<(), AllocationError> {
        if self.step_size == 0 {
            return Err(AllocationError::ZeroParameter("step_size"));
        }
        if self.window == 0 {
            return Err(AllocationError::ZeroParameter("window"));
        }
        Ok(())
    }
}

/// What the caller knows about nodes not currently active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool {
    /// Inactive nodes that could be enrolled.
    pub idle: u32,
    /// Some idle node scores strictly higher than some active one.
    pub better_idle: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationState {
    capacity: u32,
    fired: u32,
    undershoot: u32,
    overshoot: u32,
    dtof_history: VecDeque<Dtof>,
    config: AllocatorConfig,
    streak: u32,
    last: Option<(String, u32)>,
}

impl AllocationState {
    pub fn new(capacity: u32, config: AllocatorConfig) -> Result<Self, AllocationError> {
        config.validate()?;
        Ok(Self {
            capacity,
            fired: 0,
            undershoot: 0,
            overshoot: 0,
            dtof_history: VecDeque::with_capacity(config.history),
            config,
            streak: 0,
            last: None,
        })
    }

    pub fn with_fired(mut self, fired: u32) -> Self {
        self.set_fired(fired);
        self
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn set_capacity(&mut self, capacity: u32) {
        self.capacity = capacity;
        self.fired = self.fired.min(capacity);
    }

    pub fn fired(&self) -> u32 {
        self.fired
    }

    /// Overrides the active count, e.g. after nodes failed.
    pub fn set_fired(&mut self, fired: u32) {
        self.fired = fired.min(self.capacity);
    }

    pub fn undershoot(&self) -> u32 {
        self.undershoot
    }

    pub fn overshoot(&self) -> u32 {
        self.overshoot
    }

    pub fn config(&self) -> &AllocatorConfig {
        &self.config
    }

    pub fn dtof_history(&self) -> &VecDeque<Dtof> {
        &self.dtof_history
    }

    /// Forgets the overabundance streak; used when a relevant variation is
    /// detected.
    pub fn reset_streak(&mut self) {
        self.streak = 0;
    }

    /// Applies a decision's effect on the active count.
    pub fn apply(&mut self, decision: AllocationDecision) {
        match decision {
            AllocationDecision::Enroll(k) => self.set_fired(self.fired + k),
            AllocationDecision::Free(k) => self.fired = self.fired.saturating_sub(k),
            AllocationDecision::Reselect | AllocationDecision::NoChange => {}
        }
    }

    /// Assesses the current allocation against `situation` and decides the
    /// next adjustment. The active count is left for [`apply`](Self::apply).
    pub fn step(
        &mut self,
        situation: &Situation,
        min_threshold: u32,
        pool: Pool,
    ) -> AllocationDecision {
        let zone = assess(self.fired, situation, self.capacity);
        self.undershoot = situation.required.saturating_sub(self.fired);
        self.overshoot = self.fired.saturating_sub(situation.required);
        if let Ok(d) = dtof(self) {
            if self.dtof_history.len() == self.config.history {
                self.dtof_history.pop_front();
            }
            if self.config.history > 0 {
                self.dtof_history.push_back(d);
            }
        }

        let key = (situation.id.clone(), situation.required);
        let raised = match &self.last {
            Some(prev) if *prev != key => {
                self.streak = 0;
                situation.required > prev.1
            }
            _ => false,
        };
        self.last = Some(key);

        match zone {
            Zone::Unsafe(under) => {
                self.streak = 0;
                if pool.better_idle {
                    return AllocationDecision::Reselect;
                }
                let k = self.config.step_size.min(under).min(pool.idle);
                if k >= 1 {
                    AllocationDecision::Enroll(k)
                } else {
                    AllocationDecision::NoChange
                }
            }
            Zone::Overabundant(over) => {
                if raised {
                    return AllocationDecision::NoChange;
                }
                self.streak += 1;
                if !situation.stable || self.streak < self.config.window {
                    return AllocationDecision::NoChange;
                }
                let k = self
                    .config
                    .step_size
                    .min(over)
                    .min(self.fired.saturating_sub(min_threshold));
                if k >= 1 {
                    self.streak = 0;
                    AllocationDecision::Free(k)
                } else {
                    AllocationDecision::NoChange
                }
            }
            Zone::Optimal => {
                self.streak = 0;
                AllocationDecision::NoChange
            }
        }
    }
}

/// Distance to failure: undershoot over capacity, exactly.
pub fn dtof(state: &AllocationState) -> Result<Dtof, AllocationError> {
    if state.capacity == 0 {
        return Err(AllocationError::UndefinedCapacity);
    }
    Ok(Ratio::new(
        u64::from(state.undershoot.min(state.capacity)),
        u64::from(state.capacity),
    ))
}

pub fn assess(fired: u32, situation: &Situation, _capacity: u32) -> Zone {
    match fired.cmp(&situation.required) {
        std::cmp::Ordering::Less => Zone::Unsafe(situation.required - fired),
        std::cmp::Ordering::Greater => Zone::Overabundant(fired - situation.required),
        std::cmp::Ordering::Equal => Zone::Optimal,
    }
}

/// Floors estimated ahead of time, per situation id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    #[serde(default)]
    pub floors: BTreeMap<String, u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<u32>,
}

/// The configured floor for `situation`, clamped to its requirement.
pub fn min_threshold(
    situation: &Situation,
    policy: &ThresholdPolicy,
) -> Result<u32, AllocationError> {
    if situation.critical {
        return Ok(situation.required);
    }
    let floor = policy
        .floors
        .get(&situation.id)
        .copied()
        .or(policy.default)
        .ok_or_else(|| AllocationError::MissingThreshold(situation.id.clone()))?;
    Ok(floor.min(situation.required))
}
