//! Scenario files: the JSON schema and its validation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{min_threshold, AllocatorConfig, Situation, ThresholdPolicy};
use crate::classification::{BehaviorClass, ContextFigure, ContextUniverse};
use crate::hierarchy::{self, Hierarchy, HierarchyError, HierarchySpec, NodeId};
use crate::knowledge::{KnowledgeConfig, RecurrenceTracker, ScoreLedger};
use crate::roleflow::Protocol;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid {entity}: {message}")]
    Invalid { entity: String, message: String },
}

fn invalid(entity: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        entity: entity.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    ContextChange {
        figure: ContextFigure,
        level: usize,
    },
    SituationSet {
        level: usize,
        situation: String,
    },
    Catastrophe {
        epicenter: NodeId,
        figures: BTreeSet<ContextFigure>,
        magnitude: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub at_tick: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Cost of each behavior class, cheapest first. Must be strictly increasing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BehaviorCosts(pub [u64; 4]);

impl Default for BehaviorCosts {
    fn default() -> Self {
        Self([1, 2, 4, 8])
    }
}

impl BehaviorCosts {
    pub fn cost(&self, class: BehaviorClass) -> u64 {
        self.0[class.rank() as usize]
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.0.windows(2).all(|w| w[0] < w[1])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AllocatorSettings {
    pub step_size: u32,
    pub window: u32,
    pub history: usize,
    pub thresholds: ThresholdPolicy,
}

impl Default for AllocatorSettings {
    fn default() -> Self {
        let c = AllocatorConfig::default();
        Self {
            step_size: c.step_size,
            window: c.window,
            history: c.history,
            thresholds: ThresholdPolicy::default(),
        }
    }
}

impl AllocatorSettings {
    pub fn config(&self) -> AllocatorConfig {
        AllocatorConfig {
            step_size: self.step_size,
            window: self.window,
            history: self.history,
        }
    }
}

fn default_name() -> String {
    "scenario".into()
}

fn default_repair_delay() -> u64 {
    10
}

/// On-disk form of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "default_name")]
    pub name: String,
    pub universe: Vec<String>,
    pub hierarchy: HierarchySpec,
    #[serde(default)]
    pub protocols: Vec<Protocol>,
    #[serde(default)]
    pub situations: Vec<Situation>,
    #[serde(default)]
    pub events: Vec<Event>,
    #[serde(default)]
    pub budget: u64,
    #[serde(default)]
    pub allocator: AllocatorSettings,
    #[serde(default)]
    pub knowledge: KnowledgeConfig,
    #[serde(default)]
    pub behavior_costs: BehaviorCosts,
    #[serde(default = "default_repair_delay")]
    pub repair_delay: u64,
    #[serde(default)]
    pub seed: u64,
    pub horizon: u64,
}

/// A validated scenario, ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    file: ScenarioFile,
    hierarchy: Hierarchy,
    protocols: BTreeMap<String, Protocol>,
    situations: BTreeMap<String, Situation>,
    events: Vec<Event>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile =
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self, ScenarioError> {
        let universe = ContextUniverse::new(file.name.clone(), file.universe.iter().cloned())
            .map_err(|e| invalid("universe", e.to_string()))?;
        let hierarchy = hierarchy::build(&file.hierarchy, &universe).map_err(|e| match e {
            HierarchyError::Invalid(v) => invalid(format!("node `{}`", v.subject), v.message),
            other => invalid("hierarchy", other.to_string()),
        })?;

        if file.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        file.allocator
            .config()
            .validate()
            .map_err(|e| invalid("allocator", e.to_string()))?;
        ScoreLedger::from_config(&file.knowledge).map_err(|e| invalid("knowledge", e.to_string()))?;
        RecurrenceTracker::new(file.knowledge.recurrence_threshold)
            .map_err(|e| invalid("knowledge", e.to_string()))?;
        if !file.behavior_costs.is_strictly_increasing() {
            return Err(invalid("behavior_costs", "costs must be strictly increasing"));
        }
        for node in hierarchy.nodes() {
            let costs: Vec<u64> = BehaviorClass::ALL
                .iter()
                .map(|c| {
                    node.energy_cost_profile
                        .get(c)
                        .copied()
                        .unwrap_or(file.behavior_costs.cost(*c))
                })
                .collect();
            if !costs.windows(2).all(|w| w[0] < w[1]) {
                return Err(invalid(
                    format!("node `{}`", node.id),
                    "energy cost profile must be strictly increasing",
                ));
            }
        }

        let mut protocols = BTreeMap::new();
        for p in &file.protocols {
            if p.duration == 0 {
                return Err(invalid(format!("protocol `{}`", p.id), "duration must be at least 1"));
            }
            if protocols.insert(p.id.clone(), p.clone()).is_some() {
                return Err(invalid(format!("protocol `{}`", p.id), "duplicate id"));
            }
        }

        let mut situations = BTreeMap::new();
        for s in &file.situations {
            let entity = format!("situation `{}`", s.id);
            if let Some(f) = s.relevant_figures.iter().find(|f| !universe.contains(f)) {
                return Err(invalid(entity, format!("unknown figure `{f}`")));
            }
            if let Some(p) = s.protocols.iter().find(|p| !protocols.contains_key(*p)) {
                return Err(invalid(entity, format!("unknown protocol `{p}`")));
            }
            min_threshold(s, &file.allocator.thresholds).map_err(|e| invalid(&entity, e.to_string()))?;
            if situations.insert(s.id.clone(), s.clone()).is_some() {
                return Err(invalid(entity, "duplicate id"));
            }
        }

        let mut events = file.events.clone();
        events.sort_by_key(|e| e.at_tick);
        for (i, e) in events.iter().enumerate() {
            let entity = format!("event #{i} at tick {}", e.at_tick);
            let level_ok = |level: usize| {
                hierarchy
                    .level(level)
                    .map(|l| l.members.len())
                    .ok_or_else(|| invalid(&entity, format!("unknown level {level}")))
            };
            match &e.kind {
                EventKind::ContextChange { figure, level } => {
                    level_ok(*level)?;
                    if !universe.contains(figure) {
                        return Err(invalid(entity, format!("unknown figure `{figure}`")));
                    }
                }
                EventKind::SituationSet { level, situation } => {
                    let n = level_ok(*level)?;
                    let s = situations
                        .get(situation)
                        .ok_or_else(|| invalid(&entity, format!("unknown situation `{situation}`")))?;
                    if s.required as usize > n {
                        return Err(invalid(
                            entity,
                            format!(
                                "situation `{situation}` requires {} nodes but level {level} has {n}",
                                s.required
                            ),
                        ));
                    }
                }
                EventKind::Catastrophe {
                    epicenter,
                    figures,
                    magnitude,
                } => {
                    if !hierarchy.contains(epicenter) {
                        return Err(invalid(entity, format!("unknown epicenter `{epicenter}`")));
                    }
                    if let Some(f) = figures.iter().find(|f| !universe.contains(f)) {
                        return Err(invalid(entity, format!("unknown figure `{f}`")));
                    }
                    if *magnitude == 0 {
                        return Err(invalid(entity, "magnitude must be at least 1"));
                    }
                }
            }
        }

        Ok(Self {
            file,
            hierarchy,
            protocols,
            situations,
            events,
        })
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn file(&self) -> &ScenarioFile {
        &self.file
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn protocols(&self) -> &BTreeMap<String, Protocol> {
        &self.protocols
    }

    pub fn protocol(&self, id: &str) -> Option<&Protocol> {
        self.protocols.get(id)
    }

    pub fn situations(&self) -> &BTreeMap<String, Situation> {
        &self.situations
    }

    /// Timeline sorted by tick; same-tick events keep file order.
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn seed(&self) -> u64 {
        self.file.seed
    }

    pub fn horizon(&self) -> u64 {
        self.file.horizon
    }

    pub fn budget(&self) -> u64 {
        self.file.budget
    }

    pub fn allocator(&self) -> &AllocatorSettings {
        &self.file.allocator
    }

    pub fn knowledge(&self) -> &KnowledgeConfig {
        &self.file.knowledge
    }

    pub fn behavior_costs(&self) -> BehaviorCosts {
        self.file.behavior_costs
    }

    pub fn repair_delay(&self) -> u64 {
        self.file.repair_delay
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.file.seed = seed;
        self
    }

    pub fn with_horizon(mut self, horizon: u64) -> Result<Self, ScenarioError> {
        if horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        self.file.horizon = horizon;
        Ok(self)
    }

    /// Disables the knowledge feature: no scores, no recurrence tracking.
    pub fn memoryless(mut self) -> Self {
        self.file.knowledge.enabled = false;
        self
    }
}
