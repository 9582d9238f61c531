//! Horizontal classification: perception sets, environmental fit, systemic
//! class labeling and depth-bounded comparison of two systems.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{Hierarchy, NodeId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClassificationError {
    #[error("perception sets belong to different universes ({left} vs {right})")]
    UniverseMismatch { left: String, right: String },
    #[error("context figure `{figure}` is not part of universe `{universe}`")]
    UnknownFigure { figure: String, universe: String },
    #[error("context figure ids must be non-empty")]
    EmptyFigure,
}

/// A context figure such as `temperature` or `acceleration`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContextFigure(String);

impl ContextFigure {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ContextFigure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The full set of context figures a model can talk about. Perceiving the
/// whole universe is the perfect, all-seeing reference system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextUniverse {
    name: String,
    figures: BTreeSet<ContextFigure>,
}

impl ContextUniverse {
    pub fn new<I, S>(name: impl Into<String>, figures: I) -> Result<Self, ClassificationError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = BTreeSet::new();
        for f in figures {
            let f = f.into();
            if f.is_empty() {
                return Err(ClassificationError::EmptyFigure);
            }
            set.insert(ContextFigure(f));
        }
        Ok(Self {
            name: name.into(),
            figures: set,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn figures(&self) -> &BTreeSet<ContextFigure> {
        &self.figures
    }

    pub fn contains(&self, figure: &ContextFigure) -> bool {
        self.figures.contains(figure)
    }

    /// Builds a perception set over this universe, rejecting unknown figures.
    pub fn perception<I, S>(&self, figures: I) -> Result<PerceptionSet, ClassificationError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = BTreeSet::new();
        for f in figures {
            let f = ContextFigure(f.into());
            if !self.figures.contains(&f) {
                return Err(ClassificationError::UnknownFigure {
                    figure: f.0,
                    universe: self.name.clone(),
                });
            }
            set.insert(f);
        }
        Ok(PerceptionSet {
            universe: self.name.clone(),
            figures: set,
        })
    }

    pub fn empty_perception(&self) -> PerceptionSet {
        PerceptionSet {
            universe: self.name.clone(),
            figures: BTreeSet::new(),
        }
    }

    /// The monad's perception: every figure in the universe.
    pub fn as_perception(&self) -> PerceptionSet {
        PerceptionSet {
            universe: self.name.clone(),
            figures: self.figures.clone(),
        }
    }
}

/// The context figures a system's perception organ is restricted to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerceptionSet {
    universe: String,
    figures: BTreeSet<ContextFigure>,
}

impl PerceptionSet {
    pub fn universe(&self) -> &str {
        &self.universe
    }

    pub fn figures(&self) -> &BTreeSet<ContextFigure> {
        &self.figures
    }

    pub fn is_empty(&self) -> bool {
        self.figures.is_empty()
    }

    pub fn len(&self) -> usize {
        self.figures.len()
    }

    pub fn contains(&self, figure: &ContextFigure) -> bool {
        self.figures.contains(figure)
    }

    pub fn intersects(&self, figures: &BTreeSet<ContextFigure>) -> bool {
        self.figures.iter().any(|f| figures.contains(f))
    }

    fn check_same_universe(&self, other: &Self) -> Result<(), ClassificationError> {
        if self.universe != other.universe {
            return Err(ClassificationError::UniverseMismatch {
                left: self.universe.clone(),
                right: other.universe.clone(),
            });
        }
        Ok(())
    }

    /// Set union within the same universe.
    pub fn union(&self, other: &Self) -> Result<Self, ClassificationError> {
        self.check_same_universe(other)?;
        Ok(Self {
            universe: self.universe.clone(),
            figures: self.figures.union(&other.figures).cloned().collect(),
        })
    }
}

/// Result of comparing two systemic features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderRelation {
    Less,
    Greater,
    Equal,
    Incomparable,
}

impl OrderRelation {
    fn from_ordering(o: Ordering) -> Self {
        match o {
            Ordering::Less => OrderRelation::Less,
            Ordering::Greater => OrderRelation::Greater,
            Ordering::Equal => OrderRelation::Equal,
        }
    }
}

/// Compares perception by set inclusion. Disjoint or overlapping sets that
/// do not contain one another are incomparable.
pub fn perception_order(
    a: &PerceptionSet,
    b: &PerceptionSet,
) -> Result<OrderRelation, ClassificationError> {
    a.check_same_universe(b)?;
    let a_in_b = a.figures.is_subset(&b.figures);
    let b_in_a = b.figures.is_subset(&a.figures);
    Ok(match (a_in_b, b_in_a) {
        (true, true) => OrderRelation::Equal,
        (true, false) => OrderRelation::Less,
        (false, true) => OrderRelation::Greater,
        (false, false) => OrderRelation::Incomparable,
    })
}

/// How a system's perception fits the figures an environment calls for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FitReport {
    /// Figures that change in the environment but go unperceived.
    pub blind_spots: BTreeSet<ContextFigure>,
    /// Figures perceived that never change in the environment.
    pub wasted: BTreeSet<ContextFigure>,
    pub overlap: BTreeSet<ContextFigure>,
}

pub fn environmental_fit(
    system: &PerceptionSet,
    environment: &PerceptionSet,
) -> Result<FitReport, ClassificationError> {
    system.check_same_universe(environment)?;
    Ok(FitReport {
        blind_spots: environment
            .figures
            .difference(&system.figures)
            .cloned()
            .collect(),
        wasted: system
            .figures
            .difference(&environment.figures)
            .cloned()
            .collect(),
        overlap: system
            .figures
            .intersection(&environment.figures)
            .cloned()
            .collect(),
    })
}

/// Systemic complexity classes, ordered by complexity.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum SystemicClass {
    Object,
    Thermostat,
    Servomechanism,
    Cell,
    Plant,
    Animal,
    HumanBeing,
}

impl SystemicClass {
    pub const ALL: [SystemicClass; 7] = [
        SystemicClass::Object,
        SystemicClass::Thermostat,
        SystemicClass::Servomechanism,
        SystemicClass::Cell,
        SystemicClass::Plant,
        SystemicClass::Animal,
        SystemicClass::HumanBeing,
    ];

    pub fn rank(self) -> u8 {
        self as u8
    }

    /// Most complex behavior a system of this class can exhibit.
    pub fn behavior_ceiling(self) -> BehaviorClass {
        match self {
            SystemicClass::Object => BehaviorClass::Random,
            SystemicClass::Thermostat => BehaviorClass::PurposefulNonTeleological,
            SystemicClass::Servomechanism
            | SystemicClass::Cell
            | SystemicClass::Plant
            | SystemicClass::Animal => BehaviorClass::TeleologicalNonExtrapolatory,
            SystemicClass::HumanBeing => BehaviorClass::Extrapolatory,
        }
    }
}

/// Behavioral classes, ordered by complexity.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum BehaviorClass {
    Random,
    PurposefulNonTeleological,
    TeleologicalNonExtrapolatory,
    Extrapolatory,
}

impl BehaviorClass {
    pub const ALL: [BehaviorClass; 4] = [
        BehaviorClass::Random,
        BehaviorClass::PurposefulNonTeleological,
        BehaviorClass::TeleologicalNonExtrapolatory,
        BehaviorClass::Extrapolatory,
    ];

    pub fn rank(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for BehaviorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The M/A/P/E/K profile of a system. `None` means the organ is absent,
/// which ranks below every present class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SystemicFeatures {
    pub perception: PerceptionSet,
    pub analytics: Option<SystemicClass>,
    pub planning: Option<SystemicClass>,
    pub execution: Option<SystemicClass>,
    pub knowledge: Option<SystemicClass>,
}

impl SystemicFeatures {
    pub fn perception_only(perception: PerceptionSet) -> Self {
        Self {
            perception,
            analytics: None,
            planning: None,
            execution: None,
            knowledge: None,
        }
    }

    /// Presence bitmask: bit 0 = M, 1 = A, 2 = P, 3 = E, 4 = K.
    pub fn presence_mask(&self) -> u8 {
        let mut mask = 0;
        if !self.perception.is_empty() {
            mask |= FEATURE_M;
        }
        for (bit, f) in [
            (FEATURE_A, self.analytics),
            (FEATURE_P, self.planning),
            (FEATURE_E, self.execution),
            (FEATURE_K, self.knowledge),
        ] {
            if f.is_some() {
                mask |= bit;
            }
        }
        mask
    }

    /// Lowest class among the present A/P/E/K organs.
    pub fn min_organ_class(&self) -> Option<SystemicClass> {
        [self.analytics, self.planning, self.execution, self.knowledge]
            .into_iter()
            .flatten()
            .min()
    }
}

pub const FEATURE_M: u8 = 1;
pub const FEATURE_A: u8 = 1 << 1;
pub const FEATURE_P: u8 = 1 << 2;
pub const FEATURE_E: u8 = 1 << 3;
pub const FEATURE_K: u8 = 1 << 4;
const ALL_FEATURES: u8 = FEATURE_M | FEATURE_A | FEATURE_P | FEATURE_E | FEATURE_K;

/// Maps a feature profile to a systemic class.
///
/// Lookup keys are the presence mask and the lowest present organ class:
///
/// | M | P | K | A and E | lowest organ class | class          |
/// |---|---|---|---------|--------------------|----------------|
/// | - | * | * | *       | *                  | Object         |
/// | + | - | - | *       | *                  | Thermostat     |
/// | + | + | - | *       | *                  | Servomechanism |
/// | + | - | + | *       | *                  | Cell           |
/// | + | + | + | not both| *                  | Plant          |
/// | + | + | + | both    | below Animal       | Animal         |
/// | + | + | + | both    | Animal or above    | HumanBeing     |
pub fn classify(features: &SystemicFeatures) -> SystemicClass {
    lookup_class(features.presence_mask(), features.min_organ_class())
}

fn lookup_class(mask: u8, min_class: Option<SystemicClass>) -> SystemicClass {
    let has = |bit: u8| mask & bit != 0;
    if !has(FEATURE_M) {
        return SystemicClass::Object;
    }
    match (has(FEATURE_P), has(FEATURE_K)) {
        (false, false) => SystemicClass::Thermostat,
        (true, false) => SystemicClass::Servomechanism,
        (false, true) => SystemicClass::Cell,
        (true, true) if mask != ALL_FEATURES => SystemicClass::Plant,
        (true, true) => match min_class {
            Some(c) if c >= SystemicClass::Animal => SystemicClass::HumanBeing,
            _ => SystemicClass::Animal,
        },
    }
}

fn organ_order(a: Option<SystemicClass>, b: Option<SystemicClass>) -> OrderRelation {
    OrderRelation::from_ordering(a.cmp(&b))
}

/// Feature-by-feature comparison of two systems, recursing into their
/// containment structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComparisonReport {
    pub a: NodeId,
    pub b: NodeId,
    pub perception: OrderRelation,
    pub analytics: OrderRelation,
    pub planning: OrderRelation,
    pub execution: OrderRelation,
    pub knowledge: OrderRelation,
    pub children: Vec<ComparisonReport>,
}

impl ComparisonReport {
    pub fn relations(&self) -> [OrderRelation; 5] {
        [
            self.perception,
            self.analytics,
            self.planning,
            self.execution,
            self.knowledge,
        ]
    }

    /// Depth of the report tree (a root-only report has depth 0).
    pub fn depth(&self) -> usize {
        self.children.iter().map(|c| c.depth() + 1).max().unwrap_or(0)
    }
}

/// Compares node `a` of `ha` with node `b` of `hb` down to `depth` levels of
/// containment. Children are paired in id order; the report follows the
/// shallower of the two structures.
pub fn compare_systems(
    ha: &Hierarchy,
    a: &NodeId,
    hb: &Hierarchy,
    b: &NodeId,
    depth: usize,
) -> Result<ComparisonReport, ClassificationError> {
    let fa = &ha.node(a).expect("node of a validated hierarchy").features;
    let fb = &hb.node(b).expect("node of a validated hierarchy").features;
    let mut report = ComparisonReport {
        a: a.clone(),
        b: b.clone(),
        perception: perception_order(&fa.perception, &fb.perception)?,
        analytics: organ_order(fa.analytics, fb.analytics),
        planning: organ_order(fa.planning, fb.planning),
        execution: organ_order(fa.execution, fb.execution),
        knowledge: organ_order(fa.knowledge, fb.knowledge),
        children: Vec::new(),
    };
    if depth > 0 {
        for (ca, cb) in ha.children(a).iter().zip(hb.children(b).iter()) {
            report
                .children
                .push(compare_systems(ha, ca, hb, cb, depth - 1)?);
        }
    }
    Ok(report)
}
