//! Nested compositional hierarchy.
//!
//! Levels are numbered from 0 (atomic leaves) upward. Every level above 0 has
//! a canon: the controller of that level, which is itself a member of the
//! next level up and represents ("punctualizes") the whole level there. The
//! canon of the top level is a member of the top level and stands for the
//! whole system.
//!
//! Containment runs child -> parent. A member of level `i >= 1` is contained
//! by the canon of level `i` unless it names an explicit parent in level
//! `i + 1`. Members of level 0 must name a parent in level 1 unless level 1
//! has a single member. Top-level members are roots.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classification::{
    BehaviorClass, ClassificationError, ContextUniverse, PerceptionSet, SystemicClass,
    SystemicFeatures,
};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Role(String);

impl Role {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Role {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Node {
    pub id: NodeId,
    pub capabilities: BTreeSet<Role>,
    pub features: SystemicFeatures,
    /// Per-behavior cost overrides; missing entries use the run's defaults.
    pub energy_cost_profile: BTreeMap<BehaviorClass, u64>,
    pub depends_on: BTreeSet<NodeId>,
    /// Permanent nodes created from recurring SONs may play one instance of
    /// each of their roles in the same SON.
    pub permanent: bool,
}

impl Node {
    pub fn can_play(&self, role: &Role) -> bool {
        self.capabilities.contains(role)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Level {
    pub index: usize,
    pub members: Vec<NodeId>,
    pub canon: Option<NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchySpec {
    pub levels: Vec<LevelSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub members: Vec<NodeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canon: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    #[serde(default)]
    pub capabilities: Vec<String>,
    #[serde(default)]
    pub perception: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytics: Option<SystemicClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planning: Option<SystemicClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execution: Option<SystemicClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<SystemicClass>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub energy_cost_profile: BTreeMap<BehaviorClass, u64>,
    #[serde(default)]
    pub depends_on: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub permanent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Rule {
    EmptyHierarchy,
    EmptyLevel,
    DuplicateMember,
    MissingCanon,
    CanonAtLevelZero,
    CanonNotInParentLevel,
    DanglingDependency,
    InvalidParent,
    MissingParent,
    DependencyCycle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub severity: Severity,
    pub rule: Rule,
    /// Offending node id, or `level <i>`.
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} [{:?}] {}: {}", self.severity, self.rule, self.subject, self.message)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("invalid hierarchy: {0}")]
    Invalid(Violation),
    #[error(transparent)]
    Perception(#[from] ClassificationError),
    #[error("level {0} has no canon")]
    NoCanon(usize),
    #[error("level {0} does not exist")]
    UnknownLevel(usize),
    #[error("node `{0}` already exists")]
    NodeExists(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Hierarchy {
    universe: ContextUniverse,
    levels: Vec<Level>,
    nodes: BTreeMap<NodeId, Node>,
    /// Explicit parents as declared; defaults are derived on demand.
    explicit_parents: BTreeMap<NodeId, NodeId>,
}

/// Builds and validates a hierarchy from its declarative description.
pub fn build(spec: &HierarchySpec, universe: &ContextUniverse) -> Result<Hierarchy, HierarchyError> {
    let h = Hierarchy::assemble(spec, universe)?;
    if let Some(v) = validate(&h)
        .into_iter()
        .find(|v| v.severity == Severity::Error)
    {
        return Err(HierarchyError::Invalid(v));
    }
    Ok(h)
}

/// All invariant violations of `h`. Dependency cycles are warnings.
pub fn validate(h: &Hierarchy) -> Vec<Violation> {
    let mut out = Vec::new();
    let err = |rule, subject: String, message: String| Violation {
        severity: Severity::Error,
        rule,
        subject,
        message,
    };
    if h.levels.is_empty() {
        out.push(err(
            Rule::EmptyHierarchy,
            "hierarchy".into(),
            "at least one level is required".into(),
        ));
        return out;
    }

    let mut seen: BTreeMap<&NodeId, usize> = BTreeMap::new();
    for level in &h.levels {
        if level.members.is_empty() {
            out.push(err(
                Rule::EmptyLevel,
                format!("level {}", level.index),
                "level has no members".into(),
            ));
        }
        for m in &level.members {
            if let Some(&prev) = seen.get(m) {
                out.push(err(
                    Rule::DuplicateMember,
                    m.to_string(),
                    format!("listed in level {prev} and level {}", level.index),
                ));
            } else {
                seen.insert(m, level.index);
            }
        }
    }

    let top = h.levels.len() - 1;
    for level in &h.levels {
        let subject = format!("level {}", level.index);
        match (&level.canon, level.index) {
            (Some(c), 0) => out.push(err(
                Rule::CanonAtLevelZero,
                c.to_string(),
                "level 0 holds atomic leaves and has no canon".into(),
            )),
            (None, 0) => {}
            (None, _) => out.push(err(Rule::MissingCanon, subject, "level has no canon".into())),
            (Some(c), i) => {
                let host = if i == top { i } else { i + 1 };
                if !h.levels[host].members.contains(c) {
                    out.push(err(
                        Rule::CanonNotInParentLevel,
                        c.to_string(),
                        format!("canon of level {i} is not a member of level {host}"),
                    ));
                }
            }
        }
    }

    for (id, node) in &h.nodes {
        for dep in &node.depends_on {
            if !h.nodes.contains_key(dep) {
                out.push(err(
                    Rule::DanglingDependency,
                    id.to_string(),
                    format!("depends on unknown node `{dep}`"),
                ));
            }
        }
    }

    for (child, parent) in &h.explicit_parents {
        let Some(&li) = seen.get(child) else { continue };
        match seen.get(parent) {
            Some(&lp) if lp == li + 1 => {}
            Some(&lp) => out.push(err(
                Rule::InvalidParent,
                child.to_string(),
                format!("parent `{parent}` is at level {lp}, expected level {}", li + 1),
            )),
            None => out.push(err(
                Rule::InvalidParent,
                child.to_string(),
                format!("parent `{parent}` does not exist"),
            )),
        }
    }
    if h.levels.len() > 1 && h.levels[1].members.len() != 1 {
        for m in &h.levels[0].members {
            if !h.explicit_parents.contains_key(m) {
                out.push(err(
                    Rule::MissingParent,
                    m.to_string(),
                    "level 0 member must name its level 1 parent".into(),
                ));
            }
        }
    }

    if let Some(cycle_node) = first_dependency_cycle(h) {
        out.push(Violation {
            severity: Severity::Warning,
            rule: Rule::DependencyCycle,
            subject: cycle_node.to_string(),
            message: "node takes part in a dependency cycle".into(),
        });
    }
    out
}

fn first_dependency_cycle(h: &Hierarchy) -> Option<&NodeId> {
    // iterative three-colour DFS over depends_on edges
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let mut mark: BTreeMap<&NodeId, Mark> = h.nodes.keys().map(|k| (k, Mark::White)).collect();
    for start in h.nodes.keys() {
        if mark[start] != Mark::White {
            continue;
        }
        let mut stack: Vec<(&NodeId, Vec<&NodeId>)> = Vec::new();
        mark.insert(start, Mark::Grey);
        stack.push((start, h.nodes[start].depends_on.iter().rev().collect()));
        while let Some((node, pending)) = stack.last_mut() {
            match pending.pop() {
                Some(next) => match mark.get(next).copied() {
                    Some(Mark::White) => {
                        mark.insert(next, Mark::Grey);
                        let deps = h.nodes[next].depends_on.iter().rev().collect();
                        stack.push((next, deps));
                    }
                    Some(Mark::Grey) => return Some(next),
                    _ => {}
                },
                None => {
                    mark.insert(node, Mark::Black);
                    stack.pop();
                }
            }
        }
    }
    None
}

/// The canon of `level_index`, carrying as perception the union of the
/// effective perceptions of that level's members.
pub fn punctualize(h: &Hierarchy, level_index: usize) -> Result<Node, HierarchyError> {
    let level = h
        .levels
        .get(level_index)
        .ok_or(HierarchyError::UnknownLevel(level_index))?;
    let canon = level
        .canon
        .as_ref()
        .ok_or(HierarchyError::NoCanon(level_index))?;
    let mut node = h.nodes[canon].clone();
    node.features.perception = h.level_perception(level_index);
    Ok(node)
}

pub fn systemic_levels(h: &Hierarchy) -> &[Level] {
    &h.levels
}

impl Hierarchy {
    /// Assembles without validating structure. Node-level parse errors
    /// (unknown figures) still fail here.
    pub(crate) fn assemble(
        spec: &HierarchySpec,
        universe: &ContextUniverse,
    ) -> Result<Self, HierarchyError> {
        let mut levels = Vec::with_capacity(spec.levels.len());
        let mut nodes = BTreeMap::new();
        let mut explicit_parents = BTreeMap::new();
        for (index, ls) in spec.levels.iter().enumerate() {
            let mut members = Vec::with_capacity(ls.members.len());
            for ns in &ls.members {
                let id = NodeId::new(ns.id.clone());
                members.push(id.clone());
                if nodes.contains_key(&id) {
                    continue;
                }
                let node = Node {
                    id: id.clone(),
                    capabilities: ns.capabilities.iter().map(|r| Role::new(r.clone())).collect(),
                    features: SystemicFeatures {
                        perception: universe.perception(ns.perception.iter().cloned())?,
                        analytics: ns.analytics,
                        planning: ns.planning,
                        execution: ns.execution,
                        knowledge: ns.knowledge,
                    },
                    energy_cost_profile: ns.energy_cost_profile.clone(),
                    depends_on: ns.depends_on.iter().map(|d| NodeId::new(d.clone())).collect(),
                    permanent: ns.permanent,
                };
                if let Some(p) = &ns.parent {
                    explicit_parents.insert(id.clone(), NodeId::new(p.clone()));
                }
                nodes.insert(id, node);
            }
            levels.push(Level {
                index,
                members,
                canon: ls.canon.as_ref().map(|c| NodeId::new(c.clone())),
            });
        }
        Ok(Self {
            universe: universe.clone(),
            levels,
            nodes,
            explicit_parents,
        })
    }

    /// Inverse of [`build`]: the declarative description of this hierarchy.
    pub fn to_spec(&self) -> HierarchySpec {
        let levels = self
            .levels
            .iter()
            .map(|level| LevelSpec {
                canon: level.canon.as_ref().map(|c| c.to_string()),
                members: level
                    .members
                    .iter()
                    .map(|id| {
                        let n = &self.nodes[id];
                        NodeSpec {
                            id: id.to_string(),
                            capabilities: n.capabilities.iter().map(|r| r.to_string()).collect(),
                            perception: n
                                .features
                                .perception
                                .figures()
                                .iter()
                                .map(|f| f.to_string())
                                .collect(),
                            analytics: n.features.analytics,
                            planning: n.features.planning,
                            execution: n.features.execution,
                            knowledge: n.features.knowledge,
                            energy_cost_profile: n.energy_cost_profile.clone(),
                            depends_on: n.depends_on.iter().map(|d| d.to_string()).collect(),
                            parent: self.explicit_parents.get(id).map(|p| p.to_string()),
                            permanent: n.permanent,
                        }
                    })
                    .collect(),
            })
            .collect();
        HierarchySpec { levels }
    }

    pub fn universe(&self) -> &ContextUniverse {
        &self.universe
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn level(&self, index: usize) -> Option<&Level> {
        self.levels.get(index)
    }

    pub fn top_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// Number of levels above the leaves (0 for a single-level hierarchy).
    pub fn depth(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn level_of(&self, id: &NodeId) -> Option<usize> {
        self.levels
            .iter()
            .find(|l| l.members.contains(id))
            .map(|l| l.index)
    }

    pub fn canon(&self, level_index: usize) -> Option<&NodeId> {
        self.levels.get(level_index)?.canon.as_ref()
    }

    /// Containment parent; `None` for top-level members.
    pub fn parent(&self, id: &NodeId) -> Option<&NodeId> {
        if let Some(p) = self.explicit_parents.get(id) {
            return Some(p);
        }
        let li = self.level_of(id)?;
        if li == self.top_level() {
            return None;
        }
        if li == 0 {
            return self.levels.get(1).and_then(|l| match l.members.as_slice() {
                [only] => Some(only),
                _ => None,
            });
        }
        self.canon(li)
    }

    /// Containment children, sorted by id.
    pub fn children(&self, id: &NodeId) -> Vec<NodeId> {
        let Some(li) = self.level_of(id) else {
            return Vec::new();
        };
        if li == 0 {
            return Vec::new();
        }
        let mut out: Vec<NodeId> = self.levels[li - 1]
            .members
            .iter()
            .filter(|m| self.parent(m) == Some(id))
            .cloned()
            .collect();
        out.sort();
        out
    }

    /// Containment edges `(child, parent)` sorted by child id.
    pub fn containment_edges(&self) -> Vec<(NodeId, NodeId)> {
        self.nodes
            .keys()
            .filter_map(|id| self.parent(id).map(|p| (id.clone(), p.clone())))
            .collect()
    }

    /// Nodes that directly depend on `id`, sorted.
    pub fn dependents(&self, id: &NodeId) -> Vec<&NodeId> {
        self.nodes
            .values()
            .filter(|n| n.depends_on.contains(id))
            .map(|n| &n.id)
            .collect()
    }

    /// A node's own perception joined with everything perceived by the nodes
    /// it contains.
    pub fn effective_perception(&self, id: &NodeId) -> PerceptionSet {
        let mut acc = self.nodes[id].features.perception.clone();
        let mut stack = self.children(id);
        while let Some(child) = stack.pop() {
            acc = acc
                .union(&self.nodes[&child].features.perception)
                .expect("single universe");
            stack.extend(self.children(&child));
        }
        acc
    }

    /// Union of the effective perceptions of a level's members.
    pub fn level_perception(&self, level_index: usize) -> PerceptionSet {
        self.levels[level_index]
            .members
            .iter()
            .fold(self.universe.empty_perception(), |acc, m| {
                acc.union(&self.effective_perception(m)).expect("single universe")
            })
    }

    /// Canons that see status published by `origin`: the canon of its own
    /// level and of every level above, one per level, excluding `origin`.
    pub fn ancestor_canons(&self, origin: &NodeId) -> Vec<(usize, NodeId)> {
        let Some(li) = self.level_of(origin) else {
            return Vec::new();
        };
        (li.max(1)..self.levels.len())
            .filter_map(|i| self.canon(i).map(|c| (i, c.clone())))
            .filter(|(_, c)| c != origin)
            .collect()
    }

    /// A new hierarchy with `node` appended to `level_index`.
    pub fn with_node(
        &self,
        level_index: usize,
        node: Node,
        parent: Option<NodeId>,
    ) -> Result<Hierarchy, HierarchyError> {
        if level_index >= self.levels.len() {
            return Err(HierarchyError::UnknownLevel(level_index));
        }
        if self.nodes.contains_key(&node.id) {
            return Err(HierarchyError::NodeExists(node.id));
        }
        let mut next = self.clone();
        next.levels[level_index].members.push(node.id.clone());
        if let Some(p) = parent {
            next.explicit_parents.insert(node.id.clone(), p);
        }
        next.nodes.insert(node.id.clone(), node);
        if let Some(v) = validate(&next)
            .into_iter()
            .find(|v| v.severity == Severity::Error)
        {
            return Err(HierarchyError::Invalid(v));
        }
        Ok(next)
    }
}
