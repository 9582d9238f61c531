//! Knowledge feature: enrollment scores with gradual reward and penalty,
//! recurrence tracking of SON signatures and permanentification of SONs
//! that keep coming back.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{Hierarchy, HierarchyError, Node, NodeId, Role};
use crate::roleflow::{ExecutionOutcome, Son};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KnowledgeError {
    #[error("{name} must lie in [0, 1], got {value}")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("recurrence threshold must be at least 2, got {0}")]
    Threshold(u32),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

fn unit(name: &'static str, value: f64) -> Result<f64, KnowledgeError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(KnowledgeError::OutOfRange { name, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnowledgeConfig {
    pub enabled: bool,
    pub alpha: f64,
    pub beta: f64,
    pub default_score: f64,
    pub recurrence_threshold: u32,
}

impl Default for KnowledgeConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            alpha: 0.1,
            beta: 0.5,
            default_score: 0.5,
            recurrence_threshold: 3,
        }
    }
}

/// Per (node, role) enrollment scores in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLedger {
    scores: BTreeMap<(NodeId, Role), f64>,
    default_score: f64,
    alpha: f64,
    beta: f64,
    enabled: bool,
}

impl ScoreLedger {
    /// `alpha` pulls a rewarded score toward 1, `beta` scales a penalized one.
    pub fn new(default_score: f64, alpha: f64, beta: f64) -> Result<Self, KnowledgeError> {
        Ok(Self {
            scores: BTreeMap::new(),
            default_score: unit("default_score", default_score)?,
            alpha: unit("alpha", alpha)?,
            beta: unit("beta", beta)?,
            enabled: true,
        })
    }

    pub fn from_config(cfg: &KnowledgeConfig) -> Result<Self, KnowledgeError> {
        let mut ledger = Self::new(cfg.default_score, cfg.alpha, cfg.beta)?;
        ledger.enabled = cfg.enabled;
        Ok(ledger)
    }

    /// A ledger that never learns: every pair reads the default score.
    pub fn memoryless(default_score: f64) -> Self {
        Self {
            scores: BTreeMap::new(),
            default_score: default_score.clamp(0.0, 1.0),
            alpha: 0.0,
            beta: 1.0,
            enabled: false,
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn score(&self, node: &NodeId, role: &Role) -> f64 {
        if !self.enabled {
            return self.default_score;
        }
        self.scores
            .get(&(node.clone(), role.clone()))
            .copied()
            .unwrap_or(self.default_score)
    }

    pub fn set(&mut self, node: &NodeId, role: &Role, score: f64) {
        self.scores
            .insert((node.clone(), role.clone()), score.clamp(0.0, 1.0));
    }

    /// Best score a node holds over any of its roles.
    pub fn node_score(&self, node: &Node) -> f64 {
        node.capabilities
            .iter()
            .map(|r| self.score(&node.id, r))
            .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
            .unwrap_or(self.default_score)
    }

    /// Rewards every (node, role) of `son` on success, penalizes otherwise.
    pub fn record_outcome(&mut self, son: &Son, outcome: &ExecutionOutcome) {
        if !self.enabled {
            return;
        }
        for c in &son.assignment {
            let s = self.score(&c.node, &c.role);
            let next = if outcome.is_success() {
                (s + self.alpha * (1.0 - s)).min(1.0)
            } else {
                self.beta * s
            };
            self.scores.insert((c.node.clone(), c.role.clone()), next);
        }
    }

    /// Candidates by descending score, ascending id on ties.
    pub fn rank(&self, role: &Role, candidates: &[NodeId]) -> Vec<NodeId> {
        let mut v: Vec<(f64, &NodeId)> = candidates
            .iter()
            .map(|n| (self.score(n, role), n))
            .collect();
        v.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        v.into_iter().map(|(_, n)| n.clone()).collect()
    }

    /// Stored scores in (node, role) order. Empty when disabled.
    pub fn snapshot(&self) -> Vec<(NodeId, Role, f64)> {
        if !self.enabled {
            return Vec::new();
        }
        self.scores
            .iter()
            .map(|((n, r), s)| (n.clone(), r.clone(), *s))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecurrenceTracker {
    counts: BTreeMap<String, u32>,
    threshold: u32,
}

impl RecurrenceTracker {
    pub fn new(threshold: u32) -> Result<Self, KnowledgeError> {
        if threshold < 2 {
            return Err(KnowledgeError::Threshold(threshold));
        }
        Ok(Self {
            counts: BTreeMap::new(),
            threshold,
        })
    }

    pub fn count(&self, signature: &str) -> u32 {
        self.counts.get(signature).copied().unwrap_or(0)
    }

    /// Counts one more successful occurrence of the SON's signature and
    /// reports whether it has now recurred often enough.
    pub fn observe_son(&mut self, son: &Son) -> bool {
        let c = self.counts.entry(son.signature.clone()).or_default();
        *c += 1;
        *c >= self.threshold
    }
}

pub fn permanent_id(son: &Son) -> NodeId {
    NodeId::new(format!("perm:{}", son.signature))
}

/// Turns a recurring SON into a permanent node placed at the lowest level
/// it spans. The node can play every role of the SON and depends on the
/// SON's members. Repeated calls for the same signature change nothing.
pub fn permanentify(h: &Hierarchy, son: &Son) -> Result<Hierarchy, KnowledgeError> {
    let id = permanent_id(son);
    if h.contains(&id) {
        return Ok(h.clone());
    }
    let level = *son
        .levels_spanned
        .first()
        .expect("a SON spans at least one level");

    let members: Vec<&Node> = son
        .nodes()
        .into_iter()
        .filter_map(|n| h.node(n))
        .collect();
    let mut perception = h.universe().empty_perception();
    for m in &members {
        perception = perception
            .union(&m.features.perception)
            .expect("single universe");
    }
    let organ = |f: fn(&Node) -> Option<crate::classification::SystemicClass>| {
        members.iter().filter_map(|m| f(m)).max()
    };
    let node = Node {
        id: id.clone(),
        capabilities: son.assignment.iter().map(|c| c.role.clone()).collect(),
        features: crate::classification::SystemicFeatures {
            perception,
            analytics: organ(|n| n.features.analytics),
            planning: organ(|n| n.features.planning),
            execution: organ(|n| n.features.execution),
            knowledge: organ(|n| n.features.knowledge),
        },
        energy_cost_profile: BTreeMap::new(),
        depends_on: son.nodes().into_iter().cloned().collect(),
        permanent: true,
    };

    // level 0 nodes need an explicit parent; reuse a sibling's
    let parent = if level == 0 {
        son.assignment
            .iter()
            .filter(|c| c.level == 0)
            .find_map(|c| h.parent(&c.node).cloned())
            .or_else(|| {
                h.levels()[0]
                    .members
                    .iter()
                    .find_map(|m| h.parent(m).cloned())
            })
    } else {
        None
    };
    Ok(h.with_node(level, node, parent)?)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::roleflow::fixtures::three_levels;
    use crate::roleflow::{EnrollmentResult, EscalationResult, Protocol, RoleFlow};

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    fn son(pairs: &[(&str, &str)]) -> Son {
        let assignment = pairs
            .iter()
            .map(|(r, n)| crate::roleflow::Casting {
                role: Role::from(*r),
                node: NodeId::from(*n),
                level: 0,
            })
            .collect::<Vec<_>>();
        Son {
            id: "s".into(),
            protocol: "p".into(),
            signature: crate::roleflow::signature(
                "p",
                assignment.iter().map(|c| (c.role.clone(), c.node.clone())),
            ),
            assignment,
            levels_spanned: BTreeSet::from([0]),
            formed_at: 0,
        }
    }

    #[test]
    fn reward_and_penalty() {
        let mut l = ScoreLedger::new(0.5, 0.1, 0.5).unwrap();
        let s = son(&[("a", "n1")]);
        l.record_outcome(&s, &ExecutionOutcome::Success);
        assert!(approx(l.score(&"n1".into(), &"a".into()), 0.55));

        let mut l = ScoreLedger::new(0.5, 0.1, 0.5).unwrap();
        l.record_outcome(&s, &ExecutionOutcome::Starved { tick: 1 });
        assert!(approx(l.score(&"n1".into(), &"a".into()), 0.25));

        let mut l = ScoreLedger::new(1.0, 0.1, 0.5).unwrap();
        l.record_outcome(&s, &ExecutionOutcome::Success);
        assert_eq!(l.score(&"n1".into(), &"a".into()), 1.0);
    }

    #[test]
    fn rates_are_validated() {
        assert!(ScoreLedger::new(0.5, 1.5, 0.5).is_err());
        assert!(ScoreLedger::new(-0.1, 0.1, 0.5).is_err());
        assert!(RecurrenceTracker::new(1).is_err());
    }

    #[test]
    fn rank_cases() {
        let mut l = ScoreLedger::new(0.5, 0.1, 0.5).unwrap();
        let r = Role::from("a");
        l.set(&"n1".into(), &r, 0.9);
        l.set(&"n2".into(), &r, 0.2);
        assert_eq!(
            l.rank(&r, &["n2".into(), "n1".into()]),
            vec![NodeId::from("n1"), NodeId::from("n2")]
        );
        let fresh = ScoreLedger::new(0.5, 0.1, 0.5).unwrap();
        assert_eq!(
            fresh.rank(&r, &["c".into(), "a".into(), "b".into()]),
            vec![NodeId::from("a"), NodeId::from("b"), NodeId::from("c")]
        );
        assert!(fresh.rank(&r, &[]).is_empty());
    }

    #[test]
    fn memoryless_ledger_ranks_by_id() {
        let mut l = ScoreLedger::memoryless(0.5);
        let r = Role::from("a");
        l.record_outcome(&son(&[("a", "z")]), &ExecutionOutcome::Success);
        assert_eq!(
            l.rank(&r, &["z".into(), "a".into()]),
            vec![NodeId::from("a"), NodeId::from("z")]
        );
        assert!(l.snapshot().is_empty());
    }

    #[test]
    fn recurrence_counts() {
        let mut t = RecurrenceTracker::new(3).unwrap();
        let s = son(&[("a", "n1")]);
        assert!(!t.observe_son(&s));
        assert!(!t.observe_son(&s));
        assert!(t.observe_son(&s));

        let other = son(&[("a", "n2")]);
        assert_ne!(other.signature, s.signature);
        assert!(!t.observe_son(&other));
        assert_eq!(t.count(&other.signature), 1);
    }

    fn escalated_son(h: &Hierarchy) -> (Son, Protocol) {
        let mut rf = RoleFlow::new(h);
        let p = Protocol::new("p", &["b", "c"]);
        let l = ScoreLedger::memoryless(0.5);
        let EnrollmentResult::Exception(e) = rf.enroll(&p, 1, h, &l, 0).unwrap() else {
            panic!()
        };
        let EscalationResult::Resolved { son, .. } = rf.escalate(&e, &p, h, &l, 0) else {
            panic!()
        };
        (son, p)
    }

    #[test]
    fn permanentify_places_at_lowest_level() {
        let h = three_levels();
        let (son, _) = escalated_son(&h);
        assert_eq!(son.levels_spanned, BTreeSet::from([1, 2]));
        let h2 = permanentify(&h, &son).unwrap();
        let id = permanent_id(&son);
        assert_eq!(h2.level_of(&id), Some(1));
        let node = h2.node(&id).unwrap();
        assert_eq!(
            node.capabilities,
            BTreeSet::from([Role::from("b"), Role::from("c")])
        );
        assert!(id.as_str().contains(&son.signature));
        assert_eq!(permanentify(&h2, &son).unwrap(), h2);
    }

    #[test]
    fn permanent_node_resolves_locally() {
        let h = three_levels();
        let (son, p) = escalated_son(&h);
        let h2 = permanentify(&h, &son).unwrap();
        let mut rf = RoleFlow::new(&h2);
        let l = ScoreLedger::memoryless(0.5);
        let EnrollmentResult::Complete(next) = rf.enroll(&p, 1, &h2, &l, 0).unwrap() else {
            panic!("permanent node should cover the missing role locally")
        };
        assert_eq!(next.levels_spanned, BTreeSet::from([1]));
    }

    #[test]
    fn permanent_node_plays_one_instance_per_role() {
        // traced: {b, c, c} at level 1 after permanentification of {b=m, c=k}.
        // m and perm can together fill b and one c; the second c escalates.
        let h = three_levels();
        let (son, _) = escalated_son(&h);
        let h2 = permanentify(&h, &son).unwrap();
        let mut rf = RoleFlow::new(&h2);
        let l = ScoreLedger::memoryless(0.5);
        let p = Protocol::new("q", &["b", "c", "c"]);
        let EnrollmentResult::Exception(e) = rf.enroll(&p, 1, &h2, &l, 0).unwrap() else {
            panic!()
        };
        assert_eq!(e.missing, crate::roleflow::multiset(&[Role::from("c")]));
        let perm = permanent_id(&son);
        assert_eq!(e.partial.len(), 2);
        assert!(e.partial.iter().any(|c| c.node == perm && c.role == Role::from("c")));
        assert!(e.partial.iter().any(|c| c.node == NodeId::from("m") && c.role == Role::from("b")));
    }
}
