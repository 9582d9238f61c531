//! Role-flow protocol engine.
//!
//! A protocol fires once every one of its required role instances has a
//! player. Players are first sought in the level where the need arose; the
//! unfilled remainder is raised as a role exception and searched for in each
//! level above, in ascending order. The resulting set of players is a social
//! overlay network (SON): a temporary organ that may span several levels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{Hierarchy, NodeId, Role};
use crate::knowledge::ScoreLedger;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RoleFlowError {
    #[error("level {0} does not exist")]
    UnknownLevel(usize),
    #[error("unknown SON `{0}`")]
    UnknownSon(String),
}

/// Multiset of roles, keyed by role with instance counts.
pub type RoleMultiset = BTreeMap<Role, usize>;

pub fn multiset<'a>(roles: impl IntoIterator<Item = &'a Role>) -> RoleMultiset {
    let mut m = RoleMultiset::new();
    for r in roles {
        *m.entry(r.clone()).or_default() += 1;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub id: String,
    pub required_roles: Vec<Role>,
    #[serde(default)]
    pub priority: i64,
    /// Cost units per enrolled node per tick.
    #[serde(default)]
    pub execution_cost: u64,
    /// Ticks of execution before the SON dissolves.
    #[serde(default = "default_duration")]
    pub duration: u32,
}

fn default_duration() -> u32 {
    1
}

impl Protocol {
    pub fn new(id: impl Into<String>, roles: &[&str]) -> Self {
        Self {
            id: id.into(),
            required_roles: roles.iter().map(|r| Role::new(*r)).collect(),
            priority: 0,
            execution_cost: 0,
            duration: 1,
        }
    }

    pub fn role_counts(&self) -> RoleMultiset {
        multiset(&self.required_roles)
    }

    /// Role instances in canonical order: by role, repeated per multiplicity.
    pub fn instances(&self) -> Vec<Role> {
        let mut v = self.required_roles.clone();
        v.sort();
        v
    }
}

/// One filled role instance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Casting {
    pub role: Role,
    pub node: NodeId,
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoleException {
    pub protocol: String,
    pub origin_level: usize,
    pub missing: RoleMultiset,
    /// Instances already filled at lower levels.
    pub partial: Vec<Casting>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Son {
    pub id: String,
    pub protocol: String,
    /// Sorted by (role, node).
    pub assignment: Vec<Casting>,
    pub levels_spanned: BTreeSet<usize>,
    pub formed_at: u64,
    pub signature: String,
}

impl Son {
    pub fn nodes(&self) -> BTreeSet<&NodeId> {
        self.assignment.iter().map(|c| &c.node).collect()
    }

    pub fn roles(&self) -> RoleMultiset {
        multiset(self.assignment.iter().map(|c| &c.role))
    }
}

/// Order-independent encoding of who plays what in a protocol:
/// `protocol[role=node;role=node]` with pairs sorted.
pub fn signature(protocol: &str, pairs: impl IntoIterator<Item = (Role, NodeId)>) -> String {
    let mut pairs: Vec<(Role, NodeId)> = pairs.into_iter().collect();
    pairs.sort();
    let body: Vec<String> = pairs.iter().map(|(r, n)| format!("{r}={n}")).collect();
    format!("{protocol}[{}]", body.join(";"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnrollmentResult {
    Complete(Son),
    Exception(RoleException),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EscalationResult {
    Resolved { son: Son, searched: Vec<usize> },
    /// The root was exhausted; reservations were rolled back.
    Pending { exception: RoleException, searched: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExecutionOutcome {
    Success,
    /// The debit for `tick` was refused; nothing was charged for it.
    Starved { tick: u64 },
    /// A member failed while the SON was running.
    Disrupted { tick: u64 },
}

impl ExecutionOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, ExecutionOutcome::Success)
    }

    pub fn label(&self) -> &'static str {
        match self {
            ExecutionOutcome::Success => "success",
            ExecutionOutcome::Starved { .. } => "starved",
            ExecutionOutcome::Disrupted { .. } => "disrupted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerEntry {
    pub tick: u64,
    pub node: NodeId,
    pub cost: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("debit of {requested} exceeds remaining budget {remaining}")]
pub struct Shortfall {
    pub requested: u64,
    pub remaining: u64,
}

/// System-wide pool of consumable resources.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EnergyBudget {
    initial: u64,
    remaining: u64,
    ledger: Vec<LedgerEntry>,
}

impl EnergyBudget {
    pub fn new(initial: u64) -> Self {
        Self {
            initial,
            remaining: initial,
            ledger: Vec::new(),
        }
    }

    pub fn initial(&self) -> u64 {
        self.initial
    }

    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    pub fn spent(&self) -> u64 {
        self.ledger.iter().map(|e| e.cost).sum()
    }

    /// Applies all `charges` or none of them. Zero charges are not recorded.
    pub fn debit(
        &mut self,
        tick: u64,
        charges: &[(NodeId, u64)],
        reason: &str,
    ) -> Result<(), Shortfall> {
        let total: u64 = charges.iter().map(|(_, c)| c).sum();
        if total > self.remaining {
            return Err(Shortfall {
                requested: total,
                remaining: self.remaining,
            });
        }
        for (node, cost) in charges.iter().filter(|(_, c)| *c > 0) {
            self.ledger.push(LedgerEntry {
                tick,
                node: node.clone(),
                cost: *cost,
                reason: reason.to_owned(),
            });
        }
        self.remaining -= total;
        Ok(())
    }

    pub fn is_conserved(&self) -> bool {
        self.initial.checked_sub(self.spent()) == Some(self.remaining)
    }
}

/// Runs `son` for `ticks` ticks starting at `first_tick`, charging
/// `execution_cost` per assigned role instance per tick.
pub fn execute(
    son: &Son,
    protocol: &Protocol,
    budget: &mut EnergyBudget,
    ticks: u64,
    first_tick: u64,
) -> ExecutionOutcome {
    let charges: Vec<(NodeId, u64)> = son
        .assignment
        .iter()
        .map(|c| (c.node.clone(), protocol.execution_cost))
        .collect();
    let reason = format!("execute:{}", son.id);
    for t in first_tick..first_tick + ticks {
        if budget.debit(t, &charges, &reason).is_err() {
            return ExecutionOutcome::Starved { tick: t };
        }
    }
    ExecutionOutcome::Success
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum NodeState {
    Idle,
    Enrolled { son: String },
    Failed { until: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SonRecord {
    pub son: Son,
    pub dissolved_at: u64,
    pub outcome: Option<ExecutionOutcome>,
}

impl SonRecord {
    pub fn lifetime(&self) -> u64 {
        self.dissolved_at - self.son.formed_at
    }
}

/// Runtime state of the role-flow scheme: node states, active SONs and the
/// history of dissolved ones.
#[derive(Debug, Clone, Default)]
pub struct RoleFlow {
    states: BTreeMap<NodeId, NodeState>,
    active: BTreeMap<String, Son>,
    history: Vec<SonRecord>,
    next_son: u64,
}

impl RoleFlow {
    pub fn new(h: &Hierarchy) -> Self {
        let mut rf = Self::default();
        rf.sync(h);
        rf
    }

    /// Registers any nodes of `h` not yet known, as Idle.
    pub fn sync(&mut self, h: &Hierarchy) {
        for n in h.nodes() {
            self.states.entry(n.id.clone()).or_insert(NodeState::Idle);
        }
    }

    pub fn state(&self, id: &NodeId) -> Option<&NodeState> {
        self.states.get(id)
    }

    pub fn is_idle(&self, id: &NodeId) -> bool {
        matches!(self.states.get(id), Some(NodeState::Idle))
    }

    pub fn is_failed(&self, id: &NodeId) -> bool {
        matches!(self.states.get(id), Some(NodeState::Failed { .. }))
    }

    pub fn active(&self) -> impl Iterator<Item = &Son> {
        self.active.values()
    }

    pub fn active_son(&self, id: &str) -> Option<&Son> {
        self.active.get(id)
    }

    pub fn history(&self) -> &[SonRecord] {
        &self.history
    }

    /// Marks a node failed until `until`. Returns the SON it was serving.
    pub fn fail(&mut self, id: &NodeId, until: u64) -> Option<String> {
        let prev = self.states.insert(id.clone(), NodeState::Failed { until });
        match prev {
            Some(NodeState::Enrolled { son }) => Some(son),
            Some(NodeState::Failed { until: old }) => {
                self.states
                    .insert(id.clone(), NodeState::Failed { until: old.max(until) });
                None
            }
            _ => None,
        }
    }

    /// Returns nodes whose repair delay has elapsed to Idle.
    pub fn repair(&mut self, tick: u64) -> Vec<NodeId> {
        let mut repaired = Vec::new();
        for (id, st) in self.states.iter_mut() {
            if let NodeState::Failed { until } = st {
                if *until <= tick {
                    *st = NodeState::Idle;
                    repaired.push(id.clone());
                }
            }
        }
        repaired
    }

    fn idle_at(&self, h: &Hierarchy, level: usize, exclude: &BTreeSet<NodeId>) -> Vec<NodeId> {
        h.levels()[level]
            .members
            .iter()
            .filter(|m| self.is_idle(m) && !exclude.contains(*m))
            .cloned()
            .collect()
    }

    /// Tries to fill every role instance of `p` from the Idle nodes of
    /// `level_index`. On success the chosen nodes are Enrolled in a new SON.
    pub fn enroll(
        &mut self,
        p: &Protocol,
        level_index: usize,
        h: &Hierarchy,
        scores: &ScoreLedger,
        tick: u64,
    ) -> Result<EnrollmentResult, RoleFlowError> {
        if level_index >= h.levels().len() {
            return Err(RoleFlowError::UnknownLevel(level_index));
        }
        let candidates = self.idle_at(h, level_index, &BTreeSet::new());
        let instances = p.instances();
        let filled = assign(&instances, &candidates, h, scores);
        let mut partial = Vec::new();
        let mut missing = RoleMultiset::new();
        for (role, slot) in instances.into_iter().zip(filled) {
            match slot {
                Some(node) => partial.push(Casting {
                    role,
                    node,
                    level: level_index,
                }),
                None => *missing.entry(role).or_default() += 1,
            }
        }
        if missing.is_empty() {
            let son = self.form(p, partial, BTreeSet::from([level_index]), tick);
            return Ok(EnrollmentResult::Complete(son));
        }
        Ok(EnrollmentResult::Exception(RoleException {
            protocol: p.id.clone(),
            origin_level: level_index,
            missing,
            partial,
        }))
    }

    /// Searches the levels above the exception's origin, one at a time, for
    /// the missing roles. The origin level is never searched again.
    pub fn escalate(
        &mut self,
        e: &RoleException,
        p: &Protocol,
        h: &Hierarchy,
        scores: &ScoreLedger,
        tick: u64,
    ) -> EscalationResult {
        let mut castings: Vec<Casting> = e
            .partial
            .iter()
            .filter(|c| self.is_idle(&c.node))
            .cloned()
            .collect();
        let mut missing = e.missing.clone();
        for c in &e.partial {
            if !castings.contains(c) {
                *missing.entry(c.role.clone()).or_default() += 1;
            }
        }
        let mut searched = Vec::new();
        for level in e.origin_level + 1..h.levels().len() {
            if missing.is_empty() {
                break;
            }
            searched.push(level);
            let reserved: BTreeSet<NodeId> = castings.iter().map(|c| c.node.clone()).collect();
            let candidates = self.idle_at(h, level, &reserved);
            let instances: Vec<Role> = missing
                .iter()
                .flat_map(|(r, k)| std::iter::repeat_n(r.clone(), *k))
                .collect();
            let filled = assign(&instances, &candidates, h, scores);
            for (role, slot) in instances.into_iter().zip(filled) {
                if let Some(node) = slot {
                    let left = missing.get_mut(&role).expect("instance of a missing role");
                    *left -= 1;
                    if *left == 0 {
                        missing.remove(&role);
                    }
                    castings.push(Casting { role, node, level });
                }
            }
        }
        if missing.is_empty() {
            let mut levels: BTreeSet<usize> = castings.iter().map(|c| c.level).collect();
            levels.insert(e.origin_level);
            let son = self.form(p, castings, levels, tick);
            EscalationResult::Resolved { son, searched }
        } else {
            EscalationResult::Pending {
                exception: RoleException {
                    protocol: e.protocol.clone(),
                    origin_level: e.origin_level,
                    missing,
                    partial: Vec::new(),
                },
                searched,
            }
        }
    }

    fn form(
        &mut self,
        p: &Protocol,
        mut assignment: Vec<Casting>,
        levels_spanned: BTreeSet<usize>,
        tick: u64,
    ) -> Son {
        assignment.sort();
        let id = format!("son-{:05}", self.next_son);
        self.next_son += 1;
        for c in &assignment {
            self.states
                .insert(c.node.clone(), NodeState::Enrolled { son: id.clone() });
        }
        let son = Son {
            signature: signature(
                &p.id,
                assignment.iter().map(|c| (c.role.clone(), c.node.clone())),
            ),
            id: id.clone(),
            protocol: p.id.clone(),
            assignment,
            levels_spanned,
            formed_at: tick,
        };
        self.active.insert(id, son.clone());
        son
    }

    /// Ends an active SON. Enrolled members return to Idle; failed members
    /// stay failed. Dissolving an unknown or already dissolved SON is a no-op.
    pub fn dissolve(
        &mut self,
        son_id: &str,
        tick: u64,
        outcome: Option<ExecutionOutcome>,
    ) -> Option<SonRecord> {
        let son = self.active.remove(son_id)?;
        for c in &son.assignment {
            if let Some(st @ NodeState::Enrolled { .. }) = self.states.get_mut(&c.node) {
                *st = NodeState::Idle;
            }
        }
        let record = SonRecord {
            son,
            dissolved_at: tick,
            outcome,
        };
        self.history.push(record.clone());
        Some(record)
    }
}

/// A slot a node offers to role instances. Ordinary nodes offer one slot
/// usable for any of their roles; permanent nodes offer one slot per role.
#[derive(Debug, Clone)]
struct Slot {
    node: NodeId,
    only: Option<Role>,
}

/// Fills as many `instances` as possible from `candidates`, preferring, in
/// instance order, the best-ranked node whose choice still allows a maximum
/// matching of the rest.
fn assign(
    instances: &[Role],
    candidates: &[NodeId],
    h: &Hierarchy,
    scores: &ScoreLedger,
) -> Vec<Option<NodeId>> {
    let mut slots = Vec::new();
    for id in candidates {
        let node = h.node(id).expect("candidate is a hierarchy node");
        if node.permanent {
            for r in &node.capabilities {
                slots.push(Slot {
                    node: id.clone(),
                    only: Some(r.clone()),
                });
            }
        } else if !node.capabilities.is_empty() {
            slots.push(Slot {
                node: id.clone(),
                only: None,
            });
        }
    }
    let fits = |role: &Role, s: &Slot| {
        s.only.as_ref().is_none_or(|o| o == role)
            && h.node(&s.node).is_some_and(|n| n.can_play(role))
    };
    // eligible slots per instance, best first
    let ranked: Vec<Vec<usize>> = instances
        .iter()
        .map(|role| {
            let eligible: Vec<NodeId> = slots
                .iter()
                .filter(|s| fits(role, s))
                .map(|s| s.node.clone())
                .collect();
            scores
                .rank(role, &eligible)
                .into_iter()
                .map(|n| {
                    slots
                        .iter()
                        .position(|s| s.node == n && fits(role, s))
                        .expect("ranked node has a slot")
                })
                .collect()
        })
        .collect();

    let mut used = vec![false; slots.len()];
    let mut need = max_matching(&ranked, 0, &used);
    let mut out = vec![None; instances.len()];
    for i in 0..instances.len() {
        let mut placed = false;
        for &s in &ranked[i] {
            if used[s] {
                continue;
            }
            used[s] = true;
            if 1 + max_matching(&ranked, i + 1, &used) == need {
                out[i] = Some(slots[s].node.clone());
                need -= 1;
                placed = true;
                break;
            }
            used[s] = false;
        }
        if !placed {
            debug_assert_eq!(max_matching(&ranked, i + 1, &used), need);
        }
    }
    out
}

/// Maximum bipartite matching of instances `from..` against unused slots.
fn max_matching(adj: &[Vec<usize>], from: usize, used: &[bool]) -> usize {
    let mut owner: Vec<Option<usize>> = vec![None; used.len()];
    let mut size = 0;
    for i in from..adj.len() {
        let mut seen = vec![false; used.len()];
        if augment(adj, i, used, &mut owner, &mut seen) {
            size += 1;
        }
    }
    size
}

fn augment(
    adj: &[Vec<usize>],
    i: usize,
    used: &[bool],
    owner: &mut [Option<usize>],
    seen: &mut [bool],
) -> bool {
    for &s in &adj[i] {
        if used[s] || seen[s] {
            continue;
        }
        seen[s] = true;
        if owner[s].is_none_or(|o| augment(adj, o, used, owner, seen)) {
            owner[s] = Some(i);
            return true;
        }
    }
    false
}

impl fmt::Display for Casting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}@{}", self.role, self.node, self.level)
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::three_levels;
    use super::*;
    use crate::classification::ContextUniverse;
    use crate::hierarchy::fixtures::node;
    use crate::hierarchy::{build, HierarchySpec, LevelSpec};

    fn flat(nodes: &[(&str, &[&str])]) -> Hierarchy {
        let spec = HierarchySpec {
            levels: vec![LevelSpec {
                members: nodes.iter().map(|(id, caps)| node(id, caps, &[])).collect(),
                canon: None,
            }],
        };
        build(&spec, &ContextUniverse::new("u", ["f"]).unwrap()).unwrap()
    }

    fn ledger() -> ScoreLedger {
        ScoreLedger::memoryless(0.5)
    }

    #[test]
    fn enroll_complete() {
        let h = flat(&[("n1", &["a"]), ("n2", &["b"])]);
        let mut rf = RoleFlow::new(&h);
        let p = Protocol::new("p", &["a", "b"]);
        let EnrollmentResult::Complete(son) = rf.enroll(&p, 0, &h, &ledger(), 0).unwrap() else {
            panic!("expected complete");
        };
        assert_eq!(son.roles(), p.role_counts());
        assert_eq!(son.levels_spanned, BTreeSet::from([0]));
        assert!(matches!(rf.state(&"n1".into()), Some(NodeState::Enrolled { .. })));
    }

    #[test]
    fn enroll_missing_role() {
        let h = flat(&[("n1", &["a"]), ("n2", &["a"])]);
        let mut rf = RoleFlow::new(&h);
        let p = Protocol::new("p", &["a", "b"]);
        let EnrollmentResult::Exception(e) = rf.enroll(&p, 0, &h, &ledger(), 0).unwrap() else {
            panic!("expected exception");
        };
        assert_eq!(e.missing, multiset(&[Role::from("b")]));
        // an exception reserves nothing
        assert!(rf.is_idle(&"n1".into()));
    }

    #[test]
    fn one_node_cannot_fill_two_instances() {
        let h = flat(&[("n1", &["a"])]);
        let mut rf = RoleFlow::new(&h);
        let p = Protocol::new("p", &["a", "a"]);
        let EnrollmentResult::Exception(e) = rf.enroll(&p, 0, &h, &ledger(), 0).unwrap() else {
            panic!("expected exception");
        };
        assert_eq!(e.missing, multiset(&[Role::from("a")]));
    }

    #[test]
    fn unknown_level() {
        let h = flat(&[("n1", &["a"])]);
        let mut rf = RoleFlow::new(&h);
        assert_eq!(
            rf.enroll(&Protocol::new("p", &["a"]), 3, &h, &ledger(), 0),
            Err(RoleFlowError::UnknownLevel(3))
        );
    }

    #[test]
    fn lookahead_avoids_blocking_a_flexible_node() {
        // n1 can play both; the higher-ranked choice for `a` would starve `b`
        let h = flat(&[("n1", &["a", "b"]), ("n2", &["a"])]);
        let mut rf = RoleFlow::new(&h);
        let p = Protocol::new("p", &["a", "b"]);
        let EnrollmentResult::Complete(son) = rf.enroll(&p, 0, &h, &ledger(), 0).unwrap() else {
            panic!("expected complete");
        };
        assert_eq!(son.signature, "p[a=n2;b=n1]");
    }

    #[test]
    fn enroll_prefers_score_then_id() {
        let h = flat(&[("n1", &["a"]), ("n2", &["a"]), ("n3", &["a"])]);
        let mut scores = ScoreLedger::new(0.5, 0.1, 0.5).unwrap();
        scores.set(&"n3".into(), &"a".into(), 0.9);
        let mut rf = RoleFlow::new(&h);
        let p = Protocol::new("p", &["a", "a"]);
        let EnrollmentResult::Complete(son) = rf.enroll(&p, 0, &h, &scores, 0).unwrap() else {
            panic!()
        };
        assert_eq!(son.signature, "p[a=n1;a=n3]");
    }

    #[test]
    fn escalate_one_level() {
        let h = three_levels();
        let mut rf = RoleFlow::new(&h);
        let p = Protocol::new("p", &["b", "c"]);
        let EnrollmentResult::Exception(e) = rf.enroll(&p, 1, &h, &ledger(), 0).unwrap() else {
            panic!()
        };
        assert_eq!(e.missing, multiset(&[Role::from("c")]));
        let EscalationResult::Resolved { son, searched } = rf.escalate(&e, &p, &h, &ledger(), 0)
        else {
            panic!()
        };
        assert_eq!(son.levels_spanned, BTreeSet::from([1, 2]));
        assert_eq!(searched, vec![2]);
        assert_eq!(son.roles(), p.role_counts());
    }

    #[test]
    fn escalate_across_two_levels() {
        let h = three_levels();
        let mut rf = RoleFlow::new(&h);
        let p = Protocol::new("p", &["a", "b", "c"]);
        let EnrollmentResult::Exception(e) = rf.enroll(&p, 0, &h, &ledger(), 0).unwrap() else {
            panic!()
        };
        assert_eq!(e.missing, multiset(&[Role::from("b"), Role::from("c")]));
        let EscalationResult::Resolved { son, searched } = rf.escalate(&e, &p, &h, &ledger(), 0)
        else {
            panic!()
        };
        // hand trace: a <- x (L0), b <- m (L1), c <- k (L2, id order k < top)
        assert_eq!(son.signature, "p[a=x;b=m;c=k]");
        assert_eq!(son.levels_spanned, BTreeSet::from([0, 1, 2]));
        assert_eq!(searched, vec![1, 2]);
    }

    #[test]
    fn escalate_pending_rolls_back() {
        let h = three_levels();
        let mut rf = RoleFlow::new(&h);
        let p = Protocol::new("p", &["a", "z"]);
        let EnrollmentResult::Exception(e) = rf.enroll(&p, 0, &h, &ledger(), 0).unwrap() else {
            panic!()
        };
        let EscalationResult::Pending { exception, searched } =
            rf.escalate(&e, &p, &h, &ledger(), 0)
        else {
            panic!()
        };
        assert_eq!(exception.missing, multiset(&[Role::from("z")]));
        assert_eq!(searched, vec![1, 2]);
        assert!(h.nodes().all(|n| rf.is_idle(&n.id)));
        assert_eq!(rf.active().count(), 0);
    }

    #[test]
    fn local_roles_span_a_single_level() {
        let h = three_levels();
        let mut rf = RoleFlow::new(&h);
        let p = Protocol::new("p", &["a", "a"]);
        let EnrollmentResult::Complete(son) = rf.enroll(&p, 0, &h, &ledger(), 0).unwrap() else {
            panic!()
        };
        assert_eq!(son.levels_spanned.len(), 1);
    }

    fn son_of(n: usize, cost: u64) -> (Son, Protocol) {
        let roles: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
        let refs: Vec<&str> = roles.iter().map(String::as_str).collect();
        let mut p = Protocol::new("p", &refs);
        p.execution_cost = cost;
        let assignment = (0..n)
            .map(|i| Casting {
                role: Role::new(format!("r{i}")),
                node: NodeId::new(format!("n{i}")),
                level: 0,
            })
            .collect();
        let son = Son {
            id: "s".into(),
            protocol: "p".into(),
            assignment,
            levels_spanned: BTreeSet::from([0]),
            formed_at: 0,
            signature: String::new(),
        };
        (son, p)
    }

    #[test]
    fn execute_success() {
        let (son, p) = son_of(3, 1);
        let mut b = EnergyBudget::new(10);
        assert_eq!(execute(&son, &p, &mut b, 2, 1), ExecutionOutcome::Success);
        assert_eq!(b.remaining(), 4);
        assert!(b.is_conserved());
        assert_eq!(b.ledger().len(), 6);
    }

    #[test]
    fn execute_starves_without_partial_debit() {
        let (son, p) = son_of(3, 1);
        let mut b = EnergyBudget::new(5);
        assert_eq!(execute(&son, &p, &mut b, 2, 1), ExecutionOutcome::Starved { tick: 2 });
        assert_eq!(b.remaining(), 2);
        assert!(b.is_conserved());
    }

    #[test]
    fn zero_cost_always_succeeds() {
        let (son, p) = son_of(4, 0);
        let mut b = EnergyBudget::new(0);
        assert_eq!(execute(&son, &p, &mut b, 100, 0), ExecutionOutcome::Success);
        assert!(b.ledger().is_empty());
    }

    #[test]
    fn dissolve_is_idempotent_and_frees_nodes() {
        let h = flat(&[("n1", &["a"]), ("n2", &["b"])]);
        let mut rf = RoleFlow::new(&h);
        let p = Protocol::new("p", &["a", "b"]);
        let EnrollmentResult::Complete(son) = rf.enroll(&p, 0, &h, &ledger(), 0).unwrap() else {
            panic!()
        };
        let rec = rf.dissolve(&son.id, 4, Some(ExecutionOutcome::Success)).unwrap();
        assert_eq!(rec.lifetime(), 4);
        assert!(rf.is_idle(&"n1".into()) && rf.is_idle(&"n2".into()));
        let states: Vec<_> = h.nodes().map(|n| rf.state(&n.id).cloned()).collect();
        assert!(rf.dissolve(&son.id, 5, None).is_none());
        let again: Vec<_> = h.nodes().map(|n| rf.state(&n.id).cloned()).collect();
        assert_eq!(states, again);
        assert_eq!(rf.history().len(), 1);

        let EnrollmentResult::Complete(son2) = rf.enroll(&p, 0, &h, &ledger(), 6).unwrap() else {
            panic!()
        };
        assert_eq!(son2.signature, son.signature);
        assert_ne!(son2.id, son.id);
    }

    #[test]
    fn signature_is_order_independent() {
        let a = signature("p", [(Role::from("x"), NodeId::from("2")), (Role::from("y"), NodeId::from("1"))]);
        let b = signature("p", [(Role::from("y"), NodeId::from("1")), (Role::from("x"), NodeId::from("2"))]);
        assert_eq!(a, b);
    }

    #[test]
    fn failed_nodes_are_not_candidates_and_repair() {
        let h = flat(&[("n1", &["a"])]);
        let mut rf = RoleFlow::new(&h);
        rf.fail(&"n1".into(), 3);
        let p = Protocol::new("p", &["a"]);
        assert!(matches!(
            rf.enroll(&p, 0, &h, &ledger(), 0).unwrap(),
            EnrollmentResult::Exception(_)
        ));
        assert!(rf.repair(2).is_empty());
        assert_eq!(rf.repair(3), vec![NodeId::from("n1")]);
        assert!(rf.is_idle(&"n1".into()));
    }
}
