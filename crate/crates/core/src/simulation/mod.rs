//! Deterministic tick-based kernel tying the other modules together.

mod report;
mod scenario;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::allocation::{min_threshold, AllocationDecision, AllocationError, AllocationState, Pool};
use crate::classification::{classify, BehaviorClass, ContextFigure, SystemicClass};
use crate::hierarchy::{Hierarchy, Node, NodeId};
use crate::knowledge::{permanentify, KnowledgeError, RecurrenceTracker, ScoreLedger};
use crate::roleflow::{
    execute, EnergyBudget, EnrollmentResult, EscalationResult, ExecutionOutcome, RoleFlow,
    RoleFlowError, Son,
};

pub use report::{
    AllocatorRow, EnergyRow, EventRow, Latency, MetricsReport, Permanentification, RunSummary,
    ScoreRow, ALLOCATOR_HEADER, ENERGY_HEADER, EVENTS_HEADER, SCORES_HEADER,
};
pub use scenario::{
    AllocatorSettings, BehaviorCosts, Event, EventKind, Scenario, ScenarioError, ScenarioFile,
};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    RoleFlow(#[from] RoleFlowError),
    #[error("energy ledger out of balance at tick {tick}")]
    EnergyImbalance { tick: u64 },
}

/// Nodes reached by a catastrophe, with their hop distance from the
/// epicenter, and the subset that perceives it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ripple {
    pub hops: BTreeMap<NodeId, u32>,
    pub perceiving: BTreeSet<NodeId>,
}

impl Ripple {
    pub fn affected(&self) -> BTreeSet<&NodeId> {
        self.hops.keys().collect()
    }
}

/// Breadth-first walk from `epicenter` to its dependents, at most
/// `magnitude` hops, visiting each node once.
pub fn ripple(
    h: &Hierarchy,
    epicenter: &NodeId,
    figures: &BTreeSet<ContextFigure>,
    magnitude: u32,
) -> Ripple {
    let mut hops = BTreeMap::new();
    if h.contains(epicenter) {
        hops.insert(epicenter.clone(), 0);
        let mut queue = VecDeque::from([(epicenter.clone(), 0u32)]);
        while let Some((n, d)) = queue.pop_front() {
            if d == magnitude {
                continue;
            }
            for dep in h.dependents(&n) {
                if !hops.contains_key(dep) {
                    hops.insert(dep.clone(), d + 1);
                    queue.push_back((dep.clone(), d + 1));
                }
            }
        }
    }
    let perceiving = hops
        .keys()
        .filter(|n| {
            h.node(n)
                .is_some_and(|node| node.features.perception.intersects(figures))
        })
        .cloned()
        .collect();
    Ripple { hops, perceiving }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Delivery {
    /// Level whose canon receives the notification.
    pub level: usize,
    pub canon: NodeId,
    pub origin: NodeId,
}

/// Deliveries of a notification published by `origin`, lowest level first.
pub fn publish(h: &Hierarchy, origin: &NodeId) -> Vec<Delivery> {
    h.ancestor_canons(origin)
        .into_iter()
        .map(|(level, canon)| Delivery {
            level,
            canon,
            origin: origin.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    Act(BehaviorClass),
    Abstain,
}

impl Behavior {
    pub fn label(&self) -> String {
        match self {
            Behavior::Act(c) => c.to_string(),
            Behavior::Abstain => "Abstain".into(),
        }
    }
}

/// What `class` costs `node`: its own profile entry, else the default.
pub fn behavior_cost(node: &Node, class: BehaviorClass, defaults: &BehaviorCosts) -> u64 {
    node.energy_cost_profile
        .get(&class)
        .copied()
        .unwrap_or_else(|| defaults.cost(class))
}

/// The most complex affordable behavior within the class's ceiling.
pub fn choose_behavior(
    node: &Node,
    node_class: SystemicClass,
    remaining: u64,
    defaults: &BehaviorCosts,
) -> Behavior {
    let ceiling = node_class.behavior_ceiling();
    BehaviorClass::ALL
        .iter()
        .rev()
        .filter(|c| **c <= ceiling)
        .find(|c| behavior_cost(node, **c, defaults) <= remaining)
        .map_or(Behavior::Abstain, |c| Behavior::Act(*c))
}

#[derive(Debug, Clone)]
struct Demand {
    seq: u64,
    protocol: String,
    priority: i64,
    level: usize,
    situation: String,
    set_at: u64,
}

#[derive(Debug, Clone)]
struct Running {
    elapsed: u64,
    demand: Demand,
}

#[derive(Debug, Clone)]
struct LevelState {
    alloc: AllocationState,
    active: BTreeSet<NodeId>,
    situation: Option<String>,
}

#[derive(Debug, Clone)]
enum Cause {
    Context(ContextFigure),
    Catastrophe(usize),
}

/// A run in progress. Owns all of its state; independent runs may be moved
/// to different threads.
#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: Scenario,
    h: Hierarchy,
    rf: RoleFlow,
    budget: EnergyBudget,
    scores: ScoreLedger,
    recurrence: RecurrenceTracker,
    levels: Vec<LevelState>,
    demands: Vec<Demand>,
    running: BTreeMap<String, Running>,
    rng: ChaCha8Rng,
    tick: u64,
    next_event: usize,
    next_demand: u64,
    events: Vec<EventRow>,
    allocator: Vec<AllocatorRow>,
    energy: Vec<EnergyRow>,
    summary: RunSummary,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, SimulationError> {
        let h = scenario.hierarchy().clone();
        let cfg = scenario.allocator().config();
        let levels = h
            .levels()
            .iter()
            .map(|l| {
                Ok(LevelState {
                    alloc: AllocationState::new(l.members.len() as u32, cfg)?,
                    active: BTreeSet::new(),
                    situation: None,
                })
            })
            .collect::<Result<Vec<_>, AllocationError>>()?;
        let knowledge = scenario.knowledge();
        let scores = if knowledge.enabled {
            ScoreLedger::from_config(knowledge)?
        } else {
            ScoreLedger::memoryless(knowledge.default_score)
        };
        let summary = RunSummary {
            scenario: scenario.name().to_owned(),
            seed: scenario.seed(),
            horizon: scenario.horizon(),
            memoryless: !knowledge.enabled,
            budget_initial: scenario.budget(),
            budget_remaining: scenario.budget(),
            ..RunSummary::default()
        };
        Ok(Self {
            rf: RoleFlow::new(&h),
            budget: EnergyBudget::new(scenario.budget()),
            scores,
            recurrence: RecurrenceTracker::new(knowledge.recurrence_threshold)?,
            levels,
            demands: Vec::new(),
            running: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(scenario.seed()),
            tick: 0,
            next_event: 0,
            next_demand: 0,
            events: Vec::new(),
            allocator: Vec::new(),
            energy: Vec::new(),
            summary,
            h,
            scenario: scenario.clone(),
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn is_finished(&self) -> bool {
        self.tick >= self.scenario.horizon()
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.h
    }

    pub fn role_flow(&self) -> &RoleFlow {
        &self.rf
    }

    pub fn budget(&self) -> &EnergyBudget {
        &self.budget
    }

    pub fn scores(&self) -> &ScoreLedger {
        &self.scores
    }

    pub fn events(&self) -> &[EventRow] {
        &self.events
    }

    /// Runs the remaining ticks and returns the collected metrics.
    pub fn finish(mut self) -> Result<MetricsReport, SimulationError> {
        while !self.is_finished() {
            self.step()?;
        }
        let scores = self.scores.is_enabled().then(|| {
            self.scores
                .snapshot()
                .into_iter()
                .map(|(n, r, s)| ScoreRow {
                    node: n.to_string(),
                    role: r.to_string(),
                    score: s,
                })
                .collect()
        });
        self.summary.budget_spent = self.budget.spent();
        self.summary.budget_remaining = self.budget.remaining();
        Ok(MetricsReport {
            events: self.events,
            allocator: self.allocator,
            energy: self.energy,
            scores,
            summary: self.summary,
        })
    }

    /// Advances one tick.
    pub fn step(&mut self) -> Result<(), SimulationError> {
        let t = self.tick;
        let ledger_before = self.budget.spent();
        let mut finished: Vec<(Son, ExecutionOutcome)> = Vec::new();

        for id in self.rf.repair(t) {
            self.summary.repairs += 1;
            let level = self.h.level_of(&id).expect("known node");
            self.events
                .push(EventRow::new(t, "repair").level(level).detail(format!("node={id}")));
        }

        let notices = self.apply_events(t, &mut finished);
        self.notify(t, notices);

        for level in 0..self.levels.len() {
            self.allocate(t, level);
            self.serve(t, level)?;
        }

        self.run_sons(t, &mut finished);
        self.learn(t, finished)?;

        if !self.budget.is_conserved() {
            return Err(SimulationError::EnergyImbalance { tick: t });
        }
        let total = self.budget.spent();
        self.energy.push(EnergyRow {
            tick: t,
            spent: total - ledger_before,
            ledger_total: total,
            remaining: self.budget.remaining(),
        });
        self.tick += 1;
        Ok(())
    }

    fn apply_events(
        &mut self,
        t: u64,
        finished: &mut Vec<(Son, ExecutionOutcome)>,
    ) -> Vec<(Delivery, Cause)> {
        let mut notices = Vec::new();
        while let Some(ev) = self
            .scenario
            .events()
            .get(self.next_event)
            .filter(|e| e.at_tick <= t)
            .cloned()
        {
            let index = self.next_event;
            self.next_event += 1;
            if ev.at_tick < t {
                continue;
            }
            match &ev.kind {
                EventKind::SituationSet { level, situation } => {
                    let s = &self.scenario.situations()[situation];
                    self.levels[*level].situation = Some(situation.clone());
                    self.demands.retain(|d| d.level != *level);
                    for pid in &s.protocols {
                        let p = &self.scenario.protocols()[pid];
                        self.demands.push(Demand {
                            seq: self.next_demand,
                            protocol: pid.clone(),
                            priority: p.priority,
                            level: *level,
                            situation: situation.clone(),
                            set_at: t,
                        });
                        self.next_demand += 1;
                    }
                    self.events.push(
                        EventRow::new(t, "situation_set")
                            .level(*level)
                            .detail(format!("situation={situation}")),
                    );
                }
                EventKind::ContextChange { figure, level } => {
                    self.events.push(
                        EventRow::new(t, "context_change")
                            .level(*level)
                            .detail(format!("figure={figure}")),
                    );
                    let st = &mut self.levels[*level];
                    if let Some(s) = &st.situation {
                        if self.scenario.situations()[s].relevant_figures.contains(figure) {
                            st.alloc.reset_streak();
                        }
                    }
                    let mut members = self.h.levels()[*level].members.clone();
                    members.sort();
                    for m in members {
                        let node = self.h.node(&m).expect("member");
                        if node.features.perception.contains(figure) {
                            for d in publish(&self.h, &m) {
                                notices.push((d, Cause::Context(figure.clone())));
                            }
                        }
                    }
                }
                EventKind::Catastrophe {
                    epicenter,
                    figures,
                    magnitude,
                } => {
                    self.events.push(
                        EventRow::new(t, "catastrophe")
                            .level(self.h.level_of(epicenter).expect("validated epicenter"))
                            .detail(format!(
                                "epicenter={epicenter};magnitude={magnitude};figures={}",
                                report::join(figures).replace(';', ",")
                            )),
                    );
                    let r = ripple(&self.h, epicenter, figures, *magnitude);
                    for (node, hop) in &r.hops {
                        let p = 1.0 / f64::from(hop + 1);
                        if self.rng.gen_bool(p) {
                            self.fail(t, node, *hop, finished);
                        }
                    }
                    for node in &r.perceiving {
                        for d in publish(&self.h, node) {
                            notices.push((d, Cause::Catastrophe(index)));
                        }
                    }
                }
            }
        }
        notices
    }

    fn fail(
        &mut self,
        t: u64,
        node: &NodeId,
        hop: u32,
        finished: &mut Vec<(Son, ExecutionOutcome)>,
    ) {
        let level = self.h.level_of(node).expect("known node");
        self.summary.failures += 1;
        self.events.push(
            EventRow::new(t, "failure")
                .level(level)
                .detail(format!("node={node};hop={hop}")),
        );
        self.levels[level].active.remove(node);
        let Some(son_id) = self.rf.fail(node, t + self.scenario.repair_delay()) else {
            return;
        };
        let outcome = ExecutionOutcome::Disrupted { tick: t };
        if let Some(rec) = self.rf.dissolve(&son_id, t, Some(outcome)) {
            self.summary.sons_disrupted += 1;
            self.events.push(dissolved_row(t, &rec.son, &outcome));
            if let Some(run) = self.running.remove(&son_id) {
                // the need it served has not gone away
                let mut d = run.demand;
                if self.levels[d.level].situation.as_ref() == Some(&d.situation) {
                    d.seq = self.next_demand;
                    d.set_at = t;
                    self.next_demand += 1;
                    self.demands.push(d);
                }
            }
            finished.push((rec.son, outcome));
        }
    }

    fn notify(&mut self, t: u64, mut notices: Vec<(Delivery, Cause)>) {
        notices.sort_by(|a, b| a.0.cmp(&b.0));
        let mut acted: BTreeSet<(usize, NodeId)> = BTreeSet::new();
        for (d, cause) in notices {
            self.summary.notifications += 1;
            let cause_label = match &cause {
                Cause::Context(f) => format!("context:{f}"),
                Cause::Catastrophe(_) => "catastrophe".to_owned(),
            };
            self.events.push(
                EventRow::new(t, "notification")
                    .level(d.level)
                    .detail(format!("canon={};origin={};cause={cause_label}", d.canon, d.origin)),
            );
            let Cause::Catastrophe(index) = cause else {
                continue;
            };
            if self.rf.is_failed(&d.canon) || !acted.insert((index, d.canon.clone())) {
                continue;
            }
            let node = self.h.node(&d.canon).expect("canon is a node");
            let class = classify(&node.features);
            let costs = self.scenario.behavior_costs();
            let choice = choose_behavior(node, class, self.budget.remaining(), &costs);
            if let Behavior::Act(c) = choice {
                let cost = behavior_cost(node, c, &costs);
                self.budget
                    .debit(t, &[(d.canon.clone(), cost)], &format!("behavior:{c}"))
                    .expect("choice is affordable");
            } else {
                self.summary.abstentions += 1;
            }
            self.events.push(
                EventRow::new(t, "behavior")
                    .level(d.level)
                    .outcome(&choice.label())
                    .detail(format!("canon={};class={class:?}", d.canon)),
            );
        }
    }

    fn allocate(&mut self, t: u64, level: usize) {
        let members = &self.h.levels()[level].members;
        let st = &mut self.levels[level];
        st.alloc.set_capacity(members.len() as u32);
        st.alloc.set_fired(st.active.len() as u32);
        let capacity = st.alloc.capacity();
        let Some(sid) = st.situation.clone() else {
            self.allocator.push(AllocatorRow {
                tick: t,
                level,
                situation: "-".into(),
                required: 0,
                fired: st.active.len() as u32,
                undershoot: 0,
                overshoot: 0,
                dtof: dtof_text(0, capacity),
                decision: AllocationDecision::NoChange.to_string(),
            });
            return;
        };
        let situation = &self.scenario.situations()[&sid];
        let floor = min_threshold(situation, &self.scenario.allocator().thresholds)
            .expect("validated threshold");

        let score = |id: &NodeId| self.scores.node_score(self.h.node(id).expect("member"));
        let by_score_desc = |v: &mut Vec<(f64, NodeId)>| {
            v.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        };
        let mut idle: Vec<(f64, NodeId)> = members
            .iter()
            .filter(|m| !st.active.contains(*m) && !self.rf.is_failed(m))
            .map(|m| (score(m), m.clone()))
            .collect();
        by_score_desc(&mut idle);
        let mut active: Vec<(f64, NodeId)> =
            st.active.iter().map(|m| (score(m), m.clone())).collect();
        by_score_desc(&mut active);
        let better_idle = match (idle.first(), active.last()) {
            (Some(best), Some(worst)) => best.0 > worst.0,
            _ => false,
        };
        let fired = st.alloc.fired();
        let decision = st.alloc.step(
            situation,
            floor,
            Pool {
                idle: idle.len() as u32,
                better_idle,
            },
        );
        match decision {
            AllocationDecision::Enroll(k) => {
                for (_, id) in idle.into_iter().take(k as usize) {
                    st.active.insert(id);
                }
            }
            AllocationDecision::Free(k) => {
                for (_, id) in active.into_iter().rev().take(k as usize) {
                    st.active.remove(&id);
                }
            }
            AllocationDecision::Reselect => {
                if let (Some((_, worst)), Some((_, best))) = (active.last(), idle.first()) {
                    st.active.remove(worst);
                    st.active.insert(best.clone());
                }
            }
            AllocationDecision::NoChange => {}
        }
        st.alloc.apply(decision);
        debug_assert_eq!(st.alloc.fired() as usize, st.active.len());
        self.allocator.push(AllocatorRow {
            tick: t,
            level,
            situation: sid,
            required: situation.required,
            fired,
            undershoot: st.alloc.undershoot(),
            overshoot: st.alloc.overshoot(),
            dtof: dtof_text(st.alloc.undershoot(), capacity),
            decision: decision.to_string(),
        });
    }

    fn serve(&mut self, t: u64, level: usize) -> Result<(), SimulationError> {
        let mut due: Vec<Demand> = Vec::new();
        self.demands.retain(|d| {
            if d.level == level {
                due.push(d.clone());
                false
            } else {
                true
            }
        });
        due.sort_by(|a, b| {
            b.priority
                .cmp(&a.priority)
                .then_with(|| a.protocol.cmp(&b.protocol))
                .then_with(|| a.seq.cmp(&b.seq))
        });
        for d in due {
            let p = self.scenario.protocols()[&d.protocol].clone();
            let son = match self.rf.enroll(&p, level, &self.h, &self.scores, t)? {
                EnrollmentResult::Complete(son) => Some(son),
                EnrollmentResult::Exception(e) => {
                    self.summary.exceptions += 1;
                    self.events.push(
                        EventRow::new(t, "exception")
                            .level(level)
                            .protocol(&p.id)
                            .detail(format!("missing={}", multiset_text(&e.missing))),
                    );
                    match self.rf.escalate(&e, &p, &self.h, &self.scores, t) {
                        EscalationResult::Resolved { son, searched } => {
                            self.escalated(t, level, &p.id, &searched, "resolved");
                            Some(son)
                        }
                        EscalationResult::Pending { exception, searched } => {
                            self.escalated(t, level, &p.id, &searched, "pending");
                            self.summary.pending += 1;
                            self.events.push(
                                EventRow::new(t, "pending")
                                    .level(level)
                                    .protocol(&p.id)
                                    .detail(format!(
                                        "missing={}",
                                        multiset_text(&exception.missing)
                                    )),
                            );
                            None
                        }
                    }
                }
            };
            match son {
                Some(son) => {
                    self.summary.sons_formed += 1;
                    let latency = t - d.set_at;
                    self.summary.latencies.push(Latency {
                        situation: d.situation.clone(),
                        protocol: d.protocol.clone(),
                        level,
                        set_at: d.set_at,
                        served_at: t,
                        ticks: latency,
                    });
                    self.events.push(
                        EventRow::new(t, "son_formed")
                            .level(level)
                            .protocol(&son.protocol)
                            .signature(&son.signature)
                            .spanned(&son.levels_spanned)
                            .detail(format!(
                                "son={};situation={};latency={latency}",
                                son.id, d.situation
                            )),
                    );
                    self.running.insert(
                        son.id.clone(),
                        Running {
                            elapsed: 0,
                            demand: d,
                        },
                    );
                }
                None => self.demands.push(d),
            }
        }
        Ok(())
    }

    fn escalated(&mut self, t: u64, level: usize, protocol: &str, searched: &[usize], result: &str) {
        for l in searched {
            *self.summary.escalations_per_level.entry(*l).or_default() += 1;
        }
        self.events.push(
            EventRow::new(t, "escalation")
                .level(level)
                .protocol(protocol)
                .outcome(result)
                .detail(format!("searched={}", report::join(searched))),
        );
    }

    fn run_sons(&mut self, t: u64, finished: &mut Vec<(Son, ExecutionOutcome)>) {
        let ids: Vec<String> = self.running.keys().cloned().collect();
        for id in ids {
            let son = self.rf.active_son(&id).expect("running SON is active").clone();
            let p = &self.scenario.protocols()[&son.protocol];
            let outcome = execute(&son, p, &mut self.budget, 1, t);
            let run = self.running.get_mut(&id).expect("running");
            let done = match outcome {
                ExecutionOutcome::Success => {
                    run.elapsed += 1;
                    run.elapsed >= u64::from(p.duration)
                }
                _ => true,
            };
            if !done {
                continue;
            }
            self.running.remove(&id);
            match outcome {
                ExecutionOutcome::Success => self.summary.sons_succeeded += 1,
                _ => self.summary.sons_starved += 1,
            }
            let rec = self.rf.dissolve(&id, t, Some(outcome)).expect("active SON");
            self.events.push(dissolved_row(t, &rec.son, &outcome));
            finished.push((rec.son, outcome));
        }
    }

    fn learn(&mut self, t: u64, finished: Vec<(Son, ExecutionOutcome)>) -> Result<(), SimulationError> {
        if !self.scores.is_enabled() {
            return Ok(());
        }
        for (son, outcome) in finished {
            self.scores.record_outcome(&son, &outcome);
            if !outcome.is_success() || !self.recurrence.observe_son(&son) {
                continue;
            }
            // a single-level SON already forms without escalating
            if son.levels_spanned.len() < 2 {
                continue;
            }
            let next = permanentify(&self.h, &son)?;
            if next.len() == self.h.len() {
                continue;
            }
            self.h = next;
            self.rf.sync(&self.h);
            let id = crate::knowledge::permanent_id(&son);
            let level = self.h.level_of(&id).expect("just added");
            let cap = self.h.levels()[level].members.len() as u32;
            self.levels[level].alloc.set_capacity(cap);
            self.summary.permanentifications.push(Permanentification {
                tick: t,
                node: id.to_string(),
                level,
                signature: son.signature.clone(),
            });
            self.events.push(
                EventRow::new(t, "permanentified")
                    .level(level)
                    .protocol(&son.protocol)
                    .signature(&son.signature)
                    .spanned(&son.levels_spanned)
                    .detail(format!("node={id}")),
            );
        }
        Ok(())
    }
}

fn dissolved_row(t: u64, son: &Son, outcome: &ExecutionOutcome) -> EventRow {
    EventRow::new(t, "son_dissolved")
        .level(*son.levels_spanned.first().expect("non-empty"))
        .protocol(&son.protocol)
        .signature(&son.signature)
        .spanned(&son.levels_spanned)
        .outcome(outcome.label())
        .detail(format!("son={}", son.id))
}

fn multiset_text(m: &crate::roleflow::RoleMultiset) -> String {
    m.iter()
        .map(|(r, k)| format!("{r}x{k}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn dtof_text(undershoot: u32, capacity: u32) -> String {
    if capacity == 0 {
        String::new()
    } else {
        format!("{}/{capacity}", undershoot.min(capacity))
    }
}

/// Runs `scenario` from tick 0 to its horizon.
pub fn run(scenario: &Scenario) -> Result<MetricsReport, SimulationError> {
    Simulation::new(scenario)?.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::fixtures::{ls_spec, node, universe};
    use crate::hierarchy::{build, HierarchySpec, LevelSpec};

    fn scenario(v: serde_json::Value) -> Scenario {
        Scenario::from_json(&v.to_string()).unwrap()
    }

    #[test]
    fn ripple_examples() {
        let u = universe();
        let mut a = node("a", &[], &["a"]);
        a.depends_on = vec![];
        let mut b = node("b", &[], &["b"]);
        b.depends_on = vec!["a".into()];
        let mut c = node("c", &[], &[]);
        c.depends_on = vec!["b".into()];
        let h = build(
            &HierarchySpec {
                levels: vec![LevelSpec {
                    members: vec![a, b, c],
                    canon: None,
                }],
            },
            &u,
        )
        .unwrap();
        let figs = BTreeSet::from([ContextFigure::new("b")]);
        let ids = |r: &Ripple| r.hops.keys().map(|n| n.to_string()).collect::<Vec<_>>();

        assert_eq!(ids(&ripple(&h, &"a".into(), &figs, 0)), vec!["a"]);
        assert_eq!(ids(&ripple(&h, &"c".into(), &figs, 5)), vec!["c"]);
        let r = ripple(&h, &"a".into(), &figs, 2);
        assert_eq!(ids(&r), vec!["a", "b", "c"]);
        assert_eq!(r.hops[&NodeId::new("c")], 2);
        assert_eq!(r.perceiving, BTreeSet::from([NodeId::new("b")]));
        assert_eq!(ids(&ripple(&h, &"a".into(), &figs, 1)), vec!["a", "b"]);
    }

    #[test]
    fn ripple_terminates_on_cycles() {
        let u = universe();
        let mut a = node("a", &[], &[]);
        a.depends_on = vec!["b".into()];
        let mut b = node("b", &[], &[]);
        b.depends_on = vec!["a".into()];
        let h = build(
            &HierarchySpec {
                levels: vec![LevelSpec {
                    members: vec![a, b],
                    canon: None,
                }],
            },
            &u,
        )
        .unwrap();
        let r = ripple(&h, &"a".into(), &BTreeSet::new(), 100);
        assert_eq!(r.hops.len(), 2);
    }

    #[test]
    fn publish_follows_canons() {
        let h = build(&ls_spec(), &universe()).unwrap();
        let d = publish(&h, &"bed".into());
        let canons: Vec<String> = d.iter().map(|d| d.canon.to_string()).collect();
        // one delivery per ancestor level; the top canon also canonizes level 2
        assert_eq!(canons, vec!["house1", "building", "building"]);
        assert_eq!(d.len(), 3);
        assert!(publish(&h, &"building".into()).is_empty());
        let levels: Vec<usize> = d.iter().map(|d| d.level).collect();
        assert!(levels.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn behavior_choice() {
        let costs = BehaviorCosts::default();
        let n = build(
            &HierarchySpec {
                levels: vec![LevelSpec {
                    members: vec![node("n", &[], &[])],
                    canon: None,
                }],
            },
            &universe(),
        )
        .unwrap()
        .node(&"n".into())
        .unwrap()
        .clone();
        assert_eq!(
            choose_behavior(&n, SystemicClass::HumanBeing, 7, &costs),
            Behavior::Act(BehaviorClass::TeleologicalNonExtrapolatory)
        );
        assert_eq!(choose_behavior(&n, SystemicClass::HumanBeing, 0, &costs), Behavior::Abstain);
        assert_eq!(
            choose_behavior(&n, SystemicClass::Thermostat, 1000, &costs),
            Behavior::Act(BehaviorClass::PurposefulNonTeleological)
        );
        let mut cheap = n.clone();
        cheap.energy_cost_profile.insert(BehaviorClass::Extrapolatory, 3);
        assert_eq!(
            choose_behavior(&cheap, SystemicClass::HumanBeing, 3, &costs),
            Behavior::Act(BehaviorClass::Extrapolatory)
        );
    }

    #[test]
    fn empty_timeline_is_all_no_change() {
        let s = scenario(serde_json::json!({
            "universe": ["f"],
            "hierarchy": {"levels": [{"members": [{"id": "a"}]}]},
            "horizon": 10
        }));
        let r = run(&s).unwrap();
        assert_eq!(r.allocator.len(), 10);
        assert!(r.allocator.iter().all(|row| row.decision == "no_change"));
        assert_eq!(r.energy.len(), 10);
        assert!(r.events.is_empty());
    }

    fn local_scenario() -> serde_json::Value {
        serde_json::json!({
            "name": "local",
            "universe": ["f"],
            "hierarchy": {"levels": [
                {"members": [
                    {"id": "a", "capabilities": ["r"], "perception": ["f"], "parent": "top"},
                    {"id": "b", "capabilities": ["s"], "parent": "top"}
                ]},
                {"members": [{"id": "top", "capabilities": ["r"]}], "canon": "top"}
            ]},
            "protocols": [{"id": "p", "required_roles": ["r", "s"], "execution_cost": 1, "duration": 2}],
            "situations": [{"id": "go", "required": 2, "stable": true, "protocols": ["p"]}],
            "events": [{"at_tick": 1, "kind": "situation_set", "level": 0, "situation": "go"}],
            "allocator": {"thresholds": {"default": 1}},
            "budget": 100,
            "horizon": 6
        })
    }

    #[test]
    fn local_enrollment_has_zero_latency() {
        let r = run(&scenario(local_scenario())).unwrap();
        let formed: Vec<&EventRow> = r.events_of("son_formed").collect();
        assert_eq!(formed.len(), 1);
        assert_eq!(formed[0].tick, 1);
        assert_eq!(formed[0].signature, "p[r=a;s=b]");
        assert_eq!(r.summary.latencies[0].ticks, 0);
        assert_eq!(r.events_of("exception").count(), 0);
        let dissolved: Vec<&EventRow> = r.events_of("son_dissolved").collect();
        assert_eq!(dissolved[0].tick, 2);
        assert_eq!(dissolved[0].outcome, "success");
        assert_eq!(r.summary.budget_spent, 4);
        assert_eq!(r.energy.last().unwrap().remaining, 96);
    }

    #[test]
    fn starvation_ends_the_son() {
        let mut v = local_scenario();
        v["budget"] = 3.into();
        let r = run(&scenario(v)).unwrap();
        let d: Vec<&EventRow> = r.events_of("son_dissolved").collect();
        assert_eq!(d[0].outcome, "starved");
        assert_eq!(d[0].tick, 2);
        assert_eq!(r.summary.budget_remaining, 1);
    }

    #[test]
    fn catastrophe_notifies_and_disrupts() {
        let mut v = local_scenario();
        v["events"]
            .as_array_mut()
            .unwrap()
            .push(serde_json::json!({"at_tick": 2, "kind": "catastrophe",
                "epicenter": "a", "figures": ["f"], "magnitude": 1}));
        v["protocols"][0]["duration"] = 5.into();
        let r = run(&scenario(v)).unwrap();
        let fail: Vec<&EventRow> = r.events_of("failure").collect();
        assert_eq!(fail.len(), 1);
        assert_eq!(fail[0].detail_field("node"), Some("a"));
        let d: Vec<&EventRow> = r.events_of("son_dissolved").collect();
        assert_eq!(d[0].outcome, "disrupted");
        let n: Vec<&EventRow> = r.events_of("notification").collect();
        assert_eq!(n.len(), 1);
        assert_eq!(n[0].detail_field("canon"), Some("top"));
        assert_eq!(n[0].tick, 2);
        assert_eq!(r.events_of("behavior").count(), 1);
        // a is down, top plays r: the demand is served again across levels
        let formed: Vec<&EventRow> = r.events_of("son_formed").collect();
        assert_eq!(formed.len(), 2);
        assert_eq!(formed[1].signature, "p[r=top;s=b]");
        assert_eq!(formed[1].spanned_levels(), vec![0, 1]);
    }

    #[test]
    fn runs_are_deterministic() {
        let mut v = local_scenario();
        v["events"]
            .as_array_mut()
            .unwrap()
            .push(serde_json::json!({"at_tick": 3, "kind": "catastrophe",
                "epicenter": "b", "figures": ["f"], "magnitude": 3}));
        let s = scenario(v);
        let a = run(&s).unwrap();
        let b = run(&s).unwrap();
        assert_eq!(a.events_csv(), b.events_csv());
        assert_eq!(a.allocator_csv(), b.allocator_csv());
        assert_eq!(a.energy_csv(), b.energy_csv());
        assert_eq!(a.summary_json(), b.summary_json());
    }

    #[test]
    fn simulation_is_send() {
        fn is_send<T: Send + 'static>() {}
        is_send::<Simulation>();
        is_send::<MetricsReport>();
    }
}
