//! The space of all SONs a capability matrix admits for a protocol.
//!
//! A SON here is an injective assignment of nodes to role instances. Equal
//! role instances are interchangeable, so an assignment is identified by
//! which set of nodes plays each role.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::hierarchy::{Hierarchy, NodeId, Role};
use crate::roleflow::Protocol;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SonSpaceError {
    #[error("role `{0}` is not a column of the capability matrix")]
    UnknownRole(Role),
    #[error("capability matrix is {rows}x{cols}, expected {nodes}x{roles}")]
    Dimensions {
        rows: usize,
        cols: usize,
        nodes: usize,
        roles: usize,
    },
    #[error("duplicate {0} in capability matrix")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapabilityMatrix {
    nodes: Vec<NodeId>,
    roles: Vec<Role>,
    can_play: Vec<Vec<bool>>,
}

impl CapabilityMatrix {
    pub fn new(
        nodes: Vec<NodeId>,
        roles: Vec<Role>,
        can_play: Vec<Vec<bool>>,
    ) -> Result<Self, SonSpaceError> {
        let cols = can_play.first().map_or(roles.len(), Vec::len);
        if can_play.len() != nodes.len() || can_play.iter().any(|r| r.len() != roles.len()) {
            return Err(SonSpaceError::Dimensions {
                rows: can_play.len(),
                cols,
                nodes: nodes.len(),
                roles: roles.len(),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(n) = nodes.iter().find(|n| !seen.insert(*n)) {
            return Err(SonSpaceError::Duplicate(format!("node `{n}`")));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(r) = roles.iter().find(|r| !seen.insert(*r)) {
            return Err(SonSpaceError::Duplicate(format!("role `{r}`")));
        }
        Ok(Self {
            nodes,
            roles,
            can_play,
        })
    }

    /// Every node of `h` against every role any node can play plus `extra`.
    pub fn from_hierarchy(h: &Hierarchy, extra: &[Role]) -> Self {
        let nodes: Vec<NodeId> = h.nodes().map(|n| n.id.clone()).collect();
        let mut roles: Vec<Role> = h
            .nodes()
            .flat_map(|n| n.capabilities.iter().cloned())
            .chain(extra.iter().cloned())
            .collect();
        roles.sort();
        roles.dedup();
        let can_play = h
            .nodes()
            .map(|n| roles.iter().map(|r| n.can_play(r)).collect())
            .collect();
        Self {
            nodes,
            roles,
            can_play,
        }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn can_play(&self, node: usize, role: usize) -> bool {
        self.can_play[node][role]
    }

    /// Grants `node` the ability to play `role`.
    pub fn grant(&mut self, node: usize, role: usize) {
        self.can_play[node][role] = true;
    }
}

/// Role/node pairs grouped by role id, nodes ascending by id within a role.
pub type Assignment = Vec<(Role, NodeId)>;

/// One block per distinct required role: multiplicity and capable node
/// indices, sorted by node id.
struct Blocks {
    roles: Vec<Role>,
    need: Vec<usize>,
    capable: Vec<Vec<usize>>,
}

fn blocks(m: &CapabilityMatrix, p: &Protocol) -> Result<Blocks, SonSpaceError> {
    let counts: BTreeMap<Role, usize> = p.role_counts();
    let mut by_id: Vec<usize> = (0..m.nodes.len()).collect();
    by_id.sort_by(|&a, &b| m.nodes[a].cmp(&m.nodes[b]));
    let mut out = Blocks {
        roles: Vec::new(),
        need: Vec::new(),
        capable: Vec::new(),
    };
    for (role, k) in counts {
        let col = m
            .roles
            .iter()
            .position(|r| *r == role)
            .ok_or_else(|| SonSpaceError::UnknownRole(role.clone()))?;
        out.capable
            .push(by_id.iter().copied().filter(|&n| m.can_play[n][col]).collect());
        out.roles.push(role);
        out.need.push(k);
    }
    Ok(out)
}

/// All SONs for `p` over `m`, in canonical order.
pub fn enumerate(m: &CapabilityMatrix, p: &Protocol) -> Result<Vec<Assignment>, SonSpaceError> {
    let b = blocks(m, p)?;
    let mut out = Vec::new();
    let mut used = vec![false; m.nodes.len()];
    let mut current: Vec<Vec<usize>> = Vec::with_capacity(b.roles.len());
    walk(m, &b, 0, &mut used, &mut current, &mut out);
    Ok(out)
}

fn walk(
    m: &CapabilityMatrix,
    b: &Blocks,
    j: usize,
    used: &mut [bool],
    current: &mut Vec<Vec<usize>>,
    out: &mut Vec<Assignment>,
) {
    if j == b.roles.len() {
        out.push(
            current
                .iter()
                .zip(&b.roles)
                .flat_map(|(nodes, role)| nodes.iter().map(|&n| (role.clone(), m.nodes[n].clone())))
                .collect(),
        );
        return;
    }
    let avail: Vec<usize> = b.capable[j].iter().copied().filter(|&n| !used[n]).collect();
    for combo in combinations(&avail, b.need[j]) {
        for &n in &combo {
            used[n] = true;
        }
        current.push(combo.clone());
        walk(m, b, j + 1, used, current, out);
        current.pop();
        for &n in &combo {
            used[n] = false;
        }
    }
}

/// k-combinations of `items`, lexicographic in position.
fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > items.len() {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        // advance the rightmost index that still has room
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + items.len() - k) else {
            return out;
        };
        idx[pos] += 1;
        for i in pos + 1..k {
            idx[i] = idx[i - 1] + 1;
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Number of SONs, equal to `enumerate(m, p).len()`, without listing them.
///
/// Roles are processed one block at a time. Capable nodes no later block can
/// use are interchangeable and counted with a binomial; only the nodes that
/// later blocks compete for are branched on, and results are memoized on the
/// used subset of those.
pub fn count(m: &CapabilityMatrix, p: &Protocol) -> Result<u128, SonSpaceError> {
    let b = blocks(m, p)?;
    let words = m.nodes.len().div_ceil(64).max(1);
    // later[j]: nodes capable of some block after j
    let mut later = vec![vec![0u64; words]; b.roles.len() + 1];
    for j in (0..b.roles.len()).rev() {
        later[j] = later[j + 1].clone();
        if j + 1 < b.roles.len() {
            for &n in &b.capable[j + 1] {
                later[j][n / 64] |= 1 << (n % 64);
            }
        }
    }
    let mut memo = HashMap::new();
    Ok(count_from(&b, &later, 0, vec![0u64; words], &mut memo))
}

fn count_from(
    b: &Blocks,
    later: &[Vec<u64>],
    j: usize,
    used: Vec<u64>,
    memo: &mut HashMap<(usize, Vec<u64>), u128>,
) -> u128 {
    if j == b.roles.len() {
        return 1;
    }
    if let Some(&v) = memo.get(&(j, used.clone())) {
        return v;
    }
    let is_set = |mask: &[u64], n: usize| mask[n / 64] >> (n % 64) & 1 == 1;
    let avail = b.capable[j].iter().copied().filter(|&n| !is_set(&used, n));
    let (shared, private): (Vec<usize>, Vec<usize>) = avail.partition(|&n| is_set(&later[j], n));
    let k = b.need[j];
    let mut total = 0u128;
    for t in 0..=k.min(shared.len()) {
        let ways_private = binomial(private.len(), k - t);
        if ways_private == 0 {
            continue;
        }
        for combo in combinations(&shared, t) {
            let mut next = used.clone();
            for &n in &combo {
                next[n / 64] |= 1 << (n % 64);
            }
            // only nodes later blocks can use matter from here on
            for (w, l) in next.iter_mut().zip(&later[j]) {
                *w &= l;
            }
            total += ways_private * count_from(b, later, j + 1, next, memo);
        }
    }
    memo.insert((j, used), total);
    total
}

/// Pairs of assignments that differ by exactly one role instance changing
/// hands, as index pairs `(i, j)` with `i < j`.
pub fn swap_edges(assignments: &[Assignment]) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..assignments.len() {
        for j in i + 1..assignments.len() {
            if single_swap(&assignments[i], &assignments[j]) {
                edges.push((i, j));
            }
        }
    }
    edges
}

fn single_swap(a: &Assignment, b: &Assignment) -> bool {
    let only_a: Vec<_> = a.iter().filter(|x| !b.contains(x)).collect();
    let only_b: Vec<_> = b.iter().filter(|x| !a.contains(x)).collect();
    matches!((only_a.as_slice(), only_b.as_slice()), ([x], [y]) if x.0 == y.0)
}
