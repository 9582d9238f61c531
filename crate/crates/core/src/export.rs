//! Graphviz DOT and CSV renderings of hierarchies and SON spaces.

use std::fmt::Write;

use crate::hierarchy::Hierarchy;
use crate::roleflow::{signature, Protocol};
use crate::sonspace::{swap_edges, Assignment};

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Containment tree as a bottom-to-top digraph. Nodes sorted by id; each
/// edge points from a node to its containment parent.
pub fn hierarchy_dot(h: &Hierarchy) -> String {
    let mut out = String::from("digraph hierarchy {\n  rankdir=BT;\n");
    let mut nodes: Vec<_> = h.nodes().collect();
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    for n in nodes {
        let level = h.level_of(&n.id).expect("listed node");
        let _ = writeln!(out, "  {} [level={level}];", quote(n.id.as_str()));
    }
    let mut edges = h.containment_edges();
    edges.sort();
    for (child, parent) in edges {
        let _ = writeln!(out, "  {} -> {};", quote(child.as_str()), quote(parent.as_str()));
    }
    out.push_str("}\n");
    out
}

/// SON space as an undirected graph. Each SON is a node named by its
/// signature; edges join SONs that differ in one role instance's node.
pub fn son_space_dot(p: &Protocol, sons: &[Assignment]) -> String {
    let sigs: Vec<String> = sons
        .iter()
        .map(|a| signature(&p.id, a.iter().cloned()))
        .collect();
    let mut order: Vec<usize> = (0..sigs.len()).collect();
    order.sort_by(|&a, &b| sigs[a].cmp(&sigs[b]));

    let mut out = String::from("graph son_space {\n");
    for &i in &order {
        let _ = writeln!(out, "  {};", quote(&sigs[i]));
    }
    let mut edges: Vec<(&str, &str)> = swap_edges(sons)
        .into_iter()
        .map(|(i, j)| {
            let (a, b) = (sigs[i].as_str(), sigs[j].as_str());
            if a <= b {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect();
    edges.sort();
    for (a, b) in edges {
        let _ = writeln!(out, "  {} -- {};", quote(a), quote(b));
    }
    out.push_str("}\n");
    out
}

/// One row per SON: its index, then the node cast in each role instance.
/// Instance columns are named `role[k]`, k counting from 0 within a role.
pub fn son_space_csv(p: &Protocol, sons: &[Assignment]) -> String {
    let mut header = vec!["index".to_owned()];
    let instances = p.instances();
    for (i, r) in instances.iter().enumerate() {
        let k = instances[..i].iter().filter(|x| *x == r).count();
        header.push(format!("{r}[{k}]"));
    }
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(&header).expect("write to memory");
    for (i, a) in sons.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(a.iter().map(|(_, n)| n.to_string()));
        w.write_record(&row).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
