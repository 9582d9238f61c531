//! Metrics collected by a run and their CSV / JSON renderings.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EventRow {
    pub tick: u64,
    pub kind: &'static str,
    pub level: Option<usize>,
    pub protocol: String,
    pub signature: String,
    pub levels_spanned: String,
    pub outcome: String,
    pub detail: String,
}

impl EventRow {
    pub(crate) fn new(tick: u64, kind: &'static str) -> Self {
        Self {
            tick,
            kind,
            level: None,
            protocol: String::new(),
            signature: String::new(),
            levels_spanned: String::new(),
            outcome: String::new(),
            detail: String::new(),
        }
    }

    pub(crate) fn level(mut self, level: usize) -> Self {
        self.level = Some(level);
        self
    }

    pub(crate) fn protocol(mut self, p: &str) -> Self {
        self.protocol = p.to_owned();
        self
    }

    pub(crate) fn signature(mut self, s: &str) -> Self {
        self.signature = s.to_owned();
        self
    }

    pub(crate) fn spanned<'a>(mut self, levels: impl IntoIterator<Item = &'a usize>) -> Self {
        self.levels_spanned = join(levels);
        self
    }

    pub(crate) fn outcome(mut self, o: &str) -> Self {
        self.outcome = o.to_owned();
        self
    }

    pub(crate) fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }

    /// Parses `key=value` pairs of the detail column.
    pub fn detail_field(&self, key: &str) -> Option<&str> {
        self.detail
            .split(';')
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
    }

    /// Levels in the `levels_spanned` column.
    pub fn spanned_levels(&self) -> Vec<usize> {
        self.levels_spanned
            .split(';')
            .filter_map(|s| s.parse().ok())
            .collect()
    }
}

pub(crate) fn join<'a, T: ToString + 'a>(items: impl IntoIterator<Item = &'a T>) -> String {
    items
        .into_iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AllocatorRow {
    pub tick: u64,
    pub level: usize,
    pub situation: String,
    pub required: u32,
    pub fired: u32,
    pub undershoot: u32,
    pub overshoot: u32,
    /// `undershoot/capacity`, unreduced. Empty when the level has no nodes.
    pub dtof: String,
    pub decision: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EnergyRow {
    pub tick: u64,
    pub spent: u64,
    pub ledger_total: u64,
    pub remaining: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub node: String,
    pub role: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Latency {
    pub situation: String,
    pub protocol: String,
    pub level: usize,
    pub set_at: u64,
    pub served_at: u64,
    pub ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Permanentification {
    pub tick: u64,
    pub node: String,
    pub level: usize,
    pub signature: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub horizon: u64,
    pub memoryless: bool,
    pub budget_initial: u64,
    pub budget_spent: u64,
    pub budget_remaining: u64,
    pub sons_formed: u64,
    pub sons_succeeded: u64,
    pub sons_starved: u64,
    pub sons_disrupted: u64,
    pub exceptions: u64,
    pub pending: u64,
    /// Escalation searches per searched level.
    pub escalations_per_level: BTreeMap<usize, u64>,
    pub latencies: Vec<Latency>,
    pub permanentifications: Vec<Permanentification>,
    pub failures: u64,
    pub repairs: u64,
    pub notifications: u64,
    pub abstentions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub events: Vec<EventRow>,
    pub allocator: Vec<AllocatorRow>,
    pub energy: Vec<EnergyRow>,
    /// `None` when knowledge was disabled.
    pub scores: Option<Vec<ScoreRow>>,
    pub summary: RunSummary,
}

fn to_csv<T: Serialize>(header: &[&str], rows: &[T]) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header).expect("write to memory");
    for r in rows {
        w.serialize(r).expect("row serializes");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 csv")
}

pub const EVENTS_HEADER: [&str; 8] = [
    "tick",
    "kind",
    "level",
    "protocol",
    "signature",
    "levels_spanned",
    "outcome",
    "detail",
];
pub const ALLOCATOR_HEADER: [&str; 9] = [
    "tick",
    "level",
    "situation",
    "required",
    "fired",
    "undershoot",
    "overshoot",
    "dtof",
    "decision",
];
pub const ENERGY_HEADER: [&str; 4] = ["tick", "spent", "ledger_total", "remaining"];
pub const SCORES_HEADER: [&str; 3] = ["node", "role", "score"];

impl MetricsReport {
    pub fn events_csv(&self) -> String {
        to_csv(&EVENTS_HEADER, &self.events)
    }

    pub fn allocator_csv(&self) -> String {
        to_csv(&ALLOCATOR_HEADER, &self.allocator)
    }

    pub fn energy_csv(&self) -> String {
        to_csv(&ENERGY_HEADER, &self.energy)
    }

    pub fn scores_csv(&self) -> Option<String> {
        self.scores.as_ref().map(|s| to_csv(&SCORES_HEADER, s))
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn events_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a EventRow> + 'a {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Writes events.csv, allocator.csv, energy.csv and report.json into
    /// `dir`, plus scores.csv when `dump_scores` is set and scores exist.
    /// Returns the file names written.
    pub fn write_to(&self, dir: &Path, dump_scores: bool) -> io::Result<Vec<&'static str>> {
        fs::create_dir_all(dir)?;
        let mut files = vec![
            ("events.csv", self.events_csv()),
            ("allocator.csv", self.allocator_csv()),
            ("energy.csv", self.energy_csv()),
            ("report.json", self.summary_json()),
        ];
        if dump_scores {
            if let Some(s) = self.scores_csv() {
                files.push(("scores.csv", s));
            }
        }
        let mut written = Vec::new();
        for (name, body) in files {
            fs::write(dir.join(name), body)?;
            written.push(name);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detail_fields_parse() {
        let e = EventRow::new(0, "notification").detail("canon=h;origin=s1;cause=catastrophe");
        assert_eq!(e.detail_field("origin"), Some("s1"));
        assert_eq!(e.detail_field("nope"), None);
        let e = EventRow::new(0, "son_formed").spanned(&[0, 2]);
        assert_eq!(e.levels_spanned, "0;2");
        assert_eq!(e.spanned_levels(), vec![0, 2]);
    }

    #[test]
    fn csv_quotes_and_blanks() {
        let r = MetricsReport {
            events: vec![EventRow::new(3, "exception")
                .level(1)
                .detail("missing=a,b")],
            allocator: vec![],
            energy: vec![EnergyRow {
                tick: 0,
                spent: 1,
                ledger_total: 1,
                remaining: 9,
            }],
            scores: None,
            summary: RunSummary::default(),
        };
        assert_eq!(
            r.events_csv(),
            "tick,kind,level,protocol,signature,levels_spanned,outcome,detail\n3,exception,1,,,,,\"missing=a,b\"\n"
        );
        assert_eq!(r.allocator_csv(), "tick,level,situation,required,fired,undershoot,overshoot,dtof,decision\n");
        assert_eq!(r.energy_csv(), "tick,spent,ledger_total,remaining\n0,1,1,9\n");
        assert!(r.scores_csv().is_none());
    }
}
