//! Execution event log and OPM export.
//!
//! The engine feeds a [`Recorder`] while it runs. [`export_opm`] projects
//! the recorded events onto one version (OPM account), collapsing flows
//! whose granularity for that version is low into single processes.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::Mutex;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::FlowInfo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ProcessStart,
    ProcessEnd,
    ArtifactCreated,
    DataUsed,
    Triggered,
}

/// One execution event.
///
/// `subject` is a process id for process events, `data_used` and
/// `triggered`, and an artifact id for `artifact_created`. `related` is
/// the generating process, the used artifact, or the triggering process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEvent {
    pub kind: EventKind,
    pub subject: String,
    pub path: String,
    pub instance_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u32>,
    #[serde(default)]
    pub logical_time: u64,
    pub versions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub related: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
}

impl ProvenanceEvent {
    pub fn new(
        kind: EventKind,
        subject: impl Into<String>,
        path: impl Into<String>,
        instance_index: usize,
        versions: Vec<String>,
    ) -> Self {
        ProvenanceEvent {
            kind,
            subject: subject.into(),
            path: path.into(),
            instance_index,
            attempt: None,
            logical_time: 0,
            versions,
            related: None,
            status: None,
        }
    }

    pub fn related(mut self, related: impl Into<String>) -> Self {
        self.related = Some(related.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogHeader {
    pub workflow: String,
    pub adapter: String,
    pub flows: Vec<FlowInfo>,
}

/// Persisted form of a run's provenance, `provenance.json` in the workdir.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLog {
    pub header: LogHeader,
    pub events: Vec<ProvenanceEvent>,
}

#[derive(Debug, Error)]
pub enum ProvError {
    #[error("unknown version `{version}`; known versions: {}", .known.join(", "))]
    UnknownVersion { version: String, known: Vec<String> },
    #[error("{path}: {message}")]
    Read { path: String, message: String },
}

impl EventLog {
    pub fn load(path: &Path) -> Result<EventLog, ProvError> {
        let err = |message: String| ProvError::Read {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("log serializes"),
        )
    }

    /// Every version named by an event or a flow, sorted.
    pub fn known_versions(&self) -> Vec<String> {
        let mut all = BTreeSet::new();
        for e in &self.events {
            all.extend(e.versions.iter().cloned());
        }
        for f in &self.header.flows {
            all.extend(f.tags.iter().cloned());
        }
        all.into_iter().collect()
    }
}

/// Thread-safe event sink. Events are stamped with a strictly increasing
/// logical time on arrival.
#[derive(Debug, Default)]
pub struct Recorder {
    header: LogHeader,
    inner: Mutex<(u64, Vec<ProvenanceEvent>)>,
}

impl Recorder {
    pub fn new(header: LogHeader) -> Self {
        Recorder {
            header,
            inner: Mutex::new((0, Vec::new())),
        }
    }

    pub fn record_event(&self, mut event: ProvenanceEvent) {
        let mut guard = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        guard.0 += 1;
        event.logical_time = guard.0;
        guard.1.push(event);
    }

    pub fn snapshot(&self) -> EventLog {
        let guard = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        EventLog {
            header: self.header.clone(),
            events: guard.1.clone(),
        }
    }
}

/// Convenience wrapper over [`Recorder::record_event`].
pub fn record_event(recorder: &Recorder, event: ProvenanceEvent) {
    recorder.record_event(event);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Alta,
    Baixa,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpmArtifact {
    pub id: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpmProcess {
    pub id: String,
    pub label: String,
    pub start: Option<u64>,
    pub end: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpmAgent {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EdgeKind {
    Used,
    WasGeneratedBy,
    WasTriggeredBy,
    WasControlledBy,
    WasDerivedFrom,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpmEdge {
    pub kind: EdgeKind,
    pub from: String,
    pub to: String,
    pub role: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OPMGraph {
    pub artifacts: Vec<OpmArtifact>,
    pub processes: Vec<OpmProcess>,
    pub agents: Vec<OpmAgent>,
    pub edges: Vec<OpmEdge>,
    pub account: String,
}

impl OPMGraph {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn process_ids(&self) -> BTreeSet<&str> {
        self.processes.iter().map(|p| p.id.as_str()).collect()
    }

    pub fn artifact_ids(&self) -> BTreeSet<&str> {
        self.artifacts.iter().map(|a| a.id.as_str()).collect()
    }

    /// Whether the used/wasGeneratedBy subgraph has no cycle.
    pub fn causal_acyclic(&self) -> bool {
        let mut succ: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &self.edges {
            if matches!(e.kind, EdgeKind::Used | EdgeKind::WasGeneratedBy) {
                succ.entry(&e.from).or_default().push(&e.to);
            }
        }
        // 0 unvisited, 1 on stack, 2 done.
        let mut state: HashMap<&str, u8> = HashMap::new();
        fn dfs<'a>(
            n: &'a str,
            succ: &HashMap<&'a str, Vec<&'a str>>,
            state: &mut HashMap<&'a str, u8>,
        ) -> bool {
            match state.get(n) {
                Some(1) => return false,
                Some(2) => return true,
                _ => {}
            }
            state.insert(n, 1);
            for m in succ.get(n).into_iter().flatten() {
                if !dfs(m, succ, state) {
                    return false;
                }
            }
            state.insert(n, 2);
            true
        }
        let nodes: Vec<&str> = succ.keys().copied().collect();
        nodes.into_iter().all(|n| dfs(n, &succ, &mut state))
    }

    /// Artifacts reachable from `artifact` following derivation forwards:
    /// artifact -used-> process -generated-> artifact.
    pub fn derived_from(&self, artifact: &str) -> BTreeSet<String> {
        let mut users: HashMap<&str, Vec<&str>> = HashMap::new();
        let mut outputs: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &self.edges {
            match e.kind {
                EdgeKind::Used => users.entry(&e.to).or_default().push(&e.from),
                EdgeKind::WasGeneratedBy => outputs.entry(&e.to).or_default().push(&e.from),
                _ => {}
            }
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![artifact];
        while let Some(a) = stack.pop() {
            for p in users.get(a).into_iter().flatten() {
                for out in outputs.get(p).into_iter().flatten() {
                    if seen.insert(out.to_string()) {
                        stack.push(out);
                    }
                }
            }
        }
        seen
    }
}

struct Proc {
    path: String,
    instance: usize,
    versions: Vec<String>,
    start: Option<u64>,
    end: Option<u64>,
    status: Option<String>,
    attempts: Option<u32>,
}

struct Art {
    path: String,
    versions: Vec<String>,
    generator: Option<String>,
}

fn under(path: &str, flow: &str) -> bool {
    path.len() > flow.len() && path.starts_with(flow) && path.as_bytes()[flow.len()] == b'.'
}

/// Graph for one version. Flows that are BaixaGranularidade for `version`
/// (or forced by `overrides`) collapse into one process `flow#instance`.
pub fn export_opm(
    log: &EventLog,
    version: &str,
    overrides: &IndexMap<String, Granularity>,
) -> Result<OPMGraph, ProvError> {
    let known = log.known_versions();
    if !known.iter().any(|v| v == version) {
        return Err(ProvError::UnknownVersion {
            version: version.to_string(),
            known,
        });
    }

    let mut procs: BTreeMap<String, Proc> = BTreeMap::new();
    let mut arts: BTreeMap<String, Art> = BTreeMap::new();
    let mut edges: Vec<(EdgeKind, String, String)> = Vec::new();
    for e in &log.events {
        match e.kind {
            EventKind::ProcessStart => {
                let p = procs.entry(e.subject.clone()).or_insert_with(|| Proc {
                    path: e.path.clone(),
                    instance: e.instance_index,
                    versions: e.versions.clone(),
                    start: None,
                    end: None,
                    status: None,
                    attempts: None,
                });
                p.start = Some(e.logical_time);
            }
            EventKind::ProcessEnd => {
                if let Some(p) = procs.get_mut(&e.subject) {
                    p.end = Some(e.logical_time);
                    p.status = e.status.clone();
                    p.attempts = e.attempt;
                }
            }
            EventKind::ArtifactCreated => {
                arts.insert(
                    e.subject.clone(),
                    Art {
                        path: e.path.clone(),
                        versions: e.versions.clone(),
                        generator: e.related.clone(),
                    },
                );
                if let Some(g) = &e.related {
                    edges.push((EdgeKind::WasGeneratedBy, e.subject.clone(), g.clone()));
                }
            }
            EventKind::DataUsed => {
                if let Some(a) = &e.related {
                    edges.push((EdgeKind::Used, e.subject.clone(), a.clone()));
                }
            }
            EventKind::Triggered => {
                if let Some(p) = &e.related {
                    edges.push((EdgeKind::WasTriggeredBy, e.subject.clone(), p.clone()));
                }
            }
        }
    }

    let tagged = |vs: &[String]| vs.iter().any(|v| v == version);
    procs.retain(|_, p| tagged(&p.versions));
    arts.retain(|_, a| tagged(&a.versions));

    // Collapse, outermost flows first.
    let mut flows: Vec<&FlowInfo> = log.header.flows.iter().collect();
    flows.sort_by_key(|f| {
        (
            f.path.matches('.').count(),
            f.path.clone(),
            f.instance_index,
        )
    });
    let mut remap: HashMap<String, String> = HashMap::new();
    let mut folded: Vec<&FlowInfo> = Vec::new();
    for flow in flows {
        let low = match overrides.get(&flow.path) {
            Some(g) => *g == Granularity::Baixa,
            None => flow.baixa.iter().any(|v| v == version),
        };
        let inside_folded = folded.iter().any(|f| {
            under(&flow.path, &f.path) && (f.sweep || f.instance_index == flow.instance_index)
        });
        if !low || inside_folded {
            continue;
        }
        folded.push(flow);
        let members: Vec<String> = procs
            .iter()
            .filter(|(_, p)| {
                under(&p.path, &flow.path) && (flow.sweep || p.instance == flow.instance_index)
            })
            .map(|(id, _)| id.clone())
            .collect();
        let id = flow.id();
        let member_set: HashSet<&String> = members.iter().collect();
        let mut start: Option<u64> = None;
        let mut end = None;
        for m in &members {
            let p = &procs[m];
            start = match (start, p.start) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            end = end.max(p.end);
        }
        for m in &members {
            remap.insert(m.clone(), id.clone());
        }
        for target in remap.values_mut() {
            if member_set.contains(target) {
                *target = id.clone();
            }
        }
        for m in &members {
            procs.remove(m);
        }
        if tagged(&flow.tags) {
            procs.insert(
                id.clone(),
                Proc {
                    path: flow.path.clone(),
                    instance: flow.instance_index,
                    versions: flow.tags.clone(),
                    start,
                    end,
                    status: None,
                    attempts: None,
                },
            );
        }
    }

    let resolve = |id: &str| remap.get(id).cloned().unwrap_or_else(|| id.to_string());
    let generator_of: HashMap<String, String> = arts
        .iter()
        .filter_map(|(id, a)| a.generator.as_deref().map(|g| (id.clone(), resolve(g))))
        .collect();

    // Artifacts made inside a collapsed flow survive only if a process
    // outside uses them or they are one of the flow's own ports.
    let collapsed: HashSet<String> = remap.values().cloned().collect();
    let mut external_use: HashSet<String> = HashSet::new();
    for (kind, from, to) in &edges {
        if *kind == EdgeKind::Used {
            let user = resolve(from);
            // Users outside this version do not pin artifacts.
            if procs.contains_key(&user) && generator_of.get(to.as_str()) != Some(&user) {
                external_use.insert(to.clone());
            }
        }
    }
    let keep: BTreeSet<String> = arts
        .iter()
        .filter(|(id, a)| {
            let Some(g) = generator_of.get(id.as_str()) else {
                return true;
            };
            if !collapsed.contains(g) {
                return true;
            }
            let flow_path = g.rsplit_once('#').map_or(g.as_str(), |(p, _)| p);
            let boundary = a
                .path
                .rsplit_once('.')
                .is_some_and(|(owner, _)| owner == flow_path);
            boundary || external_use.contains(id.as_str())
        })
        .map(|(id, _)| id.clone())
        .collect();
    arts.retain(|id, _| keep.contains(id));

    let mut out_edges: BTreeSet<OpmEdge> = BTreeSet::new();
    for (kind, from, to) in edges {
        let (from, to) = match kind {
            EdgeKind::Used | EdgeKind::WasTriggeredBy => (resolve(&from), resolve(&to)),
            _ => (from, resolve(&to)),
        };
        let present = |id: &str, is_proc: bool| {
            if is_proc {
                procs.contains_key(id)
            } else {
                arts.contains_key(id)
            }
        };
        let ok = match kind {
            EdgeKind::Used => {
                present(&from, true)
                    && present(&to, false)
                    && generator_of.get(to.as_str()) != Some(&from)
            }
            EdgeKind::WasGeneratedBy => present(&from, false) && present(&to, true),
            EdgeKind::WasTriggeredBy => present(&from, true) && present(&to, true) && from != to,
            _ => false,
        };
        if ok {
            let role = match kind {
                EdgeKind::Used => "in",
                EdgeKind::WasGeneratedBy => "out",
                _ => "",
            };
            out_edges.insert(OpmEdge {
                kind,
                from,
                to,
                role: role.to_string(),
            });
        }
    }

    let mut agents = Vec::new();
    if !procs.is_empty() || !arts.is_empty() {
        let agent = format!("agent:{}", log.header.adapter);
        for id in procs.keys() {
            out_edges.insert(OpmEdge {
                kind: EdgeKind::WasControlledBy,
                from: id.clone(),
                to: agent.clone(),
                role: "controller".into(),
            });
        }
        agents.push(OpmAgent {
            id: agent,
            label: log.header.adapter.clone(),
        });
    }

    Ok(OPMGraph {
        artifacts: arts
            .into_iter()
            .map(|(id, a)| OpmArtifact { id, value: a.path })
            .collect(),
        processes: procs
            .into_iter()
            .map(|(id, p)| OpmProcess {
                id,
                label: p.path,
                start: p.start,
                end: p.end,
                status: p.status,
                attempts: p.attempts,
            })
            .collect(),
        agents,
        edges: out_edges.into_iter().collect(),
        account: version.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(kind: EventKind, subject: &str, path: &str, versions: &[&str]) -> ProvenanceEvent {
        ProvenanceEvent::new(
            kind,
            subject,
            path,
            0,
            versions.iter().map(|s| s.to_string()).collect(),
        )
    }

    fn log_of(events: Vec<ProvenanceEvent>, flows: Vec<FlowInfo>) -> EventLog {
        let r = Recorder::new(LogHeader {
            workflow: "W".into(),
            adapter: "simulated".into(),
            flows,
        });
        for e in events {
            r.record_event(e);
        }
        r.snapshot()
    }

    #[test]
    fn start_and_end_pair_into_one_process() {
        let log = log_of(
            vec![
                ev(EventKind::ProcessStart, "psipred#0", "psipred", &["orange"]),
                ev(EventKind::ProcessEnd, "psipred#0", "psipred", &["orange"]),
            ],
            vec![],
        );
        let g = export_opm(&log, "orange", &IndexMap::new()).unwrap();
        assert_eq!(g.processes.len(), 1);
        assert_eq!(g.processes[0].start, Some(1));
        assert_eq!(g.processes[0].end, Some(2));
        assert_eq!(g.agents.len(), 1);
    }

    #[test]
    fn artifact_and_usage_edges() {
        let log = log_of(
            vec![
                ev(EventKind::ProcessStart, "a#0", "a", &["v"]),
                ev(EventKind::ArtifactCreated, "a.o#0", "a.o", &["v"]).related("a#0"),
                ev(EventKind::ProcessStart, "b#0", "b", &["v"]),
                ev(EventKind::DataUsed, "b#0", "b", &["v"]).related("a.o#0"),
            ],
            vec![],
        );
        let g = export_opm(&log, "v", &IndexMap::new()).unwrap();
        let kinds: Vec<(EdgeKind, &str, &str)> = g
            .edges
            .iter()
            .filter(|e| e.kind != EdgeKind::WasControlledBy)
            .map(|e| (e.kind, e.from.as_str(), e.to.as_str()))
            .collect();
        assert_eq!(
            kinds,
            [
                (EdgeKind::Used, "b#0", "a.o#0"),
                (EdgeKind::WasGeneratedBy, "a.o#0", "a#0")
            ]
        );
        assert!(g.causal_acyclic());
    }

    #[test]
    fn unknown_version_lists_known_ones() {
        let log = log_of(
            vec![ev(
                EventKind::ProcessStart,
                "a#0",
                "a",
                &["orange", "black"],
            )],
            vec![],
        );
        let err = export_opm(&log, "missing", &IndexMap::new()).unwrap_err();
        assert_eq!(
            err.to_string(),
            "unknown version `missing`; known versions: black, orange"
        );
    }

    #[test]
    fn untagged_run_exports_empty_graph() {
        let log = log_of(
            vec![ev(EventKind::ProcessStart, "a#0", "a", &["v"])],
            vec![],
        );
        let mut log2 = log.clone();
        log2.events[0].versions.clear();
        log2.header.flows.push(FlowInfo {
            path: "f".into(),
            instance_index: 0,
            sweep: false,
            tags: vec!["v".into()],
            alta: vec![],
            baixa: vec![],
            port_versions: IndexMap::new(),
        });
        let g = export_opm(&log2, "v", &IndexMap::new()).unwrap();
        assert!(g.processes.is_empty() && g.artifacts.is_empty() && g.agents.is_empty());
    }

    #[test]
    fn baixa_collapses_flow_body() {
        let flow = FlowInfo {
            path: "f".into(),
            instance_index: 0,
            sweep: false,
            tags: vec!["v".into()],
            alta: vec![],
            baixa: vec!["v".into()],
            port_versions: IndexMap::new(),
        };
        let log = log_of(
            vec![
                ev(EventKind::ProcessStart, "src#0", "src", &["v"]),
                ev(EventKind::ArtifactCreated, "src.o#0", "src.o", &["v"]).related("src#0"),
                ev(EventKind::ProcessStart, "f.a#0", "f.a", &["v"]),
                ev(EventKind::DataUsed, "f.a#0", "f.a", &["v"]).related("src.o#0"),
                ev(EventKind::ArtifactCreated, "f.a.o#0", "f.a.o", &["v"]).related("f.a#0"),
                ev(EventKind::ProcessStart, "f.b#0", "f.b", &["v"]),
                ev(EventKind::DataUsed, "f.b#0", "f.b", &["v"]).related("f.a.o#0"),
                ev(EventKind::ArtifactCreated, "f.b.o#0", "f.b.o", &["v"]).related("f.b#0"),
                ev(EventKind::ProcessStart, "sink#0", "sink", &["v"]),
                ev(EventKind::DataUsed, "sink#0", "sink", &["v"]).related("f.b.o#0"),
            ],
            vec![flow],
        );
        let g = export_opm(&log, "v", &IndexMap::new()).unwrap();
        assert_eq!(g.process_ids(), ["f#0", "sink#0", "src#0"].into());
        assert_eq!(g.artifact_ids(), ["f.b.o#0", "src.o#0"].into());
        assert!(g.derived_from("src.o#0").contains("f.b.o#0"));
        assert!(g.causal_acyclic());

        let alta: IndexMap<String, Granularity> = [("f".to_string(), Granularity::Alta)].into();
        let g = export_opm(&log, "v", &alta).unwrap();
        assert_eq!(g.processes.len(), 4);
    }
}
