//! Local execution of an [`ExecutionPlan`].
//!
//! A single coordinator owns all run state. Ready nodes are handed to
//! worker threads (at most `jobs` at a time) and results come back over a
//! channel. Joins and votes only read completed inputs, and every choice the
//! coordinator makes depends on node outcomes rather than completion order,
//! so reports and artifacts do not depend on interleaving.

mod exec;
mod faults;
mod join;
mod mapreduce;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::DependencyKind;
use crate::planner::{
    join_manifest, ExecutionPlan, InputSource, Item, JoinFormat, NodeKind, PartOutcome, PlanNode,
    SweepExpansion,
};
use crate::provenance::{EventKind, LogHeader, ProvenanceEvent, Recorder};

pub use exec::{
    execute_mapreduce, execute_masked, execute_task, transfer, vote, AttemptContext, InputFile,
};
pub use faults::{FaultEntry, FaultScript, ScriptedOutcome, ScriptedOutput};
pub use join::{apply_join, JoinError};
pub use mapreduce::{run_mapreduce, run_program};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("fault script: {0}")]
    FaultScript(String),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adapter {
    Simulated,
    Shell,
}

impl Adapter {
    pub fn label(self) -> &'static str {
        match self {
            Adapter::Simulated => "simulated",
            Adapter::Shell => "shell",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// Simulated delays are compared with time limits but never slept.
    Logical,
    Wall,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub adapter: Adapter,
    pub jobs: usize,
    pub workdir: PathBuf,
    pub fault_script: Option<PathBuf>,
    pub clock: Clock,
    pub retries_are_additional: bool,
}

impl RunConfig {
    pub fn new(workdir: impl Into<PathBuf>) -> Self {
        RunConfig {
            adapter: Adapter::Simulated,
            jobs: 1,
            workdir: workdir.into(),
            fault_script: None,
            clock: Clock::Logical,
            retries_are_additional: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    Failed,
    Ignored,
    NotRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    LogMatch,
    Timeout,
    NonzeroExit,
    NoMajority,
    TransferFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureSignal {
    pub origin: String,
    pub attempt_count: u32,
    pub reason: Reason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replica: Option<u32>,
    /// Detection result; `None` means the attempt passed.
    pub reason: Option<Reason>,
    pub exit_code: Option<i32>,
    pub duration: f64,
    pub log_excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub status: Status,
    pub attempts: Vec<AttemptRecord>,
    pub outputs: IndexMap<String, PathBuf>,
    pub signal: Option<FailureSignal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub kind: NodeKind,
    pub status: Status,
    pub attempts: Vec<AttemptRecord>,
    /// Artifact paths relative to the workdir.
    pub outputs: IndexMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal: Option<FailureSignal>,
    /// Source role whose data a connector delivered.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delivered_from: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub started: Option<u64>,
    pub finished: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinRecord {
    pub node: String,
    pub formato: JoinFormat,
    pub destino: String,
    pub parts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub workflow: String,
    pub adapter: Adapter,
    pub status: RunStatus,
    pub nodes: Vec<NodeRecord>,
    pub joins: Vec<JoinRecord>,
}

impl RunReport {
    pub fn node(&self, id: &str) -> Option<&NodeRecord> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Copy without logical timestamps, for comparing runs.
    pub fn normalized(&self) -> RunReport {
        let mut r = self.clone();
        for n in &mut r.nodes {
            n.started = None;
            n.finished = None;
        }
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// What a finished node offers on one output port.
#[derive(Debug, Clone)]
enum Payload {
    Data {
        path: PathBuf,
        /// Provenance artifact carried (connectors pass it through).
        artifact: Option<String>,
        /// Process that produced the data.
        process: Option<String>,
    },
    Signal(FailureSignal),
}

/// Node input resolved by the coordinator.
#[derive(Debug, Clone)]
struct Resolved {
    name: String,
    part: Option<usize>,
    dependency: DependencyKind,
    payload: Payload,
}

enum Job {
    Task(Vec<InputFile>),
    MapReduce(Vec<InputFile>),
    Transfer { role: String, source: PathBuf },
    Join(BTreeMap<usize, PartOutcome>),
    Barrier,
}

struct Outcome {
    task: TaskOutcome,
    delivered_from: Option<String>,
    note: Option<String>,
    join: Option<JoinRecord>,
}

fn artifact_id(node: &PlanNode, port: &str) -> String {
    match node.kind {
        NodeKind::Join => format!(
            "{}#{}",
            node.path.trim_end_matches(".join"),
            node.instance_index
        ),
        _ => format!("{}.{port}#{}", node.path, node.instance_index),
    }
}

fn artifact_path(node: &PlanNode, port: &str) -> String {
    match node.kind {
        NodeKind::Join => node.path.trim_end_matches(".join").to_string(),
        _ => format!("{}.{port}", node.path),
    }
}

fn relative(workdir: &Path, p: &Path) -> String {
    p.strip_prefix(workdir).unwrap_or(p).display().to_string()
}

fn materialize(item: &Item, dest: &Path) -> std::io::Result<PathBuf> {
    if let Some(parent) = dest.parent() {
        std::fs::create_dir_all(parent)?;
    }
    match item {
        Item::File(p) => join::copy_tree(p, dest)?,
        Item::Value(v) => std::fs::write(dest, v)?,
        Item::Index(i) => std::fs::write(dest, i.to_string())?,
    }
    Ok(dest.to_path_buf())
}

fn run_join(
    node: &PlanNode,
    parts: BTreeMap<usize, PartOutcome>,
    expansions: &[SweepExpansion],
    workdir: &Path,
    node_dir: &Path,
) -> Outcome {
    let spec = node.join.as_ref().expect("join node");
    let port = &node.outputs[0];
    let flow = node.path.trim_end_matches(".join");
    let flow = flow.rsplit_once('.').map_or(flow, |(f, _)| f);
    let expansion = expansions.iter().find(|e| e.flow == flow);
    let fail = |message: String| Outcome {
        task: TaskOutcome {
            status: Status::Failed,
            attempts: vec![AttemptRecord {
                attempt: 1,
                replica: None,
                reason: Some(Reason::NonzeroExit),
                exit_code: None,
                duration: 0.0,
                log_excerpt: message.clone(),
            }],
            outputs: IndexMap::new(),
            signal: Some(FailureSignal {
                origin: node.id.clone(),
                attempt_count: 1,
                reason: Reason::NonzeroExit,
            }),
        },
        delivered_from: None,
        note: Some(message),
        join: None,
    };
    let (Some(formato), Some(expansion)) = (spec.formato, expansion) else {
        return fail(format!("{} has no join format", node.id));
    };
    let destino = match &spec.destino {
        Some(d) => workdir.join(d),
        None => node_dir.join("out").join(port),
    };
    let manifest = match join_manifest(expansion, &node.path, formato, &destino, &parts) {
        Ok(m) => m,
        Err(e) => return fail(e.to_string()),
    };
    match apply_join(&manifest) {
        Ok(path) => Outcome {
            task: TaskOutcome {
                status: Status::Success,
                attempts: vec![AttemptRecord {
                    attempt: 1,
                    replica: None,
                    reason: None,
                    exit_code: Some(0),
                    duration: 0.0,
                    log_excerpt: String::new(),
                }],
                outputs: [(port.clone(), path.clone())].into_iter().collect(),
                signal: None,
            },
            delivered_from: None,
            note: None,
            join: Some(JoinRecord {
                node: node.id.clone(),
                formato,
                destino: relative(workdir, &path),
                parts: manifest.parts.iter().map(|p| p.instance_index).collect(),
            }),
        },
        Err(e) => fail(e.to_string()),
    }
}

fn work(
    node: &PlanNode,
    job: Job,
    ctx: &AttemptContext,
    expansions: &[SweepExpansion],
    workdir: &Path,
) -> Outcome {
    let plain = |task| Outcome {
        task,
        delivered_from: None,
        note: None,
        join: None,
    };
    match job {
        Job::Task(inputs) => plain(execute_task(node, &inputs, ctx)),
        Job::MapReduce(inputs) => plain(execute_mapreduce(node, &inputs, ctx)),
        Job::Transfer { role, source } => Outcome {
            delivered_from: Some(role),
            ..plain(transfer(node, &source, ctx))
        },
        Job::Join(parts) => run_join(node, parts, expansions, workdir, &ctx.node_dir),
        Job::Barrier => {
            let out = ctx.node_dir.join("out").join(&node.outputs[0]);
            let written = out
                .parent()
                .map(std::fs::create_dir_all)
                .transpose()
                .and_then(|_| std::fs::write(&out, b""));
            plain(TaskOutcome {
                status: if written.is_ok() {
                    Status::Success
                } else {
                    Status::Failed
                },
                attempts: Vec::new(),
                outputs: [(node.outputs[0].clone(), out)].into_iter().collect(),
                signal: None,
            })
        }
    }
}

struct Coordinator<'p> {
    plan: &'p ExecutionPlan,
    config: &'p RunConfig,
    recorder: Recorder,
    records: Vec<Option<NodeRecord>>,
    payloads: HashMap<(String, String), Payload>,
    used: Vec<Vec<Resolved>>,
    clock: u64,
    joins: Vec<JoinRecord>,
    empty: PathBuf,
}

impl Coordinator<'_> {
    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    fn node_dir(&self, node: &PlanNode) -> PathBuf {
        self.config.workdir.join(&node.id)
    }

    fn skip(&mut self, i: usize, note: String) {
        let node = &self.plan.nodes[i];
        let t = self.tick();
        self.records[i] = Some(NodeRecord {
            id: node.id.clone(),
            kind: node.kind,
            status: Status::NotRun,
            attempts: Vec::new(),
            outputs: IndexMap::new(),
            signal: None,
            delivered_from: None,
            note: Some(note),
            started: None,
            finished: Some(t),
        });
    }

    /// Decides what `i` should do given its finished predecessors. `Err`
    /// carries an immediate outcome (not run, or ignored without work).
    fn prepare(&mut self, i: usize) -> Result<Job, Option<Outcome>> {
        let node = &self.plan.nodes[i];
        let mut resolved = Vec::new();
        for input in &node.inputs {
            let payload = match &input.source {
                InputSource::Node { node: from, port } => {
                    match self.payloads.get(&(from.clone(), port.clone())) {
                        Some(p) => p.clone(),
                        None => {
                            self.skip(i, format!("upstream {from} did not complete"));
                            return Err(None);
                        }
                    }
                }
                InputSource::Item(item) => {
                    let dest = self.node_dir(node).join("items").join(&input.name);
                    match materialize(item, &dest) {
                        Ok(path) => Payload::Data {
                            path,
                            artifact: None,
                            process: None,
                        },
                        Err(e) => {
                            self.skip(i, format!("cannot stage item for {}: {e}", input.name));
                            return Err(None);
                        }
                    }
                }
            };
            let payload = match (input.dependency, payload) {
                (DependencyKind::Control, Payload::Data { process, .. }) => Payload::Data {
                    path: self.empty.clone(),
                    artifact: None,
                    process,
                },
                (_, p) => p,
            };
            resolved.push(Resolved {
                name: input.name.clone(),
                part: input.part,
                dependency: input.dependency,
                payload,
            });
        }

        let signaled: Vec<&FailureSignal> = resolved
            .iter()
            .filter_map(|r| match &r.payload {
                Payload::Signal(s) => Some(s),
                _ => None,
            })
            .collect();
        let unconsumed = |s: &FailureSignal| {
            format!(
                "unconsumed failure signal from {} ({:?})",
                s.origin, s.reason
            )
        };
        let files = |resolved: &[Resolved]| -> Vec<InputFile> {
            resolved
                .iter()
                .filter_map(|r| match &r.payload {
                    Payload::Data { path, .. } => Some(InputFile {
                        name: r.name.clone(),
                        path: path.clone(),
                    }),
                    _ => None,
                })
                .collect()
        };

        let job = match node.kind {
            NodeKind::Task | NodeKind::MapReduce => {
                if let Some(s) = signaled.first() {
                    let note = unconsumed(s);
                    self.skip(i, note);
                    return Err(None);
                }
                let f = files(&resolved);
                if node.kind == NodeKind::Task {
                    Job::Task(f)
                } else {
                    Job::MapReduce(f)
                }
            }
            NodeKind::Connector => {
                if !node.config.propagation {
                    if let Some(s) = signaled.first() {
                        let note = unconsumed(s);
                        self.skip(i, note);
                        return Err(None);
                    }
                }
                let chosen = resolved
                    .iter()
                    .position(|r| matches!(r.payload, Payload::Data { .. }));
                match chosen {
                    Some(c) => {
                        let Payload::Data { path, .. } = &resolved[c].payload else {
                            unreachable!()
                        };
                        let job = Job::Transfer {
                            role: resolved[c].name.clone(),
                            source: path.clone(),
                        };
                        // Only the delivered source counts as used.
                        resolved = vec![resolved[c].clone()];
                        job
                    }
                    None if !signaled.is_empty() => {
                        let outcome = Outcome {
                            task: TaskOutcome {
                                status: Status::Ignored,
                                attempts: Vec::new(),
                                outputs: IndexMap::new(),
                                signal: Some(FailureSignal {
                                    origin: node.id.clone(),
                                    attempt_count: 1,
                                    reason: Reason::TransferFailure,
                                }),
                            },
                            delivered_from: None,
                            note: Some("every source carried a failure signal".into()),
                            join: None,
                        };
                        self.used[i] = Vec::new();
                        return Err(Some(outcome));
                    }
                    None => Job::Transfer {
                        role: String::new(),
                        source: self.empty.clone(),
                    },
                }
            }
            NodeKind::Join => {
                let spec = node.join.as_ref().expect("join spec");
                if spec.formato.is_none() {
                    Job::Barrier
                } else {
                    let parts = resolved
                        .iter()
                        .filter_map(|r| {
                            let idx = r.part?;
                            Some((
                                idx,
                                match &r.payload {
                                    Payload::Data { path, .. } => {
                                        PartOutcome::Artifact(path.clone())
                                    }
                                    Payload::Signal(_) => PartOutcome::Ignored,
                                },
                            ))
                        })
                        .collect();
                    resolved.retain(|r| matches!(r.payload, Payload::Data { .. }));
                    Job::Join(parts)
                }
            }
        };
        self.used[i] = resolved;
        Ok(job)
    }

    fn start(&mut self, i: usize) -> u64 {
        let node = &self.plan.nodes[i];
        let t = self.tick();
        self.recorder.record_event(ProvenanceEvent::new(
            EventKind::ProcessStart,
            node.id.clone(),
            node.path.clone(),
            node.instance_index,
            node.config.versions.clone(),
        ));
        t
    }

    fn finish(&mut self, i: usize, started: Option<u64>, outcome: Outcome) {
        let node = &self.plan.nodes[i];
        let versions = &node.config.versions;
        let t = outcome.task;
        for r in &self.used[i] {
            let Payload::Data {
                artifact, process, ..
            } = &r.payload
            else {
                continue;
            };
            if let Some(a) = artifact {
                self.recorder.record_event(
                    ProvenanceEvent::new(
                        EventKind::DataUsed,
                        node.id.clone(),
                        node.path.clone(),
                        node.instance_index,
                        versions.clone(),
                    )
                    .related(a.clone()),
                );
            }
            if r.dependency == DependencyKind::Control {
                if let Some(p) = process {
                    self.recorder.record_event(
                        ProvenanceEvent::new(
                            EventKind::Triggered,
                            node.id.clone(),
                            node.path.clone(),
                            node.instance_index,
                            versions.clone(),
                        )
                        .related(p.clone()),
                    );
                }
            }
        }

        match t.status {
            Status::Success => {
                for (port, path) in &t.outputs {
                    let payload = if node.kind == NodeKind::Connector {
                        match self.used[i].first().map(|r| &r.payload) {
                            Some(Payload::Data {
                                artifact, process, ..
                            }) => Payload::Data {
                                path: path.clone(),
                                artifact: artifact.clone(),
                                process: process.clone(),
                            },
                            _ => Payload::Data {
                                path: path.clone(),
                                artifact: None,
                                process: None,
                            },
                        }
                    } else {
                        let id = artifact_id(node, port);
                        let port_versions = node
                            .config
                            .port_versions
                            .get(port)
                            .cloned()
                            .unwrap_or_else(|| versions.clone());
                        self.recorder.record_event(
                            ProvenanceEvent::new(
                                EventKind::ArtifactCreated,
                                id.clone(),
                                artifact_path(node, port),
                                node.instance_index,
                                port_versions,
                            )
                            .related(node.id.clone()),
                        );
                        Payload::Data {
                            path: path.clone(),
                            artifact: Some(id),
                            process: Some(node.id.clone()),
                        }
                    };
                    self.payloads
                        .insert((node.id.clone(), port.clone()), payload);
                }
            }
            Status::Ignored => {
                let signal = t.signal.clone().expect("ignored nodes signal");
                for port in &node.outputs {
                    self.payloads.insert(
                        (node.id.clone(), port.clone()),
                        Payload::Signal(signal.clone()),
                    );
                }
            }
            Status::Failed | Status::NotRun => {}
        }

        let mut end = ProvenanceEvent::new(
            EventKind::ProcessEnd,
            node.id.clone(),
            node.path.clone(),
            node.instance_index,
            versions.clone(),
        );
        end.status = Some(format!("{:?}", t.status).to_lowercase());
        end.attempt = Some(t.attempts.len() as u32);
        self.recorder.record_event(end);

        if let Some(j) = outcome.join {
            self.joins.push(j);
        }
        let workdir = &self.config.workdir;
        let finished = self.tick();
        self.records[i] = Some(NodeRecord {
            id: node.id.clone(),
            kind: node.kind,
            status: t.status,
            attempts: t.attempts,
            outputs: t
                .outputs
                .iter()
                .map(|(k, v)| (k.clone(), relative(workdir, v)))
                .collect(),
            signal: t.signal,
            delivered_from: outcome.delivered_from.filter(|r| !r.is_empty()),
            note: outcome.note,
            started,
            finished: Some(finished),
        });
    }
}

/// Executes `plan` under `config`, writing `report.json` and
/// `provenance.json` into the workdir.
pub fn run(plan: &ExecutionPlan, config: &RunConfig) -> Result<RunReport, EngineError> {
    let workdir = &config.workdir;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EngineError::Io { path, source }
    };
    std::fs::create_dir_all(workdir).map_err(io(workdir))?;
    let faults = match &config.fault_script {
        Some(p) => FaultScript::load(p)?,
        None => FaultScript::default(),
    };
    let empty = workdir.join(".empty");
    std::fs::write(&empty, b"").map_err(io(&empty))?;

    let n = plan.nodes.len();
    let index: HashMap<&str, usize> = plan
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| (node.id.as_str(), i))
        .collect();
    let position: Vec<usize> = {
        let mut pos = vec![0; n];
        for (p, id) in plan.order.iter().enumerate() {
            pos[index[id.as_str()]] = p;
        }
        pos
    };
    let mut pending = vec![0usize; n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut seen = HashSet::new();
    for e in &plan.edges {
        let (f, t) = (index[e.from.as_str()], index[e.to.as_str()]);
        if seen.insert((f, t)) {
            succ[f].push(t);
            pending[t] += 1;
        }
    }

    let mut co = Coordinator {
        plan,
        config,
        recorder: Recorder::new(LogHeader {
            workflow: plan.workflow.clone(),
            adapter: config.adapter.label().to_string(),
            flows: plan.flows.clone(),
        }),
        records: vec![None; n],
        payloads: HashMap::new(),
        used: vec![Vec::new(); n],
        clock: 0,
        joins: Vec::new(),
        empty,
    };

    // Ready set keyed by topological position so dispatch order is fixed.
    let mut ready: BTreeSet<(usize, usize)> = (0..n)
        .filter(|i| pending[*i] == 0)
        .map(|i| (position[i], i))
        .collect();
    let mut busy_groups: HashSet<String> = HashSet::new();
    let mut in_flight = 0usize;
    let jobs = config.jobs.max(1);
    let (tx, rx) = mpsc::channel::<(usize, Option<u64>, Outcome)>();

    let complete = |i: usize, ready: &mut BTreeSet<(usize, usize)>, pending: &mut Vec<usize>| {
        for &s in &succ[i] {
            pending[s] -= 1;
            if pending[s] == 0 {
                ready.insert((position[s], s));
            }
        }
    };

    std::thread::scope(|scope| loop {
        while in_flight < jobs {
            let next = ready.iter().copied().find(|(_, i)| {
                plan.nodes[*i]
                    .config
                    .serial_group
                    .as_ref()
                    .is_none_or(|g| !busy_groups.contains(g))
            });
            let Some(key) = next else { break };
            ready.remove(&key);
            let i = key.1;
            match co.prepare(i) {
                Err(None) => complete(i, &mut ready, &mut pending),
                Err(Some(outcome)) => {
                    let started = co.start(i);
                    co.finish(i, Some(started), outcome);
                    complete(i, &mut ready, &mut pending);
                }
                Ok(job) => {
                    let node = &plan.nodes[i];
                    if let Some(g) = &node.config.serial_group {
                        busy_groups.insert(g.clone());
                    }
                    let started = co.start(i);
                    let ctx = AttemptContext {
                        config,
                        faults: &faults,
                        node_dir: co.node_dir(node),
                    };
                    let tx = tx.clone();
                    in_flight += 1;
                    scope.spawn(move || {
                        let outcome = work(node, job, &ctx, &plan.expansions, &config.workdir);
                        let _ = tx.send((i, Some(started), outcome));
                    });
                }
            }
        }
        if in_flight == 0 {
            break;
        }
        let (i, started, outcome) = rx.recv().expect("worker result");
        in_flight -= 1;
        if let Some(g) = &plan.nodes[i].config.serial_group {
            busy_groups.remove(g);
        }
        co.finish(i, started, outcome);
        complete(i, &mut ready, &mut pending);
    });

    for i in 0..n {
        if co.records[i].is_none() {
            co.skip(i, "never became ready".into());
        }
    }
    let mut nodes: Vec<(usize, NodeRecord)> = co
        .records
        .into_iter()
        .enumerate()
        .map(|(i, r)| (position[i], r.expect("recorded")))
        .collect();
    nodes.sort_by_key(|(p, _)| *p);
    let nodes: Vec<NodeRecord> = nodes.into_iter().map(|(_, r)| r).collect();
    let failed = nodes
        .iter()
        .any(|r| matches!(r.status, Status::Failed | Status::NotRun));
    let mut joins = co.joins;
    joins.sort_by(|a, b| a.node.cmp(&b.node));
    let report = RunReport {
        workflow: plan.workflow.clone(),
        adapter: config.adapter,
        status: if failed {
            RunStatus::Failed
        } else {
            RunStatus::Success
        },
        nodes,
        joins,
    };
    let report_path = workdir.join("report.json");
    std::fs::write(&report_path, report.to_json()).map_err(io(&report_path))?;
    let prov_path = workdir.join("provenance.json");
    co.recorder
        .snapshot()
        .save(&prov_path)
        .map_err(io(&prov_path))?;
    Ok(report)
}
