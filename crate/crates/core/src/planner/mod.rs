//! Sweep expansion, DAG construction and join manifests.

mod dag;
mod sweep;
pub mod template;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DependencyKind, PropertyAssign, PropertyValue, SourceSpan, WorkflowModel};
use crate::typesystem::{Analysis, TypeRegistry, BIFURCACAO, VARREDURA};

pub use dag::build_dag;
pub use sweep::{
    declared_datasets, expand_sweep, fork_ports, Dataset, InstanceAssignment, Item, PortBinding,
    SweepExpansion,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no dataset bound to Bifurcacao port `{port}`")]
    MissingBinding { port: String },
    #[error("dataset for `{port}` is empty; a sweep needs at least one instance")]
    EmptyDataset { port: String },
    #[error("cannot read dataset {path}: {message}", path = .path.display())]
    Dataset { path: PathBuf, message: String },
    #[error("`{bind}` is not a valid binding: {message}")]
    InvalidBind { bind: String, message: String },
    #[error("parameter sweep `{inner}` is nested inside sweep `{outer}`")]
    NestedSweep { outer: String, inner: String },
    #[error("dependency cycle through {0}")]
    Cycle(String),
    #[error("{node}: command template: {message}")]
    Template { node: String, message: String },
    #[error("join `{port}` is missing instance {instance_index}")]
    MissingPart { port: String, instance_index: usize },
    #[error("model is not valid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Task,
    Connector,
    Join,
    MapReduce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinFormat {
    Include,
    Merge,
    Concat,
}

impl JoinFormat {
    pub fn parse(s: &str) -> Option<JoinFormat> {
        match s {
            "include" => Some(JoinFormat::Include),
            "merge" => Some(JoinFormat::Merge),
            "concat" => Some(JoinFormat::Concat),
            _ => None,
        }
    }
}

/// Where a node input comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    /// Output port (or destination role) of another node.
    Node { node: String, port: String },
    /// A sweep item bound to this instance.
    Item(Item),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInput {
    /// Input port, source role, or join port name.
    pub name: String,
    pub source: InputSource,
    pub dependency: DependencyKind,
    /// Sweep instance feeding a join part.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub part: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    pub properties: IndexMap<String, String>,
    /// `num_tentativas` when RedundanciaTemporal applies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retries: Option<u32>,
    pub ignorar: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout: Option<f64>,
    /// Log patterns when the element is typed Log.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_patterns: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub copies: Option<u32>,
    pub propagation: bool,
    pub versions: Vec<String>,
    pub port_versions: IndexMap<String, Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub serial_group: Option<String>,
}

impl NodeConfig {
    /// Attempt budget for one execution (or one replica).
    pub fn attempt_budget(&self, retries_are_additional: bool) -> u32 {
        match self.retries {
            Some(n) if retries_are_additional => n.saturating_add(1),
            Some(n) => n.max(1),
            None => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinSpec {
    /// `None` for a sweep output used only as a control dependency.
    pub formato: Option<JoinFormat>,
    pub destino: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapReduceSpec {
    pub map: String,
    pub reduce: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub id: String,
    pub path: String,
    pub instance_index: usize,
    pub kind: NodeKind,
    pub inputs: Vec<NodeInput>,
    pub outputs: Vec<String>,
    pub config: NodeConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub join: Option<JoinSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mapreduce: Option<MapReduceSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEdge {
    pub from: String,
    pub to: String,
    pub dependency: DependencyKind,
}

/// A flow instance as seen by provenance export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowInfo {
    pub path: String,
    pub instance_index: usize,
    pub sweep: bool,
    pub tags: Vec<String>,
    pub alta: Vec<String>,
    pub baixa: Vec<String>,
    pub port_versions: IndexMap<String, Vec<String>>,
}

impl FlowInfo {
    pub fn id(&self) -> String {
        node_id(&self.path, self.instance_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub workflow: String,
    pub nodes: Vec<PlanNode>,
    pub edges: Vec<PlanEdge>,
    pub order: Vec<String>,
    pub expansions: Vec<SweepExpansion>,
    pub flows: Vec<FlowInfo>,
}

impl ExecutionPlan {
    pub fn node(&self, id: &str) -> Option<&PlanNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

pub fn node_id(path: &str, instance_index: usize) -> String {
    format!("{path}#{instance_index}")
}

pub fn join_node_id(flow: &str, port: &str, instance_index: usize) -> String {
    format!("{flow}.{port}.join#{instance_index}")
}

/// Replaces the dataset of the Bifurcacao port at `port_path` (`flow.port`).
pub fn apply_bindings(
    model: &mut WorkflowModel,
    binds: &[(String, Dataset)],
) -> Result<(), PlanError> {
    let registry = TypeRegistry::with_model(model).ok();
    for (port_path, dataset) in binds {
        let invalid = |message: &str| PlanError::InvalidBind {
            bind: port_path.clone(),
            message: message.to_string(),
        };
        let (inst_path, port) = port_path
            .rsplit_once('.')
            .ok_or_else(|| invalid("expected `flow.port`"))?;
        let inst =
            lookup_instance_mut(model, inst_path).ok_or_else(|| invalid("no such instance"))?;
        let is_sweep = inst.assigned_types.iter().any(|t| {
            t == VARREDURA
                || registry
                    .as_ref()
                    .is_some_and(|r| r.is_subtype(t, VARREDURA))
        });
        let itf = inst
            .interfaces
            .iter_mut()
            .find(|i| i.name == port)
            .ok_or_else(|| invalid("no such port"))?;
        let is_fork = itf.assigned_types.iter().any(|t| {
            t == BIFURCACAO
                || registry
                    .as_ref()
                    .is_some_and(|r| r.is_subtype(t, BIFURCACAO))
        });
        if !is_fork || !is_sweep {
            return Err(invalid("not a Bifurcacao port of a parameter sweep"));
        }
        itf.properties
            .retain(|p| !matches!(p.name.as_str(), "diretorio" | "valores" | "repeticoes"));
        let (name, value) = match dataset {
            Dataset::Directory(d) => ("diretorio", PropertyValue::Str(d.display().to_string())),
            Dataset::Values(v) => ("valores", PropertyValue::Set(v.clone())),
            Dataset::Repetitions(n) => ("repeticoes", PropertyValue::Int(*n as i64)),
        };
        itf.properties.push(PropertyAssign {
            name: name.into(),
            annotation: None,
            value,
            span: SourceSpan::new("<bind>", 1, 1),
        });
    }
    Ok(())
}

fn lookup_instance_mut<'a>(
    model: &'a mut WorkflowModel,
    path: &str,
) -> Option<&'a mut crate::model::ElementInstance> {
    let mut segments = path.split('.');
    let first = segments.next()?;
    let mut current = model.instances.iter_mut().find(|i| i.name == first)?;
    for segment in segments {
        current = current
            .body
            .as_mut()?
            .instances
            .iter_mut()
            .find(|i| i.name == segment)?;
    }
    Some(current)
}

/// Expands every sweep from its declared datasets and builds the plan.
/// Relative `diretorio` values are resolved against `base_dir`.
pub fn plan(
    model: &WorkflowModel,
    analysis: &Analysis,
    base_dir: &Path,
) -> Result<ExecutionPlan, PlanError> {
    if !analysis.is_valid() {
        let first = &analysis.diagnostics[0];
        return Err(PlanError::Invalid(first.to_string()));
    }
    let mut expansions = Vec::new();
    for r in &analysis.resolved {
        let sweep =
            r.has(VARREDURA) && r.structure_type == Some(crate::typesystem::StructureType::Fluxo);
        if sweep {
            let datasets = declared_datasets(r, base_dir)?;
            expansions.push(expand_sweep(r, &datasets)?);
        }
    }
    build_dag(model, &analysis.resolved, &expansions)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinPart {
    pub instance_index: usize,
    pub artifact: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinManifest {
    pub port: String,
    pub formato: JoinFormat,
    pub parts: Vec<JoinPart>,
    pub destino: PathBuf,
}

/// Outcome of one sweep instance at a join port.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartOutcome {
    Artifact(PathBuf),
    Ignored,
}

/// Collects the parts of a join once every instance has finished. Ignored
/// instances are left out.
pub fn join_manifest(
    expansion: &SweepExpansion,
    port: &str,
    formato: JoinFormat,
    destino: &Path,
    outputs: &BTreeMap<usize, PartOutcome>,
) -> Result<JoinManifest, PlanError> {
    let mut parts = Vec::new();
    for inst in &expansion.instances {
        match outputs.get(&inst.instance_index) {
            None => {
                return Err(PlanError::MissingPart {
                    port: port.to_string(),
                    instance_index: inst.instance_index,
                })
            }
            Some(PartOutcome::Ignored) => {}
            Some(PartOutcome::Artifact(p)) => parts.push(JoinPart {
                instance_index: inst.instance_index,
                artifact: p.clone(),
            }),
        }
    }
    Ok(JoinManifest {
        port: port.to_string(),
        formato,
        parts,
        destino: destino.to_path_buf(),
    })
}
