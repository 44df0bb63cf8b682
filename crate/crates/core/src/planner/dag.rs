use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use super::*;
use crate::model::{Attachment, AttachmentOp, Direction, ElementInstance, ElementKind};
use crate::typesystem::{
    ResolvedElement, StructureType, ALTA, BAIXA, JUNCAO, LOG, MAPREDUCE, MASCARAMENTO,
    MONITORAMENTO, OPM, PROPAGACAO, REDUNDANCIA,
};

const DEFAULT_LOG_PATTERN: &str = r"(?i)\berror\b";

#[derive(Clone, Copy, PartialEq, Eq)]
enum Shape {
    Executavel,
    Plain,
    Sweep,
    MapReduce,
    Connector,
}

fn shape(r: &ResolvedElement) -> Shape {
    match (r.kind, r.structure_type) {
        (ElementKind::Connector, _) => Shape::Connector,
        (_, Some(StructureType::Fluxo)) if r.has(MAPREDUCE) => Shape::MapReduce,
        (_, Some(StructureType::Fluxo)) if r.has(VARREDURA) => Shape::Sweep,
        (_, Some(StructureType::Fluxo)) => Shape::Plain,
        _ => Shape::Executavel,
    }
}

/// Sources visible inside a flow body through the enclosing flow's input
/// ports.
struct Env {
    flow: Option<String>,
    inputs: HashMap<String, (InputSource, DependencyKind)>,
}

struct Builder<'a> {
    resolved: HashMap<&'a str, &'a ResolvedElement>,
    expansions: HashMap<&'a str, &'a SweepExpansion>,
    nodes: Vec<PlanNode>,
    flows: Vec<FlowInfo>,
}

struct Level<'m> {
    model: &'m WorkflowModel,
    prefix: &'m str,
    idx: usize,
    env: &'m Env,
    sweep: Option<&'m str>,
    serial: Option<&'m str>,
}

impl<'m> Level<'m> {
    fn local(&self, name: &str) -> Option<&'m ElementInstance> {
        self.model.instances.iter().find(|i| i.name == name)
    }

    fn incoming(&self, inst: &str, port: &str) -> Option<&'m Attachment> {
        self.model.attachments.iter().find(|a| {
            a.op == AttachmentOp::From && a.task_ref.instance == inst && a.task_ref.point == port
        })
    }
}

/// Builds the execution DAG: one node per task and connector per sweep
/// instance, plain flows inlined, MapReduce flows as single nodes, and one
/// join node per sweep output port.
pub fn build_dag(
    model: &WorkflowModel,
    resolved: &[ResolvedElement],
    expansions: &[SweepExpansion],
) -> Result<ExecutionPlan, PlanError> {
    let mut b = Builder {
        resolved: resolved.iter().map(|r| (r.path.as_str(), r)).collect(),
        expansions: expansions.iter().map(|e| (e.flow.as_str(), e)).collect(),
        nodes: Vec::new(),
        flows: Vec::new(),
    };
    let env = Env {
        flow: None,
        inputs: HashMap::new(),
    };
    b.level(&Level {
        model,
        prefix: "",
        idx: 0,
        env: &env,
        sweep: None,
        serial: None,
    })?;

    let known: HashSet<&str> = b.nodes.iter().map(|n| n.id.as_str()).collect();
    let mut edges: Vec<PlanEdge> = Vec::new();
    for node in &b.nodes {
        for input in &node.inputs {
            if let InputSource::Node { node: from, .. } = &input.source {
                if !known.contains(from.as_str()) {
                    return Err(PlanError::Invalid(format!(
                        "{} reads from unknown node {from}",
                        node.id
                    )));
                }
                let edge = PlanEdge {
                    from: from.clone(),
                    to: node.id.clone(),
                    dependency: input.dependency,
                };
                if !edges.contains(&edge) {
                    edges.push(edge);
                }
            }
        }
    }
    let order = topological_order(&b.nodes, &edges)?;
    Ok(ExecutionPlan {
        workflow: model.name.clone(),
        nodes: b.nodes,
        edges,
        order,
        expansions: expansions.to_vec(),
        flows: b.flows,
    })
}

/// Kahn's algorithm; ties go to the node created first.
fn topological_order(nodes: &[PlanNode], edges: &[PlanEdge]) -> Result<Vec<String>, PlanError> {
    let index: HashMap<&str, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut indegree = vec![0usize; nodes.len()];
    let mut succ = vec![Vec::new(); nodes.len()];
    for e in edges {
        let (f, t) = (index[e.from.as_str()], index[e.to.as_str()]);
        succ[f].push(t);
        indegree[t] += 1;
    }
    let mut ready: BinaryHeap<Reverse<usize>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, d)| **d == 0)
        .map(|(i, _)| Reverse(i))
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(Reverse(i)) = ready.pop() {
        order.push(nodes[i].id.clone());
        for &j in &succ[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.push(Reverse(j));
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck: Vec<&str> = nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| indegree[*i] > 0)
            .map(|(_, n)| n.id.as_str())
            .collect();
        return Err(PlanError::Cycle(stuck.join(", ")));
    }
    Ok(order)
}

fn versions_of(props: &crate::typesystem::EffectiveProperties, ty: &str) -> Vec<String> {
    props
        .get_for(ty, "versao")
        .and_then(|v| v.as_set())
        .map(|s| s.to_vec())
        .unwrap_or_default()
}

fn flow_info(r: &ResolvedElement, idx: usize, sweep: bool) -> FlowInfo {
    let mut tags = Vec::new();
    let mut push_all = |vs: &[String]| {
        for v in vs {
            if !tags.contains(v) {
                tags.push(v.clone());
            }
        }
    };
    let opm = if r.has(OPM) {
        versions_of(&r.properties, OPM)
    } else {
        vec![]
    };
    let alta = if r.has(ALTA) {
        versions_of(&r.properties, ALTA)
    } else {
        vec![]
    };
    let baixa = if r.has(BAIXA) {
        versions_of(&r.properties, BAIXA)
    } else {
        vec![]
    };
    push_all(&opm);
    push_all(&alta);
    push_all(&baixa);
    FlowInfo {
        path: r.path.clone(),
        instance_index: idx,
        sweep,
        tags,
        alta,
        baixa,
        port_versions: port_versions(r),
    }
}

fn port_versions(r: &ResolvedElement) -> IndexMap<String, Vec<String>> {
    r.interfaces
        .iter()
        .filter(|i| i.has(OPM))
        .map(|i| (i.name.clone(), versions_of(&i.properties, OPM)))
        .collect()
}

fn config(r: &ResolvedElement, serial: Option<&str>) -> NodeConfig {
    let p = &r.properties;
    let int = |name: &str| {
        p.get(name)
            .and_then(|v| v.as_int())
            .map(|n| n.max(0) as u32)
    };
    NodeConfig {
        command: p
            .get("comando")
            .and_then(|v| v.as_str())
            .map(str::to_string),
        properties: p.plain_values(),
        retries: if r.has(REDUNDANCIA) {
            int("num_tentativas")
        } else {
            None
        },
        ignorar: r.has(REDUNDANCIA) && p.get("ignorar").and_then(|v| v.as_bool()) == Some(true),
        timeout: if r.has(MONITORAMENTO) {
            p.get("tempo_limite").and_then(|v| v.as_float())
        } else {
            None
        },
        log_patterns: r.has(LOG).then(|| {
            p.get("padroes")
                .and_then(|v| v.as_set())
                .filter(|s| !s.is_empty())
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![DEFAULT_LOG_PATTERN.to_string()])
        }),
        copies: if r.has(MASCARAMENTO) {
            int("num_copias")
        } else {
            None
        },
        propagation: r.has(PROPAGACAO),
        versions: if r.has(OPM) {
            versions_of(p, OPM)
        } else {
            vec![]
        },
        port_versions: port_versions(r),
        serial_group: serial.map(str::to_string),
    }
}

fn check_template(node: &str, r: &ResolvedElement, template: &str) -> Result<(), PlanError> {
    template::render(template, |key| {
        if key == "dir" {
            return Some(String::new());
        }
        let port = |dir: Direction, name: &str| {
            r.interfaces
                .iter()
                .any(|i| i.direction == dir && i.name == name)
                .then(String::new)
        };
        if let Some(name) = key.strip_prefix("in.") {
            return port(Direction::Input, name);
        }
        if let Some(name) = key.strip_prefix("out.") {
            return port(Direction::Output, name);
        }
        r.properties.get(key).map(|v| v.to_plain())
    })
    .map(|_| ())
    .map_err(|message| PlanError::Template {
        node: node.to_string(),
        message,
    })
}

impl<'a> Builder<'a> {
    fn element(&self, path: &str) -> Result<&'a ResolvedElement, PlanError> {
        self.resolved
            .get(path)
            .copied()
            .ok_or_else(|| PlanError::Invalid(format!("`{path}` was not resolved")))
    }

    /// What feeds the producing endpoint `inst.port` at this level.
    fn producer(&self, lv: &Level, inst: &str, port: &str) -> Result<InputSource, PlanError> {
        if let Some(local) = lv.local(inst) {
            let path = join_path(lv.prefix, &local.name);
            let r = self.element(&path)?;
            return match shape(r) {
                Shape::Executavel | Shape::MapReduce => Ok(InputSource::Node {
                    node: node_id(&path, lv.idx),
                    port: port.to_string(),
                }),
                Shape::Sweep => Ok(InputSource::Node {
                    node: join_node_id(&path, port, lv.idx),
                    port: port.to_string(),
                }),
                Shape::Plain => {
                    let body = local
                        .body
                        .as_deref()
                        .ok_or_else(|| PlanError::Invalid(format!("flow `{path}` has no body")))?;
                    let inner = body
                        .attachments
                        .iter()
                        .find(|a| {
                            a.op == AttachmentOp::From
                                && a.task_ref.instance == local.name
                                && a.task_ref.point == port
                        })
                        .ok_or_else(|| {
                            PlanError::Invalid(format!("output `{path}.{port}` is not fed"))
                        })?;
                    Ok(InputSource::Node {
                        node: node_id(&join_path(&path, &inner.connector_ref.instance), lv.idx),
                        port: inner.connector_ref.point.clone(),
                    })
                }
                Shape::Connector => Err(PlanError::Invalid(format!(
                    "`{path}` is a connector on the task side of an attachment"
                ))),
            };
        }
        if lv.env.flow.as_deref() == Some(inst) {
            return lv
                .env
                .inputs
                .get(port)
                .map(|(s, _)| s.clone())
                .ok_or_else(|| {
                    PlanError::Invalid(format!("flow input `{inst}.{port}` is not fed"))
                });
        }
        Err(PlanError::Invalid(format!(
            "unknown endpoint `{inst}.{port}`"
        )))
    }

    /// The connector delivery feeding input port `inst.port`.
    fn consumer_input(
        &self,
        lv: &Level,
        inst: &str,
        port: &str,
    ) -> Option<(InputSource, DependencyKind)> {
        lv.incoming(inst, port).map(|a| {
            (
                InputSource::Node {
                    node: node_id(&join_path(lv.prefix, &a.connector_ref.instance), lv.idx),
                    port: a.connector_ref.point.clone(),
                },
                a.dependency_kind,
            )
        })
    }

    fn port_inputs(
        &self,
        lv: &Level,
        inst: &ElementInstance,
        r: &ResolvedElement,
    ) -> Vec<NodeInput> {
        r.interfaces
            .iter()
            .filter(|i| i.direction == Direction::Input)
            .filter_map(|i| {
                self.consumer_input(lv, &inst.name, &i.name)
                    .map(|(source, dependency)| NodeInput {
                        name: i.name.clone(),
                        source,
                        dependency,
                        part: None,
                    })
            })
            .collect()
    }

    fn outputs(r: &ResolvedElement, dir: Direction) -> Vec<String> {
        r.interfaces
            .iter()
            .filter(|i| i.direction == dir)
            .map(|i| i.name.clone())
            .collect()
    }

    fn level(&mut self, lv: &Level) -> Result<(), PlanError> {
        for inst in &lv.model.instances {
            let path = join_path(lv.prefix, &inst.name);
            let r = self.element(&path)?;
            let id = node_id(&path, lv.idx);
            match shape(r) {
                Shape::Executavel => {
                    let cfg = config(r, lv.serial);
                    if let Some(cmd) = &cfg.command {
                        check_template(&id, r, cmd)?;
                    }
                    let inputs = self.port_inputs(lv, inst, r);
                    self.nodes.push(PlanNode {
                        id,
                        path,
                        instance_index: lv.idx,
                        kind: NodeKind::Task,
                        inputs,
                        outputs: Self::outputs(r, Direction::Output),
                        config: cfg,
                        join: None,
                        mapreduce: None,
                    });
                }
                Shape::Connector => {
                    let mut inputs = Vec::new();
                    for role in r
                        .interfaces
                        .iter()
                        .filter(|i| i.direction == Direction::Source)
                    {
                        for a in lv.model.attachments.iter().filter(|a| {
                            a.op == AttachmentOp::To
                                && a.connector_ref.instance == inst.name
                                && a.connector_ref.point == role.name
                        }) {
                            inputs.push(NodeInput {
                                name: role.name.clone(),
                                source: self.producer(
                                    lv,
                                    &a.task_ref.instance,
                                    &a.task_ref.point,
                                )?,
                                dependency: a.dependency_kind,
                                part: None,
                            });
                        }
                    }
                    self.nodes.push(PlanNode {
                        id,
                        path,
                        instance_index: lv.idx,
                        kind: NodeKind::Connector,
                        inputs,
                        outputs: Self::outputs(r, Direction::Destination),
                        config: config(r, lv.serial),
                        join: None,
                        mapreduce: None,
                    });
                }
                Shape::MapReduce => {
                    let program = |role: &str| -> Result<String, PlanError> {
                        let inner = self.element(&format!("{path}.{role}"))?;
                        let cmd = inner
                            .properties
                            .get("comando")
                            .and_then(|v| v.as_str())
                            .ok_or_else(|| PlanError::Template {
                                node: id.clone(),
                                message: format!("`{role}` has no comando"),
                            })?;
                        template::render(cmd, |k| inner.properties.get(k).map(|v| v.to_plain()))
                            .map_err(|message| PlanError::Template {
                                node: format!("{path}.{role}"),
                                message,
                            })
                    };
                    let spec = MapReduceSpec {
                        map: program("map")?,
                        reduce: program("reduce")?,
                    };
                    let inputs = self.port_inputs(lv, inst, r);
                    self.nodes.push(PlanNode {
                        id,
                        path,
                        instance_index: lv.idx,
                        kind: NodeKind::MapReduce,
                        inputs,
                        outputs: Self::outputs(r, Direction::Output),
                        config: config(r, lv.serial),
                        join: None,
                        mapreduce: Some(spec),
                    });
                }
                Shape::Plain => {
                    let body = inst
                        .body
                        .as_deref()
                        .ok_or_else(|| PlanError::Invalid(format!("flow `{path}` has no body")))?;
                    let mut env = Env {
                        flow: Some(inst.name.clone()),
                        inputs: HashMap::new(),
                    };
                    for itf in r
                        .interfaces
                        .iter()
                        .filter(|i| i.direction == Direction::Input)
                    {
                        if let Some(src) = self.consumer_input(lv, &inst.name, &itf.name) {
                            env.inputs.insert(itf.name.clone(), src);
                        }
                    }
                    self.flows.push(flow_info(r, lv.idx, false));
                    self.level(&Level {
                        model: body,
                        prefix: &path,
                        idx: lv.idx,
                        env: &env,
                        sweep: lv.sweep,
                        serial: lv.serial,
                    })?;
                }
                Shape::Sweep => self.sweep(lv, inst, r, &path)?,
            }
        }
        Ok(())
    }

    fn sweep(
        &mut self,
        lv: &Level,
        inst: &ElementInstance,
        r: &'a ResolvedElement,
        path: &str,
    ) -> Result<(), PlanError> {
        if let Some(outer) = lv.sweep {
            return Err(PlanError::NestedSweep {
                outer: outer.to_string(),
                inner: path.to_string(),
            });
        }
        let body = inst
            .body
            .as_deref()
            .ok_or_else(|| PlanError::Invalid(format!("flow `{path}` has no body")))?;
        let expansion =
            self.expansions
                .get(path)
                .copied()
                .ok_or_else(|| PlanError::MissingBinding {
                    port: format!("{path}.<Bifurcacao>"),
                })?;
        let serial = (r.properties.get("modo").and_then(|v| v.as_str()) == Some("sequencial"))
            .then_some(path);
        self.flows.push(flow_info(r, lv.idx, true));

        let mut shared = HashMap::new();
        for itf in r
            .interfaces
            .iter()
            .filter(|i| i.direction == Direction::Input)
        {
            if let Some(src) = self.consumer_input(lv, &inst.name, &itf.name) {
                shared.insert(itf.name.clone(), src);
            }
        }
        for assignment in &expansion.instances {
            let mut inputs = shared.clone();
            for (port, item) in &assignment.items {
                inputs.insert(
                    port.clone(),
                    (InputSource::Item(item.clone()), DependencyKind::Data),
                );
            }
            let env = Env {
                flow: Some(inst.name.clone()),
                inputs,
            };
            self.level(&Level {
                model: body,
                prefix: path,
                idx: assignment.instance_index,
                env: &env,
                sweep: Some(path),
                serial,
            })?;
        }

        let flow_tags = flow_info(r, lv.idx, true).tags;
        for itf in r
            .interfaces
            .iter()
            .filter(|i| i.direction == Direction::Output)
        {
            let inner = body.attachments.iter().find(|a| {
                a.op == AttachmentOp::From
                    && a.task_ref.instance == inst.name
                    && a.task_ref.point == itf.name
            });
            let Some(inner) = inner else {
                return Err(PlanError::Invalid(format!(
                    "output `{path}.{}` is not fed",
                    itf.name
                )));
            };
            let inputs = expansion
                .instances
                .iter()
                .map(|a| NodeInput {
                    name: itf.name.clone(),
                    source: InputSource::Node {
                        node: node_id(
                            &join_path(path, &inner.connector_ref.instance),
                            a.instance_index,
                        ),
                        port: inner.connector_ref.point.clone(),
                    },
                    dependency: inner.dependency_kind,
                    part: Some(a.instance_index),
                })
                .collect();
            let join = if itf.has(JUNCAO) {
                JoinSpec {
                    formato: itf
                        .properties
                        .get("formato")
                        .and_then(|v| v.as_str())
                        .and_then(JoinFormat::parse),
                    destino: itf
                        .properties
                        .get("destino")
                        .and_then(|v| v.as_str())
                        .map(str::to_string),
                }
            } else {
                JoinSpec {
                    formato: None,
                    destino: None,
                }
            };
            let versions = if itf.has(OPM) {
                versions_of(&itf.properties, OPM)
            } else {
                flow_tags.clone()
            };
            self.nodes.push(PlanNode {
                id: join_node_id(path, &itf.name, lv.idx),
                path: format!("{path}.{}.join", itf.name),
                instance_index: lv.idx,
                kind: NodeKind::Join,
                inputs,
                outputs: vec![itf.name.clone()],
                config: NodeConfig {
                    port_versions: [(itf.name.clone(), versions.clone())].into_iter().collect(),
                    versions,
                    serial_group: lv.serial.map(str::to_string),
                    ..NodeConfig::default()
                },
                join: Some(join),
                mapreduce: None,
            });
        }
        Ok(())
    }
}

fn join_path(prefix: &str, name: &str) -> String {
    crate::model::join_path(prefix, name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_workflow;
    use crate::typesystem::analyze;

    fn plan_of(src: &str) -> ExecutionPlan {
        let m = parse_workflow(src, "t.osc").unwrap();
        let a = analyze(&m).unwrap();
        assert!(a.is_valid(), "{:?}", a.diagnostics);
        plan(&m, &a, Path::new(".")).unwrap()
    }

    const CHAIN: &str = r#"Family W = {
  Component A : Executavel = { Port out o = { } }
  Connector c : Pipe = { Role source s = { } Role destination d = { } }
  Component B : Executavel = { Port in i = { } }
  Attachment A.o to c.s;
  Attachment B.i from c.d;
}"#;

    #[test]
    fn chain_orders_producer_first() {
        let p = plan_of(CHAIN);
        assert_eq!(p.order, ["A#0", "c#0", "B#0"]);
        assert_eq!(p.edges.len(), 2);
        assert!(p.nodes.iter().all(|n| n.instance_index == 0));
    }

    #[test]
    fn plan_serialization_is_deterministic() {
        assert_eq!(plan_of(CHAIN).to_json(), plan_of(CHAIN).to_json());
    }

    #[test]
    fn absent_template_property_is_a_plan_error() {
        let src = r#"Family W = {
  Component A : Executavel = { Property comando = "run -t {num_threads}"; }
}"#;
        let m = parse_workflow(src, "t.osc").unwrap();
        let a = analyze(&m).unwrap();
        let err = plan(&m, &a, Path::new(".")).unwrap_err();
        assert!(matches!(err, PlanError::Template { .. }), "{err}");
    }

    #[test]
    fn plain_flow_ports_are_rewired() {
        let src = r#"Family W = {
  Component A : Executavel = { Port out o = { } }
  Connector c1 : Pipe = { Role source s = { } Role destination d = { } }
  Component F : Fluxo = {
    Port in i = { }
    Port out o = { }
    Family Body = {
      Connector k1 : Pipe = { Role source s = { } Role destination d = { } }
      Component T : Executavel = { Port in i = { } Port out o = { } }
      Connector k2 : Pipe = { Role source s = { } Role destination d = { } }
      Attachment F.i to k1.s;
      Attachment T.i from k1.d;
      Attachment T.o to k2.s;
      Attachment F.o from k2.d;
    }
  }
  Connector c2 : Pipe = { Role source s = { } Role destination d = { } }
  Component B : Executavel = { Port in i = { } }
  Attachment A.o to c1.s;
  Attachment F.i from c1.d;
  Attachment F.o to c2.s;
  Attachment B.i from c2.d;
}"#;
        let p = plan_of(src);
        assert_eq!(
            p.order,
            ["A#0", "c1#0", "F.k1#0", "F.T#0", "F.k2#0", "c2#0", "B#0"]
        );
        assert_eq!(p.flows.len(), 1);
    }
}
