//! Composition rules R1..R14. Each check pushes at most one diagnostic per
//! offending element, attachment or cycle.

use std::collections::{HashMap, HashSet};

use super::*;
use crate::model::{
    AttachmentOp, DependencyKind, Direction, ElementInstance, ElementKind, EndpointRef,
    WorkflowModel,
};
use crate::typesystem::resolve::{ResolvedElement, ResolvedInterface, StructureType};

struct Ctx<'a> {
    registry: TypeRegistry,
    resolved: HashMap<&'a str, &'a ResolvedElement>,
    out: Vec<Diagnostic>,
}

impl Ctx<'_> {
    fn push(&mut self, rule_id: RuleId, path: &str, span: &SourceSpan, message: impl Into<String>) {
        self.out.push(Diagnostic {
            rule_id,
            severity: Severity::Error,
            path: path.to_string(),
            span: span.clone(),
            message: message.into(),
        });
    }
}

/// Checks a resolved model against the composition rules. An empty result
/// means the model is valid.
pub fn validate(model: &WorkflowModel, resolved: &[ResolvedElement]) -> Vec<Diagnostic> {
    let registry = TypeRegistry::with_model(model).unwrap_or_else(|_| builtin_style());
    let mut ctx = Ctx {
        registry,
        resolved: resolved.iter().map(|r| (r.path.as_str(), r)).collect(),
        out: Vec::new(),
    };
    check_level(&mut ctx, model, "", None);
    ctx.out.sort_by(|a, b| {
        (&a.span.file, a.span.line, a.span.column, &a.path, a.rule_id).cmp(&(
            &b.span.file,
            b.span.line,
            b.span.column,
            &b.path,
            b.rule_id,
        ))
    });
    ctx.out
}

/// Rule governing the placement of a builtin type family.
fn placement_rule(closure: &[String]) -> RuleId {
    let has = |n: &str| closure.iter().any(|a| a == n);
    if has(MEMORIA_COMPARTILHADA) || has(MEMORIA_DISTRIBUIDA) {
        RuleId::R3
    } else if has(VARREDURA) || has(MAPREDUCE) {
        RuleId::R4
    } else if has(BIFURCACAO) || has(JUNCAO) {
        RuleId::R5
    } else if has(LOG) || has(MONITORAMENTO) || has(REDUNDANCIA) {
        RuleId::R7
    } else if has(MASCARAMENTO) {
        RuleId::R8
    } else if has(PROPAGACAO) {
        RuleId::R9
    } else if has(ALTA) || has(BAIXA) {
        RuleId::R10
    } else {
        RuleId::R2
    }
}

fn check_placement(
    ctx: &mut Ctx,
    path: &str,
    span: &SourceSpan,
    kind: ElementKind,
    assigned: &[String],
) {
    for ty in assigned {
        let Some(td) = ctx.registry.get(ty) else {
            continue;
        };
        if td.element_kinds.contains(&kind) {
            continue;
        }
        let rule = placement_rule(&ctx.registry.ancestors(ty));
        ctx.push(
            rule,
            path,
            span,
            format!("type `{ty}` cannot be assigned to a {kind}"),
        );
    }
}

fn check_level(
    ctx: &mut Ctx,
    model: &WorkflowModel,
    prefix: &str,
    enclosing: Option<(&ElementInstance, &ResolvedElement)>,
) {
    let local: HashMap<&str, &ElementInstance> = model
        .instances
        .iter()
        .map(|i| (i.name.as_str(), i))
        .collect();

    for inst in &model.instances {
        let path = join_path(prefix, &inst.name);
        let Some(r) = ctx.resolved.get(path.as_str()).copied() else {
            continue;
        };
        check_element(ctx, model, inst, r);
        if let Some(body) = &inst.body {
            check_level(ctx, body, &path, Some((inst, r)));
        }
    }

    check_attachments(ctx, model, prefix, &local, enclosing);
    check_cycles(ctx, model, prefix, &local);
}

fn join_path(prefix: &str, name: &str) -> String {
    crate::model::join_path(prefix, name)
}

fn set_len(v: Option<&PropertyValue>) -> usize {
    v.and_then(|v| v.as_set()).map_or(0, |s| s.len())
}

fn check_element(
    ctx: &mut Ctx,
    level: &WorkflowModel,
    inst: &ElementInstance,
    r: &ResolvedElement,
) {
    let path = r.path.as_str();
    let span = &r.span;
    check_placement(ctx, path, span, inst.kind, &inst.assigned_types);

    let sweep = inst.kind == ElementKind::Task
        && r.has(VARREDURA)
        && r.structure_type == Some(StructureType::Fluxo);

    match inst.kind {
        ElementKind::Task => {
            let (exec, flow) = (r.has(EXECUTAVEL), r.has(FLUXO));
            if exec == flow {
                let msg = if exec {
                    "structure types Executavel and Fluxo cannot be combined"
                } else {
                    "task needs exactly one structure type (Executavel or Fluxo)"
                };
                ctx.push(RuleId::R2, path, span, msg);
            } else if flow && inst.body.is_none() {
                ctx.push(
                    RuleId::R2,
                    path,
                    span,
                    "a Fluxo task requires a nested Family body",
                );
            } else if exec && inst.body.is_some() {
                ctx.push(
                    RuleId::R2,
                    path,
                    span,
                    "an Executavel task cannot have a nested body",
                );
            }

            if r.has(VARREDURA) && r.has(MAPREDUCE) {
                ctx.push(
                    RuleId::R4,
                    path,
                    span,
                    "VarreduraDeParametros and MapReduce cannot be combined",
                );
            } else if r.has(MAPREDUCE) && r.structure_type == Some(StructureType::Fluxo) {
                if let Some(body) = &inst.body {
                    for required in ["map", "reduce"] {
                        let ok = body.instances.iter().any(|i| {
                            i.name == required
                                && ctx
                                    .resolved
                                    .get(format!("{path}.{required}").as_str())
                                    .is_some_and(|e| {
                                        e.structure_type == Some(StructureType::Executavel)
                                    })
                        });
                        if !ok {
                            ctx.push(
                                RuleId::R4,
                                path,
                                span,
                                format!(
                                    "MapReduce body needs an Executavel task named `{required}`"
                                ),
                            );
                        }
                    }
                }
            }

            if r.has(MASCARAMENTO) && r.structure_type == Some(StructureType::Fluxo) {
                ctx.push(
                    RuleId::R8,
                    path,
                    span,
                    "Mascaramento applies only to Executavel tasks",
                );
            }

            let granular = r.has(ALTA) || r.has(BAIXA);
            if granular && r.structure_type == Some(StructureType::Executavel) {
                ctx.push(
                    RuleId::R10,
                    path,
                    span,
                    "granularity types apply only to flows",
                );
            } else if r.has(ALTA) && r.has(BAIXA) {
                let alta: HashSet<&String> = r
                    .properties
                    .get_for(ALTA, "versao")
                    .and_then(|v| v.as_set())
                    .unwrap_or_default()
                    .iter()
                    .collect();
                let overlap: Vec<&String> = r
                    .properties
                    .get_for(BAIXA, "versao")
                    .and_then(|v| v.as_set())
                    .unwrap_or_default()
                    .iter()
                    .filter(|v| alta.contains(v))
                    .collect();
                if !overlap.is_empty() {
                    ctx.push(
                        RuleId::R10,
                        path,
                        span,
                        format!(
                            "version(s) {:?} are both AltaGranularidade and BaixaGranularidade",
                            overlap
                        ),
                    );
                }
            }
        }
        ElementKind::Connector => {
            if inst.body.is_some() {
                ctx.push(
                    RuleId::R2,
                    path,
                    span,
                    "a connector cannot have a nested body",
                );
            }
        }
        _ => {}
    }

    let detection = r.has(LOG) || r.has(MONITORAMENTO);
    let correction =
        r.has(REDUNDANCIA) || (inst.kind == ElementKind::Connector && r.has(PROPAGACAO));
    if detection && !correction {
        ctx.push(
            RuleId::R7,
            path,
            span,
            "a detection type (Log, MonitoramentoDeTempo) requires a correction type on the same element",
        );
    }

    if r.has(OPM) && set_len(r.properties.get_for(OPM, "versao")) == 0 {
        ctx.push(
            RuleId::R11,
            path,
            span,
            "OPM element needs a non-empty `versao`",
        );
    }

    check_numeric(ctx, path, span, r);

    // Ports and roles.
    let outer: Vec<&crate::model::Attachment> = level
        .attachments
        .iter()
        .filter(|a| a.task_ref.instance == inst.name)
        .collect();
    let mut has_fork = false;
    for itf in &r.interfaces {
        let ipath = format!("{path}.{}", itf.name);
        let iface = inst.interface(&itf.name).expect("resolved from instance");
        check_placement(ctx, &ipath, &itf.span, itf.kind, &iface.assigned_types);
        check_interface(ctx, &ipath, itf, sweep);
        if sweep && itf.direction == Direction::Input && itf.has(BIFURCACAO) {
            has_fork = true;
        }
        if sweep && itf.direction == Direction::Output && !itf.has(JUNCAO) {
            let attached: Vec<_> = outer
                .iter()
                .filter(|a| a.task_ref.point == itf.name)
                .collect();
            let control_only = !attached.is_empty()
                && attached
                    .iter()
                    .all(|a| a.dependency_kind == DependencyKind::Control);
            if !control_only {
                ctx.push(
                    RuleId::R5,
                    &ipath,
                    &itf.span,
                    "data output ports of a parameter sweep must be typed Juncao",
                );
            }
        }
    }
    if sweep && !has_fork {
        ctx.push(
            RuleId::R5,
            path,
            span,
            "a parameter sweep needs at least one input port typed Bifurcacao",
        );
    }
}

fn check_interface(ctx: &mut Ctx, path: &str, itf: &ResolvedInterface, sweep: bool) {
    let span = &itf.span;
    if itf.has(BIFURCACAO) {
        if !sweep {
            ctx.push(
                RuleId::R5,
                path,
                span,
                "Bifurcacao ports belong on parameter sweep flows",
            );
        } else if itf.direction != Direction::Input {
            ctx.push(RuleId::R5, path, span, "Bifurcacao must be an input port");
        }
        let bound = ["diretorio", "valores", "repeticoes"]
            .iter()
            .filter(|p| itf.properties.get(p).is_some())
            .count();
        if bound != 1 {
            ctx.push(
                RuleId::R6,
                path,
                span,
                format!("Bifurcacao must bind exactly one of diretorio, valores, repeticoes (found {bound})"),
            );
        }
    }
    if itf.has(JUNCAO) {
        if !sweep {
            ctx.push(
                RuleId::R5,
                path,
                span,
                "Juncao ports belong on parameter sweep flows",
            );
        } else if itf.direction != Direction::Output {
            ctx.push(RuleId::R5, path, span, "Juncao must be an output port");
        } else if itf.properties.get("formato").is_none() || itf.properties.get("destino").is_none()
        {
            ctx.push(
                RuleId::R5,
                path,
                span,
                "Juncao needs both `formato` and `destino`",
            );
        }
    }
    if itf.has(OPM) && set_len(itf.properties.get_for(OPM, "versao")) == 0 {
        ctx.push(
            RuleId::R11,
            path,
            span,
            "OPM element needs a non-empty `versao`",
        );
    }
}

fn check_numeric(ctx: &mut Ctx, path: &str, span: &SourceSpan, r: &ResolvedElement) {
    let mut problems = Vec::new();
    let int_at_least = |name: &str, min: i64, problems: &mut Vec<String>| match r
        .properties
        .get(name)
        .and_then(|v| v.as_int())
    {
        Some(v) if v >= min => {}
        Some(v) => problems.push(format!("`{name}` must be >= {min} (got {v})")),
        None => problems.push(format!("`{name}` must be set")),
    };
    if r.has(REDUNDANCIA) {
        int_at_least("num_tentativas", 1, &mut problems);
    }
    if r.has(MONITORAMENTO) {
        match r.properties.get("tempo_limite").and_then(|v| v.as_float()) {
            Some(t) if t > 0.0 => {}
            Some(t) => problems.push(format!("`tempo_limite` must be > 0 (got {t})")),
            None => problems.push("`tempo_limite` must be set".into()),
        }
    }
    if r.has(MEMORIA_COMPARTILHADA) {
        int_at_least("num_threads", 1, &mut problems);
    }
    if r.has(MEMORIA_DISTRIBUIDA) {
        int_at_least("num_nos", 1, &mut problems);
        int_at_least("procs_por_no", 1, &mut problems);
    }
    if r.has(MASCARAMENTO) {
        match r.properties.get("num_copias").and_then(|v| v.as_int()) {
            Some(n) if n >= 3 && n % 2 == 1 => {}
            Some(n) => problems.push(format!("`num_copias` must be odd and >= 3 (got {n})")),
            None => problems.push("`num_copias` must be set".into()),
        }
    }
    if !problems.is_empty() {
        ctx.push(RuleId::R13, path, span, problems.join("; "));
    }
}

fn check_attachments(
    ctx: &mut Ctx,
    model: &WorkflowModel,
    prefix: &str,
    local: &HashMap<&str, &ElementInstance>,
    enclosing: Option<(&ElementInstance, &ResolvedElement)>,
) {
    let boundary = |end: &EndpointRef| {
        enclosing
            .filter(|(e, _)| e.name == end.instance && !local.contains_key(end.instance.as_str()))
            .map(|(e, _)| e)
    };
    for a in &model.attachments {
        let left = local.get(a.task_ref.instance.as_str()).copied();
        let right = local.get(a.connector_ref.instance.as_str()).copied();
        let left_is_task =
            boundary(&a.task_ref).is_some() || left.is_some_and(|i| i.kind == ElementKind::Task);
        let right_is_connector = right.is_some_and(|i| i.kind == ElementKind::Connector);
        let path = join_path(prefix, &a.task_ref.to_string());
        if !left_is_task || !right_is_connector {
            ctx.push(
                RuleId::R1,
                &path,
                &a.span,
                format!(
                    "`{}` and `{}` must interact through a connector",
                    a.task_ref, a.connector_ref
                ),
            );
            continue;
        }

        let port_dir = match boundary(&a.task_ref) {
            // Seen from inside, a flow's input port produces data and its
            // output port consumes it.
            Some(e) => e.interface(&a.task_ref.point).map(|p| match p.direction {
                Direction::Input => Direction::Output,
                Direction::Output => Direction::Input,
                d => d,
            }),
            None => left
                .and_then(|i| i.interface(&a.task_ref.point))
                .map(|p| p.direction),
        };
        let role_dir = right
            .and_then(|i| i.interface(&a.connector_ref.point))
            .map(|r| r.direction);
        let (want_port, want_role) = match a.op {
            AttachmentOp::To => (Direction::Output, Direction::Source),
            AttachmentOp::From => (Direction::Input, Direction::Destination),
        };
        if port_dir != Some(want_port) || role_dir != Some(want_role) {
            ctx.push(
                RuleId::R14,
                &path,
                &a.span,
                format!(
                    "`{}` cannot be attached {} `{}`: port/role directions do not match",
                    a.task_ref,
                    if a.op == AttachmentOp::To {
                        "to"
                    } else {
                        "from"
                    },
                    a.connector_ref
                ),
            );
        }
    }

    let in_mapreduce = enclosing.is_some_and(|(_, r)| r.has(MAPREDUCE));
    if in_mapreduce {
        return;
    }
    let touching = |inst: &str, point: &str| {
        model
            .attachments
            .iter()
            .filter(|a| {
                (a.task_ref.instance == inst && a.task_ref.point == point)
                    || (a.connector_ref.instance == inst && a.connector_ref.point == point)
            })
            .count()
    };
    for inst in &model.instances {
        if inst.kind != ElementKind::Task {
            continue;
        }
        let path = join_path(prefix, &inst.name);
        let Some(r) = ctx.resolved.get(path.as_str()).copied() else {
            continue;
        };
        for itf in &r.interfaces {
            if itf.direction != Direction::Input || itf.has(BIFURCACAO) {
                continue;
            }
            let n = touching(&inst.name, &itf.name);
            if n != 1 {
                ctx.push(
                    RuleId::R14,
                    &format!("{path}.{}", itf.name),
                    &itf.span,
                    format!("input port must have exactly one attachment (found {n})"),
                );
            }
        }
    }
    if let Some((flow, r)) = enclosing {
        if r.structure_type == Some(StructureType::Fluxo) {
            for itf in &r.interfaces {
                if itf.direction != Direction::Output {
                    continue;
                }
                let n = touching(&flow.name, &itf.name);
                if n != 1 {
                    ctx.push(
                        RuleId::R14,
                        &format!("{}.{}", r.path, itf.name),
                        &itf.span,
                        format!("flow output port must be fed by exactly one inner attachment (found {n})"),
                    );
                }
            }
        }
    }
}

/// Nontrivial strongly connected components of the level's element graph.
fn check_cycles(
    ctx: &mut Ctx,
    model: &WorkflowModel,
    prefix: &str,
    local: &HashMap<&str, &ElementInstance>,
) {
    let names: Vec<&str> = model.instances.iter().map(|i| i.name.as_str()).collect();
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); names.len()];
    for a in &model.attachments {
        let (Some(&l), Some(&r)) = (
            index.get(a.task_ref.instance.as_str()),
            index.get(a.connector_ref.instance.as_str()),
        ) else {
            continue;
        };
        match a.op {
            AttachmentOp::To => succ[l].push(r),
            AttachmentOp::From => succ[r].push(l),
        }
    }
    for component in strongly_connected(&succ) {
        let cyclic = component.len() > 1 || succ[component[0]].contains(&component[0]);
        if !cyclic {
            continue;
        }
        let first = component.iter().min().copied().unwrap_or(0);
        let members: Vec<&str> = {
            let mut c = component.clone();
            c.sort();
            c.iter().map(|i| names[*i]).collect()
        };
        let inst = local[names[first]];
        ctx.push(
            RuleId::R12,
            &join_path(prefix, &inst.name),
            &inst.span,
            format!("dependency cycle through {}", members.join(", ")),
        );
    }
}

/// Tarjan's algorithm.
fn strongly_connected(succ: &[Vec<usize>]) -> Vec<Vec<usize>> {
    struct State<'a> {
        succ: &'a [Vec<usize>],
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        out: Vec<Vec<usize>>,
    }
    fn visit(s: &mut State, v: usize) {
        s.index[v] = Some(s.next);
        s.low[v] = s.next;
        s.next += 1;
        s.stack.push(v);
        s.on_stack[v] = true;
        for i in 0..s.succ[v].len() {
            let w = s.succ[v][i];
            match s.index[w] {
                None => {
                    visit(s, w);
                    s.low[v] = s.low[v].min(s.low[w]);
                }
                Some(wi) if s.on_stack[w] => s.low[v] = s.low[v].min(wi),
                _ => {}
            }
        }
        if Some(s.low[v]) == s.index[v] {
            let mut comp = Vec::new();
            while let Some(w) = s.stack.pop() {
                s.on_stack[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            s.out.push(comp);
        }
    }
    let n = succ.len();
    let mut s = State {
        succ,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for v in 0..n {
        if s.index[v].is_none() {
            visit(&mut s, v);
        }
    }
    s.out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tarjan_finds_cycle_and_singletons() {
        let succ = vec![vec![1], vec![2], vec![0], vec![]];
        let mut comps = strongly_connected(&succ);
        comps.iter_mut().for_each(|c| c.sort());
        comps.sort();
        assert_eq!(comps, vec![vec![0, 1, 2], vec![3]]);
    }

    #[test]
    fn empty_model_is_valid() {
        let m = WorkflowModel::new("W");
        assert!(validate(&m, &[]).is_empty());
    }
}
