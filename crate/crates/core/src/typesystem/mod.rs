//! Builtin OSC style, type resolution and the composition rules.

mod resolve;
mod rules;

use std::collections::HashSet;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    ElementKind, PowertypeClass, PropertyDecl, PropertyValue, SourceSpan, TypeDef, ValueKind,
    WorkflowModel,
};

pub use resolve::{
    resolve_types, EffectiveProperties, EffectiveProperty, ResolvedElement, ResolvedInterface,
    StructureType,
};
pub use rules::validate;

pub const EXECUTAVEL: &str = "Executavel";
pub const FLUXO: &str = "Fluxo";
pub const PIPE: &str = "Pipe";
pub const TRANSPORTE_ARQUIVO: &str = "TransporteArquivo";
pub const MEMORIA_COMPARTILHADA: &str = "MemoriaCompartilhada";
pub const MEMORIA_DISTRIBUIDA: &str = "MemoriaDistribuida";
pub const VARREDURA: &str = "VarreduraDeParametros";
pub const MAPREDUCE: &str = "MapReduce";
pub const BIFURCACAO: &str = "Bifurcacao";
pub const JUNCAO: &str = "Juncao";
pub const LOG: &str = "Log";
pub const MONITORAMENTO: &str = "MonitoramentoDeTempo";
pub const REDUNDANCIA: &str = "RedundanciaTemporal";
pub const PROPAGACAO: &str = "Propagacao";
pub const MASCARAMENTO: &str = "Mascaramento";
pub const OPM: &str = "OPM";
pub const ALTA: &str = "AltaGranularidade";
pub const BAIXA: &str = "BaixaGranularidade";

const BUILTIN_NAMES: [&str; 18] = [
    EXECUTAVEL,
    FLUXO,
    PIPE,
    TRANSPORTE_ARQUIVO,
    MEMORIA_COMPARTILHADA,
    MEMORIA_DISTRIBUIDA,
    VARREDURA,
    MAPREDUCE,
    BIFURCACAO,
    JUNCAO,
    LOG,
    MONITORAMENTO,
    REDUNDANCIA,
    PROPAGACAO,
    MASCARAMENTO,
    OPM,
    ALTA,
    BAIXA,
];

pub fn is_builtin(name: &str) -> bool {
    BUILTIN_NAMES.contains(&name)
}

/// Builtin style plus designer-declared types.
#[derive(Debug, Clone)]
pub struct TypeRegistry {
    defs: IndexMap<String, TypeDef>,
}

fn decl(name: &str, kind: ValueKind, default: Option<PropertyValue>) -> PropertyDecl {
    PropertyDecl {
        name: name.into(),
        kind,
        default,
        span: SourceSpan::new("<builtin>", 1, 1),
    }
}

fn enum_kind(variants: &[&str]) -> ValueKind {
    ValueKind::Enum(variants.iter().map(|v| v.to_string()).collect())
}

fn builtin(
    name: &str,
    kinds: &[ElementKind],
    extends: &[&str],
    class: PowertypeClass,
    properties: Vec<PropertyDecl>,
) -> TypeDef {
    TypeDef {
        name: name.into(),
        element_kinds: kinds.to_vec(),
        extends: extends.iter().map(|s| s.to_string()).collect(),
        properties,
        powertype_class: Some(class),
        span: SourceSpan::new("<builtin>", 1, 1),
    }
}

/// The predefined OSC types.
pub fn builtin_style() -> TypeRegistry {
    use ElementKind::*;
    use PowertypeClass as C;
    let task = &[Task][..];
    let task_conn = &[Task, Connector][..];
    let defs = vec![
        builtin(
            EXECUTAVEL,
            task,
            &[],
            C::Structure,
            vec![decl("comando", ValueKind::String, None)],
        ),
        builtin(FLUXO, task, &[], C::Structure, vec![]),
        builtin(PIPE, &[Connector], &[], C::Structure, vec![]),
        builtin(TRANSPORTE_ARQUIVO, &[Connector], &[], C::Structure, vec![]),
        builtin(
            MEMORIA_COMPARTILHADA,
            task,
            &[EXECUTAVEL],
            C::TaskParallelism,
            vec![decl("num_threads", ValueKind::Int, None)],
        ),
        builtin(
            MEMORIA_DISTRIBUIDA,
            task,
            &[EXECUTAVEL],
            C::TaskParallelism,
            vec![
                decl("num_nos", ValueKind::Int, None),
                decl("procs_por_no", ValueKind::Int, None),
            ],
        ),
        builtin(
            VARREDURA,
            task,
            &[FLUXO],
            C::DataParallelism,
            vec![decl(
                "modo",
                enum_kind(&["sequencial", "paralelo"]),
                Some(PropertyValue::Enum("paralelo".into())),
            )],
        ),
        builtin(MAPREDUCE, task, &[FLUXO], C::DataParallelism, vec![]),
        builtin(
            BIFURCACAO,
            &[Port],
            &[],
            C::DataParallelism,
            vec![
                decl("diretorio", ValueKind::String, None),
                decl("valores", ValueKind::Set, None),
                decl("repeticoes", ValueKind::Int, None),
            ],
        ),
        builtin(
            JUNCAO,
            &[Port],
            &[],
            C::DataParallelism,
            vec![
                decl("formato", enum_kind(&["include", "merge", "concat"]), None),
                decl("destino", ValueKind::String, None),
            ],
        ),
        builtin(
            LOG,
            task_conn,
            &[],
            C::FaultDetection,
            vec![decl("padroes", ValueKind::Set, None)],
        ),
        builtin(
            MONITORAMENTO,
            task_conn,
            &[],
            C::FaultDetection,
            vec![decl("tempo_limite", ValueKind::Float, None)],
        ),
        builtin(
            REDUNDANCIA,
            task_conn,
            &[],
            C::FaultCorrection,
            vec![
                decl(
                    "num_tentativas",
                    ValueKind::Int,
                    Some(PropertyValue::Int(3)),
                ),
                decl("ignorar", ValueKind::Bool, Some(PropertyValue::Bool(false))),
            ],
        ),
        builtin(PROPAGACAO, &[Connector], &[], C::FaultCorrection, vec![]),
        builtin(
            MASCARAMENTO,
            task,
            &[],
            C::Masking,
            vec![decl(
                "num_copias",
                ValueKind::Int,
                Some(PropertyValue::Int(3)),
            )],
        ),
        builtin(
            OPM,
            &[Task, Connector, Port, Role],
            &[],
            C::Provenance,
            vec![decl("versao", ValueKind::Set, None)],
        ),
        builtin(
            ALTA,
            task,
            &[],
            C::Granularity,
            vec![decl("versao", ValueKind::Set, None)],
        ),
        builtin(
            BAIXA,
            task,
            &[],
            C::Granularity,
            vec![decl("versao", ValueKind::Set, None)],
        ),
    ];
    TypeRegistry {
        defs: defs.into_iter().map(|d| (d.name.clone(), d)).collect(),
    }
}

/// A failure that prevents resolving a model's types.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{span}: {path}: {message}")]
pub struct ResolveError {
    pub path: String,
    pub span: SourceSpan,
    pub message: String,
}

impl TypeRegistry {
    pub fn get(&self, name: &str) -> Option<&TypeDef> {
        self.defs.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.defs.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    /// Builtin style extended with every type declared in `model`,
    /// including those inside nested bodies.
    pub fn with_model(model: &WorkflowModel) -> Result<TypeRegistry, Vec<ResolveError>> {
        let mut reg = builtin_style();
        let mut errors = Vec::new();
        collect_typedefs(model, &mut reg, &mut errors);
        for td in reg.defs.values() {
            for parent in &td.extends {
                match reg.defs.get(parent) {
                    None => errors.push(ResolveError {
                        path: td.name.clone(),
                        span: td.span.clone(),
                        message: format!("unknown type `{parent}`"),
                    }),
                    Some(p) => {
                        if !td.element_kinds.iter().all(|k| p.element_kinds.contains(k)) {
                            errors.push(ResolveError {
                                path: td.name.clone(),
                                span: td.span.clone(),
                                message: format!(
                                    "`{}` cannot extend `{parent}`: element kinds differ",
                                    td.name
                                ),
                            });
                        }
                    }
                }
            }
            for p in &td.properties {
                if let Some(d) = &p.default {
                    if !p.kind.admits(d) {
                        errors.push(ResolveError {
                            path: format!("{}.{}", td.name, p.name),
                            span: p.span.clone(),
                            message: format!("default does not match kind {}", p.kind),
                        });
                    }
                }
            }
        }
        if errors.is_empty() {
            if let Some(cycle) = reg.find_cycle() {
                let td = &reg.defs[&cycle[0]];
                errors.push(ResolveError {
                    path: td.name.clone(),
                    span: td.span.clone(),
                    message: format!("cyclic extends chain: {}", cycle.join(" -> ")),
                });
            }
        }
        if errors.is_empty() {
            Ok(reg)
        } else {
            Err(errors)
        }
    }

    fn find_cycle(&self) -> Option<Vec<String>> {
        fn visit<'a>(
            reg: &'a TypeRegistry,
            name: &'a str,
            stack: &mut Vec<&'a str>,
            done: &mut HashSet<&'a str>,
        ) -> Option<Vec<String>> {
            if let Some(pos) = stack.iter().position(|n| *n == name) {
                let mut cycle: Vec<String> = stack[pos..].iter().map(|s| s.to_string()).collect();
                cycle.push(name.to_string());
                return Some(cycle);
            }
            if done.contains(name) {
                return None;
            }
            stack.push(name);
            if let Some(td) = reg.defs.get(name) {
                for parent in &td.extends {
                    if let Some(c) = visit(reg, parent, stack, done) {
                        return Some(c);
                    }
                }
            }
            stack.pop();
            done.insert(name);
            None
        }
        let mut done = HashSet::new();
        for name in self.defs.keys() {
            if let Some(c) = visit(self, name, &mut Vec::new(), &mut done) {
                return Some(c);
            }
        }
        None
    }

    /// `name` followed by all its ancestors, depth-first, without repeats.
    /// Assumes the extends relation is acyclic.
    pub fn ancestors(&self, name: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut stack = vec![name.to_string()];
        while let Some(n) = stack.pop() {
            if out.contains(&n) {
                continue;
            }
            if let Some(td) = self.defs.get(&n) {
                for parent in td.extends.iter().rev() {
                    stack.push(parent.clone());
                }
            }
            out.push(n);
        }
        out
    }

    pub fn is_subtype(&self, child: &str, ancestor: &str) -> bool {
        self.ancestors(child).iter().any(|a| a == ancestor)
    }
}

fn collect_typedefs(model: &WorkflowModel, reg: &mut TypeRegistry, errors: &mut Vec<ResolveError>) {
    for td in &model.type_defs {
        if reg.defs.contains_key(&td.name) {
            errors.push(ResolveError {
                path: td.name.clone(),
                span: td.span.clone(),
                message: format!("type `{}` is already defined", td.name),
            });
            continue;
        }
        reg.defs.insert(td.name.clone(), td.clone());
    }
    for inst in &model.instances {
        if let Some(body) = &inst.body {
            collect_typedefs(body, reg, errors);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleId {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
    R8,
    R9,
    R10,
    R11,
    R12,
    R13,
    R14,
}

impl RuleId {
    pub const ALL: [RuleId; 14] = [
        RuleId::R1,
        RuleId::R2,
        RuleId::R3,
        RuleId::R4,
        RuleId::R5,
        RuleId::R6,
        RuleId::R7,
        RuleId::R8,
        RuleId::R9,
        RuleId::R10,
        RuleId::R11,
        RuleId::R12,
        RuleId::R13,
        RuleId::R14,
    ];
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub rule_id: RuleId,
    pub severity: Severity,
    pub path: String,
    pub span: SourceSpan,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() {
            "-"
        } else {
            &self.path
        };
        write!(
            f,
            "{} {} {} {} {}",
            self.rule_id, self.severity, path, self.span, self.message
        )
    }
}

/// Registry, resolved elements and rule diagnostics for one model.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub registry: TypeRegistry,
    pub resolved: Vec<ResolvedElement>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Analysis {
    pub fn is_valid(&self) -> bool {
        self.diagnostics.is_empty()
    }

    pub fn element(&self, path: &str) -> Option<&ResolvedElement> {
        self.resolved.iter().find(|r| r.path == path)
    }
}

/// Resolves and validates `model` in one step.
pub fn analyze(model: &WorkflowModel) -> Result<Analysis, Vec<ResolveError>> {
    let registry = TypeRegistry::with_model(model)?;
    let resolved = resolve_types(model, &registry)?;
    let diagnostics = validate(model, &resolved);
    Ok(Analysis {
        registry,
        resolved,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_memory_has_exactly_num_threads() {
        let reg = builtin_style();
        let mc = reg.get(MEMORIA_COMPARTILHADA).unwrap();
        assert_eq!(mc.properties.len(), 1);
        assert_eq!(mc.properties[0].name, "num_threads");
        assert_eq!(mc.properties[0].kind, ValueKind::Int);
    }

    #[test]
    fn join_formats() {
        let reg = builtin_style();
        let formato = reg.get(JUNCAO).unwrap().property("formato").unwrap();
        assert_eq!(
            formato.kind,
            ValueKind::Enum(vec!["include".into(), "merge".into(), "concat".into()])
        );
    }

    #[test]
    fn builtin_names_are_distinct_and_registered() {
        let reg = builtin_style();
        let unique: HashSet<_> = BUILTIN_NAMES.iter().collect();
        assert_eq!(unique.len(), BUILTIN_NAMES.len());
        assert_eq!(reg.len(), BUILTIN_NAMES.len());
        for n in BUILTIN_NAMES {
            assert!(reg.get(n).is_some(), "{n}");
        }
    }

    #[test]
    fn ancestors_follow_extends() {
        let reg = builtin_style();
        assert_eq!(
            reg.ancestors(MEMORIA_COMPARTILHADA),
            [MEMORIA_COMPARTILHADA, EXECUTAVEL]
        );
        assert!(reg.is_subtype(VARREDURA, FLUXO));
        assert!(!reg.is_subtype(VARREDURA, EXECUTAVEL));
    }

    #[test]
    fn extends_cycle_is_rejected() {
        let m = crate::parser::parse_workflow(
            "Family W = { Component Type A extends B = { } Component Type B extends A = { } }",
            "w.osc",
        )
        .unwrap();
        let errs = TypeRegistry::with_model(&m).unwrap_err();
        assert!(errs[0].message.contains("cyclic"), "{:?}", errs);
    }

    #[test]
    fn extends_across_kinds_is_rejected() {
        let m = crate::parser::parse_workflow(
            "Family W = { Port Type P extends Executavel = { } }",
            "w.osc",
        )
        .unwrap();
        let errs = TypeRegistry::with_model(&m).unwrap_err();
        assert!(errs[0].message.contains("element kinds differ"));
    }
}
