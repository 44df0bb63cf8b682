//! Abstract syntax shared by every phase: type definitions, element
//! instances with their ports/roles, attachments and nested flow bodies.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Position of a construct in its source file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceSpan {
    pub file: String,
    pub line: u32,
    pub column: u32,
}

impl SourceSpan {
    pub fn new(file: impl Into<String>, line: u32, column: u32) -> Self {
        Self {
            file: file.into(),
            line: line.max(1),
            column: column.max(1),
        }
    }
}

impl Default for SourceSpan {
    fn default() -> Self {
        Self::new("", 1, 1)
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Task,
    Connector,
    Port,
    Role,
}

impl ElementKind {
    /// Keyword used in the concrete syntax.
    pub fn keyword(self) -> &'static str {
        match self {
            ElementKind::Task => "Component",
            ElementKind::Connector => "Connector",
            ElementKind::Port => "Port",
            ElementKind::Role => "Role",
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ElementKind::Task => "task",
            ElementKind::Connector => "connector",
            ElementKind::Port => "port",
            ElementKind::Role => "role",
        };
        f.write_str(s)
    }
}

/// Classifier grouping the builtin types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowertypeClass {
    Structure,
    TaskParallelism,
    DataParallelism,
    FaultDetection,
    FaultCorrection,
    Masking,
    Provenance,
    Granularity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "variants")]
pub enum ValueKind {
    Int,
    Float,
    String,
    Bool,
    Set,
    Enum(Vec<String>),
}

impl ValueKind {
    pub fn keyword(&self) -> &'static str {
        match self {
            ValueKind::Int => "int",
            ValueKind::Float => "float",
            ValueKind::String => "string",
            ValueKind::Bool => "bool",
            ValueKind::Set => "set",
            ValueKind::Enum(_) => "enum",
        }
    }

    /// Whether `value` is acceptable for a property of this kind. Integers
    /// are accepted where a float is declared.
    pub fn admits(&self, value: &PropertyValue) -> bool {
        match (self, value) {
            (ValueKind::Int, PropertyValue::Int(_)) => true,
            (ValueKind::Float, PropertyValue::Float(_) | PropertyValue::Int(_)) => true,
            (ValueKind::String, PropertyValue::Str(_)) => true,
            (ValueKind::Bool, PropertyValue::Bool(_)) => true,
            (ValueKind::Set, PropertyValue::Set(_)) => true,
            (ValueKind::Enum(variants), PropertyValue::Enum(tok)) => variants.contains(tok),
            _ => false,
        }
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueKind::Enum(variants) => write!(f, "enum {{{}}}", variants.join(", ")),
            other => f.write_str(other.keyword()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum PropertyValue {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    Set(Vec<String>),
    Enum(String),
}

impl PropertyValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            PropertyValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            PropertyValue::Float(v) => Some(*v),
            PropertyValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            PropertyValue::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            PropertyValue::Str(s) | PropertyValue::Enum(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_set(&self) -> Option<&[String]> {
        match self {
            PropertyValue::Set(items) => Some(items),
            _ => None,
        }
    }

    /// Plain-text form used for command template substitution.
    pub fn to_plain(&self) -> String {
        match self {
            PropertyValue::Int(v) => v.to_string(),
            PropertyValue::Float(v) => v.to_string(),
            PropertyValue::Str(s) | PropertyValue::Enum(s) => s.clone(),
            PropertyValue::Bool(b) => b.to_string(),
            PropertyValue::Set(items) => items.join(" "),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyDecl {
    pub name: String,
    pub kind: ValueKind,
    pub default: Option<PropertyValue>,
    pub span: SourceSpan,
}

/// `Property name [: kind] = value;` inside an instance or interface.
/// `name` may be qualified (`BaixaGranularidade.versao`) to target the copy
/// declared by one assigned type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyAssign {
    pub name: String,
    pub annotation: Option<String>,
    pub value: PropertyValue,
    pub span: SourceSpan,
}

impl PropertyAssign {
    /// Splits a qualified name into `(type, property)`.
    pub fn qualifier(&self) -> Option<(&str, &str)> {
        self.name.split_once('.')
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeDef {
    pub name: String,
    /// Element kinds the type may be assigned to. User types admit exactly
    /// the kind they were declared with.
    pub element_kinds: Vec<ElementKind>,
    pub extends: Vec<String>,
    pub properties: Vec<PropertyDecl>,
    pub powertype_class: Option<PowertypeClass>,
    pub span: SourceSpan,
}

impl TypeDef {
    pub fn property(&self, name: &str) -> Option<&PropertyDecl> {
        self.properties.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Input,
    Output,
    Source,
    Destination,
}

impl Direction {
    pub fn keyword(self) -> &'static str {
        match self {
            Direction::Input => "in",
            Direction::Output => "out",
            Direction::Source => "source",
            Direction::Destination => "destination",
        }
    }

    pub fn is_producing(self) -> bool {
        matches!(self, Direction::Output | Direction::Source)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfacePoint {
    pub name: String,
    pub kind: ElementKind,
    pub direction: Direction,
    pub assigned_types: Vec<String>,
    pub properties: Vec<PropertyAssign>,
    pub span: SourceSpan,
}

impl InterfacePoint {
    pub fn property(&self, name: &str) -> Option<&PropertyValue> {
        self.properties
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementInstance {
    pub name: String,
    pub kind: ElementKind,
    pub assigned_types: Vec<String>,
    pub properties: Vec<PropertyAssign>,
    pub interfaces: Vec<InterfacePoint>,
    pub body: Option<Box<WorkflowModel>>,
    pub span: SourceSpan,
}

impl ElementInstance {
    pub fn interface(&self, name: &str) -> Option<&InterfacePoint> {
        self.interfaces.iter().find(|i| i.name == name)
    }

    pub fn property(&self, name: &str) -> Option<&PropertyValue> {
        self.properties
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachmentOp {
    /// Task output port feeds a connector source role.
    To,
    /// Task input port receives from a connector destination role.
    From,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependencyKind {
    Control,
    #[default]
    Data,
}

/// One side of an attachment: `instance.point`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EndpointRef {
    pub instance: String,
    pub point: String,
}

impl fmt::Display for EndpointRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.instance, self.point)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub task_ref: EndpointRef,
    pub op: AttachmentOp,
    pub connector_ref: EndpointRef,
    pub dependency_kind: DependencyKind,
    pub span: SourceSpan,
}

impl Attachment {
    pub fn touches(&self, instance: &str) -> bool {
        self.task_ref.instance == instance || self.connector_ref.instance == instance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowModel {
    pub name: String,
    pub type_defs: Vec<TypeDef>,
    pub instances: Vec<ElementInstance>,
    pub attachments: Vec<Attachment>,
    pub span: SourceSpan,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown instance `{0}`")]
    NotFound(String),
}

impl WorkflowModel {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            type_defs: Vec::new(),
            instances: Vec::new(),
            attachments: Vec::new(),
            span: SourceSpan::default(),
        }
    }

    /// Finds an instance by name, descending into flow bodies for dotted
    /// paths (`flow.task`).
    pub fn lookup_instance(&self, path: &str) -> Option<&ElementInstance> {
        let mut segments = path.split('.');
        let first = segments.next()?;
        let mut current = self.instances.iter().find(|i| i.name == first)?;
        for segment in segments {
            current = current
                .body
                .as_ref()?
                .instances
                .iter()
                .find(|i| i.name == segment)?;
        }
        Some(current)
    }

    /// All attachments at this level touching `instance`, in declaration order.
    pub fn collect_attachments(&self, instance: &str) -> Result<Vec<&Attachment>, ModelError> {
        if !self.instances.iter().any(|i| i.name == instance) {
            return Err(ModelError::NotFound(instance.to_string()));
        }
        Ok(self
            .attachments
            .iter()
            .filter(|a| a.touches(instance))
            .collect())
    }

    /// Every instance in this model and in nested bodies, paired with its
    /// dotted path. Parents precede their children.
    pub fn walk(&self) -> Vec<(String, &ElementInstance)> {
        let mut out = Vec::new();
        self.walk_into("", &mut out);
        out
    }

    fn walk_into<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a ElementInstance)>) {
        for inst in &self.instances {
            let path = join_path(prefix, &inst.name);
            out.push((path.clone(), inst));
            if let Some(body) = &inst.body {
                body.walk_into(&path, out);
            }
        }
    }

    /// Copy with every span reset, for structural comparison.
    pub fn without_spans(&self) -> WorkflowModel {
        let mut m = self.clone();
        m.erase_spans();
        m
    }

    fn erase_spans(&mut self) {
        self.span = SourceSpan::default();
        for td in &mut self.type_defs {
            td.span = SourceSpan::default();
            for p in &mut td.properties {
                p.span = SourceSpan::default();
            }
        }
        for inst in &mut self.instances {
            inst.span = SourceSpan::default();
            for p in &mut inst.properties {
                p.span = SourceSpan::default();
            }
            for itf in &mut inst.interfaces {
                itf.span = SourceSpan::default();
                for p in &mut itf.properties {
                    p.span = SourceSpan::default();
                }
            }
            if let Some(body) = &mut inst.body {
                body.erase_spans();
            }
        }
        for a in &mut self.attachments {
            a.span = SourceSpan::default();
        }
    }
}

pub fn join_path(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(name: &str) -> ElementInstance {
        ElementInstance {
            name: name.into(),
            kind: ElementKind::Task,
            assigned_types: vec!["Executavel".into()],
            properties: vec![],
            interfaces: vec![],
            body: None,
            span: SourceSpan::default(),
        }
    }

    fn attach(task: &str, port: &str, op: AttachmentOp, conn: &str, role: &str) -> Attachment {
        Attachment {
            task_ref: EndpointRef {
                instance: task.into(),
                point: port.into(),
            },
            op,
            connector_ref: EndpointRef {
                instance: conn.into(),
                point: role.into(),
            },
            dependency_kind: DependencyKind::Data,
            span: SourceSpan::default(),
        }
    }

    #[test]
    fn lookup_top_level_and_missing() {
        let mut m = WorkflowModel::new("W");
        assert!(m.lookup_instance("psipred").is_none());
        m.instances.push(task("psipred"));
        assert_eq!(m.lookup_instance("psipred").unwrap().name, "psipred");
        assert!(m.lookup_instance("psipred.x").is_none());
    }

    #[test]
    fn lookup_nested_path_matches_exhaustive_walk() {
        let mut inner = WorkflowModel::new("body");
        inner.instances.push(task("T"));
        let mut flow = task("F");
        flow.assigned_types = vec!["Fluxo".into()];
        flow.body = Some(Box::new(inner));
        let mut m = WorkflowModel::new("W");
        m.instances.push(flow);
        m.instances.push(task("G"));

        let walked = m.walk();
        let paths: Vec<_> = walked.iter().map(|(p, _)| p.as_str()).collect();
        assert_eq!(paths, ["F", "F.T", "G"]);
        for (path, inst) in &walked {
            assert_eq!(m.lookup_instance(path), Some(*inst));
        }
    }

    #[test]
    fn collect_attachments_chain() {
        let mut m = WorkflowModel::new("W");
        m.instances.push(task("A"));
        m.instances.push(task("B"));
        m.instances.push(task("Z"));
        let mut c = task("c");
        c.kind = ElementKind::Connector;
        m.instances.push(c);
        m.attachments
            .push(attach("A", "out", AttachmentOp::To, "c", "src"));
        m.attachments
            .push(attach("B", "in", AttachmentOp::From, "c", "dst"));
        assert_eq!(m.collect_attachments("c").unwrap().len(), 2);
        assert!(m.collect_attachments("Z").unwrap().is_empty());
        assert_eq!(
            m.collect_attachments("nope"),
            Err(ModelError::NotFound("nope".into()))
        );
    }

    #[test]
    fn float_kind_admits_integers() {
        assert!(ValueKind::Float.admits(&PropertyValue::Int(3)));
        assert!(!ValueKind::Int.admits(&PropertyValue::Float(3.0)));
        let e = ValueKind::Enum(vec!["a".into(), "b".into()]);
        assert!(e.admits(&PropertyValue::Enum("a".into())));
        assert!(!e.admits(&PropertyValue::Enum("c".into())));
    }
}
