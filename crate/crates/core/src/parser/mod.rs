//! Textual OSC language: an Acme-flavoured syntax with `Family` blocks,
//! component/connector instances, typed ports and roles, and attachments.
//!
//! ```text
//! Family ProFrager = {
//!   Component psipred : Executavel, Log, RedundanciaTemporal = {
//!     Property num_tentativas : int = 3;
//!     Port out ss2 = { }
//!   }
//!   Connector if3 : Propagacao = {
//!     Role source a = { }
//!     Role destination d = { }
//!   }
//!   Attachment psipred.ss2 to if3.a;
//! }
//! ```

mod lexer;
mod render;

use std::collections::HashSet;

use thiserror::Error;

use crate::model::{
    Attachment, AttachmentOp, DependencyKind, Direction, ElementInstance, ElementKind, EndpointRef,
    InterfacePoint, PropertyAssign, PropertyDecl, PropertyValue, SourceSpan, TypeDef, ValueKind,
    WorkflowModel,
};
use crate::typesystem;
use lexer::{Tok, Token};

pub use render::render_workflow;

/// First syntax or naming error found in a source file.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{span}: expected {expected}, found {found}")]
pub struct ParseError {
    pub span: SourceSpan,
    pub expected: String,
    pub found: String,
}

pub fn parse_workflow(source: &str, file: &str) -> Result<WorkflowModel, ParseError> {
    let tokens = lexer::tokenize(source, file)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        file: file.to_string(),
    };
    let model = parser.family()?;
    parser.expect_eof()?;
    check_names(&model)?;
    Ok(model)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    file: String,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let idx = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[idx].tok
    }

    fn span(&self) -> SourceSpan {
        let t = &self.tokens[self.pos];
        SourceSpan::new(self.file.clone(), t.line, t.column)
    }

    fn bump(&mut self) -> Tok {
        let tok = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn error(&self, expected: impl Into<String>) -> ParseError {
        ParseError {
            span: self.span(),
            expected: expected.into(),
            found: self.peek().describe(),
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(tok.describe()))
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.at_keyword(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("`{kw}`")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(what)),
        }
    }

    fn ident_list(&mut self, what: &str) -> Result<Vec<String>, ParseError> {
        let mut names = vec![self.ident(what)?];
        while *self.peek() == Tok::Comma {
            self.bump();
            names.push(self.ident(what)?);
        }
        Ok(names)
    }

    fn optional_semi(&mut self) {
        if *self.peek() == Tok::Semi {
            self.bump();
        }
    }

    fn expect_eof(&self) -> Result<(), ParseError> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            Err(self.error("end of file"))
        }
    }

    fn family(&mut self) -> Result<WorkflowModel, ParseError> {
        let span = self.span();
        self.keyword("Family")?;
        let name = self.ident("family name")?;
        self.expect(Tok::Eq)?;
        self.expect(Tok::LBrace)?;
        let mut model = WorkflowModel::new(name);
        model.span = span;
        loop {
            match self.peek().clone() {
                Tok::RBrace => {
                    self.bump();
                    break;
                }
                Tok::Ident(kw) => match kw.as_str() {
                    "Component" | "Connector" | "Port" | "Role"
                        if matches!(self.peek_at(1), Tok::Ident(t) if t == "Type")
                            && matches!(self.peek_at(2), Tok::Ident(_)) =>
                    {
                        let td = self.typedef()?;
                        model.type_defs.push(td);
                    }
                    "Component" | "Connector" => {
                        let inst = self.instance()?;
                        model.instances.push(inst);
                    }
                    "Attachment" => {
                        let a = self.attachment()?;
                        model.attachments.push(a);
                    }
                    _ => return Err(self.error("`Component`, `Connector`, `Attachment` or `}`")),
                },
                _ => return Err(self.error("`Component`, `Connector`, `Attachment` or `}`")),
            }
        }
        self.optional_semi();
        Ok(model)
    }

    fn element_kind(&mut self) -> Result<ElementKind, ParseError> {
        let kind = match self.peek() {
            Tok::Ident(s) if s == "Component" => ElementKind::Task,
            Tok::Ident(s) if s == "Connector" => ElementKind::Connector,
            Tok::Ident(s) if s == "Port" => ElementKind::Port,
            Tok::Ident(s) if s == "Role" => ElementKind::Role,
            _ => return Err(self.error("element keyword")),
        };
        self.bump();
        Ok(kind)
    }

    fn typedef(&mut self) -> Result<TypeDef, ParseError> {
        let span = self.span();
        let kind = self.element_kind()?;
        self.keyword("Type")?;
        let name = self.ident("type name")?;
        let extends = if self.at_keyword("extends") {
            self.bump();
            self.ident_list("type name")?
        } else {
            Vec::new()
        };
        self.expect(Tok::Eq)?;
        self.expect(Tok::LBrace)?;
        let mut properties = Vec::new();
        while *self.peek() != Tok::RBrace {
            properties.push(self.propdecl()?);
        }
        self.bump();
        self.optional_semi();
        Ok(TypeDef {
            name,
            element_kinds: vec![kind],
            extends,
            properties,
            powertype_class: None,
            span,
        })
    }

    fn propdecl(&mut self) -> Result<PropertyDecl, ParseError> {
        let span = self.span();
        self.keyword("Property")?;
        let name = self.ident("property name")?;
        self.expect(Tok::Colon)?;
        let kind = self.value_kind()?;
        let default = if *self.peek() == Tok::Eq {
            self.bump();
            Some(self.value()?)
        } else {
            None
        };
        self.expect(Tok::Semi)?;
        Ok(PropertyDecl {
            name,
            kind,
            default,
            span,
        })
    }

    fn value_kind(&mut self) -> Result<ValueKind, ParseError> {
        let kw = self.ident("property kind")?;
        Ok(match kw.as_str() {
            "int" => ValueKind::Int,
            "float" => ValueKind::Float,
            "string" => ValueKind::String,
            "bool" => ValueKind::Bool,
            "set" => ValueKind::Set,
            "enum" => {
                self.expect(Tok::LBrace)?;
                let variants = self.ident_list("enum variant")?;
                self.expect(Tok::RBrace)?;
                ValueKind::Enum(variants)
            }
            _ => {
                self.pos -= 1;
                return Err(self.error("one of int, float, string, bool, set, enum"));
            }
        })
    }

    fn value(&mut self) -> Result<PropertyValue, ParseError> {
        let v = match self.peek().clone() {
            Tok::Int(v) => PropertyValue::Int(v),
            Tok::Float(v) => PropertyValue::Float(v),
            Tok::Str(s) => PropertyValue::Str(s),
            Tok::Ident(s) if s == "true" => PropertyValue::Bool(true),
            Tok::Ident(s) if s == "false" => PropertyValue::Bool(false),
            Tok::Ident(s) => PropertyValue::Enum(s),
            Tok::LBrace => {
                self.bump();
                let mut items = Vec::new();
                if *self.peek() != Tok::RBrace {
                    loop {
                        match self.peek().clone() {
                            Tok::Str(s) => {
                                self.bump();
                                items.push(s);
                            }
                            _ => return Err(self.error("string")),
                        }
                        if *self.peek() == Tok::Comma {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::RBrace)?;
                return Ok(PropertyValue::Set(items));
            }
            _ => return Err(self.error("property value")),
        };
        self.bump();
        Ok(v)
    }

    fn propassign(&mut self) -> Result<PropertyAssign, ParseError> {
        let span = self.span();
        self.keyword("Property")?;
        let mut name = self.ident("property name")?;
        if *self.peek() == Tok::Dot {
            self.bump();
            let inner = self.ident("property name")?;
            name = format!("{name}.{inner}");
        }
        let annotation = if *self.peek() == Tok::Colon {
            self.bump();
            let kw = self.ident("property kind")?;
            if !matches!(
                kw.as_str(),
                "int" | "float" | "string" | "bool" | "set" | "enum"
            ) {
                self.pos -= 1;
                return Err(self.error("one of int, float, string, bool, set, enum"));
            }
            Some(kw)
        } else {
            None
        };
        self.expect(Tok::Eq)?;
        let value_span = self.span();
        let value = self.value()?;
        if let Some(kw) = &annotation {
            let ok = matches!(
                (kw.as_str(), &value),
                ("int", PropertyValue::Int(_))
                    | ("float", PropertyValue::Float(_) | PropertyValue::Int(_))
                    | ("string", PropertyValue::Str(_))
                    | ("bool", PropertyValue::Bool(_))
                    | ("set", PropertyValue::Set(_))
                    | ("enum", PropertyValue::Enum(_))
            );
            if !ok {
                return Err(ParseError {
                    span: value_span,
                    expected: format!("{kw} value"),
                    found: describe_value(&value),
                });
            }
        }
        self.expect(Tok::Semi)?;
        Ok(PropertyAssign {
            name,
            annotation,
            value,
            span,
        })
    }

    fn instance(&mut self) -> Result<ElementInstance, ParseError> {
        let span = self.span();
        let kind = self.element_kind()?;
        let name = self.ident("instance name")?;
        self.expect(Tok::Colon)?;
        let assigned_types = self.ident_list("type name")?;
        self.expect(Tok::Eq)?;
        self.expect(Tok::LBrace)?;
        let mut inst = ElementInstance {
            name,
            kind,
            assigned_types,
            properties: Vec::new(),
            interfaces: Vec::new(),
            body: None,
            span,
        };
        loop {
            match self.peek() {
                Tok::RBrace => {
                    self.bump();
                    break;
                }
                Tok::Ident(s) if s == "Property" => {
                    let p = self.propassign()?;
                    inst.properties.push(p);
                }
                Tok::Ident(s) if s == "Port" || s == "Role" => {
                    let itf = self.interface()?;
                    inst.interfaces.push(itf);
                }
                Tok::Ident(s) if s == "Family" => {
                    if inst.body.is_some() {
                        return Err(self.error("at most one nested `Family`"));
                    }
                    let body = self.family()?;
                    inst.body = Some(Box::new(body));
                }
                _ => return Err(self.error("`Property`, `Port`, `Role`, `Family` or `}`")),
            }
        }
        self.optional_semi();
        Ok(inst)
    }

    fn interface(&mut self) -> Result<InterfacePoint, ParseError> {
        let span = self.span();
        let kind = self.element_kind()?;
        let direction = match (kind, self.peek()) {
            (ElementKind::Port, Tok::Ident(s)) if s == "in" => Direction::Input,
            (ElementKind::Port, Tok::Ident(s)) if s == "out" => Direction::Output,
            (ElementKind::Role, Tok::Ident(s)) if s == "source" => Direction::Source,
            (ElementKind::Role, Tok::Ident(s)) if s == "destination" => Direction::Destination,
            (ElementKind::Port, _) => return Err(self.error("`in` or `out`")),
            _ => return Err(self.error("`source` or `destination`")),
        };
        self.bump();
        let name = self.ident("interface name")?;
        let assigned_types = if *self.peek() == Tok::Colon {
            self.bump();
            self.ident_list("type name")?
        } else {
            Vec::new()
        };
        self.expect(Tok::Eq)?;
        self.expect(Tok::LBrace)?;
        let mut properties = Vec::new();
        while *self.peek() != Tok::RBrace {
            properties.push(self.propassign()?);
        }
        self.bump();
        self.optional_semi();
        Ok(InterfacePoint {
            name,
            kind,
            direction,
            assigned_types,
            properties,
            span,
        })
    }

    fn endpoint(&mut self) -> Result<EndpointRef, ParseError> {
        let instance = self.ident("instance name")?;
        self.expect(Tok::Dot)?;
        let point = self.ident("port or role name")?;
        Ok(EndpointRef { instance, point })
    }

    fn attachment(&mut self) -> Result<Attachment, ParseError> {
        let span = self.span();
        self.keyword("Attachment")?;
        let task_ref = self.endpoint()?;
        let op = match self.peek() {
            Tok::Ident(s) if s == "to" => AttachmentOp::To,
            Tok::Ident(s) if s == "from" => AttachmentOp::From,
            _ => return Err(self.error("`to` or `from`")),
        };
        self.bump();
        let connector_ref = self.endpoint()?;
        let dependency_kind = match self.peek() {
            Tok::Ident(s) if s == "control" => {
                self.bump();
                DependencyKind::Control
            }
            Tok::Ident(s) if s == "data" => {
                self.bump();
                DependencyKind::Data
            }
            _ => DependencyKind::Data,
        };
        self.expect(Tok::Semi)?;
        Ok(Attachment {
            task_ref,
            op,
            connector_ref,
            dependency_kind,
            span,
        })
    }
}

fn describe_value(v: &PropertyValue) -> String {
    match v {
        PropertyValue::Int(i) => format!("`{i}`"),
        PropertyValue::Float(f) => format!("`{f:?}`"),
        PropertyValue::Str(s) => format!("string {s:?}"),
        PropertyValue::Bool(b) => format!("`{b}`"),
        PropertyValue::Set(_) => "set".into(),
        PropertyValue::Enum(t) => format!("`{t}`"),
    }
}

fn name_error(
    span: &SourceSpan,
    expected: impl Into<String>,
    found: impl Into<String>,
) -> ParseError {
    ParseError {
        span: span.clone(),
        expected: expected.into(),
        found: found.into(),
    }
}

/// Uniqueness and reference-integrity checks over a freshly parsed model.
fn check_names(model: &WorkflowModel) -> Result<(), ParseError> {
    let mut type_names = HashSet::new();
    check_typedefs(model, &mut type_names)?;
    check_level(model, None)
}

fn check_typedefs<'a>(
    model: &'a WorkflowModel,
    seen: &mut HashSet<&'a str>,
) -> Result<(), ParseError> {
    for td in &model.type_defs {
        if typesystem::is_builtin(&td.name) {
            return Err(name_error(
                &td.span,
                "type name not used by a builtin type",
                format!("`{}`", td.name),
            ));
        }
        if !seen.insert(&td.name) {
            return Err(name_error(
                &td.span,
                "unique type name",
                format!("duplicate `{}`", td.name),
            ));
        }
        let mut props = HashSet::new();
        for p in &td.properties {
            if !props.insert(&p.name) {
                return Err(name_error(
                    &p.span,
                    "unique property name",
                    format!("duplicate `{}`", p.name),
                ));
            }
        }
    }
    for inst in &model.instances {
        if let Some(body) = &inst.body {
            check_typedefs(body, seen)?;
        }
    }
    Ok(())
}

fn check_props(props: &[PropertyAssign]) -> Result<(), ParseError> {
    let mut seen = HashSet::new();
    for p in props {
        if !seen.insert(&p.name) {
            return Err(name_error(
                &p.span,
                "unique property assignment",
                format!("duplicate `{}`", p.name),
            ));
        }
    }
    Ok(())
}

fn check_level(
    model: &WorkflowModel,
    enclosing: Option<&ElementInstance>,
) -> Result<(), ParseError> {
    let mut names = HashSet::new();
    for inst in &model.instances {
        if !names.insert(inst.name.as_str()) {
            return Err(name_error(
                &inst.span,
                "unique instance name",
                format!("duplicate `{}`", inst.name),
            ));
        }
        if enclosing.is_some_and(|e| e.name == inst.name) {
            return Err(name_error(
                &inst.span,
                "instance name distinct from the enclosing flow",
                format!("`{}`", inst.name),
            ));
        }
        check_props(&inst.properties)?;
        let mut itf_names = HashSet::new();
        for itf in &inst.interfaces {
            if !itf_names.insert(itf.name.as_str()) {
                return Err(name_error(
                    &itf.span,
                    "unique interface name",
                    format!("duplicate `{}`", itf.name),
                ));
            }
            let expected_kind = match inst.kind {
                ElementKind::Connector => ElementKind::Role,
                _ => ElementKind::Port,
            };
            if itf.kind != expected_kind {
                return Err(name_error(
                    &itf.span,
                    format!("`{}` on a {}", expected_kind.keyword(), inst.kind),
                    format!("`{}`", itf.kind.keyword()),
                ));
            }
            check_props(&itf.properties)?;
        }
        if let Some(body) = &inst.body {
            check_level(body, Some(inst))?;
        }
    }
    for a in &model.attachments {
        for end in [&a.task_ref, &a.connector_ref] {
            let owner = model
                .instances
                .iter()
                .find(|i| i.name == end.instance)
                .or_else(|| enclosing.filter(|e| e.name == end.instance));
            let Some(owner) = owner else {
                return Err(name_error(
                    &a.span,
                    "declared instance",
                    format!("`{}`", end.instance),
                ));
            };
            if owner.interface(&end.point).is_none() {
                return Err(name_error(
                    &a.span,
                    format!("port or role of `{}`", owner.name),
                    format!("`{}`", end.point),
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const PSIPRED: &str = r#"
Family ProFrager = {
  Component psipred : Executavel, Log, RedundanciaTemporal, OPM = {
    Property num_tentativas : int = 3;
    Property ignorar : bool = true;
    Property versao : set = {"orange", "black"};
    Port out ss2 : OPM = { Property versao : set = {"orange", "black"}; }
  }
}
"#;

    #[test]
    fn psipred_instance_has_four_types_and_properties() {
        let m = parse_workflow(PSIPRED, "pf.osc").unwrap();
        let p = m.lookup_instance("psipred").unwrap();
        assert_eq!(
            p.assigned_types,
            ["Executavel", "Log", "RedundanciaTemporal", "OPM"]
        );
        assert_eq!(p.property("num_tentativas"), Some(&PropertyValue::Int(3)));
        assert_eq!(p.property("ignorar"), Some(&PropertyValue::Bool(true)));
        assert_eq!(
            p.property("versao"),
            Some(&PropertyValue::Set(vec!["orange".into(), "black".into()]))
        );
        assert_eq!(p.interfaces[0].direction, Direction::Output);
    }

    #[test]
    fn empty_family() {
        let m = parse_workflow("Family W = { }", "w.osc").unwrap();
        assert_eq!(m.name, "W");
        assert!(m.instances.is_empty());
    }

    #[test]
    fn unbalanced_brace_reports_line() {
        let src = "Family W = {\n  Component a : Executavel = {\n    Property x : int = 1;\n";
        let e = parse_workflow(src, "w.osc").unwrap_err();
        assert_eq!(e.span.line, 4);
        assert!(e.to_string().starts_with("w.osc:4:1: expected"));
    }

    #[test]
    fn duplicate_instance_is_rejected() {
        let src = "Family W = { Component a : Executavel = { } Component a : Executavel = { } }";
        let e = parse_workflow(src, "w.osc").unwrap_err();
        assert!(e.found.contains("duplicate `a`"), "{e}");
    }

    #[test]
    fn dangling_attachment_is_rejected() {
        let src =
            "Family W = { Component a : Executavel = { Port out o = { } } Attachment a.o to c.r; }";
        let e = parse_workflow(src, "w.osc").unwrap_err();
        assert_eq!(e.expected, "declared instance");
    }

    #[test]
    fn builtin_type_name_cannot_be_redeclared() {
        let e = parse_workflow("Family W = { Component Type Log = { } }", "w.osc").unwrap_err();
        assert!(e.expected.contains("builtin"));
    }

    #[test]
    fn annotation_must_match_value() {
        let e = parse_workflow(
            "Family W = { Component a : Executavel = { Property n : int = \"x\"; } }",
            "w.osc",
        )
        .unwrap_err();
        assert_eq!(e.expected, "int value");
    }

    #[test]
    fn role_on_component_is_rejected() {
        let e = parse_workflow(
            "Family W = { Component a : Executavel = { Role source r = { } } }",
            "w.osc",
        )
        .unwrap_err();
        assert_eq!(e.found, "`Role`");
    }

    #[test]
    fn body_attachment_may_reference_enclosing_flow() {
        let src = r#"
Family W = {
  Component f : Fluxo = {
    Port in x = { }
    Family body = {
      Component t : Executavel = { Port in i = { } }
      Connector c : Pipe = { Role source s = { } Role destination d = { } }
      Attachment f.x to c.s;
      Attachment t.i from c.d;
    }
  }
}"#;
        let m = parse_workflow(src, "w.osc").unwrap();
        assert_eq!(
            m.lookup_instance("f.c").unwrap().kind,
            ElementKind::Connector
        );
    }

    #[test]
    fn parsing_is_deterministic() {
        assert_eq!(
            parse_workflow(PSIPRED, "a").unwrap(),
            parse_workflow(PSIPRED, "a").unwrap()
        );
    }
}
