use std::fmt::Write;

use crate::model::{
    AttachmentOp, DependencyKind, ElementInstance, InterfacePoint, PropertyAssign, PropertyValue,
    TypeDef, WorkflowModel,
};

/// Canonical text for a model. Type definitions come first, then
/// instances, then attachments, each group in declaration order.
pub fn render_workflow(model: &WorkflowModel) -> String {
    let mut out = String::new();
    render_family(model, 0, &mut out);
    out
}

fn indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn render_family(model: &WorkflowModel, level: usize, out: &mut String) {
    indent(level, out);
    let _ = writeln!(out, "Family {} = {{", model.name);
    for td in &model.type_defs {
        render_typedef(td, level + 1, out);
    }
    for inst in &model.instances {
        render_instance(inst, level + 1, out);
    }
    for a in &model.attachments {
        indent(level + 1, out);
        let op = match a.op {
            AttachmentOp::To => "to",
            AttachmentOp::From => "from",
        };
        let dep = match a.dependency_kind {
            DependencyKind::Control => " control",
            DependencyKind::Data => "",
        };
        let _ = writeln!(
            out,
            "Attachment {} {op} {}{dep};",
            a.task_ref, a.connector_ref
        );
    }
    indent(level, out);
    out.push_str("}\n");
}

fn render_typedef(td: &TypeDef, level: usize, out: &mut String) {
    indent(level, out);
    let kw = td
        .element_kinds
        .first()
        .map(|k| k.keyword())
        .unwrap_or("Component");
    let _ = write!(out, "{kw} Type {}", td.name);
    if !td.extends.is_empty() {
        let _ = write!(out, " extends {}", td.extends.join(", "));
    }
    out.push_str(" = {\n");
    for p in &td.properties {
        indent(level + 1, out);
        let _ = write!(out, "Property {} : {}", p.name, p.kind);
        if let Some(default) = &p.default {
            out.push_str(" = ");
            render_value(default, out);
        }
        out.push_str(";\n");
    }
    indent(level, out);
    out.push_str("}\n");
}

fn render_instance(inst: &ElementInstance, level: usize, out: &mut String) {
    indent(level, out);
    let _ = writeln!(
        out,
        "{} {} : {} = {{",
        inst.kind.keyword(),
        inst.name,
        inst.assigned_types.join(", ")
    );
    for p in &inst.properties {
        render_assign(p, level + 1, out);
    }
    for itf in &inst.interfaces {
        render_interface(itf, level + 1, out);
    }
    if let Some(body) = &inst.body {
        render_family(body, level + 1, out);
    }
    indent(level, out);
    out.push_str("}\n");
}

fn render_interface(itf: &InterfacePoint, level: usize, out: &mut String) {
    indent(level, out);
    let _ = write!(
        out,
        "{} {} {}",
        itf.kind.keyword(),
        itf.direction.keyword(),
        itf.name
    );
    if !itf.assigned_types.is_empty() {
        let _ = write!(out, " : {}", itf.assigned_types.join(", "));
    }
    if itf.properties.is_empty() {
        out.push_str(" = { }\n");
        return;
    }
    out.push_str(" = {\n");
    for p in &itf.properties {
        render_assign(p, level + 1, out);
    }
    indent(level, out);
    out.push_str("}\n");
}

fn render_assign(p: &PropertyAssign, level: usize, out: &mut String) {
    indent(level, out);
    let _ = write!(out, "Property {}", p.name);
    if let Some(kw) = &p.annotation {
        let _ = write!(out, " : {kw}");
    }
    out.push_str(" = ");
    render_value(&p.value, out);
    out.push_str(";\n");
}

fn quote(s: &str, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
}

fn render_value(v: &PropertyValue, out: &mut String) {
    match v {
        PropertyValue::Int(i) => {
            let _ = write!(out, "{i}");
        }
        PropertyValue::Float(f) => {
            let _ = write!(out, "{f:?}");
        }
        PropertyValue::Str(s) => quote(s, out),
        PropertyValue::Bool(b) => {
            let _ = write!(out, "{b}");
        }
        PropertyValue::Enum(t) => out.push_str(t),
        PropertyValue::Set(items) => {
            out.push('{');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                quote(item, out);
            }
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_workflow;
    use super::*;

    #[test]
    fn empty_model_canonical_form() {
        let m = parse_workflow("Family W = { }", "w.osc").unwrap();
        assert_eq!(render_workflow(&m), "Family W = {\n}\n");
    }

    #[test]
    fn special_values_roundtrip() {
        let src = r#"Family W = {
  Component Type T = {
    Property m : enum {a, b} = b;
    Property f : float = 1e-7;
  }
  Component x : T = {
    Property s = "q\"uo\\te\n";
    Property f = -2.5;
    Property e = {};
  }
}"#;
        let m = parse_workflow(src, "w.osc").unwrap();
        let again = parse_workflow(&render_workflow(&m), "w.osc").unwrap();
        assert_eq!(m.without_spans(), again.without_spans());
    }
}
