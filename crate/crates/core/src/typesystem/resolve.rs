use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ResolveError, TypeRegistry, EXECUTAVEL, FLUXO};
use crate::model::{
    Direction, ElementKind, PowertypeClass, PropertyAssign, PropertyValue, SourceSpan, ValueKind,
    WorkflowModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StructureType {
    Executavel,
    Fluxo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveProperty {
    pub kind: ValueKind,
    pub value: Option<PropertyValue>,
    pub declared_by: Vec<String>,
}

/// Merged properties of an element: one entry per property name declared
/// anywhere in the assigned types' closure, plus type-qualified overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EffectiveProperties {
    pub entries: IndexMap<String, EffectiveProperty>,
    /// `Type.prop` assignments, keyed by every type in the qualifier's
    /// closure so lookups through a supertype also find them.
    pub qualified: IndexMap<String, PropertyValue>,
}

impl EffectiveProperties {
    pub fn get(&self, name: &str) -> Option<&PropertyValue> {
        self.entries.get(name).and_then(|e| e.value.as_ref())
    }

    /// Value of `name` as seen by type `ty`: a qualified assignment if one
    /// targets that type, otherwise the shared value.
    pub fn get_for(&self, ty: &str, name: &str) -> Option<&PropertyValue> {
        self.qualified
            .get(&format!("{ty}.{name}"))
            .or_else(|| self.get(name))
    }

    pub fn is_declared(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Every property that carries a value, stringified.
    pub fn plain_values(&self) -> IndexMap<String, String> {
        self.entries
            .iter()
            .filter_map(|(k, e)| e.value.as_ref().map(|v| (k.clone(), v.to_plain())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedInterface {
    pub name: String,
    pub kind: ElementKind,
    pub direction: Direction,
    pub span: SourceSpan,
    pub assigned_types: Vec<String>,
    pub ancestors: Vec<String>,
    pub properties: EffectiveProperties,
}

impl ResolvedInterface {
    pub fn has(&self, ty: &str) -> bool {
        self.ancestors.iter().any(|a| a == ty)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedElement {
    /// Dotted path of the instance (`flow.task`).
    pub path: String,
    pub kind: ElementKind,
    pub span: SourceSpan,
    pub assigned_types: Vec<String>,
    /// Closure of the assigned types under `extends`.
    pub ancestors: Vec<String>,
    pub structure_type: Option<StructureType>,
    pub properties: EffectiveProperties,
    pub quality_attributes: BTreeSet<PowertypeClass>,
    pub interfaces: Vec<ResolvedInterface>,
}

impl ResolvedElement {
    pub fn has(&self, ty: &str) -> bool {
        self.ancestors.iter().any(|a| a == ty)
    }

    pub fn interface(&self, name: &str) -> Option<&ResolvedInterface> {
        self.interfaces.iter().find(|i| i.name == name)
    }

    pub fn name(&self) -> &str {
        self.path.rsplit('.').next().unwrap_or(&self.path)
    }
}

/// Resolves every instance (nested bodies included) against `registry`.
pub fn resolve_types(
    model: &WorkflowModel,
    registry: &TypeRegistry,
) -> Result<Vec<ResolvedElement>, Vec<ResolveError>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (path, inst) in model.walk() {
        let resolved = resolve_one(
            registry,
            &path,
            &inst.assigned_types,
            &inst.properties,
            &inst.span,
            &mut errors,
        );
        let mut interfaces = Vec::new();
        for itf in &inst.interfaces {
            let itf_path = format!("{path}.{}", itf.name);
            let r = resolve_one(
                registry,
                &itf_path,
                &itf.assigned_types,
                &itf.properties,
                &itf.span,
                &mut errors,
            );
            if let Some((ancestors, properties)) = r {
                interfaces.push(ResolvedInterface {
                    name: itf.name.clone(),
                    kind: itf.kind,
                    direction: itf.direction,
                    span: itf.span.clone(),
                    assigned_types: itf.assigned_types.clone(),
                    ancestors,
                    properties,
                });
            }
        }
        let Some((ancestors, properties)) = resolved else {
            continue;
        };
        let has_exec = ancestors.iter().any(|a| a == EXECUTAVEL);
        let has_flow = ancestors.iter().any(|a| a == FLUXO);
        let structure_type = match (inst.kind, has_exec, has_flow) {
            (ElementKind::Task, true, false) => Some(StructureType::Executavel),
            (ElementKind::Task, false, true) => Some(StructureType::Fluxo),
            _ => None,
        };
        let quality_attributes = ancestors
            .iter()
            .filter_map(|a| registry.get(a).and_then(|t| t.powertype_class))
            .filter(|c| *c != PowertypeClass::Structure)
            .collect();
        out.push(ResolvedElement {
            path,
            kind: inst.kind,
            span: inst.span.clone(),
            assigned_types: inst.assigned_types.clone(),
            ancestors,
            structure_type,
            properties,
            quality_attributes,
            interfaces,
        });
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

fn resolve_one(
    registry: &TypeRegistry,
    path: &str,
    assigned: &[String],
    assigns: &[PropertyAssign],
    span: &SourceSpan,
    errors: &mut Vec<ResolveError>,
) -> Option<(Vec<String>, EffectiveProperties)> {
    let err = |span: &SourceSpan, message: String| ResolveError {
        path: path.to_string(),
        span: span.clone(),
        message,
    };
    let before = errors.len();
    let mut ancestors: Vec<String> = Vec::new();
    for ty in assigned {
        if registry.get(ty).is_none() {
            errors.push(err(span, format!("unknown type `{ty}`")));
            continue;
        }
        for a in registry.ancestors(ty) {
            if !ancestors.contains(&a) {
                ancestors.push(a);
            }
        }
    }
    if errors.len() > before {
        return None;
    }

    let mut props = EffectiveProperties::default();
    // name -> distinct (declaring type, default) pairs
    let mut defaults: IndexMap<String, Vec<(String, PropertyValue)>> = IndexMap::new();
    for ty in &ancestors {
        let td = registry.get(ty).expect("ancestor registered");
        for decl in &td.properties {
            match props.entries.get_mut(&decl.name) {
                Some(existing) => {
                    if existing.kind != decl.kind {
                        errors.push(err(
                            span,
                            format!(
                                "property `{}` declared as {} by `{}` and as {} by `{ty}`",
                                decl.name, existing.kind, existing.declared_by[0], decl.kind
                            ),
                        ));
                        continue;
                    }
                    existing.declared_by.push(ty.clone());
                }
                None => {
                    props.entries.insert(
                        decl.name.clone(),
                        EffectiveProperty {
                            kind: decl.kind.clone(),
                            value: None,
                            declared_by: vec![ty.clone()],
                        },
                    );
                }
            }
            if let Some(d) = &decl.default {
                defaults
                    .entry(decl.name.clone())
                    .or_default()
                    .push((ty.clone(), d.clone()));
            }
        }
    }

    let coerce = |kind: &ValueKind, v: &PropertyValue| match (kind, v) {
        (ValueKind::Float, PropertyValue::Int(i)) => PropertyValue::Float(*i as f64),
        _ => v.clone(),
    };

    for a in assigns {
        if let Some((qualifier, name)) = a.qualifier() {
            if !ancestors.iter().any(|t| t == qualifier) {
                errors.push(err(
                    &a.span,
                    format!("`{qualifier}` is not among the element's types"),
                ));
                continue;
            }
            let decl = registry
                .ancestors(qualifier)
                .iter()
                .find_map(|t| registry.get(t).and_then(|td| td.property(name)).cloned());
            let Some(decl) = decl else {
                errors.push(err(
                    &a.span,
                    format!("type `{qualifier}` declares no property `{name}`"),
                ));
                continue;
            };
            if !decl.kind.admits(&a.value) {
                errors.push(err(
                    &a.span,
                    format!("property `{}` expects {}", a.name, decl.kind),
                ));
                continue;
            }
            let value = coerce(&decl.kind, &a.value);
            for t in registry.ancestors(qualifier) {
                props.qualified.insert(format!("{t}.{name}"), value.clone());
            }
        } else {
            let Some(entry) = props.entries.get_mut(&a.name) else {
                errors.push(err(
                    &a.span,
                    format!("no assigned type declares property `{}`", a.name),
                ));
                continue;
            };
            if !entry.kind.admits(&a.value) {
                errors.push(err(
                    &a.span,
                    format!("property `{}` expects {}", a.name, entry.kind),
                ));
                continue;
            }
            entry.value = Some(coerce(&entry.kind, &a.value));
        }
    }

    for (name, entry) in props.entries.iter_mut() {
        if entry.value.is_some() {
            continue;
        }
        let Some(candidates) = defaults.get(name) else {
            continue;
        };
        let first = &candidates[0];
        if let Some(other) = candidates.iter().find(|(_, v)| *v != first.1) {
            errors.push(err(
                span,
                format!(
                    "conflicting defaults for `{name}` from `{}` and `{}`; assign it explicitly",
                    first.0, other.0
                ),
            ));
            continue;
        }
        entry.value = Some(coerce(&entry.kind, &first.1));
    }

    if errors.len() > before {
        None
    } else {
        Some((ancestors, props))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{builtin_style, TypeRegistry};
    use super::*;
    use crate::parser::parse_workflow;

    fn resolve(src: &str) -> Result<Vec<ResolvedElement>, Vec<ResolveError>> {
        let m = parse_workflow(src, "t.osc").unwrap();
        let reg = TypeRegistry::with_model(&m).map_err(|e| e.to_vec())?;
        resolve_types(&m, &reg)
    }

    #[test]
    fn shared_memory_is_executable() {
        let r = resolve(
            "Family W = { Component t : MemoriaCompartilhada = { Property num_threads = 4; } }",
        )
        .unwrap();
        assert_eq!(r[0].structure_type, Some(StructureType::Executavel));
        assert_eq!(
            r[0].properties.get("num_threads"),
            Some(&PropertyValue::Int(4))
        );
        assert!(r[0]
            .quality_attributes
            .contains(&PowertypeClass::TaskParallelism));
    }

    #[test]
    fn bare_executable_has_only_declared_defaults() {
        let r = resolve("Family W = { Component t : Executavel = { } }").unwrap();
        let reg = builtin_style();
        let declared: Vec<_> = reg
            .get(EXECUTAVEL)
            .unwrap()
            .properties
            .iter()
            .map(|p| p.name.clone())
            .collect();
        let keys: Vec<_> = r[0].properties.entries.keys().cloned().collect();
        assert_eq!(keys, declared);
        assert!(r[0].properties.get("comando").is_none());
    }

    #[test]
    fn unknown_type_names_it() {
        let errs = resolve("Family W = {\n Component t : Foo = { } }").unwrap_err();
        assert!(errs[0].message.contains("`Foo`"));
        assert_eq!((errs[0].span.line, errs[0].span.column), (2, 2));
    }

    #[test]
    fn defaults_apply_and_assignment_overrides() {
        let r = resolve(
            "Family W = { Component t : Executavel, RedundanciaTemporal = { Property ignorar = true; } }",
        )
        .unwrap();
        assert_eq!(
            r[0].properties.get("num_tentativas"),
            Some(&PropertyValue::Int(3))
        );
        assert_eq!(
            r[0].properties.get("ignorar"),
            Some(&PropertyValue::Bool(true))
        );
    }

    #[test]
    fn conflicting_defaults_are_errors_unless_assigned() {
        let src = |assign: &str| {
            format!(
                "Family W = {{
  Component Type A = {{ Property k : int = 1; }}
  Component Type B = {{ Property k : int = 2; }}
  Component t : Executavel, A, B = {{ {assign} }}
}}"
            )
        };
        let errs = resolve(&src("")).unwrap_err();
        assert!(errs[0].message.contains("conflicting defaults"));
        let r = resolve(&src("Property k = 7;")).unwrap();
        assert_eq!(r[0].properties.get("k"), Some(&PropertyValue::Int(7)));
    }

    #[test]
    fn qualified_assignment_targets_one_type() {
        let r = resolve(
            r#"Family W = { Component f : Fluxo, OPM, BaixaGranularidade = {
  Property versao = {"orange", "black"};
  Property BaixaGranularidade.versao = {"black"};
  Family b = { }
} }"#,
        )
        .unwrap();
        let p = &r[0].properties;
        assert_eq!(
            p.get_for("OPM", "versao").unwrap().as_set().unwrap(),
            ["orange", "black"]
        );
        assert_eq!(
            p.get_for("BaixaGranularidade", "versao")
                .unwrap()
                .as_set()
                .unwrap(),
            ["black"]
        );
    }

    #[test]
    fn wrong_value_kind_and_unknown_property() {
        let errs = resolve(
            "Family W = { Component t : Executavel = { Property comando = 3; Property nope = 1; } }",
        )
        .unwrap_err();
        assert_eq!(errs.len(), 2);
        assert!(errs[0].message.contains("expects string"));
        assert!(errs[1].message.contains("`nope`"));
    }

    #[test]
    fn integer_coerces_to_float() {
        let r = resolve(
            "Family W = { Component t : Executavel, MonitoramentoDeTempo, RedundanciaTemporal = { Property tempo_limite = 2; } }",
        )
        .unwrap();
        assert_eq!(
            r[0].properties.get("tempo_limite"),
            Some(&PropertyValue::Float(2.0))
        );
    }
}
