use std::path::PathBuf;

use osc_core::parser::parse_workflow;
use osc_core::typesystem::{analyze, Diagnostic, RuleId};

fn diagnostics(name: &str) -> Vec<Diagnostic> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/rules")
        .join(name);
    let src = std::fs::read_to_string(&path).unwrap();
    let model = parse_workflow(&src, name).unwrap_or_else(|e| panic!("{e}"));
    analyze(&model)
        .unwrap_or_else(|e| panic!("{name}: {e:?}"))
        .diagnostics
}

#[test]
fn each_violating_fixture_reports_only_its_rule() {
    for (i, rule) in RuleId::ALL.iter().enumerate() {
        let name = format!("r{:02}_fail.osc", i + 1);
        let diags = diagnostics(&name);
        assert!(!diags.is_empty(), "{name}: no diagnostics");
        for d in &diags {
            assert_eq!(d.rule_id, *rule, "{name}: {d}");
        }
    }
}

#[test]
fn each_passing_twin_is_clean() {
    for i in 1..=14 {
        let name = format!("r{i:02}_pass.osc");
        let diags = diagnostics(&name);
        assert!(diags.is_empty(), "{name}: {diags:?}");
    }
}
