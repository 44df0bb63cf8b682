mod common;

use common::*;
use indexmap::IndexMap;
use osc_core::engine::{Reason, RunStatus, Status};
use osc_core::planner::{plan, NodeKind, PlanError};
use osc_core::provenance::{export_opm, EdgeKind};
use osc_core::typesystem::analyze;

fn profrager_faults() -> String {
    std::fs::read_to_string(fixtures().join("workflows/profrager_faults.json")).unwrap()
}

#[test]
fn profrager_falls_back_to_copied_prediction() {
    let plan = plan_fixture("workflows/profrager.osc");
    let run = run_sim(&plan, Some(&profrager_faults()), 2);
    assert_eq!(run.report.status, RunStatus::Success);
    let psipred = run.report.node("psipred#0").unwrap();
    assert_eq!(psipred.status, Status::Ignored);
    assert_eq!(psipred.attempts.len(), 3);
    assert!(psipred.outputs.is_empty());
    assert_eq!(psipred.signal.as_ref().unwrap().reason, Reason::NonzeroExit);
    let if3 = run.report.node("if3#0").unwrap();
    assert_eq!(if3.delivered_from.as_deref(), Some("copiaSs2"));
}

#[test]
fn report_lists_nodes_in_plan_order() {
    let plan = plan_fixture("workflows/nested3.osc");
    let run = run_sim(&plan, None, 3);
    let ids: Vec<&str> = run.report.nodes.iter().map(|n| n.id.as_str()).collect();
    assert_eq!(
        ids,
        plan.order.iter().map(String::as_str).collect::<Vec<_>>()
    );
}

#[test]
fn simulated_outputs_carry_their_inputs() {
    let plan = plan_fixture("workflows/nested3.osc");
    let run = run_sim(&plan, None, 1);
    let out = String::from_utf8(run.output("sumidouro#0", "o")).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(
        lines,
        [
            "sumidouro#0.o",
            "A.B.b2#0.o",
            "A.B.C.c2#0.o",
            "A.B.C.c1#0.o",
            "A.B.b1#0.o",
            "A.a1#0.o",
            "fonte#0.o",
        ]
    );
}

#[test]
fn unconsumed_signal_stops_only_its_branch() {
    let src = r#"Family Ramos = {
  Component falha : Executavel, RedundanciaTemporal = {
    Property comando = "x";
    Property num_tentativas = 2;
    Property ignorar = true;
    Port out o = { }
  }
  Connector c1 : Pipe = { Role source s = { } Role destination d = { } }
  Component depois : Executavel = {
    Property comando = "y";
    Port in i = { }
  }
  Component independente : Executavel = {
    Property comando = "z";
    Port out o = { }
  }
  Attachment falha.o to c1.s;
  Attachment depois.i from c1.d;
}
"#;
    let base = tempfile::tempdir().unwrap();
    let plan = plan_source(src, base.path());
    let run = run_sim(&plan, Some(r#"{ "falha": { "outcome": "fail" } }"#), 2);
    assert_eq!(run.report.status, RunStatus::Failed);
    assert_eq!(run.report.node("falha#0").unwrap().status, Status::Ignored);
    assert_eq!(run.report.node("c1#0").unwrap().status, Status::NotRun);
    assert_eq!(run.report.node("depois#0").unwrap().status, Status::NotRun);
    assert_eq!(
        run.report.node("independente#0").unwrap().status,
        Status::Success
    );
}

#[test]
fn propagation_with_every_source_signaled_is_a_transfer_failure() {
    let src = r#"Family Todos = {
  Component a : Executavel, RedundanciaTemporal = {
    Property comando = "a";
    Property num_tentativas = 1;
    Property ignorar = true;
    Port out o = { }
  }
  Component b : Executavel, RedundanciaTemporal = {
    Property comando = "b";
    Property num_tentativas = 1;
    Property ignorar = true;
    Port out o = { }
  }
  Connector k : Pipe, Propagacao = {
    Role source s1 = { }
    Role source s2 = { }
    Role destination d = { }
  }
  Component fim : Executavel = {
    Property comando = "fim";
    Port in i = { }
  }
  Attachment a.o to k.s1;
  Attachment b.o to k.s2;
  Attachment fim.i from k.d;
}
"#;
    let base = tempfile::tempdir().unwrap();
    let plan = plan_source(src, base.path());
    let both = r#"{ "a": { "outcome": "fail" }, "b": { "outcome": "fail" } }"#;
    let run = run_sim(&plan, Some(both), 1);
    let k = run.report.node("k#0").unwrap();
    assert_eq!(k.status, Status::Ignored);
    assert_eq!(k.signal.as_ref().unwrap().reason, Reason::TransferFailure);
    assert_eq!(run.report.node("fim#0").unwrap().status, Status::NotRun);

    let first_only = r#"{ "a": { "outcome": "fail" } }"#;
    let run = run_sim(&plan, Some(first_only), 1);
    assert_eq!(run.report.status, RunStatus::Success);
    assert_eq!(
        run.report.node("k#0").unwrap().delivered_from.as_deref(),
        Some("s2")
    );

    let run = run_sim(&plan, None, 1);
    assert_eq!(
        run.report.node("k#0").unwrap().delivered_from.as_deref(),
        Some("s1")
    );
}

#[test]
fn control_dependencies_pass_no_data_but_trigger() {
    let src = r#"Family Controle = {
  Component a : Executavel, OPM = {
    Property comando = "a";
    Property versao = {"v"};
    Port out o = { }
  }
  Connector k : Pipe = { Role source s = { } Role destination d = { } }
  Component b : Executavel, OPM = {
    Property comando = "b";
    Property versao = {"v"};
    Port in i = { }
    Port out o = { }
  }
  Attachment a.o to k.s;
  Attachment b.i from k.d control;
}
"#;
    let base = tempfile::tempdir().unwrap();
    let plan = plan_source(src, base.path());
    let run = run_sim(&plan, None, 1);
    assert_eq!(run.output("b#0", "o"), b"b#0.o\n");
    let g = export_opm(&run.events(), "v", &IndexMap::new()).unwrap();
    let triggered: Vec<_> = g
        .edges
        .iter()
        .filter(|e| e.kind == EdgeKind::WasTriggeredBy)
        .map(|e| (e.from.as_str(), e.to.as_str()))
        .collect();
    assert_eq!(triggered, [("b#0", "a#0")]);
    assert!(!g
        .edges
        .iter()
        .any(|e| e.kind == EdgeKind::Used && e.from == "b#0"));
}

#[test]
fn nested_sweeps_are_rejected() {
    let src = r#"Family Dupla = {
  Component fora : VarreduraDeParametros = {
    Port in p : Bifurcacao = { Property valores = {"a"}; }
    Family CorpoFora = {
      Component dentro : VarreduraDeParametros = {
        Port in q : Bifurcacao = { Property valores = {"b"}; }
        Family CorpoDentro = {
          Component t : Executavel = { Property comando = "t"; Port in i = { } }
          Connector k : Pipe = { Role source s = { } Role destination d = { } }
          Attachment dentro.q to k.s;
          Attachment t.i from k.d;
        }
      }
      Connector k : Pipe = { Role source s = { } Role destination d = { } }
      Component u : Executavel = { Property comando = "u"; Port in i = { } }
      Attachment fora.p to k.s;
      Attachment u.i from k.d;
    }
  }
}
"#;
    let model = model_from(src, "dupla.osc");
    let analysis = analyze(&model).unwrap();
    assert!(
        analysis.diagnostics.is_empty(),
        "{:?}",
        analysis.diagnostics
    );
    let base = tempfile::tempdir().unwrap();
    let err = plan(&model, &analysis, base.path()).unwrap_err();
    assert!(matches!(err, PlanError::NestedSweep { .. }), "{err}");
}

#[test]
fn sequential_sweep_never_overlaps_instances() {
    let src = r#"Family Sequencial = {
  Component sw : VarreduraDeParametros = {
    Property modo = sequencial;
    Port in p : Bifurcacao = { Property repeticoes = 4; }
    Port out r : Juncao = { Property formato = concat; Property destino = "todos"; }
    Family Instancia = {
      Component t : Executavel = {
        Property comando = "mkdir ../../lock || exit 9; sleep 0.1; rmdir ../../lock; cat {in.i} > {out.o}";
        Port in i = { }
        Port out o = { }
      }
      Connector ci : Pipe = { Role source s = { } Role destination d = { } }
      Connector co : Pipe = { Role source s = { } Role destination d = { } }
      Attachment sw.p to ci.s;
      Attachment t.i from ci.d;
      Attachment t.o to co.s;
      Attachment sw.r from co.d;
    }
  }
}
"#;
    let base = tempfile::tempdir().unwrap();
    let plan = plan_source(src, base.path());
    let instances = plan
        .nodes
        .iter()
        .filter(|n| n.path.starts_with("sw.") && n.kind != NodeKind::Join);
    for n in instances {
        assert_eq!(n.config.serial_group.as_deref(), Some("sw"), "{}", n.id);
    }
    let dir = tempfile::tempdir().unwrap();
    let mut config = osc_core::engine::RunConfig::new(dir.path());
    config.adapter = osc_core::engine::Adapter::Shell;
    config.clock = osc_core::engine::Clock::Wall;
    config.jobs = 4;
    let report = osc_core::engine::run(&plan, &config).unwrap();
    assert_eq!(report.status, RunStatus::Success, "{}", report.to_json());
    assert_eq!(std::fs::read(dir.path().join("todos")).unwrap(), b"0123");
}

#[test]
fn shell_mapreduce_uses_external_programs() {
    let src = r#"Family Externo = {
  Component fonte : Executavel = {
    Property comando = "printf 'b a\na c\n' > {out.o}";
    Port out o = { }
  }
  Connector k1 : Pipe = { Role source s = { } Role destination d = { } }
  Component mr : MapReduce = {
    Port in i = { }
    Port out o = { }
    Family Programas = {
      Component map : Executavel = {
        Property comando = "tr ' ' '\n' | sed 's/$/\t1/'";
      }
      Component reduce : Executavel = {
        Property comando = "printf '%s\t%s\n' \"$OSC_KEY\" \"$(wc -l | tr -d ' ')\"";
      }
    }
  }
  Attachment fonte.o to k1.s;
  Attachment mr.i from k1.d;
}
"#;
    let base = tempfile::tempdir().unwrap();
    let plan = plan_source(src, base.path());
    let dir = tempfile::tempdir().unwrap();
    let mut config = osc_core::engine::RunConfig::new(dir.path());
    config.adapter = osc_core::engine::Adapter::Shell;
    config.clock = osc_core::engine::Clock::Wall;
    let report = osc_core::engine::run(&plan, &config).unwrap();
    assert_eq!(report.status, RunStatus::Success, "{}", report.to_json());
    let out = dir.path().join(&report.node("mr#0").unwrap().outputs["o"]);
    assert_eq!(std::fs::read_to_string(out).unwrap(), "a\t2\nb\t1\nc\t1\n");
}
