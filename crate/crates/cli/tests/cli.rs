use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(rel)
}

fn osc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osc"))
        .args(args)
        .env_remove("OSC_WORKDIR")
        .output()
        .expect("osc runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn node<'a>(report: &'a Value, id: &str) -> &'a Value {
    report["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .find(|n| n["id"] == id)
        .unwrap_or_else(|| panic!("no node {id}"))
}

fn without_times(mut report: Value) -> Value {
    for n in report["nodes"].as_array_mut().unwrap() {
        let n = n.as_object_mut().unwrap();
        n.remove("started");
        n.remove("finished");
    }
    report
}

#[test]
fn validate_valid_model_is_silent() {
    let out = osc(&["validate", path(&fixture("workflows/profrager.osc"))]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    assert!(out.stderr.is_empty());
}

#[test]
fn validate_reports_rule_on_stderr() {
    let out = osc(&["validate", path(&fixture("rules/r01_fail.osc"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    let err = stderr(&out);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with("R1 "), "{err}");
}

#[test]
fn validate_missing_file_is_usage_error() {
    let out = osc(&["validate", "/nonexistent/model.osc"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn syntax_error_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.osc");
    std::fs::write(&file, "Family W = { Component a : Executavel = { ").unwrap();
    let out = osc(&["validate", path(&file)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bad.osc"), "{}", stderr(&out));
}

#[test]
fn bad_flag_is_usage_error() {
    let out = osc(&["run", "--jobs", "0", "x.osc"]);
    assert_eq!(out.status.code(), Some(3));
    let out = osc(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn plan_with_bindings_reports_cross_product() {
    let out = osc(&[
        "plan",
        path(&fixture("workflows/sweep.osc")),
        "--bind",
        "sw.p=values:x,y,z",
        "--bind",
        "sw.q=repeat:2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let plan = stdout_json(&out);
    let instances = plan["expansions"][0]["instances"].as_array().unwrap();
    assert_eq!(instances.len(), 6);
    for (i, inst) in instances.iter().enumerate() {
        assert_eq!(inst["instance_index"], i);
    }
}

#[test]
fn plan_binds_directories() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["b.fasta", "a.fasta", "c.fasta"] {
        std::fs::write(dir.path().join(name), name).unwrap();
    }
    let bind = format!("sw.p={}", dir.path().display());
    let out = osc(&[
        "plan",
        path(&fixture("workflows/sweep.osc")),
        "--bind",
        &bind,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let plan = stdout_json(&out);
    let instances = plan["expansions"][0]["instances"].as_array().unwrap();
    assert_eq!(instances.len(), 3 * 2);
}

#[test]
fn plan_without_sweep_has_single_instances() {
    let out = osc(&["plan", path(&fixture("workflows/profrager.osc"))]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let plan = stdout_json(&out);
    for n in plan["nodes"].as_array().unwrap() {
        assert_eq!(n["instance_index"], 0, "{n}");
    }
}

#[test]
fn bind_to_non_fork_port_is_usage_error() {
    let out = osc(&[
        "plan",
        path(&fixture("workflows/sweep.osc")),
        "--bind",
        "resumo.i=values:x",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(out.stdout.is_empty());
}

#[test]
fn run_profrager_and_export_both_versions() {
    let work = tempfile::tempdir().unwrap();
    let out = osc(&[
        "run",
        path(&fixture("workflows/profrager.osc")),
        "--faults",
        path(&fixture("workflows/profrager_faults.json")),
        "--workdir",
        path(work.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = stdout_json(&out);
    let psipred = node(&report, "psipred#0");
    assert_eq!(psipred["status"], "ignored");
    assert_eq!(psipred["attempts"].as_array().unwrap().len(), 3);
    assert_eq!(node(&report, "if3#0")["delivered_from"], "copiaSs2");
    assert!(work.path().join("report.json").is_file());
    assert!(work.path().join("provenance.json").is_file());

    for version in ["orange", "black"] {
        let out = osc(&["prov", "--workdir", path(work.path()), "--version", version]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let graph = stdout_json(&out);
        assert_eq!(graph["account"], version);
        assert!(graph["processes"]
            .as_array()
            .unwrap()
            .iter()
            .any(|p| p["id"] == "psipred#0"));
    }

    let out = osc(&[
        "prov",
        "--workdir",
        path(work.path()),
        "--version",
        "missing",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(err.contains("orange") && err.contains("black"), "{err}");
}

#[test]
fn run_fails_fast_without_ignorar() {
    let dir = tempfile::tempdir().unwrap();
    let src = std::fs::read_to_string(fixture("workflows/profrager.osc"))
        .unwrap()
        .replace("Property ignorar = true;", "Property ignorar = false;");
    let model = dir.path().join("model.osc");
    std::fs::write(&model, src).unwrap();
    let work = dir.path().join("work");
    let out = osc(&[
        "run",
        path(&model),
        "--faults",
        path(&fixture("workflows/profrager_faults.json")),
        "--workdir",
        path(&work),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let report = stdout_json(&out);
    assert_eq!(report["status"], "failed");
    assert_eq!(node(&report, "psipred#0")["status"], "failed");
    assert_eq!(node(&report, "if3#0")["status"], "not_run");
    assert_eq!(node(&report, "profrager#0")["status"], "not_run");
}

#[test]
fn unreadable_fault_script_is_usage_error() {
    let work = tempfile::tempdir().unwrap();
    let out = osc(&[
        "run",
        path(&fixture("workflows/profrager.osc")),
        "--faults",
        "/nonexistent/faults.json",
        "--workdir",
        path(work.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let bad = work.path().join("bad.json");
    std::fs::write(&bad, r#"{ "psipred": { "outcome": "explode" } }"#).unwrap();
    let out = osc(&[
        "run",
        path(&fixture("workflows/profrager.osc")),
        "--faults",
        path(&bad),
        "--workdir",
        path(work.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn jobs_do_not_change_the_report() {
    let run = |jobs: &str| {
        let work = tempfile::tempdir().unwrap();
        let out = osc(&[
            "run",
            path(&fixture("workflows/sweep.osc")),
            "--jobs",
            jobs,
            "--workdir",
            path(work.path()),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let report = stdout_json(&out);
        (
            without_times(report),
            std::fs::read(work.path().join("saida/combinado.txt")).unwrap(),
        )
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn workdir_defaults_from_environment() {
    let work = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_osc"))
        .args(["run", path(&fixture("workflows/nested3.osc"))])
        .env("OSC_WORKDIR", work.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(work.path().join("report.json").is_file());
}

#[test]
fn retries_can_be_counted_as_additional() {
    let work = tempfile::tempdir().unwrap();
    let out = osc(&[
        "run",
        path(&fixture("workflows/profrager.osc")),
        "--faults",
        path(&fixture("workflows/profrager_faults.json")),
        "--workdir",
        path(work.path()),
        "--retries-are-additional",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = stdout_json(&out);
    assert_eq!(
        node(&report, "psipred#0")["attempts"]
            .as_array()
            .unwrap()
            .len(),
        4
    );
}

const SHELL_MODEL: &str = r#"Family Shell = {
  Component gera : Executavel = {
    Property comando = "printf 'um dois dois\n' > {out.texto}";
    Port out texto = { }
  }
  Connector c1 : Pipe = {
    Role source s = { }
    Role destination d = { }
  }
  Component conta : Executavel, Log, RedundanciaTemporal = {
    Property comando = "tr ' ' '\n' < {in.texto} | sort | uniq -c | sed 's/^ *//' > {out.contagem}";
    Property num_tentativas = 2;
    Port in texto = { }
    Port out contagem = { }
  }
  Component lento : Executavel, MonitoramentoDeTempo, RedundanciaTemporal = {
    Property comando = "sleep 30; echo tarde > {out.o}";
    Property tempo_limite = 0.3;
    Property num_tentativas = 1;
    Property ignorar = true;
    Port out o = { }
  }
  Component ruidoso : Executavel, Log, RedundanciaTemporal = {
    Property comando = "echo 'Error: disk quota' >&2; echo ok > {out.o}";
    Property num_tentativas = 2;
    Property ignorar = true;
    Port out o = { }
  }
  Attachment gera.texto to c1.s;
  Attachment conta.texto from c1.d;
}
"#;

#[test]
fn shell_adapter_runs_commands_and_detects_faults() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("shell.osc");
    std::fs::write(&model, SHELL_MODEL).unwrap();
    let work = dir.path().join("work");
    let started = Instant::now();
    let out = osc(&[
        "run",
        path(&model),
        "--adapter",
        "shell",
        "--jobs",
        "4",
        "--workdir",
        path(&work),
    ]);
    let elapsed = started.elapsed();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(
        elapsed < Duration::from_secs(10),
        "timeout did not kill: {elapsed:?}"
    );

    let report = stdout_json(&out);
    let counted = work.join(
        node(&report, "conta#0")["outputs"]["contagem"]
            .as_str()
            .unwrap(),
    );
    assert_eq!(std::fs::read_to_string(counted).unwrap(), "2 dois\n1 um\n");

    let lento = node(&report, "lento#0");
    assert_eq!(lento["status"], "ignored");
    assert_eq!(lento["signal"]["reason"], "timeout");

    let ruidoso = node(&report, "ruidoso#0");
    assert_eq!(ruidoso["status"], "ignored");
    assert_eq!(ruidoso["attempts"].as_array().unwrap().len(), 2);
    assert_eq!(ruidoso["signal"]["reason"], "log_match");
}
