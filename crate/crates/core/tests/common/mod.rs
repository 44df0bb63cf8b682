#![allow(dead_code)]

use std::path::{Path, PathBuf};

use osc_core::engine::{run, Adapter, RunConfig, RunReport};
use osc_core::model::WorkflowModel;
use osc_core::parser::parse_workflow;
use osc_core::planner::{plan, ExecutionPlan};
use osc_core::provenance::EventLog;
use osc_core::typesystem::analyze;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn model_from(src: &str, name: &str) -> WorkflowModel {
    parse_workflow(src, name).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn plan_model(model: &WorkflowModel, base: &Path) -> ExecutionPlan {
    let analysis = analyze(model).unwrap_or_else(|e| panic!("{e:?}"));
    assert!(
        analysis.diagnostics.is_empty(),
        "unexpected diagnostics: {:?}",
        analysis.diagnostics
    );
    plan(model, &analysis, base).unwrap_or_else(|e| panic!("{e}"))
}

pub fn plan_source(src: &str, base: &Path) -> ExecutionPlan {
    plan_model(&model_from(src, "inline.osc"), base)
}

pub fn plan_fixture(rel: &str) -> ExecutionPlan {
    let path = fixtures().join(rel);
    let src = std::fs::read_to_string(&path).unwrap();
    plan_model(&model_from(&src, rel), path.parent().unwrap())
}

pub struct Run {
    pub report: RunReport,
    pub dir: tempfile::TempDir,
}

impl Run {
    pub fn workdir(&self) -> &Path {
        self.dir.path()
    }

    pub fn events(&self) -> EventLog {
        EventLog::load(&self.workdir().join("provenance.json")).unwrap()
    }

    pub fn read(&self, rel: &str) -> Vec<u8> {
        std::fs::read(self.workdir().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    pub fn output(&self, node: &str, port: &str) -> Vec<u8> {
        let rec = self
            .report
            .node(node)
            .unwrap_or_else(|| panic!("no node {node}"));
        let rel = rec
            .outputs
            .get(port)
            .unwrap_or_else(|| panic!("{node} has no output {port}: {rec:?}"));
        self.read(rel)
    }
}

/// Runs `plan` in a fresh workdir with the simulated adapter.
pub fn run_sim(plan: &ExecutionPlan, faults: Option<&str>, jobs: usize) -> Run {
    run_with(plan, faults, jobs, false)
}

pub fn run_with(plan: &ExecutionPlan, faults: Option<&str>, jobs: usize, additional: bool) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::new(dir.path());
    config.adapter = Adapter::Simulated;
    config.jobs = jobs;
    config.retries_are_additional = additional;
    let script = faults.map(|text| {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        std::io::Write::write_all(&mut f, text.as_bytes()).unwrap();
        f
    });
    config.fault_script = script.as_ref().map(|f| f.path().to_path_buf());
    let report = run(plan, &config).unwrap_or_else(|e| panic!("{e}"));
    Run { report, dir }
}
