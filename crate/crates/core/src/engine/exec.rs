use std::fs;
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use regex::Regex;

use super::faults::{FaultEntry, ScriptedOutcome, ScriptedOutput};
use super::join::{copy_tree, remove_any};
use super::mapreduce::run_mapreduce;
use super::*;
use crate::planner::{template, MapReduceSpec, PlanNode};

/// Input file handed to a node, by port (or role) name.
#[derive(Debug, Clone)]
pub struct InputFile {
    pub name: String,
    pub path: PathBuf,
}

pub struct AttemptContext<'a> {
    pub config: &'a RunConfig,
    pub faults: &'a FaultScript,
    /// Directory owned by the node, `workdir/<node id>`.
    pub node_dir: PathBuf,
}

enum Work<'a> {
    Task,
    MapReduce(&'a MapReduceSpec),
    Transfer(&'a Path),
}

struct RawAttempt {
    exit_code: Option<i32>,
    timed_out: bool,
    log: String,
    duration: f64,
}

struct LoopResult {
    attempts: Vec<AttemptRecord>,
    outputs: Option<IndexMap<String, PathBuf>>,
    last_reason: Option<Reason>,
}

fn excerpt(log: &str) -> String {
    const MAX: usize = 200;
    let trimmed = log.trim_end();
    if trimmed.len() <= MAX {
        return trimmed.to_string();
    }
    let mut start = trimmed.len() - MAX;
    while !trimmed.is_char_boundary(start) {
        start += 1;
    }
    trimmed[start..].to_string()
}

fn compile_patterns(patterns: &[String]) -> Vec<Regex> {
    patterns
        .iter()
        .map(|p| Regex::new(p).unwrap_or_else(|_| Regex::new(&regex::escape(p)).expect("escaped")))
        .collect()
}

/// Detection order: timeout, then exit status, then log patterns.
fn detect(raw: &RawAttempt, patterns: &[Regex]) -> Option<Reason> {
    if raw.timed_out {
        Some(Reason::Timeout)
    } else if raw.exit_code != Some(0) {
        Some(Reason::NonzeroExit)
    } else if patterns.iter().any(|p| p.is_match(&raw.log)) {
        Some(Reason::LogMatch)
    } else {
        None
    }
}

fn read_payload(path: &Path, out: &mut Vec<u8>) {
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)
            .map(|rd| rd.filter_map(Result::ok).map(|e| e.path()).collect())
            .unwrap_or_default();
        entries.sort();
        for e in entries {
            read_payload(&e, out);
        }
    } else if let Ok(bytes) = fs::read(path) {
        out.extend(bytes);
    }
}

fn concat_inputs(inputs: &[InputFile]) -> Vec<u8> {
    let mut out = Vec::new();
    for i in inputs {
        read_payload(&i.path, &mut out);
    }
    out
}

fn write_output(path: &Path, spec: &ScriptedOutput) -> std::io::Result<()> {
    match spec {
        ScriptedOutput::File(text) => fs::write(path, text),
        ScriptedOutput::Dir(files) => {
            fs::create_dir_all(path)?;
            for (name, text) in files {
                fs::write(path.join(name), text)?;
            }
            Ok(())
        }
    }
}

/// Connectors deliver data under its original file name.
fn transfer_name(src: &Path) -> String {
    src.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "payload".to_string())
}

fn output_ports(node: &PlanNode, work: &Work) -> Vec<String> {
    match work {
        Work::Transfer(src) => vec![transfer_name(src)],
        _ => node.outputs.clone(),
    }
}

fn simulated(
    node: &PlanNode,
    work: &Work,
    inputs: &[InputFile],
    ctx: &AttemptContext,
    replica: Option<u32>,
    attempt: u32,
    dir: &Path,
) -> RawAttempt {
    let entry: FaultEntry = ctx
        .faults
        .lookup(&node.path, node.instance_index, replica, attempt)
        .cloned()
        .unwrap_or_default();
    let delay = entry.delay.unwrap_or(0.0).max(0.0);
    let limit = node.config.timeout;
    let timed_out = entry.outcome == ScriptedOutcome::Timeout || limit.is_some_and(|t| delay > t);
    let duration = match (timed_out, limit) {
        (true, Some(t)) => t,
        _ => delay,
    };
    if ctx.config.clock == Clock::Wall && duration > 0.0 {
        std::thread::sleep(Duration::from_secs_f64(duration));
    }
    let mut log = entry.log_text.clone().unwrap_or_default();
    let mut exit_code = if timed_out {
        None
    } else {
        Some(entry.exit_code.unwrap_or(match entry.outcome {
            ScriptedOutcome::Fail => 1,
            _ => 0,
        }))
    };
    if exit_code == Some(0) {
        let out_dir = dir.join("out");
        let written = fs::create_dir_all(&out_dir).and_then(|_| match work {
            Work::Task => {
                let inputs = concat_inputs(inputs);
                for port in &node.outputs {
                    let target = out_dir.join(port);
                    match entry.outputs.as_ref().and_then(|o| o.get(port)) {
                        Some(spec) => write_output(&target, spec)?,
                        None => {
                            let mut bytes = format!("{}.{port}\n", node.id).into_bytes();
                            bytes.extend_from_slice(&inputs);
                            fs::write(&target, bytes)?;
                        }
                    }
                }
                Ok(())
            }
            Work::MapReduce(spec) => match run_mapreduce(spec, &concat_inputs(inputs), false) {
                Ok(bytes) => {
                    for port in &node.outputs {
                        fs::write(out_dir.join(port), &bytes)?;
                    }
                    Ok(())
                }
                Err(e) => {
                    log.push_str(&e);
                    exit_code = Some(1);
                    Ok(())
                }
            },
            Work::Transfer(src) => copy_tree(src, &out_dir.join(transfer_name(src))),
        });
        if let Err(e) = written {
            log.push_str(&format!("\n{e}"));
            exit_code = Some(1);
        }
    }
    let _ = fs::write(dir.join("log.txt"), &log);
    RawAttempt {
        exit_code,
        timed_out,
        log,
        duration,
    }
}

fn shell_task(
    node: &PlanNode,
    inputs: &[InputFile],
    replica: Option<u32>,
    attempt: u32,
    dir: &Path,
) -> RawAttempt {
    let out_dir = dir.join("out");
    let log_path = dir.join("log.txt");
    let fail = |log: String| {
        let _ = fs::write(&log_path, &log);
        RawAttempt {
            exit_code: Some(127),
            timed_out: false,
            log,
            duration: 0.0,
        }
    };
    let Some(tpl) = &node.config.command else {
        return fail(format!("{}: no comando to run", node.id));
    };
    if let Err(e) = fs::create_dir_all(&out_dir) {
        return fail(e.to_string());
    }
    let rendered = template::render(tpl, |key| {
        if key == "dir" {
            return Some(dir.display().to_string());
        }
        if let Some(port) = key.strip_prefix("in.") {
            return inputs
                .iter()
                .find(|i| i.name == port)
                .map(|i| i.path.display().to_string());
        }
        if let Some(port) = key.strip_prefix("out.") {
            return node
                .outputs
                .iter()
                .any(|o| o == port)
                .then(|| out_dir.join(port).display().to_string());
        }
        node.config.properties.get(key).cloned()
    });
    let cmd = match rendered {
        Ok(c) => c,
        Err(e) => return fail(format!("{}: {e}", node.id)),
    };
    let log_file = match fs::File::create(&log_path) {
        Ok(f) => f,
        Err(e) => return fail(e.to_string()),
    };
    let err_file = match log_file.try_clone() {
        Ok(f) => f,
        Err(e) => return fail(e.to_string()),
    };
    let start = Instant::now();
    let mut command = Command::new("sh");
    command
        .arg("-c")
        .arg(&cmd)
        .current_dir(dir)
        .stdin(Stdio::null())
        .stdout(log_file)
        .stderr(err_file)
        .env("OSC_NODE", &node.id)
        .env("OSC_INSTANCE", node.instance_index.to_string())
        .env("OSC_ATTEMPT", attempt.to_string())
        .process_group(0);
    if let Some(r) = replica {
        command.env("OSC_REPLICA", r.to_string());
    }
    let mut child = match command.spawn() {
        Ok(c) => c,
        Err(e) => return fail(format!("cannot launch `{cmd}`: {e}")),
    };
    let limit = node.config.timeout.map(Duration::from_secs_f64);
    let mut timed_out = false;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) => {}
            Err(_) => break None,
        }
        if limit.is_some_and(|l| start.elapsed() > l) {
            timed_out = true;
            // Negative pid targets the whole process group.
            unsafe {
                libc::kill(-(child.id() as i32), libc::SIGKILL);
            }
            let _ = child.wait();
            break None;
        }
        std::thread::sleep(Duration::from_millis(5));
    };
    let duration = start.elapsed().as_secs_f64();
    for port in &node.outputs {
        let p = out_dir.join(port);
        if !p.exists() {
            let _ = fs::write(&p, b"");
        }
    }
    let mut log = String::new();
    if let Ok(mut f) = fs::File::open(&log_path) {
        let _ = f.read_to_string(&mut log);
    }
    RawAttempt {
        exit_code: if timed_out {
            None
        } else {
            status.and_then(|s| s.code())
        },
        timed_out,
        log,
        duration,
    }
}

fn shell_mapreduce(
    node: &PlanNode,
    spec: &MapReduceSpec,
    inputs: &[InputFile],
    dir: &Path,
) -> RawAttempt {
    let start = Instant::now();
    let out_dir = dir.join("out");
    let result = run_mapreduce(spec, &concat_inputs(inputs), true).and_then(|bytes| {
        fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
        for port in &node.outputs {
            fs::write(out_dir.join(port), &bytes).map_err(|e| e.to_string())?;
        }
        Ok(())
    });
    let duration = start.elapsed().as_secs_f64();
    let timed_out = node.config.timeout.is_some_and(|t| duration > t);
    let (exit_code, log) = match result {
        Ok(()) => (Some(0), String::new()),
        Err(e) => (Some(1), e),
    };
    let _ = fs::write(dir.join("log.txt"), &log);
    RawAttempt {
        exit_code: if timed_out { None } else { exit_code },
        timed_out,
        log,
        duration,
    }
}

fn attempt_loop(
    node: &PlanNode,
    work: &Work,
    inputs: &[InputFile],
    ctx: &AttemptContext,
    replica: Option<u32>,
    base: &Path,
) -> LoopResult {
    let budget = node
        .config
        .attempt_budget(ctx.config.retries_are_additional);
    let patterns = match work {
        Work::Transfer(_) => Vec::new(),
        _ => compile_patterns(node.config.log_patterns.as_deref().unwrap_or_default()),
    };
    let mut attempts = Vec::new();
    let mut last_reason = None;
    for n in 1..=budget {
        let dir = base.join(format!("attempt-{n}"));
        let _ = remove_any(&dir);
        if let Err(e) = fs::create_dir_all(&dir) {
            attempts.push(AttemptRecord {
                attempt: n,
                replica,
                reason: Some(Reason::NonzeroExit),
                exit_code: None,
                duration: 0.0,
                log_excerpt: e.to_string(),
            });
            last_reason = Some(Reason::NonzeroExit);
            continue;
        }
        let raw = match (work, ctx.config.adapter) {
            (Work::Task, Adapter::Shell) => shell_task(node, inputs, replica, n, &dir),
            (Work::MapReduce(spec), Adapter::Shell) => shell_mapreduce(node, spec, inputs, &dir),
            _ => simulated(node, work, inputs, ctx, replica, n, &dir),
        };
        let reason = detect(&raw, &patterns).map(|r| match work {
            Work::Transfer(_) => Reason::TransferFailure,
            _ => r,
        });
        attempts.push(AttemptRecord {
            attempt: n,
            replica,
            reason,
            exit_code: raw.exit_code,
            duration: raw.duration,
            log_excerpt: excerpt(&raw.log),
        });
        let produced = dir.join("out");
        if reason.is_none() {
            let final_dir = base.join("out");
            let _ = remove_any(&final_dir);
            let moved =
                fs::rename(&produced, &final_dir).or_else(|_| copy_tree(&produced, &final_dir));
            if moved.is_ok() {
                let outputs = output_ports(node, work)
                    .into_iter()
                    .map(|p| {
                        let path = final_dir.join(&p);
                        (p, path)
                    })
                    .collect();
                return LoopResult {
                    attempts,
                    outputs: Some(outputs),
                    last_reason: None,
                };
            }
        }
        // Retries start clean.
        let _ = remove_any(&produced);
        last_reason = reason.or(Some(Reason::NonzeroExit));
    }
    LoopResult {
        attempts,
        outputs: None,
        last_reason,
    }
}

fn conclude(node: &PlanNode, result: LoopResult, fallback: Reason) -> TaskOutcome {
    match result.outputs {
        Some(outputs) => TaskOutcome {
            status: Status::Success,
            attempts: result.attempts,
            outputs,
            signal: None,
        },
        None => failed(
            node,
            result.attempts,
            result.last_reason.unwrap_or(fallback),
        ),
    }
}

fn failed(node: &PlanNode, attempts: Vec<AttemptRecord>, reason: Reason) -> TaskOutcome {
    let signal = FailureSignal {
        origin: node.id.clone(),
        attempt_count: (attempts.len() as u32).max(1),
        reason,
    };
    TaskOutcome {
        status: if node.config.ignorar {
            Status::Ignored
        } else {
            Status::Failed
        },
        attempts,
        outputs: IndexMap::new(),
        signal: Some(signal),
    }
}

/// Runs an Executavel task: attempts until one passes detection or the
/// budget runs out.
pub fn execute_task(node: &PlanNode, inputs: &[InputFile], ctx: &AttemptContext) -> TaskOutcome {
    if node.config.copies.is_some() {
        return execute_masked(node, inputs, ctx);
    }
    let r = attempt_loop(node, &Work::Task, inputs, ctx, None, &ctx.node_dir);
    conclude(node, r, Reason::NonzeroExit)
}

/// Runs a MapReduce flow as one unit of work.
pub fn execute_mapreduce(
    node: &PlanNode,
    inputs: &[InputFile],
    ctx: &AttemptContext,
) -> TaskOutcome {
    let Some(spec) = &node.mapreduce else {
        return failed(node, Vec::new(), Reason::NonzeroExit);
    };
    let r = attempt_loop(
        node,
        &Work::MapReduce(spec),
        inputs,
        ctx,
        None,
        &ctx.node_dir,
    );
    conclude(node, r, Reason::NonzeroExit)
}

/// Comparable form of an artifact: file bytes, or every file of a
/// directory with its relative path.
fn fingerprint(path: &Path) -> Option<Vec<u8>> {
    fn walk(root: &Path, path: &Path, out: &mut Vec<u8>) -> std::io::Result<()> {
        if path.is_dir() {
            let mut entries: Vec<_> = fs::read_dir(path)?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()?;
            entries.sort();
            for e in entries {
                walk(root, &e, out)?;
            }
        } else {
            let rel = path.strip_prefix(root).unwrap_or(path);
            let bytes = fs::read(path)?;
            out.extend(rel.as_os_str().as_encoded_bytes());
            out.push(0);
            out.extend((bytes.len() as u64).to_le_bytes());
            out.extend(bytes);
        }
        Ok(())
    }
    let mut out = vec![path.is_dir() as u8];
    walk(path, path, &mut out).ok()?;
    Some(out)
}

/// Majority vote over replica outputs. Returns, per port, the index of the
/// first replica holding the winning artifact.
pub fn vote(
    replicas: &[Option<IndexMap<String, PathBuf>>],
    ports: &[String],
) -> Option<IndexMap<String, usize>> {
    let n = replicas.len();
    let healthy = replicas.iter().filter(|r| r.is_some()).count();
    if healthy * 2 <= n {
        return None;
    }
    let mut winners = IndexMap::new();
    for port in ports {
        let prints: Vec<Option<Vec<u8>>> = replicas
            .iter()
            .map(|r| {
                r.as_ref()
                    .and_then(|o| o.get(port))
                    .and_then(|p| fingerprint(p))
            })
            .collect();
        let winner = (0..n).find(|&i| {
            prints[i].is_some() && prints.iter().filter(|p| **p == prints[i]).count() * 2 > n
        })?;
        winners.insert(port.clone(), winner);
    }
    Some(winners)
}

/// Runs `num_copias` replicas, each with its own attempt budget, and keeps
/// the artifacts a strict majority agrees on byte for byte.
pub fn execute_masked(node: &PlanNode, inputs: &[InputFile], ctx: &AttemptContext) -> TaskOutcome {
    let copies = node.config.copies.unwrap_or(3).max(1) as usize;
    let width = ctx.config.jobs.max(1);
    let mut results: Vec<Option<LoopResult>> = (0..copies).map(|_| None).collect();
    for chunk_start in (0..copies).step_by(width) {
        let chunk: Vec<usize> = (chunk_start..copies.min(chunk_start + width)).collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&r| {
                    let base = ctx.node_dir.join(format!("replica-{r}"));
                    s.spawn(move || {
                        attempt_loop(node, &Work::Task, inputs, ctx, Some(r as u32), &base)
                    })
                })
                .collect();
            for (r, h) in chunk.iter().zip(handles) {
                results[*r] = Some(h.join().expect("replica thread"));
            }
        });
    }
    let results: Vec<LoopResult> = results
        .into_iter()
        .map(|r| r.expect("replica ran"))
        .collect();
    let outputs: Vec<Option<IndexMap<String, PathBuf>>> =
        results.iter().map(|r| r.outputs.clone()).collect();
    let attempts: Vec<AttemptRecord> = results.into_iter().flat_map(|r| r.attempts).collect();

    let Some(winners) = vote(&outputs, &node.outputs) else {
        return failed(node, attempts, Reason::NoMajority);
    };
    let final_dir = ctx.node_dir.join("out");
    let _ = remove_any(&final_dir);
    let mut chosen = IndexMap::new();
    for (port, r) in winners {
        let src = &outputs[r].as_ref().expect("winner is healthy")[&port];
        let dst = final_dir.join(&port);
        if copy_tree(src, &dst).is_err() {
            return failed(node, attempts, Reason::NonzeroExit);
        }
        chosen.insert(port, dst);
    }
    TaskOutcome {
        status: Status::Success,
        attempts,
        outputs: chosen,
        signal: None,
    }
}

/// Delivers `source` to every destination role, retrying transfer faults
/// within the connector's attempt budget.
pub fn transfer(node: &PlanNode, source: &Path, ctx: &AttemptContext) -> TaskOutcome {
    let r = attempt_loop(node, &Work::Transfer(source), &[], ctx, None, &ctx.node_dir);
    match r.outputs {
        Some(out) => {
            let payload = out[&transfer_name(source)].clone();
            TaskOutcome {
                status: Status::Success,
                attempts: r.attempts,
                outputs: node
                    .outputs
                    .iter()
                    .map(|role| (role.clone(), payload.clone()))
                    .collect(),
                signal: None,
            }
        }
        None => failed(node, r.attempts, Reason::TransferFailure),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn replicas(values: &[Option<&str>], dir: &Path) -> Vec<Option<IndexMap<String, PathBuf>>> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.map(|text| {
                    let p = dir.join(format!("r{i}"));
                    fs::write(&p, text).unwrap();
                    [("o".to_string(), p)].into_iter().collect()
                })
            })
            .collect()
    }

    #[test]
    fn vote_majority_and_tie() {
        let d = tempfile::tempdir().unwrap();
        let ports = vec!["o".to_string()];
        let v = vote(
            &replicas(&[Some("x"), Some("x"), Some("y")], d.path()),
            &ports,
        )
        .unwrap();
        assert_eq!(v["o"], 0);
        assert!(vote(
            &replicas(&[Some("x"), Some("y"), Some("z")], d.path()),
            &ports
        )
        .is_none());
        assert!(vote(&replicas(&[Some("x"), None, None], d.path()), &ports).is_none());
        let v = vote(&replicas(&[None, Some("y"), Some("y")], d.path()), &ports).unwrap();
        assert_eq!(v["o"], 1);
    }

    #[test]
    fn detection_order() {
        let raw = |exit: Option<i32>, timed_out: bool, log: &str| RawAttempt {
            exit_code: exit,
            timed_out,
            log: log.into(),
            duration: 0.0,
        };
        let pats = compile_patterns(&[r"(?i)\berror\b".to_string()]);
        assert_eq!(
            detect(&raw(None, true, "ERROR"), &pats),
            Some(Reason::Timeout)
        );
        assert_eq!(
            detect(&raw(Some(2), false, "error"), &pats),
            Some(Reason::NonzeroExit)
        );
        assert_eq!(
            detect(&raw(Some(0), false, "an Error here"), &pats),
            Some(Reason::LogMatch)
        );
        assert_eq!(detect(&raw(Some(0), false, "errors"), &pats), None);
        assert_eq!(detect(&raw(Some(0), false, "error"), &[]), None);
    }

    #[test]
    fn long_logs_are_trimmed_from_the_front() {
        let log = format!("{}tail", "x".repeat(500));
        let e = excerpt(&log);
        assert_eq!(e.len(), 200);
        assert!(e.ends_with("tail"));
    }
}
