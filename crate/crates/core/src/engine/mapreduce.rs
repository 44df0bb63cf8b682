//! Local map/shuffle/reduce. Each input line is one split; map output lines
//! are `key<TAB>value`; the shuffle is a stable sort on key bytes, so each
//! key's values keep their emission order.

use std::io::Write;
use std::process::{Command, Stdio};

use crate::planner::MapReduceSpec;

/// Runs a map or reduce program over `input`. `builtin:` programs run in
/// process; anything else goes through `sh -c` when `shell` is set.
pub fn run_program(
    program: &str,
    input: &[u8],
    key: Option<&[u8]>,
    shell: bool,
) -> Result<Vec<u8>, String> {
    if let Some(name) = program.strip_prefix("builtin:") {
        return builtin(name, input, key);
    }
    if !shell {
        return Err(format!("`{program}` needs the shell adapter"));
    }
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(program)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(k) = key {
        cmd.env("OSC_KEY", String::from_utf8_lossy(k).as_ref());
    }
    let mut child = cmd.spawn().map_err(|e| format!("{program}: {e}"))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let data = input.to_vec();
    let feeder = std::thread::spawn(move || {
        let _ = stdin.write_all(&data);
    });
    let out = child
        .wait_with_output()
        .map_err(|e| format!("{program}: {e}"))?;
    let _ = feeder.join();
    if !out.status.success() {
        return Err(format!(
            "{program} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(out.stdout)
}

fn lines(input: &[u8]) -> impl Iterator<Item = &[u8]> {
    input.split(|b| *b == b'\n').filter(|l| !l.is_empty())
}

fn builtin(name: &str, input: &[u8], key: Option<&[u8]>) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    match name {
        "wordcount-map" => {
            for word in input
                .split(|b| b.is_ascii_whitespace())
                .filter(|w| !w.is_empty())
            {
                out.extend_from_slice(word);
                out.extend_from_slice(b"\t1\n");
            }
        }
        "identity-map" => {
            for line in lines(input) {
                out.extend_from_slice(line);
                out.push(b'\n');
            }
        }
        "sum-reduce" => {
            let mut total: i64 = 0;
            for line in lines(input) {
                let text = String::from_utf8_lossy(line);
                total += text
                    .trim()
                    .parse::<i64>()
                    .map_err(|_| format!("sum-reduce: `{text}` is not an integer"))?;
            }
            out.extend_from_slice(key.unwrap_or_default());
            out.extend_from_slice(format!("\t{total}\n").as_bytes());
        }
        "identity-reduce" => {
            for line in lines(input) {
                out.extend_from_slice(key.unwrap_or_default());
                out.push(b'\t');
                out.extend_from_slice(line);
                out.push(b'\n');
            }
        }
        "concat-reduce" => {
            out.extend_from_slice(key.unwrap_or_default());
            out.push(b'\t');
            out.extend_from_slice(&lines(input).collect::<Vec<_>>().join(&b","[..]));
            out.push(b'\n');
        }
        other => return Err(format!("unknown builtin program `builtin:{other}`")),
    }
    Ok(out)
}

/// Map, shuffle and reduce `input`. Output is the reduce outputs
/// concatenated in key order.
pub fn run_mapreduce(spec: &MapReduceSpec, input: &[u8], shell: bool) -> Result<Vec<u8>, String> {
    let mut pairs: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
    for split in lines(input) {
        let mut record = split.to_vec();
        record.push(b'\n');
        let emitted = run_program(&spec.map, &record, None, shell)?;
        for line in lines(&emitted) {
            let tab = line.iter().position(|b| *b == b'\t').ok_or_else(|| {
                format!(
                    "map emitted `{}` without a tab",
                    String::from_utf8_lossy(line)
                )
            })?;
            pairs.push((line[..tab].to_vec(), line[tab + 1..].to_vec()));
        }
    }
    pairs.sort_by(|a, b| a.0.cmp(&b.0));

    let mut out = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let key = &pairs[i].0;
        let mut values = Vec::new();
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == *key {
            values.extend_from_slice(&pairs[j].1);
            values.push(b'\n');
            j += 1;
        }
        out.extend(run_program(&spec.reduce, &values, Some(key), shell)?);
        i = j;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(map: &str, reduce: &str) -> MapReduceSpec {
        MapReduceSpec {
            map: map.into(),
            reduce: reduce.into(),
        }
    }

    #[test]
    fn word_count() {
        let out = run_mapreduce(
            &spec("builtin:wordcount-map", "builtin:sum-reduce"),
            b"a a b",
            false,
        )
        .unwrap();
        assert_eq!(out, b"a\t2\nb\t1\n");
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let out = run_mapreduce(
            &spec("builtin:wordcount-map", "builtin:sum-reduce"),
            b"",
            false,
        )
        .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn grouping_keeps_emission_order() {
        let out = run_mapreduce(
            &spec("builtin:identity-map", "builtin:concat-reduce"),
            b"b\t1\na\t1\nb\t2\n",
            false,
        )
        .unwrap();
        assert_eq!(out, b"a\t1\nb\t1,2\n");
    }

    #[test]
    fn map_line_without_tab_fails() {
        let err = run_mapreduce(
            &spec("builtin:identity-map", "builtin:sum-reduce"),
            b"no tab here\n",
            false,
        )
        .unwrap_err();
        assert!(err.contains("without a tab"));
    }

    #[test]
    fn external_programs_need_shell() {
        assert!(run_program("wc -l", b"", None, false).is_err());
    }

    #[test]
    fn shell_reduce_sees_key() {
        let out = run_program("printf '%s' \"$OSC_KEY\"; cat", b"v\n", Some(b"k"), true).unwrap();
        assert_eq!(out, b"kv\n");
    }
}
