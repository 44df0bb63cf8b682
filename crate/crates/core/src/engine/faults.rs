//! Scripted outcomes for the simulated adapter.
//!
//! A script is a JSON object whose keys select attempts and whose values
//! describe what the attempt does:
//!
//! ```json
//! { "psipred": { "outcome": "fail", "log_text": "error: no db" },
//!   "sw.t#2@1": { "outcome": "timeout" },
//!   "vote%1": { "outputs": { "o": "y" } } }
//! ```
//!
//! Keys are `path[#instance][%replica][@attempt]`. Among the keys matching
//! an attempt, the one naming the most selectors wins.

use std::path::Path;
use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::EngineError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedOutcome {
    #[default]
    Ok,
    Fail,
    Timeout,
}

/// Output written by a simulated attempt: file contents, or a directory of
/// named files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedOutput {
    File(String),
    Dir(IndexMap<String, String>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEntry {
    #[serde(default)]
    pub outcome: ScriptedOutcome,
    pub exit_code: Option<i32>,
    pub log_text: Option<String>,
    /// Seconds the attempt takes.
    pub delay: Option<f64>,
    pub outputs: Option<IndexMap<String, ScriptedOutput>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct FaultKey {
    path: String,
    instance: Option<usize>,
    replica: Option<u32>,
    attempt: Option<u32>,
}

impl FaultKey {
    fn parse(key: &str) -> Option<FaultKey> {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| {
            Regex::new(r"^([^#%@\s]+)(?:#(\d+))?(?:%(\d+))?(?:@(\d+))?$").expect("valid regex")
        });
        let c = re.captures(key)?;
        Some(FaultKey {
            path: c[1].to_string(),
            instance: c.get(2).and_then(|m| m.as_str().parse().ok()),
            replica: c.get(3).and_then(|m| m.as_str().parse().ok()),
            attempt: c.get(4).and_then(|m| m.as_str().parse().ok()),
        })
    }

    fn matches(&self, path: &str, instance: usize, replica: Option<u32>, attempt: u32) -> bool {
        self.path == path
            && self.instance.is_none_or(|i| i == instance)
            && self.replica.is_none_or(|r| Some(r) == replica)
            && self.attempt.is_none_or(|a| a == attempt)
    }

    fn specificity(&self) -> (usize, bool, bool, bool) {
        let (a, i, r) = (
            self.attempt.is_some(),
            self.instance.is_some(),
            self.replica.is_some(),
        );
        (a as usize + i as usize + r as usize, a, i, r)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaultScript {
    entries: Vec<(FaultKey, FaultEntry)>,
}

impl FaultScript {
    pub fn from_json(text: &str) -> Result<FaultScript, EngineError> {
        let raw: IndexMap<String, FaultEntry> =
            serde_json::from_str(text).map_err(|e| EngineError::FaultScript(e.to_string()))?;
        let mut entries = Vec::with_capacity(raw.len());
        for (key, entry) in raw {
            let parsed = FaultKey::parse(&key).ok_or_else(|| {
                EngineError::FaultScript(format!(
                    "bad key `{key}`; expected path[#instance][%replica][@attempt]"
                ))
            })?;
            entries.push((parsed, entry));
        }
        Ok(FaultScript { entries })
    }

    pub fn load(path: &Path) -> Result<FaultScript, EngineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::FaultScript(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Entry for attempt `attempt` (1-based) of element `path`.
    pub fn lookup(
        &self,
        path: &str,
        instance: usize,
        replica: Option<u32>,
        attempt: u32,
    ) -> Option<&FaultEntry> {
        self.entries
            .iter()
            .filter(|(k, _)| k.matches(path, instance, replica, attempt))
            .max_by_key(|(k, _)| k.specificity())
            .map(|(_, e)| e)
    }
}
