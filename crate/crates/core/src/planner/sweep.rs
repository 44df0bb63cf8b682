use std::fmt;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::PlanError;
use crate::model::{Direction, PropertyValue};
use crate::typesystem::{ResolvedElement, BIFURCACAO};

/// What a Bifurcacao port iterates over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Directory(PathBuf),
    Values(Vec<String>),
    Repetitions(u64),
}

impl Dataset {
    /// Reads the dataset bound on a Bifurcacao port. Relative directories
    /// are taken from `base_dir`.
    pub fn from_port(
        props: &crate::typesystem::EffectiveProperties,
        base_dir: &Path,
    ) -> Option<Dataset> {
        if let Some(PropertyValue::Str(dir)) = props.get("diretorio") {
            return Some(Dataset::Directory(base_dir.join(dir)));
        }
        if let Some(PropertyValue::Set(values)) = props.get("valores") {
            return Some(Dataset::Values(values.clone()));
        }
        if let Some(PropertyValue::Int(n)) = props.get("repeticoes") {
            return Some(Dataset::Repetitions((*n).max(0) as u64));
        }
        None
    }

    /// Parses the right-hand side of `--bind`: `values:a,b`, `repeat:N`, or
    /// a directory path.
    pub fn parse(spec: &str) -> Result<Dataset, String> {
        if let Some(rest) = spec.strip_prefix("values:") {
            let values = if rest.is_empty() {
                Vec::new()
            } else {
                rest.split(',').map(str::to_string).collect()
            };
            return Ok(Dataset::Values(values));
        }
        if let Some(rest) = spec.strip_prefix("repeat:") {
            return rest
                .parse()
                .map(Dataset::Repetitions)
                .map_err(|_| format!("`{rest}` is not a repetition count"));
        }
        let dir = spec.strip_prefix("dir:").unwrap_or(spec);
        if dir.is_empty() {
            return Err("empty dataset".into());
        }
        Ok(Dataset::Directory(PathBuf::from(dir)))
    }

    /// Items in iteration order. Directories list their regular files,
    /// non-recursively, sorted by the bytes of the file name.
    pub fn items(&self) -> Result<Vec<Item>, PlanError> {
        Ok(match self {
            Dataset::Directory(dir) => {
                let entries = std::fs::read_dir(dir).map_err(|e| PlanError::Dataset {
                    path: dir.clone(),
                    message: e.to_string(),
                })?;
                let mut files = Vec::new();
                for entry in entries {
                    let entry = entry.map_err(|e| PlanError::Dataset {
                        path: dir.clone(),
                        message: e.to_string(),
                    })?;
                    let is_file = std::fs::metadata(entry.path())
                        .map(|m| m.is_file())
                        .unwrap_or(false);
                    if is_file {
                        files.push(entry.path());
                    }
                }
                files.sort_by(|a, b| {
                    let a = a.file_name().map(|n| n.as_encoded_bytes().to_vec());
                    let b = b.file_name().map(|n| n.as_encoded_bytes().to_vec());
                    a.cmp(&b)
                });
                files.into_iter().map(Item::File).collect()
            }
            Dataset::Values(v) => v.iter().cloned().map(Item::Value).collect(),
            Dataset::Repetitions(n) => (0..*n).map(Item::Index).collect(),
        })
    }
}

/// One element of a dataset, fed to a single sweep instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Item {
    File(PathBuf),
    Value(String),
    Index(u64),
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Item::File(p) => write!(f, "{}", p.display()),
            Item::Value(v) => f.write_str(v),
            Item::Index(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortBinding {
    pub port: String,
    pub items: Vec<Item>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceAssignment {
    pub instance_index: usize,
    pub items: IndexMap<String, Item>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepExpansion {
    pub flow: String,
    pub bindings: Vec<PortBinding>,
    pub instances: Vec<InstanceAssignment>,
}

/// Bifurcacao input ports of `flow`, in declaration order.
pub fn fork_ports(
    flow: &ResolvedElement,
) -> impl Iterator<Item = &crate::typesystem::ResolvedInterface> {
    flow.interfaces
        .iter()
        .filter(|i| i.direction == Direction::Input && i.has(BIFURCACAO))
}

/// Datasets declared on the flow's own Bifurcacao ports.
pub fn declared_datasets(
    flow: &ResolvedElement,
    base_dir: &Path,
) -> Result<IndexMap<String, Dataset>, PlanError> {
    let mut out = IndexMap::new();
    for port in fork_ports(flow) {
        let ds = Dataset::from_port(&port.properties, base_dir).ok_or_else(|| {
            PlanError::MissingBinding {
                port: format!("{}.{}", flow.path, port.name),
            }
        })?;
        out.insert(port.name.clone(), ds);
    }
    Ok(out)
}

/// Full cross product of the bound datasets. The first Bifurcacao port
/// varies slowest; instance indices are dense from 0.
pub fn expand_sweep(
    flow: &ResolvedElement,
    bindings: &IndexMap<String, Dataset>,
) -> Result<SweepExpansion, PlanError> {
    let mut ports = Vec::new();
    for port in fork_ports(flow) {
        let qualified = format!("{}.{}", flow.path, port.name);
        let ds = bindings.get(&port.name).ok_or(PlanError::MissingBinding {
            port: qualified.clone(),
        })?;
        let items = ds.items()?;
        if items.is_empty() {
            return Err(PlanError::EmptyDataset { port: qualified });
        }
        ports.push(PortBinding {
            port: port.name.clone(),
            items,
        });
    }
    if ports.is_empty() {
        return Err(PlanError::MissingBinding {
            port: format!("{}.<Bifurcacao>", flow.path),
        });
    }

    let total: usize = ports.iter().map(|p| p.items.len()).product();
    let mut instances = Vec::with_capacity(total);
    let mut digits = vec![0usize; ports.len()];
    for instance_index in 0..total {
        let items = ports
            .iter()
            .zip(&digits)
            .map(|(p, d)| (p.port.clone(), p.items[*d].clone()))
            .collect();
        instances.push(InstanceAssignment {
            instance_index,
            items,
        });
        for pos in (0..digits.len()).rev() {
            digits[pos] += 1;
            if digits[pos] < ports[pos].items.len() {
                break;
            }
            digits[pos] = 0;
        }
    }
    Ok(SweepExpansion {
        flow: flow.path.clone(),
        bindings: ports,
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_bind_specs() {
        assert_eq!(
            Dataset::parse("values:a,b").unwrap(),
            Dataset::Values(vec!["a".into(), "b".into()])
        );
        assert_eq!(Dataset::parse("repeat:5").unwrap(), Dataset::Repetitions(5));
        assert_eq!(
            Dataset::parse("data/in").unwrap(),
            Dataset::Directory("data/in".into())
        );
        assert!(Dataset::parse("repeat:x").is_err());
    }

    #[test]
    fn directory_items_sorted_bytewise_and_flat() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.txt", "B.txt", "a.txt"] {
            std::fs::write(dir.path().join(name), name).unwrap();
        }
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        let items = Dataset::Directory(dir.path().into()).items().unwrap();
        let names: Vec<String> = items
            .iter()
            .map(|i| match i {
                Item::File(p) => p.file_name().unwrap().to_string_lossy().into_owned(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(names, ["B.txt", "a.txt", "b.txt"]);
    }

    #[test]
    fn repetitions_are_indices() {
        assert_eq!(
            Dataset::Repetitions(3).items().unwrap(),
            vec![Item::Index(0), Item::Index(1), Item::Index(2)]
        );
    }
}
