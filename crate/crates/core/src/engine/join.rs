use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::planner::{JoinFormat, JoinManifest};

#[derive(Debug, thiserror::Error)]
pub enum JoinError {
    #[error("{format:?} join expects {expected} parts, but {} is not one", .path.display())]
    KindMismatch {
        format: JoinFormat,
        expected: &'static str,
        path: PathBuf,
    },
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> JoinError + '_ {
    move |source| JoinError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Copies a file or directory tree.
pub(crate) fn copy_tree(from: &Path, to: &Path) -> io::Result<()> {
    if from.is_dir() {
        fs::create_dir_all(to)?;
        for entry in fs::read_dir(from)? {
            let entry = entry?;
            copy_tree(&entry.path(), &to.join(entry.file_name()))?;
        }
        Ok(())
    } else {
        if let Some(parent) = to.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::copy(from, to).map(|_| ())
    }
}

pub(crate) fn remove_any(path: &Path) -> io::Result<()> {
    match fs::symlink_metadata(path) {
        Ok(m) if m.is_dir() => fs::remove_dir_all(path),
        Ok(_) => fs::remove_file(path),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e),
    }
}

/// Places `name` in `dir`, renaming to `name.__i<idx>` on collision.
fn place(dir: &Path, name: &std::ffi::OsStr, idx: usize, from: &Path) -> Result<(), JoinError> {
    let mut target = dir.join(name);
    if target.exists() {
        let mut renamed = name.to_os_string();
        renamed.push(format!(".__i{idx}"));
        target = dir.join(renamed);
    }
    copy_tree(from, &target).map_err(io_err(&target))
}

/// Materializes a join at `manifest.destino`, replacing anything there.
///
/// `include` copies each part file into the destination directory, `merge`
/// copies the entries of each part directory into it, and `concat` appends
/// part files into one file. Parts are taken in instance order, so the
/// result never depends on completion order. Name collisions keep the
/// earlier instance's entry and rename the later one to `name.__i<idx>`.
pub fn apply_join(manifest: &JoinManifest) -> Result<PathBuf, JoinError> {
    let dest = &manifest.destino;
    remove_any(dest).map_err(io_err(dest))?;
    if let Some(parent) = dest.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mismatch = |expected, path: &Path| JoinError::KindMismatch {
        format: manifest.formato,
        expected,
        path: path.to_path_buf(),
    };
    match manifest.formato {
        JoinFormat::Concat => {
            let mut bytes = Vec::new();
            for part in &manifest.parts {
                if !part.artifact.is_file() {
                    return Err(mismatch("file", &part.artifact));
                }
                bytes.extend(fs::read(&part.artifact).map_err(io_err(&part.artifact))?);
            }
            fs::write(dest, bytes).map_err(io_err(dest))?;
        }
        JoinFormat::Include => {
            fs::create_dir_all(dest).map_err(io_err(dest))?;
            for part in &manifest.parts {
                if !part.artifact.is_file() {
                    return Err(mismatch("file", &part.artifact));
                }
                let name = part.artifact.file_name().unwrap_or_default();
                place(dest, name, part.instance_index, &part.artifact)?;
            }
        }
        JoinFormat::Merge => {
            fs::create_dir_all(dest).map_err(io_err(dest))?;
            for part in &manifest.parts {
                if !part.artifact.is_dir() {
                    return Err(mismatch("directory", &part.artifact));
                }
                let mut entries: Vec<_> = fs::read_dir(&part.artifact)
                    .map_err(io_err(&part.artifact))?
                    .collect::<Result<_, _>>()
                    .map_err(io_err(&part.artifact))?;
                entries.sort_by_key(|e| e.file_name());
                for entry in entries {
                    place(dest, &entry.file_name(), part.instance_index, &entry.path())?;
                }
            }
        }
    }
    Ok(dest.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::JoinPart;

    fn manifest(formato: JoinFormat, parts: Vec<(usize, PathBuf)>, dest: PathBuf) -> JoinManifest {
        JoinManifest {
            port: "sw.r".into(),
            formato,
            parts: parts
                .into_iter()
                .map(|(instance_index, artifact)| JoinPart {
                    instance_index,
                    artifact,
                })
                .collect(),
            destino: dest,
        }
    }

    #[test]
    fn concat_in_index_order() {
        let d = tempfile::tempdir().unwrap();
        let a = d.path().join("a");
        let b = d.path().join("b");
        fs::write(&a, "a\n").unwrap();
        fs::write(&b, "b\n").unwrap();
        let out = apply_join(&manifest(
            JoinFormat::Concat,
            vec![(0, a), (1, b)],
            d.path().join("out.txt"),
        ))
        .unwrap();
        assert_eq!(fs::read(out).unwrap(), b"a\nb\n");
    }

    #[test]
    fn include_rejects_directories() {
        let d = tempfile::tempdir().unwrap();
        let sub = d.path().join("sub");
        fs::create_dir(&sub).unwrap();
        let err = apply_join(&manifest(
            JoinFormat::Include,
            vec![(0, sub)],
            d.path().join("o"),
        ))
        .unwrap_err();
        assert!(matches!(err, JoinError::KindMismatch { .. }));
    }
}
