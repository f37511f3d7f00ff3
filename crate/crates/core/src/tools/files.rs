//! Workspace-confined file access.

use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use crate::agent::ToolError;

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Workspace { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Lexically normalizes `rel` and rejects anything that leaves the root.
    pub fn resolve(&self, rel: &str) -> Result<PathBuf, ToolError> {
        let normalized = normalize_relative(rel).ok_or_else(|| ToolError::PathEscape(rel.to_string()))?;
        let full = self.root.join(&normalized);
        // Symlinks inside the workspace must not point outside it.
        if let (Ok(root), Some(existing)) = (self.root.canonicalize(), deepest_existing(&full)) {
            if let Ok(canon) = existing.canonicalize() {
                if !canon.starts_with(&root) {
                    return Err(ToolError::PathEscape(rel.to_string()));
                }
            }
        }
        Ok(full)
    }

    /// Writes via a temporary sibling and rename, so readers never see a
    /// partial file.
    pub fn save(&self, rel: &str, content: &[u8]) -> Result<PathBuf, ToolError> {
        let target = self.resolve(rel)?;
        if rel.trim().is_empty() || target == self.root {
            return Err(ToolError::InvalidArguments("save needs a file path".into()));
        }
        let parent = target.parent().unwrap_or(&self.root);
        fs::create_dir_all(parent)?;
        let name = target.file_name().and_then(|n| n.to_str()).unwrap_or("file");
        let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(content)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &target)?;
        Ok(target)
    }

    pub fn read(&self, rel: &str) -> Result<Vec<u8>, ToolError> {
        let path = self.resolve(rel)?;
        if !path.is_file() {
            return Err(ToolError::NotFound(rel.to_string()));
        }
        Ok(fs::read(path)?)
    }

    /// Sorted, `/`-separated paths of all files under `rel`, relative to the
    /// workspace root.
    pub fn list(&self, rel: &str) -> Result<Vec<String>, ToolError> {
        let dir = self.resolve(rel)?;
        if !dir.exists() {
            return Err(ToolError::NotFound(rel.to_string()));
        }
        let mut out = Vec::new();
        collect_files(&self.root, &dir, &mut out)?;
        out.sort();
        Ok(out)
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    if dir.is_file() {
        out.push(relative_string(root, dir));
        return Ok(());
    }
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let ft = entry.file_type()?;
        if ft.is_dir() {
            collect_files(root, &path, out)?;
        } else if ft.is_file() {
            out.push(relative_string(root, &path));
        }
    }
    Ok(())
}

fn relative_string(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn deepest_existing(path: &Path) -> Option<PathBuf> {
    let mut p = path.to_path_buf();
    loop {
        if p.exists() {
            return Some(p);
        }
        if !p.pop() {
            return None;
        }
    }
}

/// `None` if the path is absolute or climbs above its starting point.
pub fn normalize_relative(rel: &str) -> Option<PathBuf> {
    let path = Path::new(rel);
    let mut parts: Vec<&std::ffi::OsStr> = Vec::new();
    for c in path.components() {
        match c {
            Component::Normal(s) => parts.push(s),
            Component::CurDir => {}
            Component::ParentDir => {
                parts.pop()?;
            }
            Component::RootDir | Component::Prefix(_) => return None,
        }
    }
    Some(parts.iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_and_listing() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path()).unwrap();
        let bytes = b"line\r\n\x00\xff tail";
        ws.save("b.py", bytes).unwrap();
        ws.save("a.py", b"x").unwrap();
        assert_eq!(ws.read("b.py").unwrap(), bytes);
        assert_eq!(ws.list(".").unwrap(), ["a.py", "b.py"]);
        ws.save("tests/test_env.py", b"t").unwrap();
        assert_eq!(ws.list("").unwrap(), ["a.py", "b.py", "tests/test_env.py"]);
        assert_eq!(ws.list("tests").unwrap(), ["tests/test_env.py"]);
    }

    #[test]
    fn escapes_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path().join("task")).unwrap();
        assert!(matches!(ws.save("../x", b""), Err(ToolError::PathEscape(_))));
        assert!(matches!(ws.read("/etc/passwd"), Err(ToolError::PathEscape(_))));
        assert!(matches!(ws.read("a/../../x"), Err(ToolError::PathEscape(_))));
        assert!(matches!(ws.read("nope.txt"), Err(ToolError::NotFound(_))));
        ws.save("a/../inside.txt", b"ok").unwrap();
        assert_eq!(ws.read("inside.txt").unwrap(), b"ok");
    }

    #[cfg(unix)]
    #[test]
    fn symlink_out_of_workspace_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path().join("task")).unwrap();
        fs::write(dir.path().join("secret"), b"s").unwrap();
        std::os::unix::fs::symlink(dir.path().join("secret"), ws.root().join("link")).unwrap();
        assert!(matches!(ws.read("link"), Err(ToolError::PathEscape(_))));
    }

    proptest! {
        #[test]
        fn sibling_task_dirs_are_unreachable(ups in 1usize..4, name in "[a-z]{1,6}") {
            let dir = tempfile::tempdir().unwrap();
            let a = Workspace::new(dir.path().join("task_a")).unwrap();
            fs::create_dir_all(dir.path().join("task_b")).unwrap();
            fs::write(dir.path().join("task_b").join(&name), b"secret").unwrap();
            let rel = format!("{}task_b/{name}", "../".repeat(ups));
            prop_assert!(matches!(a.read(&rel), Err(ToolError::PathEscape(_))));
        }

        #[test]
        fn normalized_paths_never_climb(segs in proptest::collection::vec("(\\.\\.|\\.|[a-z]{1,3})", 0..8)) {
            let rel = segs.join("/");
            if let Some(p) = normalize_relative(&rel) {
                prop_assert!(p.components().all(|c| matches!(c, Component::Normal(_))));
            }
        }
    }
}
