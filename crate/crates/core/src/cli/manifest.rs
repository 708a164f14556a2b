use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha1::{Digest, Sha1};

use crate::dataio::list_txt_files;
use crate::error::{Error, Result};

/// Git blob id: SHA-1 over `"blob <len>\0"` followed by the content.
pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().fold(String::with_capacity(40), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Hashes of an input path: the file itself, or every `*.txt` of a directory.
pub fn hash_input(path: &Path) -> Result<Vec<(PathBuf, String)>> {
    let files = if path.is_dir() { list_txt_files(path)? } else { vec![path.to_path_buf()] };
    files
        .into_iter()
        .map(|f| {
            let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
            Ok((f, git_blob_hash(&bytes)))
        })
        .collect()
}

/// Output files staged in memory and written together, so a failed run
/// leaves nothing behind.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, path: impl Into<PathBuf>, content: impl Into<Vec<u8>>) {
        self.files.push((path.into(), content.into()));
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Writes every file; on the first failure removes what was written,
    /// including directories this call created.
    pub fn commit(&self) -> Result<()> {
        let mut written: Vec<&Path> = Vec::new();
        let mut made_dirs: Vec<PathBuf> = Vec::new();
        let result = (|| {
            for (path, bytes) in &self.files {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    let mut missing = Vec::new();
                    let mut cur = Some(parent);
                    while let Some(d) = cur.filter(|d| !d.as_os_str().is_empty() && !d.exists()) {
                        missing.push(d.to_path_buf());
                        cur = d.parent();
                    }
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                    made_dirs.extend(missing.into_iter().rev());
                }
                fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
                written.push(path);
            }
            Ok(())
        })();
        if result.is_err() {
            for p in written {
                let _ = fs::remove_file(p);
            }
            for d in made_dirs.iter().rev() {
                let _ = fs::remove_dir(d);
            }
        }
        result
    }
}

#[derive(Debug, Default)]
pub struct Manifest {
    pub command: String,
    /// (key, value, source) in declaration order.
    pub config: Vec<(String, String, &'static str)>,
    pub inputs: Vec<(String, PathBuf, String)>,
}

impl Manifest {
    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        for (p, h) in hash_input(path)? {
            self.inputs.push((role.to_string(), p, h));
        }
        Ok(())
    }

    pub fn render(&self, outputs: &Artifacts) -> String {
        let mut s = String::from("# gliding run manifest\n");
        let _ = writeln!(s, "tool: gliding {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "command: {}", self.command);
        for (k, v, src) in &self.config {
            let _ = writeln!(s, "config: {k} = {v} ({src})");
        }
        for (role, p, h) in &self.inputs {
            let _ = writeln!(s, "input: {role} {} {h}", p.display());
        }
        for p in outputs.paths() {
            let _ = writeln!(s, "output: {}", p.display());
        }
        s
    }
}

/// `<out>.manifest`, next to the output file or directory.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    if s.to_string_lossy().ends_with('/') {
        s = PathBuf::from(out.to_string_lossy().trim_end_matches('/')).into_os_string();
    }
    s.push(".manifest");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git() {
        // `printf 'hello\n' | git hash-object --stdin`
        assert_eq!(git_blob_hash(b"hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
        // `git hash-object /dev/null`
        assert_eq!(git_blob_hash(b""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    }

    #[test]
    fn commit_rolls_back_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("blocker");
        fs::write(&blocker, "x").unwrap();
        let mut a = Artifacts::default();
        a.add(dir.path().join("new/ok.txt"), "fine");
        a.add(blocker.join("cannot.txt"), "nope");
        assert!(a.commit().is_err());
        assert!(!dir.path().join("new").exists());
        assert!(blocker.exists());
    }

    #[test]
    fn manifest_paths() {
        assert_eq!(manifest_path(Path::new("out/r.txt")), PathBuf::from("out/r.txt.manifest"));
        assert_eq!(manifest_path(Path::new("out/")), PathBuf::from("out.manifest"));
    }
}
