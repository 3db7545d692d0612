//! The pluggable storage backend: eight functions covering directory
//! creation, linking, whole-file copy in/out, rename, removal, size
//! query, PFN formatting and full enumeration.  Backends deal only in
//! complete files; partial access is layered on top by the I/O server.
//!
//! Two backends ship: `file` (a locally mounted directory tree) and
//! `mem` (an in-memory map), observationally equivalent under this
//! interface.

use crate::error::{GridError, GridResult};
use crate::types::Pfn;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// Direction flag for the `cp` plug-in function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpDirection {
    /// Copy a local file into the storage system.
    IntoStore,
    /// Copy a stored file out to a local path.
    FromStore,
}

pub trait SePlugin: Send + Sync {
    /// Protocol token used in PFNs produced by this backend.
    fn kind(&self) -> &'static str;
    /// Create a directory (and missing parents) inside the store.
    fn mkdir(&self, dir: &str) -> GridResult<()>;
    /// Symbolic link of two files inside the store.
    fn link(&self, src: &str, dst: &str) -> GridResult<()>;
    /// Whole-file copy between a local path and a store path; returns
    /// the number of bytes copied.
    fn cp(&self, local: &Path, store_path: &str, direction: CpDirection) -> GridResult<u64>;
    /// Rename of a file inside the store.
    fn mv(&self, src: &str, dst: &str) -> GridResult<()>;
    /// Delete a file inside the store.
    fn rm(&self, path: &str) -> GridResult<()>;
    /// Size of a stored file in bytes.
    fn sizeof(&self, path: &str) -> GridResult<u64>;
    /// PFN for a stored path, given the owning service endpoint.
    fn url(&self, path: &str, host: &str, port: u16) -> Pfn;
    /// All stored files as (path, size), sorted by path.
    fn lslist(&self) -> GridResult<Vec<(String, u64)>>;
}

fn io_err(path: &str, e: std::io::Error) -> GridError {
    if e.kind() == std::io::ErrorKind::NotFound {
        GridError::not_found(format!("{path}: not found"))
    } else {
        GridError::backend_failure(format!("{path}: {e}"))
    }
}

fn check_store_path(path: &str) -> GridResult<()> {
    if path.is_empty()
        || path.starts_with('/')
        || path.split('/').any(|seg| seg.is_empty() || seg == "." || seg == "..")
    {
        return Err(GridError::bad_request(format!("bad store path {path:?}")));
    }
    Ok(())
}

/// Backend over a locally mounted directory tree.
pub struct FilePlugin {
    root: PathBuf,
}

impl FilePlugin {
    pub fn new(root: impl Into<PathBuf>) -> GridResult<FilePlugin> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| io_err("<root>", e))?;
        Ok(FilePlugin { root })
    }

    fn abs(&self, path: &str) -> GridResult<PathBuf> {
        check_store_path(path)?;
        Ok(self.root.join(path))
    }
}

impl SePlugin for FilePlugin {
    fn kind(&self) -> &'static str {
        "file"
    }

    fn mkdir(&self, dir: &str) -> GridResult<()> {
        let abs = self.abs(dir)?;
        std::fs::create_dir_all(abs).map_err(|e| io_err(dir, e))
    }

    fn link(&self, src: &str, dst: &str) -> GridResult<()> {
        let src_abs = self.abs(src)?;
        let dst_abs = self.abs(dst)?;
        if !src_abs.is_file() {
            return Err(GridError::not_found(format!("{src}: not found")));
        }
        if dst_abs.exists() {
            return Err(GridError::already_exists(format!("{dst}: exists")));
        }
        if let Some(parent) = dst_abs.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(dst, e))?;
        }
        // Hard link: content is write-once, so both names stay valid and
        // identical for their whole lifetime even if one is removed.
        std::fs::hard_link(&src_abs, &dst_abs).map_err(|e| io_err(dst, e))
    }

    fn cp(&self, local: &Path, store_path: &str, direction: CpDirection) -> GridResult<u64> {
        let abs = self.abs(store_path)?;
        match direction {
            CpDirection::IntoStore => {
                if let Some(parent) = abs.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| io_err(store_path, e))?;
                }
                // Replace rather than overwrite in place, so an existing
                // hard link to the old content stays intact.
                std::fs::remove_file(&abs).ok();
                std::fs::copy(local, &abs).map_err(|e| io_err(store_path, e))
            }
            CpDirection::FromStore => {
                if !abs.is_file() {
                    return Err(GridError::not_found(format!("{store_path}: not found")));
                }
                if let Some(parent) = local.parent() {
                    std::fs::create_dir_all(parent)
                        .map_err(|e| io_err(&local.display().to_string(), e))?;
                }
                std::fs::copy(&abs, local).map_err(|e| io_err(store_path, e))
            }
        }
    }

    fn mv(&self, src: &str, dst: &str) -> GridResult<()> {
        let src_abs = self.abs(src)?;
        let dst_abs = self.abs(dst)?;
        if !src_abs.is_file() {
            return Err(GridError::not_found(format!("{src}: not found")));
        }
        if src == dst {
            return Ok(());
        }
        if let Some(parent) = dst_abs.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(dst, e))?;
        }
        // rename(2) is a no-op when src and dst are hard links to the
        // same inode; removing dst first gives plain replace semantics.
        std::fs::remove_file(&dst_abs).ok();
        std::fs::rename(&src_abs, &dst_abs).map_err(|e| io_err(src, e))
    }

    fn rm(&self, path: &str) -> GridResult<()> {
        let abs = self.abs(path)?;
        std::fs::remove_file(abs).map_err(|e| io_err(path, e))
    }

    fn sizeof(&self, path: &str) -> GridResult<u64> {
        let abs = self.abs(path)?;
        let meta = std::fs::metadata(abs).map_err(|e| io_err(path, e))?;
        if !meta.is_file() {
            return Err(GridError::not_found(format!("{path}: not a file")));
        }
        Ok(meta.len())
    }

    fn url(&self, path: &str, host: &str, port: u16) -> Pfn {
        Pfn::new(self.kind(), host, port, path)
    }

    fn lslist(&self) -> GridResult<Vec<(String, u64)>> {
        let mut out = Vec::new();
        for entry in walkdir::WalkDir::new(&self.root).sort_by_file_name() {
            let entry = entry.map_err(|e| GridError::backend_failure(format!("lslist: {e}")))?;
            if !entry.file_type().is_file() {
                continue;
            }
            let meta = std::fs::metadata(entry.path())
                .map_err(|e| io_err(&entry.path().display().to_string(), e))?;
            let rel = entry
                .path()
                .strip_prefix(&self.root)
                .expect("walkdir stays under root")
                .to_string_lossy()
                .replace('\\', "/");
            out.push((rel, meta.len()));
        }
        out.sort();
        Ok(out)
    }
}

/// Backend over an in-memory file map, for tests and volatile SEs.
#[derive(Default)]
pub struct MemPlugin {
    files: Mutex<BTreeMap<String, Vec<u8>>>,
    dirs: Mutex<BTreeSet<String>>,
}

impl MemPlugin {
    pub fn new() -> MemPlugin {
        MemPlugin::default()
    }
}

impl SePlugin for MemPlugin {
    fn kind(&self) -> &'static str {
        "mem"
    }

    fn mkdir(&self, dir: &str) -> GridResult<()> {
        check_store_path(dir)?;
        self.dirs.lock().unwrap().insert(dir.to_string());
        Ok(())
    }

    fn link(&self, src: &str, dst: &str) -> GridResult<()> {
        check_store_path(src)?;
        check_store_path(dst)?;
        let mut files = self.files.lock().unwrap();
        let data = files
            .get(src)
            .cloned()
            .ok_or_else(|| GridError::not_found(format!("{src}: not found")))?;
        if files.contains_key(dst) {
            return Err(GridError::already_exists(format!("{dst}: exists")));
        }
        // Content is write-once, so an eager copy is observationally a link.
        files.insert(dst.to_string(), data);
        Ok(())
    }

    fn cp(&self, local: &Path, store_path: &str, direction: CpDirection) -> GridResult<u64> {
        check_store_path(store_path)?;
        match direction {
            CpDirection::IntoStore => {
                let data = std::fs::read(local)
                    .map_err(|e| io_err(&local.display().to_string(), e))?;
                let len = data.len() as u64;
                self.files.lock().unwrap().insert(store_path.to_string(), data);
                Ok(len)
            }
            CpDirection::FromStore => {
                let data = self
                    .files
                    .lock()
                    .unwrap()
                    .get(store_path)
                    .cloned()
                    .ok_or_else(|| GridError::not_found(format!("{store_path}: not found")))?;
                if let Some(parent) = local.parent() {
                    std::fs::create_dir_all(parent)
                        .map_err(|e| io_err(&local.display().to_string(), e))?;
                }
                let len = data.len() as u64;
                std::fs::write(local, data).map_err(|e| io_err(&local.display().to_string(), e))?;
                Ok(len)
            }
        }
    }

    fn mv(&self, src: &str, dst: &str) -> GridResult<()> {
        check_store_path(src)?;
        check_store_path(dst)?;
        let mut files = self.files.lock().unwrap();
        let data = files
            .remove(src)
            .ok_or_else(|| GridError::not_found(format!("{src}: not found")))?;
        files.insert(dst.to_string(), data);
        Ok(())
    }

    fn rm(&self, path: &str) -> GridResult<()> {
        check_store_path(path)?;
        self.files
            .lock()
            .unwrap()
            .remove(path)
            .map(|_| ())
            .ok_or_else(|| GridError::not_found(format!("{path}: not found")))
    }

    fn sizeof(&self, path: &str) -> GridResult<u64> {
        check_store_path(path)?;
        self.files
            .lock()
            .unwrap()
            .get(path)
            .map(|d| d.len() as u64)
            .ok_or_else(|| GridError::not_found(format!("{path}: not found")))
    }

    fn url(&self, path: &str, host: &str, port: u16) -> Pfn {
        Pfn::new(self.kind(), host, port, path)
    }

    fn lslist(&self) -> GridResult<Vec<(String, u64)>> {
        Ok(self
            .files
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.len() as u64))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_local(dir: &Path, name: &str, data: &[u8]) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, data).unwrap();
        p
    }

    #[test]
    fn cp_in_then_sizeof_reports_length() {
        let tmp = tempfile::tempdir().unwrap();
        let plugin = FilePlugin::new(tmp.path().join("store")).unwrap();
        let local = write_local(tmp.path(), "in.dat", &[7u8; 1024]);
        assert_eq!(plugin.cp(&local, "v0/aa/f1", CpDirection::IntoStore).unwrap(), 1024);
        assert_eq!(plugin.sizeof("v0/aa/f1").unwrap(), 1024);
        assert_eq!(plugin.lslist().unwrap(), vec![("v0/aa/f1".to_string(), 1024)]);
    }

    #[test]
    fn cp_out_round_trips_bytes() {
        let tmp = tempfile::tempdir().unwrap();
        let plugin = MemPlugin::new();
        let data: Vec<u8> = (0..=255u8).collect();
        let local = write_local(tmp.path(), "in.dat", &data);
        plugin.cp(&local, "v0/x", CpDirection::IntoStore).unwrap();
        let out = tmp.path().join("out.dat");
        plugin.cp(&out, "v0/x", CpDirection::FromStore).unwrap();
        assert_eq!(std::fs::read(out).unwrap(), data);
    }

    #[test]
    fn rm_and_missing_paths() {
        let tmp = tempfile::tempdir().unwrap();
        let plugin = FilePlugin::new(tmp.path().join("store")).unwrap();
        assert_eq!(plugin.rm("v0/none").unwrap_err().code.as_str(), "NotFound");
        assert_eq!(plugin.sizeof("v0/none").unwrap_err().code.as_str(), "NotFound");
        let local = write_local(tmp.path(), "in.dat", b"x");
        plugin.cp(&local, "v0/f", CpDirection::IntoStore).unwrap();
        plugin.rm("v0/f").unwrap();
        assert!(plugin.lslist().unwrap().is_empty());
    }

    #[test]
    fn store_paths_are_validated() {
        let plugin = MemPlugin::new();
        for bad in ["/abs", "a/../b", "", "a//b"] {
            assert!(plugin.sizeof(bad).is_err(), "{bad:?} must be rejected");
        }
    }

    #[test]
    fn url_matches_pfn_form() {
        let plugin = MemPlugin::new();
        let pfn = plugin.url("v0/ab/f", "se1", 7100);
        assert_eq!(pfn.to_string(), "mem://se1:7100/v0/ab/f");
    }

    /// Mirror of the operations both plugins support, for the
    /// equivalence property below.
    #[derive(Debug, Clone)]
    enum Op {
        CpIn(u8, u8),
        Mv(u8, u8),
        Rm(u8),
        Link(u8, u8),
    }

    fn op_strategy() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0u8..6, 0u8..5).prop_map(|(p, n)| Op::CpIn(p, n)),
            (0u8..6, 0u8..6).prop_map(|(a, b)| Op::Mv(a, b)),
            (0u8..6).prop_map(Op::Rm),
            (0u8..6, 0u8..6).prop_map(|(a, b)| Op::Link(a, b)),
        ]
    }

    fn path_name(i: u8) -> String {
        format!("v{}/sub/f{}", i % 2, i)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn file_and_mem_plugins_are_equivalent(ops in prop::collection::vec(op_strategy(), 1..40)) {
            let tmp = tempfile::tempdir().unwrap();
            let file = FilePlugin::new(tmp.path().join("store")).unwrap();
            let mem = MemPlugin::new();
            let plugins: [&dyn SePlugin; 2] = [&file, &mem];
            for (i, op) in ops.iter().enumerate() {
                let mut results = Vec::new();
                for plugin in plugins {
                    let r = match op {
                        Op::CpIn(p, n) => {
                            let local = write_local(tmp.path(), &format!("local{i}"), &vec![*n; *n as usize * 37 + 1]);
                            plugin.cp(&local, &path_name(*p), CpDirection::IntoStore).map(|_| ())
                        }
                        Op::Mv(a, b) => plugin.mv(&path_name(*a), &path_name(*b)),
                        Op::Rm(p) => plugin.rm(&path_name(*p)),
                        Op::Link(a, b) => plugin.link(&path_name(*a), &path_name(*b)),
                    };
                    results.push(r.map_err(|e| e.code));
                }
                prop_assert_eq!(&results[0], &results[1], "op {:?} diverged", op);
            }
            prop_assert_eq!(file.lslist().unwrap(), mem.lslist().unwrap());
        }
    }
}
