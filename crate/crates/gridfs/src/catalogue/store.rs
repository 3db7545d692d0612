//! The virtual file catalogue: a hierarchical tree of directory tables
//! mapping logical file names to a master physical file name plus
//! replicas, with unix-style ownership and permissions and per-entry
//! metadata tags.

use crate::error::{GridError, GridResult};
use crate::types::{Access, Guid, LfnPath, Mode, Pfn, Principal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Suffix reserved for the read-only metadata virtual files.
pub const META_SUFFIX: &str = ".meta";

/// One logical file: the directory-table row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogueEntry {
    pub basename: String,
    pub guid: Guid,
    pub size: u64,
    pub owner: String,
    pub group: String,
    pub perms: Mode,
    pub master_pfn: Pfn,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    /// Content of catalogue-resident virtual DB files (`db://` master
    /// PFNs); regular files keep their bytes on storage elements.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline: Option<String>,
}

/// One virtual directory: a table of file entries plus sub-tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectoryTable {
    pub owner: String,
    pub group: String,
    pub perms: Mode,
    pub entries: BTreeMap<String, CatalogueEntry>,
    pub subdirs: BTreeMap<String, DirectoryTable>,
}

impl DirectoryTable {
    fn new(owner: &str, group: &str, perms: Mode) -> DirectoryTable {
        DirectoryTable {
            owner: owner.to_string(),
            group: group.to_string(),
            perms,
            entries: BTreeMap::new(),
            subdirs: BTreeMap::new(),
        }
    }
}

/// A known storage element: service address plus site label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeInfo {
    pub name: String,
    pub addr: String,
    pub site: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Dir,
    File,
    Meta,
}

/// One row of a directory listing, including virtual `.meta` entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ListedEntry {
    pub name: String,
    pub kind: EntryKind,
    pub size: u64,
    pub owner: String,
    pub group: String,
    pub perms: Mode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedLocation {
    pub pfn: Pfn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Resolved {
    pub guid: Guid,
    pub size: u64,
    /// Master PFN first, then replicas in registration order.
    pub locations: Vec<ResolvedLocation>,
}

/// The whole catalogue state.  Mutations go through the service layer,
/// which serializes them and journals each applied operation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Catalogue {
    root: DirectoryTable,
    /// All file LFNs -> canonical path of the directory table holding
    /// them.  Directories are not indexed.
    index: BTreeMap<String, String>,
    /// Replica locations per LFN, excluding the master PFN.
    replicas: BTreeMap<String, Vec<Pfn>>,
    /// Live GUIDs, for uniqueness enforcement.
    guids: BTreeSet<Guid>,
    superuser: String,
    ses: BTreeMap<String, SeInfo>,
}

impl Catalogue {
    pub fn new(superuser: &str) -> Catalogue {
        Catalogue {
            root: DirectoryTable::new(superuser, superuser, Mode::new(0o755)),
            index: BTreeMap::new(),
            replicas: BTreeMap::new(),
            guids: BTreeSet::new(),
            superuser: superuser.to_string(),
            ses: BTreeMap::new(),
        }
    }

    pub fn superuser(&self) -> &str {
        &self.superuser
    }

    fn is_super(&self, who: &Principal) -> bool {
        who.user == self.superuser
    }

    fn dir(&self, path: &LfnPath) -> GridResult<&DirectoryTable> {
        let mut cur = &self.root;
        for seg in path.segments() {
            cur = cur
                .subdirs
                .get(seg)
                .ok_or_else(|| GridError::not_found(format!("no such directory: {path}")))?;
        }
        Ok(cur)
    }

    fn dir_mut(&mut self, path: &LfnPath) -> GridResult<&mut DirectoryTable> {
        let mut cur = &mut self.root;
        for seg in path.segments() {
            cur = cur
                .subdirs
                .get_mut(seg)
                .ok_or_else(|| GridError::not_found(format!("no such directory: {path}")))?;
        }
        Ok(cur)
    }

    /// Traverse permission (execute bit) on every directory from the
    /// root down to `dir` inclusive.
    fn check_traverse(&self, who: &Principal, dir: &LfnPath) -> GridResult<()> {
        if self.is_super(who) {
            return Ok(());
        }
        let mut cur = &self.root;
        let mut walked = LfnPath::root();
        loop {
            if !cur.perms.allows(&cur.owner, &cur.group, who, Access::Execute) {
                return Err(GridError::permission_denied(format!(
                    "{} may not traverse {walked}",
                    who.user
                )));
            }
            let Some(next) = dir.segments().get(walked.segments().len()) else { break };
            cur = cur
                .subdirs
                .get(next)
                .ok_or_else(|| GridError::not_found(format!("no such directory: {dir}")))?;
            walked = walked.child(next)?;
        }
        Ok(())
    }

    fn check_dir_access(&self, who: &Principal, dir: &LfnPath, access: Access) -> GridResult<()> {
        if self.is_super(who) {
            return Ok(());
        }
        self.check_traverse(who, dir)?;
        let d = self.dir(dir)?;
        if d.perms.allows(&d.owner, &d.group, who, access) {
            Ok(())
        } else {
            Err(GridError::permission_denied(format!("{} denied on {dir}", who.user)))
        }
    }

    fn split_file_path(lfn: &LfnPath) -> GridResult<(LfnPath, String)> {
        let base = lfn
            .basename()
            .ok_or_else(|| GridError::bad_request("the root cannot name a file"))?
            .to_string();
        Ok((lfn.parent().expect("non-root path has a parent"), base))
    }

    fn entry(&self, lfn: &LfnPath) -> GridResult<&CatalogueEntry> {
        let (parent, base) = Self::split_file_path(lfn)?;
        self.dir(&parent)?
            .entries
            .get(&base)
            .ok_or_else(|| GridError::not_found(format!("no such file: {lfn}")))
    }

    fn entry_checked(&self, who: &Principal, lfn: &LfnPath, access: Access) -> GridResult<&CatalogueEntry> {
        let (parent, _) = Self::split_file_path(lfn)?;
        self.check_traverse(who, &parent)?;
        let e = self.entry(lfn)?;
        if self.is_super(who) || e.perms.allows(&e.owner, &e.group, who, access) {
            Ok(e)
        } else {
            Err(GridError::permission_denied(format!("{} denied on {lfn}", who.user)))
        }
    }

    // ---- operations -----------------------------------------------------

    pub fn mkdir(&mut self, who: &Principal, path: &LfnPath, perms: Mode) -> GridResult<()> {
        let (parent, base) = Self::split_file_path(path)?;
        if base.ends_with(META_SUFFIX) {
            return Err(GridError::already_exists(format!(
                "{base:?} is reserved for metadata virtual files"
            )));
        }
        self.check_dir_access(who, &parent, Access::Write)?;
        let owner = who.user.clone();
        let group = who.primary_group().to_string();
        let dir = self.dir_mut(&parent)?;
        if dir.subdirs.contains_key(&base) || dir.entries.contains_key(&base) {
            return Err(GridError::already_exists(format!("{path} already exists")));
        }
        dir.subdirs.insert(base, DirectoryTable::new(&owner, &group, perms));
        Ok(())
    }

    pub fn register_file(
        &mut self,
        who: &Principal,
        lfn: &LfnPath,
        pfn: &Pfn,
        size: u64,
        guid: Guid,
        perms: Mode,
    ) -> GridResult<()> {
        let (parent, base) = Self::split_file_path(lfn)?;
        if base.ends_with(META_SUFFIX) {
            return Err(GridError::already_exists(format!(
                "{base:?} is reserved for metadata virtual files"
            )));
        }
        self.check_dir_access(who, &parent, Access::Write)?;
        if self.guids.contains(&guid) {
            return Err(GridError::duplicate_guid(format!("guid {guid} already registered")));
        }
        let owner = who.user.clone();
        let group = who.primary_group().to_string();
        let dir = self.dir_mut(&parent)?;
        if dir.entries.contains_key(&base) || dir.subdirs.contains_key(&base) {
            return Err(GridError::already_exists(format!("{lfn} already exists")));
        }
        dir.entries.insert(
            base.clone(),
            CatalogueEntry {
                basename: base,
                guid,
                size,
                owner,
                group,
                perms,
                master_pfn: pfn.clone(),
                metadata: BTreeMap::new(),
                inline: None,
            },
        );
        self.guids.insert(guid);
        self.index.insert(lfn.to_string(), parent.to_string());
        Ok(())
    }

    /// Validation half of a write-once open: the parent must be writable
    /// and the LFN free.  Returns nothing; the service mints the GUID.
    pub fn write_check(&self, who: &Principal, lfn: &LfnPath) -> GridResult<()> {
        let (parent, base) = Self::split_file_path(lfn)?;
        if base.ends_with(META_SUFFIX) {
            return Err(GridError::already_exists(format!(
                "{base:?} is reserved for metadata virtual files"
            )));
        }
        self.check_dir_access(who, &parent, Access::Write)?;
        let dir = self.dir(&parent)?;
        if dir.entries.contains_key(&base) || dir.subdirs.contains_key(&base) {
            return Err(GridError::already_exists(format!("{lfn} already exists")));
        }
        Ok(())
    }

    pub fn guid_in_use(&self, guid: &Guid) -> bool {
        self.guids.contains(guid)
    }

    pub fn resolve(&self, who: &Principal, lfn: &LfnPath) -> GridResult<Resolved> {
        let entry = self.entry_checked(who, lfn, Access::Read)?;
        let mut locations = vec![self.locate(&entry.master_pfn)];
        if let Some(reps) = self.replicas.get(&lfn.to_string()) {
            locations.extend(reps.iter().map(|p| self.locate(p)));
        }
        Ok(Resolved { guid: entry.guid, size: entry.size, locations })
    }

    fn locate(&self, pfn: &Pfn) -> ResolvedLocation {
        let endpoint = pfn.endpoint();
        let se = self.ses.values().find(|se| se.addr == endpoint);
        ResolvedLocation {
            pfn: pfn.clone(),
            se: se.map(|s| s.name.clone()),
            site: se.map(|s| s.site.clone()),
        }
    }

    pub fn add_replica(
        &mut self,
        who: &Principal,
        lfn: &LfnPath,
        pfn: &Pfn,
        observed_size: u64,
    ) -> GridResult<()> {
        let entry = self.entry_checked(who, lfn, Access::Write)?;
        if entry.size != observed_size {
            return Err(GridError::size_mismatch(format!(
                "entry size {} != observed {observed_size}",
                entry.size
            )));
        }
        if entry.master_pfn == *pfn {
            return Err(GridError::duplicate_replica(format!("{pfn} is the master PFN")));
        }
        let row = self.replicas.entry(lfn.to_string()).or_default();
        if row.contains(pfn) {
            return Err(GridError::duplicate_replica(format!("{pfn} already registered for {lfn}")));
        }
        row.push(pfn.clone());
        Ok(())
    }

    /// Remove one physical location, promoting the oldest replica when
    /// the master itself is dropped.  Used by `move` transfers.
    pub fn drop_replica(&mut self, who: &Principal, lfn: &LfnPath, pfn: &Pfn) -> GridResult<()> {
        self.entry_checked(who, lfn, Access::Write)?;
        let key = lfn.to_string();
        let (parent, base) = Self::split_file_path(lfn)?;
        let master = self.entry(lfn)?.master_pfn.clone();
        if master == *pfn {
            let promoted = {
                let row = self.replicas.get_mut(&key);
                match row {
                    Some(r) if !r.is_empty() => r.remove(0),
                    _ => {
                        return Err(GridError::bad_request(format!(
                            "cannot drop the only location of {lfn}"
                        )))
                    }
                }
            };
            let entry = self.dir_mut(&parent)?.entries.get_mut(&base).expect("entry checked");
            entry.master_pfn = promoted;
        } else {
            let row = self
                .replicas
                .get_mut(&key)
                .ok_or_else(|| GridError::not_found(format!("{pfn} is not a location of {lfn}")))?;
            let pos = row
                .iter()
                .position(|p| p == pfn)
                .ok_or_else(|| GridError::not_found(format!("{pfn} is not a location of {lfn}")))?;
            row.remove(pos);
        }
        if self.replicas.get(&key).map(|r| r.is_empty()).unwrap_or(false) {
            self.replicas.remove(&key);
        }
        Ok(())
    }

    pub fn remove(&mut self, who: &Principal, lfn: &LfnPath) -> GridResult<Vec<Pfn>> {
        let (parent, base) = Self::split_file_path(lfn)?;
        self.check_dir_access(who, &parent, Access::Write)?;
        let dir = self.dir(&parent)?;
        if let Some(sub) = dir.subdirs.get(&base) {
            if !sub.entries.is_empty() || !sub.subdirs.is_empty() {
                return Err(GridError::is_directory(format!("{lfn} is a non-empty directory")));
            }
            self.dir_mut(&parent)?.subdirs.remove(&base);
            return Ok(Vec::new());
        }
        if !dir.entries.contains_key(&base) {
            return Err(GridError::not_found(format!("no such file: {lfn}")));
        }
        let entry = self.dir_mut(&parent)?.entries.remove(&base).expect("checked above");
        self.guids.remove(&entry.guid);
        self.index.remove(&lfn.to_string());
        let mut pfns = vec![entry.master_pfn];
        if let Some(reps) = self.replicas.remove(&lfn.to_string()) {
            pfns.extend(reps);
        }
        Ok(pfns)
    }

    pub fn rename(&mut self, who: &Principal, from: &LfnPath, to: &LfnPath) -> GridResult<()> {
        let (from_parent, from_base) = Self::split_file_path(from)?;
        let (to_parent, to_base) = Self::split_file_path(to)?;
        if to_base.ends_with(META_SUFFIX) {
            return Err(GridError::already_exists(format!(
                "{to_base:?} is reserved for metadata virtual files"
            )));
        }
        self.check_dir_access(who, &from_parent, Access::Write)?;
        self.check_dir_access(who, &to_parent, Access::Write)?;
        {
            let src = self.dir(&from_parent)?;
            if !src.entries.contains_key(&from_base) {
                if src.subdirs.contains_key(&from_base) {
                    return Err(GridError::is_directory(format!("{from} is a directory")));
                }
                return Err(GridError::not_found(format!("no such file: {from}")));
            }
            let dst = self.dir(&to_parent)?;
            if dst.entries.contains_key(&to_base) || dst.subdirs.contains_key(&to_base) {
                return Err(GridError::already_exists(format!("{to} already exists")));
            }
        }
        let mut entry = self.dir_mut(&from_parent)?.entries.remove(&from_base).expect("checked");
        entry.basename = to_base.clone();
        self.dir_mut(&to_parent)?.entries.insert(to_base, entry);
        self.index.remove(&from.to_string());
        self.index.insert(to.to_string(), to_parent.to_string());
        if let Some(reps) = self.replicas.remove(&from.to_string()) {
            self.replicas.insert(to.to_string(), reps);
        }
        Ok(())
    }

    pub fn set_access(
        &mut self,
        who: &Principal,
        lfn: &LfnPath,
        new_owner: Option<&str>,
        new_group: Option<&str>,
        new_perms: Option<Mode>,
    ) -> GridResult<()> {
        let (parent, base) = Self::split_file_path(lfn)?;
        self.check_traverse(who, &parent)?;
        let is_super = self.is_super(who);
        let user = who.user.clone();
        // Files and directories are both addressable here.
        let dir = self.dir_mut(&parent)?;
        let (owner, group, perms): (&mut String, &mut String, &mut Mode) =
            if let Some(e) = dir.entries.get_mut(&base) {
                (&mut e.owner, &mut e.group, &mut e.perms)
            } else if let Some(d) = dir.subdirs.get_mut(&base) {
                (&mut d.owner, &mut d.group, &mut d.perms)
            } else {
                return Err(GridError::not_found(format!("no such entry: {lfn}")));
            };
        if !is_super && *owner != user {
            return Err(GridError::permission_denied(format!(
                "only the owner or the superuser may change {lfn}"
            )));
        }
        if let Some(o) = new_owner {
            if !is_super {
                return Err(GridError::permission_denied("only the superuser may chown"));
            }
            *owner = o.to_string();
        }
        if let Some(g) = new_group {
            *group = g.to_string();
        }
        if let Some(p) = new_perms {
            *perms = p;
        }
        Ok(())
    }

    /// Content of the virtual `<lfn>.meta` file: `name=value` lines
    /// sorted by name.
    pub fn read_metadata(&self, who: &Principal, lfn: &LfnPath) -> GridResult<String> {
        let entry = self.entry_checked(who, lfn, Access::Read)?;
        Ok(render_metadata(&entry.metadata))
    }

    pub fn set_tag(&mut self, who: &Principal, lfn: &LfnPath, name: &str, value: &str) -> GridResult<()> {
        self.entry_checked(who, lfn, Access::Write)?;
        let (parent, base) = Self::split_file_path(lfn)?;
        if name.is_empty() || name.contains('=') || name.contains('\n') {
            return Err(GridError::bad_request(format!("bad tag name {name:?}")));
        }
        let entry = self.dir_mut(&parent)?.entries.get_mut(&base).expect("checked");
        entry.metadata.insert(name.to_string(), value.to_string());
        Ok(())
    }

    pub fn list_dir(&self, who: &Principal, path: &LfnPath) -> GridResult<Vec<ListedEntry>> {
        if !self.is_super(who) {
            self.check_traverse(who, path)?;
            let d = self.dir(path)?;
            if !d.perms.allows(&d.owner, &d.group, who, Access::Read) {
                return Err(GridError::permission_denied(format!("{} denied on {path}", who.user)));
            }
        }
        let d = self.dir(path)?;
        let mut out = Vec::new();
        for (name, sub) in &d.subdirs {
            out.push(ListedEntry {
                name: name.clone(),
                kind: EntryKind::Dir,
                size: 0,
                owner: sub.owner.clone(),
                group: sub.group.clone(),
                perms: sub.perms,
            });
        }
        for (name, e) in &d.entries {
            out.push(ListedEntry {
                name: name.clone(),
                kind: EntryKind::File,
                size: e.size,
                owner: e.owner.clone(),
                group: e.group.clone(),
                perms: e.perms,
            });
            out.push(ListedEntry {
                name: format!("{name}{META_SUFFIX}"),
                kind: EntryKind::Meta,
                size: render_metadata(&e.metadata).len() as u64,
                owner: e.owner.clone(),
                group: e.group.clone(),
                perms: Mode::new(e.perms.0 & 0o444),
            });
        }
        out.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(out)
    }

    pub fn stat(&self, who: &Principal, path: &LfnPath) -> GridResult<ListedEntry> {
        if path.is_root() {
            return Ok(ListedEntry {
                name: "/".into(),
                kind: EntryKind::Dir,
                size: 0,
                owner: self.root.owner.clone(),
                group: self.root.group.clone(),
                perms: self.root.perms,
            });
        }
        let (parent, base) = Self::split_file_path(path)?;
        self.check_traverse(who, &parent)?;
        let dir = self.dir(&parent)?;
        if let Some(d) = dir.subdirs.get(&base) {
            return Ok(ListedEntry {
                name: base,
                kind: EntryKind::Dir,
                size: 0,
                owner: d.owner.clone(),
                group: d.group.clone(),
                perms: d.perms,
            });
        }
        if let Some(e) = dir.entries.get(&base) {
            return Ok(ListedEntry {
                name: base,
                kind: EntryKind::File,
                size: e.size,
                owner: e.owner.clone(),
                group: e.group.clone(),
                perms: e.perms,
            });
        }
        if let Some(stem) = base.strip_suffix(META_SUFFIX) {
            if let Some(e) = dir.entries.get(stem) {
                return Ok(ListedEntry {
                    name: base,
                    kind: EntryKind::Meta,
                    size: render_metadata(&e.metadata).len() as u64,
                    owner: e.owner.clone(),
                    group: e.group.clone(),
                    perms: Mode::new(e.perms.0 & 0o444),
                });
            }
        }
        Err(GridError::not_found(format!("no such entry: {path}")))
    }

    // ---- catalogue-resident virtual DB files ----------------------------

    /// Store a small file whose bytes live inside the catalogue itself
    /// (master PFN scheme `db`).  Used for credential files.
    pub fn put_inline(&mut self, who: &Principal, lfn: &LfnPath, content: &str, perms: Mode) -> GridResult<()> {
        let guid = inline_guid(&lfn.to_string(), content);
        let pfn = Pfn::new("db", "catalogue", 1, &lfn.to_string());
        self.register_file(who, lfn, &pfn, content.len() as u64, guid, perms)?;
        let (parent, base) = Self::split_file_path(lfn)?;
        self.dir_mut(&parent)?.entries.get_mut(&base).expect("just registered").inline =
            Some(content.to_string());
        Ok(())
    }

    pub fn read_inline(&self, who: &Principal, lfn: &LfnPath) -> GridResult<String> {
        let entry = self.entry_checked(who, lfn, Access::Read)?;
        entry
            .inline
            .clone()
            .ok_or_else(|| GridError::bad_request(format!("{lfn} is not a catalogue-resident file")))
    }

    // ---- storage element registry ---------------------------------------

    pub fn register_se(&mut self, who: &Principal, name: &str, addr: &str, site: &str) -> GridResult<()> {
        if !self.is_super(who) {
            return Err(GridError::permission_denied("only the superuser may register SEs"));
        }
        self.ses.insert(
            name.to_string(),
            SeInfo { name: name.to_string(), addr: addr.to_string(), site: site.to_string() },
        );
        Ok(())
    }

    pub fn lookup_se(&self, name: &str) -> GridResult<SeInfo> {
        self.ses
            .get(name)
            .cloned()
            .ok_or_else(|| GridError::unknown_se(format!("no such storage element: {name}")))
    }

    pub fn list_se(&self) -> Vec<SeInfo> {
        self.ses.values().cloned().collect()
    }

    pub fn se_name_for_endpoint(&self, endpoint: &str) -> Option<String> {
        self.ses.values().find(|se| se.addr == endpoint).map(|se| se.name.clone())
    }

    // ---- invariant checks (used by tests) --------------------------------

    /// Walk the whole tree and return all file LFNs with their parents.
    pub fn walk_files(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        fn rec(dir: &DirectoryTable, path: &str, out: &mut Vec<(String, String)>) {
            for name in dir.entries.keys() {
                let lfn = if path == "/" { format!("/{name}") } else { format!("{path}/{name}") };
                out.push((lfn, path.to_string()));
            }
            for (name, sub) in &dir.subdirs {
                let sub_path = if path == "/" { format!("/{name}") } else { format!("{path}/{name}") };
                rec(sub, &sub_path, out);
            }
        }
        rec(&self.root, "/", &mut out);
        out.sort();
        out
    }

    /// Index coherence: the LFN index must agree with a full tree walk.
    pub fn index_coherent(&self) -> bool {
        let walked = self.walk_files();
        let indexed: Vec<(String, String)> =
            self.index.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        if walked != indexed {
            return false;
        }
        // Every replica row must refer to a live file.
        self.replicas.keys().all(|k| self.index.contains_key(k))
    }

    pub fn live_guid_count(&self) -> usize {
        self.guids.len()
    }
}

fn render_metadata(tags: &BTreeMap<String, String>) -> String {
    tags.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("\n")
}

/// Deterministic GUID for inline files, derived from path and content.
fn inline_guid(path: &str, content: &str) -> Guid {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(path.as_bytes());
    h.update([0]);
    h.update(content.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 16];
    bytes.copy_from_slice(&digest[..16]);
    Guid::from_bytes(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn guid(n: u128) -> Guid {
        Guid::from_u128(n)
    }

    fn pfn(n: u32) -> Pfn {
        Pfn::new("file", "se1", 7100, &format!("v0/ab/f{n}"))
    }

    fn setup() -> (Catalogue, Principal, Principal, Principal) {
        let mut cat = Catalogue::new("admin");
        let admin = Principal::new("admin", &[]);
        let alice = Principal::new("alice", &["alice"]);
        let bob = Principal::new("bob", &["bob"]);
        cat.mkdir(&admin, &"/alice".parse().unwrap(), Mode::new(0o755)).unwrap();
        cat.set_access(&admin, &"/alice".parse().unwrap(), Some("alice"), Some("alice"), None)
            .unwrap();
        (cat, admin, alice, bob)
    }

    #[test]
    fn mkdir_then_listed() {
        let (mut cat, _, alice, _) = setup();
        cat.mkdir(&alice, &"/alice/sim".parse().unwrap(), Mode::new(0o755)).unwrap();
        let names: Vec<String> = cat
            .list_dir(&alice, &"/alice".parse().unwrap())
            .unwrap()
            .into_iter()
            .map(|e| e.name)
            .collect();
        assert_eq!(names, vec!["sim"]);
    }

    #[test]
    fn mkdir_permission_denied_for_stranger() {
        let (mut cat, _, _, bob) = setup();
        let err = cat.mkdir(&bob, &"/alice/x".parse().unwrap(), Mode::new(0o755)).unwrap_err();
        assert_eq!(err.code.as_str(), "PermissionDenied");
    }

    #[test]
    fn mkdir_twice_already_exists() {
        let (mut cat, _, alice, _) = setup();
        let p: LfnPath = "/alice/sim".parse().unwrap();
        cat.mkdir(&alice, &p, Mode::new(0o755)).unwrap();
        let err = cat.mkdir(&alice, &p, Mode::new(0o755)).unwrap_err();
        assert_eq!(err.code.as_str(), "AlreadyExists");
    }

    #[test]
    fn register_and_resolve_round_trip() {
        let (mut cat, _, alice, _) = setup();
        let lfn: LfnPath = "/alice/f1".parse().unwrap();
        cat.register_file(&alice, &lfn, &pfn(1), 1024, guid(1), Mode::new(0o644)).unwrap();
        let r = cat.resolve(&alice, &lfn).unwrap();
        assert_eq!(r.size, 1024);
        assert_eq!(r.guid, guid(1));
        assert_eq!(r.locations.len(), 1);
        assert_eq!(r.locations[0].pfn, pfn(1));
    }

    #[test]
    fn register_twice_is_write_once_violation() {
        let (mut cat, _, alice, _) = setup();
        let lfn: LfnPath = "/alice/f1".parse().unwrap();
        cat.register_file(&alice, &lfn, &pfn(1), 10, guid(1), Mode::new(0o644)).unwrap();
        let err = cat.register_file(&alice, &lfn, &pfn(2), 10, guid(2), Mode::new(0o644)).unwrap_err();
        assert_eq!(err.code.as_str(), "AlreadyExists");
    }

    #[test]
    fn duplicate_guid_rejected() {
        let (mut cat, _, alice, _) = setup();
        cat.register_file(&alice, &"/alice/f1".parse().unwrap(), &pfn(1), 10, guid(7), Mode::new(0o644))
            .unwrap();
        let err = cat
            .register_file(&alice, &"/alice/f2".parse().unwrap(), &pfn(2), 10, guid(7), Mode::new(0o644))
            .unwrap_err();
        assert_eq!(err.code.as_str(), "DuplicateGuid");
    }

    #[test]
    fn replicas_resolve_master_first_in_order() {
        let (mut cat, _, alice, _) = setup();
        let lfn: LfnPath = "/alice/f1".parse().unwrap();
        cat.register_file(&alice, &lfn, &pfn(1), 10, guid(1), Mode::new(0o644)).unwrap();
        for n in 2..=4 {
            cat.add_replica(&alice, &lfn, &pfn(n), 10).unwrap();
        }
        let r = cat.resolve(&alice, &lfn).unwrap();
        let got: Vec<Pfn> = r.locations.into_iter().map(|l| l.pfn).collect();
        assert_eq!(got, vec![pfn(1), pfn(2), pfn(3), pfn(4)]);
    }

    #[test]
    fn add_replica_guards() {
        let (mut cat, _, alice, _) = setup();
        let lfn: LfnPath = "/alice/f1".parse().unwrap();
        cat.register_file(&alice, &lfn, &pfn(1), 10, guid(1), Mode::new(0o644)).unwrap();
        assert_eq!(
            cat.add_replica(&alice, &lfn, &pfn(2), 11).unwrap_err().code.as_str(),
            "SizeMismatch"
        );
        cat.add_replica(&alice, &lfn, &pfn(2), 10).unwrap();
        assert_eq!(
            cat.add_replica(&alice, &lfn, &pfn(2), 10).unwrap_err().code.as_str(),
            "DuplicateReplica"
        );
        assert_eq!(
            cat.add_replica(&alice, &lfn, &pfn(1), 10).unwrap_err().code.as_str(),
            "DuplicateReplica"
        );
    }

    #[test]
    fn remove_returns_all_pfns_then_reregister_ok() {
        let (mut cat, _, alice, _) = setup();
        let lfn: LfnPath = "/alice/f1".parse().unwrap();
        cat.register_file(&alice, &lfn, &pfn(1), 10, guid(1), Mode::new(0o644)).unwrap();
        cat.add_replica(&alice, &lfn, &pfn(2), 10).unwrap();
        let removed = cat.remove(&alice, &lfn).unwrap();
        assert_eq!(removed, vec![pfn(1), pfn(2)]);
        assert_eq!(cat.resolve(&alice, &lfn).unwrap_err().code.as_str(), "NotFound");
        // Write-once applies to live LFNs only.
        cat.register_file(&alice, &lfn, &pfn(3), 20, guid(2), Mode::new(0o644)).unwrap();
        assert!(cat.index_coherent());
    }

    #[test]
    fn remove_nonempty_directory_is_error() {
        let (mut cat, _, alice, _) = setup();
        cat.mkdir(&alice, &"/alice/sim".parse().unwrap(), Mode::new(0o755)).unwrap();
        cat.register_file(&alice, &"/alice/sim/f".parse().unwrap(), &pfn(1), 1, guid(1), Mode::new(0o644))
            .unwrap();
        let err = cat.remove(&alice, &"/alice/sim".parse().unwrap()).unwrap_err();
        assert_eq!(err.code.as_str(), "IsDirectory");
        cat.remove(&alice, &"/alice/sim/f".parse().unwrap()).unwrap();
        cat.remove(&alice, &"/alice/sim".parse().unwrap()).unwrap();
    }

    #[test]
    fn rename_preserves_identity_and_index() {
        let (mut cat, _, alice, _) = setup();
        cat.mkdir(&alice, &"/alice/a".parse().unwrap(), Mode::new(0o755)).unwrap();
        cat.mkdir(&alice, &"/alice/b".parse().unwrap(), Mode::new(0o755)).unwrap();
        let from: LfnPath = "/alice/a/f".parse().unwrap();
        let to: LfnPath = "/alice/b/g".parse().unwrap();
        cat.register_file(&alice, &from, &pfn(1), 10, guid(1), Mode::new(0o644)).unwrap();
        cat.add_replica(&alice, &from, &pfn(2), 10).unwrap();
        let before = cat.resolve(&alice, &from).unwrap();
        cat.rename(&alice, &from, &to).unwrap();
        let after = cat.resolve(&alice, &to).unwrap();
        assert_eq!(before.guid, after.guid);
        assert_eq!(before.size, after.size);
        assert_eq!(
            before.locations.iter().map(|l| &l.pfn).collect::<Vec<_>>(),
            after.locations.iter().map(|l| &l.pfn).collect::<Vec<_>>()
        );
        assert_eq!(cat.resolve(&alice, &from).unwrap_err().code.as_str(), "NotFound");
        assert!(cat.index_coherent());
        let err = cat.rename(&alice, &to, &to).unwrap_err();
        assert_eq!(err.code.as_str(), "AlreadyExists");
    }

    #[test]
    fn set_access_owner_and_superuser_semantics() {
        let (mut cat, admin, alice, bob) = setup();
        let lfn: LfnPath = "/alice/f".parse().unwrap();
        cat.register_file(&alice, &lfn, &pfn(1), 10, guid(1), Mode::new(0o644)).unwrap();
        // Owner tightens perms; another user is then denied.
        cat.set_access(&alice, &lfn, None, None, Some(Mode::new(0o600))).unwrap();
        assert_eq!(cat.resolve(&bob, &lfn).unwrap_err().code.as_str(), "PermissionDenied");
        // Non-owner chown denied.
        assert_eq!(
            cat.set_access(&bob, &lfn, Some("bob"), None, None).unwrap_err().code.as_str(),
            "PermissionDenied"
        );
        // Owner cannot chown either; the superuser can, then the new
        // owner may adjust perms.
        assert_eq!(
            cat.set_access(&alice, &lfn, Some("bob"), None, None).unwrap_err().code.as_str(),
            "PermissionDenied"
        );
        cat.set_access(&admin, &lfn, Some("bob"), Some("bob"), None).unwrap();
        cat.set_access(&bob, &lfn, None, None, Some(Mode::new(0o640))).unwrap();
    }

    #[test]
    fn metadata_rendering_sorted() {
        let (mut cat, _, alice, _) = setup();
        let lfn: LfnPath = "/alice/f".parse().unwrap();
        cat.register_file(&alice, &lfn, &pfn(1), 10, guid(1), Mode::new(0o644)).unwrap();
        assert_eq!(cat.read_metadata(&alice, &lfn).unwrap(), "");
        cat.set_tag(&alice, &lfn, "type", "raw").unwrap();
        cat.set_tag(&alice, &lfn, "run", "7").unwrap();
        assert_eq!(cat.read_metadata(&alice, &lfn).unwrap(), "run=7\ntype=raw");
    }

    #[test]
    fn listing_shows_virtual_meta_files() {
        let (mut cat, _, alice, _) = setup();
        cat.register_file(&alice, &"/alice/f".parse().unwrap(), &pfn(1), 10, guid(1), Mode::new(0o644))
            .unwrap();
        let names: Vec<String> = cat
            .list_dir(&alice, &"/alice".parse().unwrap())
            .unwrap()
            .into_iter()
            .map(|e| e.name)
            .collect();
        assert_eq!(names, vec!["f", "f.meta"]);
        // And .meta names cannot be taken by real files.
        let err = cat
            .register_file(&alice, &"/alice/g.meta".parse().unwrap(), &pfn(2), 1, guid(2), Mode::new(0o644))
            .unwrap_err();
        assert_eq!(err.code.as_str(), "AlreadyExists");
    }

    #[test]
    fn traverse_requires_execute_bit() {
        let (mut cat, _, alice, bob) = setup();
        cat.mkdir(&alice, &"/alice/deep".parse().unwrap(), Mode::new(0o711)).unwrap();
        cat.register_file(
            &alice,
            &"/alice/deep/f".parse().unwrap(),
            &pfn(1),
            10,
            guid(1),
            Mode::new(0o644),
        )
        .unwrap();
        // bob can traverse (x) but not list (r) /alice/deep.
        assert!(cat.resolve(&bob, &"/alice/deep/f".parse().unwrap()).is_ok());
        assert_eq!(
            cat.list_dir(&bob, &"/alice/deep".parse().unwrap()).unwrap_err().code.as_str(),
            "PermissionDenied"
        );
        // Dropping the execute bit cuts off the subtree.
        cat.set_access(&alice, &"/alice/deep".parse().unwrap(), None, None, Some(Mode::new(0o700)))
            .unwrap();
        assert_eq!(
            cat.resolve(&bob, &"/alice/deep/f".parse().unwrap()).unwrap_err().code.as_str(),
            "PermissionDenied"
        );
    }

    #[test]
    fn inline_files_round_trip() {
        let (mut cat, _, alice, bob) = setup();
        let lfn: LfnPath = "/alice/.credential".parse().unwrap();
        cat.put_inline(&alice, &lfn, "alice:alice", Mode::new(0o600)).unwrap();
        assert_eq!(cat.read_inline(&alice, &lfn).unwrap(), "alice:alice");
        assert_eq!(cat.read_inline(&bob, &lfn).unwrap_err().code.as_str(), "PermissionDenied");
        assert!(cat.index_coherent());
    }
}
