//! The interactive shell: one authenticated session, a current working
//! directory in the virtual namespace, and a directory-listing cache
//! with a configurable lifetime that local mutations invalidate.
//!
//! Connection loss is transparent: the underlying clients redial once
//! per call, so a command issued after a healed partition succeeds.

use super::Cli;
use crate::aiod::RouteChain;
use crate::catalogue::{EntryKind, ListedEntry};
use crate::error::{GridError, GridResult};
use crate::transfer::TransferKind;
use crate::types::{LfnPath, Mode};
use std::collections::BTreeMap;

#[derive(Debug)]
pub enum ShellOutcome {
    Output(String),
    Exit,
}

pub const HELP: &str = "\
commands:
  pwd                                  print the working directory
  cd <dir>                             change the working directory
  ls [-l] [path]                       list a directory
  mkdir <dir> [mode]                   create a directory
  cp <src> <dst>                       copy (local:<path> for local files)
  rm <lfn>                             remove a file (or empty directory)
  mv <from> <to>                       rename a file
  whereis <lfn>                        print all physical locations
  cat <lfn>                            print file content
  meta <lfn>                           print the metadata tag list
  tag <lfn> <name> <value>             set a metadata tag
  aioget <lfn> <local> [--route r]     download through cache servers
  aioput <local> <lfn[@SE]> [--route r] upload through cache servers
  transfer enqueue <lfn> <SE> [--move] queue an asynchronous transfer
  transfer status <id>                 show a queued transfer
  transfer step                        run one broker step
  whoami                               print the session identity
  help                                 this text
  exit | quit                          leave the shell
";

pub struct ShellSession {
    cli: Cli,
    cwd: LfnPath,
    ttl_ms: u64,
    dir_cache: BTreeMap<String, (u64, Vec<ListedEntry>)>,
}

impl ShellSession {
    pub fn new(cli: Cli, dir_cache_ttl_s: u64) -> ShellSession {
        ShellSession {
            cli,
            cwd: LfnPath::root(),
            ttl_ms: dir_cache_ttl_s * 1000,
            dir_cache: BTreeMap::new(),
        }
    }

    pub fn cwd(&self) -> &LfnPath {
        &self.cwd
    }

    pub fn prompt(&self) -> String {
        format!("gridfs:{}> ", self.cwd)
    }

    fn now_ms(&self) -> u64 {
        self.cli.client.net().now_ms()
    }

    fn resolve(&self, arg: &str) -> GridResult<LfnPath> {
        self.cwd.join_relative(arg)
    }

    /// Resolve a cp-style target against the cwd, keeping `local:`
    /// targets and `@SE` suffixes intact.
    fn resolve_target(&self, arg: &str) -> GridResult<String> {
        if arg.starts_with("local:") {
            return Ok(arg.to_string());
        }
        let (lfn_text, se) = match arg.rsplit_once('@') {
            Some((l, s)) => (l, Some(s)),
            None => (arg, None),
        };
        let lfn = self.resolve(lfn_text)?;
        Ok(match se {
            Some(se) => format!("{lfn}@{se}"),
            None => lfn.to_string(),
        })
    }

    fn invalidate_dir_cache(&mut self) {
        self.dir_cache.clear();
    }

    async fn cached_ls(&mut self, path: &LfnPath, long: bool) -> GridResult<String> {
        let key = path.to_string();
        let now = self.now_ms();
        let fresh = self
            .dir_cache
            .get(&key)
            .filter(|(at, _)| now.saturating_sub(*at) <= self.ttl_ms)
            .map(|(_, entries)| entries.clone());
        let entries = match fresh {
            Some(entries) => entries,
            None => {
                let entries = self.cli.client.catalogue().list_dir(path).await?;
                self.dir_cache.insert(key, (now, entries.clone()));
                entries
            }
        };
        let mut out = String::new();
        for e in &entries {
            let name =
                if e.kind == EntryKind::Dir { format!("{}/", e.name) } else { e.name.clone() };
            if long {
                let kind_char = match e.kind {
                    EntryKind::Dir => 'd',
                    EntryKind::File => '-',
                    EntryKind::Meta => 'm',
                };
                out.push_str(&format!(
                    "{kind_char}{} {} {} {:>10} {}\n",
                    e.perms.symbolic(),
                    e.owner,
                    e.group,
                    e.size,
                    name
                ));
            } else {
                out.push_str(&name);
                out.push('\n');
            }
        }
        Ok(out)
    }

    pub async fn exec_line(&mut self, line: &str) -> GridResult<ShellOutcome> {
        let words: Vec<&str> = line.split_whitespace().collect();
        let out = match words.as_slice() {
            [] => String::new(),
            ["exit"] | ["quit"] => return Ok(ShellOutcome::Exit),
            ["help"] => HELP.to_string(),
            ["pwd"] => format!("{}\n", self.cwd),
            ["whoami"] => format!("{}\n", self.cli.client.user()),
            ["cd", dir] => {
                let target = self.resolve(dir)?;
                let stat = self.cli.client.catalogue().stat(&target).await?;
                if stat.kind != EntryKind::Dir {
                    return Err(GridError::is_directory(format!("{target} is not a directory")));
                }
                self.cwd = target;
                String::new()
            }
            ["ls"] => self.cached_ls(&self.cwd.clone(), false).await?,
            ["ls", "-l"] => self.cached_ls(&self.cwd.clone(), true).await?,
            ["ls", path] => {
                let p = self.resolve(path)?;
                self.cached_ls(&p, false).await?
            }
            ["ls", "-l", path] => {
                let p = self.resolve(path)?;
                self.cached_ls(&p, true).await?
            }
            ["mkdir", dir] => {
                let p = self.resolve(dir)?;
                let out = self.cli.mkdir(&p, Mode::new(0o755)).await?;
                self.invalidate_dir_cache();
                out
            }
            ["mkdir", dir, mode] => {
                let p = self.resolve(dir)?;
                let out = self.cli.mkdir(&p, Mode::parse_octal(mode)?).await?;
                self.invalidate_dir_cache();
                out
            }
            ["rm", path] => {
                let p = self.resolve(path)?;
                let out = self.cli.rm(&p).await?;
                self.invalidate_dir_cache();
                out
            }
            ["mv", from, to] => {
                let f = self.resolve(from)?;
                let t = self.resolve(to)?;
                let out = self.cli.mv(&f, &t).await?;
                self.invalidate_dir_cache();
                out
            }
            ["whereis", path] => {
                let p = self.resolve(path)?;
                self.cli.whereis(&p).await?
            }
            ["cat", path] => {
                let p = self.resolve(path)?;
                let bytes = self.cli.cat(&p).await?;
                String::from_utf8_lossy(&bytes).into_owned()
            }
            ["meta", path] => {
                let p = self.resolve(path)?;
                self.cli.meta(&p).await?
            }
            ["tag", path, name, value] => {
                let p = self.resolve(path)?;
                let out = self.cli.set_meta(&p, name, value).await?;
                self.invalidate_dir_cache();
                out
            }
            ["cp", src, dst] => {
                let s = self.resolve_target(src)?;
                let d = self.resolve_target(dst)?;
                let out = self.cli.cp(&s, &d).await?;
                self.invalidate_dir_cache();
                out
            }
            ["aioget", lfn, local, rest @ ..] => {
                let p = self.resolve_target(lfn)?;
                let route = parse_route_flag(rest)?;
                self.cli.aioget(&p, std::path::Path::new(local), route).await?
            }
            ["aioput", local, lfn, rest @ ..] => {
                let p = self.resolve_target(lfn)?;
                let route = parse_route_flag(rest)?;
                let out = self.cli.aioput(std::path::Path::new(local), &p, route).await?;
                self.invalidate_dir_cache();
                out
            }
            ["transfer", "enqueue", lfn, se, rest @ ..] => {
                let p = self.resolve(lfn)?;
                let kind = if rest.contains(&"--move") {
                    TransferKind::Move
                } else {
                    TransferKind::Replicate
                };
                let id = self.cli.transfer_enqueue(&p, se, kind).await?;
                format!("transfer {id} queued\n")
            }
            ["transfer", "status", id] => {
                let id: u64 = id
                    .parse()
                    .map_err(|_| GridError::bad_request(format!("bad transfer id {id:?}")))?;
                let req = self.cli.transfer_status(id).await?;
                format!(
                    "{} {} -> {} {:?} attempts={}{}\n",
                    req.id,
                    req.lfn,
                    req.dst_se,
                    req.state,
                    req.attempts,
                    req.last_error.map(|e| format!(" last_error={e}")).unwrap_or_default()
                )
            }
            ["transfer", "step"] => {
                let executed = self.cli.transfer_step().await?;
                self.invalidate_dir_cache();
                format!("executed {executed:?}\n")
            }
            _ => {
                return Err(GridError::bad_request(format!(
                    "unknown command {:?}; try `help`",
                    words[0]
                )))
            }
        };
        Ok(ShellOutcome::Output(out))
    }
}

fn parse_route_flag(rest: &[&str]) -> GridResult<Option<RouteChain>> {
    match rest {
        [] => Ok(None),
        ["--route", r] => Ok(Some(RouteChain::parse(r)?)),
        other => Err(GridError::bad_request(format!("unexpected arguments {other:?}"))),
    }
}
