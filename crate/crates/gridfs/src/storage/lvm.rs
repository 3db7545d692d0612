//! The Logical Volume Manager: merges several backend volumes into one
//! logical store, tracks used and available space, enforces quotas,
//! stamps file lifetimes and reconciles bookkeeping against the
//! backend's own `lslist` enumeration.

use crate::error::{GridError, GridResult};
use crate::types::Guid;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// File lifetime within a volume: fixed seconds or unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lifetime {
    Seconds(u64),
    Infinite,
}

impl Serialize for Lifetime {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match self {
            Lifetime::Seconds(s) => ser.serialize_u64(*s),
            Lifetime::Infinite => ser.serialize_str("infinite"),
        }
    }
}

impl<'de> Deserialize<'de> for Lifetime {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(s) => Ok(Lifetime::Seconds(s)),
            Raw::Text(t) if t == "infinite" => Ok(Lifetime::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad lifetime {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolumeSpec {
    pub id: String,
    pub mount_point: String,
    pub capacity_bytes: u64,
    #[serde(default = "default_lifetime")]
    pub lifetime: Lifetime,
}

fn default_lifetime() -> Lifetime {
    Lifetime::Infinite
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub volume: String,
    pub bytes: u64,
    /// Absolute expiry in integer seconds; None never expires.
    pub expires_at_s: Option<u64>,
}

#[derive(Debug, Clone)]
struct Reservation {
    volume: String,
    hint: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResyncReport {
    pub added: u64,
    pub removed: u64,
    pub size_corrected: u64,
}

pub struct Lvm {
    volumes: Vec<VolumeSpec>,
    used: BTreeMap<String, u64>,
    placements: BTreeMap<String, Placement>,
    reservations: BTreeMap<String, Reservation>,
}

impl Lvm {
    pub fn new(mut volumes: Vec<VolumeSpec>) -> GridResult<Lvm> {
        if volumes.is_empty() {
            return Err(GridError::bad_request("an SE needs at least one volume"));
        }
        volumes.sort_by(|a, b| a.id.cmp(&b.id));
        let used = volumes.iter().map(|v| (v.id.clone(), 0)).collect();
        Ok(Lvm { volumes, used, placements: BTreeMap::new(), reservations: BTreeMap::new() })
    }

    pub fn volumes(&self) -> &[VolumeSpec] {
        &self.volumes
    }

    fn volume(&self, id: &str) -> &VolumeSpec {
        self.volumes.iter().find(|v| v.id == id).expect("volume ids are stable")
    }

    fn reserved_on(&self, id: &str) -> u64 {
        self.reservations.values().filter(|r| r.volume == id).map(|r| r.hint).sum()
    }

    pub fn free_on(&self, id: &str) -> u64 {
        let v = self.volume(id);
        v.capacity_bytes
            .saturating_sub(self.used[id])
            .saturating_sub(self.reserved_on(id))
    }

    /// Pick a volume for a new file: most free bytes wins, ties break by
    /// volume id.  The hint is soft-reserved until commit or abort.
    pub fn allocate(&mut self, size_hint: u64, guid: Guid) -> GridResult<(String, String)> {
        let mut best: Option<(&VolumeSpec, u64)> = None;
        for v in &self.volumes {
            let free = self.free_on(&v.id);
            if free < size_hint {
                continue;
            }
            match best {
                Some((_, best_free)) if best_free >= free => {}
                _ => best = Some((v, free)),
            }
        }
        let Some((volume, _)) = best else {
            return Err(GridError::no_space(format!(
                "no volume has {size_hint} free bytes"
            )));
        };
        let hexed = guid.simple().to_string();
        let direntry = format!("{}/{}/{}", volume.mount_point, &hexed[..2], guid);
        if self.placements.contains_key(&direntry) || self.reservations.contains_key(&direntry) {
            return Err(GridError::already_exists(format!("{direntry} already allocated")));
        }
        let vol_id = volume.id.clone();
        self.reservations.insert(direntry.clone(), Reservation { volume: vol_id.clone(), hint: size_hint });
        Ok((direntry, vol_id))
    }

    /// Release a reservation without storing anything.
    pub fn abort(&mut self, direntry: &str) {
        self.reservations.remove(direntry);
    }

    /// Turn a reservation into a placement with the actual byte count.
    pub fn commit(&mut self, direntry: &str, actual: u64, now_s: u64) -> GridResult<Placement> {
        let res = self
            .reservations
            .remove(direntry)
            .ok_or_else(|| GridError::not_allocated(format!("{direntry} was never allocated")))?;
        let vol = self.volume(&res.volume);
        if self.used[&res.volume] + actual > vol.capacity_bytes {
            return Err(GridError::quota_exceeded(format!(
                "{} bytes would overflow volume {}",
                actual, res.volume
            )));
        }
        let expires_at_s = match vol.lifetime {
            Lifetime::Seconds(s) => Some(now_s + s),
            Lifetime::Infinite => None,
        };
        let placement = Placement { volume: res.volume.clone(), bytes: actual, expires_at_s };
        *self.used.get_mut(&res.volume).unwrap() += actual;
        self.placements.insert(direntry.to_string(), placement.clone());
        Ok(placement)
    }

    pub fn is_reserved(&self, direntry: &str) -> bool {
        self.reservations.contains_key(direntry)
    }

    pub fn placement(&self, direntry: &str) -> Option<&Placement> {
        self.placements.get(direntry)
    }

    pub fn placements(&self) -> impl Iterator<Item = (&String, &Placement)> {
        self.placements.iter()
    }

    pub fn drop_placement(&mut self, direntry: &str) -> Option<Placement> {
        let p = self.placements.remove(direntry)?;
        *self.used.get_mut(&p.volume).unwrap() -= p.bytes;
        Some(p)
    }

    /// Paths whose lifetime has run out at `now_s`.
    pub fn expired(&self, now_s: u64) -> Vec<String> {
        self.placements
            .iter()
            .filter(|(_, p)| p.expires_at_s.map(|e| e <= now_s).unwrap_or(false))
            .map(|(path, _)| path.clone())
            .collect()
    }

    fn attribute(&self, path: &str) -> Option<&VolumeSpec> {
        self.volumes
            .iter()
            .filter(|v| path.starts_with(&format!("{}/", v.mount_point)))
            .max_by_key(|v| v.mount_point.len())
    }

    /// Reconcile bookkeeping against the backend listing: adopt unknown
    /// files, drop placements whose file vanished, correct sizes, and
    /// recompute `used` exactly.  In-flight (reserved) paths are skipped.
    pub fn resync(&mut self, listing: &[(String, u64)], now_s: u64) -> ResyncReport {
        let mut report = ResyncReport::default();
        let mut seen: BTreeMap<&str, u64> = BTreeMap::new();
        for (path, size) in listing {
            if self.is_reserved(path) {
                continue;
            }
            seen.insert(path.as_str(), *size);
        }
        // Drop placements for vanished files.
        let gone: Vec<String> =
            self.placements.keys().filter(|p| !seen.contains_key(p.as_str())).cloned().collect();
        for path in gone {
            self.placements.remove(&path);
            report.removed += 1;
        }
        // Adopt unknown files and correct sizes.
        for (path, size) in seen {
            match self.placements.get_mut(path) {
                Some(p) => {
                    if p.bytes != size {
                        p.bytes = size;
                        report.size_corrected += 1;
                    }
                }
                None => {
                    let Some(vol) = self.attribute(path) else { continue };
                    let expires_at_s = match vol.lifetime {
                        Lifetime::Seconds(s) => Some(now_s + s),
                        Lifetime::Infinite => None,
                    };
                    let volume = vol.id.clone();
                    self.placements
                        .insert(path.to_string(), Placement { volume, bytes: size, expires_at_s });
                    report.added += 1;
                }
            }
        }
        // Recompute used from scratch.
        for v in self.used.values_mut() {
            *v = 0;
        }
        for p in self.placements.values() {
            *self.used.get_mut(&p.volume).unwrap() += p.bytes;
        }
        report
    }

    pub fn used_map(&self) -> &BTreeMap<String, u64> {
        &self.used
    }

    /// `used` never exceeds capacity on any volume.
    pub fn within_capacity(&self) -> bool {
        self.volumes.iter().all(|v| self.used[&v.id] <= v.capacity_bytes)
    }

    /// Per-volume byte sums of a backend listing (ignoring reserved and
    /// unattributable paths), for conservation checks.
    pub fn listing_sums(&self, listing: &[(String, u64)]) -> BTreeMap<String, u64> {
        let mut sums: BTreeMap<String, u64> = self.volumes.iter().map(|v| (v.id.clone(), 0)).collect();
        for (path, size) in listing {
            if self.is_reserved(path) {
                continue;
            }
            if let Some(v) = self.attribute(path) {
                *sums.get_mut(&v.id).unwrap() += size;
            }
        }
        sums
    }
}
