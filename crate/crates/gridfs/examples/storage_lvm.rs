//! A storage element up close: PFN allocation over multiple volumes,
//! quota enforcement, write spooling with sync, file lifetimes, and
//! lslist-driven resynchronisation after external changes.
//!
//! ```bash
//! cargo run -p gridfs --example storage_lvm
//! ```

use gridfs::storage::{Lifetime, PluginKind, SeConfig, SeService, VolumeSpec};
use gridfs::types::Guid;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let se = SeService::new(SeConfig {
        se_name: "DEMO::disk1".into(),
        plugin: PluginKind::File,
        listen: "se1:7100".into(),
        site: "demo".into(),
        root_dir: dir.path().join("store"),
        cache_dir: dir.path().join("aux"),
        cache_budget_bytes: 16 << 20,
        volumes: vec![
            VolumeSpec {
                id: "fast".into(),
                mount_point: "fast".into(),
                capacity_bytes: 1 << 20,
                lifetime: Lifetime::Seconds(30),
            },
            VolumeSpec {
                id: "bulk".into(),
                mount_point: "bulk".into(),
                capacity_bytes: 2 << 20,
                lifetime: Lifetime::Infinite,
            },
        ],
    })
    .unwrap();

    // Allocation picks the volume with the most free bytes; only bulk
    // can hold 1.5 MiB.
    let (pfn, vol) = se.allocate_pfn(1_500_000, Guid::from_u128(1)).unwrap();
    println!("allocated {pfn} on volume {vol}");

    // Stream, sync half-way, finish, commit.
    se.write_at(1, &pfn.direntry, 0, &[7u8; 750_000]).unwrap();
    se.sync_spool(1, &pfn.direntry).unwrap();
    println!("after sync, the store already holds {} bytes", se.sizeof(&pfn.direntry).unwrap());
    se.write_at(1, &pfn.direntry, 750_000, &[8u8; 750_000]).unwrap();
    se.commit(1, &pfn.direntry, 1_500_000, 0).unwrap();
    println!("committed; used = {:?}", se.used_bytes());

    // Quota: nothing can drive a volume over capacity.
    let err = se.allocate_pfn(4 << 20, Guid::from_u128(2)).unwrap_err();
    println!("allocating 4 MiB -> {err}");

    // Ranged reads are served through the local disk cache.
    let bytes = futures::executor::block_on(se.fetch(&pfn.direntry, 749_998, 4)).unwrap();
    println!("fetch(749998, 4) = {bytes:?}  (cache pulls the file once)");

    // With bulk mostly full, a 900 KiB file lands on `fast`, whose
    // 30 s lifetime stamps an expiry.
    let (p3, v3) = se.allocate_pfn(900_000, Guid::from_u128(3)).unwrap();
    se.write_at(3, &p3.direntry, 0, &vec![2u8; 900_000]).unwrap();
    se.commit(3, &p3.direntry, 900_000, 10).unwrap();
    println!("third file on {v3} at t=10 s");
    let removed = se.expire_files(39).unwrap();
    println!("expire at t=39 removes {removed:?}");
    let removed = se.expire_files(41).unwrap();
    println!("expire at t=41 removes {removed:?}");

    // External changes reconcile through the plug-in's lslist.
    let foreign = dir.path().join("store/bulk/ext/stray.dat");
    std::fs::create_dir_all(foreign.parent().unwrap()).unwrap();
    std::fs::write(&foreign, vec![9u8; 2048]).unwrap();
    let report = se.resync(50).unwrap();
    println!(
        "resync after injecting a file: added {} removed {} corrected {}",
        report.added, report.removed, report.size_corrected
    );
    println!("conservation holds: {}", se.check_conservation().unwrap());
}
