//! Tour of the virtual file catalogue: hierarchical namespace,
//! unix-style permissions, replica bookkeeping, metadata tags and the
//! operation journal.
//!
//! ```bash
//! cargo run -p gridfs --example catalogue_tour
//! ```

use gridfs::catalogue::{CatalogueConfig, CatalogueService};
use gridfs::types::{Guid, LfnPath, Pfn, Principal};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CatalogueConfig {
        journal_path: Some(dir.path().join("cat.journal")),
        snapshot_every_n_ops: 4,
        seed: Some(7),
        ..CatalogueConfig::default()
    };

    let admin = Principal::new("admin", &[]);
    let alice = Principal::new("alice", &["alice"]);
    let bob = Principal::new("bob", &["bob"]);

    let svc = CatalogueService::new(cfg.clone()).unwrap();
    let path = |s: &str| LfnPath::parse(s).unwrap();

    // Build a small tree.  The superuser creates the home and hands it
    // to alice; alice owns everything below.
    svc.mutate("mkdir", serde_json::json!({"path": "/alice", "perms": "755"}), &admin.to_token())
        .unwrap();
    svc.mutate(
        "set_access",
        serde_json::json!({"lfn": "/alice", "owner": "alice", "group": "alice"}),
        &admin.to_token(),
    )
    .unwrap();
    svc.mutate("mkdir", serde_json::json!({"path": "/alice/sim", "perms": "750"}), &alice.to_token())
        .unwrap();

    // Register a file: LFN -> master PFN, with size and GUID.
    let guid = Guid::from_u128(0xfeed);
    let pfn = Pfn::new("file", "se1", 7100, "v0/fe/feed");
    svc.mutate(
        "register_file",
        serde_json::json!({
            "lfn": "/alice/sim/run7.dat", "pfn": pfn, "size": 1024,
            "guid": guid, "perms": "640",
        }),
        &alice.to_token(),
    )
    .unwrap();
    svc.mutate(
        "add_replica",
        serde_json::json!({
            "lfn": "/alice/sim/run7.dat",
            "pfn": Pfn::new("file", "se2", 7100, "v0/fe/feed"),
            "observed_size": 1024,
        }),
        &alice.to_token(),
    )
    .unwrap();

    let resolved = svc.read(|c| c.resolve(&alice, &path("/alice/sim/run7.dat"))).unwrap();
    println!("resolve /alice/sim/run7.dat:");
    println!("  guid {}  size {}", resolved.guid, resolved.size);
    for (i, loc) in resolved.locations.iter().enumerate() {
        println!("  location {i}: {}{}", loc.pfn, if i == 0 { "  (master)" } else { "" });
    }

    // Permissions: bob is outside the alice group, and /alice/sim is 750.
    let denied = svc.read(|c| c.resolve(&bob, &path("/alice/sim/run7.dat")));
    println!("\nbob reads it -> {}", denied.unwrap_err());

    // Metadata tags surface as a virtual `<name>.meta` file.
    svc.mutate(
        "set_tag",
        serde_json::json!({"lfn": "/alice/sim/run7.dat", "name": "run", "value": "7"}),
        &alice.to_token(),
    )
    .unwrap();
    svc.mutate(
        "set_tag",
        serde_json::json!({"lfn": "/alice/sim/run7.dat", "name": "type", "value": "raw"}),
        &alice.to_token(),
    )
    .unwrap();
    println!(
        "\nrun7.dat.meta content:\n{}",
        svc.read(|c| c.read_metadata(&alice, &path("/alice/sim/run7.dat"))).unwrap()
    );
    println!("\nls /alice/sim:");
    for e in svc.read(|c| c.list_dir(&alice, &path("/alice/sim"))).unwrap() {
        println!("  {:?} {} ({} bytes)", e.kind, e.name, e.size);
    }

    // The journal makes the catalogue durable: reopen from disk and
    // everything is still there.
    drop(svc);
    let svc = CatalogueService::new(cfg).unwrap();
    let resolved = svc.read(|c| c.resolve(&alice, &path("/alice/sim/run7.dat"))).unwrap();
    println!(
        "\nafter journal replay: {} locations, guid {}",
        resolved.locations.len(),
        resolved.guid
    );
}
