//! End-to-end flows over the simulated network: catalogue + storage
//! elements + cache servers + client API in one deterministic world.

use gridfs::access::AccessStrategy;
use gridfs::aiod::{Role, RouteChain};
use gridfs::scenario::{deterministic_bytes, AiodSpec, SeSpec, WorldBuilder};
use gridfs::transfer::{TransferKind, TransferState};
use gridfs::types::{Mode, OpenMode};
use rand::{Rng, SeedableRng};

const MB: u64 = 1 << 20;

fn two_se_world(base: &std::path::Path) -> gridfs::scenario::World {
    WorldBuilder::new(base)
        .seed(11)
        .se(SeSpec::simple("CERN::disk1", "se1:7100", "cern", 64 * MB))
        .se(SeSpec::simple("GSI::disk1", "se2:7100", "gsi", 64 * MB))
        .client("client:1", "cern", "alice")
        .build()
        .unwrap()
}

#[test]
fn write_then_read_direct_both_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let world = two_se_world(dir.path());
    let client = world.client("alice").unwrap();
    let data = deterministic_bytes(1, 300_000);

    let put_data = data.clone();
    world.sim.block_on(async move {
        client.catalogue().mkdir(&"/alice/sim".parse().unwrap(), Mode::new(0o755)).await.unwrap();
        client
            .put_file("/alice/sim/f1", &put_data, AccessStrategy::RemotePartial, None)
            .await
            .unwrap();
    });

    for strategy in [AccessStrategy::RemotePartial, AccessStrategy::WholeFileLocal] {
        let client = world.client("alice").unwrap();
        let expect = data.clone();
        world.sim.block_on(async move {
            let got = client.get_file("/alice/sim/f1", strategy, None).await.unwrap();
            assert_eq!(got, expect, "strategy {strategy:?} must be byte-identical");
            // Ranged read through a fresh handle.
            let h = client
                .generic_open("/alice/sim/f1", OpenMode::Read, strategy)
                .await
                .unwrap();
            let part = client.generic_read(h, 1234, 999).await.unwrap();
            assert_eq!(part, expect[1234..2233]);
            let empty = client.generic_read(h, expect.len() as u64, 10).await.unwrap();
            assert!(empty.is_empty());
            client.generic_close(h).await.unwrap();
        });
    }
}

#[test]
fn whole_file_local_write_strategy_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let world = two_se_world(dir.path());
    let client = world.client("alice").unwrap();
    let data = deterministic_bytes(2, 123_457);
    let put_data = data.clone();
    world.sim.block_on(async move {
        client
            .put_file("/alice/spooled", &put_data, AccessStrategy::WholeFileLocal, None)
            .await
            .unwrap();
        let got = client
            .get_file("/alice/spooled", AccessStrategy::RemotePartial, None)
            .await
            .unwrap();
        assert_eq!(got, put_data);
    });
}

#[test]
fn write_once_and_sequentiality_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let world = two_se_world(dir.path());
    let client = world.client("alice").unwrap();
    world.sim.block_on(async move {
        client
            .put_file("/alice/once", b"payload", AccessStrategy::RemotePartial, None)
            .await
            .unwrap();
        // A second write-once open of a live LFN fails.
        let err = client
            .generic_open("/alice/once", OpenMode::WriteOnce, AccessStrategy::RemotePartial)
            .await
            .unwrap_err();
        assert_eq!(err.code.as_str(), "AlreadyExists");
        // Remove, then the name is writable again.
        client.catalogue().remove(&"/alice/once".parse().unwrap()).await.unwrap();
        client
            .put_file("/alice/once", b"fresh", AccessStrategy::RemotePartial, None)
            .await
            .unwrap();

        // Non-sequential writes are rejected and kill the handle.
        let h = client
            .generic_open("/alice/seq", OpenMode::WriteOnce, AccessStrategy::RemotePartial)
            .await
            .unwrap();
        client.generic_write(h, 0, b"aaaa").await.unwrap();
        let err = client.generic_write(h, 0, b"bbbb").await.unwrap_err();
        assert_eq!(err.code.as_str(), "NonSequentialWrite");
        let err = client.generic_write(h, 4, b"cccc").await.unwrap_err();
        assert_eq!(err.code.as_str(), "BadHandle");
        // Nothing registered.
        let err = client.catalogue().resolve(&"/alice/seq".parse().unwrap()).await.unwrap_err();
        assert_eq!(err.code.as_str(), "NotFound");
    });
}

#[test]
fn at_se_suffix_targets_specific_storage_element() {
    let dir = tempfile::tempdir().unwrap();
    let world = two_se_world(dir.path());
    let client = world.client("alice").unwrap();
    world.sim.block_on(async move {
        client
            .put_file("/alice/on2@GSI::disk1", b"bytes", AccessStrategy::RemotePartial, None)
            .await
            .unwrap();
        let resolved = client.catalogue().resolve(&"/alice/on2".parse().unwrap()).await.unwrap();
        assert_eq!(resolved.locations[0].se.as_deref(), Some("GSI::disk1"));
        assert_eq!(resolved.locations[0].pfn.host, "se2");
    });
    // The bytes really are on se2.
    assert_eq!(world.ses["GSI::disk1"].lslist().unwrap().len(), 1);
    assert!(world.ses["CERN::disk1"].lslist().unwrap().is_empty());
}

#[test]
fn routed_read_pages_and_cache_hits() {
    let dir = tempfile::tempdir().unwrap();
    let world = WorldBuilder::new(dir.path())
        .seed(3)
        .se(SeSpec::simple("CERN::disk1", "se1:7100", "cern", 64 * MB))
        .aiod(AiodSpec::plain("aiod1:7200"))
        .client("client:1", "cern", "alice")
        .build()
        .unwrap();
    let client = world.client("alice").unwrap();
    let size = 150_000u64;
    let data = deterministic_bytes(9, size as usize);
    let route = RouteChain::parse("aiod1:7200").unwrap();

    let put_data = data.clone();
    let r = route.clone();
    world.sim.block_on(async move {
        client
            .put_file("/alice/routed", &put_data, AccessStrategy::RemotePartial, None)
            .await
            .unwrap();
        let got = client
            .get_file("/alice/routed", AccessStrategy::RemotePartial, Some(r.clone()))
            .await
            .unwrap();
        assert_eq!(got, put_data);
    });

    let counters = world.aiods["aiod1:7200"].counters();
    assert!(counters.next_hop_fetches > 0, "cold read fetched pages from the SE");
    let cold_fetches = counters.next_hop_fetches;

    // Repeat read: full cache hit, no new next-hop fetches.
    let client = world.client("alice").unwrap();
    let expect = data.clone();
    world.sim.block_on(async move {
        let got = client
            .get_file("/alice/routed", AccessStrategy::RemotePartial, Some(route))
            .await
            .unwrap();
        assert_eq!(got, expect);
    });
    let counters = world.aiods["aiod1:7200"].counters();
    assert_eq!(counters.next_hop_fetches, cold_fetches, "warm read adds no next-hop fetches");
    assert!(counters.hits > 0);
}

#[test]
fn routed_write_leaves_warm_caches_along_the_chain() {
    let dir = tempfile::tempdir().unwrap();
    let world = WorldBuilder::new(dir.path())
        .seed(4)
        .se(SeSpec::simple("CERN::disk1", "se1:7100", "cern", 64 * MB))
        .aiod(AiodSpec::plain("aiod1:7200"))
        .aiod(AiodSpec::plain("aiod2:7200"))
        .client("client:1", "cern", "alice")
        .build()
        .unwrap();
    let client = world.client("alice").unwrap();
    let data = deterministic_bytes(5, 200_000);
    let route = RouteChain::parse("aiod1:7200@aiod2:7200").unwrap();

    let put_data = data.clone();
    let r = route.clone();
    world.sim.block_on(async move {
        client
            .put_file("/alice/through", &put_data, AccessStrategy::RemotePartial, Some(r))
            .await
            .unwrap();
    });

    // The SE holds the committed file.
    assert_eq!(world.ses["CERN::disk1"].lslist().unwrap().len(), 1);
    // Both hops retained the pages.
    let resolved = {
        let client = world.client("alice").unwrap();
        world.sim.block_on(async move {
            client.catalogue().resolve(&"/alice/through".parse().unwrap()).await.unwrap()
        })
    };
    for addr in ["aiod1:7200", "aiod2:7200"] {
        assert!(
            world.aiods[addr].store().contains_guid(&resolved.guid),
            "{addr} should hold warm pages"
        );
    }

    // Reading via hop1 is served without contacting the SE again.
    let before = world.aiods["aiod1:7200"].counters().next_hop_fetches;
    let client = world.client("alice").unwrap();
    let expect = data.clone();
    world.sim.block_on(async move {
        let got = client
            .get_file("/alice/through", AccessStrategy::RemotePartial, Some(RouteChain::parse("aiod1:7200").unwrap()))
            .await
            .unwrap();
        assert_eq!(got, expect);
    });
    assert_eq!(world.aiods["aiod1:7200"].counters().next_hop_fetches, before);
}

#[test]
fn broker_replicates_and_moves() {
    let dir = tempfile::tempdir().unwrap();
    let world = two_se_world(dir.path());
    let client = world.client("alice").unwrap();
    let data = deterministic_bytes(6, 80_000);
    let put_data = data.clone();
    world.sim.block_on(async move {
        client
            .put_file("/alice/rep", &put_data, AccessStrategy::RemotePartial, None)
            .await
            .unwrap();
    });

    // Enqueue, run, verify the replica row and the bytes.
    let id = world
        .broker
        .enqueue(
            &world.catalogue,
            "alice:alice",
            &"/alice/rep".parse().unwrap(),
            "GSI::disk1",
            TransferKind::Replicate,
        )
        .unwrap();
    assert_eq!(world.broker.query(id).unwrap().state, TransferState::Queued);
    world.run_broker();
    assert_eq!(world.broker.query(id).unwrap().state, TransferState::Done);

    let client = world.client("alice").unwrap();
    let expect = data.clone();
    let resolved = world.sim.block_on(async move {
        let r = client.catalogue().resolve(&"/alice/rep".parse().unwrap()).await.unwrap();
        // Read back through the replica's SE.
        let got = client
            .get_file("/alice/rep@GSI::disk1", AccessStrategy::RemotePartial, None)
            .await
            .unwrap();
        assert_eq!(got, expect);
        r
    });
    assert_eq!(resolved.locations.len(), 2, "master plus one replica");

    // Duplicate replication is rejected at enqueue.
    let err = world
        .broker
        .enqueue(
            &world.catalogue,
            "alice:alice",
            &"/alice/rep".parse().unwrap(),
            "GSI::disk1",
            TransferKind::Replicate,
        )
        .unwrap_err();
    assert_eq!(err.code.as_str(), "AlreadyReplicated");

    // Move the master away from se1: content stays identical, se1 copy gone.
    let id = world
        .broker
        .enqueue(
            &world.catalogue,
            "alice:alice",
            &"/alice/rep".parse().unwrap(),
            "GSI::disk1",
            TransferKind::Move,
        )
        .unwrap();
    // Move to a SE already holding a replica is a legal "consolidate":
    // it only drops the source copy.
    world.run_broker();
    assert_eq!(world.broker.query(id).unwrap().state, TransferState::Done);
    let client = world.client("alice").unwrap();
    let expect = data.clone();
    world.sim.block_on(async move {
        let r = client.catalogue().resolve(&"/alice/rep".parse().unwrap()).await.unwrap();
        assert_eq!(r.locations.len(), 1);
        assert_eq!(r.locations[0].se.as_deref(), Some("GSI::disk1"));
        let got = client.get_file("/alice/rep", AccessStrategy::RemotePartial, None).await.unwrap();
        assert_eq!(got, expect);
    });
    assert!(world.ses["CERN::disk1"].lslist().unwrap().is_empty(), "moved copy erased");
}

#[test]
fn gatekeeper_redirects_by_load_and_guid() {
    let dir = tempfile::tempdir().unwrap();
    let world = WorldBuilder::new(dir.path())
        .seed(8)
        .se(SeSpec::simple("CERN::disk1", "se1:7100", "cern", 64 * MB))
        .aiod(AiodSpec::with_roles(
            "gate:7200",
            &[Role::IoGatekeeper, Role::CacheGatekeeper],
            &["slavea:7200", "slaveb:7200"],
        ))
        .aiod(AiodSpec::plain("slavea:7200"))
        .aiod(AiodSpec::plain("slaveb:7200"))
        .client("client:1", "cern", "alice")
        .build()
        .unwrap();

    let client = world.client("alice").unwrap();
    let data = deterministic_bytes(7, 50_000);
    let put_data = data.clone();
    world.sim.block_on(async move {
        client
            .put_file("/alice/gated", &put_data, AccessStrategy::RemotePartial, None)
            .await
            .unwrap();
    });

    // Load reports: slavea busy, slaveb idle -> open lands on slaveb.
    let net = world.sim.handle("client:1");
    world.sim.block_on({
        let net = net.clone();
        async move {
            for (server, conns) in [("slavea:7200", 10u64), ("slaveb:7200", 2u64)] {
                gridfs::aiod::send_load_report(
                    &net,
                    "gate:7200",
                    &gridfs::aiod::LoadReport {
                        server: server.to_string(),
                        open_connections: conns,
                        bytes_per_second_recent: 0,
                        timestamp: 0,
                    },
                    "admin",
                )
                .await
                .unwrap();
            }
        }
    });

    let client = world.client("alice").unwrap();
    let expect = data.clone();
    world.sim.block_on(async move {
        let got = client
            .get_file(
                "/alice/gated",
                AccessStrategy::RemotePartial,
                Some(RouteChain::parse("gate:7200").unwrap()),
            )
            .await
            .unwrap();
        assert_eq!(got, expect);
    });
    // The pages landed on slaveb (lower load), not slavea.
    let resolved = {
        let client = world.client("alice").unwrap();
        world.sim.block_on(async move {
            client.catalogue().resolve(&"/alice/gated".parse().unwrap()).await.unwrap()
        })
    };
    assert!(world.aiods["slaveb:7200"].store().contains_guid(&resolved.guid));
    assert!(!world.aiods["slavea:7200"].store().contains_guid(&resolved.guid));

    // Now the cache gatekeeper finds the GUID on slaveb and redirects
    // there even though slavea would win by load.
    let net = world.sim.handle("client:1");
    world.sim.block_on({
        let net = net.clone();
        async move {
            for (server, conns) in [("slavea:7200", 0u64), ("slaveb:7200", 99u64)] {
                gridfs::aiod::send_load_report(
                    &net,
                    "gate:7200",
                    &gridfs::aiod::LoadReport {
                        server: server.to_string(),
                        open_connections: conns,
                        bytes_per_second_recent: 0,
                        timestamp: 0,
                    },
                    "admin",
                )
                .await
                .unwrap();
            }
        }
    });
    let before_a = world.aiods["slavea:7200"].counters().next_hop_fetches;
    let client = world.client("alice").unwrap();
    let expect = data.clone();
    world.sim.block_on(async move {
        let got = client
            .get_file(
                "/alice/gated",
                AccessStrategy::RemotePartial,
                Some(RouteChain::parse("gate:7200").unwrap()),
            )
            .await
            .unwrap();
        assert_eq!(got, expect);
    });
    assert_eq!(
        world.aiods["slavea:7200"].counters().next_hop_fetches,
        before_a,
        "read was served by slaveb's warm cache"
    );
}

/// The cache gatekeeper returns the fastest positive responder when
/// several slaves hold a GUID; with fixed link latencies that choice is
/// deterministic.
#[test]
fn locate_guid_prefers_fastest_responder() {
    let dir = tempfile::tempdir().unwrap();
    let world = WorldBuilder::new(dir.path())
        .seed(33)
        .se(SeSpec::simple("CERN::disk1", "se1:7100", "cern", 64 * MB))
        .aiod(AiodSpec::with_roles(
            "gate:7200",
            &[Role::CacheGatekeeper, Role::IoGatekeeper],
            &["near:7200", "far:7200"],
        ))
        .aiod(AiodSpec::plain("near:7200"))
        .aiod(AiodSpec::plain("far:7200"))
        .client("client:1", "cern", "alice")
        // The near slave answers the gatekeeper quicker.
        .link("gate:7200", "near:7200", 1, 1 << 30)
        .link("gate:7200", "far:7200", 30, 1 << 30)
        .build()
        .unwrap();
    let client = world.client("alice").unwrap();
    let data = deterministic_bytes(3, 40_000);
    world.sim.block_on(async {
        client.put_file("/alice/loc", &data, AccessStrategy::RemotePartial, None).await.unwrap();
    });
    // Warm BOTH slave caches directly.
    for hop in ["near:7200", "far:7200"] {
        let c = world.client("alice").unwrap();
        let expect = data.clone();
        world.sim.block_on(async move {
            let got = c
                .get_file("/alice/loc", AccessStrategy::RemotePartial, Some(RouteChain::parse(hop).unwrap()))
                .await
                .unwrap();
            assert_eq!(got, expect);
        });
    }
    let resolved = {
        let c = world.client("alice").unwrap();
        world.sim.block_on(async move {
            c.catalogue().resolve(&"/alice/loc".parse().unwrap()).await.unwrap()
        })
    };
    let net = world.sim.handle("client:1");
    for _ in 0..3 {
        let located = world.sim.block_on(gridfs::aiod::locate_guid(
            &net,
            "gate:7200",
            &resolved.guid,
            "admin",
        ))
        .unwrap();
        assert_eq!(located.as_deref(), Some("near:7200"), "lowest-latency holder wins");
    }
    // A GUID held nowhere resolves to none.
    let located = world
        .sim
        .block_on(gridfs::aiod::locate_guid(
            &net,
            "gate:7200",
            &gridfs::types::Guid::from_u128(0xdead),
            "admin",
        ))
        .unwrap();
    assert!(located.is_none());
}

/// Small contract edges: sync before any write is a no-op, sync on a
/// read handle is refused, a second close reports BadHandle, and
/// querying an unknown transfer id is NotFound.
#[test]
fn handle_and_queue_edges() {
    let dir = tempfile::tempdir().unwrap();
    let world = two_se_world(dir.path());
    let client = world.client("alice").unwrap();
    world.sim.block_on(async {
        let h = client
            .generic_open("/alice/edge", OpenMode::WriteOnce, AccessStrategy::RemotePartial)
            .await
            .unwrap();
        client.generic_sync(h).await.unwrap();
        client.generic_write(h, 0, b"abc").await.unwrap();
        client.generic_sync(h).await.unwrap();
        client.generic_close(h).await.unwrap();
        let err = client.generic_close(h).await.unwrap_err();
        assert_eq!(err.code.as_str(), "BadHandle");

        let h = client
            .generic_open("/alice/edge", OpenMode::Read, AccessStrategy::RemotePartial)
            .await
            .unwrap();
        let err = client.generic_sync(h).await.unwrap_err();
        assert_eq!(err.code.as_str(), "BadHandle");
        // The mode guard does not kill the read handle.
        assert_eq!(client.generic_read(h, 0, 3).await.unwrap(), b"abc");
        client.generic_close(h).await.unwrap();
    });
    let err = world.broker.query(999).unwrap_err();
    assert_eq!(err.code.as_str(), "NotFound");
}

/// Byte equality of both read strategies for random (offset, size),
/// with a direct storage-element fetch as the independent oracle.
#[test]
fn read_strategies_agree_with_plugin_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let world = two_se_world(dir.path());
    let client = world.client("alice").unwrap();
    let size = 200_000u64;
    let data = deterministic_bytes(77, size as usize);
    let put_data = data.clone();
    world.sim.block_on(async {
        client
            .put_file("/alice/oracle@CERN::disk1", &put_data, AccessStrategy::RemotePartial, None)
            .await
            .unwrap();
    });
    let direntry = {
        let listing = world.ses["CERN::disk1"].lslist().unwrap();
        assert_eq!(listing.len(), 1);
        listing[0].0.clone()
    };

    let mut rng = rand::rngs::StdRng::seed_from_u64(5);
    let h_remote = world.sim.block_on(async {
        client
            .generic_open("/alice/oracle", OpenMode::Read, AccessStrategy::RemotePartial)
            .await
            .unwrap()
    });
    let h_local = world.sim.block_on(async {
        client
            .generic_open("/alice/oracle", OpenMode::Read, AccessStrategy::WholeFileLocal)
            .await
            .unwrap()
    });
    for _ in 0..50 {
        let offset = rng.gen_range(0..=size);
        let len = rng.gen_range(0..(size / 3));
        let (a, b) = world.sim.block_on(async {
            (
                client.generic_read(h_remote, offset, len).await.unwrap(),
                client.generic_read(h_local, offset, len).await.unwrap(),
            )
        });
        // The oracle: a direct ranged fetch through the SE service.
        let want_len = len.min(size - offset);
        let oracle = world
            .sim
            .block_on(world.ses["CERN::disk1"].fetch(&direntry, offset, want_len))
            .unwrap();
        assert_eq!(a, oracle, "RemotePartial differs from the plug-in fetch");
        assert_eq!(b, oracle, "WholeFileLocal differs from the plug-in fetch");
    }
    world.sim.block_on(async {
        client.generic_close(h_remote).await.unwrap();
        client.generic_close(h_local).await.unwrap();
    });
}

/// With max_concurrent = 1 the completion order of non-failing requests
/// equals the enqueue order.
#[test]
fn broker_fifo_fairness_at_concurrency_one() {
    let dir = tempfile::tempdir().unwrap();
    let world = WorldBuilder::new(dir.path())
        .seed(31)
        .broker_config(gridfs::transfer::BrokerConfig { max_concurrent: 1, ..Default::default() })
        .se(SeSpec::simple("CERN::disk1", "se1:7100", "cern", 64 * MB))
        .se(SeSpec::simple("GSI::disk1", "se2:7100", "gsi", 64 * MB))
        .client("client:1", "cern", "alice")
        .build()
        .unwrap();
    let client = world.client("alice").unwrap();
    world.sim.block_on(async {
        for i in 0..5 {
            client
                .put_file(
                    &format!("/alice/q{i}@CERN::disk1"),
                    &deterministic_bytes(i as u64, 5000),
                    AccessStrategy::RemotePartial,
                    None,
                )
                .await
                .unwrap();
        }
    });
    let ids: Vec<u64> = (0..5)
        .map(|i| {
            world
                .broker
                .enqueue(
                    &world.catalogue,
                    "alice:alice",
                    &format!("/alice/q{i}").parse().unwrap(),
                    "GSI::disk1",
                    TransferKind::Replicate,
                )
                .unwrap()
        })
        .collect();
    let mut completion_order = Vec::new();
    loop {
        let executed = world.broker_step();
        if executed.is_empty() {
            break;
        }
        assert_eq!(executed.len(), 1, "max_concurrent = 1 runs one request per step");
        for id in executed {
            if world.broker.query(id).unwrap().state == TransferState::Done {
                completion_order.push(id);
            }
        }
    }
    assert_eq!(completion_order, ids, "FIFO completion order");
}

/// Preloading fetches each listed page once; later reads and duplicate
/// preloads add no next-hop traffic.
#[test]
fn preload_coalesces_and_warms_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let world = WorldBuilder::new(dir.path())
        .seed(32)
        .se(SeSpec::simple("CERN::disk1", "se1:7100", "cern", 64 * MB))
        .aiod(AiodSpec::plain("a1:7200"))
        .client("client:1", "cern", "alice")
        .build()
        .unwrap();
    let client = world.client("alice").unwrap();
    let size = 100_000u64;
    let data = deterministic_bytes(33, size as usize);
    world.sim.block_on(async {
        client.put_file("/alice/pre", &data, AccessStrategy::RemotePartial, None).await.unwrap();
    });

    let resolved = world.sim.block_on(async {
        client.catalogue().resolve(&"/alice/pre".parse().unwrap()).await.unwrap()
    });
    let net = world.sim.handle("client:1");
    let ticket = gridfs::aiod::AccessTicket {
        route: RouteChain::parse("a1:7200").unwrap(),
        grid_user: "alice".into(),
        credential_ref: "/alice/.credential".parse().unwrap(),
        lfn: "/alice/pre".parse().unwrap(),
        pfn: resolved.locations[0].pfn.clone(),
        guid: resolved.guid,
        encryption: Default::default(),
    };
    world.sim.block_on(async {
        let mut sess = gridfs::aiod::open_session(
            &net,
            &ticket,
            OpenMode::Read,
            gridfs::aiod::AccessKind::Random,
            None,
            "alice:alice",
        )
        .await
        .unwrap();
        let pages = size.div_ceil(sess.page_size);
        // Preload the whole file, then again (idempotent), then read.
        sess.preload(&[(0, size)]).await.unwrap();
        sess.preload(&[(0, size)]).await.unwrap();
        let got = sess.read(0, size).await.unwrap();
        assert_eq!(got, data);
        sess.close(None).await.unwrap();

        let counters = world.aiods["a1:7200"].counters();
        assert_eq!(counters.next_hop_fetches, pages, "each page fetched exactly once");
    });
}

#[test]
fn partition_mid_write_surfaces_transport_error_and_no_registration() {
    let dir = tempfile::tempdir().unwrap();
    let world = two_se_world(dir.path());
    let client = world.client("alice").unwrap();
    let sim = &world.sim;

    let h = {
        let c = &client;
        sim.block_on(async move {
            let h = c
                .generic_open("/alice/crash@CERN::disk1", OpenMode::WriteOnce, AccessStrategy::RemotePartial)
                .await
                .unwrap();
            c.generic_write(h, 0, &[1u8; 1000]).await.unwrap();
            h
        })
    };
    sim.partition("se1:7100").unwrap();
    {
        let c = &client;
        sim.block_on(async move {
            let err = c.generic_write(h, 1000, &[2u8; 1000]).await.unwrap_err();
            assert_eq!(err.code.as_str(), "TransportError");
            // The handle is gone after the error.
            let err = c.generic_close(h).await.unwrap_err();
            assert_eq!(err.code.as_str(), "BadHandle");
            // Nothing was registered.
            let err = c.catalogue().resolve(&"/alice/crash".parse().unwrap()).await.unwrap_err();
            assert_eq!(err.code.as_str(), "NotFound");
        });
    }
    sim.heal("se1:7100").unwrap();
    // Retry succeeds after healing.
    let c = &client;
    sim.block_on(async move {
        c.put_file("/alice/crash", b"retry", AccessStrategy::RemotePartial, None).await.unwrap();
    });
}
