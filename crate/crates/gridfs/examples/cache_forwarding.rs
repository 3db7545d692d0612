//! The cache-and-forward network: reads routed through a chain of
//! cache servers, GUID-keyed pages, hit/miss counters, preloading, and
//! write-through replication that leaves warm caches along the route.
//!
//! ```bash
//! cargo run -p gridfs --example cache_forwarding
//! ```

use gridfs::access::AccessStrategy;
use gridfs::aiod::RouteChain;
use gridfs::scenario::{deterministic_bytes, AiodSpec, SeSpec, WorldBuilder};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let world = WorldBuilder::new(dir.path())
        .seed(4)
        .se(SeSpec::simple("CERN::disk1", "se1:7100", "cern", 256 << 20))
        .aiod(AiodSpec::plain("edge:7200"))
        .aiod(AiodSpec::plain("core:7200"))
        .client("client:1", "cern", "alice")
        .build()
        .unwrap();
    let client = world.client("alice").unwrap();
    let data = deterministic_bytes(9, 200_000);

    let counters = |addr: &str| world.aiods[addr].counters();

    world.sim.block_on(async {
        client.put_file("/alice/hot.dat", &data, AccessStrategy::RemotePartial, None).await.unwrap();
    });

    // Cold read through edge -> core -> SE.
    let route = RouteChain::parse("edge:7200@core:7200").unwrap();
    world.sim.block_on(async {
        let got = client
            .get_file("/alice/hot.dat", AccessStrategy::RemotePartial, Some(route.clone()))
            .await
            .unwrap();
        assert_eq!(got, data);
    });
    let (e, c) = (counters("edge:7200"), counters("core:7200"));
    println!("cold read through edge@core:");
    println!("  edge: {} misses, {} next-hop fetches", e.misses, e.next_hop_fetches);
    println!("  core: {} misses, {} next-hop fetches (these hit the SE)", c.misses, c.next_hop_fetches);

    // Warm read: zero new next-hop traffic anywhere.
    world.sim.block_on(async {
        let got = client
            .get_file("/alice/hot.dat", AccessStrategy::RemotePartial, Some(route.clone()))
            .await
            .unwrap();
        assert_eq!(got, data);
    });
    let e2 = counters("edge:7200");
    println!(
        "warm read: edge hits {} (+{}), next-hop fetches still {}",
        e2.hits,
        e2.hits - e.hits,
        e2.next_hop_fetches
    );

    // Because content is write-once and pages are keyed by (GUID,
    // offset), both caches hold identical bytes for every shared page.
    let resolved = world.sim.block_on(async {
        client.catalogue().resolve(&"/alice/hot.dat".parse().unwrap()).await.unwrap()
    });
    let edge_pages = world.aiods["edge:7200"].store().snapshot();
    let core_pages = world.aiods["core:7200"].store().snapshot();
    let mut identical = 0;
    for (g, off, bytes) in &edge_pages {
        if let Some((_, _, other)) = core_pages.iter().find(|(g2, off2, _)| g2 == g && off2 == off) {
            assert_eq!(bytes, other);
            identical += 1;
        }
    }
    println!(
        "coherence: {} shared pages of guid {} byte-identical across both caches",
        identical, resolved.guid
    );

    // Write-through replication: pushing a new file through the chain
    // leaves warm replica material on every hop.
    world.sim.block_on(async {
        client
            .put_file("/alice/pushed.dat", &data, AccessStrategy::RemotePartial, Some(route.clone()))
            .await
            .unwrap();
    });
    let pushed = world.sim.block_on(async {
        client.catalogue().resolve(&"/alice/pushed.dat".parse().unwrap()).await.unwrap()
    });
    for addr in ["edge:7200", "core:7200"] {
        println!(
            "{addr} holds pages for the pushed file: {}",
            world.aiods[addr].store().contains_guid(&pushed.guid)
        );
    }

    println!("virtual time used: {} ms", world.sim.now_ms());
}
