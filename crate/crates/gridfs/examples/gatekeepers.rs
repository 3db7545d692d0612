//! Gate keepers: one front door redirects opens to slave servers, by
//! lowest load for fresh I/O and by GUID presence for cached content.
//! Slaves push monitoring reports to the gatekeeper themselves.
//!
//! ```bash
//! cargo run -p gridfs --example gatekeepers
//! ```

use gridfs::access::AccessStrategy;
use gridfs::aiod::{locate_guid, Role, RouteChain};
use gridfs::scenario::{deterministic_bytes, AiodSpec, SeSpec, WorldBuilder};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let world = WorldBuilder::new(dir.path())
        .seed(5)
        .se(SeSpec::simple("CERN::disk1", "se1:7100", "cern", 64 << 20))
        .aiod(AiodSpec::with_roles(
            "gate:7200",
            &[Role::IoGatekeeper, Role::CacheGatekeeper],
            &["slave-a:7200", "slave-b:7200"],
        ))
        .aiod(AiodSpec {
            report_to: Some("gate:7200".into()),
            report_every_ms: 2000,
            ..AiodSpec::plain("slave-a:7200")
        })
        .aiod(AiodSpec {
            report_to: Some("gate:7200".into()),
            report_every_ms: 2000,
            ..AiodSpec::plain("slave-b:7200")
        })
        .client("client:1", "cern", "alice")
        .build()
        .unwrap();
    let client = world.client("alice").unwrap();
    let data = deterministic_bytes(6, 64_000);

    world.sim.block_on(async {
        client.put_file("/alice/shared.dat", &data, AccessStrategy::RemotePartial, None).await.unwrap();
    });

    // Let the monitoring daemons push a round of reports.
    let net = world.sim.handle("client:1");
    world.sim.block_on(async { net.sleep_ms(2500).await });

    // All opens go through the gatekeeper; the client follows the
    // redirect transparently.
    let route = RouteChain::parse("gate:7200").unwrap();
    world.sim.block_on(async {
        let got = client
            .get_file("/alice/shared.dat", AccessStrategy::RemotePartial, Some(route.clone()))
            .await
            .unwrap();
        assert_eq!(got, data);
    });
    let (a, b) = (
        world.aiods["slave-a:7200"].counters(),
        world.aiods["slave-b:7200"].counters(),
    );
    let warm = if a.cached_bytes > 0 { "slave-a" } else { "slave-b" };
    println!("first open redirected by load; {warm} served it and now caches the pages");
    println!("  slave-a: {} cached bytes, slave-b: {} cached bytes", a.cached_bytes, b.cached_bytes);

    // The cache gatekeeper can answer GUID queries for the whole site.
    let resolved = world.sim.block_on(async {
        client.catalogue().resolve(&"/alice/shared.dat".parse().unwrap()).await.unwrap()
    });
    let located = world.sim.block_on(async {
        locate_guid(&net, "gate:7200", &resolved.guid, "admin").await.unwrap()
    });
    println!("gatekeeper locates guid {} on {:?}", resolved.guid, located);

    // Repeated opens keep landing on the warm cache even if the other
    // slave is idle: GUID presence wins over load.
    world.sim.block_on(async {
        for _ in 0..3 {
            let got = client
                .get_file("/alice/shared.dat", AccessStrategy::RemotePartial, Some(route.clone()))
                .await
                .unwrap();
            assert_eq!(got, data);
        }
    });
    let (a2, b2) = (
        world.aiods["slave-a:7200"].counters(),
        world.aiods["slave-b:7200"].counters(),
    );
    println!(
        "after 3 more opens: slave-a {} next-hop fetches, slave-b {} (no re-fetches anywhere)",
        a2.next_hop_fetches, b2.next_hop_fetches
    );
    assert_eq!(a.next_hop_fetches + b.next_hop_fetches, a2.next_hop_fetches + b2.next_hop_fetches);
}
