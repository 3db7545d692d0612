//! Per-connection bandwidth regulation on the cache servers: a token
//! bucket shapes each session independently, measured here in virtual
//! time where a 10 MiB transfer at 1 MiB/s really takes ten seconds —
//! without the example taking ten seconds.
//!
//! ```bash
//! cargo run -p gridfs --example rate_limiting
//! ```

use gridfs::access::AccessStrategy;
use gridfs::aiod::{RouteChain, TokenBucket};
use gridfs::scenario::{deterministic_bytes, AiodSpec, SeSpec, WorldBuilder};

const MIB: u64 = 1 << 20;

fn main() {
    // The primitive itself: pure arithmetic over a virtual clock.
    let mut bucket = TokenBucket::new(MIB, 256 << 10);
    let mut now = 0u64;
    for chunk in 0..4 {
        let delay = bucket.delay_for(now, 256 << 10);
        println!("chunk {chunk}: 256 KiB costs {delay} ms of delay");
        now += delay;
    }

    // The same bucket wired into a cache server.
    let dir = tempfile::tempdir().unwrap();
    let world = WorldBuilder::new(dir.path())
        .seed(6)
        .links(0, 8 << 30)
        .se(SeSpec::simple("CERN::disk1", "se1:7100", "cern", 64 << 20))
        .aiod(AiodSpec { rate_limit_bps: MIB, ..AiodSpec::plain("shaper:7200") })
        .client("client:1", "cern", "alice")
        .client("client:2", "cern", "bob")
        .build()
        .unwrap();
    let data = deterministic_bytes(7, (10 * MIB) as usize);
    let alice = world.client("alice").unwrap();
    world.sim.block_on(async {
        alice.put_file("/alice/big.dat", &data, AccessStrategy::RemotePartial, None).await.unwrap();
    });

    let route = RouteChain::parse("shaper:7200").unwrap();
    let start = world.sim.now_ms();
    world.sim.block_on(async {
        let got = alice
            .get_file("/alice/big.dat", AccessStrategy::RemotePartial, Some(route.clone()))
            .await
            .unwrap();
        assert_eq!(got.len() as u64, 10 * MIB);
    });
    let single = world.sim.now_ms() - start;
    println!("\nsingle connection: 10 MiB at 1 MiB/s took {:.2} s of virtual time", single as f64 / 1000.0);

    // Two parallel connections each get their own bucket.
    let alice2 = world.client("alice").unwrap();
    let bob = world.client("bob").unwrap();
    let start = world.sim.now_ms();
    world.sim.block_on(async {
        let pull = |c: gridfs::access::GridClient, r: RouteChain| async move {
            c.get_file("/alice/big.dat", AccessStrategy::RemotePartial, Some(r)).await.unwrap().len()
        };
        let (a, b) = futures::join!(pull(alice2, route.clone()), pull(bob, route.clone()));
        assert_eq!(a + b, (20 * MIB) as usize);
    });
    let both = world.sim.now_ms() - start;
    println!(
        "two parallel connections: 20 MiB total in {:.2} s -> aggregate {:.2} MiB/s (per-connection limits)",
        both as f64 / 1000.0,
        (20.0 * 1000.0) / both as f64
    );
}
