//! The asynchronous transfer queue: enqueue replications, let the
//! broker execute them in deterministic steps, watch a flaky
//! destination force retries, and finish with a move that consolidates
//! the file on one storage element.
//!
//! ```bash
//! cargo run -p gridfs --example replication_broker
//! ```

use gridfs::access::AccessStrategy;
use gridfs::error::GridError;
use gridfs::scenario::{deterministic_bytes, SeSpec, WorldBuilder};
use gridfs::transfer::TransferKind;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let world = WorldBuilder::new(dir.path())
        .seed(2)
        .se(SeSpec::simple("SRC::disk1", "se1:7100", "src", 64 << 20))
        .se(SeSpec::simple("DST::disk1", "se2:7100", "dst", 64 << 20))
        .client("client:1", "src", "alice")
        .build()
        .unwrap();
    let client = world.client("alice").unwrap();
    let data = deterministic_bytes(3, 80_000);

    world.sim.block_on(async {
        client
            .put_file("/alice/raw.dat@SRC::disk1", &data, AccessStrategy::RemotePartial, None)
            .await
            .unwrap();
    });
    println!("master written to SRC::disk1");

    // The first two allocation attempts at the destination fail.
    {
        let mut failures_left = 2;
        world.ses["DST::disk1"].set_fault_hook(Box::new(move |op| {
            if op == "allocate" && failures_left > 0 {
                failures_left -= 1;
                Some(GridError::no_space("injected flakiness"))
            } else {
                None
            }
        }));
    }

    let id = world
        .broker
        .enqueue(
            &world.catalogue,
            "alice:alice",
            &"/alice/raw.dat".parse().unwrap(),
            "DST::disk1",
            TransferKind::Replicate,
        )
        .unwrap();
    println!("queued transfer {id}: replicate /alice/raw.dat -> DST::disk1");

    loop {
        let executed = world.broker_step();
        let req = world.broker.query(id).unwrap();
        println!(
            "broker step executed {executed:?}; request is {:?} (attempts {}{})",
            req.state,
            req.attempts,
            req.last_error.as_deref().map(|e| format!(", last error: {e}")).unwrap_or_default()
        );
        if executed.is_empty() || matches!(req.state, gridfs::transfer::TransferState::Done) {
            break;
        }
    }

    world.sim.block_on(async {
        let resolved = client.catalogue().resolve(&"/alice/raw.dat".parse().unwrap()).await.unwrap();
        println!("\nlocations after replication:");
        for loc in &resolved.locations {
            println!("  {} on {}", loc.pfn, loc.se.as_deref().unwrap_or("?"));
        }
        let replica = client
            .get_file("/alice/raw.dat@DST::disk1", AccessStrategy::RemotePartial, None)
            .await
            .unwrap();
        println!("replica is byte-identical: {}", replica == data);
    });

    // A move drops the source copy after the data is safe elsewhere.
    let id = world
        .broker
        .enqueue(
            &world.catalogue,
            "alice:alice",
            &"/alice/raw.dat".parse().unwrap(),
            "DST::disk1",
            TransferKind::Move,
        )
        .unwrap();
    world.run_broker();
    println!("\nafter move {id}:");
    world.sim.block_on(async {
        let resolved = client.catalogue().resolve(&"/alice/raw.dat".parse().unwrap()).await.unwrap();
        for loc in &resolved.locations {
            println!("  {} on {}", loc.pfn, loc.se.as_deref().unwrap_or("?"));
        }
    });
    println!("source SE now holds {} files", world.ses["SRC::disk1"].lslist().unwrap().len());
}
