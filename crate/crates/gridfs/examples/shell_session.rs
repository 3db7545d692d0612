//! A scripted interactive session: the same shell the `gridfs shell`
//! subcommand runs, driven line by line against a simulated deployment,
//! including a mid-session partition the session survives.
//!
//! ```bash
//! cargo run -p gridfs --example shell_session
//! ```

use gridfs::cli::shell::{ShellOutcome, ShellSession};
use gridfs::cli::Cli;
use gridfs::scenario::{SeSpec, WorldBuilder};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let world = WorldBuilder::new(dir.path())
        .seed(13)
        .se(SeSpec::simple("CERN::disk1", "se1:7100", "cern", 64 << 20))
        .se(SeSpec::simple("GSI::disk1", "se2:7100", "gsi", 64 << 20))
        .client("client:1", "cern", "alice")
        .build()
        .unwrap();

    let local = dir.path().join("notes.txt");
    std::fs::write(&local, b"beam energy 13.6 TeV\n").unwrap();

    let mut session = ShellSession::new(Cli::new(world.client("alice").unwrap()), 5);
    let script = [
        "whoami".to_string(),
        "cd /alice".to_string(),
        "mkdir notes".to_string(),
        format!("cp local:{} notes/run1.txt", local.display()),
        "tag notes/run1.txt detector tpc".to_string(),
        "ls -l notes".to_string(),
        "cat notes/run1.txt".to_string(),
        "meta notes/run1.txt".to_string(),
        "cp notes/run1.txt@CERN::disk1 notes/run1.txt@GSI::disk1".to_string(),
        "transfer step".to_string(),
        "whereis notes/run1.txt".to_string(),
        "#partition".to_string(),
        "ls notes".to_string(),
        "exit".to_string(),
    ];

    for line in &script {
        if line == "#partition" {
            println!("--- partitioning and healing the catalogue mid-session ---");
            world.sim.partition("cat:7000").unwrap();
            world.sim.heal("cat:7000").unwrap();
            continue;
        }
        println!("{}{line}", session.prompt());
        match world.sim.block_on(session.exec_line(line)) {
            Ok(ShellOutcome::Output(out)) => print!("{out}"),
            Ok(ShellOutcome::Exit) => {
                println!("(session closed)");
                break;
            }
            Err(e) => println!("error: {e}"),
        }
    }
}
