//! Smoke test over real sockets: the same service code that runs under
//! the simulator serves a catalogue and a storage element on localhost
//! TCP, and a client pushes a file through the whole write/read path.

use gridfs::access::{AccessStrategy, ClientConfig, GridClient};
use gridfs::catalogue::{CatalogueConfig, CatalogueService, OpExtension};
use gridfs::net::tcp::TokioNet;
use gridfs::net::Net;
use gridfs::scenario::bootstrap_user;
use gridfs::storage::{Lifetime, PluginKind, SeConfig, SeService, VolumeSpec};
use gridfs::transfer::{BrokerConfig, TransferBroker};
use gridfs::types::{Mode, Principal};
use std::sync::Arc;

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn real_socket_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cat_addr = format!("127.0.0.1:{}", free_port());
    let se_addr = format!("127.0.0.1:{}", free_port());

    let catalogue = CatalogueService::new(CatalogueConfig {
        listen: cat_addr.clone(),
        superuser: "admin".into(),
        journal_path: Some(dir.path().join("cat.journal")),
        snapshot_every_n_ops: 1000,
        seed: Some(1),
    })
    .unwrap();
    let broker = TransferBroker::new(BrokerConfig::default()).unwrap();
    {
        let svc = catalogue.clone();
        let net: Arc<dyn Net> = TokioNet::new(&cat_addr);
        let ext: Arc<dyn OpExtension> = broker;
        tokio::spawn(async move {
            svc.serve(net, Some(ext)).await;
        });
    }

    let se = SeService::new(SeConfig {
        se_name: "LOCAL::disk1".into(),
        plugin: PluginKind::File,
        listen: se_addr.clone(),
        site: "local".into(),
        root_dir: dir.path().join("store"),
        cache_dir: dir.path().join("aux"),
        cache_budget_bytes: 64 << 20,
        volumes: vec![VolumeSpec {
            id: "v0".into(),
            mount_point: "v0".into(),
            capacity_bytes: 64 << 20,
            lifetime: Lifetime::Infinite,
        }],
    })
    .unwrap();
    {
        let svc = se.clone();
        let net: Arc<dyn Net> = TokioNet::new(&se_addr);
        tokio::spawn(async move {
            svc.serve(net).await;
        });
    }

    // Bootstrap directly via the service handles, like a deployment
    // script would over the wire.
    catalogue
        .mutate(
            "register_se",
            serde_json::json!({"name": "LOCAL::disk1", "addr": se_addr, "site": "local"}),
            "admin",
        )
        .unwrap();
    bootstrap_user(&catalogue, "admin", &Principal::new("alice", &["alice"])).unwrap();

    // Give both accept loops a moment to bind.
    let net: Arc<dyn Net> = TokioNet::new("client");
    for _ in 0..50 {
        if net.dial(&cat_addr).await.is_ok() && net.dial(&se_addr).await.is_ok() {
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }

    let client = GridClient::new(
        net,
        ClientConfig {
            catalogue_addr: cat_addr.clone(),
            default_se: "LOCAL::disk1".into(),
            site: "local".into(),
            cache_dir: dir.path().join("client"),
            route: None,
            auth: "alice:alice".into(),
            credential_ref: None,
            staging_budget_bytes: 1 << 30,
        },
    )
    .unwrap();

    let data: Vec<u8> = (0..100_000u32).map(|i| (i % 251) as u8).collect();
    client.catalogue().mkdir(&"/alice/tcp".parse().unwrap(), Mode::new(0o755)).await.unwrap();
    client
        .put_file("/alice/tcp/f", &data, AccessStrategy::RemotePartial, None)
        .await
        .unwrap();
    let got = client.get_file("/alice/tcp/f", AccessStrategy::RemotePartial, None).await.unwrap();
    assert_eq!(got, data);
    let got = client.get_file("/alice/tcp/f", AccessStrategy::WholeFileLocal, None).await.unwrap();
    assert_eq!(got, data);

    // The listing travels over real TCP too.
    let entries = client.catalogue().list_dir(&"/alice/tcp".parse().unwrap()).await.unwrap();
    assert_eq!(entries.len(), 2, "file plus its virtual .meta entry");
}
