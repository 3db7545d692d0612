use clap::{Parser, Subcommand};
use gridfs::aiod::{AiodServer, RouteChain};
use gridfs::catalogue::{CatalogueService, OpExtension};
use gridfs::cli::shell::{ShellOutcome, ShellSession};
use gridfs::cli::Cli as GridCli;
use gridfs::config::{AiodFileConfig, CatalogueFileConfig, ClientFileConfig, SeFileConfig};
use gridfs::error::{GridError, GridResult};
use gridfs::net::tcp::TokioNet;
use gridfs::scenario::{run_scenario, ScriptFile, TopologyFile};
use gridfs::storage::SeService;
use gridfs::transfer::{TransferBroker, TransferKind};
use gridfs::types::{LfnPath, Mode};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "gridfs", about = "A desk-scale grid file system", version)]
struct Args {
    /// Client config file (defaults to $GRIDFS_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List a virtual directory.
    Ls {
        path: String,
        #[arg(short, long)]
        long: bool,
    },
    /// Create a virtual directory.
    Mkdir {
        path: String,
        #[arg(short, long, default_value = "755")]
        mode: String,
    },
    /// Copy between local files and the grid, or replicate between SEs.
    Cp { src: String, dst: String },
    /// Remove a file (or empty directory) and its stored copies.
    Rm { lfn: String },
    /// Rename a file.
    Mv { from: String, to: String },
    /// Print every physical location of a file, master first.
    Whereis { lfn: String },
    /// Print file content.
    Cat { lfn: String },
    /// Print the metadata tag list.
    Meta { lfn: String },
    /// Download a file, optionally through a cache-server route.
    Aioget {
        lfn: String,
        local: PathBuf,
        #[arg(long)]
        route: Option<String>,
    },
    /// Upload a file, optionally through a cache-server route.
    Aioput {
        local: PathBuf,
        lfn: String,
        #[arg(long)]
        route: Option<String>,
    },
    /// Asynchronous transfer queue operations.
    Transfer {
        #[command(subcommand)]
        cmd: TransferCmd,
    },
    /// Deployment bootstrap (run with the superuser token).
    Admin {
        #[command(subcommand)]
        cmd: AdminCmd,
    },
    /// Interactive session.
    Shell,
    /// Run the catalogue service (with the transfer broker).
    Catalogue {
        #[arg(long = "service-config")]
        service_config: PathBuf,
    },
    /// Run a storage element service.
    Se {
        #[arg(long = "service-config")]
        service_config: PathBuf,
    },
    /// Run a cache-and-forward I/O server.
    Aiod {
        #[arg(long = "service-config")]
        service_config: PathBuf,
    },
    /// Run a scripted scenario on the network simulator and emit the
    /// JSON event trace.
    Sim {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        script: PathBuf,
        /// Write the full JSON report here (stdout summary otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scratch directory (a temp dir by default).
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TransferCmd {
    /// Queue a replication (or move) of an LFN to a storage element.
    Enqueue {
        lfn: String,
        dst_se: String,
        #[arg(long = "move")]
        is_move: bool,
    },
    /// Show one request.
    Status { id: u64 },
    /// Execute one broker step now.
    Step,
}

#[derive(Subcommand)]
enum AdminCmd {
    /// Register a storage element in the catalogue.
    RegisterSe { name: String, addr: String, site: String },
    /// Create a user's home directory and credential file.
    BootstrapUser {
        /// Full auth token: `user` or `user:group1,group2`.
        token: String,
    },
}

fn main() {
    let args = Args::parse();
    let code = match run(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("gridfs: {e}");
            e.code().exit_code()
        }
    };
    std::process::exit(code);
}

fn run(args: Args) -> GridResult<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| GridError::backend_failure(format!("tokio: {e}")))?;
    match args.command {
        Command::Catalogue { service_config } => rt.block_on(run_catalogue(&service_config)),
        Command::Se { service_config } => rt.block_on(run_se(&service_config)),
        Command::Aiod { service_config } => rt.block_on(run_aiod(&service_config)),
        Command::Sim { topology, script, out, work_dir } => run_sim(&topology, &script, out, work_dir),
        other => {
            let cfg = ClientFileConfig::load(args.config.as_deref())?;
            rt.block_on(run_client_command(other, cfg))
        }
    }
}

async fn run_catalogue(path: &std::path::Path) -> GridResult<()> {
    let cfg = CatalogueFileConfig::load(path)?;
    let service = CatalogueService::new(cfg.service_config())?;
    let broker = TransferBroker::new(cfg.broker_config())?;
    let net: Arc<dyn gridfs::net::Net> = TokioNet::new(&cfg.listen);
    eprintln!("catalogue listening on {}", cfg.listen);
    // Periodic broker steps make queued transfers progress unattended.
    {
        let broker = broker.clone();
        let service = service.clone();
        let net = net.clone();
        let interval = cfg.broker.interval_ms.max(10);
        tokio::spawn(async move {
            loop {
                net.sleep_ms(interval).await;
                broker.step(&service, &net).await;
            }
        });
    }
    let ext: Arc<dyn OpExtension> = broker;
    service.serve(net, Some(ext)).await;
    Ok(())
}

async fn run_se(path: &std::path::Path) -> GridResult<()> {
    let cfg = SeFileConfig::load(path)?;
    let service = SeService::new(cfg.service_config())?;
    let net: Arc<dyn gridfs::net::Net> = TokioNet::new(&cfg.listen);
    eprintln!("storage element {} listening on {}", cfg.se_name, cfg.listen);
    service.serve(net).await;
    Ok(())
}

async fn run_aiod(path: &std::path::Path) -> GridResult<()> {
    let cfg = AiodFileConfig::load(path)?;
    let service = AiodServer::new(cfg.service_config())?;
    let net: Arc<dyn gridfs::net::Net> = TokioNet::new(&cfg.listen);
    eprintln!("aiod listening on {}", cfg.listen);
    service.serve(net).await;
    Ok(())
}

fn run_sim(
    topology: &std::path::Path,
    script: &std::path::Path,
    out: Option<PathBuf>,
    work_dir: Option<PathBuf>,
) -> GridResult<()> {
    let topo = TopologyFile::parse(
        &std::fs::read_to_string(topology)
            .map_err(|e| GridError::bad_request(format!("{}: {e}", topology.display())))?,
    )?;
    let script = ScriptFile::parse(
        &std::fs::read_to_string(script)
            .map_err(|e| GridError::bad_request(format!("{}: {e}", script.display())))?,
    )?;
    let (base, cleanup) = match work_dir {
        Some(dir) => (dir, false),
        None => (
            std::env::temp_dir().join(format!("gridfs-sim-{}", std::process::id())),
            true,
        ),
    };
    let report = run_scenario(base.clone(), &topo, &script)?;
    for line in &report.steps {
        println!("{line}");
    }
    println!("virtual time: {} ms", report.virtual_ms);
    println!("trace events: {}", report.events.len());
    println!("trace hash: {}", report.trace_hash);
    if let Some(out) = out {
        let body = serde_json::to_vec_pretty(&report)
            .map_err(|e| GridError::backend_failure(format!("encode report: {e}")))?;
        std::fs::write(&out, body)
            .map_err(|e| GridError::backend_failure(format!("{}: {e}", out.display())))?;
        println!("report written to {}", out.display());
    }
    if cleanup {
        std::fs::remove_dir_all(&base).ok();
    }
    Ok(())
}

async fn run_client_command(cmd: Command, cfg: ClientFileConfig) -> GridResult<()> {
    let net: Arc<dyn gridfs::net::Net> = TokioNet::new("client");
    let client = gridfs::access::GridClient::new(net, cfg.client_config()?)?;
    let cli = GridCli::new(client);
    match cmd {
        Command::Ls { path, long } => {
            print!("{}", cli.ls(&LfnPath::parse(&path)?, long).await?);
        }
        Command::Mkdir { path, mode } => {
            print!("{}", cli.mkdir(&LfnPath::parse(&path)?, Mode::parse_octal(&mode)?).await?);
        }
        Command::Cp { src, dst } => {
            print!("{}", cli.cp(&src, &dst).await?);
        }
        Command::Rm { lfn } => {
            print!("{}", cli.rm(&LfnPath::parse(&lfn)?).await?);
        }
        Command::Mv { from, to } => {
            print!("{}", cli.mv(&LfnPath::parse(&from)?, &LfnPath::parse(&to)?).await?);
        }
        Command::Whereis { lfn } => {
            print!("{}", cli.whereis(&LfnPath::parse(&lfn)?).await?);
        }
        Command::Cat { lfn } => {
            let bytes = cli.cat(&LfnPath::parse(&lfn)?).await?;
            std::io::stdout()
                .write_all(&bytes)
                .map_err(|e| GridError::backend_failure(format!("stdout: {e}")))?;
        }
        Command::Meta { lfn } => {
            print!("{}", cli.meta(&LfnPath::parse(&lfn)?).await?);
        }
        Command::Aioget { lfn, local, route } => {
            let route = route.as_deref().map(RouteChain::parse).transpose()?;
            print!("{}", cli.aioget(&lfn, &local, route).await?);
        }
        Command::Aioput { local, lfn, route } => {
            let route = route.as_deref().map(RouteChain::parse).transpose()?;
            print!("{}", cli.aioput(&local, &lfn, route).await?);
        }
        Command::Transfer { cmd } => match cmd {
            TransferCmd::Enqueue { lfn, dst_se, is_move } => {
                let kind = if is_move { TransferKind::Move } else { TransferKind::Replicate };
                let id = cli.transfer_enqueue(&LfnPath::parse(&lfn)?, &dst_se, kind).await?;
                println!("transfer {id} queued");
            }
            TransferCmd::Status { id } => {
                let req = cli.transfer_status(id).await?;
                println!(
                    "{} {} -> {} {:?} attempts={}{}",
                    req.id,
                    req.lfn,
                    req.dst_se,
                    req.state,
                    req.attempts,
                    req.last_error.map(|e| format!(" last_error={e}")).unwrap_or_default()
                );
            }
            TransferCmd::Step => {
                let executed = cli.transfer_step().await?;
                println!("executed {executed:?}");
            }
        },
        Command::Admin { cmd } => match cmd {
            AdminCmd::RegisterSe { name, addr, site } => {
                print!("{}", cli.register_se(&name, &addr, &site).await?);
            }
            AdminCmd::BootstrapUser { token } => {
                print!("{}", cli.bootstrap_user(&token).await?);
            }
        },
        Command::Shell => {
            let mut session = ShellSession::new(cli, cfg.dir_cache_ttl_s);
            let stdin = std::io::stdin();
            loop {
                print!("{}", session.prompt());
                std::io::stdout().flush().ok();
                let mut line = String::new();
                match stdin.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {}
                    Err(_) => break,
                }
                match session.exec_line(&line).await {
                    Ok(ShellOutcome::Exit) => break,
                    Ok(ShellOutcome::Output(out)) => print!("{out}"),
                    Err(e) => eprintln!("error: {e}"),
                }
            }
        }
        Command::Catalogue { .. } | Command::Se { .. } | Command::Aiod { .. } | Command::Sim { .. } => {
            unreachable!("handled before client setup")
        }
    }
    Ok(())
}
