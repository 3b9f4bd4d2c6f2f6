//! The `igda` command: zero-shot prediction, discovery runs, log analysis
//! and the interactive session server.

pub mod backend;
pub mod commands;
pub mod config;
pub mod error;
pub mod session;

use std::io::Write;
use std::sync::Arc;

use config::{Cli, Command, ResolvedConfig, ServeArgs};
use error::{Failure, ResultExt, PORT_BUSY};

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Predict(a) => commands::predict(&a),
        Command::Discover(a) => commands::discover(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Serve(a) => serve(&a),
    }
}

pub fn serve(args: &ServeArgs) -> Result<(), Failure> {
    let cfg = ResolvedConfig::resolve(&args.common, Some(&args.looping))?;
    let (graph_file, graph) = backend::load_graph(&cfg.graph)?;
    let spec = backend::BackendSpec::from_config(&cfg)?;
    spec.check(&graph)?;
    let port = args.port.unwrap_or(cfg.port);
    let listener = std::net::TcpListener::bind(("127.0.0.1", port)).map_err(|e| {
        let code = if e.kind() == std::io::ErrorKind::AddrInUse { PORT_BUSY } else { error::RUNTIME };
        Failure::new(code, anyhow::Error::new(e).context(format!("binding port {port}")))
    })?;
    listener.set_nonblocking(true).runtime("configuring the listener")?;
    let addr = listener.local_addr().runtime("reading the bound address")?;

    let ui_dir = args.ui_dir.clone().or(cfg.ui_dir.clone()).filter(|d| {
        let ok = d.is_dir();
        if !ok {
            tracing::warn!(dir = %d.display(), "UI directory not found; serving the API only");
        }
        ok
    });
    let state = session::ServerState::open(cfg.out.clone(), spec, cfg.discovery.clone(), Some(graph_file))
        .runtime("loading saved sessions")?;
    let app = session::router(Arc::new(state), ui_dir);

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().runtime("starting the runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener).runtime("adopting the listener")?;
        println!("listening on http://{addr}");
        std::io::stdout().flush().ok();
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                tokio::signal::ctrl_c().await.ok();
            })
            .await
            .runtime("serving")
    })
}
