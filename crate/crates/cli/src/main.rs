//! `otoar`: synthetic data, landmark training and evaluation, camera
//! registration, tracking and the session service.

/// `print!` that ignores a closed stdout, e.g. when piped into `head`.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout().lock(), $($t)*);
    }};
}

macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

mod args;
mod camera;
mod error;
mod manifest;
mod model;

use std::net::SocketAddr;
use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches};

use args::{Cli, Command, ServeArgs};
use error::{CliError, Result};
use manifest::Manifest;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Per-invocation settings shared by all subcommands.
pub struct Ctx {
    pub argv: Vec<String>,
    pub threads: u64,
    pub manifest: Option<std::path::PathBuf>,
}

impl Ctx {
    pub fn manifest(&self, subcommand: &str) -> Manifest {
        Manifest::new(subcommand, &self.argv, self.threads)
    }

    pub fn manifest_path(&self) -> Option<&Path> {
        self.manifest.as_deref()
    }
}

fn parse(argv: &[String]) -> Result<Option<(Cli, ArgMatches)>> {
    let full = std::iter::once("otoar".to_string()).chain(argv.iter().cloned());
    let matches = match Cli::command().try_get_matches_from(full) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            out!("{e}");
            return Ok(None);
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            return Err(CliError::usage(format!("missing subcommand; see `otoar --help`\n{}", Cli::command().render_usage())));
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return Err(CliError::usage(first.trim_start_matches("error: ").to_string()));
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::usage(e.to_string()))?;
    Ok(Some((cli, matches)))
}

fn serve(a: &ServeArgs) -> Result<()> {
    let addr = SocketAddr::new(a.host, a.port);
    let root = a.data_root.clone();
    if !root.is_dir() {
        return Err(CliError::data(format!("{}: data root is not a directory", root.display())));
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::data(format!("runtime: {e}")))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::data(format!("bind {addr}: {e}")))?;
        let bound = listener.local_addr().map_err(|e| CliError::data(e.to_string()))?;
        eprintln!("listening on http://{bound} with data root {}", root.display());
        otoar_service::serve(listener, root).await.map_err(|e| CliError::data(format!("serve: {e}")))
    })
}

pub fn run(argv: Vec<String>) -> Result<()> {
    let Some((cli, matches)) = parse(&argv)? else {
        return Ok(());
    };
    let ctx = Ctx {
        argv,
        threads: cli.threads,
        manifest: cli.manifest.clone(),
    };
    match &cli.command {
        Command::Synth(a) => model::synth(&ctx, a),
        Command::Train(a) => {
            let sub = matches.subcommand_matches("train").expect("train matched");
            let explicit = |id: &str| sub.value_source(id) == Some(ValueSource::CommandLine);
            model::train(&ctx, a, &explicit)
        }
        Command::Eval(a) => model::eval(&ctx, a),
        Command::Predict(a) => model::predict(&ctx, a),
        Command::Register(a) => camera::register(&ctx, a),
        Command::Track(a) => camera::track(&ctx, a),
        Command::Scene(a) => camera::scene(&ctx, a),
        Command::Serve(a) => serve(a),
        Command::NetspecCheck(a) => model::netspec_check(&ctx, a),
        Command::Replay(a) => {
            let m = Manifest::load(&a.manifest)?;
            if m.subcommand == "replay" || m.argv.first().is_some_and(|s| s == "replay") {
                return Err(CliError::usage("a replay manifest cannot be replayed"));
            }
            run(m.argv)
        }
    }
}

fn main() -> ExitCode {
    match run(std::env::args().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
