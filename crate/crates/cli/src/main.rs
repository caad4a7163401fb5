use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use conet_cli::commands::{self, Report, DEFAULT_VALID_DAYS};
use conet_cli::error::EXIT_FAILED;
use conet_cli::{daemon, CliError};
use conet_core::negotiation::SessionId;
use conet_core::net::Endpoint;
use conet_core::{Timestamp, TrustRegistry};

/// Peer-to-peer contract agents: author Ricardian contracts, negotiate them
/// over signed messages, and trace the documents they reference.
#[derive(Parser)]
#[command(name = "conet", version)]
struct Cli {
    /// Agent state directory: keys, agent.toml, registry, documents, logs.
    #[arg(long, global = true, default_value = ".conet", env = "CONET_STATE_DIR")]
    state_dir: PathBuf,
    /// Seed for key generation and scenarios.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Machine-readable output on stdout, and errors as JSON on stderr.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create an identity, trust it locally, and write agent.toml if missing.
    Keygen {
        name: String,
        /// Endpoint for a new agent.toml, e.g. tcp://127.0.0.1:7700.
        #[arg(long)]
        listen: Option<Endpoint>,
        #[arg(long, default_value_t = DEFAULT_VALID_DAYS)]
        valid_days: u64,
    },
    /// Manage counterparties.
    #[command(subcommand)]
    Peer(PeerCommand),
    /// Author and check templates.
    #[command(subcommand)]
    Template(TemplateCommand),
    /// Author and check contracts.
    #[command(subcommand)]
    Contract(ContractCommand),
    /// Offer contracts to a counterparty, opening a session.
    Offer {
        /// Party id or registry display name.
        #[arg(long)]
        to: String,
        /// Contract or proposal files.
        #[arg(long = "contract", required = true)]
        contracts: Vec<PathBuf>,
        /// Seconds the offer stays open.
        #[arg(long)]
        validity: Option<u64>,
        /// Wait up to this many seconds for the counterparty's answer.
        #[arg(long)]
        wait: Option<u64>,
    },
    /// Accept the live offer of a session.
    Accept { session: SessionId },
    /// Reject the live offer of a session.
    Reject { session: SessionId },
    /// Resolve referenced documents from another agent.
    Trace {
        #[arg(required = true)]
        hashes: Vec<String>,
        /// Party id, registry display name, or endpoint.
        #[arg(long)]
        from: String,
        #[arg(long, default_value_t = 30)]
        wait: u64,
    },
    /// Run the agent on tcp with the admin API, until interrupted.
    Serve,
    /// Write a session's signed transcript.
    ExportTranscript {
        session: SessionId,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify a transcript file without any agent state.
    VerifyTranscript {
        file: PathBuf,
        /// Trust registry; defaults to the state directory's registry.json.
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Instant at which identity windows are checked (RFC 3339); defaults to now.
        #[arg(long)]
        at: Option<Timestamp>,
    },
    /// Scripted multi-agent scenarios on the simulated network.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
}

#[derive(Subcommand)]
enum PeerCommand {
    /// Trust a peer's public key file and record its endpoint.
    Add {
        id_file: PathBuf,
        endpoint: Endpoint,
        #[arg(long, default_value_t = DEFAULT_VALID_DAYS)]
        valid_days: u64,
    },
}

#[derive(Subcommand)]
enum TemplateCommand {
    /// Write a template: provisions in order, then parameters.
    New {
        #[arg(long)]
        title: String,
        /// Provision text; `${key}` is a placeholder, `$$` a literal dollar.
        #[arg(long = "provision")]
        provisions: Vec<String>,
        /// Parameter as key:type.
        #[arg(long = "param")]
        params: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the content hash of a template, contract or proposal.
    Hash { file: PathBuf },
    /// Check a template's structure and parameter types.
    Lint { file: PathBuf },
    /// Store a template in the agent's documents.
    Add {
        file: PathBuf,
        /// Withhold the template from trace requests.
        #[arg(long)]
        private: bool,
    },
}

#[derive(Subcommand)]
enum ContractCommand {
    /// Fill a template's parameters.
    New {
        #[arg(long)]
        template: PathBuf,
        /// Argument as key=value, parsed by the parameter's type.
        #[arg(long = "arg")]
        args: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a contract or proposal against its template.
    Validate {
        file: PathBuf,
        #[arg(long)]
        template: PathBuf,
    },
    /// Print a contract's legal prose.
    Render {
        file: PathBuf,
        #[arg(long)]
        template: PathBuf,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Run a scenario, or `all`.
    Run {
        name: String,
        /// Stop this agent at every log append and check recovery.
        #[arg(long)]
        crash: Option<String>,
    },
    /// List the scenarios.
    List,
}

fn registry_for(state_dir: &std::path::Path, now: Timestamp) -> Option<TrustRegistry> {
    TrustRegistry::load(&state_dir.join("registry.json"), now).ok()
}

async fn execute(cli: &Cli) -> Result<Report, CliError> {
    let dir = cli.state_dir.as_path();
    let now = Timestamp::now();
    match &cli.command {
        Command::Keygen { name, listen, valid_days } => {
            commands::keygen(dir, name, listen.clone(), *valid_days, cli.seed, now)
        }
        Command::Peer(PeerCommand::Add { id_file, endpoint, valid_days }) => {
            commands::peer_add(dir, id_file, endpoint.clone(), *valid_days, now)
        }
        Command::Template(t) => match t {
            TemplateCommand::New { title, provisions, params, out } => {
                commands::template_new(title, provisions, params, out.as_deref())
            }
            TemplateCommand::Hash { file } => commands::document_hash(file),
            TemplateCommand::Lint { file } => commands::template_lint(file),
            TemplateCommand::Add { file, private } => commands::template_add(dir, file, *private, now),
        },
        Command::Contract(c) => match c {
            ContractCommand::New { template, args, out } => {
                commands::contract_new(template, args, registry_for(dir, now).as_ref(), out.as_deref())
            }
            ContractCommand::Validate { file, template } => commands::contract_validate(file, template),
            ContractCommand::Render { file, template } => commands::contract_render(file, template),
        },
        Command::Offer { to, contracts, validity, wait } => {
            daemon::offer(
                dir,
                to,
                contracts,
                validity.map(Duration::from_secs),
                wait.map(Duration::from_secs),
            )
            .await
        }
        Command::Accept { session } => daemon::decide(dir, *session, true).await,
        Command::Reject { session } => daemon::decide(dir, *session, false).await,
        Command::Trace { hashes, from, wait } => {
            daemon::trace(dir, commands::parse_hashes(hashes)?, from, Duration::from_secs(*wait)).await
        }
        Command::Serve => {
            daemon::serve(dir).await?;
            Ok(Report::ok("", serde_json::Value::Null))
        }
        Command::ExportTranscript { session, out } => commands::export_transcript(dir, *session, out.as_deref(), now),
        Command::VerifyTranscript { file, registry, at } => {
            let registry = registry.clone().unwrap_or_else(|| dir.join("registry.json"));
            commands::verify_transcript_file(file, &registry, at.unwrap_or(now))
        }
        Command::Scenario(ScenarioCommand::List) => Ok(commands::scenario_list()),
        Command::Scenario(ScenarioCommand::Run { name, crash }) => {
            let seed = cli.seed.unwrap_or(0);
            match crash {
                Some(agent) => commands::scenario_crash(name, seed, agent),
                None => commands::scenario_run(name, seed),
            }
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli).await {
        Ok(report) => {
            if cli.json {
                println!("{}", report.json);
            } else {
                print!("{}", report.text);
            }
            if report.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILED as u8)
            }
        }
        Err(e) => {
            if cli.json {
                eprintln!("{}", e.to_json());
            } else {
                eprintln!("conet: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
