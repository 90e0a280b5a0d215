use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use rfo_core::analysis::{occupancy_grid, occupancy_geojson, white_space_report, ReportParams};
use rfo_core::geo::{parse_ring, BBox, Region};
use rfo_core::model::{CampaignId, ChannelPlan};
use rfo_core::sim::{run_simulation, Scenario};
use rfo_service::node::{select_records, Node};
use rfo_service::{api, daemon, Config};
use serde_json::json;

/// Account name recorded as owner/collector for local CLI mutations.
const CLI_ACCOUNT: &str = "cli";

#[derive(Parser)]
#[command(name = "rfo", version, about = "RF observation repository node")]
struct Cli {
    /// Node configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Zrf,
    Geojson,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Table,
    Json,
}

#[derive(clap::Args)]
struct Analysis {
    #[arg(long)]
    plan: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    threshold_dbm: Option<f64>,
    /// Campaign id or name; all records when omitted.
    #[arg(long)]
    campaign: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API and the peer sync daemon.
    Serve,
    /// Ingest sweep files (device formats or ZRF) into a campaign.
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Campaign id or name; a missing name is created.
        #[arg(long)]
        campaign: String,
    },
    /// Print the occupancy grid as GeoJSON.
    Occupancy {
        /// min_lon,min_lat,max_lon,max_lat
        #[arg(long, allow_hyphen_values = true)]
        bbox: String,
        #[arg(long)]
        cell_deg: Option<f64>,
        #[command(flatten)]
        analysis: Analysis,
    },
    /// Print a white-space report for a region.
    Whitespaces {
        /// lon,lat;lon,lat;... ring
        #[arg(long, allow_hyphen_values = true, conflicts_with = "bbox", required_unless_present = "bbox")]
        region: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        bbox: Option<String>,
        #[arg(long)]
        max_duty: Option<f64>,
        #[arg(long)]
        min_samples: Option<u64>,
        #[arg(long, value_enum, default_value = "table")]
        format: TableFormat,
        #[command(flatten)]
        analysis: Analysis,
    },
    /// Run a sync scenario and print its summary row.
    Simulate {
        scenario: PathBuf,
        /// Print the full event trace instead of only the summary.
        #[arg(long)]
        trace: bool,
    },
    /// Dump stored records.
    Export {
        #[arg(long, value_enum)]
        format: ExportFormat,
        #[arg(long)]
        campaign: Option<String>,
    },
}

type CliResult<T> = Result<T, String>;

/// Writes to stdout; a reader closing the pipe early (`| head`) is not an error.
fn emit(text: &str) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.to_string()),
        _ => Ok(()),
    }
}

fn load_config(path: Option<&PathBuf>) -> CliResult<Config> {
    match path {
        Some(p) => Config::load(p).map_err(|e| e.to_string()),
        None => Ok(Config::default()),
    }
}

fn open_node(config: Config) -> CliResult<Node> {
    let node = Node::open(config).map_err(|e| e.to_string())?;
    for w in node.recovery_warnings() {
        eprintln!("warning: {w}");
    }
    Ok(node)
}

/// Resolves a campaign by id, then by name.
fn find_campaign(node: &Node, key: &str) -> Option<CampaignId> {
    let view = node.view();
    let campaigns = &view.state().campaigns;
    if let Ok(id) = key.parse::<CampaignId>() {
        if campaigns.contains_key(&id) {
            return Some(id);
        }
    }
    campaigns.values().find(|c| c.name == key).map(|c| c.campaign_id)
}

fn require_campaign(node: &Node, key: Option<&str>) -> CliResult<Option<CampaignId>> {
    key.map(|k| find_campaign(node, k).ok_or_else(|| format!("unknown campaign {k}"))).transpose()
}

fn plan_for(node: &Node, a: &Analysis) -> CliResult<ChannelPlan> {
    let name = a.plan.as_deref().unwrap_or(&node.config().defaults.plan);
    node.plan(name).cloned().ok_or_else(|| format!("unknown plan {name}"))
}

async fn serve(config: Config) -> CliResult<()> {
    let node = Arc::new(open_node(config)?);
    let listener = tokio::net::TcpListener::bind(&node.config().listen).await.map_err(|e| e.to_string())?;
    log::info!("{} listening on {}", node.config().node_id, listener.local_addr().map_err(|e| e.to_string())?);
    let sync = tokio::spawn(daemon::run_sync_daemon(node.clone()));
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    let res = axum::serve(listener, api::router(node)).with_graceful_shutdown(shutdown).await;
    sync.abort();
    res.map_err(|e| e.to_string())
}

async fn ingest(config: Config, files: &[PathBuf], campaign: &str) -> CliResult<()> {
    let node = open_node(config)?;
    let cid = match find_campaign(&node, campaign) {
        Some(id) => id,
        None => {
            let c = node.create_campaign(CLI_ACCOUNT, campaign, None).await.map_err(|e| e.to_string())?;
            eprintln!("created campaign {} ({})", c.name, c.campaign_id);
            c.campaign_id
        }
    };
    let mut failed = false;
    for path in files {
        let content = tokio::fs::read(path).await.map_err(|e| format!("{}: {e}", path.display()))?;
        match node.upload(cid, CLI_ACCOUNT, &content).await {
            Ok(report) => {
                emit(&format!(
                    "{}: accepted {}, duplicates {}, errors {}\n",
                    path.display(),
                    report.accepted,
                    report.duplicates,
                    report.errors.len()
                ))?;
                for e in &report.errors {
                    eprintln!("  line {}: {:?}", e.line, e.reason);
                }
            }
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                failed = true;
            }
        }
    }
    if failed {
        Err("some files were rejected".into())
    } else {
        Ok(())
    }
}

fn export(config: Config, format: ExportFormat, campaign: Option<&str>) -> CliResult<()> {
    let node = open_node(config)?;
    let cid = require_campaign(&node, campaign)?;
    let view = node.view();
    let records = select_records(view.state(), cid);
    match format {
        ExportFormat::Zrf => {
            let text: String = records.iter().map(|r| r.to_zrf_line() + "\n").collect();
            emit(&text)?;
        }
        ExportFormat::Geojson => {
            let features: Vec<_> = records
                .iter()
                .map(|r| {
                    let f = r.fields();
                    json!({
                        "type": "Feature",
                        "geometry": { "type": "Point", "coordinates": [f.location.lon_deg, f.location.lat_deg] },
                        "properties": {
                            "record_id": r.id().to_string(),
                            "timestamp_ms": f.timestamp_ms,
                            "device_kind": f.device_kind,
                            "device_serial": f.device_serial,
                            "low_hz": f.span.low_hz(),
                            "high_hz": f.span.high_hz(),
                        },
                    })
                })
                .collect();
            emit(&format!("{}\n", json!({ "type": "FeatureCollection", "features": features })))?;
        }
    }
    Ok(())
}

async fn run(cli: Cli) -> CliResult<()> {
    let config = || load_config(cli.config.as_ref());
    match &cli.command {
        Command::Serve => serve(config()?).await,
        Command::Ingest { files, campaign } => ingest(config()?, files, campaign).await,
        Command::Occupancy { bbox, cell_deg, analysis } => {
            let node = open_node(config()?)?;
            let bbox = BBox::parse(bbox).map_err(|e| e.to_string())?;
            let plan = plan_for(&node, analysis)?;
            let cell_deg = cell_deg.unwrap_or(node.config().defaults.cell_deg);
            let threshold = analysis.threshold_dbm.unwrap_or(node.config().defaults.threshold_dbm);
            let cid = require_campaign(&node, analysis.campaign.as_deref())?;
            let view = node.view();
            let cells = occupancy_grid(select_records(view.state(), cid), &bbox, cell_deg, &plan, threshold)
                .map_err(|e| e.to_string())?;
            emit(&format!("{}\n", occupancy_geojson(&cells, &bbox, cell_deg)))
        }
        Command::Whitespaces { region, bbox, max_duty, min_samples, format, analysis } => {
            let node = open_node(config()?)?;
            let region = match (region, bbox) {
                (Some(r), _) => Region::Polygon(parse_ring(r).map_err(|e| e.to_string())?),
                (None, Some(b)) => Region::BBox(BBox::parse(b).map_err(|e| e.to_string())?),
                (None, None) => unreachable!("clap requires one"),
            };
            let plan = plan_for(&node, analysis)?;
            let d = &node.config().defaults;
            let params = ReportParams {
                threshold_dbm: analysis.threshold_dbm.unwrap_or(d.threshold_dbm),
                max_duty: max_duty.unwrap_or(d.max_duty),
                min_samples: min_samples.unwrap_or(d.min_samples),
            };
            let cid = require_campaign(&node, analysis.campaign.as_deref())?;
            let view = node.view();
            let report =
                white_space_report(select_records(view.state(), cid), &region, &plan, &params).map_err(|e| e.to_string())?;
            match format {
                TableFormat::Table => emit(&report.to_table()),
                TableFormat::Json => emit(&(serde_json::to_string_pretty(&report).expect("report serializes") + "\n")),
            }
        }
        Command::Simulate { scenario, trace } => {
            let text = std::fs::read_to_string(scenario).map_err(|e| format!("{}: {e}", scenario.display()))?;
            let scenario = Scenario::parse(&text).map_err(|e| e.to_string())?;
            let result = run_simulation(&scenario).map_err(|e| e.to_string())?;
            if *trace {
                emit(&result.to_text())
            } else {
                emit(&format!("seed,nodes,loss,convergence_round\n{}\n", result.summary_row()))
            }
        }
        Command::Export { format, campaign } => export(config()?, *format, campaign.as_deref()),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
