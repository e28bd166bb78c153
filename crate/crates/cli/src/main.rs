use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ardueco::clock::Millis;
use ardueco::firmware::{DeviceConfig, Reading};
use ardueco::ingest::service::Service;
use ardueco::ingest::{
    aggregate_grid, export_geojson, ExportOptions, Ingest, JsonlStore, DEFAULT_PRECISION,
};
use ardueco::mqtt::{BrokerConfig, TopicFilter};
use ardueco::sim::{run_sim, SimConfig};

#[derive(Parser)]
#[command(
    name = "ardueco",
    version,
    about = "Bike air-quality pipeline: simulate, serve, replay, export"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fleet scenario and write its report.
    Simulate {
        /// Scenario JSON; the built-in default scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        geojson: Option<PathBuf>,
        /// Add one LineString per ride to the GeoJSON.
        #[arg(long)]
        tracks: bool,
    },
    /// Accept device connections and ingest until interrupted.
    Serve {
        #[arg(long, default_value_t = 1883)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, env = "ARDUECO_STORE")]
        store: PathBuf,
        /// Require this token in CONNECT.
        #[arg(long)]
        auth_token: Option<String>,
    },
    /// Ingest a device's perm_log.txt.
    Replay {
        #[arg(long)]
        perm_log: PathBuf,
        #[arg(long, env = "ARDUECO_STORE")]
        store: PathBuf,
        #[arg(long, default_value = "unknown")]
        device_id: String,
    },
    /// Write the store as GeoJSON.
    Export {
        #[arg(long, env = "ARDUECO_STORE")]
        store: PathBuf,
        /// Output path, or `-` for standard output.
        #[arg(long)]
        geojson: PathBuf,
        /// Add a grid-cell layer at this geohash precision.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=12))]
        precision: Option<u8>,
        #[arg(long)]
        tracks: bool,
        #[arg(long, default_value_t = 0)]
        style_seed: u64,
    },
    /// Print per-ride and per-cell tables.
    Stats {
        #[arg(long, env = "ARDUECO_STORE")]
        store: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PRECISION as u8, value_parser = clap::value_parser!(u8).range(1..=12))]
        precision: u8,
    },
    /// Check a params.json the way the device does at boot.
    ValidateConfig {
        #[arg(long)]
        params: PathBuf,
    },
}

/// Writes through a temporary file in the same directory, so a failure
/// never leaves a partial output behind.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if path == Path::new("-") {
        io::stdout().write_all(contents)?;
        return Ok(());
    }
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn open_store(path: &Path) -> Result<Ingest<JsonlStore>> {
    let store =
        JsonlStore::open(path).with_context(|| format!("opening store {}", path.display()))?;
    Ok(Ingest::new(store))
}

fn simulate(
    scenario: Option<&Path>,
    out: &Path,
    geojson: Option<&Path>,
    tracks: bool,
) -> Result<()> {
    let cfg = match scenario {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SimConfig::from_json(&text).map_err(|e| anyhow::anyhow!("invalid scenario: {e}"))?
        }
        None => SimConfig::default(),
    };
    let outcome = run_sim(&cfg).map_err(|e| anyhow::anyhow!("invalid scenario: {e}"))?;
    if let Some(path) = geojson {
        let opts = ExportOptions {
            style_seed: cfg.style_seed,
            tracks,
            grid_precision: None,
        };
        let mut doc = export_geojson(outcome.ingest.records(), &opts)?;
        doc.push('\n');
        write_atomic(path, doc.as_bytes())?;
    }
    write_atomic(out, outcome.report.to_json().as_bytes())?;
    println!("{}", outcome.report.summary_line());
    Ok(())
}

fn serve(bind: &str, port: u16, store: &Path, auth_token: Option<String>) -> Result<()> {
    let ingest = open_store(store)?;
    let prior = ingest.records().len();
    let config = BrokerConfig {
        auth_token,
        hook_filters: vec![TopicFilter::parse("ardueco/#").expect("valid filter")],
    };
    let service = Service::bind((bind, port), ingest, config)
        .with_context(|| format!("binding {bind}:{port}"))?;
    let shutdown = service.shutdown_handle();
    ctrlc::set_handler(move || shutdown.store(true, std::sync::atomic::Ordering::SeqCst))
        .context("installing signal handler")?;
    println!(
        "listening on {} ({prior} records loaded)",
        service.local_addr()?
    );
    io::stdout().flush()?;
    let ingest = service.run()?;
    println!("stopped with {} records", ingest.records().len());
    Ok(())
}

fn replay(perm_log: &Path, store: &Path, device_id: &str) -> Result<()> {
    let text =
        fs::read_to_string(perm_log).with_context(|| format!("reading {}", perm_log.display()))?;
    let mut ingest = open_store(store)?;
    let topic = format!("ardueco/{device_id}/data");
    if TopicFilter::parse(&topic).is_none() || device_id.contains(['+', '#', '/']) {
        bail!("device id {device_id:?} cannot appear in a topic");
    }
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        // Replayed rows keep their own timestamp so a replay is reproducible.
        let received_at = Reading::parse_line(line)
            .map(|r| Millis::from_utc(r.utc))
            .unwrap_or_else(|_| Millis::wall_clock());
        ingest.on_message(&topic, line.as_bytes(), received_at)?;
    }
    ingest.flush()?;
    let s = ingest.stats();
    println!(
        "stored {} duplicates {} quarantined {}",
        s.stored, s.duplicates, s.quarantined
    );
    for r in ingest.summaries().filter(|r| r.device_id == device_id) {
        println!(
            "ride {} device {} received {} expected {} status {}",
            r.ride_id,
            r.device_id,
            r.received_count,
            r.expected_count.map_or("-".to_string(), |e| e.to_string()),
            serde_json::to_value(r.status)?.as_str().unwrap_or("?"),
        );
    }
    Ok(())
}

fn export(
    store: &Path,
    out: &Path,
    precision: Option<u8>,
    tracks: bool,
    style_seed: u64,
) -> Result<()> {
    let ingest = open_store(store)?;
    let opts = ExportOptions {
        style_seed,
        tracks,
        grid_precision: precision.map(usize::from),
    };
    let mut doc = export_geojson(ingest.records(), &opts)?;
    doc.push('\n');
    write_atomic(out, doc.as_bytes())?;
    if out != Path::new("-") {
        println!(
            "exported {} records to {}",
            ingest.records().len(),
            out.display()
        );
    }
    Ok(())
}

fn stats(store: &Path, precision: u8) -> Result<()> {
    let ingest = open_store(store)?;
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "{:<10} {:<16} {:>9} {:>9} {:<12}",
        "ride", "device", "received", "expected", "status"
    )?;
    for r in ingest.summaries() {
        writeln!(
            out,
            "{:<10} {:<16} {:>9} {:>9} {:<12}",
            r.ride_id.as_str(),
            r.device_id,
            r.received_count,
            r.expected_count.map_or("-".to_string(), |e| e.to_string()),
            serde_json::to_value(r.status)?.as_str().unwrap_or("?"),
        )?;
    }
    writeln!(out)?;
    writeln!(
        out,
        "{:<13} {:>7} {:>10} {:>10} {:>10}",
        "cell", "count", "mean_ppm", "min_ppm", "max_ppm"
    )?;
    for c in aggregate_grid(ingest.records(), usize::from(precision))? {
        writeln!(
            out,
            "{:<13} {:>7} {:>10.3} {:>10.3} {:>10.3}",
            c.cell_id, c.count, c.mean_ppm, c.min_ppm, c.max_ppm
        )?;
    }
    Ok(())
}

/// Ok(true) when the device would boot to sampling.
fn validate_config(params: &Path) -> Result<bool> {
    let text =
        fs::read_to_string(params).with_context(|| format!("reading {}", params.display()))?;
    match DeviceConfig::from_json(&text) {
        Ok(cfg) => {
            println!(
                "ok: device {} samples every {} s, {} channel(s)",
                cfg.device_id,
                cfg.sample_period_s,
                cfg.channels.len()
            );
            Ok(true)
        }
        Err(errors) => {
            for issue in &errors.0 {
                println!("{issue}");
            }
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate {
            scenario,
            out,
            geojson,
            tracks,
        } => simulate(scenario.as_deref(), out, geojson.as_deref(), *tracks),
        Command::Serve {
            port,
            bind,
            store,
            auth_token,
        } => serve(bind, *port, store, auth_token.clone()),
        Command::Replay {
            perm_log,
            store,
            device_id,
        } => replay(perm_log, store, device_id),
        Command::Export {
            store,
            geojson,
            precision,
            tracks,
            style_seed,
        } => export(store, geojson, *precision, *tracks, *style_seed),
        Command::Stats { store, precision } => stats(store, *precision),
        Command::ValidateConfig { params } => match validate_config(params) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
