//! `spotex`: operator surface for the network-proximity engine.
//!
//! Machine-readable JSON goes to stdout, diagnostics to stderr.
//! Exit codes: 0 success, 2 input error, 3 verification mismatch.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use spotex_core::checkin::{CheckInRecord, CheckInRegistry, DEFAULT_TTL_MS};
use spotex_core::fingerprint::{average_vector, Fingerprint, Mac, SignalVector, DEFAULT_FILL_DBM};
use spotex_core::groups::{brute_force_group, detect_group_from, GroupParams};
use spotex_core::metrics::{
    euclidean_distance, rank_transform, spearman_correlation, tanimoto_distance, Metric,
};
use spotex_core::proxlog::{save_records, LogStore};
use spotex_core::rules::{match_all, parse_rules, EvalContext, TimeOfDay, VisitHistory};
use spotex_core::simulator::{simulate, Scenario};

#[derive(Parser)]
#[command(name = "spotex", version, about = "Wi-Fi network-proximity toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file into a JSON Lines scan log.
    Simulate {
        /// Scenario JSON (schema 1).
        scenario: PathBuf,
        /// Output scan log path.
        out: PathBuf,
    },
    /// Parse a rules file and report the rule count.
    RulesCheck {
        /// Rules file (`.spotex`).
        rules: PathBuf,
    },
    /// Stream one client's records through the rule engine in time order.
    ///
    /// All records feed the proximity log as the replay advances, so
    /// IN_GROUP_OF sees exactly the history available at each instant.
    /// Each firing prints one JSON line: {"t":..,"rule":..,"message":..}.
    Replay {
        rules: PathBuf,
        log: PathBuf,
        #[arg(long)]
        client: String,
        #[command(flatten)]
        thresholds: GroupThresholds,
    },
    /// Detect the group travelling with a client.
    Groups {
        log: PathBuf,
        #[arg(long)]
        client: String,
        /// Query origin, ms since epoch; defaults to the client's last record.
        #[arg(long)]
        t0: Option<i64>,
        /// Lookback horizon, seconds.
        #[arg(long, default_value_t = 60)]
        tmax: i64,
        #[command(flatten)]
        thresholds: GroupThresholds,
        /// Also run the brute-force oracle and fail (exit 3) on mismatch.
        #[arg(long)]
        oracle: bool,
    },
    /// Compare two clients' averaged fingerprints.
    Metrics {
        log: PathBuf,
        #[arg(long)]
        client_a: String,
        #[arg(long)]
        client_b: String,
        #[arg(long, value_enum)]
        metric: MetricArg,
    },
    /// Manage a check-in registry file.
    Checkin {
        registry: PathBuf,
        #[command(subcommand)]
        action: CheckinAction,
    },
}

#[derive(Args)]
struct GroupThresholds {
    /// Candidate window Δ, milliseconds.
    #[arg(long, default_value_t = 2000)]
    delta: i64,
    /// Comparability threshold Ω, dB.
    #[arg(long, default_value_t = 10.0)]
    omega: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclidean,
    Tanimoto,
    Spearman,
}

#[derive(Subcommand)]
enum CheckinAction {
    /// Check an identity in at a client's scanned environment.
    Add {
        #[arg(long)]
        identity: String,
        /// Scan log supplying the fingerprint.
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        client: String,
        /// Use the client's record at or nearest before this instant;
        /// defaults to its latest record.
        #[arg(long)]
        at: Option<i64>,
        /// Record lifetime, seconds.
        #[arg(long, default_value_t = DEFAULT_TTL_MS / 1000)]
        ttl: i64,
        /// Registration instant, ms; defaults to the fingerprint time.
        #[arg(long)]
        now: Option<i64>,
        /// Integer attribute, `key=value`; repeatable.
        #[arg(long = "attr", value_parser = parse_attr)]
        attrs: Vec<(String, i64)>,
    },
    /// List unexpired identities sharing an access point with a probe.
    Nearby {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        client: String,
        #[arg(long)]
        at: Option<i64>,
        #[arg(long, value_enum, default_value_t = NearbyMetricArg::Euclidean)]
        metric: NearbyMetricArg,
        #[arg(long)]
        threshold: f64,
        /// Query instant, ms; defaults to the probe fingerprint time.
        #[arg(long)]
        now: Option<i64>,
    },
    /// Drop expired records; defaults to the wall clock.
    Expire {
        #[arg(long)]
        now: Option<i64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NearbyMetricArg {
    Euclidean,
    Tanimoto,
}

impl From<NearbyMetricArg> for Metric {
    fn from(arg: NearbyMetricArg) -> Metric {
        match arg {
            NearbyMetricArg::Euclidean => Metric::Euclidean,
            NearbyMetricArg::Tanimoto => Metric::Tanimoto,
        }
    }
}

fn parse_attr(text: &str) -> Result<(String, i64), String> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{text}`"))?;
    let value: i64 = value
        .parse()
        .map_err(|_| format!("attribute value in `{text}` is not an integer"))?;
    Ok((key.to_string(), value))
}

/// Die quietly when the consumer closes the pipe, like any unix filter.
fn reset_sigpipe() {
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

fn main() {
    reset_sigpipe();
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            2
        }
    };
    std::process::exit(code);
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Simulate { scenario, out } => cmd_simulate(&scenario, &out),
        Command::RulesCheck { rules } => cmd_rules_check(&rules),
        Command::Replay {
            rules,
            log,
            client,
            thresholds,
        } => cmd_replay(&rules, &log, &client, &thresholds),
        Command::Groups {
            log,
            client,
            t0,
            tmax,
            thresholds,
            oracle,
        } => cmd_groups(&log, &client, t0, tmax, &thresholds, oracle),
        Command::Metrics {
            log,
            client_a,
            client_b,
            metric,
        } => cmd_metrics(&log, &client_a, &client_b, metric),
        Command::Checkin { registry, action } => cmd_checkin(&registry, action),
    }
}

fn parse_mac(text: &str) -> Result<Mac> {
    text.parse::<Mac>()
        .map_err(|e| anyhow!("{e} (expected aa:bb:cc:dd:ee:ff)"))
}

fn load_store(path: &Path) -> Result<LogStore> {
    LogStore::load_path(path).with_context(|| format!("loading scan log {}", path.display()))
}

fn system_now_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

fn cmd_simulate(scenario_path: &Path, out: &Path) -> Result<i32> {
    let mut scenario = Scenario::from_path(scenario_path)
        .with_context(|| format!("loading scenario {}", scenario_path.display()))?;
    if let Ok(seed_text) = std::env::var("SPOTEX_SEED") {
        let seed: u64 = seed_text
            .parse()
            .with_context(|| format!("SPOTEX_SEED `{seed_text}` is not a 64-bit integer"))?;
        scenario.seed = seed;
    }
    let records = simulate(&scenario)?;
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    save_records(&records, std::io::BufWriter::new(file))?;
    eprintln!("wrote {} records to {}", records.len(), out.display());
    println!("{}", json!({ "records": records.len() }));
    Ok(0)
}

fn cmd_rules_check(rules_path: &Path) -> Result<i32> {
    let source = fs::read_to_string(rules_path)
        .with_context(|| format!("reading {}", rules_path.display()))?;
    let rules = parse_rules(&source)
        .map_err(|e| anyhow!("{}: {e}", rules_path.display()))?;
    eprintln!(
        "{} rule{}",
        rules.len(),
        if rules.len() == 1 { "" } else { "s" }
    );
    println!("{}", json!({ "rules": rules.len() }));
    Ok(0)
}

fn cmd_replay(
    rules_path: &Path,
    log_path: &Path,
    client: &str,
    thresholds: &GroupThresholds,
) -> Result<i32> {
    let client = parse_mac(client)?;
    let source = fs::read_to_string(rules_path)
        .with_context(|| format!("reading {}", rules_path.display()))?;
    let rules = parse_rules(&source).map_err(|e| anyhow!("{}: {e}", rules_path.display()))?;
    let full = load_store(log_path)?;

    let attrs = BTreeMap::new();
    let mut history = VisitHistory::new();
    let mut live = LogStore::new();
    for rec in full.iter() {
        live.append(rec.clone())
            .expect("records replayed in stored order");
        if rec.client() != client {
            continue;
        }
        let ctx = EvalContext {
            scan: rec.fingerprint(),
            now: TimeOfDay::from_epoch_ms(rec.t()),
            client,
            attrs: &attrs,
            log: Some(&live),
            group_delta_ms: thresholds.delta,
            group_omega_db: thresholds.omega,
        };
        let firings = match_all(&rules, &ctx, &mut history)?;
        for (rule_id, message) in firings {
            println!(
                "{}",
                json!({ "t": rec.t(), "rule": rule_id, "message": message })
            );
        }
    }
    Ok(0)
}

fn cmd_groups(
    log_path: &Path,
    client: &str,
    t0: Option<i64>,
    tmax_s: i64,
    thresholds: &GroupThresholds,
    oracle: bool,
) -> Result<i32> {
    let client = parse_mac(client)?;
    let store = load_store(log_path)?;
    let t0 = match t0 {
        Some(t0) => t0,
        None => store
            .client_records(client)
            .last()
            .map(|r| r.t())
            .ok_or_else(|| anyhow!("client {client} has no records in the log"))?,
    };
    let params = GroupParams::new(thresholds.delta, thresholds.omega, t0, tmax_s * 1000)?;
    let anchor = store
        .latest_at_or_before(client, t0)
        .ok_or_else(|| anyhow!("no anchor measurement for client {client} at or before {t0}"))?
        .fingerprint()
        .clone();

    let group = detect_group_from(&store, client, &anchor, &params)?;
    let members: Vec<String> = group.iter().map(Mac::to_string).collect();
    println!("{}", serde_json::to_string(&members)?);

    if oracle {
        let expected = brute_force_group(&store, client, &anchor, &params)?;
        if expected != group {
            let expected: Vec<String> = expected.iter().map(Mac::to_string).collect();
            eprintln!("oracle mismatch: detect={members:?} brute-force={expected:?}");
            return Ok(3);
        }
        eprintln!("oracle agreed: {} member(s)", members.len());
    }
    Ok(0)
}

fn averaged(store: &LogStore, client: Mac) -> Result<SignalVector> {
    let scans: Vec<Fingerprint> = store
        .client_records(client)
        .iter()
        .map(|r| r.fingerprint().clone())
        .collect();
    if scans.is_empty() {
        bail!("client {client} has no records in the log");
    }
    Ok(average_vector(&scans).expect("nonempty scan list"))
}

/// Re-keys a vector onto `universe`, filling absent entries at −100 dBm.
fn fill_onto(v: &SignalVector, universe: &[Mac]) -> SignalVector {
    SignalVector::from_entries(
        universe
            .iter()
            .map(|&m| (m, v.get(m).unwrap_or(DEFAULT_FILL_DBM))),
    )
    .expect("fill value is a valid level")
}

fn cmd_metrics(log_path: &Path, client_a: &str, client_b: &str, metric: MetricArg) -> Result<i32> {
    let a = parse_mac(client_a)?;
    let b = parse_mac(client_b)?;
    let store = load_store(log_path)?;
    let va = averaged(&store, a)?;
    let vb = averaged(&store, b)?;

    let (name, value) = match metric {
        MetricArg::Euclidean => ("euclidean", euclidean_distance(&va, &vb).value),
        MetricArg::Tanimoto => ("tanimoto", tanimoto_distance(&va, &vb)?.value),
        MetricArg::Spearman => {
            // Rankings only compare over one universe; align both vectors
            // onto the union with the standard fill first.
            let mut universe: Vec<Mac> = va.macs().chain(vb.macs()).collect();
            universe.sort();
            universe.dedup();
            let ra = rank_transform(&fill_onto(&va, &universe));
            let rb = rank_transform(&fill_onto(&vb, &universe));
            ("spearman", spearman_correlation(&ra, &rb)?)
        }
    };
    println!(
        "{}",
        json!({ "metric": name, "client_a": a.to_string(), "client_b": b.to_string(), "value": value })
    );
    Ok(0)
}

fn probe_fingerprint(store: &LogStore, client: Mac, at: Option<i64>) -> Result<Fingerprint> {
    let rec = match at {
        Some(at) => store.latest_at_or_before(client, at),
        None => store.client_records(client).last().copied(),
    };
    rec.map(|r| r.fingerprint().clone())
        .ok_or_else(|| anyhow!("client {client} has no usable record in the log"))
}

fn load_registry(path: &Path, allow_missing: bool) -> Result<CheckInRegistry> {
    if !path.exists() {
        if allow_missing {
            return Ok(CheckInRegistry::new());
        }
        bail!("registry {} does not exist", path.display());
    }
    CheckInRegistry::load_path(path)
        .with_context(|| format!("loading registry {}", path.display()))
}

fn cmd_checkin(registry_path: &Path, action: CheckinAction) -> Result<i32> {
    match action {
        CheckinAction::Add {
            identity,
            log,
            client,
            at,
            ttl,
            now,
            attrs,
        } => {
            let client = parse_mac(&client)?;
            let store = load_store(&log)?;
            let fingerprint = probe_fingerprint(&store, client, at)?;
            if ttl <= 0 {
                bail!("--ttl must be positive, got {ttl}");
            }
            let expires_at = fingerprint.t() + ttl * 1000;
            let now = now.unwrap_or_else(|| fingerprint.t());
            let record =
                CheckInRecord::new(identity.clone(), fingerprint, expires_at, attrs.into_iter().collect())?;
            let mut registry = load_registry(registry_path, true)?;
            registry.register(record, now)?;
            registry.save_path(registry_path)?;
            println!(
                "{}",
                json!({ "identity": identity, "expires_at": expires_at })
            );
            Ok(0)
        }
        CheckinAction::Nearby {
            log,
            client,
            at,
            metric,
            threshold,
            now,
        } => {
            let client = parse_mac(&client)?;
            let store = load_store(&log)?;
            let probe = probe_fingerprint(&store, client, at)?;
            let now = now.unwrap_or_else(|| probe.t());
            let registry = load_registry(registry_path, false)?;
            for (identity, distance) in
                registry.nearby(&probe, metric.into(), threshold, now)?
            {
                println!("{}", json!({ "identity": identity, "distance": distance }));
            }
            Ok(0)
        }
        CheckinAction::Expire { now } => {
            let now = now.unwrap_or_else(system_now_ms);
            let mut registry = load_registry(registry_path, false)?;
            let removed = registry.expire(now);
            registry.save_path(registry_path)?;
            println!("{}", json!({ "removed": removed }));
            Ok(0)
        }
    }
}
