//! Subcommand implementations. Machine-readable outputs go to files;
//! stdout carries a short human summary. Exit status is nonzero only on
//! operational errors, never because censorship was found.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{NaiveDate, Utc};
use clap::{Args, Subcommand, ValueEnum};

use vantage_core::aggregate::{
    self, as_diversity, availability_matrix, censorship_fraction, centralization_score,
    dead_site_filter, least_free_ranking, live_verdicts, rst_ranking, Registry,
    CENTRALIZATION_THRESHOLD,
};
use vantage_core::controller::{
    Client, Controller, ExperimentSpec, Recurrence, ReportFilter, Request, Selector, Server,
};
use vantage_core::detect::{classify_measurement, DetectorConfig};
use vantage_core::fingerprints::FingerprintDb;
use vantage_core::model::{
    read_report_file, read_test_list_file, write_report_file, write_verdict_file, Consent,
    RawMeasurement, ReportRecord, TargetOrigin, TestTarget, Validate, VantageKind, VantagePoint,
    Verdict, VerdictRecord,
};
use vantage_core::netsim::SimScenario;
use vantage_core::probe::{AgentMode, ProbeAgent, SimTransport};

#[derive(Clone, Copy, ValueEnum)]
pub enum KindArg {
    Vpn,
    Volunteer,
    Device,
}

impl From<KindArg> for VantageKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Vpn => VantageKind::Vpn,
            KindArg::Volunteer => VantageKind::Volunteer,
            KindArg::Device => VantageKind::Device,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum OriginArg {
    GlobalList,
    CountryList,
    BaselineAlexa,
}

impl From<OriginArg> for TargetOrigin {
    fn from(o: OriginArg) -> Self {
        match o {
            OriginArg::GlobalList => TargetOrigin::GlobalList,
            OriginArg::CountryList => TargetOrigin::CountryList,
            OriginArg::BaselineAlexa => TargetOrigin::BaselineAlexa,
        }
    }
}

#[derive(Args)]
pub struct VantageArgs {
    /// Vantage point id recorded in measurements
    #[arg(long, default_value = "vp-local")]
    pub vantage_id: String,
    /// ISO alpha-2 country of the vantage point
    #[arg(long, default_value = "US")]
    pub country: String,
    /// Autonomous system number
    #[arg(long, default_value_t = 64496)]
    pub asn: u32,
    /// Vantage point kind (passed to the transport; server-side
    /// VPN blocking keys on it)
    #[arg(long, value_enum, default_value = "vpn")]
    pub kind: KindArg,
}

impl VantageArgs {
    fn build(&self) -> Result<VantagePoint> {
        Ok(VantagePoint::new(
            &self.vantage_id,
            &self.country,
            self.asn,
            self.kind.into(),
            Consent::OptIn,
        )?)
    }
}

#[derive(Subcommand)]
pub enum SimCommand {
    /// Execute the probe battery against a scenario and write reports
    Run(SimRunArgs),
    /// Validate a scenario file
    Check(SimCheckArgs),
}

#[derive(Args)]
pub struct SimRunArgs {
    /// Scenario file (JSON)
    #[arg(long)]
    pub scenario: PathBuf,
    /// Test-list CSV (`url,category_code`)
    #[arg(long)]
    pub targets: PathBuf,
    /// Output report file (one record per line)
    #[arg(long)]
    pub out: PathBuf,
    /// Origin tag recorded on parsed targets
    #[arg(long, value_enum, default_value = "global-list")]
    pub origin: OriginArg,
    #[command(flatten)]
    pub vantage: VantageArgs,
}

#[derive(Args)]
pub struct SimCheckArgs {
    #[arg(long)]
    pub scenario: PathBuf,
}

pub fn run_sim(cmd: SimCommand) -> Result<()> {
    match cmd {
        SimCommand::Run(args) => {
            let scenario = SimScenario::load(&args.scenario)
                .with_context(|| format!("loading {}", args.scenario.display()))?;
            let targets = read_test_list_file(&args.targets, args.origin.into())?;
            let vp = args.vantage.build()?;
            let records = probe_scenario(&scenario, &vp, &targets, AgentMode::Raw, None)?;
            write_report_file(&args.out, &records)?;
            println!(
                "sim run: {} targets -> {} records -> {}",
                targets.len(),
                records.len(),
                args.out.display()
            );
            Ok(())
        }
        SimCommand::Check(args) => {
            SimScenario::load(&args.scenario)
                .with_context(|| format!("loading {}", args.scenario.display()))?;
            println!("scenario ok: {}", args.scenario.display());
            Ok(())
        }
    }
}

fn probe_scenario(
    scenario: &SimScenario,
    vp: &VantagePoint,
    targets: &[TestTarget],
    mode: AgentMode,
    fingerprints: Option<&PathBuf>,
) -> Result<Vec<ReportRecord>> {
    let db = load_fingerprints(fingerprints)?;
    let config = DetectorConfig::default();
    let field = SimTransport::field(scenario.clone(), vp.kind);
    let control = SimTransport::control(scenario, vp.kind);
    let agent = ProbeAgent::new(vp, &field, &control);
    Ok(agent.run_session(targets, mode, &db, &config))
}

fn load_fingerprints(path: Option<&PathBuf>) -> Result<FingerprintDb> {
    Ok(match path {
        Some(p) => FingerprintDb::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => FingerprintDb::builtin(),
    })
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    /// Ship raw measurements; analysis happens centrally
    Raw,
    /// Classify on the vantage point and attach verdicts
    Classify,
}

#[derive(Args)]
pub struct ProbeArgs {
    /// Test-list CSV
    #[arg(long)]
    pub targets: PathBuf,
    /// Scenario file to probe against
    #[arg(long, conflicts_with = "fixtures")]
    pub scenario: Option<PathBuf>,
    /// Pre-recorded report file to replay instead of a live transport
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Analysis placement
    #[arg(long, value_enum, default_value = "raw")]
    pub mode: ModeArg,
    /// Output report file
    #[arg(long)]
    pub out: PathBuf,
    /// Blockpage fingerprint file (classify mode)
    #[arg(long)]
    pub fingerprints: Option<PathBuf>,
    /// Origin tag recorded on parsed targets
    #[arg(long, value_enum, default_value = "global-list")]
    pub origin: OriginArg,
    /// Also run the named circumvention-protocol mimic (repeatable)
    #[arg(long)]
    pub mimic: Vec<String>,
    #[command(flatten)]
    pub vantage: VantageArgs,
}

pub fn run_probe(args: ProbeArgs) -> Result<()> {
    let targets = read_test_list_file(&args.targets, args.origin.into())?;
    let vp = args.vantage.build()?;
    let mode = match args.mode {
        ModeArg::Raw => AgentMode::Raw,
        ModeArg::Classify => AgentMode::Classify,
    };
    let records = match (&args.scenario, &args.fixtures) {
        (Some(scenario_path), None) => {
            let scenario = SimScenario::load(scenario_path)
                .with_context(|| format!("loading {}", scenario_path.display()))?;
            if !args.mimic.is_empty() {
                let field = SimTransport::field(scenario.clone(), vp.kind);
                let control = SimTransport::control(&scenario, vp.kind);
                let agent = ProbeAgent::new(&vp, &field, &control);
                for name in &args.mimic {
                    let ok = agent.run_circumvention_mimic(name)?;
                    println!("mimic {name}: {}", if ok { "ok" } else { "blocked" });
                }
            }
            probe_scenario(&scenario, &vp, &targets, mode, args.fingerprints.as_ref())?
        }
        (None, Some(fixtures)) => {
            if !args.mimic.is_empty() {
                bail!("--mimic requires --scenario");
            }
            replay_fixtures(fixtures, &targets, mode, args.fingerprints.as_ref())?
        }
        _ => bail!("exactly one of --scenario or --fixtures is required"),
    };
    write_report_file(&args.out, &records)?;
    println!(
        "probe: {} targets -> {} records -> {}",
        targets.len(),
        records.len(),
        args.out.display()
    );
    Ok(())
}

/// Replays pre-recorded measurements for the targets under test,
/// re-deriving verdicts when classify mode asks for them.
fn replay_fixtures(
    fixtures: &Path,
    targets: &[TestTarget],
    mode: AgentMode,
    fingerprints: Option<&PathBuf>,
) -> Result<Vec<ReportRecord>> {
    let db = load_fingerprints(fingerprints)?;
    let config = DetectorConfig::default();
    let recorded = read_report_file(fixtures)?;
    let wanted: BTreeSet<&str> = targets.iter().map(|t| t.url.as_str()).collect();
    Ok(recorded
        .into_iter()
        .filter(|r| wanted.contains(r.measurement.target.url.as_str()))
        .map(|r| match mode {
            AgentMode::Raw => ReportRecord::raw(r.measurement),
            AgentMode::Classify => {
                let verdict = classify_measurement(&r.measurement, &db, &config);
                ReportRecord::classified(r.measurement, verdict)
            }
        })
        .collect())
}

#[derive(Args)]
pub struct DetectArgs {
    /// Input report file
    #[arg(long)]
    pub reports: PathBuf,
    /// Blockpage fingerprint file
    #[arg(long)]
    pub fingerprints: Option<PathBuf>,
    /// Output verdict file
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_detect(args: DetectArgs) -> Result<()> {
    let db = load_fingerprints(args.fingerprints.as_ref())?;
    let config = DetectorConfig::default();
    let records = read_report_file(&args.reports)?;
    let verdicts: Vec<VerdictRecord> = records
        .iter()
        .map(|r| VerdictRecord::new(classify_measurement(&r.measurement, &db, &config)))
        .collect();
    write_verdict_file(&args.out, &verdicts)?;
    let censored = verdicts
        .iter()
        .filter(|v| v.verdict.outcome == vantage_core::model::Outcome::Censored)
        .count();
    println!(
        "detect: {} records -> {} verdicts ({censored} censored) -> {}",
        records.len(),
        verdicts.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct ServeArgs {
    /// State directory (also via VANTAGE_DATA_DIR)
    #[arg(long, env = "VANTAGE_DATA_DIR", default_value = "vantage-data")]
    pub data_dir: PathBuf,
    /// Listen address; port 0 picks an ephemeral port
    #[arg(long, default_value = "127.0.0.1:4710")]
    pub listen: String,
}

pub fn run_serve(args: ServeArgs) -> Result<()> {
    let controller = Controller::open(&args.data_dir)?;
    let server = Server::bind(controller, &args.listen)?;
    println!("serving on {}", server.local_addr());
    server.run();
    Ok(())
}

#[derive(Args)]
pub struct ScheduleArgs {
    /// Controller address
    #[arg(long)]
    pub addr: String,
    /// Experiment spec id
    #[arg(long)]
    pub spec_id: String,
    /// Test-list CSV uploaded as the experiment's target list
    #[arg(long)]
    pub targets: PathBuf,
    /// Name the uploaded list is stored under (defaults to the file stem)
    #[arg(long)]
    pub list_name: Option<String>,
    /// Vantage selector: `all`, `country:IR`, or `ids:a,b,c`
    #[arg(long, default_value = "all")]
    pub selector: String,
    /// Recurrence: `once` or `every:<hours>`
    #[arg(long, default_value = "once")]
    pub recur: String,
    /// Scheduling horizon in hours
    #[arg(long, default_value_t = 72)]
    pub horizon_hours: u32,
    /// Origin tag for the uploaded targets
    #[arg(long, value_enum, default_value = "global-list")]
    pub origin: OriginArg,
}

fn parse_selector(s: &str) -> Result<Selector> {
    if s == "all" {
        return Ok(Selector::All);
    }
    if let Some(country) = s.strip_prefix("country:") {
        return Ok(Selector::Country {
            country: country.to_string(),
        });
    }
    if let Some(ids) = s.strip_prefix("ids:") {
        return Ok(Selector::Ids {
            ids: ids.split(',').map(String::from).collect(),
        });
    }
    bail!("selector must be `all`, `country:XX`, or `ids:a,b`")
}

fn parse_recurrence(s: &str) -> Result<Recurrence> {
    if s == "once" {
        return Ok(Recurrence::OneShot);
    }
    if let Some(hours) = s.strip_prefix("every:") {
        return Ok(Recurrence::EveryHours {
            hours: hours.parse().context("recurrence hours")?,
        });
    }
    bail!("recurrence must be `once` or `every:<hours>`")
}

pub fn run_schedule(args: ScheduleArgs) -> Result<()> {
    let targets = read_test_list_file(&args.targets, args.origin.into())?;
    let list_name = args.list_name.clone().unwrap_or_else(|| {
        args.targets
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "targets".into())
    });
    let client = Client::new(&args.addr);
    client.call(&Request::AddTargetList {
        name: list_name.clone(),
        targets,
    })?;
    let spec = ExperimentSpec {
        id: args.spec_id.clone(),
        target_list: list_name,
        selector: parse_selector(&args.selector)?,
        recurrence: parse_recurrence(&args.recur)?,
        created_at: Utc::now(),
    };
    match client.call(&Request::Schedule {
        spec,
        horizon_hours: args.horizon_hours,
    })? {
        vantage_core::controller::Response::Scheduled { assignments } => {
            println!("scheduled {} assignments", assignments);
            Ok(())
        }
        vantage_core::controller::Response::Error { error } => bail!("{error}"),
        other => bail!("unexpected response {other:?}"),
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ListWhat {
    Vantage,
    Reports,
}

#[derive(Args)]
pub struct ListArgs {
    #[arg(long)]
    pub addr: String,
    #[arg(long, value_enum, default_value = "vantage")]
    pub what: ListWhat,
    /// Also write the listing as line-delimited JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_list(args: ListArgs) -> Result<()> {
    let client = Client::new(&args.addr);
    match args.what {
        ListWhat::Vantage => {
            let points = client.list_vantage_points()?;
            for vp in &points {
                println!("{}\t{}\tAS{}\t{:?}", vp.id, vp.country, vp.asn, vp.kind);
            }
            if let Some(out) = args.out {
                write_registry_file(&out, &points)?;
            }
            println!("{} vantage points", points.len());
        }
        ListWhat::Reports => {
            let records = client.query(&ReportFilter::default())?;
            for r in &records {
                println!(
                    "{}\t{}\t{}",
                    r.measurement.started_at, r.measurement.vantage, r.measurement.target.url
                );
            }
            if let Some(out) = args.out {
                write_report_file(&out, &records)?;
            }
            println!("{} records", records.len());
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub addr: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Restrict to one country
    #[arg(long)]
    pub country: Option<String>,
    /// Restrict to one vantage point
    #[arg(long)]
    pub vantage: Option<String>,
    /// Restrict to one target URL
    #[arg(long)]
    pub target: Option<String>,
}

pub fn run_export(args: ExportArgs) -> Result<()> {
    let client = Client::new(&args.addr);
    let records = client.query(&ReportFilter {
        country: args.country,
        vantage: args.vantage,
        target: args.target,
        from: None,
        to: None,
    })?;
    write_report_file(&args.out, &records)?;
    println!(
        "exported {} records -> {}",
        records.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
pub enum AnalysisKind {
    Fractions,
    Ranking,
    Rst,
    Diversity,
    Matrix,
    Centralization,
    Deadsites,
}

#[derive(Args)]
pub struct AggregateArgs {
    #[arg(long, value_enum)]
    pub kind: AnalysisKind,
    /// Verdict file (fractions, ranking, rst, centralization, deadsites)
    #[arg(long)]
    pub verdicts: Option<PathBuf>,
    /// Vantage registry, line-delimited JSON (country/ASN joins)
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Report file (diversity, matrix)
    #[arg(long)]
    pub reports: Option<PathBuf>,
    /// Restrict to one country (fractions, centralization)
    #[arg(long)]
    pub country: Option<String>,
    /// Day range start (matrix), YYYY-MM-DD
    #[arg(long)]
    pub from: Option<NaiveDate>,
    /// Day range end (matrix), YYYY-MM-DD
    #[arg(long)]
    pub to: Option<NaiveDate>,
    /// Dominant-method share above which censorship looks centralized
    #[arg(long, default_value_t = CENTRALIZATION_THRESHOLD)]
    pub threshold: f64,
    /// Output table path
    #[arg(long)]
    pub out: PathBuf,
}

fn read_verdicts(path: Option<&PathBuf>) -> Result<Vec<Verdict>> {
    let path = path.context("this analysis requires --verdicts")?;
    Ok(vantage_core::model::read_verdict_file(path)?
        .into_iter()
        .map(|r| r.verdict)
        .collect())
}

fn read_registry(path: Option<&PathBuf>) -> Result<Registry> {
    let path = path.context("this analysis requires --registry")?;
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vp: VantagePoint =
            serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        vp.validate()?;
        points.push(vp);
    }
    Ok(Registry::new(points))
}

fn read_reports(path: Option<&PathBuf>) -> Result<Vec<ReportRecord>> {
    let path = path.context("this analysis requires --reports")?;
    Ok(read_report_file(path)?)
}

pub fn write_registry_file(path: &Path, points: &[VantagePoint]) -> Result<()> {
    let mut text = String::new();
    for vp in points {
        text.push_str(&serde_json::to_string(vp)?);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn report_day_bounds(reports: &[RawMeasurement]) -> Option<(NaiveDate, NaiveDate)> {
    let days: Vec<NaiveDate> = reports.iter().map(|m| m.started_at.date_naive()).collect();
    Some((*days.iter().min()?, *days.iter().max()?))
}

pub fn run_aggregate(args: AggregateArgs) -> Result<()> {
    let table = match args.kind {
        AnalysisKind::Deadsites => {
            let verdicts = read_verdicts(args.verdicts.as_ref())?;
            let (kept, discarded) = dead_site_filter(&verdicts);
            let kept: Vec<String> = kept.into_iter().collect();
            let discarded: Vec<String> = discarded.into_iter().collect();
            println!(
                "deadsites: {} kept, {} discarded",
                kept.len(),
                discarded.len()
            );
            aggregate::emit_dead_sites(&kept, &discarded)
        }
        AnalysisKind::Fractions => {
            let verdicts = live_verdicts(&read_verdicts(args.verdicts.as_ref())?);
            let registry = read_registry(args.registry.as_ref())?;
            let countries: Vec<String> = match &args.country {
                Some(c) => vec![c.clone()],
                None => registry
                    .iter()
                    .map(|vp| vp.country.clone())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect(),
            };
            let rows: Vec<_> = countries
                .iter()
                .map(|c| censorship_fraction(&verdicts, &registry, c))
                .collect();
            for f in &rows {
                println!(
                    "{}: {}/{} censored (total {:.3}){}",
                    f.country,
                    f.censored,
                    f.tested,
                    f.total,
                    if f.marginal { " [marginal]" } else { "" }
                );
            }
            aggregate::emit_fractions(&rows)
        }
        AnalysisKind::Ranking => {
            let verdicts = live_verdicts(&read_verdicts(args.verdicts.as_ref())?);
            let registry = read_registry(args.registry.as_ref())?;
            let ranking = least_free_ranking(&verdicts, &registry);
            for (country, fraction) in &ranking {
                println!("{country}\t{fraction:.3}");
            }
            aggregate::emit_ranking(&ranking)
        }
        AnalysisKind::Rst => {
            let verdicts = live_verdicts(&read_verdicts(args.verdicts.as_ref())?);
            let ranking = rst_ranking(&verdicts);
            for (url, count) in ranking.iter().take(10) {
                println!("{url}\t{count}");
            }
            aggregate::emit_rst(&ranking)
        }
        AnalysisKind::Diversity => {
            let registry = read_registry(args.registry.as_ref())?;
            let reports = read_reports(args.reports.as_ref())?;
            let d = as_diversity(&registry, &reports);
            println!(
                "as diversity: {} countries, mean {:.2}",
                d.per_country.len(),
                d.mean
            );
            aggregate::emit_diversity(&d)
        }
        AnalysisKind::Matrix => {
            let registry = read_registry(args.registry.as_ref())?;
            let reports = read_reports(args.reports.as_ref())?;
            let measurements: Vec<RawMeasurement> =
                reports.iter().map(|r| r.measurement.clone()).collect();
            let (lo, hi) =
                report_day_bounds(&measurements).unwrap_or((default_day(), default_day()));
            let from = args.from.unwrap_or(lo);
            let to = args.to.unwrap_or(hi);
            let m = availability_matrix(&reports, &registry, from, to);
            println!(
                "availability: {} countries x {} days",
                m.rows.len(),
                m.days.len()
            );
            aggregate::emit_matrix(&m)
        }
        AnalysisKind::Centralization => {
            let verdicts = live_verdicts(&read_verdicts(args.verdicts.as_ref())?);
            let registry = read_registry(args.registry.as_ref())?;
            let countries: Vec<String> = match &args.country {
                Some(c) => vec![c.clone()],
                None => registry
                    .iter()
                    .map(|vp| vp.country.clone())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect(),
            };
            let rows: Vec<_> = countries
                .iter()
                .map(|c| centralization_score(&verdicts, &registry, c, args.threshold))
                .collect();
            for s in &rows {
                println!("{}: {:?}", s.country, s.label);
            }
            aggregate::emit_centralization(&rows)
        }
    };
    std::fs::write(&args.out, table)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn default_day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 6, 1).expect("valid date")
}
