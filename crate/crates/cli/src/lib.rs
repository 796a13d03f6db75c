//! Command implementations behind the `arcade` binary.

pub mod export;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use arcade_core::collector::{
    agent_run, events_from_samples, AgentConfig, Collector, CollectorError, RecordStore, TcpLink, WireError,
};
use arcade_core::grid::{read_samples_csv, write_samples_csv, GridError, GridSpec, RawSample, Source};
use arcade_core::indices::service_map;
use arcade_core::nn::io::{load_locator, save_locator};
use arcade_core::nn::{group_reports, locator_train, Activation, Locator, LocatorParams, NnError, TrainConfig};
use arcade_core::pipeline::{analyze, Analysis, PipelineError, PipelineParams};
use arcade_core::simulator::{ground_truth_fields, sample_mdt_with, sample_mr_with, EnvironmentConfig, SimError};
use arcade_core::Scalar;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Transport(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Transport(_) => 4,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CollectorError> for CliError {
    fn from(e: CollectorError) -> Self {
        match e {
            CollectorError::Config(_) | CollectorError::Record(_) => CliError::Data(e.to_string()),
            _ => CliError::Transport(e.to_string()),
        }
    }
}

fn at_path(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn grid_err(path: &Path) -> impl Fn(GridError) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

/// Line and column (1-based) of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(at_path(path))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(at_path(path))?;
    toml::from_str(&text).map_err(|e| {
        let (line, col) = e.span().map_or((1, 1), |s| line_col(&text, s.start));
        CliError::Data(format!("{}:{line}:{col}: {}", path.display(), e.message()))
    })
}

pub fn read_env(path: &Path) -> Result<EnvironmentConfig, CliError> {
    let env: EnvironmentConfig = read_json(path)?;
    env.validate()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(env)
}

fn read_samples(path: &Path) -> Result<Vec<RawSample>, CliError> {
    let f = fs::File::open(path).map_err(at_path(path))?;
    read_samples_csv(std::io::BufReader::new(f)).map_err(grid_err(path))
}

fn write_samples(path: &Path, samples: &[RawSample]) -> Result<(), CliError> {
    let f = fs::File::create(path).map_err(at_path(path))?;
    write_samples_csv(std::io::BufWriter::new(f), samples).map_err(grid_err(path))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(at_path(path))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(at_path(path))
}

#[derive(Parser, Debug)]
#[command(
    name = "arcade",
    version,
    about = "Coverage anomaly detection from georeferenced RSRP measurements"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate samples and ground-truth fields from an environment file.
    Simulate(SimulateArgs),
    /// Run the analysis chain on a samples file and export the diagnosis.
    Analyze(AnalyzeArgs),
    /// Fit a fingerprint locator on positioned samples.
    TrainLocator(TrainLocatorArgs),
    /// Accept agent sessions and store consolidated records.
    Serve(ServeArgs),
    /// Consolidate MR samples and ship them to a collector.
    Agent(AgentArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    /// Environment JSON.
    #[arg(long)]
    pub env: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the environment seed (shadowing and sampling).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mdt_per_cell: Option<usize>,
    /// MR UEs; their unpositioned reports go to mr.csv.
    #[arg(long)]
    pub mr_ues: Option<usize>,
    #[arg(long)]
    pub mr_reports_per_ue: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Tanh,
    Relu,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Tanh => Activation::Tanh,
            ActivationArg::Relu => Activation::Relu,
        }
    }
}

/// Network training overrides shared by `analyze` and `train-locator`.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
    /// Training seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainArgs {
    fn apply(&self, hidden: &mut Vec<usize>, activation: &mut Activation, train: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            train.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            train.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            train.batch_size = v;
        }
        if let Some(v) = &self.hidden {
            *hidden = v.clone();
        }
        if let Some(v) = self.activation {
            *activation = v.into();
        }
        if let Some(v) = self.seed {
            train.seed = v;
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub samples: PathBuf,
    /// Grid spec JSON.
    #[arg(long, required_unless_present = "env", conflicts_with = "env")]
    pub grid: Option<PathBuf>,
    /// Environment JSON; only its grid spec is used.
    #[arg(long)]
    pub env: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML parameter file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Locator model used to position MR samples before analysis.
    #[arg(long)]
    pub locator: Option<PathBuf>,
    /// Worker threads for per-cell stages (0 = all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta_db: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub t_serv_dbm: Option<f64>,
    #[arg(long)]
    pub k_os: Option<f64>,
    #[arg(long)]
    pub m_abn: Option<usize>,
    /// Largest per-cell training set fitted by one global GP; larger sets are
    /// predicted tile by tile.
    #[arg(long)]
    pub max_train_points: Option<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
    /// Also write intermediate per-cell products under stages/.
    #[arg(long)]
    pub dump_stages: bool,
}

#[derive(Args, Debug, Clone)]
pub struct TrainLocatorArgs {
    /// Positioned samples (MDT or drive test).
    #[arg(long)]
    pub samples: PathBuf,
    /// Environment JSON providing the grid and the cluster PCIs.
    #[arg(long)]
    pub env: PathBuf,
    /// Output model JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with locator parameters; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug, Clone)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub listen: String,
    /// Directory for per-agent JSON-lines record files.
    #[arg(long)]
    pub store: PathBuf,
    /// Stop after this many sessions.
    #[arg(long)]
    pub sessions: Option<usize>,
    /// Write the bound address here once listening.
    #[arg(long)]
    pub addr_file: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct AgentArgs {
    #[arg(long)]
    pub connect: String,
    #[arg(long)]
    pub agent_id: String,
    /// MR samples CSV.
    #[arg(long, alias = "events")]
    pub samples: PathBuf,
    /// File holding the anonymization salt (raw bytes).
    #[arg(long)]
    pub salt_file: PathBuf,
    #[arg(long)]
    pub window_ms: Option<i64>,
    #[arg(long)]
    pub max_batch: Option<usize>,
    #[arg(long)]
    pub ack_timeout_ms: Option<u64>,
    #[arg(long)]
    pub max_retries: Option<usize>,
}

/// Machine-readable one-line summary printed on stdout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary(pub String);

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RESULT ok {}", self.0)
    }
}

pub fn run(cli: &Cli) -> Result<Summary, CliError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::TrainLocator(a) => cmd_train_locator(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Agent(a) => cmd_agent(a),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Summary, CliError> {
    let mut env = read_env(&args.env)?;
    if let Some(s) = args.seed {
        env.seed = s;
    }
    let plan = &env.sampling;
    let n_mdt = args.mdt_per_cell.unwrap_or(plan.mdt_per_cell);
    let n_ue = args.mr_ues.unwrap_or(plan.mr_ues);
    let per_ue = args.mr_reports_per_ue.unwrap_or(plan.mr_reports_per_ue);
    let fields = ground_truth_fields(&env)?;
    let samples = sample_mdt_with(&env, &fields, n_mdt, env.seed)?;
    create_dir(&args.out.join("truth"))?;
    write_samples(&args.out.join("samples.csv"), &samples)?;
    for (pci, f) in &fields {
        write(
            &args.out.join("truth").join(format!("pci_{pci}.csv")),
            export::field_csv(f),
        )?;
    }
    let mut summary = format!("cells={} samples={}", fields.len(), samples.len());
    if n_ue > 0 {
        let draw = sample_mr_with(&env, &fields, n_ue, per_ue, env.seed)?;
        let mr: Vec<RawSample> = draw.ues.into_iter().flat_map(|u| u.samples).collect();
        write_samples(&args.out.join("mr.csv"), &mr)?;
        let mut pos = String::from("ue_token,lat,lon\n");
        for (i, p) in draw.hidden_positions.iter().enumerate() {
            pos.push_str(&format!("ue-{i:05},{},{}\n", p.lat, p.lon));
        }
        write(&args.out.join("mr_positions.csv"), pos)?;
        summary.push_str(&format!(" mr_samples={}", mr.len()));
    }
    log::info!("wrote {} samples for {} cells", samples.len(), fields.len());
    Ok(Summary(summary))
}

/// Resolve pipeline parameters: defaults, then the config file, then flags.
pub fn analyze_params(args: &AnalyzeArgs) -> Result<PipelineParams, CliError> {
    let mut p: PipelineParams = match &args.config {
        Some(path) => read_toml(path)?,
        None => PipelineParams::default(),
    };
    if let Some(v) = args.jobs {
        p.jobs = v;
    }
    if let Some(v) = args.delta_db {
        p.indices.delta_db = v;
    }
    if let Some(v) = args.t_serv_dbm {
        p.indices.t_serv_dbm = v;
    }
    if let Some(v) = args.k_os {
        p.indices.k_os = v;
    }
    if let Some(v) = args.m_abn {
        p.indices.m_abn = v;
    }
    if let Some(v) = args.max_train_points {
        p.extrapolation.max_train_points = v;
    }
    let c = &mut p.coverage;
    args.train.apply(&mut c.hidden, &mut c.activation, &mut c.train);
    Ok(p)
}

/// Position MR samples with the locator: readings sharing `(ue_token,
/// timestamp_ms)` form one fingerprint. Positioned samples pass through.
pub fn position_samples<T: Scalar>(samples: Vec<RawSample>, locator: &Locator<T>) -> Result<Vec<RawSample>, CliError> {
    let (positioned, mut pending): (Vec<RawSample>, Vec<RawSample>) =
        samples.into_iter().partition(|s| s.position.is_some());
    let mut groups: BTreeMap<(String, i64), Vec<(u32, f64)>> = BTreeMap::new();
    for s in &pending {
        groups
            .entry((s.ue_token.clone(), s.timestamp_ms))
            .or_default()
            .push((s.pci, s.rsrp_dbm));
    }
    let mut at = BTreeMap::new();
    for (key, readings) in &groups {
        let fp = locator.fingerprint(readings);
        at.insert(key.clone(), locator.geolocate(&fp.values)?);
    }
    for s in &mut pending {
        s.position = Some(at[&(s.ue_token.clone(), s.timestamp_ms)]);
    }
    log::info!("positioned {} readings in {} reports", pending.len(), groups.len());
    let mut out = positioned;
    out.extend(pending);
    Ok(out)
}

fn analyze_grid(args: &AnalyzeArgs) -> Result<GridSpec, CliError> {
    let spec = match (&args.grid, &args.env) {
        (Some(g), _) => read_json::<GridSpec>(g)?,
        (None, Some(e)) => read_env(e)?.spec,
        (None, None) => return Err(CliError::Usage("one of --grid or --env is required".into())),
    };
    spec.validate().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(spec)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<Summary, CliError> {
    let params = analyze_params(args)?;
    let spec = analyze_grid(args)?;
    let mut samples = read_samples(&args.samples)?;
    if let Some(path) = &args.locator {
        let locator: Locator<f32> =
            load_locator(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        samples = position_samples(samples, &locator)?;
    }
    match args.precision {
        Precision::F32 => write_analysis(args, &analyze::<f32>(&spec, &samples, &params)?),
        Precision::F64 => write_analysis(args, &analyze::<f64>(&spec, &samples, &params)?),
    }
}

fn write_analysis<T>(args: &AnalyzeArgs, a: &Analysis<T>) -> Result<Summary, CliError> {
    let out = &args.out;
    create_dir(&out.join("fields"))?;
    write(&out.join("report.json"), a.report.to_json())?;
    let fields = a.model_fields();
    for (pci, f) in &fields {
        write(&out.join("fields").join(format!("pci_{pci}.csv")), export::field_csv(f))?;
        write(&out.join("fields").join(format!("pci_{pci}.pgm")), export::field_pgm(f))?;
    }
    let smap = service_map(&fields, a.report.params.t_serv_dbm).map_err(|e| CliError::Data(e.to_string()))?;
    let geo = export::best_server_geojson(&smap);
    write(
        &out.join("best_server.geojson"),
        serde_json::to_string(&geo).expect("json value") + "\n",
    )?;
    if args.dump_stages {
        dump_stages(&out.join("stages"), a)?;
    }
    let anomalies = a.report.cells.iter().filter(|c| c.overshooter || c.fragmented).count();
    Ok(Summary(format!("cells={} anomalies={anomalies}", a.report.cells.len())))
}

fn dump_stages<T>(dir: &Path, a: &Analysis<T>) -> Result<(), CliError> {
    for (pci, c) in &a.cells {
        let d = dir.join(format!("pci_{pci}"));
        create_dir(&d)?;
        let mut labels = String::from("row,col,label\n");
        for (coord, l) in &c.extrapolation.labels {
            labels.push_str(&format!("{},{},{l:?}\n", coord.row, coord.col));
        }
        write(&d.join("labels.csv"), labels)?;
        let mut aug = String::from("east_m,north_m,rsrp_dbm,weight,provenance\n");
        for s in &c.extrapolation.augmented.samples {
            aug.push_str(&format!(
                "{},{},{},{},{:?}\n",
                s.east_m, s.north_m, s.value_dbm, s.weight, s.provenance
            ));
        }
        write(&d.join("augmented.csv"), aug)?;
        let dense = &c.extrapolation.dense;
        let mut s = String::from("row,col,rsrp_dbm,weight,source\n");
        for (i, coord) in dense.spec.coords().enumerate() {
            s.push_str(&format!(
                "{},{},{},{},{:?}\n",
                coord.row, coord.col, dense.values[i], dense.weights[i], dense.source[i]
            ));
        }
        write(&d.join("dense.csv"), s)?;
        write(
            &d.join("hyper.json"),
            serde_json::to_string_pretty(&c.extrapolation.hyper).expect("json") + "\n",
        )?;
        let mut loss = String::from("epoch,loss\n");
        for (e, l) in c.model.loss_trace.iter().enumerate() {
            loss.push_str(&format!("{},{l}\n", e + 1));
        }
        write(&d.join("loss.csv"), loss)?;
    }
    Ok(())
}

pub fn cmd_train_locator(args: &TrainLocatorArgs) -> Result<Summary, CliError> {
    let env = read_env(&args.env)?;
    let mut params: LocatorParams = match &args.config {
        Some(p) => read_toml(p)?,
        None => LocatorParams::default(),
    };
    args.train
        .apply(&mut params.hidden, &mut params.activation, &mut params.train);
    let samples = read_samples(&args.samples)?;
    let reports = group_reports(&samples);
    if reports.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no positioned samples",
            args.samples.display()
        )));
    }
    let (locator, trace) = locator_train::<f32>(&reports, &env.pcis(), &env.spec, &params)?;
    save_locator(&locator, &args.out).map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    log::info!("final training loss {:.3e}", trace.last().copied().unwrap_or(f64::NAN));
    Ok(Summary(format!(
        "reports={} pcis={}",
        reports.len(),
        locator.pcis.len()
    )))
}

pub fn cmd_serve(args: &ServeArgs) -> Result<Summary, CliError> {
    let store = RecordStore::persistent(&args.store)?;
    let collector =
        Collector::bind(&args.listen, store).map_err(|e| CliError::Transport(format!("{}: {e}", args.listen)))?;
    let addr = collector.local_addr().map_err(|e| CliError::Transport(e.to_string()))?;
    log::info!("listening on {addr}");
    if let Some(p) = &args.addr_file {
        // rename so readers never see a partial address
        let tmp = p.with_extension("tmp");
        write(&tmp, addr.to_string())?;
        fs::rename(&tmp, p).map_err(at_path(p))?;
    }
    let sessions = collector.serve(args.sessions);
    let mut completed = 0;
    for s in &sessions {
        match s {
            Ok(t) if t.completed => completed += 1,
            Ok(t) => log::warn!("session from {} ended early", t.agent_id),
            Err(e) => log::warn!("session failed: {e}"),
        }
    }
    let store: Arc<Mutex<RecordStore>> = collector.store();
    let store = store.lock().expect("store lock");
    Ok(Summary(format!(
        "sessions={completed} records={} events={}",
        store.record_count(),
        store.event_count()
    )))
}

pub fn cmd_agent(args: &AgentArgs) -> Result<Summary, CliError> {
    let salt = fs::read(&args.salt_file).map_err(at_path(&args.salt_file))?;
    let mut cfg = AgentConfig::new(args.agent_id.clone(), salt);
    if let Some(v) = args.window_ms {
        cfg.window_ms = v;
    }
    if let Some(v) = args.max_batch {
        cfg.max_batch = v;
    }
    if let Some(v) = args.ack_timeout_ms {
        cfg.ack_timeout_ms = v;
    }
    if let Some(v) = args.max_retries {
        cfg.max_retries = v;
    }
    cfg.validate()?;
    let samples = read_samples(&args.samples)?;
    let mr: Vec<RawSample> = samples.into_iter().filter(|s| s.source == Source::Mr).collect();
    let events = events_from_samples(&mr);
    let mut link = TcpLink::connect(args.connect.as_str(), Some(cfg.ack_timeout()))
        .map_err(|e: WireError| CliError::Transport(format!("{}: {e}", args.connect)))?;
    let t = agent_run(&events, &cfg, &mut link)?;
    if t.collector_records != t.accepted {
        return Err(CliError::Transport(format!(
            "collector stored {} records, agent saw {} accepted",
            t.collector_records, t.accepted
        )));
    }
    log::info!(
        "{} events in {} records over {} batches",
        t.events,
        t.records,
        t.batches
    );
    Ok(Summary(format!(
        "events={} records={} accepted={} duplicates={} retries={}",
        t.events, t.records, t.accepted, t.duplicates, t.retries
    )))
}
