//! The `sempath` command: rates a map's obstacle classes against a context
//! prompt, turns the ratings into tail-risk posteriors, scales a repulsive
//! potential field, plans a path, and writes the artifacts — sample cache,
//! posterior export, plan, metrics table, and overlay figure.
//!
//! Configuration comes from an optional JSON file plus command-line flags;
//! flags always win. Exit codes are scriptable: 0 success, 2 no feasible
//! path, 3 sensor failure, 4 configuration error.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sempath::field::{build_cost_field, scale_lambdas_from_cvars, CostFieldConfig};
use sempath::metrics::{
    ablate_shots, format_metrics_table, method_row, MethodRow, MetricsError, FIXED_CLASS_WEIGHT,
};
use sempath::planner::{astar, mhastar, Connectivity, PlanResult, PlanStatus, PlannerConfig};
use sempath::posterior::{
    export_posteriors, posterior_for_all_classes, BootstrapConfig, PosteriorExport,
};
use sempath::render::{render_field_pgm, render_overlay, PathLayer, RenderSpec};
use sempath::sensor::{
    cache_load, cache_store, measure_shot_latency, HttpBackend, LiveSampler, MockSampler, Prompt,
    SampleSet, Sampler, SensorConfig, SensorError,
};
use sempath::{AuxPhiMode, SemanticMap};

const EXIT_OK: i32 = 0;
const EXIT_NO_PATH: i32 = 2;
const EXIT_SENSOR: i32 = 3;
const EXIT_CONFIG: i32 = 4;

/// Default Beta shape for mock ratings when a class has no override.
const DEFAULT_MOCK_BETA: (f64, f64) = (5.0, 5.0);

#[derive(Debug)]
enum AppError {
    Config(String),
    Sensor(SensorError),
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(msg) => write!(f, "{msg}"),
            AppError::Sensor(err) => write!(f, "sensor: {err}"),
        }
    }
}

impl AppError {
    fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => EXIT_CONFIG,
            AppError::Sensor(_) => EXIT_SENSOR,
        }
    }
}

impl From<SensorError> for AppError {
    fn from(err: SensorError) -> Self {
        AppError::Sensor(err)
    }
}

impl From<MetricsError> for AppError {
    fn from(err: MetricsError) -> Self {
        match err {
            MetricsError::Sensor(inner) => AppError::Sensor(inner),
            other => AppError::Config(other.to_string()),
        }
    }
}

macro_rules! config_error_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for AppError {
            fn from(err: $ty) -> Self {
                AppError::Config(err.to_string())
            }
        }
    )*};
}

config_error_from!(
    sempath::MapError,
    sempath::FieldError,
    sempath::PlannerError,
    sempath::PosteriorError,
    sempath::RenderError,
    serde_json::Error
);

#[derive(Parser)]
#[command(
    name = "sempath",
    version,
    about = "Prompt-conditioned risk fields and grid path planning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rate every obstacle class k times and write a sample cache.
    Sample(SampleArgs),
    /// Summarize ratings into per-class mean / VaR / CVaR.
    Posterior(PosteriorArgs),
    /// Full pipeline: samples, posterior, field, plan, metrics, figure.
    Plan(PlanArgs),
    /// Posterior dispersion and sampling latency across shot counts.
    Ablate(AblateArgs),
    /// Draw the scaled potential field.
    Render(RenderArgs),
}

#[derive(Args, Default)]
struct CommonArgs {
    /// JSON run-configuration file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Map document (JSON).
    #[arg(long)]
    map: Option<PathBuf>,
    /// Context prompt rated against every obstacle class.
    #[arg(long)]
    prompt: Option<String>,
    /// Rating shots per class.
    #[arg(long)]
    k: Option<usize>,
    /// Bootstrap resample count.
    #[arg(long = "R")]
    resamples: Option<usize>,
    /// Tail level for VaR/CVaR, in (0,1).
    #[arg(long)]
    alpha: Option<f64>,
    /// Root seed for mock sampling and resampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Deterministic offline sampler instead of a live endpoint.
    #[arg(long)]
    mock: bool,
    /// Read ratings from a sample cache written by `sample`.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Sampling temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct PosteriorArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Astar,
    Ours,
    Fixed,
}

impl Method {
    fn label(self) -> &'static str {
        match self {
            Method::Astar => "astar",
            Method::Ours => "ours",
            Method::Fixed => "fixed",
        }
    }
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Semantic cost weight γ.
    #[arg(long)]
    gamma: Option<f64>,
    /// Anchor heuristic inflation (≥ 1).
    #[arg(long)]
    w1: Option<f64>,
    /// Auxiliary-queue suboptimality bound (≥ 1).
    #[arg(long)]
    w2: Option<f64>,
    /// Sampling step of the auxiliary line integral, in cells.
    #[arg(long = "delta-ell")]
    delta_ell: Option<f64>,
    /// Grid connectivity: 4 or 8.
    #[arg(long)]
    connectivity: Option<u8>,
    /// Infeasibility bound: exit 2 when combined_cost − geometric_length
    /// exceeds this.
    #[arg(long)]
    threshold: Option<f64>,
    /// Inject per-class posteriors from an export file instead of sampling.
    #[arg(long)]
    posterior: Option<PathBuf>,
    /// Which method's plan goes to plan.json.
    #[arg(long, value_enum, default_value_t = Method::Ours)]
    baseline: Method,
    /// Pixels per grid cell in the overlay figure.
    #[arg(long = "cell-pixels")]
    cell_pixels: Option<u32>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Shot counts, comma separated (e.g. 1,2,4,8,16).
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Independent runs per shot count.
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ImageFormat {
    Svg,
    Pgm,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Semantic cost weight γ (recorded in the figure metadata).
    #[arg(long)]
    gamma: Option<f64>,
    /// Inject per-class posteriors from an export file instead of sampling.
    #[arg(long)]
    posterior: Option<PathBuf>,
    /// Pixels per grid cell.
    #[arg(long = "cell-pixels")]
    cell_pixels: Option<u32>,
    #[arg(long, value_enum, default_value_t = ImageFormat::Svg)]
    format: ImageFormat,
}

/// The run-configuration file. Every field is optional; omissions fall back
/// to the built-in defaults, and explicit command-line flags override both.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    map: Option<PathBuf>,
    prompt: Option<String>,
    k: Option<usize>,
    #[serde(rename = "R")]
    resamples: Option<usize>,
    alpha: Option<f64>,
    gamma: Option<f64>,
    seed: Option<u64>,
    mock: Option<bool>,
    cache: Option<PathBuf>,
    posterior: Option<PathBuf>,
    temperature: Option<f64>,
    w1: Option<f64>,
    w2: Option<f64>,
    delta_ell: Option<f64>,
    connectivity: Option<u8>,
    aux_phi_mode: Option<AuxPhiMode>,
    threshold: Option<f64>,
    out: Option<PathBuf>,
    cell_pixels: Option<u32>,
    ks: Option<Vec<usize>>,
    runs: Option<usize>,
    /// Per-class Beta shape parameters for the mock sampler.
    mock_beta: Option<BTreeMap<String, (f64, f64)>>,
    model: Option<String>,
    endpoint: Option<String>,
}

/// Fully resolved run configuration: file values overlaid with flags and
/// defaults. Serialized verbatim into every artifact for provenance.
#[derive(Debug, Clone, Serialize)]
struct ResolvedConfig {
    map: Option<String>,
    prompt: Option<String>,
    k: usize,
    #[serde(rename = "R")]
    resamples: usize,
    alpha: f64,
    gamma: f64,
    seed: u64,
    mock: bool,
    cache: Option<String>,
    posterior: Option<String>,
    temperature: f64,
    w1: f64,
    w2: f64,
    delta_ell: f64,
    connectivity: u8,
    aux_phi_mode: AuxPhiMode,
    threshold: Option<f64>,
    out: String,
    cell_pixels: u32,
    ks: Vec<usize>,
    runs: usize,
    mock_beta: BTreeMap<String, (f64, f64)>,
    model: String,
    endpoint: String,
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig, AppError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| AppError::Config(format!("config {}: {e}", path.display())))
}

fn path_string(path: Option<PathBuf>) -> Option<String> {
    path.map(|p| p.display().to_string())
}

fn resolve(common: &CommonArgs, file: FileConfig) -> ResolvedConfig {
    ResolvedConfig {
        map: path_string(common.map.clone().or(file.map)),
        prompt: common.prompt.clone().or(file.prompt),
        k: common.k.or(file.k).unwrap_or(16),
        resamples: common.resamples.or(file.resamples).unwrap_or(3000),
        alpha: common.alpha.or(file.alpha).unwrap_or(0.1),
        gamma: file.gamma.unwrap_or(1.5),
        seed: common.seed.or(file.seed).unwrap_or(7),
        mock: common.mock || file.mock.unwrap_or(false),
        cache: path_string(common.cache.clone().or(file.cache)),
        posterior: path_string(file.posterior),
        temperature: common.temperature.or(file.temperature).unwrap_or(1.0),
        w1: file.w1.unwrap_or(1.0),
        w2: file.w2.unwrap_or(1.0),
        delta_ell: file.delta_ell.unwrap_or(0.5),
        connectivity: file.connectivity.unwrap_or(8),
        aux_phi_mode: file.aux_phi_mode.unwrap_or(AuxPhiMode::ExactSum),
        threshold: file.threshold,
        out: common
            .out
            .clone()
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from("."))
            .display()
            .to_string(),
        cell_pixels: file.cell_pixels.unwrap_or(12),
        ks: file.ks.unwrap_or_else(|| vec![1, 2, 4, 8, 16]),
        runs: file.runs.unwrap_or(10),
        mock_beta: file.mock_beta.unwrap_or_default(),
        model: file.model.unwrap_or_else(|| "gpt-4o".to_string()),
        endpoint: file
            .endpoint
            .unwrap_or_else(|| "https://api.openai.com/v1/chat/completions".to_string()),
    }
}

fn load_map(cfg: &ResolvedConfig) -> Result<SemanticMap, AppError> {
    let path = cfg
        .map
        .as_ref()
        .ok_or_else(|| AppError::Config("a map is required (--map or config file)".to_string()))?;
    SemanticMap::load(path).map_err(|e| AppError::Config(format!("map {path}: {e}")))
}

fn build_prompt(cfg: &ResolvedConfig, map: &SemanticMap) -> Result<Prompt, AppError> {
    let text = cfg.prompt.as_ref().ok_or_else(|| {
        AppError::Config("a prompt is required (--prompt or config file)".to_string())
    })?;
    let names = map
        .classes()
        .iter()
        .map(|c| c.name().to_string())
        .collect();
    Prompt::new(text, names).map_err(|e| AppError::Config(format!("prompt: {e}")))
}

/// Per-class Beta parameters for mock sampling: configured override or the
/// symmetric default, for every class on the map.
fn effective_mock_params(
    cfg: &ResolvedConfig,
    map: &SemanticMap,
) -> BTreeMap<String, (f64, f64)> {
    map.classes()
        .iter()
        .map(|class| {
            let params = cfg
                .mock_beta
                .get(class.name())
                .copied()
                .unwrap_or(DEFAULT_MOCK_BETA);
            (class.name().to_string(), params)
        })
        .collect()
}

/// Draws one SampleSet from the configured source: cache file, mock
/// sampler, or the live endpoint (API key from the environment). Updates
/// `cfg.mock_beta` to the effective parameters for provenance.
fn obtain_samples(
    cfg: &mut ResolvedConfig,
    map: &SemanticMap,
    prompt: &Prompt,
) -> Result<SampleSet, AppError> {
    if let Some(cache) = cfg.cache.clone() {
        return cache_load(cache, prompt).map_err(AppError::Sensor);
    }
    if cfg.mock {
        let params = effective_mock_params(cfg, map);
        cfg.mock_beta = params.clone();
        let sampler = MockSampler::new(params);
        return sampler
            .sample(prompt, cfg.k, cfg.seed)
            .map_err(AppError::Sensor);
    }
    let sensor_config = sensor_config(cfg);
    let backend = HttpBackend::from_env(&sensor_config)?;
    let sampler = LiveSampler {
        config: sensor_config,
        backend: &backend,
    };
    sampler
        .sample(prompt, cfg.k, cfg.seed)
        .map_err(AppError::Sensor)
}

fn sensor_config(cfg: &ResolvedConfig) -> SensorConfig {
    SensorConfig {
        endpoint: cfg.endpoint.clone(),
        model_name: cfg.model.clone(),
        k: cfg.k,
        temperature: cfg.temperature,
        ..SensorConfig::default()
    }
}

fn bootstrap_config(cfg: &ResolvedConfig) -> BootstrapConfig {
    BootstrapConfig {
        resamples: cfg.resamples,
        alpha: cfg.alpha,
        seed: cfg.seed,
        ..BootstrapConfig::default()
    }
}

fn planner_config(cfg: &ResolvedConfig) -> Result<PlannerConfig, AppError> {
    let connectivity = Connectivity::try_from(cfg.connectivity).map_err(AppError::Config)?;
    let config = PlannerConfig {
        gamma: cfg.gamma,
        connectivity,
        w1: cfg.w1,
        w2: cfg.w2,
        delta_ell: cfg.delta_ell,
        aux_phi_mode: cfg.aux_phi_mode,
    };
    config.validate()?;
    Ok(config)
}

/// Reads an injected posterior export: either the bare per-class map or a
/// pipeline artifact with the map under "classes".
fn load_injected_posteriors(path: &str) -> Result<BTreeMap<String, PosteriorExport>, AppError> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::Config(format!("posterior file {path}: {e}")))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| AppError::Config(format!("posterior file {path}: {e}")))?;
    let inner = value.get("classes").cloned().unwrap_or(value);
    serde_json::from_value(inner)
        .map_err(|e| AppError::Config(format!("posterior file {path}: {e}")))
}

/// Produces the per-class posterior table for planning/rendering, either by
/// running the sampling pipeline or by loading an injected export file.
fn risk_table(
    cfg: &mut ResolvedConfig,
    map: &SemanticMap,
) -> Result<BTreeMap<String, PosteriorExport>, AppError> {
    if let Some(path) = cfg.posterior.clone() {
        let injected = load_injected_posteriors(&path)?;
        for class in map.classes() {
            if !injected.contains_key(class.name()) {
                return Err(AppError::Config(format!(
                    "posterior file {path} has no entry for class {:?}",
                    class.name()
                )));
            }
        }
        return Ok(injected);
    }
    let prompt = build_prompt(cfg, map)?;
    let set = obtain_samples(cfg, map, &prompt)?;
    let posteriors = posterior_for_all_classes(&set, &bootstrap_config(cfg))?;
    Ok(export_posteriors(&posteriors))
}

fn print_posterior_table(table: &BTreeMap<String, PosteriorExport>, alpha: f64) {
    let width = table
        .keys()
        .map(|name| name.chars().count())
        .max()
        .unwrap_or(5)
        .max(5);
    println!(
        "{:<width$} {:>8} {:>11} {:>11}",
        "class",
        "mean",
        format!("var[{alpha}]"),
        format!("cvar[{alpha}]")
    );
    for (name, row) in table {
        println!(
            "{:<width$} {:>8.3} {:>11.3} {:>11.3}",
            name, row.mean, row.var_alpha, row.cvar_alpha
        );
    }
}

fn ensure_out_dir(cfg: &ResolvedConfig) -> Result<PathBuf, AppError> {
    let dir = PathBuf::from(&cfg.out);
    fs::create_dir_all(&dir)
        .map_err(|e| AppError::Config(format!("output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<(), AppError> {
    fs::write(path, text).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), AppError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Inserts the resolved config as an XML comment right after the first line
/// of an SVG document, so figures carry provenance like the JSON artifacts.
fn embed_config_comment(document: &str, cfg: &ResolvedConfig) -> Result<String, AppError> {
    let config_json = serde_json::to_string(cfg)?;
    // "--" is forbidden inside XML comments.
    let escaped = config_json.replace("--", "\\u002d\\u002d");
    match document.find('\n') {
        Some(pos) => {
            let mut out = String::with_capacity(document.len() + escaped.len() + 32);
            out.push_str(&document[..=pos]);
            out.push_str(&format!("<!-- config: {escaped} -->\n"));
            out.push_str(&document[pos + 1..]);
            Ok(out)
        }
        None => Ok(document.to_string()),
    }
}

/// PGM counterpart: splices a `#` comment line after the magic number.
/// Operates on bytes because the raster section is binary.
fn embed_pgm_config(image: &[u8], cfg: &ResolvedConfig) -> Result<Vec<u8>, AppError> {
    let config_json = serde_json::to_string(cfg)?;
    let Some(pos) = image.iter().position(|&b| b == b'\n') else {
        return Ok(image.to_vec());
    };
    let mut out = Vec::with_capacity(image.len() + config_json.len() + 16);
    out.extend_from_slice(&image[..=pos]);
    out.extend_from_slice(format!("# config: {config_json}\n").as_bytes());
    out.extend_from_slice(&image[pos + 1..]);
    Ok(out)
}

fn cmd_sample(args: &SampleArgs) -> Result<i32, AppError> {
    let file = load_file_config(&args.common.config)?;
    let mut cfg = resolve(&args.common, file);
    let map = load_map(&cfg)?;
    let prompt = build_prompt(&cfg, &map)?;
    let set = obtain_samples(&mut cfg, &map, &prompt)?;
    let out = ensure_out_dir(&cfg)?;
    let path = out.join("samples.json");
    cache_store(&set, &path).map_err(AppError::Sensor)?;
    for class in set.classes() {
        let readings: Vec<String> = class.readings().iter().map(f64::to_string).collect();
        println!("{}: {}", class.name(), readings.join(" "));
    }
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

fn cmd_posterior(args: &PosteriorArgs) -> Result<i32, AppError> {
    let file = load_file_config(&args.common.config)?;
    let mut cfg = resolve(&args.common, file);
    let map = load_map(&cfg)?;
    let prompt = build_prompt(&cfg, &map)?;
    let set = obtain_samples(&mut cfg, &map, &prompt)?;
    let posteriors = posterior_for_all_classes(&set, &bootstrap_config(&cfg))?;
    let export = export_posteriors(&posteriors);
    let out = ensure_out_dir(&cfg)?;
    let path = out.join("posterior.json");
    write_json(
        &path,
        &serde_json::json!({ "config": cfg, "classes": export }),
    )?;
    print_posterior_table(&export, cfg.alpha);
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

fn apply_plan_flags(cfg: &mut ResolvedConfig, args: &PlanArgs) {
    if let Some(gamma) = args.gamma {
        cfg.gamma = gamma;
    }
    if let Some(w1) = args.w1 {
        cfg.w1 = w1;
    }
    if let Some(w2) = args.w2 {
        cfg.w2 = w2;
    }
    if let Some(delta_ell) = args.delta_ell {
        cfg.delta_ell = delta_ell;
    }
    if let Some(connectivity) = args.connectivity {
        cfg.connectivity = connectivity;
    }
    if let Some(threshold) = args.threshold {
        cfg.threshold = Some(threshold);
    }
    if let Some(posterior) = &args.posterior {
        cfg.posterior = Some(posterior.display().to_string());
    }
    if let Some(cell_pixels) = args.cell_pixels {
        cfg.cell_pixels = cell_pixels;
    }
}

const METHOD_COLORS: [(&str, &str); 3] = [
    ("astar", "#e8e8e8"),
    ("ours", "#00b4d8"),
    ("fixed", "#f4a300"),
];

fn cmd_plan(args: &PlanArgs) -> Result<i32, AppError> {
    let file = load_file_config(&args.common.config)?;
    let mut cfg = resolve(&args.common, file);
    apply_plan_flags(&mut cfg, args);
    let map = load_map(&cfg)?;
    let planner = planner_config(&cfg)?;

    let risk = risk_table(&mut cfg, &map)?;
    print_posterior_table(&risk, cfg.alpha);
    let cvars: BTreeMap<String, f64> = risk
        .iter()
        .map(|(name, row)| (name.clone(), row.cvar_alpha))
        .collect();
    let scaled_lambdas = scale_lambdas_from_cvars(map.classes(), &cvars)?;
    let fixed_cvars: BTreeMap<String, f64> = map
        .classes()
        .iter()
        .map(|c| (c.name().to_string(), FIXED_CLASS_WEIGHT))
        .collect();
    let fixed_lambdas = scale_lambdas_from_cvars(map.classes(), &fixed_cvars)?;

    let fields = map.distance_fields();
    let field_config = CostFieldConfig {
        gamma: cfg.gamma,
        alpha: cfg.alpha,
    };
    let scaled_field = build_cost_field(&map, &fields, &scaled_lambdas, field_config)?;
    let fixed_field = build_cost_field(&map, &fields, &fixed_lambdas, field_config)?;

    let baseline_planner = PlannerConfig {
        gamma: 0.0,
        ..planner
    };
    let plans: Vec<(Method, PlanResult)> = vec![
        (
            Method::Astar,
            astar(&map, &scaled_field, &baseline_planner)?,
        ),
        (Method::Ours, mhastar(&map, &scaled_field, &planner)?),
        (Method::Fixed, mhastar(&map, &fixed_field, &planner)?),
    ];

    let rows: Vec<MethodRow> = plans
        .iter()
        .map(|(method, plan)| method_row(method.label(), plan, &map, &fields))
        .collect::<Result<_, _>>()?;
    print!("{}", format_metrics_table(&rows));

    let out = ensure_out_dir(&cfg)?;
    write_json(
        &out.join("metrics.json"),
        &serde_json::json!({ "config": cfg, "rows": rows }),
    )?;

    let overlay_paths: Vec<PathLayer> = plans
        .iter()
        .filter(|(_, plan)| plan.status == PlanStatus::Found)
        .map(|(method, plan)| {
            let color = METHOD_COLORS
                .iter()
                .find(|(name, _)| *name == method.label())
                .expect("every method has a color")
                .1;
            PathLayer {
                label: method.label().to_string(),
                path: plan.path.clone(),
                color: color.to_string(),
            }
        })
        .collect();
    let spec = RenderSpec {
        field: &scaled_field,
        map: &map,
        paths: overlay_paths,
        cell_pixels: cfg.cell_pixels.max(1),
    };
    let svg = embed_config_comment(&render_overlay(&spec)?, &cfg)?;
    write_text(&out.join("overlay.svg"), &svg)?;

    let selected = plans
        .iter()
        .find(|(method, _)| *method == args.baseline)
        .expect("selected method was planned")
        .1
        .clone();
    write_json(
        &out.join("plan.json"),
        &serde_json::json!({ "config": cfg, "plan": selected }),
    )?;
    println!(
        "wrote {}, metrics.json, overlay.svg",
        out.join("plan.json").display()
    );

    if selected.status == PlanStatus::NoPath {
        eprintln!("no path from start to goal for method {}", args.baseline.label());
        return Ok(EXIT_NO_PATH);
    }
    if let Some(threshold) = cfg.threshold {
        let combined = selected.combined_cost.expect("found plan has a cost");
        let geometric = selected
            .geometric_length
            .expect("found plan has a length");
        let excess = combined - geometric;
        if excess > threshold {
            eprintln!(
                "infeasible: accumulated field cost {excess:.4} exceeds threshold {threshold} \
                 (combined {combined:.4}, geometric {geometric:.4})"
            );
            return Ok(EXIT_NO_PATH);
        }
    }
    Ok(EXIT_OK)
}

fn cmd_ablate(args: &AblateArgs) -> Result<i32, AppError> {
    let file = load_file_config(&args.common.config)?;
    let mut cfg = resolve(&args.common, file);
    if let Some(ks) = &args.ks {
        cfg.ks = ks.clone();
    }
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    }
    if cfg.ks.is_empty() {
        return Err(AppError::Config(
            "ablation needs at least one shot count (--ks)".to_string(),
        ));
    }
    let map = load_map(&cfg)?;
    let prompt = build_prompt(&cfg, &map)?;
    if cfg.cache.is_some() {
        return Err(AppError::Config(
            "ablation resamples repeatedly; use --mock or live sensing, not --cache".to_string(),
        ));
    }

    let bootstrap = bootstrap_config(&cfg);
    let params = effective_mock_params(&cfg, &map);
    let mock_sampler;
    let live_backend;
    let live_sampler;
    let sampler: &dyn Sampler = if cfg.mock {
        cfg.mock_beta = params.clone();
        mock_sampler = MockSampler::new(params);
        &mock_sampler
    } else {
        let sensor_cfg = sensor_config(&cfg);
        live_backend = HttpBackend::from_env(&sensor_cfg)?;
        live_sampler = LiveSampler {
            config: sensor_cfg,
            backend: &live_backend,
        };
        &live_sampler
    };

    let report = ablate_shots(&prompt, &cfg.ks, cfg.runs, sampler, &bootstrap)?;
    let latency = measure_shot_latency(sampler, &prompt, &cfg.ks, cfg.runs, cfg.seed)?;

    let out = ensure_out_dir(&cfg)?;
    let path = out.join("ablation.json");
    write_json(
        &path,
        &serde_json::json!({ "config": cfg, "report": report, "latency": latency }),
    )?;

    println!(
        "{:>4} {:>5} {:>10} {:>10} {:>12}",
        "k", "runs", "mean_s", "std_s", "mean/shot_s"
    );
    for row in &latency {
        println!(
            "{:>4} {:>5} {:>10.4} {:>10.4} {:>12.4}",
            row.k, row.runs, row.mean_s, row.std_s, row.mean_per_shot_s
        );
    }
    if let Some(dispersion) = &report.dispersion {
        for (label, stds) in dispersion {
            let pairs: Vec<String> = report
                .ks
                .iter()
                .zip(stds)
                .map(|(k, std)| format!("k={k}: {std:.4}"))
                .collect();
            println!("cvar dispersion [{label}] {}", pairs.join(", "));
        }
    }
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

fn cmd_render(args: &RenderArgs) -> Result<i32, AppError> {
    let file = load_file_config(&args.common.config)?;
    let mut cfg = resolve(&args.common, file);
    if let Some(gamma) = args.gamma {
        cfg.gamma = gamma;
    }
    if let Some(posterior) = &args.posterior {
        cfg.posterior = Some(posterior.display().to_string());
    }
    if let Some(cell_pixels) = args.cell_pixels {
        cfg.cell_pixels = cell_pixels;
    }
    let map = load_map(&cfg)?;

    let risk = risk_table(&mut cfg, &map)?;
    let cvars: BTreeMap<String, f64> = risk
        .iter()
        .map(|(name, row)| (name.clone(), row.cvar_alpha))
        .collect();
    let lambdas = scale_lambdas_from_cvars(map.classes(), &cvars)?;
    let fields = map.distance_fields();
    let field = build_cost_field(
        &map,
        &fields,
        &lambdas,
        CostFieldConfig {
            gamma: cfg.gamma,
            alpha: cfg.alpha,
        },
    )?;
    let spec = RenderSpec {
        field: &field,
        map: &map,
        paths: vec![],
        cell_pixels: cfg.cell_pixels.max(1),
    };
    let out = ensure_out_dir(&cfg)?;
    let path = match args.format {
        ImageFormat::Svg => {
            let svg = embed_config_comment(&render_overlay(&spec)?, &cfg)?;
            let path = out.join("field.svg");
            write_text(&path, &svg)?;
            path
        }
        ImageFormat::Pgm => {
            let pgm = embed_pgm_config(&render_field_pgm(&spec)?, &cfg)?;
            let path = out.join("field.pgm");
            fs::write(&path, &pgm)
                .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
            path
        }
    };
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
            let _ = err.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Sample(args) => cmd_sample(args),
        Command::Posterior(args) => cmd_posterior(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Render(args) => cmd_render(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}
