//! `cfu`: batch access to ingestion, post-processing, evaluation, parameter
//! search, quantification export, synthetic data and the HTTP service.
//!
//! Exit status is 0 on success, 1 when the data or a computation is at
//! fault, 2 on a usage error.

mod io;
mod settings;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cfu_core::evaluation::{review_report, Rater};
use cfu_core::model::validate_dataset;
use cfu_core::quant::{export_csv, export_experiment, ExportError, Experiment, TriplicateGroup};
use cfu_core::search::{grid_search, render_table_csv, SearchSpace};
use cfu_core::store::{fit_missing_ellipses, to_json, EditAction, EditEvent, PipelineSummary, Snapshot, Store};
use cfu_core::synth::{generate_case, Perturbation, SynthConfig};
use cfu_core::{Dataset, ExclusionReason, ImageId, InstanceId, Split};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::io::{read_input, write_dataset};
use crate::settings::PostProcOverrides;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn domain(e: impl std::fmt::Display) -> Self {
        CliError::Domain(e.to_string())
    }
}

macro_rules! domain_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::domain(e)
            }
        }
    )*};
}

domain_from!(
    cfu_core::store::InterchangeError,
    cfu_core::store::StoreError,
    cfu_core::store::EditError,
    cfu_core::search::SearchError,
    cfu_core::evaluation::EvalError,
    cfu_core::synth::SynthError
);

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Human-readable tables.
    Text,
    /// Machine-readable JSON.
    Json,
}

#[derive(Parser)]
#[command(name = "cfu", version, about = "Count BVG+ and BVG- colonies on Petri-dish images")]
struct Cli {
    /// Settings file (TOML); `default` uses built-in values.
    #[arg(long, global = true, env = "CFU_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for everything random.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for per-image work.
    #[arg(long, global = true, env = "CFU_JOBS")]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Store an interchange file (and pixels found next to it) as a new dataset.
    Ingest(IngestArgs),
    /// Run the exclusion pipeline and print per-reason counts.
    Postprocess(PostprocessArgs),
    /// Benchmark predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Grid search of post-processing parameters on train and val images.
    Search(SearchArgs),
    /// Bacteria estimates with confidence intervals for an experiment.
    Export(ExportArgs),
    /// Write a synthetic case: interchange file, images and planted reasons.
    Synth(SynthArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Interchange file, directory holding `dataset.json`, or `-`.
    input: PathBuf,
    #[arg(long, env = "CFU_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Dataset name; defaults to the one in the file.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct PostprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Where to write the filtered dataset: a `.json` file, a directory, or `-`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: PostProcOverrides,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Dataset holding the predictions.
    #[arg(long)]
    pred: PathBuf,
    /// Dataset holding the ground truth; defaults to `--pred`.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// JSON list of user raters (`name`, `kind`, per-image `counts`).
    #[arg(long)]
    raters: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Search space: TOML or JSON with a value list per searched parameter.
    #[arg(long)]
    space: Option<PathBuf>,
    /// Write the result table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: PostProcOverrides,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// JSON experiment: `id` and `triplicates` (`image_ids`, `dilution`).
    #[arg(long)]
    experiment: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    images: u64,
    #[arg(long)]
    n_colonies: Option<usize>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Record the true dish ellipse in the file instead of leaving it to be fitted.
    #[arg(long)]
    attach_dish: bool,
    /// No detector noise and no plants: predictions equal the ground truth.
    #[arg(long)]
    clean: bool,
    /// Split recorded on every image: train, val, test or unsplit.
    #[arg(long, value_parser = parse_split, default_value = "unsplit")]
    split: Split,
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| format!("unknown split {s}"))
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "CFU_BIND")]
    bind: Option<String>,
    #[arg(long, env = "CFU_DATA_DIR")]
    data_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Domain(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let file = settings::load(cli.config.as_deref())?;
    let fmt = cli.format;
    match cli.command {
        Command::Ingest(a) => ingest(a, &file, fmt),
        Command::Postprocess(a) => postprocess(a, &file, fmt),
        Command::Evaluate(a) => evaluate(a, &file, fmt),
        Command::Search(a) => search(a, &file, fmt),
        Command::Export(a) => export(a, fmt),
        Command::Synth(a) => synth(a, cli.seed),
        Command::Serve(a) => serve(a, &file),
    }
}

fn data_dir(flag: Option<PathBuf>, file: &settings::FileSettings) -> PathBuf {
    flag.or_else(|| file.server.data_dir.clone()).unwrap_or_else(|| settings::DEFAULT_DATA_DIR.into())
}

fn ingest(a: IngestArgs, file: &settings::FileSettings, fmt: Format) -> CliResult {
    let mut input = read_input(&a.input)?;
    if let Some(name) = a.name {
        input.ds.name = name;
    }
    let store = Store::open(data_dir(a.data_dir, file))?;
    let pixels: Vec<(ImageId, Vec<u8>)> = input
        .ds
        .images
        .iter()
        .filter_map(|img| Some((img.id, input.pixel_bytes(img)?)))
        .collect();
    let id = store.create(input.ds)?;
    for (img, bytes) in &pixels {
        store.put_pixels(&id, *img, bytes)?;
    }
    match fmt {
        Format::Text => println!("{id}"),
        Format::Json => println!("{}", serde_json::json!({ "id": id, "pixels": pixels.len() })),
    }
    Ok(())
}

fn postprocess(a: PostprocessArgs, file: &settings::FileSettings, fmt: Format) -> CliResult {
    let config = file.postproc(&a.overrides).map_err(CliError::Usage)?;
    let input = read_input(&a.input)?;
    let (fitted, _) = fit_missing_ellipses(&input.ds, |img| input.gray(img));
    let fitted_ids: Vec<ImageId> = fitted.keys().copied().collect();
    let mut snap = Snapshot::from_base(input.ds.clone());
    snap.apply(&EditEvent {
        seq: 1,
        actor: "cli".into(),
        timestamp: std::time::SystemTime::now().into(),
        action: EditAction::ApplyPipeline { config, fitted_ellipses: fitted },
    })?;
    let summary = PipelineSummary::new(&snap.dataset, config, fitted_ids);
    let rendered = match fmt {
        Format::Text => summary.render_text(),
        Format::Json => summary.render_json(),
    };
    match a.out.as_deref() {
        Some(p) if p == Path::new("-") => {
            print!("{}", to_json(&snap.dataset));
            eprint!("{rendered}");
        }
        Some(p) => {
            write_dataset(&snap.dataset, p, &input)?;
            print!("{rendered}");
        }
        None => print!("{rendered}"),
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs, file: &settings::FileSettings, fmt: Format) -> CliResult {
    let cfg = file.eval().map_err(CliError::Usage)?;
    let mut ds = read_input(&a.pred)?.ds;
    if let Some(gt) = &a.gt {
        let g = read_input(gt)?.ds;
        let ids = |d: &Dataset| d.images.iter().map(|i| i.id).collect::<Vec<_>>();
        if ids(&g) != ids(&ds) {
            return Err(CliError::Domain("--gt and --pred cover different images".into()));
        }
        ds.ground_truth = g.ground_truth;
        if let Some(v) = validate_dataset(&ds).first() {
            return Err(CliError::Domain(format!("combined dataset: {v}")));
        }
    }
    let raters: Vec<Rater> = match &a.raters {
        Some(p) => serde_json::from_str(&io::read_text(p)?)
            .map_err(|e| CliError::Domain(format!("{}: {e}", p.display())))?,
        None => Vec::new(),
    };
    let report = review_report(&ds, &cfg, &raters)?;
    print!(
        "{}",
        match fmt {
            Format::Text => report.render_text(),
            Format::Json => report.render_json(),
        }
    );
    Ok(())
}

/// Search space file. A parameter left out stays at its base value.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceFile {
    score_threshold: Option<Vec<f64>>,
    dup_iou_threshold: Option<Vec<f64>>,
    ellipse_shrink: Option<Vec<f64>>,
    laplace_ci: Option<Vec<f64>>,
}

fn read_space(path: &Path, base: &cfu_core::PostProcConfig) -> CliResult<SearchSpace> {
    let text = io::read_text(path)?;
    let parsed: Result<SpaceFile, String> = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    let f = parsed.map_err(|e| CliError::Usage(format!("search space {}: {e}", path.display())))?;
    let single = SearchSpace::single(base);
    Ok(SearchSpace {
        score_threshold: f.score_threshold.unwrap_or(single.score_threshold),
        dup_iou_threshold: f.dup_iou_threshold.unwrap_or(single.dup_iou_threshold),
        ellipse_shrink: f.ellipse_shrink.unwrap_or(single.ellipse_shrink),
        laplace_ci: f.laplace_ci.unwrap_or(single.laplace_ci),
    })
}

fn search(a: SearchArgs, file: &settings::FileSettings, fmt: Format) -> CliResult {
    let base = file.postproc(&a.overrides).map_err(CliError::Usage)?;
    let space = match &a.space {
        Some(p) => read_space(p, &base)?,
        None => SearchSpace::default(),
    };
    let ds = read_input(&a.input)?.ds;
    let result = grid_search(&ds, &space, &base)?;
    let table = render_table_csv(&result);
    let c = &result.best_config;
    let best = format!(
        "best: score_threshold={} dup_iou_threshold={} ellipse_shrink={} laplace_ci={} objective={}",
        c.score_threshold, c.dup_iou_threshold, c.ellipse_shrink, c.laplace_ci, result.objective
    );
    match (&a.out, fmt) {
        (Some(p), _) => {
            std::fs::write(p, &table).map_err(|e| CliError::Domain(format!("{}: {e}", p.display())))?;
            match fmt {
                Format::Text => println!("{best}"),
                Format::Json => println!("{}", serde_json::to_string_pretty(&result).expect("serializes")),
            }
        }
        (None, Format::Text) => {
            eprintln!("{best}");
            print!("{table}");
        }
        (None, Format::Json) => println!("{}", serde_json::to_string_pretty(&result).expect("serializes")),
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    id: String,
    triplicates: Vec<TriplicateGroup>,
}

fn export(a: ExportArgs, fmt: Format) -> CliResult {
    let ds = read_input(&a.input)?.ds;
    let spec: ExperimentFile = serde_json::from_str(&io::read_text(&a.experiment)?)
        .map_err(|e| CliError::Domain(format!("{}: {e}", a.experiment.display())))?;
    let exp = Experiment {
        id: spec.id,
        triplicates: spec.triplicates,
        created_at: chrono_epoch(),
    };
    match export_experiment(&exp, &ds, a.level) {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("{w}");
            }
            match fmt {
                Format::Text => print!("{}", export_csv(&report)),
                Format::Json => println!("{}", serde_json::to_string_pretty(&report).expect("serializes")),
            }
            Ok(())
        }
        Err(ExportError::Blocked(diags)) => {
            for d in &diags {
                eprintln!("{d}");
            }
            Err(CliError::Domain(format!("experiment {} cannot be exported", exp.id)))
        }
        Err(e) => Err(CliError::domain(e)),
    }
}

fn chrono_epoch() -> cfu_core::store::Timestamp {
    std::time::UNIX_EPOCH.into()
}

fn synth(a: SynthArgs, seed: u64) -> CliResult {
    if a.images == 0 {
        return Err(CliError::Usage("--images must be at least 1".into()));
    }
    let mut ds = Dataset { name: format!("synth-{seed}"), ..Default::default() };
    let mut planted: BTreeMap<InstanceId, ExclusionReason> = BTreeMap::new();
    let mut images = Vec::new();
    for k in 1..=a.images {
        let defaults = SynthConfig::default();
        let cfg = SynthConfig {
            seed: seed.wrapping_add((k - 1) << 32),
            image_id: k,
            width: a.width.unwrap_or(defaults.width),
            height: a.height.unwrap_or(defaults.height),
            n_colonies: a.n_colonies.unwrap_or(defaults.n_colonies),
            attach_dish: a.attach_dish,
            perturbation: if a.clean { Perturbation::none() } else { defaults.perturbation },
            split: a.split,
            ..defaults
        };
        let case = generate_case(&cfg)?;
        ds.images.extend(case.dataset.images);
        ds.ground_truth.extend(case.dataset.ground_truth);
        ds.predictions.extend(case.dataset.predictions);
        planted.extend(case.planted);
        images.push((ImageId(k), case.image));
    }
    io::write_synth(&a.out, &ds, &images, &planted)?;
    println!("{}", a.out.display());
    Ok(())
}

fn serve(a: ServeArgs, file: &settings::FileSettings) -> CliResult {
    let bind = a.bind.or_else(|| file.server.bind.clone()).unwrap_or_else(|| settings::DEFAULT_BIND.into());
    let dir = data_dir(a.data_dir, file);
    let config = cfu_server::ServiceConfig {
        postproc: file.postproc(&PostProcOverrides::default()).map_err(CliError::Usage)?,
        eval: file.eval().map_err(CliError::Usage)?,
    };
    let store = Store::open(&dir)?;
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .try_init();
    let rt = tokio::runtime::Runtime::new().map_err(CliError::domain)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .map_err(|e| CliError::Domain(format!("cannot bind {bind}: {e}")))?;
        let addr = listener.local_addr().map_err(CliError::domain)?;
        eprintln!("serving {} on http://{addr}/v1", dir.display());
        cfu_server::serve(listener, cfu_server::AppState::new(store, config)).await.map_err(CliError::domain)
    })
}
