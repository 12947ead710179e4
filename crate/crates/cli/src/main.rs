use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use reid_degrade::bench::{run_experiment_grid, BenchConfig, GridReport};
use reid_degrade::degrade::{degrade_batch, DegradationConfig, PipelineKind, JPEG_ENCODER_ID, PIPELINE_SIDE};
use reid_degrade::embfile::EmbeddingFile;
use reid_degrade::image::Image;
use reid_degrade::kernel::{sample_blur_spec, BlurFamily};
use reid_degrade::resample::{resize, ResampleMethod};
use reid_degrade::retrieval::{search, stratified_report, EmbeddingMatrix, MetricsReport, StratumKey, DEFAULT_KS};
use reid_degrade::rng::seeded;
use reid_degrade::split::{read_manifest, split, validate_split, ManifestRecord, SplitAssignment, SplitConfig};
use reid_degrade::{Error, Result};

const THREADS_ENV: &str = "DEGRADE_REID_THREADS";
const CHUNK: usize = 32;
const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

#[derive(Parser, Debug)]
#[command(name = "reid-degrade", about = "Seeded degradation pipelines and re-identification evaluation")]
struct Cli {
    /// Print progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a blur kernel and print its weights.
    KernelDump(KernelDumpArgs),
    /// Degrade a directory or manifest of images.
    Degrade(DegradeArgs),
    /// Split a manifest into training, database and query roles.
    Split(SplitArgs),
    /// Rank database embeddings for each query and report retrieval metrics.
    Eval(EvalArgs),
    /// Run the synthetic training and evaluation grid.
    Bench(BenchArgs),
    /// Export a report as CSV for plotting.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct Workers {
    /// Worker threads; falls back to DEGRADE_REID_THREADS, then to the core count.
    #[arg(long)]
    workers: Option<usize>,
}

impl Workers {
    fn resolve(&self) -> Result<usize> {
        let n = match self.workers {
            Some(n) => n,
            None => match std::env::var(THREADS_ENV) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parameter(format!("{THREADS_ENV}=`{v}` is not a worker count")))?,
                Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
            },
        };
        if n == 0 {
            return Err(Error::Parameter("workers must be positive".into()));
        }
        Ok(n)
    }
}

#[derive(Args, Debug)]
struct KernelDumpArgs {
    #[arg(long)]
    family: BlurFamily,
    #[arg(long)]
    seed: u64,
    /// Parameter overrides, e.g. `sigma_x=1.5,theta=0`.
    #[arg(long, value_delimiter = ',')]
    spec: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DegradeArgs {
    #[arg(long)]
    pipeline: PipelineKind,
    #[arg(long)]
    seed: u64,
    /// Image directory, or a manifest (.csv / .jsonl) whose paths are relative to it.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// TOML file narrowing the sampling ranges.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    workers: Workers,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    time_aware: bool,
    #[arg(long)]
    unseen_frac: Option<f64>,
    #[arg(long)]
    query_frac_seen: Option<f64>,
    #[arg(long)]
    query_frac_unseen: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the validation report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    assignment: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    strata: Vec<StratumKey>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    workers: Workers,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// TOML benchmark configuration; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    workers: Workers,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// An `eval` report or a `bench` grid.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::File { path: path.into(), source: e })
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::File { path: dir.into(), source: e })?;
    }
    fs::write(path, bytes).map_err(|e| Error::File { path: path.into(), source: e })
}

fn kernel_dump(args: &KernelDumpArgs) -> Result<String> {
    let mut spec = sample_blur_spec(args.family, &mut seeded(args.seed));
    for pair in args.spec.iter().filter(|p| !p.trim().is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Parameter(format!("spec entry `{pair}` is not key=value")))?;
        spec.set_param(k.trim(), v)?;
    }
    let kernel = spec.kernel()?;
    let mut out = format!("# family={} side={} | {}\n", spec.family(), kernel.side(), spec.describe());
    for row in kernel.weights().chunks(kernel.side()) {
        let cells: Vec<String> = row.iter().map(|w| w.to_string()).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// `(image_id, path)` pairs from a directory listing or a manifest.
fn degrade_inputs(input: &Path) -> Result<Vec<(String, PathBuf)>> {
    if input.is_dir() {
        let entries = fs::read_dir(input).map_err(|e| Error::File { path: input.into(), source: e })?;
        let mut items = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::File { path: input.into(), source: e })?.path();
            let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            if ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
                let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                items.push((id, path));
            }
        }
        items.sort();
        if let Some(w) = items.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Validation(format!("two input files share the image id `{}`", w[0].0)));
        }
        return Ok(items);
    }
    let manifest = read_manifest(input)?;
    let base = input.parent().unwrap_or(Path::new("."));
    manifest
        .into_iter()
        .map(|r: ManifestRecord| {
            if r.path.is_empty() {
                return Err(Error::Validation(format!("manifest row `{}` has no path", r.image_id)));
            }
            Ok((r.image_id, base.join(r.path)))
        })
        .collect()
}

fn load_for_pipeline(path: &Path) -> Result<Image> {
    let img = Image::load(path)?;
    if img.height() == PIPELINE_SIDE && img.width() == PIPELINE_SIDE {
        Ok(img)
    } else {
        resize(&img, PIPELINE_SIDE, PIPELINE_SIDE, ResampleMethod::Bicubic)
    }
}

fn degrade(args: &DegradeArgs, verbose: u8) -> Result<()> {
    let config = match &args.config {
        Some(p) => DegradationConfig::from_toml(&read_text(p)?)?,
        None => DegradationConfig::default(),
    };
    let workers = args.workers.resolve()?;
    let inputs = degrade_inputs(&args.input)?;
    let mut traces = String::new();
    for (n, chunk) in inputs.chunks(CHUNK).enumerate() {
        let items = chunk
            .iter()
            .map(|(id, path)| load_for_pipeline(path).map(|img| (id.clone(), img)))
            .collect::<Result<Vec<_>>>()?;
        let outputs = degrade_batch(&config, &items, args.pipeline, args.seed, workers)?;
        for ((id, _), (img, trace)) in items.iter().zip(outputs) {
            let path = args.output.join(format!("{id}.png"));
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::File { path: dir.into(), source: e })?;
            }
            img.save_png(&path)?;
            traces.push_str(&trace.to_json_line());
            traces.push('\n');
        }
        if verbose > 0 {
            eprintln!("degraded {}/{}", (n * CHUNK + chunk.len()), inputs.len());
        }
    }
    if let Some(t) = &args.trace {
        write_file(t, traces)?;
    }
    Ok(())
}

fn split_cmd(args: &SplitArgs) -> Result<String> {
    let manifest = read_manifest(&args.manifest)?;
    let defaults = SplitConfig::default();
    let config = SplitConfig {
        seed: args.seed,
        time_aware: args.time_aware,
        unseen_id_fraction: args.unseen_frac.unwrap_or(defaults.unseen_id_fraction),
        query_fraction_seen: args.query_frac_seen.unwrap_or(defaults.query_fraction_seen),
        query_fraction_unseen: args.query_frac_unseen.unwrap_or(defaults.query_fraction_unseen),
        ..defaults
    };
    let assignment = split(&manifest, &config)?;
    let report = validate_split(&assignment, &manifest, args.time_aware);
    let mut text = report.to_string();
    for w in &assignment.warnings {
        text.push_str(&format!("warning: {w}\n"));
    }
    write_file(&args.out, assignment.to_jsonl())?;
    if let Some(p) = &args.report {
        write_file(p, &text)?;
    }
    if !report.is_valid() {
        return Err(Error::Validation(format!("split failed validation\n{text}")));
    }
    Ok(text)
}

fn eval(args: &EvalArgs) -> Result<MetricsReport> {
    if args.k.is_empty() || args.k.contains(&0) {
        return Err(Error::Parameter("--k needs positive ranks".into()));
    }
    let queries = EmbeddingMatrix::from_file(&EmbeddingFile::read(&args.query)?)?;
    let database = EmbeddingMatrix::from_file(&EmbeddingFile::read(&args.db)?)?;
    let manifest = read_manifest(&args.manifest)?;
    let assignment = args.assignment.as_deref().map(SplitAssignment::read).transpose()?;
    let max_k = args.k.iter().copied().max().unwrap_or(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers.resolve()?)
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    let results = pool.install(|| search(&queries, &database, database.len()))?;
    stratified_report(&results, &manifest, assignment.as_ref(), &args.strata, &args.k, max_k)
}

fn bench(args: &BenchArgs, verbose: u8) -> Result<GridReport> {
    let mut config = match &args.config {
        Some(p) => BenchConfig::from_toml(&read_text(p)?)?,
        None => BenchConfig::default(),
    };
    config.master_seed = args.seed;
    config.workers = args.workers.resolve()?;
    if verbose > 0 {
        eprintln!(
            "bench: {} identities x {} images, {} training pipelines, {} workers",
            config.n_identities,
            config.images_per_identity,
            config.train_pipelines.len(),
            config.workers
        );
    }
    run_experiment_grid(&config)
}

fn plot(args: &PlotArgs) -> Result<String> {
    let text = read_text(&args.report)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("records").is_some() {
        let grid: GridReport = serde_json::from_value(value)?;
        let mut out = String::from("train_pipeline,query_condition,stratum,n_queries,rank1,rank5,rank10,rank20,map\n");
        for r in &grid.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.train_pipeline, r.query_condition, r.stratum, r.n_queries, r.rank1, r.rank5, r.rank10, r.rank20, r.map
            ));
        }
        return Ok(out);
    }
    let report: MetricsReport = serde_json::from_value(value)?;
    let mut out = String::from("stratum,rank,accuracy\n");
    let mut push = |name: &str, m: &MetricsReport| {
        for (i, a) in m.cmc.iter().enumerate() {
            out.push_str(&format!("{name},{},{a}\n", i + 1));
        }
    };
    push("all", &report);
    for (name, m) in &report.strata {
        push(name, m);
    }
    Ok(out)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::KernelDump(a) => {
            let text = kernel_dump(a)?;
            match &a.out {
                Some(p) => write_file(p, text),
                None => std::io::stdout().write_all(text.as_bytes()).map_err(Error::Io),
            }
        }
        Command::Degrade(a) => degrade(a, cli.verbose),
        Command::Split(a) => {
            let text = split_cmd(a)?;
            print!("{text}");
            Ok(())
        }
        Command::Eval(a) => write_file(&a.out, serde_json::to_string_pretty(&eval(a)?)? + "\n"),
        Command::Bench(a) => write_file(&a.out, bench(a, cli.verbose)?.to_json()),
        Command::Plot(a) => write_file(&a.out, plot(a)?),
    }
}

fn main() -> ExitCode {
    let command = Cli::command().version(format!("{} (jpeg: {JPEG_ENCODER_ID})", env!("CARGO_PKG_VERSION")));
    let cli = match command.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
