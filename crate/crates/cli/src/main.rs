//! `oadg` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration error, 3 acceptance-gate failure,
//! 4 IO or data error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oadg::config::RunConfig;
use oadg::corruptions::{corrupt_dataset, CorruptionKind, CorruptionSpec};
use oadg::dataset::{load_dataset, save_dataset, save_gray};
use oadg::detector::{evaluate, generate_splits, penultimate_by_class, train, Detector, Mode};
use oadg::diagnostics::gradient_checks;
use oadg::metrics::{feature_correlation, EvalReport};
use oadg::oamix::oamix_with_saliency;
use oadg::rng::{self, tag};
use oadg::saliency::{object_saliency_score, spectral_residual_map};
use oadg::{Dataset, Error, SampleRecord};

#[derive(Parser)]
#[command(name = "oadg", version, about = "Object-aware domain generalization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic shapes dataset (train and test splits)
    Synth(SynthArgs),
    /// Write OA-Mix views of a dataset with a mixplan.jsonl audit log
    Augment(AugmentArgs),
    /// Write spectral-residual saliency maps and per-box scores
    Saliency(SaliencyArgs),
    /// Write corrupted copies of a dataset as OUT/<kind>/<severity>/
    Corrupt(CorruptArgs),
    /// Train a detector in baseline or oadg mode
    Train(TrainArgs),
    /// Evaluate a detector on clean and corrupted datasets
    Eval(EvalArgs),
    /// Cross-domain class feature correlation as CSV
    Featcorr(FeatcorrArgs),
    /// Finite-difference checks of the loss gradients
    Gradcheck(GradcheckArgs),
    /// Full pipeline: synth, train both modes, corrupt, evaluate, compare
    Repro(ReproArgs),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (1 is the reference mode; results do not depend on it)
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory; receives train/ and test/
    #[arg(long)]
    out: PathBuf,
    /// Number of training scenes
    #[arg(long)]
    train: Option<usize>,
    /// Number of test scenes
    #[arg(long)]
    test: Option<usize>,
    /// Global seed
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AugmentArgs {
    /// Input dataset directory
    #[arg(long)]
    dataset: PathBuf,
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Global seed
    #[arg(long)]
    seed: Option<u64>,
    /// OA-Mix views written per input image
    #[arg(long, default_value_t = 1)]
    samples_per_image: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SaliencyArgs {
    /// Input dataset directory
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for <id>.png maps and scores.jsonl
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CorruptArgs {
    /// Input dataset directory
    #[arg(long)]
    dataset: PathBuf,
    /// Output root
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated corruption kinds, or "all"
    #[arg(long, default_value = "all")]
    kinds: String,
    /// Severities as "1..5" or a comma-separated list
    #[arg(long, default_value = "1..5")]
    severities: String,
    /// Global seed
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TrainArgs {
    /// Training mode: baseline or oadg
    #[arg(long)]
    mode: String,
    /// Output weights file
    #[arg(long, default_value = "params.json")]
    out: PathBuf,
    /// Output training log (CSV)
    #[arg(long, default_value = "log.csv")]
    log: PathBuf,
    /// Training dataset directory (default: synthesize from the config)
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Held-out dataset for the per-epoch clean mAP column
    #[arg(long)]
    heldout: Option<PathBuf>,
    /// Global seed
    #[arg(long)]
    seed: Option<u64>,
    /// Number of epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Contrastive temperature tau
    #[arg(long)]
    tau: Option<f64>,
    /// OA-Loss weight lambda
    #[arg(long)]
    lambda: Option<f64>,
    /// Contrastive weight gamma
    #[arg(long)]
    gamma: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained weights
    #[arg(long)]
    params: PathBuf,
    /// Clean dataset directory
    #[arg(long)]
    clean: PathBuf,
    /// Root of corrupted datasets laid out as <kind>/<severity>/
    #[arg(long)]
    corrupted: PathBuf,
    /// Output report (JSON); the P matrix is written next to it as CSV
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct FeatcorrArgs {
    /// Trained weights
    #[arg(long)]
    params: PathBuf,
    /// Domain A dataset directory
    #[arg(long)]
    clean: PathBuf,
    /// Domain B dataset directory
    #[arg(long)]
    corrupted: PathBuf,
    /// Output CSV
    #[arg(long, default_value = "featcorr.csv")]
    out: PathBuf,
    /// Feature vectors kept per class and domain
    #[arg(long, default_value_t = 200)]
    max_per_class: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the random batches
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random batches per loss kernel
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReproArgs {
    /// Output root; the bundle goes to OUT/repro/
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Global seed
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

/// Failure of a subcommand, carrying its exit code.
enum Failure {
    Error(Error),
    Gate(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(Error::Io(e))
    }
}

type Outcome = Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::UnknownKind(_) => 2,
        _ => 4,
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    match &common.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn set_jobs(jobs: usize) -> Result<(), Error> {
    if jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text + "\n")?;
    Ok(())
}

fn synth(args: SynthArgs) -> Outcome {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.train {
        cfg.synth.train = n;
    }
    if let Some(n) = args.test {
        cfg.synth.test = n;
    }
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.validate()?;
    let (train_set, test_set) = generate_splits(&cfg.synth, cfg.seed);
    save_dataset(&train_set, &args.out.join("train"))?;
    save_dataset(&test_set, &args.out.join("test"))?;
    println!("wrote {} train and {} test scenes to {}", train_set.samples.len(), test_set.samples.len(), args.out.display());
    Ok(())
}

fn augment(args: AugmentArgs) -> Outcome {
    let mut cfg = load_config(&args.common)?;
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.validate()?;
    if args.samples_per_image == 0 {
        return Err(Error::Config("--samples-per-image must be at least 1".into()).into());
    }
    let data = load_dataset(&args.dataset)?;
    fs::create_dir_all(&args.out)?;
    let mut plans = fs::File::create(args.out.join("mixplan.jsonl"))?;
    let mut samples = Vec::new();
    for (i, sample) in data.samples.iter().enumerate() {
        let map = spectral_residual_map(&sample.image, &cfg.oamix.saliency)?;
        for k in 0..args.samples_per_image {
            let mut r = rng::stream(cfg.seed, &[tag::AUGMENT, i as u64, k as u64]);
            let out = oamix_with_saliency(sample, &map, &mut r, &cfg.oamix)?;
            let id = format!("{}_oamix{k}", sample.id);
            let line = serde_json::json!({ "id": id, "source": sample.id, "plan": out.plan });
            writeln!(plans, "{line}")?;
            samples.push(SampleRecord { id, image: out.image, annotations: out.annotations });
        }
    }
    let n = samples.len();
    save_dataset(&Dataset { classes: data.classes, samples }, &args.out)?;
    println!("wrote {n} OA-Mix views to {}", args.out.display());
    Ok(())
}

fn saliency(args: SaliencyArgs) -> Outcome {
    let cfg = load_config(&args.common)?;
    let data = load_dataset(&args.dataset)?;
    fs::create_dir_all(&args.out)?;
    let mut scores = fs::File::create(args.out.join("scores.jsonl"))?;
    for sample in &data.samples {
        let map = spectral_residual_map(&sample.image, &cfg.oamix.saliency)?;
        save_gray(&map.values, map.width, map.height, &args.out.join(format!("{}.png", sample.id)))?;
        let boxes = sample
            .annotations
            .iter()
            .map(|a| Ok(serde_json::json!({ "bbox": a.bbox, "class_id": a.class_id, "score": object_saliency_score(&map, &a.bbox)? })))
            .collect::<Result<Vec<_>, Error>>()?;
        writeln!(scores, "{}", serde_json::json!({ "id": sample.id, "boxes": boxes }))?;
    }
    println!("wrote {} saliency maps to {}", data.samples.len(), args.out.display());
    Ok(())
}

fn parse_kinds(text: &str) -> Result<Vec<CorruptionKind>, Error> {
    if text == "all" {
        return Ok(CorruptionKind::ALL.to_vec());
    }
    text.split(',').map(|k| k.trim().parse()).collect()
}

fn parse_severities(text: &str) -> Result<Vec<u8>, Error> {
    let bad = || Error::Config(format!("cannot parse severities {text:?}"));
    let list: Vec<u8> = match text.split_once("..") {
        Some((a, b)) => {
            let (a, b): (u8, u8) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            (a..=b).collect()
        }
        None => text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?,
    };
    if list.is_empty() || list.iter().any(|s| !(1..=5).contains(s)) {
        return Err(Error::Config(format!("severities must lie in 1..=5, got {text:?}")));
    }
    Ok(list)
}

fn corrupt(args: CorruptArgs) -> Outcome {
    let mut cfg = load_config(&args.common)?;
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.validate()?;
    let kinds = parse_kinds(&args.kinds)?;
    let severities = parse_severities(&args.severities)?;
    let data = load_dataset(&args.dataset)?;
    for &kind in &kinds {
        for &severity in &severities {
            let corrupted = corrupt_dataset(&data, CorruptionSpec::new(kind, severity)?, cfg.seed, &cfg.corruption)?;
            save_dataset(&corrupted, &args.out.join(kind.name()).join(severity.to_string()))?;
        }
    }
    println!("wrote {} corrupted copies to {}", kinds.len() * severities.len(), args.out.display());
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Outcome {
    let mut cfg = load_config(&args.common)?;
    let mode: Mode = args.mode.parse()?;
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    cfg.hyper.tau = args.tau.unwrap_or(cfg.hyper.tau);
    cfg.hyper.lambda = args.lambda.unwrap_or(cfg.hyper.lambda);
    cfg.hyper.gamma = args.gamma.unwrap_or(cfg.hyper.gamma);
    cfg.validate()?;
    let (train_set, heldout) = match &args.dataset {
        Some(dir) => (load_dataset(dir)?, args.heldout.as_deref().map(load_dataset).transpose()?),
        None => {
            let (tr, te) = generate_splits(&cfg.synth, cfg.seed);
            (tr, Some(te))
        }
    };
    let (detector, log) = train(&train_set, heldout.as_ref(), mode, cfg.seed, &cfg.train, &cfg.hyper, &cfg.oamix)?;
    detector.save(&args.out)?;
    fs::write(&args.log, log.to_csv())?;
    if let Some(last) = log.epochs.last() {
        println!("{mode}: final loss {:.4}, clean mAP {:?}", last.loss.total, last.clean_map);
    }
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Outcome {
    let cfg = load_config(&args.common)?;
    let detector = Detector::load(&args.params)?;
    let thr = cfg.train.score_threshold;
    let clean_map = evaluate(&detector, &load_dataset(&args.clean)?, thr)?.map;
    let mut kinds = Vec::new();
    let mut severities: Option<Vec<u8>> = None;
    let mut p = Vec::new();
    for kind in CorruptionKind::ALL {
        let dir = args.corrupted.join(kind.name());
        if !dir.is_dir() {
            continue;
        }
        let mut found: Vec<u8> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok()?.file_name().to_str()?.parse().ok())
            .collect();
        found.sort_unstable();
        if severities.get_or_insert_with(|| found.clone()) != &found {
            return Err(Error::IncompleteMatrix(format!("{} has severities {found:?}", kind.name())).into());
        }
        let row = found
            .iter()
            .map(|s| Ok(evaluate(&detector, &load_dataset(&dir.join(s.to_string()))?, thr)?.map))
            .collect::<Result<Vec<f64>, Error>>()?;
        kinds.push(kind.name().to_string());
        p.push(row);
    }
    let report = EvalReport::new(kinds, severities.unwrap_or_default(), p, clean_map)?;
    write_json(&report, &args.out)?;
    fs::write(args.out.with_extension("csv"), report.matrix_csv())?;
    println!("clean mAP {:.4}, mPC {:.4}", report.clean_map, report.mpc);
    Ok(())
}

fn featcorr(args: FeatcorrArgs) -> Outcome {
    let detector = Detector::load(&args.params)?;
    let a = penultimate_by_class(&detector, &load_dataset(&args.clean)?, args.max_per_class)?;
    let b = penultimate_by_class(&detector, &load_dataset(&args.corrupted)?, args.max_per_class)?;
    let m = feature_correlation(&a, &b)?;
    let mut labels = detector.classes.clone();
    labels.push("background".into());
    fs::write(&args.out, m.to_csv(&labels))?;
    println!("wrote {}x{} correlation matrix to {}", m.size, m.size, args.out.display());
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Outcome {
    let report = gradient_checks(args.seed, args.trials)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidArgument(e.to_string()))?);
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Gate("gradient check exceeded tolerance".into()))
    }
}

fn repro_cmd(args: ReproArgs) -> Outcome {
    let mut cfg = load_config(&args.common)?;
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    let report = oadg::pipeline::repro(&cfg, &args.out)?;
    for g in &report.gates {
        println!("{}: {:.4} (threshold {:.4}) {}", g.name, g.value, g.threshold, if g.pass { "PASS" } else { "FAIL" });
    }
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Gate("acceptance gates failed".into()))
    }
}

fn run(cli: Cli) -> Outcome {
    let jobs = match &cli.command {
        Command::Synth(a) => a.common.jobs,
        Command::Augment(a) => a.common.jobs,
        Command::Saliency(a) => a.common.jobs,
        Command::Corrupt(a) => a.common.jobs,
        Command::Train(a) => a.common.jobs,
        Command::Eval(a) => a.common.jobs,
        Command::Featcorr(a) => a.common.jobs,
        Command::Gradcheck(a) => a.common.jobs,
        Command::Repro(a) => a.common.jobs,
    };
    set_jobs(jobs)?;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Augment(a) => augment(a),
        Command::Saliency(a) => saliency(a),
        Command::Corrupt(a) => corrupt(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Featcorr(a) => featcorr(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Repro(a) => repro_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Gate(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
