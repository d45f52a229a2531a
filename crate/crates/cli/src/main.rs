//! Operator-facing pipeline driver: data synthesis, training, single-image
//! generation, evaluation, and training-set-size ablations.
//!
//! Exit codes: 0 on success, 2 for usage errors (bad flags or configuration
//! caught before any compute), 1 for runtime failures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use sketchfcn::data::{
    crop_center, load_dataset, load_image, save_pgm, save_ppm, synth_pairs, to_grayscale,
    write_manifest, Split,
};
use sketchfcn::evaluation::{
    cms, evaluate_verification, mprl_report, pseudo_sketches, CmsReport, MprlReport, MPRL_SCALES,
};
use sketchfcn::loss::LossConfig;
use sketchfcn::network::{
    builtin_spec, forward, load_model, save_model, Activation, LayerSpec, NetworkSpec,
    BUILTIN_SPEC_NAMES,
};
use sketchfcn::tensor::Tensor;
use sketchfcn::training::{train, LossRecord, TrainConfig};

#[derive(Parser)]
#[command(name = "sketchfcn", version, about = "Photo-to-sketch generation with a fully convolutional network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic photo-sketch dataset on disk.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of pairs (>= 1).
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        count: u32,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a network on a manifest dataset.
    Train(TrainArgs),
    /// Generate one pseudo-sketch from a photo.
    Generate {
        #[arg(long)]
        model: PathBuf,
        /// Input photo (binary PPM).
        #[arg(long)]
        photo: PathBuf,
        /// Output sketch (binary PGM).
        #[arg(long)]
        out: PathBuf,
        /// Report the forward-pass wall time in milliseconds.
        #[arg(long)]
        time: bool,
    },
    /// Score CMS and MPRL on a manifest dataset.
    Evaluate(EvaluateArgs),
    /// Training-set-size sweep with and without the regularizer.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Builtin name (sr, small, medium, large) or a path to an
    /// architecture file.
    #[arg(long, default_value = "medium")]
    arch: String,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 1e-11)]
    lr: f64,
    #[arg(long, default_value_t = 1e4)]
    alpha: f64,
    #[arg(long, default_value_t = 1e9)]
    lambda: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train on raw RGB without the XY coordinate channels.
    #[arg(long)]
    no_xy: bool,
    #[arg(long)]
    out_model: PathBuf,
    /// Loss log destination (`iter,L_gen,L_discrim,L_total` per line).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated CMS ranks.
    #[arg(long, default_value = "1,3,5,10")]
    ranks: String,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Score the grayscale-photo baseline instead of a model.
    #[arg(long)]
    baseline_grayscale: bool,
    /// Sanity mode: the gallery is the queries themselves (rank-1 = 100).
    #[arg(long)]
    identity_gallery: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated training-subset sizes.
    #[arg(long)]
    subset_sizes: String,
    /// Run only the regularized setting.
    #[arg(long)]
    with_alpha: bool,
    /// Run only the unregularized setting.
    #[arg(long)]
    without_alpha: bool,
    #[arg(long, default_value = "medium")]
    arch: String,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 1e-11)]
    lr: f64,
    #[arg(long, default_value_t = 1e4)]
    alpha: f64,
    #[arg(long, default_value_t = 1e9)]
    lambda: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_xy: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<sketchfcn::Error> for CliError {
    fn from(err: sketchfcn::Error) -> Self {
        CliError::Runtime(err.into())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(err: anyhow::Error) -> Self {
        CliError::Runtime(err)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { seed, count, out_dir } => cmd_synth(seed, count as usize, &out_dir),
        Command::Train(args) => cmd_train(&args),
        Command::Generate { model, photo, out, time } => cmd_generate(&model, &photo, &out, time),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Ablate(args) => cmd_ablate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_synth(seed: u64, count: usize, out_dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("creating {}: {e}", out_dir.display())))?;
    let dataset = synth_pairs(seed, count)?;
    let mut records = Vec::with_capacity(count);
    for (idx, pair) in dataset.pairs().iter().enumerate() {
        let photo_name = format!("photo-{:04}.ppm", idx + 1);
        let sketch_name = format!("sketch-{:04}.pgm", idx + 1);
        save_ppm(out_dir.join(&photo_name), &pair.photo)?;
        save_pgm(out_dir.join(&sketch_name), &pair.sketch)?;
        records.push((photo_name, sketch_name, pair.identity.clone()));
    }
    write_manifest(out_dir.join("manifest.txt"), &records)?;
    println!(
        "wrote {count} pairs and manifest.txt to {}",
        out_dir.display()
    );
    Ok(())
}

/// Resolve `--arch`: a builtin name or a layer-list file with
/// `kernel,out_channels,activation` lines (activation `relu` or `none`,
/// `#` comments allowed).
fn resolve_arch(arch: &str, no_xy: bool) -> Result<NetworkSpec, CliError> {
    let in_channels = if no_xy { 3 } else { 5 };
    if BUILTIN_SPEC_NAMES.contains(&arch) {
        let spec = builtin_spec(arch).map_err(|e| usage(e.to_string()))?;
        return spec.with_in_channels(in_channels).map_err(|e| usage(e.to_string()));
    }
    let path = Path::new(arch);
    if !path.exists() {
        return Err(usage(format!(
            "--arch {arch:?} is neither a builtin ({}) nor an existing file",
            BUILTIN_SPEC_NAMES.join(", ")
        )));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("reading {arch}: {e}")))?;
    let mut layers = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |why: String| usage(format!("{arch}:{}: {why}", lineno + 1));
        if fields.len() != 3 {
            return Err(bad(format!(
                "expected kernel,out_channels,activation — got {} fields",
                fields.len()
            )));
        }
        let kernel: usize = fields[0].parse().map_err(|_| bad(format!("bad kernel {:?}", fields[0])))?;
        let out_channels: usize = fields[1]
            .parse()
            .map_err(|_| bad(format!("bad channel count {:?}", fields[1])))?;
        let activation = match fields[2] {
            "relu" => Activation::Relu,
            "none" => Activation::None,
            other => return Err(bad(format!("unknown activation {other:?} (relu or none)"))),
        };
        layers.push(LayerSpec::new(kernel, out_channels, activation));
    }
    NetworkSpec::new(in_channels, layers).map_err(|e| usage(format!("{arch}: {e}")))
}

fn render_log(header: &str, history: &[LossRecord]) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "{header}");
    let _ = writeln!(text, "iter,L_gen,L_discrim,L_total");
    for record in history {
        let _ = writeln!(
            text,
            "{},{},{},{}",
            record.iteration, record.generative, record.discriminative, record.total
        );
    }
    text
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let spec = resolve_arch(&args.arch, args.no_xy)?;
    let loss = LossConfig::new(args.alpha, args.lambda).map_err(|e| usage(e.to_string()))?;
    let cfg = TrainConfig {
        learning_rate: args.lr,
        iterations: args.iters,
        batch_size: args.batch,
        loss,
        seed: args.seed,
        checkpoint_every: args.checkpoint_every,
        checkpoint_path: args.checkpoint.clone(),
    };

    let dataset = load_dataset(&args.manifest, Split::Train)?;
    cfg.validate(dataset.len()).map_err(|e| usage(e.to_string()))?;

    let header = format!(
        "# arch={} in_channels={} alpha={} lambda={} lr={} batch={} iters={} seed={}",
        args.arch,
        spec.in_channels(),
        args.alpha,
        args.lambda,
        args.lr,
        args.batch,
        args.iters,
        args.seed
    );
    println!("{header}");

    let (net, history) = train(&dataset, &spec, &cfg)?;
    save_model(&net, &args.out_model)?;
    if let Some(log_path) = &args.log {
        std::fs::write(log_path, render_log(&header, &history))
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("writing {}: {e}", log_path.display())))?;
    }
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!(
            "iteration {}: L_total={}  ->  iteration {}: L_total={}",
            first.iteration, first.total, last.iteration, last.total
        );
    }
    println!("model written to {}", args.out_model.display());
    Ok(())
}

fn cmd_generate(model: &Path, photo: &Path, out: &Path, time: bool) -> Result<(), CliError> {
    let net = load_model(model)?;
    let raw = load_image(photo)?;
    if raw.channels() != 3 {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "{}: generation needs a color photo (3 channels), got {:?}",
            photo.display(),
            raw.shape()
        )));
    }
    let input = match net.spec().in_channels() {
        5 => sketchfcn::data::add_xy_channels(&raw)?,
        3 => raw,
        other => {
            return Err(CliError::Runtime(anyhow::anyhow!(
                "model wants {other} input channels; photo pipelines support 3 or 5"
            )))
        }
    };
    let start = Instant::now();
    let (sketch, _) = forward(&net, &input)?;
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    save_pgm(out, &sketch.clamp_values(0.0, 255.0))?;
    let (c, h, w) = sketch.shape();
    println!("wrote {}x{}x{} sketch to {}", c, h, w, out.display());
    if time {
        println!("forward_ms={elapsed_ms:.3}");
    }
    Ok(())
}

fn parse_ranks(text: &str) -> Result<Vec<usize>, CliError> {
    let ranks: Result<Vec<usize>, _> = text.split(',').map(|s| s.trim().parse()).collect();
    match ranks {
        Ok(r) if !r.is_empty() => Ok(r),
        _ => Err(usage(format!("bad rank list {text:?}; want e.g. 1,3,5,10"))),
    }
}

fn render_report(cms_report: &CmsReport, mprl: &MprlReport) -> String {
    let mut text = String::from("# cms: rank,score\n");
    for (rank, score) in cms_report.ranks.iter().zip(&cms_report.scores) {
        let _ = writeln!(text, "{rank},{score}");
    }
    text.push_str("# mprl per pair: identity,prl_0.5,prl_1,prl_2\n");
    for (identity, triple) in &mprl.per_pair {
        let _ = writeln!(text, "{identity},{},{},{}", triple[0], triple[1], triple[2]);
    }
    text.push_str("# mprl mean: scale,mean_prl\n");
    for (scale, mean) in MPRL_SCALES.iter().zip(&mprl.means) {
        let _ = writeln!(text, "{scale},{mean}");
    }
    text
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let ranks = parse_ranks(&args.ranks)?;
    let modes = args.baseline_grayscale as u8 + args.identity_gallery as u8 + args.model.is_some() as u8;
    if modes != 1 {
        return Err(usage(
            "pick exactly one of --model, --baseline-grayscale, --identity-gallery",
        ));
    }
    let dataset = load_dataset(&args.manifest, Split::Test)?;
    for &rank in &ranks {
        if rank == 0 || rank > dataset.len() {
            return Err(usage(format!(
                "rank {rank} is outside the gallery size {}",
                dataset.len()
            )));
        }
    }

    // Pseudo-sketches according to the selected mode.
    let pseudo: Vec<Tensor<f32>> = if args.identity_gallery {
        dataset.pairs().iter().map(|p| p.sketch.clone()).collect()
    } else if args.baseline_grayscale {
        dataset
            .pairs()
            .iter()
            .map(|p| {
                let gray = to_grayscale(&p.photo)?;
                crop_center(&gray, p.sketch.height(), p.sketch.width())
            })
            .collect::<Result<_, _>>()?
    } else {
        let net = load_model(args.model.as_ref().expect("mode checked"))?;
        pseudo_sketches(&net, &dataset)?
    };

    let queries: Vec<(Tensor<f32>, String)> = dataset
        .pairs()
        .iter()
        .map(|p| (p.sketch.clone(), p.identity.clone()))
        .collect();
    let gallery: Vec<(Tensor<f32>, String)> = dataset
        .pairs()
        .iter()
        .zip(&pseudo)
        .map(|(p, s)| (s.clone(), p.identity.clone()))
        .collect();
    let cms_report = cms(&queries, &gallery, &ranks)?;
    let mprl = mprl_report(
        dataset.pairs().iter().map(|p| (&p.sketch, p.identity.as_str())),
        pseudo.iter(),
    )?;

    let text = render_report(&cms_report, &mprl);
    print!("{text}");
    if let Some(report_path) = &args.report {
        std::fs::write(report_path, &text)
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("writing {}: {e}", report_path.display())))?;
        println!("report written to {}", report_path.display());
    }
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<(), CliError> {
    let sizes: Result<Vec<usize>, _> = args
        .subset_sizes
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect();
    let sizes = match sizes {
        Ok(s) if !s.is_empty() => s,
        _ => return Err(usage(format!("bad subset sizes {:?}", args.subset_sizes))),
    };
    // Neither flag selects both settings.
    let alphas: Vec<f64> = match (args.with_alpha, args.without_alpha) {
        (true, false) => vec![args.alpha],
        (false, true) => vec![0.0],
        _ => vec![args.alpha, 0.0],
    };
    if alphas.contains(&0.0) && args.alpha == 0.0 && args.with_alpha {
        return Err(usage("--with-alpha needs a nonzero --alpha"));
    }

    let spec = resolve_arch(&args.arch, args.no_xy)?;
    let dataset = load_dataset(&args.manifest, Split::Train)?;
    for &size in &sizes {
        if size == 0 || size > dataset.len() {
            return Err(usage(format!(
                "subset size {size} is outside the dataset size {}",
                dataset.len()
            )));
        }
    }

    let mut report = String::from("# ablation: subset_size,alpha,rank1\n");
    for &size in &sizes {
        for &alpha in &alphas {
            let batch = args.batch.min(size);
            let loss = LossConfig::new(alpha, args.lambda).map_err(|e| usage(e.to_string()))?;
            let cfg = TrainConfig {
                learning_rate: args.lr,
                iterations: args.iters,
                batch_size: batch,
                loss,
                seed: args.seed,
                checkpoint_every: 0,
                checkpoint_path: None,
            };
            let subset = dataset.take(size)?;
            cfg.validate(subset.len()).map_err(|e| usage(e.to_string()))?;
            let (net, _) = train(&subset, &spec, &cfg)?;
            let cms_report = evaluate_verification(&net, &dataset, &[1])?;
            let rank1 = cms_report.scores[0];
            let _ = writeln!(report, "{size},{alpha},{rank1}");
            println!("subset={size} alpha={alpha} rank1={rank1}");
        }
    }
    if let Some(report_path) = &args.report {
        std::fs::write(report_path, &report)
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("writing {}: {e}", report_path.display())))?;
        println!("report written to {}", report_path.display());
    }
    Ok(())
}
