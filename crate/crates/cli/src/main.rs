use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rdm_core::diffusion::{Denoiser, DenoiserTrainer, NoiseForm, DEFAULT_BETA, DEFAULT_STEPS};
use rdm_core::entropy::{fit_entropy_model, ChannelEntropyModel, FitConfig, DEFAULT_Q_MAX, DEFAULT_Q_MIN};
use rdm_core::numerics::{streams, Checkpoint, DenoiserConfig, DenoiserParams, SeededRng};
use rdm_core::oracle::{GaussianMixture, PointMixture};
use rdm_core::pipeline::{
    corpus_latents, decode_image, encode_image, eval_sampler, generate_corpus, image_train_config, load_corpus,
    rd_svg, rd_sweep, read_pgm, write_pgm, write_rd_csv, write_sampler_csv, DecodeOptions, SamplerEval, Source,
    COEFFS,
};
use rdm_core::quantizer::QuantScale;

#[derive(Parser)]
#[command(name = "rdm", version, about = "Quantization-as-diffusion image codec toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a corpus of synthetic grayscale textures as PGM files.
    Generate(GenerateArgs),
    /// Fit the per-channel entropy model on a PGM corpus.
    TrainEntropy(TrainEntropyArgs),
    /// Train the q-conditioned block denoiser on a PGM corpus.
    TrainDenoiser(TrainDenoiserArgs),
    /// Compress one PGM image into a bitstream file.
    Encode(EncodeArgs),
    /// Decompress a bitstream file, optionally running reverse steps.
    Decode(DecodeArgs),
    /// Rate-distortion sweep over a corpus and a list of scales.
    RdSweep(RdSweepArgs),
    /// Noise-form and beta ablation of the reverse sampler.
    EvalSampler(EvalSamplerArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    count: usize,
    /// Side length in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainEntropyArgs {
    /// Directory of PGM training images.
    #[arg(long)]
    corpus: PathBuf,
    /// Output entropy-model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_Q_MIN)]
    q_min: f64,
    #[arg(long, default_value_t = DEFAULT_Q_MAX)]
    q_max: f64,
}

#[derive(Args)]
struct TrainDenoiserArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Entropy-model file; selects lattice or simulated corruption per scale.
    #[arg(long)]
    model: PathBuf,
    /// Output checkpoint, rewritten every `--save-every` steps and at the end.
    #[arg(long)]
    out: PathBuf,
    /// Total optimizer steps, counted from the start of training.
    #[arg(long, default_value_t = 20_000)]
    steps: u64,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Continue from a checkpoint written by this command.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    save_every: u64,
    /// Stop after this many total steps, leaving a checkpoint to resume from.
    #[arg(long)]
    stop_at: Option<u64>,
    #[arg(long, default_value_t = 1000)]
    log_every: u64,
}

#[derive(Args)]
struct EncodeArgs {
    /// Input PGM image.
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Quantization scale q_0.
    #[arg(long)]
    q: f64,
}

#[derive(Args, Clone)]
struct SamplerArgs {
    /// Reverse steps; 0 decodes the dequantized latent directly.
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    /// gaussian, uniform, entropy or none.
    #[arg(long, default_value_t = NoiseForm::Gaussian)]
    noise: NoiseForm,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SamplerArgs {
    fn options(&self) -> DecodeOptions {
        DecodeOptions { steps: self.steps, beta: self.beta, noise: self.noise, seed: self.seed }
    }
}

#[derive(Args)]
struct DecodeArgs {
    /// Input bitstream file.
    input: PathBuf,
    /// Output PGM image.
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Denoiser checkpoint; required when --steps > 0.
    #[arg(long)]
    denoiser: Option<PathBuf>,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Args)]
struct RdSweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    denoiser: Option<PathBuf>,
    /// Comma-separated scales q_0.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.5,0.7,1.0,1.5,2.0")]
    q: Vec<f64>,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Optional SVG plot of mean bpp against mean PSNR.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct EvalSamplerArgs {
    /// `points:<a,b,...>` (1-D atoms), `gmm:<m1,m2,...>:<sd>` (1-D mixture with
    /// a shared standard deviation) or `corpus:<dir>` (block-DCT rows of a PGM
    /// corpus; needs --denoiser and --model).
    #[arg(long)]
    dist: String,
    #[arg(long, default_value_t = 0.7)]
    q0: f64,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,0.025,0.05,0.075,0.1,0.125,0.15,0.175,0.2")]
    betas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "gaussian,uniform,entropy")]
    noise: Vec<NoiseForm>,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 16)]
    directions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Entropy-model file; fitted to source draws when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Trained denoiser; the analytic posterior mean is used when omitted.
    #[arg(long)]
    denoiser: Option<PathBuf>,
    /// Corrupt by lattice quantization where the model supports q0.
    #[arg(long)]
    lattice: bool,
    #[arg(long)]
    out: PathBuf,
}

fn read_model(path: &Path) -> Result<ChannelEntropyModel> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    ChannelEntropyModel::from_bytes(&bytes).with_context(|| format!("loading entropy model {}", path.display()))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Checkpoint::from_bytes(&bytes).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn read_denoiser(path: &Path) -> Result<DenoiserParams> {
    DenoiserParams::from_checkpoint(&read_checkpoint(path)?)
        .with_context(|| format!("loading denoiser {}", path.display()))
}

// Write to a sibling temporary file and rename, so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn corpus(dir: &Path) -> Result<Vec<(String, rdm_core::pipeline::ImageTensor)>> {
    let images = load_corpus(dir).with_context(|| format!("loading corpus {}", dir.display()))?;
    if images.is_empty() {
        bail!("no PGM images in {}", dir.display());
    }
    Ok(images)
}

fn generate(args: GenerateArgs) -> Result<()> {
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let width = args.count.saturating_sub(1).max(1).to_string().len();
    for (i, img) in generate_corpus(args.count, args.size, args.seed)?.iter().enumerate() {
        write_pgm(&args.out.join(format!("{i:0width$}.pgm")), img)?;
    }
    log::info!("wrote {} images to {}", args.count, args.out.display());
    Ok(())
}

fn train_entropy(args: TrainEntropyArgs) -> Result<()> {
    let images: Vec<_> = corpus(&args.corpus)?.into_iter().map(|(_, img)| img).collect();
    let config = FitConfig { epochs: args.epochs, q_min: args.q_min, q_max: args.q_max, seed: args.seed, ..FitConfig::default() };
    let report = fit_entropy_model(&[corpus_latents(&images)?], &config)?;
    if let Some(last) = report.epoch_losses.last() {
        log::info!("final loss {last:.4} bits/element, {} frozen channels", report.frozen.len());
    }
    write_atomic(&args.out, &report.model.to_bytes())?;
    println!("{:016x}", report.model.id());
    Ok(())
}

fn train_denoiser(args: TrainDenoiserArgs) -> Result<()> {
    let images: Vec<_> = corpus(&args.corpus)?.into_iter().map(|(_, img)| img).collect();
    let data = corpus_latents(&images)?;
    let model = read_model(&args.model)?;
    let config = image_train_config(args.steps, &model, args.seed);
    let mut trainer = match &args.resume {
        Some(path) => DenoiserTrainer::from_checkpoint(&read_checkpoint(path)?, config)
            .with_context(|| format!("resuming from {}", path.display()))?,
        None => {
            let mut rng = SeededRng::new(args.seed, streams::INIT);
            let params = DenoiserParams::init(&DenoiserConfig::new(COEFFS).with_hidden(args.hidden), &mut rng)?;
            DenoiserTrainer::new(params, config)?
        }
    };
    let (save_every, log_every) = (args.save_every.max(1), args.log_every.max(1));
    let mut window = (0.0, 0u64);
    let stop_at = args.stop_at.unwrap_or(u64::MAX);
    while !trainer.is_done() && trainer.step_count() < stop_at {
        let batch = trainer.sample_rows(&data)?;
        window.0 += trainer.train_step(&batch, Some(&model))?;
        window.1 += 1;
        let step = trainer.step_count();
        if step % log_every == 0 {
            log::info!("step {step}: loss {:.6}", window.0 / window.1 as f64);
            window = (0.0, 0);
        }
        if step % save_every == 0 {
            write_atomic(&args.out, &trainer.to_checkpoint().to_bytes())?;
        }
    }
    write_atomic(&args.out, &trainer.to_checkpoint().to_bytes())?;
    Ok(())
}

fn encode(args: EncodeArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let img = read_pgm(&args.input)?;
    let enc = encode_image(&img, QuantScale::new(args.q)?, &model)?;
    write_atomic(&args.output, &enc.bytes)?;
    println!("{} bits, {:.6} bpp", enc.bits(), enc.bpp());
    Ok(())
}

fn decode(args: DecodeArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let bytes = fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let denoiser = args.denoiser.as_deref().map(read_denoiser).transpose()?;
    if args.sampler.steps > 0 && denoiser.is_none() {
        bail!("--steps {} needs --denoiser (use --steps 0 to skip the reverse process)", args.sampler.steps);
    }
    let img = decode_image(&bytes, &model, denoiser.as_ref().map(|d| d as &dyn Denoiser), &args.sampler.options())?;
    write_pgm(&args.output, &img)?;
    Ok(())
}

fn rd_sweep_cmd(args: RdSweepArgs) -> Result<()> {
    let images = corpus(&args.corpus)?;
    let model = read_model(&args.model)?;
    let denoiser = args.denoiser.as_deref().map(read_denoiser).transpose()?;
    if args.sampler.steps > 0 && denoiser.is_none() {
        bail!("--steps {} needs --denoiser", args.sampler.steps);
    }
    let points = rd_sweep(&images, &args.q, &model, denoiser.as_ref().map(|d| d as &dyn Denoiser), &args.sampler.options())?;
    let mut csv = Vec::new();
    write_rd_csv(&points, &mut csv)?;
    write_atomic(&args.out, &csv)?;
    if let Some(svg) = &args.svg {
        write_atomic(svg, rd_svg(&points).as_bytes())?;
    }
    Ok(())
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|v| v.trim().parse::<f64>().with_context(|| format!("bad number {v:?}"))).collect()
}

fn parse_source(spec: &str) -> Result<Source> {
    let (kind, rest) = spec.split_once(':').with_context(|| format!("bad --dist {spec:?}"))?;
    match kind {
        "points" => Ok(Source::Points(PointMixture::uniform_1d(&parse_list(rest)?)?)),
        "gmm" => {
            let (means, sd) = rest.rsplit_once(':').context("gmm needs <means>:<sd>")?;
            let means = parse_list(means)?;
            let sd: f64 = sd.parse().with_context(|| format!("bad standard deviation {sd:?}"))?;
            let k = means.len();
            let mix = GaussianMixture::new(
                means.into_iter().map(|m| vec![m]).collect(),
                vec![vec![sd * sd]; k],
                vec![1.0 / k as f64; k],
            )?;
            Ok(Source::Gaussian(mix))
        }
        "corpus" => {
            let images: Vec<_> = corpus(Path::new(rest))?.into_iter().map(|(_, img)| img).collect();
            Ok(Source::Empirical(corpus_latents(&images)?))
        }
        other => bail!("unknown distribution kind {other:?} (expected points, gmm or corpus)"),
    }
}

fn eval_sampler_cmd(args: EvalSamplerArgs) -> Result<()> {
    let source = parse_source(&args.dist)?;
    let model = match &args.model {
        Some(path) => read_model(path)?,
        None => {
            let draws = source.sample(20_000, &mut SeededRng::new(args.seed, streams::DATA))?;
            fit_entropy_model(&[draws], &FitConfig { epochs: 5, seed: args.seed, ..FitConfig::default() })?.model
        }
    };
    let denoiser = args.denoiser.as_deref().map(read_denoiser).transpose()?;
    let cfg = SamplerEval {
        source,
        q0: args.q0,
        steps: args.steps,
        betas: args.betas,
        forms: args.noise,
        samples: args.samples,
        directions: args.directions,
        seed: args.seed,
        lattice: args.lattice,
    };
    let rows = eval_sampler(&cfg, &model, denoiser.as_ref().map(|d| d as &dyn Denoiser))?;
    let mut csv = Vec::new();
    write_sampler_csv(&rows, &mut csv)?;
    write_atomic(&args.out, &csv)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::TrainEntropy(a) => train_entropy(a),
        Command::TrainDenoiser(a) => train_denoiser(a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::RdSweep(a) => rd_sweep_cmd(a),
        Command::EvalSampler(a) => eval_sampler_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
