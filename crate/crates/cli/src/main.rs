//! `photoseq`: data synthesis, noise calibration, training, sequencing and
//! evaluation from the command line.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use photoseq_core::cache;
use photoseq_core::dataset::calibrate_cutoffs;
use photoseq_core::evaluation::{
    build_examples, eval_blur_sweep, eval_timepoints, relative_psnr, EvalReport, GroundTruthOracle, SequencePredictor, TIMEPOINTS,
};
use photoseq_core::io;
use photoseq_core::sequencer::{self, build_plan, export_sequence, ModelSet};
use photoseq_core::synthetic::{noisy_bursts, write_corpus, ClipSpec};
use photoseq_core::training::{
    model_path, sample_seed, train, train_three_models, Checkpoint, FeatureExtractor, FixedSamples, SampleSource, TrainOptions, Trainer,
};
use photoseq_core::{estimate_noise_params, Decomposer, Error, NoiseParams, Result, SampleBuilder, ToolkitConfig};

#[derive(Parser)]
#[command(name = "photoseq", version, about = "Recover sharp photo sequences from short-long-short exposure triplets")]
struct Cli {
    /// Worker threads for data generation, training batches and evaluation
    /// (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize training samples from frame corpora into a sample cache.
    Synth(SynthArgs),
    /// Fit the affine noise model to static-scene bursts.
    CalibrateNoise(CalibrateArgs),
    /// Train the decomposition network (or the three noise-specialised models).
    Train(TrainArgs),
    /// Decompose a triplet or an alternating capture into a sharp sequence.
    Sequence(SequenceArgs),
    /// Measure PSNR on held-out clips.
    Eval(EvalArgs),
    /// Write a synthetic frame corpus or static noisy bursts.
    GenCorpus(GenCorpusArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration; omitted keys take the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Noise parameter file overriding the `[noise]` table.
    #[arg(long)]
    noise: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Corpus root (repeat for several corpora, mixed uniformly).
    #[arg(long, required = true)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Square crop side [config default: 128].
    #[arg(long)]
    crop_size: Option<usize>,
    /// Recompute the variance-to-N cutoffs as quantiles of this many random
    /// windows before sampling.
    #[arg(long)]
    calibrate_cutoffs: Option<usize>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Burst directory, or a root holding one directory per burst (repeatable).
    #[arg(long, required = true)]
    burst: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "")]
    gain_label: String,
    /// Frame rate recorded for the bursts.
    #[arg(long, default_value_t = 240.0)]
    fps: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Corpus root (repeatable); not needed with --dry-run.
    #[arg(long)]
    corpus: Vec<PathBuf>,
    /// Train on a sample cache written by `synth` instead of a corpus.
    #[arg(long, conflicts_with = "corpus")]
    cache: Option<PathBuf>,
    /// Output weights; with --three-models, `NAME.noisy{2,1,0}.EXT`.
    #[arg(long)]
    out: PathBuf,
    /// Train three models gated by the number of noisy shorts.
    #[arg(long)]
    three_models: bool,
    /// Total iterations [config default: 100000].
    #[arg(long)]
    iterations: Option<u64>,
    /// Samples per iteration [config default: 8].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate [config default: 1e-4].
    #[arg(long)]
    lr: Option<f64>,
    /// Iterations between learning-rate decays [config default: 25000].
    #[arg(long)]
    lr_decay_every: Option<u64>,
    /// Learning-rate decay factor [config default: 0.1].
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    /// Sum-cost weight [config default: 0.01].
    #[arg(long)]
    lambda_sum: Option<f64>,
    /// Perceptual-cost weight [config default: 0.0003].
    #[arg(long)]
    lambda_perc: Option<f64>,
    /// Adversarial-cost weight [config default: 0.0001].
    #[arg(long)]
    lambda_adv: Option<f64>,
    /// Total-variation weight [config default: 0.0001].
    #[arg(long)]
    lambda_grad: Option<f64>,
    /// Run seed [config default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Pretrained VGG19 weights (torchvision `features.N` names) for the
    /// perceptual cost.
    #[arg(long)]
    vgg_weights: Option<PathBuf>,
    /// Training-curve CSV [default: OUT with extension .log.csv].
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Resume from a checkpoint (single-model mode).
    #[arg(long, conflicts_with_all = ["init", "three_models"])]
    resume: Option<PathBuf>,
    /// Start from existing weights instead of a fresh initialisation.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Walk the schedule and log learning rates without data or gradients.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct ModelArgs {
    /// Network weights; with --three-models, the base name of the
    /// `NAME.noisy{2,1,0}.EXT` files.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    three_models: bool,
}

#[derive(Args)]
struct SequenceArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Short, long and short exposure images.
    #[arg(long, num_args = 3, value_names = ["PRE", "LONG", "POST"], conflicts_with = "captures")]
    triplet: Option<Vec<PathBuf>>,
    /// Directory with an alternating capture listed in `exposures.txt`.
    #[arg(long)]
    captures: Option<PathBuf>,
    /// Recursion levels; 2^L - 1 frames per long exposure [config default: 2].
    #[arg(long)]
    levels: Option<u32>,
    /// Frames in the long exposure, when known (must equal 2^L - 1).
    #[arg(long)]
    n_frames: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Write 8-bit instead of 16-bit frames.
    #[arg(long)]
    eight_bit: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    Timepoints,
    BlurSweep,
    Relative,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Test corpus root (repeatable).
    #[arg(long, required = true)]
    corpus: Vec<PathBuf>,
    #[arg(long, value_enum)]
    protocol: Protocol,
    #[arg(long)]
    out: PathBuf,
    /// Use ground-truth frames as predictions (harness self-test).
    #[arg(long)]
    ground_truth: bool,
    /// Weights to compare against for the relative protocol.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    reference_three_models: bool,
    /// Frames per test long exposure [config default: 11].
    #[arg(long)]
    n: Option<usize>,
    /// Recursion levels for the relative protocol [config default: 2].
    #[arg(long)]
    levels: Option<u32>,
    /// Examples drawn per clip [config default: 4].
    #[arg(long)]
    examples_per_clip: Option<usize>,
    /// Example-selection and noise seed [config default: 0].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    clips: usize,
    #[arg(long, default_value_t = 48)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    sprites: usize,
    /// Maximum sprite and camera speed in pixels per frame.
    #[arg(long, default_value_t = 1.2)]
    max_speed: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write static noisy bursts with this noise file instead of moving clips.
    #[arg(long)]
    burst_noise: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numerical(_) => 4,
        _ => 3,
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Effective configuration: file, then noise file, then flags; validated.
fn load_config(args: &ConfigArgs, apply: impl FnOnce(&mut ToolkitConfig)) -> Result<ToolkitConfig> {
    let mut cfg = match &args.config {
        Some(p) => ToolkitConfig::load(p)?,
        None => ToolkitConfig::default(),
    };
    if let Some(p) = &args.noise {
        cfg.noise = NoiseParams::load(p)?;
    }
    apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("manifest serializes") + "\n";
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn load_corpora(roots: &[PathBuf], fps: f64) -> Result<Vec<Vec<(String, photoseq_core::FrameClip)>>> {
    roots.iter().map(|r| io::load_corpus(std::slice::from_ref(r), fps)).collect()
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg = load_config(&a.cfg, |c| {
        if let Some(s) = a.crop_size {
            c.builder.crop_size = s;
        }
    })?;
    let corpora = load_corpora(&a.corpus, cfg.corpus.nominal_fps)?;
    if let Some(draws) = a.calibrate_cutoffs {
        let steps: Vec<usize> = cfg.builder.variance_to_n.iter().map(|s| s.1).collect();
        let clips: Vec<_> = corpora.iter().flatten().cloned().collect();
        cfg.builder.variance_to_n = calibrate_cutoffs(&clips, &cfg.builder, &steps, draws, a.seed)?;
        cfg.validate()?;
    }
    let builder = SampleBuilder::new(corpora, cfg.builder.clone(), cfg.noise.clone())?;
    let samples = (0..a.count as u64)
        .into_par_iter()
        .map(|k| {
            let seed = sample_seed(a.seed, k);
            Ok((seed, builder.generate(seed)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut provenance = cfg.to_json();
    provenance["seed"] = a.seed.into();
    cache::write_cache(&a.out, &samples, provenance)?;
    let worst = cache::verify_cache(&a.out)?;
    println!("wrote {} samples to {} (worst sum-identity residual {worst:.2e})", a.count, a.out.display());
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    if !(a.fps.is_finite() && a.fps > 0.0) {
        return Err(usage("--fps must be positive"));
    }
    let mut bursts = Vec::new();
    for root in &a.burst {
        for dir in io::clip_dirs(root)? {
            bursts.push(io::load_clip(&dir, a.fps)?);
        }
    }
    let mut params = estimate_noise_params(&bursts)?;
    params.gain_label = a.gain_label;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    params.save(&a.out)?;
    println!("alpha = {:.6e}, beta = {:.6e} from {} bursts", params.alpha, params.beta, bursts.len());
    Ok(())
}

#[derive(Serialize)]
struct TrainManifest {
    command: &'static str,
    three_models: bool,
    dry_run: bool,
    iterations: u64,
    weights: Vec<(String, String)>,
    config: serde_json::Value,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.cfg, |c| {
        let s = &mut c.schedule;
        if let Some(v) = a.iterations {
            s.total_iterations = v;
            // A shorter run keeps the default staircase only if it fits.
            if a.lr_decay_every.is_none() && v > 0 && s.lr_decay_every > v {
                s.lr_decay_every = v;
            }
        }
        a.batch_size.map(|v| s.batch_size = v);
        a.lr.map(|v| s.initial_lr = v);
        a.lr_decay_every.map(|v| s.lr_decay_every = v);
        a.lr_decay_factor.map(|v| s.lr_decay_factor = v);
        a.seed.map(|v| s.seed = v);
        let l = &mut c.loss;
        a.lambda_sum.map(|v| l.lambda_sum = v);
        a.lambda_perc.map(|v| l.lambda_perc = v);
        a.lambda_adv.map(|v| l.lambda_adv = v);
        a.lambda_grad.map(|v| l.lambda_grad = v);
    })?;
    let updates = !a.dry_run && cfg.schedule.total_iterations > 0;
    if updates && cfg.loss.lambda_perc > 0.0 && a.vgg_weights.is_none() {
        return Err(usage("loss.lambda_perc > 0 needs --vgg-weights (or set --lambda-perc 0)"));
    }
    if updates && a.corpus.is_empty() && a.cache.is_none() {
        return Err(usage("training needs --corpus or --cache"));
    }

    let extractor = match &a.vgg_weights {
        Some(p) if updates => Some(FeatureExtractor::load_vgg19(p, &cfg.training.perceptual_layer)?),
        _ => None,
    };
    // Without gradient steps the perceptual weight has no effect.
    let mut weights = cfg.loss;
    if extractor.is_none() {
        weights.lambda_perc = 0.0;
    }
    let log = a.log.clone().unwrap_or_else(|| a.out.with_extension("log.csv"));
    let opts = TrainOptions {
        log_path: Some(log),
        log_every: cfg.training.log_every,
        checkpoint_dir: a.checkpoint_dir.clone(),
        checkpoint_every: cfg.training.checkpoint_every,
        dry_run: a.dry_run,
        discriminator_channels: cfg.training.discriminator_channels,
    };
    let init = match &a.init {
        Some(p) => Some(Decomposer::load(p, Some(&cfg.network))?),
        None => None,
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }

    let fps = cfg.corpus.nominal_fps;
    let fixed = match &a.cache {
        Some(dir) if updates => Some(FixedSamples(cache::read_cache(dir)?.1)),
        _ => None,
    };
    let builder = if updates && fixed.is_none() {
        Some(SampleBuilder::new(load_corpora(&a.corpus, fps)?, cfg.builder.clone(), cfg.noise.clone())?)
    } else {
        None
    };
    let empty = FixedSamples(Vec::new());
    let source: &dyn SampleSource = match (&fixed, &builder) {
        (Some(f), _) => f,
        (None, Some(b)) => b,
        (None, None) => &empty,
    };

    let mut outputs = Vec::new();
    if a.three_models {
        if fixed.is_some() {
            return Err(usage("--three-models draws its own noise gating and needs --corpus"));
        }
        let nets = if updates {
            train_three_models(builder.as_ref().expect("corpus loaded for training"), &cfg.network, init.as_ref(), &cfg.schedule, &weights, extractor.as_ref(), &opts)?
        } else {
            three_without_updates(&cfg, init.as_ref(), &weights, &opts)?
        };
        for (net, k) in nets.iter().zip([2, 1, 0]) {
            let path = model_path(&a.out, k);
            net.save(&path)?;
            outputs.push((path.display().to_string(), net.value_digest()));
        }
    } else {
        let net = match &a.resume {
            Some(p) => {
                let ckpt = Checkpoint::load(p)?;
                if ckpt.net.config() != &cfg.network {
                    return Err(usage(format!("{} holds a different network configuration", p.display())));
                }
                let mut t = Trainer::resume(ckpt, extractor.as_ref(), cfg.training.discriminator_channels)?;
                t.run(source, &opts)?;
                t.into_net()
            }
            None => {
                let net = match &init {
                    Some(n) => n.clone(),
                    None => Decomposer::init(&cfg.network, cfg.schedule.seed)?,
                };
                train(source, net, &cfg.schedule, &weights, extractor.as_ref(), &opts)?
            }
        };
        net.save(&a.out)?;
        outputs.push((a.out.display().to_string(), net.value_digest()));
    }
    let manifest = TrainManifest {
        command: "train",
        three_models: a.three_models,
        dry_run: a.dry_run,
        iterations: cfg.schedule.total_iterations,
        weights: outputs,
        config: cfg.to_json(),
    };
    write_json(&with_suffix(&a.out, ".run.json"), &manifest)?;
    println!("trained {} iterations; weights written next to {}", cfg.schedule.total_iterations, a.out.display());
    Ok(())
}

/// Three-model mode without gradient steps: walk each schedule (for the
/// logs) and return the initial networks.
fn three_without_updates(
    cfg: &ToolkitConfig,
    init: Option<&Decomposer>,
    weights: &photoseq_core::training::LossWeights,
    opts: &TrainOptions,
) -> Result<[Decomposer; 3]> {
    let empty = FixedSamples(Vec::new());
    let mut out = Vec::new();
    for k in [2, 1, 0] {
        let net = match init {
            Some(n) => n.clone(),
            None => Decomposer::init(&cfg.network, cfg.schedule.seed)?,
        };
        let opts = TrainOptions {
            log_path: opts.log_path.as_ref().map(|p| model_path(p, k)),
            checkpoint_dir: opts.checkpoint_dir.as_ref().map(|d| d.join(format!("noisy{k}"))),
            ..opts.clone()
        };
        out.push(train(&empty, net, &cfg.schedule, weights, None, &opts)?);
    }
    Ok(out.try_into().unwrap_or_else(|_| unreachable!("three models")))
}

/// Loaded weights: one model or three keyed by noisy-input count.
enum Models {
    Single(Decomposer),
    Triple([Decomposer; 3]),
}

impl Models {
    fn load(path: &Path, three: bool, cfg: &ToolkitConfig) -> Result<Self> {
        let expected = Some(&cfg.network);
        if three {
            let [a, b, c] = [2, 1, 0].map(|k| Decomposer::load(&model_path(path, k), expected));
            Ok(Models::Triple([a?, b?, c?]))
        } else {
            Ok(Models::Single(Decomposer::load(path, expected)?))
        }
    }

    fn set(&self) -> ModelSet<'_> {
        match self {
            Models::Single(m) => ModelSet::Single(m),
            Models::Triple([a, b, c]) => ModelSet::Triple { noisy2: a, noisy1: b, noisy0: c },
        }
    }
}

fn require_weights(m: &ModelArgs) -> Result<&Path> {
    m.weights.as_deref().ok_or_else(|| usage("--weights is required"))
}

fn cmd_sequence(a: SequenceArgs) -> Result<()> {
    let cfg = load_config(&a.cfg, |c| {
        a.levels.map(|v| c.sequencer.levels = v);
        if a.eight_bit {
            c.sequencer.sixteen_bit = false;
        }
    })?;
    let levels = cfg.sequencer.levels;
    let plan = build_plan(levels, a.n_frames).map_err(|e| usage(e.to_string()))?;
    if a.triplet.is_none() && a.captures.is_none() {
        return Err(usage("give --triplet PRE LONG POST or --captures DIR"));
    }
    let weights = require_weights(&a.model)?;
    let models = Models::load(weights, a.model.three_models, &cfg)?;
    let set = models.set();
    let digests = set.fingerprints();
    let mut provenance = cfg.to_json();
    provenance["weights_path"] = weights.display().to_string().into();

    if let Some(paths) = &a.triplet {
        let [pre, long, post] = [0, 1, 2].map(|k| io::read_image(&paths[k]));
        let triplet = photoseq_core::ExposureTriplet::new(pre?, long?, post?, a.n_frames, [true, true])?;
        let seq = sequencer::sequence(&triplet, set, &plan)?;
        export_sequence(&a.out, &seq, &digests, &provenance, cfg.sequencer.sixteen_bit)?;
        println!("wrote {} frames to {}", seq.len(), a.out.display());
    } else if let Some(dir) = &a.captures {
        let captures = sequencer::load_capture_dir(dir)?;
        let seqs = sequencer::sequence_stream(&captures, set, levels)?;
        for (k, seq) in seqs.iter().enumerate() {
            export_sequence(&a.out.join(format!("seq_{:04}", k + 1)), seq, &digests, &provenance, cfg.sequencer.sixteen_bit)?;
        }
        println!("wrote {} sequences of {} frames to {}", seqs.len(), plan.output_count(), a.out.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalManifest<'a> {
    protocol: &'static str,
    report: &'a EvalReport,
    config: serde_json::Value,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = load_config(&a.cfg, |c| {
        let e = &mut c.evaluation;
        a.n.map(|v| e.n = v);
        a.examples_per_clip.map(|v| e.examples_per_clip = v);
        a.seed.map(|v| e.seed = v);
        a.levels.map(|v| c.sequencer.levels = v);
    })?;
    if a.protocol == Protocol::Relative && a.reference.is_none() && !a.ground_truth {
        return Err(usage("the relative protocol needs --reference"));
    }
    let models = if a.ground_truth { None } else { Some(Models::load(require_weights(&a.model)?, a.model.three_models, &cfg)?) };
    let reference = match (&a.reference, a.ground_truth) {
        (Some(p), false) => Some(Models::load(p, a.reference_three_models, &cfg)?),
        _ => None,
    };
    let set = models.as_ref().map(Models::set);
    let predictor: &dyn SequencePredictor = match &set {
        Some(s) => s,
        None => &GroundTruthOracle,
    };
    let clips = io::load_corpus(&a.corpus, cfg.corpus.nominal_fps)?;
    let ev = &cfg.evaluation;
    let eval_cfg = ev.eval_config();
    let mut report = EvalReport {
        weights: set.map(|s| s.fingerprints()).unwrap_or_else(|| vec!["ground-truth".into()]),
        dataset: a.corpus.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","),
        ..EvalReport::default()
    };
    let name = match a.protocol {
        Protocol::Timepoints => {
            let examples = build_examples(&clips, ev.n, &cfg.noise, &eval_cfg)?;
            report.n = Some(ev.n);
            report.levels = Some(2);
            report.examples = examples.len();
            report.timepoints = eval_timepoints(predictor, &examples, &TIMEPOINTS)?;
            "timepoints"
        }
        Protocol::BlurSweep => {
            report.levels = Some(1);
            report.examples = clips.len() * ev.examples_per_clip;
            report.blur_sweep = eval_blur_sweep(predictor, &clips, &ev.blur_sweep, &cfg.noise, &eval_cfg)?;
            "blur-sweep"
        }
        Protocol::Relative => {
            let levels = cfg.sequencer.levels;
            let examples = build_examples(&clips, ev.n, &cfg.noise, &eval_cfg)?;
            let other_set = reference.as_ref().map(Models::set);
            let other: &dyn SequencePredictor = match &other_set {
                Some(s) => s,
                None => &GroundTruthOracle,
            };
            let per = examples
                .par_iter()
                .map(|ex| relative_psnr(&predictor.predict(ex, levels)?, &other.predict(ex, levels)?))
                .collect::<Result<Vec<_>>>()?;
            let timepoints = build_plan(levels, None)?.timepoints();
            report.relative = timepoints
                .iter()
                .enumerate()
                .map(|(j, &t)| (t, per.iter().map(|p| p[j]).sum::<f64>() / per.len() as f64))
                .collect();
            if let Some(o) = other_set {
                report.weights.extend(o.fingerprints());
            }
            report.n = Some(ev.n);
            report.levels = Some(levels);
            report.examples = examples.len();
            "relative"
        }
    };
    if let Some(bad) = report
        .timepoints
        .iter()
        .map(|r| r.psnr)
        .chain(report.blur_sweep.iter().map(|r| r.psnr))
        .chain(report.relative.iter().map(|r| r.1))
        .find(|p| !p.is_finite())
    {
        return Err(Error::Numerical(format!("evaluation produced a non-finite PSNR ({bad})")));
    }
    create_dir(&a.out)?;
    let write = |file: &str, text: String| {
        let p = a.out.join(file);
        std::fs::write(&p, text).map_err(|e| Error::Io { path: p, source: e })
    };
    write("report.csv", report.to_csv())?;
    write("report.txt", report.to_text())?;
    write_json(&a.out.join("report.json"), &EvalManifest { protocol: name, report: &report, config: cfg.to_json() })?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_gen_corpus(a: GenCorpusArgs) -> Result<()> {
    let spec = ClipSpec {
        height: a.height,
        width: a.width,
        frames: a.frames,
        sprites: a.sprites,
        max_speed: a.max_speed,
        ..ClipSpec::default()
    };
    match &a.burst_noise {
        None => write_corpus(&a.out, &spec, a.clips, a.seed)?,
        Some(p) => {
            let params = NoiseParams::load(p)?;
            for (k, burst) in noisy_bursts(&spec, &params, a.clips, a.frames, a.seed)?.iter().enumerate() {
                io::write_frames(&a.out.join(format!("burst_{k:04}")), "frame_", burst.frames(), true)?;
            }
        }
    }
    println!("wrote {} {} to {}", a.clips, if a.burst_noise.is_some() { "bursts" } else { "clips" }, a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global() {
            eprintln!("error: cannot start {} workers: {e}", cli.workers);
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::CalibrateNoise(a) => cmd_calibrate(a),
        Command::Train(a) => cmd_train(a),
        Command::Sequence(a) => cmd_sequence(a),
        Command::Eval(a) => cmd_eval(a),
        Command::GenCorpus(a) => cmd_gen_corpus(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
