//! Composite training objective, discriminator and optimisation loop.

mod checkpoint;
pub mod cost;
pub mod discriminator;
pub mod perceptual;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use photoseq_tensor::{Adam, Eager, Gradients, Graph, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use cost::{supervised_cost, sum_cost, tv_cost};
pub use discriminator::Discriminator;
pub use perceptual::FeatureExtractor;

use crate::dataset::{NoisyShorts, SampleBuilder, TrainingSample};
use crate::image::Image;
use crate::net::{check_dims, images_to_tensor, Decomposer, NetworkConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_sum: f64,
    pub lambda_perc: f64,
    pub lambda_adv: f64,
    pub lambda_grad: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_sum: 1e-2, lambda_perc: 3e-4, lambda_adv: 1e-4, lambda_grad: 1e-4 }
    }
}

impl LossWeights {
    /// Supervised and sum costs only.
    pub fn reconstruction_only() -> Self {
        Self { lambda_perc: 0.0, lambda_adv: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_sum, self.lambda_perc, self.lambda_adv, self.lambda_grad];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub total_iterations: u64,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: u64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            total_iterations: 100_000,
            initial_lr: 1e-4,
            lr_decay_factor: 0.1,
            lr_decay_every: 25_000,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    /// A zero-iteration schedule is accepted and trains nothing.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("schedule: {m}")));
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return bad("initial_lr must be positive");
        }
        if !(self.lr_decay_factor.is_finite() && self.lr_decay_factor > 0.0) {
            return bad("lr_decay_factor must be positive");
        }
        if self.lr_decay_every == 0 || self.batch_size == 0 {
            return bad("lr_decay_every and batch_size must be positive");
        }
        if self.total_iterations > 0 && self.lr_decay_every > self.total_iterations {
            return bad("lr_decay_every exceeds total_iterations");
        }
        Ok(())
    }

    /// Staircase schedule `initial · factor^⌊iteration / every⌋`.
    pub fn learning_rate(&self, iteration: u64) -> f64 {
        let k = (iteration / self.lr_decay_every).min(i32::MAX as u64) as i32;
        self.initial_lr * self.lr_decay_factor.powi(k)
    }
}

/// Where training samples come from. `index` counts samples drawn so far.
pub trait SampleSource: Sync {
    fn draw(&self, index: u64, seed: u64) -> Result<TrainingSample>;
}

impl SampleSource for SampleBuilder {
    fn draw(&self, _index: u64, seed: u64) -> Result<TrainingSample> {
        self.generate(seed)
    }
}

/// A fixed set cycled in order.
#[derive(Clone, Debug)]
pub struct FixedSamples(pub Vec<TrainingSample>);

impl SampleSource for FixedSamples {
    fn draw(&self, index: u64, _seed: u64) -> Result<TrainingSample> {
        if self.0.is_empty() {
            return Err(Error::Argument("empty sample set".into()));
        }
        Ok(self.0[(index % self.0.len() as u64) as usize].clone())
    }
}

/// Per-sample seed derived from the run seed (splitmix64 finaliser).
pub fn sample_seed(run_seed: u64, index: u64) -> u64 {
    let mut z = run_seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Batch means of each cost term. `gradient` is the total variation of the
/// sharp output divided by its element count; `discriminator` is the
/// discriminator's own cost before its update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepCosts {
    pub total: f64,
    pub supervised: f64,
    pub sum: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub gradient: f64,
    pub discriminator: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    /// CSV training curve; appended to when resuming.
    pub log_path: Option<PathBuf>,
    pub log_every: u64,
    pub checkpoint_dir: Option<PathBuf>,
    /// `0` disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// Walk the schedule and write the log without sampling data or
    /// computing gradients.
    pub dry_run: bool,
    pub discriminator_channels: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            log_path: None,
            log_every: 100,
            checkpoint_dir: None,
            checkpoint_every: 5_000,
            dry_run: false,
            discriminator_channels: discriminator::DEFAULT_BASE_CHANNELS,
        }
    }
}

pub const LOG_HEADER: &str = "iteration,lr,total,supervised,sum,perceptual,adversarial,gradient,discriminator";

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn to_tensor(shape: &[usize], data: &[f64]) -> Result<Tensor> {
    Ok(Tensor::from_vec(shape, data.iter().map(|&v| v as f32).collect())?)
}

/// Result of evaluating the objective on one batch without updating.
pub struct Objective {
    pub costs: StepCosts,
    pub gradients: Gradients,
    pub predicted_sharp: Tensor,
    pub target_sharp: Tensor,
}

/// Owns the network, its optimizer and the discriminator for one run.
pub struct Trainer<'e> {
    net: Decomposer,
    adam: Adam,
    discriminator: Option<Discriminator>,
    iteration: u64,
    schedule: TrainSchedule,
    weights: LossWeights,
    extractor: Option<&'e FeatureExtractor>,
}

impl<'e> Trainer<'e> {
    pub fn new(
        net: Decomposer,
        schedule: TrainSchedule,
        weights: LossWeights,
        extractor: Option<&'e FeatureExtractor>,
        discriminator_channels: usize,
    ) -> Result<Self> {
        schedule.validate()?;
        weights.validate()?;
        if weights.lambda_perc > 0.0 && extractor.is_none() {
            return Err(Error::Config(
                "the perceptual cost needs feature-extractor weights (or set lambda_perc = 0)".into(),
            ));
        }
        let discriminator = if weights.lambda_adv > 0.0 {
            Some(Discriminator::new(discriminator_channels, sample_seed(schedule.seed, u64::MAX))?)
        } else {
            None
        };
        let adam = Adam::new(net.params());
        Ok(Self { net, adam, discriminator, iteration: 0, schedule, weights, extractor })
    }

    /// Continue from a checkpoint with its schedule and loss weights.
    pub fn resume(ckpt: Checkpoint, extractor: Option<&'e FeatureExtractor>, discriminator_channels: usize) -> Result<Self> {
        let mut t = Self::new(ckpt.net, ckpt.schedule, ckpt.weights, extractor, discriminator_channels)?;
        t.adam = ckpt.adam;
        t.iteration = ckpt.iteration;
        if ckpt.discriminator.is_some() {
            t.discriminator = ckpt.discriminator;
        }
        Ok(t)
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn net(&self) -> &Decomposer {
        &self.net
    }

    pub fn into_net(self) -> Decomposer {
        self.net
    }

    pub fn schedule(&self) -> &TrainSchedule {
        &self.schedule
    }

    pub fn discriminator(&self) -> Option<&Discriminator> {
        self.discriminator.as_ref()
    }

    pub fn learning_rate(&self) -> f64 {
        self.schedule.learning_rate(self.iteration)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            net: self.net.clone(),
            adam: self.adam.clone(),
            discriminator: self.discriminator.clone(),
            schedule: self.schedule.clone(),
            weights: self.weights,
        }
    }

    /// Total cost and its parameter gradients on `batch`.
    pub fn objective(&self, batch: &[TrainingSample]) -> Result<Objective> {
        let Some(first) = batch.first() else {
            return Err(Error::Argument("empty batch".into()));
        };
        let (h, w) = first.triplet.dims();
        check_dims((h, w))?;
        if batch.iter().any(|s| s.triplet.dims() != (h, w)) {
            return Err(Error::Shape("batch samples differ in size".into()));
        }
        let b = batch.len();
        let stack = |f: fn(&TrainingSample) -> &Image| images_to_tensor(&batch.iter().map(f).collect::<Vec<_>>());
        let inputs = [
            stack(|s| &s.triplet.short_pre),
            stack(|s| &s.triplet.long),
            stack(|s| &s.triplet.short_post),
        ];
        let long = to_f64(&inputs[1]);
        let target_sharp = stack(|s| &s.target.mid_sharp);
        let targets = [to_f64(&stack(|s| &s.target.first_half)), to_f64(&target_sharp), to_f64(&stack(|s| &s.target.second_half))];
        let lw = self.weights;

        let mut g = Graph::with_trainable(self.net.params());
        let [p, l, q] = inputs.map(|t| g.input(t));
        let out = self.net.forward(&mut g, b, &p, &l, &q)?;
        let vars = [out.first_half, out.mid_sharp, out.second_half];
        let preds = vars.map(|v| to_f64(g.value(v)));
        let shape = g.value(out.mid_sharp).shape().to_vec();

        let mut costs = StepCosts::default();
        let mut grads: Vec<Vec<f64>> = preds.iter().zip(&targets).map(|(p, t)| cost::mse_grad(p, t)).collect();
        costs.supervised = preds.iter().zip(&targets).map(|(p, t)| cost::mse(p, t)).sum();

        let item = 3 * h * w;
        let norm = item as f64 * b as f64;
        for (k, s) in batch.iter().enumerate() {
            let r = k * item..(k + 1) * item;
            let (n1, n2) = (s.target.n1, s.target.n2);
            let (c, d) = cost::sum_mse(&preds[0][r.clone()], &preds[1][r.clone()], &preds[2][r.clone()], &long[r.clone()], n1, n2);
            costs.sum += c / b as f64;
            for (g, d) in grads.iter_mut().zip(&d) {
                for (g, d) in g[r.clone()].iter_mut().zip(d) {
                    *g += lw.lambda_sum * d / b as f64;
                }
            }
            let (tv, d) = cost::tv(&preds[1][r.clone()], 3, h, w);
            costs.gradient += tv / norm;
            for (g, d) in grads[1][r].iter_mut().zip(&d) {
                *g += lw.lambda_grad * d / norm;
            }
        }

        let mut seeds = Vec::new();
        if lw.lambda_perc > 0.0 {
            let ext = self.extractor.ok_or_else(|| Error::Config("no feature extractor".into()))?;
            let fp = ext.features(&mut g, &out.mid_sharp)?;
            let ft = to_f64(&ext.features(&mut Eager, &target_sharp)?);
            let fpv = to_f64(g.value(fp));
            costs.perceptual = cost::mse(&fpv, &ft);
            let d: Vec<f64> = cost::mse_grad(&fpv, &ft).iter().map(|v| lw.lambda_perc * v).collect();
            seeds.push((fp, to_tensor(g.value(fp).shape(), &d)?));
        }
        if lw.lambda_adv > 0.0 {
            let disc = self.discriminator.as_ref().ok_or_else(|| Error::Config("no discriminator".into()))?;
            let (c, d) = disc.generator_cost(g.value(out.mid_sharp))?;
            costs.adversarial = c;
            for (g, d) in grads[1].iter_mut().zip(d.data()) {
                *g += lw.lambda_adv * *d as f64;
            }
        }
        costs.total = costs.supervised
            + lw.lambda_sum * costs.sum
            + lw.lambda_perc * costs.perceptual
            + lw.lambda_grad * costs.gradient
            + lw.lambda_adv * costs.adversarial;

        for (v, d) in vars.iter().zip(&grads) {
            seeds.push((*v, to_tensor(&shape, d)?));
        }
        let gradients = g.backward(seeds)?;
        let predicted_sharp = g.value(out.mid_sharp).clone();
        Ok(Objective { costs, gradients, predicted_sharp, target_sharp })
    }

    /// One optimisation step. Non-finite costs or gradients leave the state
    /// untouched and return [`Error::Numerical`].
    pub fn step(&mut self, batch: &[TrainingSample]) -> Result<StepCosts> {
        let lr = self.learning_rate() as f32;
        let Objective { mut costs, gradients, predicted_sharp, target_sharp } = self.objective(batch)?;
        if !costs.total.is_finite() || !gradients.sum_sq().is_finite() {
            return Err(Error::Numerical(format!("non-finite cost {:?} at iteration {}", costs.total, self.iteration)));
        }
        self.adam.step(self.net.params_mut(), &gradients, lr)?;
        if let Some(d) = self.discriminator.as_mut() {
            costs.discriminator = d.update(&target_sharp, &predicted_sharp, lr)?;
        }
        self.iteration += 1;
        Ok(costs)
    }

    fn draw_batch(&self, source: &dyn SampleSource) -> Result<Vec<TrainingSample>> {
        let b = self.schedule.batch_size as u64;
        let seed = self.schedule.seed;
        let first = self.iteration * b;
        (first..first + b).into_par_iter().map(|i| source.draw(i, sample_seed(seed, i))).collect()
    }

    /// Train until the schedule's last iteration.
    pub fn run(&mut self, source: &dyn SampleSource, opts: &TrainOptions) -> Result<()> {
        let mut log = match &opts.log_path {
            Some(p) => Some(open_log(p, self.iteration > 0)?),
            None => None,
        };
        let log_every = opts.log_every.max(1);
        while self.iteration < self.schedule.total_iterations {
            let it = self.iteration;
            let lr = self.learning_rate();
            let costs = if opts.dry_run {
                self.iteration += 1;
                None
            } else {
                let batch = self.draw_batch(source)?;
                match self.step(&batch) {
                    Ok(c) => Some(c),
                    Err(Error::Numerical(m)) => return Err(self.abort(opts, &m)),
                    Err(e) => return Err(e),
                }
            };
            if let Some((path, file)) = log.as_mut() {
                if it % log_every == 0 {
                    writeln!(file, "{}", log_row(it, lr, costs.as_ref())).map_err(|e| Error::io(path.as_path(), e))?;
                }
            }
            if let Some(dir) = &opts.checkpoint_dir {
                if opts.checkpoint_every > 0 && self.iteration % opts.checkpoint_every == 0 {
                    self.checkpoint().save(&dir.join(format!("checkpoint_{:08}.safetensors", self.iteration)))?;
                }
            }
        }
        if let Some((path, file)) = log.as_mut() {
            file.flush().map_err(|e| Error::io(path.as_path(), e))?;
        }
        Ok(())
    }

    fn abort(&self, opts: &TrainOptions, message: &str) -> Error {
        let dir = opts.checkpoint_dir.clone().or_else(|| opts.log_path.as_ref().and_then(|p| p.parent().map(Path::to_path_buf)));
        let Some(dir) = dir else {
            return Error::Numerical(message.to_string());
        };
        let path = dir.join(format!("diagnostic_{:08}.safetensors", self.iteration));
        match self.checkpoint().save(&path) {
            Ok(()) => Error::Numerical(format!("{message}; state saved to {}", path.display())),
            Err(e) => Error::Numerical(format!("{message}; saving diagnostic state failed: {e}")),
        }
    }
}

fn open_log(path: &Path, append: bool) -> Result<(PathBuf, std::io::BufWriter<std::fs::File>)> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let exists = path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    if !(append && exists) {
        writeln!(w, "{LOG_HEADER}").map_err(|e| Error::io(path, e))?;
    }
    Ok((path.to_path_buf(), w))
}

fn log_row(iteration: u64, lr: f64, costs: Option<&StepCosts>) -> String {
    match costs {
        Some(c) => format!(
            "{iteration},{lr:.6e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
            c.total, c.supervised, c.sum, c.perceptual, c.adversarial, c.gradient, c.discriminator
        ),
        None => format!("{iteration},{lr:.6e},,,,,,,"),
    }
}

/// Train `net` on `source`. A zero-iteration schedule returns `net` unchanged.
pub fn train(
    source: &dyn SampleSource,
    net: Decomposer,
    schedule: &TrainSchedule,
    weights: &LossWeights,
    extractor: Option<&FeatureExtractor>,
    opts: &TrainOptions,
) -> Result<Decomposer> {
    let mut t = Trainer::new(net, schedule.clone(), *weights, extractor, opts.discriminator_channels)?;
    t.run(source, opts)?;
    Ok(t.into_net())
}

/// Noise gating of the three specialised models, by number of noisy shorts.
pub const THREE_MODEL_MODES: [NoisyShorts; 3] = [NoisyShorts::Both, NoisyShorts::One, NoisyShorts::None];

/// `weights.safetensors` with noisy count 1 becomes `weights.noisy1.safetensors`.
pub fn model_path(base: &Path, noisy_count: usize) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}.noisy{noisy_count}.{}", ext.to_string_lossy()),
        None => format!("{stem}.noisy{noisy_count}"),
    };
    base.with_file_name(name)
}

/// Train the models for two, one and zero noisy shorts, in that order. Each
/// starts from `init` (or a fresh network seeded by the schedule) and logs
/// and checkpoints under count-suffixed paths.
pub fn train_three_models(
    builder: &SampleBuilder,
    config: &NetworkConfig,
    init: Option<&Decomposer>,
    schedule: &TrainSchedule,
    weights: &LossWeights,
    extractor: Option<&FeatureExtractor>,
    opts: &TrainOptions,
) -> Result<[Decomposer; 3]> {
    let mut out = Vec::with_capacity(3);
    for mode in THREE_MODEL_MODES {
        let k = mode.count();
        let source = builder.with_noisy_shorts(mode);
        let net = match init {
            Some(n) => n.clone(),
            None => Decomposer::init(config, schedule.seed)?,
        };
        let opts = TrainOptions {
            log_path: opts.log_path.as_ref().map(|p| model_path(p, k)),
            checkpoint_dir: opts.checkpoint_dir.as_ref().map(|d| d.join(format!("noisy{k}"))),
            ..opts.clone()
        };
        out.push(train(&source, net, schedule, weights, extractor, &opts)?);
    }
    Ok(out.try_into().unwrap_or_else(|_| unreachable!("three models")))
}

/// Discriminator update on one predicted/real pair of sharp images. Returns
/// the generator cost on `sharp_pred` (before the update) and the
/// discriminator cost.
pub fn adversarial_step(disc: &mut Discriminator, sharp_pred: &Image, sharp_real: &Image, lr: f32) -> Result<(f64, f64)> {
    if sharp_pred.dims() != sharp_real.dims() {
        return Err(Error::Argument(format!("{:?} vs {:?}", sharp_pred.dims(), sharp_real.dims())));
    }
    let fake = images_to_tensor(&[sharp_pred]);
    let real = images_to_tensor(&[sharp_real]);
    let (p_adv, _) = disc.generator_cost(&fake)?;
    let d = disc.update(&real, &fake, lr)?;
    Ok((p_adv, d))
}

/// MSE between feature maps of `pred` and `target`.
pub fn perceptual_cost(pred: &Image, target: &Image, extractor: &FeatureExtractor) -> Result<f64> {
    if pred.dims() != target.dims() {
        return Err(Error::Argument(format!("{:?} vs {:?}", pred.dims(), target.dims())));
    }
    let fp = extractor.features(&mut Eager, &images_to_tensor(&[pred]))?;
    let ft = extractor.features(&mut Eager, &images_to_tensor(&[target]))?;
    Ok(cost::mse(&to_f64(&fp), &to_f64(&ft)))
}

/// Gradient of [`perceptual_cost`] with respect to `pred`, as an NCHW tensor.
pub fn perceptual_cost_grad(pred: &Image, target: &Image, extractor: &FeatureExtractor) -> Result<Tensor> {
    let ft = to_f64(&extractor.features(&mut Eager, &images_to_tensor(&[target]))?);
    let mut g = Graph::new();
    let x = g.leaf(images_to_tensor(&[pred]));
    let f = extractor.features(&mut g, &x)?;
    let seed = to_tensor(g.value(f).shape(), &cost::mse_grad(&to_f64(g.value(f)), &ft))?;
    let grads = g.backward(vec![(f, seed)])?;
    Ok(grads.leaf(x).cloned().unwrap_or_else(|| Tensor::zeros(&[1, 3, pred.height(), pred.width()])))
}
