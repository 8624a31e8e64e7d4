//! Encoder-decoder decomposition network.
//!
//! Layer names: input heads `ip1`
//! (shared by both shorts) and `ip2` (long), dense residual blocks and
//! stride-2 convolutions 1-13, transpose convolutions and decoder blocks
//! 14-25, output convolutions `op1` (both halves) and `op2` (midpoint), and
//! carry-on skip convolutions 26-29.
//!
//! Both halves come from the shared `op1`: the trunk runs on the fused heads
//! in forward order `[pre, post, long]` and in reversed order
//! `[post, pre, long]` (stacked along the batch axis), `op1` of the forward
//! pass is the first half and `op1` of the reversed pass the second half. The
//! midpoint is `op2` of the mean of both trunk outputs. Swapping the two
//! shorts therefore swaps the halves exactly and leaves the midpoint unchanged.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use photoseq_tensor::{Conv, ConvShape, Eager, Exec, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::{self, Metadata};
use crate::image::{DecompositionTriple, ExposureTriplet, Image};
use crate::{Error, Result};

pub const WEIGHTS_FORMAT: &str = "photoseq-decomposer";
pub const WEIGHTS_VERSION: u32 = 1;
/// Spatial dimensions must be multiples of this (four stride-2 stages).
pub const SIZE_MULTIPLE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub short_head_channels: usize,
    pub long_head_channels: usize,
    /// Encoder widths per resolution, finest first.
    pub trunk_channels: [usize; 5],
    pub resblock_convs: usize,
    pub head_kernel: usize,
    pub kernel: usize,
    pub leaky_slope: f32,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::scaled(64)
    }
}

impl NetworkConfig {
    /// Standard channel proportions with finest trunk width `base` (64 for full size).
    pub fn scaled(base: usize) -> Self {
        Self {
            short_head_channels: base / 4,
            long_head_channels: base / 2,
            trunk_channels: [base, 2 * base, 4 * base, 8 * base, 16 * base],
            resblock_convs: 4,
            head_kernel: 7,
            kernel: 3,
            leaky_slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let t = self.trunk_channels;
        if self.short_head_channels == 0 || self.long_head_channels == 0 {
            return bad("head widths must be positive".into());
        }
        if 2 * self.short_head_channels + self.long_head_channels != t[0] {
            return bad(format!(
                "fused heads 2x{} + {} must equal the first trunk width {}",
                self.short_head_channels, self.long_head_channels, t[0]
            ));
        }
        if t.iter().any(|&c| c == 0 || c % 2 != 0) {
            return bad(format!("trunk widths {t:?} must be positive and even"));
        }
        if self.resblock_convs == 0 {
            return bad("resblock_convs must be positive".into());
        }
        if self.head_kernel % 2 == 0 || self.kernel % 2 == 0 {
            return bad("kernel sizes must be odd".into());
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return bad(format!("leaky_slope {} must be finite and non-negative", self.leaky_slope));
        }
        Ok(())
    }

    /// Layer table in reference numbering.
    pub fn layer_table(&self) -> Vec<LayerSpec> {
        let t = self.trunk_channels;
        let (k, hk) = (self.kernel, self.head_kernel);
        let p = k / 2;
        let mut rows = vec![
            LayerSpec::conv("ip1", 3, self.short_head_channels, hk, hk / 2, 1),
            LayerSpec::conv("ip2", 3, self.long_head_channels, hk, hk / 2, 1),
        ];
        let mut n = 1;
        for stage in 0..5 {
            let blocks = if stage == 4 { 1 } else { 2 };
            for _ in 0..blocks {
                rows.push(LayerSpec::resb(n, t[stage], k));
                n += 1;
            }
            if stage < 4 {
                rows.push(LayerSpec::conv(&layer_name(n), t[stage], t[stage + 1], k, p, 2));
                n += 1;
            }
        }
        for stage in (0..4).rev() {
            rows.push(LayerSpec {
                kind: LayerKind::ConvT,
                ..LayerSpec::conv(&layer_name(n), t[stage + 1], t[stage] / 2, 4, 1, 2)
            });
            n += 1;
            for _ in 0..2 {
                rows.push(LayerSpec::resb(n, t[stage], k));
                n += 1;
            }
        }
        for name in ["op1", "op2"] {
            rows.push(LayerSpec { activation: Activation::TanhUnit, ..LayerSpec::conv(name, t[0], 3, k, p, 1) });
        }
        for stage in (0..4).rev() {
            rows.push(LayerSpec::conv(&layer_name(n), t[stage], t[stage] / 2, k, p, 1));
            n += 1;
        }
        rows
    }

    /// Parameter names and shapes in initialisation order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut conv = |name: String, s: &LayerSpec, transposed: bool| {
            let (a, b) = if transposed { (s.c_in, s.c_out) } else { (s.c_out, s.c_in) };
            out.push((format!("{name}.weight"), vec![a, b, s.kernel, s.kernel]));
            out.push((format!("{name}.bias"), vec![s.c_out]));
        };
        for spec in self.layer_table() {
            match spec.kind {
                LayerKind::ResB => {
                    for d in 1..=self.resblock_convs {
                        conv(format!("{}.d{d}", spec.name), &spec, false);
                    }
                }
                LayerKind::Conv => conv(spec.name.clone(), &spec, false),
                LayerKind::ConvT => conv(spec.name.clone(), &spec, true),
            }
        }
        out
    }

    /// Stable digest of the configuration, used to match weight files.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

fn layer_name(n: usize) -> String {
    format!("layer{n:02}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvT,
    ResB,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    /// `(tanh(x) + 1) / 2`.
    TanhUnit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub pad: usize,
    pub stride: usize,
    pub activation: Activation,
}

impl LayerSpec {
    fn conv(name: &str, c_in: usize, c_out: usize, kernel: usize, pad: usize, stride: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Conv,
            c_in,
            c_out,
            kernel,
            pad,
            stride,
            activation: Activation::LeakyRelu,
        }
    }

    fn resb(n: usize, c: usize, k: usize) -> Self {
        Self { kind: LayerKind::ResB, ..Self::conv(&layer_name(n), c, c, k, k / 2, 1) }
    }

    fn shape(&self) -> ConvShape {
        ConvShape { c_in: self.c_in, c_out: self.c_out, kernel: self.kernel, stride: self.stride, pad: self.pad }
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    convs: Vec<Conv>,
}

#[derive(Clone, Debug)]
struct Layers {
    ip1: Conv,
    ip2: Conv,
    /// Encoder blocks per stage (2, 2, 2, 2, 1).
    enc: Vec<Vec<ResBlock>>,
    down: Vec<Conv>,
    /// Decoder stages, coarsest first: transpose conv, carry-on conv, blocks.
    up: Vec<Conv>,
    carry: Vec<Conv>,
    dec: Vec<Vec<ResBlock>>,
    op1: Conv,
    op2: Conv,
}

/// Network outputs, each `[batch, 3, H, W]`.
#[derive(Clone, Debug)]
pub struct Outputs<V> {
    pub first_half: V,
    pub mid_sharp: V,
    pub second_half: V,
}

/// The decomposition network: configuration, parameters and layer bindings.
#[derive(Clone, Debug)]
pub struct Decomposer {
    config: NetworkConfig,
    store: ParamStore,
    layers: Layers,
}

impl PartialEq for Decomposer {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.store == other.store
    }
}

enum Build<'a> {
    Init(&'a mut ParamStore, &'a mut ChaCha8Rng),
    Bind(&'a ParamStore),
}

impl Build<'_> {
    fn conv(&mut self, name: &str, shape: ConvShape, transposed: bool) -> Result<Conv> {
        Ok(match self {
            Build::Init(store, rng) => Conv::new(store, *rng, name, shape, transposed)?,
            Build::Bind(store) => Conv::bind(store, name, shape, transposed).map_err(|e| Error::Weights(e.to_string()))?,
        })
    }

    fn layer(&mut self, spec: &LayerSpec) -> Result<Conv> {
        self.conv(&spec.name, spec.shape(), spec.kind == LayerKind::ConvT)
    }

    fn resb(&mut self, spec: &LayerSpec, convs: usize) -> Result<ResBlock> {
        let convs = (1..=convs)
            .map(|d| self.conv(&format!("{}.d{d}", spec.name), spec.shape(), false))
            .collect::<Result<_>>()?;
        Ok(ResBlock { convs })
    }
}

fn build_layers(config: &NetworkConfig, mut b: Build<'_>) -> Result<Layers> {
    let table = config.layer_table();
    let spec = |name: &str| table.iter().find(|s| s.name == name).expect("layer in table");
    let ip1 = b.layer(spec("ip1"))?;
    let ip2 = b.layer(spec("ip2"))?;
    let mut n = 1;
    let (mut enc, mut down) = (Vec::new(), Vec::new());
    for stage in 0..5 {
        let blocks = if stage == 4 { 1 } else { 2 };
        let mut stage_blocks = Vec::new();
        for _ in 0..blocks {
            stage_blocks.push(b.resb(spec(&layer_name(n)), config.resblock_convs)?);
            n += 1;
        }
        enc.push(stage_blocks);
        if stage < 4 {
            down.push(b.layer(spec(&layer_name(n)))?);
            n += 1;
        }
    }
    let (mut up, mut dec) = (Vec::new(), Vec::new());
    for _ in 0..4 {
        up.push(b.layer(spec(&layer_name(n)))?);
        n += 1;
        let mut stage_blocks = Vec::new();
        for _ in 0..2 {
            stage_blocks.push(b.resb(spec(&layer_name(n)), config.resblock_convs)?);
            n += 1;
        }
        dec.push(stage_blocks);
    }
    let op1 = b.layer(spec("op1"))?;
    let op2 = b.layer(spec("op2"))?;
    let carry = (0..4)
        .map(|_| {
            let c = b.layer(spec(&layer_name(n)));
            n += 1;
            c
        })
        .collect::<Result<_>>()?;
    Ok(Layers { ip1, ip2, enc, down, up, carry, dec, op1, op2 })
}

impl Decomposer {
    /// Fan-in-scaled uniform initialisation, deterministic in `seed`.
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = build_layers(config, Build::Init(&mut store, &mut rng))?;
        Ok(Self { config: config.clone(), store, layers })
    }

    /// Adopt an existing parameter store, checking every name and shape.
    pub fn from_store(config: &NetworkConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = config.param_layout();
        let names: Vec<(&str, &[usize])> = store.iter().map(|(_, n, t)| (n, t.shape())).collect();
        if names.len() != layout.len() || names.iter().zip(&layout).any(|(a, b)| a.0 != b.0 || a.1 != b.1.as_slice()) {
            let first = layout
                .iter()
                .zip(names.iter().map(Some).chain(std::iter::repeat(None)))
                .find(|(want, got)| got.is_none_or(|g| g.0 != want.0 || g.1 != want.1.as_slice()));
            let detail = match first {
                Some((want, Some(got))) => format!("expected {} {:?}, found {} {:?}", want.0, want.1, got.0, got.1),
                Some((want, None)) => format!("missing {}", want.0),
                None => format!("{} parameter tensors, configuration expects {}", names.len(), layout.len()),
            };
            return Err(Error::Weights(format!("parameters do not match the network configuration: {detail}")));
        }
        let layers = build_layers(config, Build::Bind(&store))?;
        Ok(Self { config: config.clone(), store, layers })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Parameter tensors shared by both shorts (`ip1`) and both halves (`op1`).
    pub fn shared_layer_names(&self) -> [&str; 4] {
        [
            self.store.name(self.layers.ip1.weight),
            self.store.name(self.layers.ip1.bias.expect("bias")),
            self.store.name(self.layers.op1.weight),
            self.store.name(self.layers.op1.bias.expect("bias")),
        ]
    }

    fn conv_act<'a, E: Exec<'a>>(&'a self, ex: &mut E, x: &E::Value, layer: &Conv) -> Result<E::Value> {
        let y = ex.conv(x, &self.store, layer)?;
        Ok(ex.leaky_relu(&y, self.config.leaky_slope))
    }

    fn resb<'a, E: Exec<'a>>(&'a self, ex: &mut E, x: &E::Value, block: &ResBlock) -> Result<E::Value> {
        let mut acc = x.clone();
        let mut last = x.clone();
        for (k, conv) in block.convs.iter().enumerate() {
            last = self.conv_act(ex, &acc, conv)?;
            if k + 1 < block.convs.len() {
                acc = ex.add(&acc, &last)?;
            }
        }
        Ok(ex.add(x, &last)?)
    }

    fn blocks<'a, E: Exec<'a>>(&'a self, ex: &mut E, x: &E::Value, blocks: &[ResBlock]) -> Result<E::Value> {
        let mut x = x.clone();
        for b in blocks {
            x = self.resb(ex, &x, b)?;
        }
        Ok(x)
    }

    /// Run the network on `[batch, 3, H, W]` inputs.
    pub fn forward<'a, E: Exec<'a>>(
        &'a self,
        ex: &mut E,
        batch: usize,
        short_pre: &E::Value,
        long: &E::Value,
        short_post: &E::Value,
    ) -> Result<Outputs<E::Value>> {
        let l = &self.layers;
        let shorts = ex.concat_batch(&[short_pre, short_post])?;
        let h_short = self.conv_act(ex, &shorts, &l.ip1)?;
        let h_pre = ex.slice_batch(&h_short, 0, batch)?;
        let h_post = ex.slice_batch(&h_short, batch, batch)?;
        let h_long = self.conv_act(ex, long, &l.ip2)?;
        let forward_order = ex.concat(&[&h_pre, &h_post, &h_long])?;
        let reversed_order = ex.concat(&[&h_post, &h_pre, &h_long])?;
        let fused = ex.concat_batch(&[&forward_order, &reversed_order])?;

        // Encoder; skips are the fused heads and the outputs of blocks 5, 8, 11.
        let mut skips = vec![fused.clone()];
        let mut x = self.blocks(ex, &fused, &l.enc[0])?;
        for stage in 1..5 {
            x = self.conv_act(ex, &x, &l.down[stage - 1])?;
            x = self.blocks(ex, &x, &l.enc[stage])?;
            if stage < 4 {
                skips.push(x.clone());
            }
        }
        for (i, skip) in skips.iter().rev().enumerate() {
            let up = self.conv_act(ex, &x, &l.up[i])?;
            let carried = self.conv_act(ex, skip, &l.carry[i])?;
            let joined = ex.concat(&[&up, &carried])?;
            x = self.blocks(ex, &joined, &l.dec[i])?;
        }

        let halves = ex.conv(&x, &self.store, &l.op1)?;
        let halves = ex.tanh_unit(&halves);
        let first_half = ex.slice_batch(&halves, 0, batch)?;
        let second_half = ex.slice_batch(&halves, batch, batch)?;
        let fa = ex.slice_batch(&x, 0, batch)?;
        let fb = ex.slice_batch(&x, batch, batch)?;
        let sum = ex.add(&fa, &fb)?;
        let mean = ex.scale(&sum, 0.5);
        let mid = ex.conv(&mean, &self.store, &l.op2)?;
        let mid_sharp = ex.tanh_unit(&mid);
        Ok(Outputs { first_half, mid_sharp, second_half })
    }

    /// Decompose one triplet (inference).
    pub fn decompose(&self, triplet: &ExposureTriplet) -> Result<DecompositionTriple> {
        check_dims(triplet.dims())?;
        let [pre, long, post] = [&triplet.short_pre, &triplet.long, &triplet.short_post].map(|i| images_to_tensor(&[i]));
        let out = self.forward(&mut Eager, 1, &pre, &long, &post)?;
        let (h, w) = triplet.dims();
        let half = match triplet.n_frames_long {
            Some(n) => (n - 1) / 2,
            None => 1,
        };
        let img = |t: &Tensor| tensor_item_to_image(t, 0, h, w);
        DecompositionTriple::new(img(&out.first_half)?, img(&out.mid_sharp)?, img(&out.second_half)?, half, half)
    }

    /// Digest over the configuration and every parameter name and shape.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&self.config).expect("config serializes").as_bytes());
        for (_, name, t) in self.store.iter() {
            h.update(name.as_bytes());
            h.update(format!("{:?}", t.shape()).as_bytes());
        }
        h.finalize()[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Order-independent digest of the parameter values.
    pub fn value_digest(&self) -> String {
        let mut h = Sha256::new();
        for (_, name, t) in self.store.iter() {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize()[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub(crate) fn weight_metadata(&self) -> Metadata {
        let mut meta = Metadata::new();
        meta.insert("format".into(), WEIGHTS_FORMAT.into());
        meta.insert("version".into(), WEIGHTS_VERSION.to_string());
        meta.insert("fingerprint".into(), self.fingerprint());
        meta.insert("config".into(), serde_json::to_string(&self.config).expect("config serializes"));
        meta
    }

    /// Write the weight container and its `.toml` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: Vec<(String, &Tensor)> = self.store.iter().map(|(_, n, t)| (n.to_string(), t)).collect();
        container::write(path, &tensors, &self.weight_metadata())?;
        let sidecar = Sidecar {
            format: WEIGHTS_FORMAT.into(),
            version: WEIGHTS_VERSION,
            fingerprint: self.fingerprint(),
            network: self.config.clone(),
        };
        let side = sidecar_path(path);
        std::fs::write(&side, toml::to_string(&sidecar).expect("sidecar serializes")).map_err(|e| Error::io(&side, e))
    }

    /// Load weights, verifying the version and fingerprint. With `expected`,
    /// the stored configuration must also match it.
    pub fn load(path: &Path, expected: Option<&NetworkConfig>) -> Result<Self> {
        let (meta, tensors) = container::read(path)?;
        let net = Self::from_parts(&meta, tensors)?;
        if let Some(cfg) = expected {
            if cfg != net.config() {
                return Err(Error::Weights(format!(
                    "{}: stored network {} does not match the requested configuration {}",
                    path.display(),
                    net.config.fingerprint(),
                    cfg.fingerprint()
                )));
            }
        }
        let side = sidecar_path(path);
        if side.exists() {
            let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let sc: Sidecar = toml::from_str(&text).map_err(|e| Error::Weights(format!("{}: {}", side.display(), e.message())))?;
            if sc.fingerprint != net.fingerprint() || sc.network != net.config {
                return Err(Error::Weights(format!("{}: sidecar does not describe {}", side.display(), path.display())));
            }
        }
        Ok(net)
    }

    /// Rebuild from decoded container contents.
    pub fn from_parts(meta: &Metadata, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let field = |k: &str| meta.get(k).ok_or_else(|| Error::Weights(format!("missing metadata key {k}")));
        if field("format")? != WEIGHTS_FORMAT {
            return Err(Error::Weights(format!("not a decomposer weight file ({})", field("format")?)));
        }
        if field("version")? != &WEIGHTS_VERSION.to_string() {
            return Err(Error::Weights(format!("unsupported weight version {}", field("version")?)));
        }
        let config: NetworkConfig =
            serde_json::from_str(field("config")?).map_err(|e| Error::Weights(format!("stored config: {e}")))?;
        config.validate()?;
        let mut store = ParamStore::new();
        // Insert in initialisation order so parameter ids agree.
        let mut by_name: std::collections::HashMap<String, Tensor> = tensors.into_iter().collect();
        for (name, _) in config.param_layout() {
            let t = by_name.remove(&name).ok_or_else(|| Error::Weights(format!("missing parameter {name}")))?;
            store.insert(name, t).map_err(|e| Error::Weights(e.to_string()))?;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Weights(format!("unexpected parameter {extra}")));
        }
        let net = Self::from_store(&config, store)?;
        if field("fingerprint")? != &net.fingerprint() {
            return Err(Error::Weights("fingerprint does not match stored parameters".into()));
        }
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    format: String,
    version: u32,
    fingerprint: String,
    network: NetworkConfig,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

pub fn check_dims((h, w): (usize, usize)) -> Result<()> {
    if h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
        return Err(Error::Shape(format!("{h}x{w} input is not a multiple of {SIZE_MULTIPLE} in both dimensions")));
    }
    Ok(())
}

/// Stack images into an NCHW tensor.
pub fn images_to_tensor(images: &[&Image]) -> Tensor {
    let (h, w) = images[0].dims();
    let plane = h * w;
    let mut data = vec![0.0f32; images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        assert_eq!(img.dims(), (h, w), "batch images must share dimensions");
        let base = n * 3 * plane;
        for (p, px) in img.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[base + c * plane + p] = px[c];
            }
        }
    }
    Tensor::from_vec(&[images.len(), 3, h, w], data).expect("shape matches")
}

/// Image `n` of an NCHW tensor, clamped into `[0, 1]`.
pub fn tensor_item_to_image(t: &Tensor, n: usize, h: usize, w: usize) -> Result<Image> {
    let item = t.item(n);
    let plane = h * w;
    if item.len() != 3 * plane {
        return Err(Error::Shape(format!("tensor item of {} values is not 3x{h}x{w}", item.len())));
    }
    let mut data = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            data.push(item[c * plane + p]);
        }
    }
    Image::from_clamped(h, w, data)
}

/// One step of a shape-only execution trace.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceEvent {
    Conv { param: String, c_in: usize, c_out: usize, kernel: usize, stride: usize, pad: usize, transposed: bool, out: Vec<usize> },
    LeakyRelu { slope: f32 },
    TanhUnit,
    Other(&'static str),
}

/// Executor that propagates shapes only and records every operation, for
/// auditing the wiring of full-size configurations cheaply.
#[derive(Debug, Default)]
pub struct ShapeTrace {
    pub events: Vec<TraceEvent>,
}

impl<'a> Exec<'a> for ShapeTrace {
    type Value = Vec<usize>;

    fn conv(&mut self, x: &Vec<usize>, store: &'a ParamStore, layer: &Conv) -> photoseq_tensor::Result<Vec<usize>> {
        let shape_err = |m: String| photoseq_tensor::TensorError::Shape(m);
        if x.len() != 4 || x[1] != layer.c_in {
            return Err(shape_err(format!("{} expects {} channels, got {x:?}", store.name(layer.weight), layer.c_in)));
        }
        let (k, s, p) = (layer.kernel, layer.stride, layer.pad);
        let size = |d: usize| {
            if layer.transposed {
                (d - 1) * s + k - 2 * p
            } else {
                (d + 2 * p - k) / s + 1
            }
        };
        let out = vec![x[0], layer.c_out, size(x[2]), size(x[3])];
        self.events.push(TraceEvent::Conv {
            param: store.name(layer.weight).trim_end_matches(".weight").to_string(),
            c_in: layer.c_in,
            c_out: layer.c_out,
            kernel: k,
            stride: s,
            pad: p,
            transposed: layer.transposed,
            out: out.clone(),
        });
        Ok(out)
    }

    fn leaky_relu(&mut self, x: &Vec<usize>, slope: f32) -> Vec<usize> {
        self.events.push(TraceEvent::LeakyRelu { slope });
        x.clone()
    }

    fn tanh_unit(&mut self, x: &Vec<usize>) -> Vec<usize> {
        self.events.push(TraceEvent::TanhUnit);
        x.clone()
    }

    fn add(&mut self, a: &Vec<usize>, b: &Vec<usize>) -> photoseq_tensor::Result<Vec<usize>> {
        if a != b {
            return Err(photoseq_tensor::TensorError::Shape(format!("add {a:?} + {b:?}")));
        }
        self.events.push(TraceEvent::Other("add"));
        Ok(a.clone())
    }

    fn scale(&mut self, x: &Vec<usize>, _s: f32) -> Vec<usize> {
        self.events.push(TraceEvent::Other("scale"));
        x.clone()
    }

    fn concat(&mut self, xs: &[&Vec<usize>]) -> photoseq_tensor::Result<Vec<usize>> {
        let mut out = xs[0].clone();
        out[1] = xs.iter().map(|x| x[1]).sum();
        if xs.iter().any(|x| (x[0], x[2], x[3]) != (out[0], out[2], out[3])) {
            return Err(photoseq_tensor::TensorError::Shape(format!("concat {xs:?}")));
        }
        self.events.push(TraceEvent::Other("concat"));
        Ok(out)
    }

    fn concat_batch(&mut self, xs: &[&Vec<usize>]) -> photoseq_tensor::Result<Vec<usize>> {
        let mut out = xs[0].clone();
        out[0] = xs.iter().map(|x| x[0]).sum();
        self.events.push(TraceEvent::Other("concat_batch"));
        Ok(out)
    }

    fn slice_batch(&mut self, x: &Vec<usize>, _start: usize, len: usize) -> photoseq_tensor::Result<Vec<usize>> {
        let mut out = x.clone();
        out[0] = len;
        self.events.push(TraceEvent::Other("slice_batch"));
        Ok(out)
    }

    fn max_pool2(&mut self, x: &Vec<usize>) -> photoseq_tensor::Result<Vec<usize>> {
        Ok(vec![x[0], x[1], x[2] / 2, x[3] / 2])
    }

    fn mean_pool(&mut self, x: &Vec<usize>) -> photoseq_tensor::Result<Vec<usize>> {
        Ok(vec![x[0], x[1], 1, 1])
    }

    fn channel_affine(&mut self, x: &Vec<usize>, _: &[f32], _: &[f32]) -> photoseq_tensor::Result<Vec<usize>> {
        Ok(x.clone())
    }
}

impl Decomposer {
    /// Shape-only trace of a forward pass at `h`×`w`.
    pub fn trace(&self, h: usize, w: usize) -> Result<Vec<TraceEvent>> {
        let mut t = ShapeTrace::default();
        let x = vec![1, 3, h, w];
        let out = self.forward(&mut t, 1, &x, &x, &x)?;
        for o in [&out.first_half, &out.mid_sharp, &out.second_half] {
            if o != &x {
                return Err(Error::Shape(format!("output shape {o:?} differs from input {x:?}")));
            }
        }
        Ok(t.events)
    }
}
