//! The noise-prediction network ε̂ = θ(a_t, t, o).
//!
//! Two architectures share one observation encoder:
//!
//! * **Transformer**: three tokens `[observation, timestep, action]` with
//!   full self-attention, pre-norm blocks and GELU MLPs; the output head
//!   reads the final action token directly, with no closing norm, so the
//!   prediction can grow linearly with `a_t`.
//! * **Mlp**: the concatenation `[observation, sinusoid(t), a_t]` through
//!   GELU hidden layers.
//!
//! The observation encoder cuts the 128×128×3 image into non-overlapping
//! `patch × patch × 3` patches, projects each with one shared linear map
//! and pools the projections with learned per-patch, per-channel weights
//! (initialized to a plain mean).
//!
//! Parameters hold single-precision values (rounded on init and after every
//! optimizer step) while all arithmetic runs in double precision.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::nn::{self, LnCache};
use crate::observation::{ImageGrid, OBS_CHANNELS, OBS_SIZE};
use crate::pose::ACTION_DIM;
use crate::schedule::NoiseSchedule;

const TOKENS: usize = 3;
const OBS_TOKEN: usize = 0;
const TIME_TOKEN: usize = 1;
const ACTION_TOKEN: usize = 2;
const MLP_RATIO: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Transformer,
    Mlp,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Transformer => "transformer",
            Arch::Mlp => "mlp",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(Arch::Transformer),
            "mlp" => Ok(Arch::Mlp),
            other => Err(Error::Config(format!(
                "unknown arch `{other}` (transformer|mlp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub arch: Arch,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub patch_size: usize,
    pub max_timestep: usize,
    pub mlp_hidden: Vec<usize>,
    /// Feed the network `a_t / √(1 − ᾱ_t)` instead of `a_t`. Needs the
    /// noise schedule (see [`Denoiser::attach_schedule`]).
    pub input_scaling: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Transformer,
            embed_dim: 64,
            num_layers: 2,
            num_heads: 4,
            patch_size: 16,
            max_timestep: 50,
            mlp_hidden: vec![256, 256],
            input_scaling: true,
        }
    }
}

/// How a parameter tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in ±1/√fan_in.
    Uniform {
        fan_in: usize,
    },
    Const(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return bad(format!(
                "embed_dim must be positive and even, got {}",
                self.embed_dim
            ));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return bad(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.patch_size == 0 || OBS_SIZE % self.patch_size != 0 {
            return bad(format!(
                "patch_size {} must divide {OBS_SIZE}",
                self.patch_size
            ));
        }
        if self.max_timestep == 0 {
            return bad("max_timestep must be positive".into());
        }
        if self.arch == Arch::Mlp && (self.mlp_hidden.is_empty() || self.mlp_hidden.contains(&0)) {
            return bad("mlp_hidden needs at least one positive width".into());
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (OBS_SIZE / self.patch_size).pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * OBS_CHANNELS
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let e = self.embed_dim;
        let mut specs = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, init: Init| {
            specs.push(ParamSpec { name, shape, init })
        };
        let uni = |fan_in| Init::Uniform { fan_in };
        let zeros = Init::Const(0.0);

        push(
            "obs.center".into(),
            vec![self.num_patches(), self.patch_dim()],
            Init::Const(0.0),
        );
        push(
            "obs.patch.weight".into(),
            vec![e, self.patch_dim()],
            uni(self.patch_dim()),
        );
        push("obs.patch.bias".into(), vec![e], zeros);
        push(
            "obs.pool".into(),
            vec![self.num_patches(), e],
            Init::Const(1.0 / self.num_patches() as f64),
        );
        match self.arch {
            Arch::Transformer => {
                let h = MLP_RATIO * e;
                push("time.weight".into(), vec![e, e], uni(e));
                push("time.bias".into(), vec![e], zeros);
                push("action.weight".into(), vec![e, ACTION_DIM], uni(ACTION_DIM));
                push("action.bias".into(), vec![e], zeros);
                for l in 0..self.num_layers {
                    let p = |s: &str| format!("layers.{l}.{s}");
                    push(p("ln1.gamma"), vec![e], Init::Const(1.0));
                    push(p("ln1.beta"), vec![e], zeros);
                    push(p("attn.qkv.weight"), vec![3 * e, e], uni(e));
                    push(p("attn.qkv.bias"), vec![3 * e], zeros);
                    push(p("attn.out.weight"), vec![e, e], uni(e));
                    push(p("attn.out.bias"), vec![e], zeros);
                    push(p("ln2.gamma"), vec![e], Init::Const(1.0));
                    push(p("ln2.beta"), vec![e], zeros);
                    push(p("mlp.fc1.weight"), vec![h, e], uni(e));
                    push(p("mlp.fc1.bias"), vec![h], zeros);
                    push(p("mlp.fc2.weight"), vec![e, h], uni(h));
                    push(p("mlp.fc2.bias"), vec![e], zeros);
                }
                push("head.weight".into(), vec![ACTION_DIM, e], uni(e));
                push("head.bias".into(), vec![ACTION_DIM], zeros);
            }
            Arch::Mlp => {
                let mut fan_in = 2 * e + ACTION_DIM;
                for (i, &w) in self.mlp_hidden.iter().enumerate() {
                    push(format!("mlp.{i}.weight"), vec![w, fan_in], uni(fan_in));
                    push(format!("mlp.{i}.bias"), vec![w], zeros);
                    fan_in = w;
                }
                push("head.weight".into(), vec![ACTION_DIM, fan_in], uni(fan_in));
                push("head.bias".into(), vec![ACTION_DIM], zeros);
            }
        }
        specs
    }

    /// Closed-form parameter count.
    ///
    /// Encoder: `N·K + E·K + E + N·E` for patch dim `K` and `N` patches.
    /// Transformer adds `E² + E` (time) `+ 36E + E` (action)
    /// `+ L·(12E² + 13E)` (blocks) `+ 36E + 36` (head).
    /// Mlp adds `Σ (in_i·h_i + h_i)` starting from `in_0 = 2E + 36`,
    /// then `36·h_last + 36`.
    pub fn param_count(&self) -> usize {
        let e = self.embed_dim;
        let a = ACTION_DIM;
        let (n, k) = (self.num_patches(), self.patch_dim());
        let encoder = n * k + e * k + e + n * e;
        match self.arch {
            Arch::Transformer => {
                encoder
                    + (e * e + e)
                    + (a * e + e)
                    + self.num_layers * (12 * e * e + 13 * e)
                    + (a * e + a)
            }
            Arch::Mlp => {
                let mut total = encoder;
                let mut fan_in = 2 * e + a;
                for &h in &self.mlp_hidden {
                    total += fan_in * h + h;
                    fan_in = h;
                }
                total + a * fan_in + a
            }
        }
    }

    pub fn write_kv(&self, doc: &mut KvDoc) {
        doc.set("model.arch", self.arch);
        doc.set("model.embed_dim", self.embed_dim);
        doc.set("model.num_layers", self.num_layers);
        doc.set("model.num_heads", self.num_heads);
        doc.set("model.patch_size", self.patch_size);
        doc.set("model.max_timestep", self.max_timestep);
        doc.set(
            "model.mlp_hidden",
            self.mlp_hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        doc.set("model.input_scaling", self.input_scaling);
    }

    pub fn read_kv(doc: &KvDoc) -> std::result::Result<Self, String> {
        let hidden = doc.require("model.mlp_hidden")?;
        let mlp_hidden = hidden
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| format!("bad mlp width `{s}`"))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            arch: doc
                .require("model.arch")?
                .parse()
                .map_err(|e: Error| e.to_string())?,
            embed_dim: doc.parse_value("model.embed_dim")?,
            num_layers: doc.parse_value("model.num_layers")?,
            num_heads: doc.parse_value("model.num_heads")?,
            patch_size: doc.parse_value("model.patch_size")?,
            max_timestep: doc.parse_value("model.max_timestep")?,
            mlp_hidden,
            input_scaling: doc.parse_value("model.input_scaling")?,
        })
    }
}

/// A named, shaped block of parameters (or gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }
}

/// Ordered map from parameter name to tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    entries: Vec<(String, Tensor)>,
}

impl DenoiserParams {
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        Self { entries }
    }

    pub fn zeros_for(config: &DenoiserConfig) -> Self {
        Self {
            entries: config
                .param_specs()
                .into_iter()
                .map(|s| (s.name, Tensor::zeros(s.shape)))
                .collect(),
        }
    }

    /// Seeded initialization, rounded to single precision.
    pub fn init(config: &DenoiserConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = config
            .param_specs()
            .into_iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data = match s.init {
                    Init::Uniform { fan_in } => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                    }
                    Init::Const(v) => vec![v; n],
                };
                (
                    s.name,
                    Tensor {
                        shape: s.shape,
                        data,
                    },
                )
            })
            .collect();
        let mut params = Self { entries };
        params.round_to_single();
        params
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.data.len()).sum()
    }

    /// Name of the first block holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, t)| t.data.iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n.as_str())
    }

    pub fn round_to_single(&mut self) {
        for (_, t) in self.entries.iter_mut() {
            for v in t.data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.entries.iter_mut() {
            for v in t.data.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// `self += other`, matching blocks by position.
    pub fn add_assign(&mut self, other: &DenoiserParams) {
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    fn data(&self, i: usize) -> &[f64] {
        &self.entries[i].1.data
    }

    fn data_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.entries[i].1.data
    }

    fn pair_mut(&mut self, i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
        assert!(i != j);
        if i < j {
            let (lo, hi) = self.entries.split_at_mut(j);
            (&mut lo[i].1.data, &mut hi[0].1.data)
        } else {
            let (lo, hi) = self.entries.split_at_mut(i);
            (&mut hi[0].1.data, &mut lo[j].1.data)
        }
    }
}

/// Observation cut into patches, `num_patches × patch_dim`, patch-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patches {
    data: Vec<f32>,
    num_patches: usize,
    patch_dim: usize,
}

impl Patches {
    /// Patch `(py, px)` is row `py * (128 / patch) + px`; inside a patch,
    /// values are ordered `(dy, dx, channel)`.
    pub fn extract(obs: &ImageGrid, patch_size: usize) -> Result<Self> {
        if obs.width() != OBS_SIZE || obs.height() != OBS_SIZE || obs.channels() != OBS_CHANNELS {
            return Err(Error::Dimension(format!(
                "observation must be {OBS_SIZE}x{OBS_SIZE}x{OBS_CHANNELS}, got {}x{}x{}",
                obs.width(),
                obs.height(),
                obs.channels()
            )));
        }
        if patch_size == 0 || OBS_SIZE % patch_size != 0 {
            return Err(Error::Config(format!(
                "patch_size {patch_size} must divide {OBS_SIZE}"
            )));
        }
        let per_side = OBS_SIZE / patch_size;
        let patch_dim = patch_size * patch_size * OBS_CHANNELS;
        let mut data = Vec::with_capacity(per_side * per_side * patch_dim);
        let src = obs.values();
        for py in 0..per_side {
            for px in 0..per_side {
                for dy in 0..patch_size {
                    let y = py * patch_size + dy;
                    let start = (y * OBS_SIZE + px * patch_size) * OBS_CHANNELS;
                    data.extend_from_slice(&src[start..start + patch_size * OBS_CHANNELS]);
                }
            }
        }
        Ok(Self {
            data,
            num_patches: per_side * per_side,
            patch_dim,
        })
    }

    pub fn num_patches(&self) -> usize {
        self.num_patches
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_dim
    }

    /// All patch values, patch-major.
    pub fn values(&self) -> &[f32] {
        &self.data
    }

    /// Element-wise mean of a set of patch grids, in `obs.center` layout.
    pub fn mean<'a, I: IntoIterator<Item = &'a Patches>>(items: I) -> Option<Vec<f64>> {
        let mut sum: Option<Vec<f64>> = None;
        let mut n = 0usize;
        for p in items {
            let acc = sum.get_or_insert_with(|| vec![0.0; p.data.len()]);
            if acc.len() != p.data.len() {
                return None;
            }
            acc.iter_mut()
                .zip(&p.data)
                .for_each(|(a, &v)| *a += v as f64);
            n += 1;
        }
        sum.map(|mut s| {
            s.iter_mut().for_each(|v| *v /= n as f64);
            s
        })
    }

    fn patch_f64(&self, p: usize, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend(
            self.data[p * self.patch_dim..(p + 1) * self.patch_dim]
                .iter()
                .map(|&v| v as f64),
        );
    }
}

/// The pooled observation token, reusable across all timesteps of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsEncoding {
    token: Vec<f64>,
}

impl ObsEncoding {
    pub fn token(&self) -> &[f64] {
        &self.token
    }
}

struct EncoderIdx {
    center: usize,
    weight: usize,
    bias: usize,
    pool: usize,
}

struct BlockIdx {
    ln1_g: usize,
    ln1_b: usize,
    qkv_w: usize,
    qkv_b: usize,
    out_w: usize,
    out_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
}

enum Layout {
    Transformer {
        time_w: usize,
        time_b: usize,
        act_w: usize,
        act_b: usize,
        blocks: Vec<BlockIdx>,
        head_w: usize,
        head_b: usize,
    },
    Mlp {
        hidden: Vec<(usize, usize)>,
        head_w: usize,
        head_b: usize,
    },
}

/// A configured network with its parameters.
pub struct Denoiser {
    config: DenoiserConfig,
    params: DenoiserParams,
    enc: EncoderIdx,
    layout: Layout,
    input_scale: Option<Vec<f64>>,
}

impl Clone for Denoiser {
    fn clone(&self) -> Self {
        let mut m =
            Denoiser::new(self.config.clone(), self.params.clone()).expect("already validated");
        m.input_scale = self.input_scale.clone();
        m
    }
}

impl fmt::Debug for Denoiser {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Denoiser")
            .field("config", &self.config)
            .field("scalars", &self.params.scalar_count())
            .finish()
    }
}

impl Denoiser {
    /// Checks that `params` has exactly the blocks and shapes `config` implies.
    pub fn new(config: DenoiserConfig, params: DenoiserParams) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != params.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameter blocks, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(params.entries()) {
            if spec.name != *name
                || spec.shape != t.shape
                || t.data.len() != t.shape.iter().product()
            {
                return Err(Error::Dimension(format!(
                    "parameter `{name}` {:?} does not match expected `{}` {:?}",
                    t.shape, spec.name, spec.shape
                )));
            }
        }
        let idx = |n: &str| params.index_of(n).expect("validated above");
        let enc = EncoderIdx {
            center: idx("obs.center"),
            weight: idx("obs.patch.weight"),
            bias: idx("obs.patch.bias"),
            pool: idx("obs.pool"),
        };
        let layout = match config.arch {
            Arch::Transformer => Layout::Transformer {
                time_w: idx("time.weight"),
                time_b: idx("time.bias"),
                act_w: idx("action.weight"),
                act_b: idx("action.bias"),
                blocks: (0..config.num_layers)
                    .map(|l| {
                        let b = |s: &str| idx(&format!("layers.{l}.{s}"));
                        BlockIdx {
                            ln1_g: b("ln1.gamma"),
                            ln1_b: b("ln1.beta"),
                            qkv_w: b("attn.qkv.weight"),
                            qkv_b: b("attn.qkv.bias"),
                            out_w: b("attn.out.weight"),
                            out_b: b("attn.out.bias"),
                            ln2_g: b("ln2.gamma"),
                            ln2_b: b("ln2.beta"),
                            fc1_w: b("mlp.fc1.weight"),
                            fc1_b: b("mlp.fc1.bias"),
                            fc2_w: b("mlp.fc2.weight"),
                            fc2_b: b("mlp.fc2.bias"),
                        }
                    })
                    .collect(),
                head_w: idx("head.weight"),
                head_b: idx("head.bias"),
            },
            Arch::Mlp => Layout::Mlp {
                hidden: (0..config.mlp_hidden.len())
                    .map(|i| {
                        (
                            idx(&format!("mlp.{i}.weight")),
                            idx(&format!("mlp.{i}.bias")),
                        )
                    })
                    .collect(),
                head_w: idx("head.weight"),
                head_b: idx("head.bias"),
            },
        };
        Ok(Self {
            config,
            params,
            enc,
            layout,
            input_scale: None,
        })
    }

    /// Binds the schedule whose `ᾱ` table drives input scaling. Required
    /// before prediction when `input_scaling` is on; harmless otherwise.
    pub fn attach_schedule(&mut self, schedule: &NoiseSchedule) -> Result<()> {
        self.input_scale = Some(input_scale_table(&self.config, schedule)?);
        Ok(())
    }

    fn scaled_input(&self, noisy: &[f64], t: usize) -> Result<[f64; ACTION_DIM]> {
        let mut x = [0.0; ACTION_DIM];
        x.copy_from_slice(noisy);
        if self.config.input_scaling {
            let table = self.input_scale.as_ref().ok_or_else(|| {
                Error::Config("input scaling is on but no noise schedule is attached".into())
            })?;
            x.iter_mut().for_each(|v| *v *= table[t - 1]);
        }
        Ok(x)
    }

    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = DenoiserParams::init(&config, seed);
        Self::new(config, params)
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &DenoiserParams {
        &self.params
    }

    pub fn into_params(self) -> DenoiserParams {
        self.params
    }

    /// Mutable access for optimizers; block names and shapes must not change.
    pub fn params_mut(&mut self) -> &mut DenoiserParams {
        &mut self.params
    }

    fn check_finite(&self) -> Result<()> {
        match self.params.first_non_finite() {
            Some(name) => Err(Error::Numeric(format!(
                "parameter block `{name}` is not finite"
            ))),
            None => Ok(()),
        }
    }

    fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.config.max_timestep {
            return Err(Error::Index {
                index: t as i64,
                lo: 1,
                hi: self.config.max_timestep as i64,
            });
        }
        Ok(())
    }

    pub fn patches(&self, obs: &ImageGrid) -> Result<Patches> {
        Patches::extract(obs, self.config.patch_size)
    }

    pub fn encode_obs(&self, obs: &ImageGrid) -> Result<ObsEncoding> {
        let patches = self.patches(obs)?;
        self.encode_patches(&patches)
    }

    pub fn encode_patches(&self, patches: &Patches) -> Result<ObsEncoding> {
        self.check_finite()?;
        if patches.num_patches() != self.config.num_patches()
            || patches.patch_dim() != self.config.patch_dim()
        {
            return Err(Error::Dimension(
                "patch layout does not match the model".into(),
            ));
        }
        Ok(ObsEncoding {
            token: self.encoder_forward(patches, None),
        })
    }

    /// ε̂ for one noisy action at timestep `t` given an observation image.
    pub fn predict_noise(
        &self,
        noisy: &[f64],
        t: usize,
        obs: &ImageGrid,
    ) -> Result<[f64; ACTION_DIM]> {
        let enc = self.encode_obs(obs)?;
        self.predict_encoded(noisy, t, &enc)
    }

    pub fn predict_encoded(
        &self,
        noisy: &[f64],
        t: usize,
        enc: &ObsEncoding,
    ) -> Result<[f64; ACTION_DIM]> {
        if noisy.len() != ACTION_DIM {
            return Err(Error::Dimension(format!(
                "noisy action has {} values",
                noisy.len()
            )));
        }
        if enc.token.len() != self.config.embed_dim {
            return Err(Error::Dimension(
                "observation encoding width mismatch".into(),
            ));
        }
        self.check_timestep(t)?;
        self.check_finite()?;
        let x = self.scaled_input(noisy, t)?;
        let (out, _) = self.head_forward(&enc.token, t, &x, false);
        Ok(out)
    }

    fn encoder_forward(&self, patches: &Patches, proj_out: Option<&mut Vec<f64>>) -> Vec<f64> {
        let e = self.config.embed_dim;
        let k = self.config.patch_dim();
        let w = self.params.data(self.enc.weight);
        let b = self.params.data(self.enc.bias);
        let g = self.params.data(self.enc.pool);
        let center = self.params.data(self.enc.center);
        let mut token = vec![0.0; e];
        let mut proj = vec![0.0; patches.num_patches() * e];
        let mut x = Vec::with_capacity(k);
        for p in 0..patches.num_patches() {
            patches.patch_f64(p, &mut x);
            nn::axpy(-1.0, &center[p * k..(p + 1) * k], &mut x);
            let row = &mut proj[p * e..(p + 1) * e];
            for j in 0..e {
                row[j] = nn::dot(&w[j * k..(j + 1) * k], &x) + b[j];
                token[j] += g[p * e + j] * row[j];
            }
        }
        if let Some(out) = proj_out {
            *out = proj;
        }
        token
    }

    fn encoder_backward(
        &self,
        patches: &Patches,
        proj: &[f64],
        dtoken: &[f64],
        grads: &mut DenoiserParams,
    ) {
        let e = self.config.embed_dim;
        let k = self.config.patch_dim();
        let g = self.params.data(self.enc.pool);
        {
            let dg = grads.data_mut(self.enc.pool);
            for p in 0..patches.num_patches() {
                for j in 0..e {
                    dg[p * e + j] += dtoken[j] * proj[p * e + j];
                }
            }
        }
        {
            let db = grads.data_mut(self.enc.bias);
            for p in 0..patches.num_patches() {
                for j in 0..e {
                    db[j] += dtoken[j] * g[p * e + j];
                }
            }
        }
        let w = self.params.data(self.enc.weight);
        let center = self.params.data(self.enc.center);
        let mut x = Vec::with_capacity(k);
        let mut dx = vec![0.0; k];
        for p in 0..patches.num_patches() {
            patches.patch_f64(p, &mut x);
            nn::axpy(-1.0, &center[p * k..(p + 1) * k], &mut x);
            dx.iter_mut().for_each(|v| *v = 0.0);
            let dw = grads.data_mut(self.enc.weight);
            for j in 0..e {
                let c = dtoken[j] * g[p * e + j];
                if c != 0.0 {
                    nn::axpy(c, &x, &mut dw[j * k..(j + 1) * k]);
                    nn::axpy(c, &w[j * k..(j + 1) * k], &mut dx);
                }
            }
            let dc = grads.data_mut(self.enc.center);
            nn::axpy(-1.0, &dx, &mut dc[p * k..(p + 1) * k]);
        }
    }

    fn head_forward(
        &self,
        obs_token: &[f64],
        t: usize,
        noisy: &[f64],
        keep: bool,
    ) -> ([f64; ACTION_DIM], Option<HeadCache>) {
        match &self.layout {
            Layout::Transformer { .. } => {
                let (out, cache) = self.transformer_forward(obs_token, t, noisy, keep);
                (out, cache.map(HeadCache::Transformer))
            }
            Layout::Mlp { .. } => {
                let (out, cache) = self.mlp_forward(obs_token, t, noisy, keep);
                (out, cache.map(HeadCache::Mlp))
            }
        }
    }

    fn transformer_forward(
        &self,
        obs_token: &[f64],
        t: usize,
        noisy: &[f64],
        keep: bool,
    ) -> ([f64; ACTION_DIM], Option<TfCache>) {
        let Layout::Transformer {
            time_w,
            time_b,
            act_w,
            act_b,
            blocks,
            head_w,
            head_b,
        } = &self.layout
        else {
            unreachable!()
        };
        let e = self.config.embed_dim;
        let p = &self.params;
        let temb = nn::timestep_embedding(t, e);

        let mut x = vec![0.0; TOKENS * e];
        x[..e].copy_from_slice(obs_token);
        nn::linear(p.data(*time_w), p.data(*time_b), &temb, &mut x[e..2 * e]);
        nn::linear(p.data(*act_w), p.data(*act_b), noisy, &mut x[2 * e..]);

        let mut block_caches = Vec::new();
        for bi in blocks {
            let (next, cache) = self.block_forward(bi, &x);
            if keep {
                block_caches.push(cache);
            }
            x = next;
        }

        let yf = x[ACTION_TOKEN * e..].to_vec();
        let mut out = [0.0; ACTION_DIM];
        nn::linear(p.data(*head_w), p.data(*head_b), &yf, &mut out);

        let cache = keep.then(|| TfCache {
            temb,
            noisy: noisy.to_vec(),
            blocks: block_caches,
            yf,
        });
        (out, cache)
    }

    fn block_forward(&self, bi: &BlockIdx, x_in: &[f64]) -> (Vec<f64>, BlockCache) {
        let e = self.config.embed_dim;
        let heads = self.config.num_heads;
        let d = e / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let p = &self.params;

        let mut h1 = vec![0.0; TOKENS * e];
        let mut ln1 = Vec::with_capacity(TOKENS);
        for s in 0..TOKENS {
            ln1.push(nn::layer_norm(
                &x_in[s * e..(s + 1) * e],
                p.data(bi.ln1_g),
                p.data(bi.ln1_b),
                &mut h1[s * e..(s + 1) * e],
            ));
        }
        let mut qkv = vec![0.0; TOKENS * 3 * e];
        for s in 0..TOKENS {
            nn::linear(
                p.data(bi.qkv_w),
                p.data(bi.qkv_b),
                &h1[s * e..(s + 1) * e],
                &mut qkv[s * 3 * e..(s + 1) * 3 * e],
            );
        }
        let mut probs = vec![0.0; heads * TOKENS * TOKENS];
        let mut ctx = vec![0.0; TOKENS * e];
        for h in 0..heads {
            for i in 0..TOKENS {
                let q = &qkv[i * 3 * e + h * d..i * 3 * e + (h + 1) * d];
                let row = &mut probs[(h * TOKENS + i) * TOKENS..(h * TOKENS + i + 1) * TOKENS];
                for j in 0..TOKENS {
                    let k = &qkv[j * 3 * e + e + h * d..j * 3 * e + e + (h + 1) * d];
                    row[j] = nn::dot(q, k) * scale;
                }
                nn::softmax_in_place(row);
                for j in 0..TOKENS {
                    let v = &qkv[j * 3 * e + 2 * e + h * d..j * 3 * e + 2 * e + (h + 1) * d];
                    nn::axpy(row[j], v, &mut ctx[i * e + h * d..i * e + (h + 1) * d]);
                }
            }
        }
        let mut x_mid = x_in.to_vec();
        let mut tmp = vec![0.0; e];
        for s in 0..TOKENS {
            nn::linear(
                p.data(bi.out_w),
                p.data(bi.out_b),
                &ctx[s * e..(s + 1) * e],
                &mut tmp,
            );
            nn::axpy(1.0, &tmp, &mut x_mid[s * e..(s + 1) * e]);
        }

        let hdim = MLP_RATIO * e;
        let mut h2 = vec![0.0; TOKENS * e];
        let mut ln2 = Vec::with_capacity(TOKENS);
        for s in 0..TOKENS {
            ln2.push(nn::layer_norm(
                &x_mid[s * e..(s + 1) * e],
                p.data(bi.ln2_g),
                p.data(bi.ln2_b),
                &mut h2[s * e..(s + 1) * e],
            ));
        }
        let mut u = vec![0.0; TOKENS * hdim];
        let mut gu = vec![0.0; TOKENS * hdim];
        let mut x_out = x_mid.clone();
        for s in 0..TOKENS {
            let us = &mut u[s * hdim..(s + 1) * hdim];
            nn::linear(
                p.data(bi.fc1_w),
                p.data(bi.fc1_b),
                &h2[s * e..(s + 1) * e],
                us,
            );
            for (g, &v) in gu[s * hdim..(s + 1) * hdim].iter_mut().zip(us.iter()) {
                *g = nn::gelu(v);
            }
            nn::linear(
                p.data(bi.fc2_w),
                p.data(bi.fc2_b),
                &gu[s * hdim..(s + 1) * hdim],
                &mut tmp,
            );
            nn::axpy(1.0, &tmp, &mut x_out[s * e..(s + 1) * e]);
        }

        let cache = BlockCache {
            ln1,
            h1,
            qkv,
            probs,
            ctx,
            ln2,
            h2,
            u,
            gu,
        };
        (x_out, cache)
    }

    fn mlp_forward(
        &self,
        obs_token: &[f64],
        t: usize,
        noisy: &[f64],
        keep: bool,
    ) -> ([f64; ACTION_DIM], Option<MlpCache>) {
        let Layout::Mlp {
            hidden,
            head_w,
            head_b,
        } = &self.layout
        else {
            unreachable!()
        };
        let e = self.config.embed_dim;
        let p = &self.params;
        let mut z = Vec::with_capacity(2 * e + ACTION_DIM);
        z.extend_from_slice(obs_token);
        z.extend(nn::timestep_embedding(t, e));
        z.extend_from_slice(noisy);

        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        for (i, &(w, b)) in hidden.iter().enumerate() {
            let mut u = vec![0.0; self.config.mlp_hidden[i]];
            nn::linear(p.data(w), p.data(b), &z, &mut u);
            let next: Vec<f64> = u.iter().map(|&v| nn::gelu(v)).collect();
            if keep {
                inputs.push(std::mem::take(&mut z));
                pre.push(u);
            }
            z = next;
        }
        let mut out = [0.0; ACTION_DIM];
        nn::linear(p.data(*head_w), p.data(*head_b), &z, &mut out);
        let cache = keep.then(|| MlpCache {
            inputs,
            pre,
            last: z,
        });
        (out, cache)
    }

    /// Backpropagates `dout` through the head; returns d(obs token).
    fn head_backward(
        &self,
        cache: &HeadCache,
        dout: &[f64],
        grads: &mut DenoiserParams,
    ) -> Vec<f64> {
        match (cache, &self.layout) {
            (HeadCache::Transformer(c), Layout::Transformer { .. }) => {
                self.transformer_backward(c, dout, grads)
            }
            (HeadCache::Mlp(c), Layout::Mlp { .. }) => self.mlp_backward(c, dout, grads),
            _ => unreachable!("cache built by the same layout"),
        }
    }

    fn transformer_backward(
        &self,
        c: &TfCache,
        dout: &[f64],
        grads: &mut DenoiserParams,
    ) -> Vec<f64> {
        let Layout::Transformer {
            time_w,
            time_b,
            act_w,
            act_b,
            blocks,
            head_w,
            head_b,
        } = &self.layout
        else {
            unreachable!()
        };
        let e = self.config.embed_dim;
        let p = &self.params;

        let mut dyf = vec![0.0; e];
        {
            let (dw, db) = grads.pair_mut(*head_w, *head_b);
            nn::linear_backward(p.data(*head_w), &c.yf, dout, dw, db, Some(&mut dyf));
        }
        let mut dx = vec![0.0; TOKENS * e];
        dx[ACTION_TOKEN * e..].copy_from_slice(&dyf);
        for (bi, bc) in blocks.iter().zip(&c.blocks).rev() {
            dx = self.block_backward(bi, bc, &dx, grads);
        }
        {
            let (dw, db) = grads.pair_mut(*time_w, *time_b);
            nn::linear_backward(
                p.data(*time_w),
                &c.temb,
                &dx[TIME_TOKEN * e..(TIME_TOKEN + 1) * e],
                dw,
                db,
                None,
            );
        }
        {
            let (dw, db) = grads.pair_mut(*act_w, *act_b);
            nn::linear_backward(
                p.data(*act_w),
                &c.noisy,
                &dx[ACTION_TOKEN * e..],
                dw,
                db,
                None,
            );
        }
        dx[OBS_TOKEN * e..(OBS_TOKEN + 1) * e].to_vec()
    }

    fn block_backward(
        &self,
        bi: &BlockIdx,
        c: &BlockCache,
        dx_out: &[f64],
        grads: &mut DenoiserParams,
    ) -> Vec<f64> {
        let e = self.config.embed_dim;
        let heads = self.config.num_heads;
        let d = e / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let hdim = MLP_RATIO * e;
        let p = &self.params;

        // MLP sublayer.
        let mut dx_mid = dx_out.to_vec();
        let mut dh2 = vec![0.0; TOKENS * e];
        for s in 0..TOKENS {
            let dm = &dx_out[s * e..(s + 1) * e];
            let mut dgu = vec![0.0; hdim];
            {
                let (dw, db) = grads.pair_mut(bi.fc2_w, bi.fc2_b);
                nn::linear_backward(
                    p.data(bi.fc2_w),
                    &c.gu[s * hdim..(s + 1) * hdim],
                    dm,
                    dw,
                    db,
                    Some(&mut dgu),
                );
            }
            for (g, &u) in dgu.iter_mut().zip(&c.u[s * hdim..(s + 1) * hdim]) {
                *g *= nn::gelu_grad(u);
            }
            let (dw, db) = grads.pair_mut(bi.fc1_w, bi.fc1_b);
            nn::linear_backward(
                p.data(bi.fc1_w),
                &c.h2[s * e..(s + 1) * e],
                &dgu,
                dw,
                db,
                Some(&mut dh2[s * e..(s + 1) * e]),
            );
        }
        for s in 0..TOKENS {
            let (dg, db) = grads.pair_mut(bi.ln2_g, bi.ln2_b);
            nn::layer_norm_backward(
                &c.ln2[s],
                p.data(bi.ln2_g),
                &dh2[s * e..(s + 1) * e],
                dg,
                db,
                &mut dx_mid[s * e..(s + 1) * e],
            );
        }

        // Attention sublayer.
        let mut dx_in = dx_mid.clone();
        let mut dctx = vec![0.0; TOKENS * e];
        for s in 0..TOKENS {
            let (dw, db) = grads.pair_mut(bi.out_w, bi.out_b);
            nn::linear_backward(
                p.data(bi.out_w),
                &c.ctx[s * e..(s + 1) * e],
                &dx_mid[s * e..(s + 1) * e],
                dw,
                db,
                Some(&mut dctx[s * e..(s + 1) * e]),
            );
        }
        let mut dqkv = vec![0.0; TOKENS * 3 * e];
        for h in 0..heads {
            let qo = h * d;
            let ko = e + h * d;
            let vo = 2 * e + h * d;
            for i in 0..TOKENS {
                let row = &c.probs[(h * TOKENS + i) * TOKENS..(h * TOKENS + i + 1) * TOKENS];
                let dc = &dctx[i * e + h * d..i * e + (h + 1) * d];
                let mut dp = [0.0; TOKENS];
                for j in 0..TOKENS {
                    let v = &c.qkv[j * 3 * e + vo..j * 3 * e + vo + d];
                    dp[j] = nn::dot(dc, v);
                    nn::axpy(row[j], dc, &mut dqkv[j * 3 * e + vo..j * 3 * e + vo + d]);
                }
                let mix: f64 = (0..TOKENS).map(|j| row[j] * dp[j]).sum();
                for j in 0..TOKENS {
                    let ds = row[j] * (dp[j] - mix) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let k = c.qkv[j * 3 * e + ko..j * 3 * e + ko + d].to_vec();
                    let q = c.qkv[i * 3 * e + qo..i * 3 * e + qo + d].to_vec();
                    nn::axpy(ds, &k, &mut dqkv[i * 3 * e + qo..i * 3 * e + qo + d]);
                    nn::axpy(ds, &q, &mut dqkv[j * 3 * e + ko..j * 3 * e + ko + d]);
                }
            }
        }
        let mut dh1 = vec![0.0; TOKENS * e];
        for s in 0..TOKENS {
            let (dw, db) = grads.pair_mut(bi.qkv_w, bi.qkv_b);
            nn::linear_backward(
                p.data(bi.qkv_w),
                &c.h1[s * e..(s + 1) * e],
                &dqkv[s * 3 * e..(s + 1) * 3 * e],
                dw,
                db,
                Some(&mut dh1[s * e..(s + 1) * e]),
            );
        }
        for s in 0..TOKENS {
            let (dg, db) = grads.pair_mut(bi.ln1_g, bi.ln1_b);
            nn::layer_norm_backward(
                &c.ln1[s],
                p.data(bi.ln1_g),
                &dh1[s * e..(s + 1) * e],
                dg,
                db,
                &mut dx_in[s * e..(s + 1) * e],
            );
        }
        dx_in
    }

    fn mlp_backward(&self, c: &MlpCache, dout: &[f64], grads: &mut DenoiserParams) -> Vec<f64> {
        let Layout::Mlp {
            hidden,
            head_w,
            head_b,
        } = &self.layout
        else {
            unreachable!()
        };
        let p = &self.params;
        let mut dz = vec![0.0; c.last.len()];
        {
            let (dw, db) = grads.pair_mut(*head_w, *head_b);
            nn::linear_backward(p.data(*head_w), &c.last, dout, dw, db, Some(&mut dz));
        }
        for (i, &(w, b)) in hidden.iter().enumerate().rev() {
            let du: Vec<f64> = dz
                .iter()
                .zip(&c.pre[i])
                .map(|(g, &u)| g * nn::gelu_grad(u))
                .collect();
            let mut dinput = vec![0.0; c.inputs[i].len()];
            let (dw, db) = grads.pair_mut(w, b);
            nn::linear_backward(p.data(w), &c.inputs[i], &du, dw, db, Some(&mut dinput));
            dz = dinput;
        }
        dz.truncate(self.config.embed_dim);
        dz
    }
}

enum HeadCache {
    Transformer(TfCache),
    Mlp(MlpCache),
}

struct TfCache {
    temb: Vec<f64>,
    noisy: Vec<f64>,
    blocks: Vec<BlockCache>,
    yf: Vec<f64>,
}

struct BlockCache {
    ln1: Vec<LnCache>,
    h1: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln2: Vec<LnCache>,
    h2: Vec<f64>,
    u: Vec<f64>,
    gu: Vec<f64>,
}

struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    last: Vec<f64>,
}

/// One training example: an observation, its clean action (model units)
/// and a key that fixes its diffusion noise.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub obs: &'a Patches,
    pub action: &'a [f64],
    pub noise_key: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed derived from a base seed and a list of keys.
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(base), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// The timestep and noise drawn for one example: `t ~ U{1..T}`, `ε ~ N(0, I)`.
pub fn draw_noise(rng_seed: u64, noise_key: u64, num_steps: usize) -> (usize, [f64; ACTION_DIM]) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, &[noise_key]));
    let t = rng.gen_range(1..=num_steps);
    let mut eps = [0.0; ACTION_DIM];
    for v in eps.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    (t, eps)
}

/// `1 / √(1 − ᾱ_t)` per timestep when input scaling is on, else all ones.
fn input_scale_table(config: &DenoiserConfig, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if schedule.num_steps() != config.max_timestep {
        return Err(Error::Config(format!(
            "schedule has {} steps but the model expects {}",
            schedule.num_steps(),
            config.max_timestep
        )));
    }
    Ok(schedule
        .alpha_bars()
        .iter()
        .map(|ab| {
            if config.input_scaling {
                1.0 / (1.0 - ab).sqrt()
            } else {
                1.0
            }
        })
        .collect())
}

fn check_batch(model: &Denoiser, batch: &[BatchItem<'_>], schedule: &NoiseSchedule) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Usage("empty training batch".into()));
    }
    if schedule.num_steps() != model.config.max_timestep {
        return Err(Error::Config(format!(
            "schedule has {} steps but the model expects {}",
            schedule.num_steps(),
            model.config.max_timestep
        )));
    }
    for item in batch {
        if item.action.len() != ACTION_DIM {
            return Err(Error::Dimension(format!(
                "action has {} values",
                item.action.len()
            )));
        }
        if item.obs.num_patches() != model.config.num_patches()
            || item.obs.patch_dim() != model.config.patch_dim()
        {
            return Err(Error::Dimension(
                "patch layout does not match the model".into(),
            ));
        }
    }
    model.check_finite()
}

/// Timestep, noise and network input (the noised action, input-scaled if configured).
fn noised_input(
    item: &BatchItem<'_>,
    schedule: &NoiseSchedule,
    scale: &[f64],
    rng_seed: u64,
) -> (usize, [f64; ACTION_DIM], [f64; ACTION_DIM]) {
    let (t, eps) = draw_noise(rng_seed, item.noise_key, schedule.num_steps());
    let ab = schedule.alpha_bars()[t - 1];
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut x = [0.0; ACTION_DIM];
    for i in 0..ACTION_DIM {
        x[i] = (sa * item.action[i] + sn * eps[i]) * scale[t - 1];
    }
    (t, eps, x)
}

/// Splits a batch into runs of consecutive items that share one observation.
fn obs_runs<'b, 'a>(batch: &'b [BatchItem<'a>]) -> impl Iterator<Item = &'b [BatchItem<'a>]> {
    batch.chunk_by(|a, b| std::ptr::eq(a.obs, b.obs))
}

/// Mean over the batch of `‖ε − θ(a_t, t, o)‖² / 36`.
pub fn batch_loss(
    model: &Denoiser,
    batch: &[BatchItem<'_>],
    schedule: &NoiseSchedule,
    rng_seed: u64,
) -> Result<f64> {
    check_batch(model, batch, schedule)?;
    let scale = input_scale_table(&model.config, schedule)?;
    let mut total = 0.0;
    for run in obs_runs(batch) {
        let token = model.encoder_forward(run[0].obs, None);
        for item in run {
            let (t, eps, x) = noised_input(item, schedule, &scale, rng_seed);
            let (pred, _) = model.head_forward(&token, t, &x, false);
            total += eps
                .iter()
                .zip(&pred)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / ACTION_DIM as f64;
        }
    }
    Ok(total / batch.len() as f64)
}

/// Loss as in [`batch_loss`] together with its exact gradient.
///
/// Items are processed in order and gradients summed in that order, so the
/// result is bit-reproducible. Consecutive items that share one `Patches`
/// (several noise draws for one example) share a single encoder pass.
pub fn loss_and_gradients(
    model: &Denoiser,
    batch: &[BatchItem<'_>],
    schedule: &NoiseSchedule,
    rng_seed: u64,
) -> Result<(f64, DenoiserParams)> {
    check_batch(model, batch, schedule)?;
    let scale = input_scale_table(&model.config, schedule)?;
    let mut grads = DenoiserParams::zeros_for(&model.config);
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut proj = Vec::new();
    for run in obs_runs(batch) {
        let token = model.encoder_forward(run[0].obs, Some(&mut proj));
        let mut dtoken_sum = vec![0.0; token.len()];
        for item in run {
            let (t, eps, x) = noised_input(item, schedule, &scale, rng_seed);
            let (pred, cache) = model.head_forward(&token, t, &x, true);
            let mut dout = [0.0; ACTION_DIM];
            let mut sq = 0.0;
            for i in 0..ACTION_DIM {
                let r = pred[i] - eps[i];
                sq += r * r;
                dout[i] = 2.0 * r / (ACTION_DIM as f64 * n);
            }
            total += sq / ACTION_DIM as f64;
            let dtoken = model.head_backward(cache.as_ref().expect("kept"), &dout, &mut grads);
            nn::axpy(1.0, &dtoken, &mut dtoken_sum);
        }
        model.encoder_backward(run[0].obs, &proj, &dtoken_sum, &mut grads);
    }
    let loss = total / n;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss}")));
    }
    Ok((loss, grads))
}
