//! World models: state embedding, the variant registry, forward passes and
//! autoregressive rollouts.
//!
//! Every object at every frame is a token of `4` multivectors
//!
//! ```text
//! v1 = x e13 + y e23          position
//! v2 = vx e1 + vy e2          velocity
//! v3 = cos θ + sin θ e12      orientation
//! v4 = cos θ̇ + sin θ̇ e12      angular velocity
//! ```
//!
//! optionally followed by four vertex channels encoded like `v1`. Models
//! map a window of `S` frames, shape `(B, S, K, C_in, 8)`, to predictions of
//! the next frame's first four channels, shape `(B, S, K, 4, 8)`.

use std::f64::consts::PI;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{BlockCausalMask, CliffordAttention, DenseAttention};
use crate::error::{Error, Result};
use crate::ga::{Multivector, E1, E12, E13, E2, E23, SCALAR};
use crate::layers::{CliffordLinear, CliffordMlp, DenseLinear, DenseMlp, LinearMode};
use crate::sim::{wrap_angle, ObjectState, Shape};
use crate::tensor::{read_checkpoint, write_checkpoint, Bindings, Graph, ParamStore, Tensor, Var};

/// Multivectors describing an object's dynamic state.
pub const STATE_CHANNELS: usize = 4;
/// Extra channels holding the shape's characteristic points.
pub const VERTEX_CHANNELS: usize = 4;
const STATE_WIDTH: usize = STATE_CHANNELS * 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    S,
    SAd,
    E,
    Transformer,
    Mlp,
    CliffordMlp,
    AdCliffordMlp,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::S,
        Variant::SAd,
        Variant::E,
        Variant::Transformer,
        Variant::Mlp,
        Variant::CliffordMlp,
        Variant::AdCliffordMlp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::S => "s",
            Variant::SAd => "s-ad",
            Variant::E => "e",
            Variant::Transformer => "transformer",
            Variant::Mlp => "mlp",
            Variant::CliffordMlp => "clifford-mlp",
            Variant::AdCliffordMlp => "ad-clifford-mlp",
        }
    }

    /// Linear mode of the Clifford variants.
    pub fn mode(&self) -> Option<LinearMode> {
        match self {
            Variant::S | Variant::CliffordMlp => Some(LinearMode::S),
            Variant::SAd | Variant::AdCliffordMlp => Some(LinearMode::SAd),
            Variant::E => Some(LinearMode::E),
            Variant::Transformer | Variant::Mlp => None,
        }
    }

    pub fn is_transformer(&self) -> bool {
        matches!(self, Variant::S | Variant::SAd | Variant::E | Variant::Transformer)
    }

    /// Default AdamW weight decay for this variant.
    pub fn weight_decay(&self) -> f64 {
        match self {
            Variant::Mlp => 3e-6,
            _ => 1e-7,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == lower)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub blocks: usize,
    pub heads: usize,
    /// Multivector channels of the Clifford transformers.
    pub channels: usize,
    /// Number of input frames per window.
    pub seq_len: usize,
    pub objects: usize,
    /// Token width of the baseline transformer; chosen by parameter
    /// matching when absent.
    pub embed_dim: Option<usize>,
    /// Hidden width of MLP layers in the baselines; parameter-matched (dense
    /// variants) or `channels · objects` (Clifford MLPs) when absent.
    pub hidden: Option<usize>,
    /// Parameter budget for matching; defaults to the S transformer with the
    /// same blocks, heads and channels.
    pub param_target: Option<usize>,
    pub vertices: bool,
    pub scaled_attention: bool,
    /// Add the input state to the network output.
    pub predict_delta: bool,
    /// Zero the output layer so an untrained model predicts its input.
    pub identity_init: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::S,
            blocks: 2,
            heads: 4,
            channels: 8,
            seq_len: 2,
            objects: 4,
            embed_dim: None,
            hidden: None,
            param_target: None,
            vertices: false,
            scaled_attention: true,
            predict_delta: true,
            identity_init: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Full-size transformer hyperparameters.
    pub fn full(variant: Variant, objects: usize) -> Self {
        ModelConfig {
            variant,
            blocks: 10,
            heads: 8,
            channels: 24,
            objects,
            ..ModelConfig::default()
        }
    }

    pub fn input_channels(&self) -> usize {
        STATE_CHANNELS + if self.vertices { VERTEX_CHANNELS } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::Config("seq_len must be at least 1".into()));
        }
        if self.objects == 0 {
            return Err(Error::Config("objects must be at least 1".into()));
        }
        if self.variant.is_transformer() {
            if self.heads == 0 || self.channels % self.heads != 0 {
                return Err(Error::Config(format!(
                    "channels ({}) must be divisible by heads ({})",
                    self.channels, self.heads
                )));
            }
            if let Some(d) = self.embed_dim {
                if d % self.heads != 0 {
                    return Err(Error::Config(format!(
                        "embed_dim ({d}) must be divisible by heads ({})",
                        self.heads
                    )));
                }
            }
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// The four state multivectors of one object.
pub fn embed_state(s: &ObjectState) -> [Multivector; 4] {
    let mut v1 = Multivector::ZERO;
    v1[E13] = s.x;
    v1[E23] = s.y;
    let mut v2 = Multivector::ZERO;
    v2[E1] = s.vx;
    v2[E2] = s.vy;
    let mut v3 = Multivector::scalar(s.theta.cos());
    v3[E12] = s.theta.sin();
    let mut v4 = Multivector::scalar(s.omega.cos());
    v4[E12] = s.omega.sin();
    [v1, v2, v3, v4]
}

/// Vertex channels: each characteristic point encoded like a position.
pub fn embed_vertices(s: &ObjectState, shape: &Shape) -> [Multivector; 4] {
    shape.vertex_offsets(s.theta).map(|o| {
        let mut v = Multivector::ZERO;
        v[E13] = s.x + o[0];
        v[E23] = s.y + o[1];
        v
    })
}

/// Inverse of [`embed_state`]; angles come from `atan2` and lie in
/// `(-π, π]`, with `atan2(0, 0) = 0`.
pub fn decode_state(channels: &[Multivector]) -> ObjectState {
    let angle = rotor_angle;
    ObjectState {
        x: channels[0][E13],
        y: channels[0][E23],
        vx: channels[1][E1],
        vy: channels[1][E2],
        theta: angle(&channels[2]),
        omega: angle(&channels[3]),
    }
}

/// Appends the `(K, C_in, 8)` token block of one frame.
pub fn embed_frame(states: &[ObjectState], shapes: &[Shape], vertices: bool, out: &mut Vec<f64>) {
    for (s, shape) in states.iter().zip(shapes) {
        for m in embed_state(s) {
            out.extend_from_slice(&m.0);
        }
        if vertices {
            for m in embed_vertices(s, shape) {
                out.extend_from_slice(&m.0);
            }
        }
    }
}

/// Appends the `(K, 4, 8)` state block of one frame.
pub fn embed_target(states: &[ObjectState], out: &mut Vec<f64>) {
    for s in states {
        for m in embed_state(s) {
            out.extend_from_slice(&m.0);
        }
    }
}

/// Decodes a `(K, 4, 8)` block.
pub fn decode_frame(block: &[f64]) -> Vec<ObjectState> {
    block
        .chunks(STATE_WIDTH)
        .map(|obj| {
            let mvs: Vec<Multivector> = obj
                .chunks(8)
                .map(|c| Multivector::new(c.try_into().expect("8 coefficients")))
                .collect();
            decode_state(&mvs)
        })
        .collect()
}

/// Sinusoidal code of width `dim` for position `pos`: interleaved sin/cos
/// pairs with periods growing geometrically up to `2π · 10000`.
pub fn positional_code(pos: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let pair = (i / 2) as f64;
            let rate = 10000f64.powf(-2.0 * pair / dim as f64);
            let a = pos as f64 * rate;
            if i % 2 == 0 {
                a.sin()
            } else {
                a.cos()
            }
        })
        .collect()
}

/// Positional codes for `steps` frames of `objects` tokens of width `dim`,
/// shape `(steps, objects, dim)`; identical for all objects of a frame.
fn positional_table(steps: usize, objects: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(steps * objects * dim);
    for s in 0..steps {
        let code = positional_code(s, dim);
        for _ in 0..objects {
            out.extend_from_slice(&code);
        }
    }
    out
}

#[derive(Clone, Debug)]
struct CliffordBlock {
    attn: CliffordAttention,
    mlp: CliffordMlp,
}

#[derive(Clone, Debug)]
struct DenseBlock {
    attn: DenseAttention,
    mlp: DenseMlp,
}

#[derive(Clone, Debug)]
enum Net {
    Clifford {
        expand: CliffordLinear,
        blocks: Vec<CliffordBlock>,
        head: CliffordLinear,
    },
    Dense {
        expand: DenseLinear,
        blocks: Vec<DenseBlock>,
        head: DenseLinear,
    },
    Mlp(DenseMlp),
    CliffordMlp(CliffordMlp),
}

/// Parameter count of the baseline transformer with token width `dim` and
/// MLP hidden width `hidden`.
pub fn transformer_param_count(in_width: usize, blocks: usize, dim: usize, hidden: usize) -> usize {
    let attn = 4 * (dim * dim + dim);
    let mlp = dim * hidden + hidden + hidden * dim + dim;
    (in_width * dim + dim) + blocks * (attn + mlp) + (dim * STATE_WIDTH + STATE_WIDTH)
}

/// Parameter count of the two-hidden-layer MLP baseline.
pub fn mlp_param_count(in_width: usize, out_width: usize, hidden: usize) -> usize {
    (in_width * hidden + hidden) + (hidden * hidden + hidden) + (hidden * out_width + out_width)
}

fn within(count: usize, target: usize) -> f64 {
    (count as f64 - target as f64).abs() / target.max(1) as f64
}

/// Baseline transformer widths whose parameter count is closest to
/// `target`: the token width (a multiple of `heads`) is chosen with a
/// 2× MLP ratio, then the hidden width is tuned.
pub fn match_transformer(in_width: usize, blocks: usize, heads: usize, target: usize) -> (usize, usize) {
    let mut best_dim = heads;
    let mut best = f64::INFINITY;
    let mut dim = heads;
    while dim <= 4096 {
        let err = within(transformer_param_count(in_width, blocks, dim, 2 * dim), target);
        if err < best {
            best = err;
            best_dim = dim;
        }
        if transformer_param_count(in_width, blocks, dim, 2 * dim) > 2 * target {
            break;
        }
        dim += heads;
    }
    let base = transformer_param_count(in_width, blocks, best_dim, 0);
    let per_hidden = blocks * (2 * best_dim + 1);
    let hidden = if per_hidden == 0 || target <= base {
        1
    } else {
        (((target - base) as f64 / per_hidden as f64).round() as usize).max(1)
    };
    (best_dim, hidden)
}

/// Hidden width of the MLP baseline closest to `target` parameters.
pub fn match_mlp(in_width: usize, out_width: usize, target: usize) -> usize {
    (1..=8192)
        .min_by_key(|&h| (mlp_param_count(in_width, out_width, h) as i64 - target as i64).abs())
        .expect("non-empty range")
}

/// A trained or freshly initialized world model and its parameters.
pub struct WorldModel {
    config: ModelConfig,
    pub params: ParamStore,
    net: Net,
}

impl WorldModel {
    /// Builds a model; unset baseline widths are resolved and recorded in
    /// the stored config.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut config = config;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let cin = config.input_channels();
        let k = config.objects;
        let token_width = cin * 8;

        let target = || -> Result<usize> {
            match config.param_target {
                Some(t) => Ok(t),
                None => Ok(WorldModel::new(ModelConfig {
                    variant: Variant::S,
                    ..config.clone()
                })?
                .num_params()),
            }
        };

        let net = match config.variant {
            Variant::S | Variant::SAd | Variant::E => {
                let mode = config.variant.mode().expect("clifford variant");
                let c = config.channels;
                let expand = CliffordLinear::new(&mut params, "expand", cin, c, mode, &mut rng);
                let mut blocks = Vec::with_capacity(config.blocks);
                let branch_gain = (2.0 * config.blocks as f64).sqrt().recip();
                for b in 0..config.blocks {
                    let attn = CliffordAttention::new(
                        &mut params,
                        &format!("block{b}.attn"),
                        c,
                        config.heads,
                        mode,
                        config.scaled_attention,
                        &mut rng,
                    )?;
                    let mlp = CliffordMlp::new(&mut params, &format!("block{b}.mlp"), c, &[c, c], mode, &mut rng)?;
                    let last = mlp.linears().last().expect("two layers");
                    for lin in [attn.projections()[3], last] {
                        scale_branch(&mut params, lin, branch_gain);
                    }
                    blocks.push(CliffordBlock { attn, mlp });
                }
                let head = CliffordLinear::new(&mut params, "head", c, STATE_CHANNELS, mode, &mut rng);
                if config.identity_init {
                    zero(&mut params, head.weight());
                }
                Net::Clifford { expand, blocks, head }
            }
            Variant::Transformer => {
                let (dim, hidden) = match (config.embed_dim, config.hidden) {
                    (Some(d), Some(h)) => (d, h),
                    _ => {
                        let t = target()?;
                        let (d, h) = match_transformer(token_width, config.blocks, config.heads, t);
                        (config.embed_dim.unwrap_or(d), config.hidden.unwrap_or(h))
                    }
                };
                config.embed_dim = Some(dim);
                config.hidden = Some(hidden);
                config.validate()?;
                let expand = DenseLinear::new(&mut params, "expand", token_width, dim, &mut rng);
                let mut blocks = Vec::with_capacity(config.blocks);
                let branch_gain = (2.0 * config.blocks as f64).sqrt().recip();
                for b in 0..config.blocks {
                    let attn = DenseAttention::new(&mut params, &format!("block{b}.attn"), dim, config.heads, &mut rng)?;
                    let mlp = DenseMlp::new(&mut params, &format!("block{b}.mlp"), &[dim, hidden, dim], &mut rng)?;
                    let last = mlp.layers().last().expect("two layers");
                    for lin in [attn.out_projection(), last] {
                        for v in params.value_mut(lin.weight()).data_mut() {
                            *v *= branch_gain;
                        }
                    }
                    blocks.push(DenseBlock { attn, mlp });
                }
                let head = DenseLinear::new(&mut params, "head", dim, STATE_WIDTH, &mut rng);
                if config.identity_init {
                    zero(&mut params, head.weight());
                }
                Net::Dense { expand, blocks, head }
            }
            Variant::Mlp => {
                let (in_w, out_w) = (k * token_width, k * STATE_WIDTH);
                let hidden = match config.hidden {
                    Some(h) => h,
                    None => match_mlp(in_w, out_w, target()?),
                };
                config.hidden = Some(hidden);
                let mlp = DenseMlp::new(&mut params, "mlp", &[in_w, hidden, hidden, out_w], &mut rng)?;
                if config.identity_init {
                    zero(&mut params, mlp.layers().last().expect("three layers").weight());
                }
                Net::Mlp(mlp)
            }
            Variant::CliffordMlp | Variant::AdCliffordMlp => {
                let mode = config.variant.mode().expect("clifford variant");
                let hidden = config.hidden.unwrap_or(config.channels * k);
                config.hidden = Some(hidden);
                let mlp = CliffordMlp::new(
                    &mut params,
                    "mlp",
                    k * cin,
                    &[hidden, hidden, k * STATE_CHANNELS],
                    mode,
                    &mut rng,
                )?;
                if config.identity_init {
                    zero(&mut params, mlp.linears().last().expect("three layers").weight());
                }
                Net::CliffordMlp(mlp)
            }
        };
        Ok(WorldModel { config, params, net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Parameter count derived from the layer shapes rather than the store.
    pub fn layer_param_count(&self) -> usize {
        match &self.net {
            Net::Clifford { expand, blocks, head } => {
                expand.num_params()
                    + blocks
                        .iter()
                        .map(|b| b.attn.num_params() + b.mlp.num_params())
                        .sum::<usize>()
                    + head.num_params()
            }
            Net::Dense { expand, blocks, head } => {
                expand.num_params()
                    + blocks
                        .iter()
                        .map(|b| b.attn.num_params() + b.mlp.num_params())
                        .sum::<usize>()
                    + head.num_params()
            }
            Net::Mlp(m) => m.num_params(),
            Net::CliffordMlp(m) => m.num_params(),
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let cin = self.config.input_channels();
        let ok = shape.len() == 5
            && shape[1] >= 1
            && shape[1] <= self.config.seq_len
            && shape[2] == self.config.objects
            && shape[3] == cin
            && shape[4] == 8;
        if !ok {
            return Err(Error::Shape(format!(
                "model input {shape:?} does not match (B, 1..={}, {}, {cin}, 8)",
                self.config.seq_len, self.config.objects
            )));
        }
        Ok(())
    }

    /// Maps embedded frames `(B, S, K, C_in, 8)` to next-frame predictions
    /// `(B, S, K, 4, 8)`. Any window length up to `seq_len` is accepted.
    pub fn forward(&self, g: &mut Graph, p: &Bindings, input: &Tensor) -> Result<Var> {
        let shape = input.shape().to_vec();
        self.check_input(&shape)?;
        let (b, s, k, cin) = (shape[0], shape[1], shape[2], shape[3]);
        let x = g.constant(input.clone());
        let out_shape = [b, s, k, STATE_CHANNELS, 8];
        let raw = match &self.net {
            Net::Clifford { expand, blocks, head } => {
                let c = self.config.channels;
                let h = expand.forward(g, p, x)?;
                let pos = Tensor::new(vec![s, k, c, 8], positional_table(s, k, c * 8))?;
                let pos = g.constant(pos);
                let h = g.add_suffix(h, pos)?;
                let h = g.reshape(h, &[b, s * k, c, 8])?;
                let mask = BlockCausalMask::new(s, k);
                let h = clifford_blocks(g, p, blocks, h, &mask)?;
                let y = head.forward(g, p, h)?;
                g.reshape(y, &out_shape)?
            }
            Net::Dense { expand, blocks, head } => {
                let dim = expand.out_dim;
                let flat = g.reshape(x, &[b, s * k, cin * 8])?;
                let h = expand.forward(g, p, flat)?;
                let pos = Tensor::new(vec![s * k, dim], positional_table(s, k, dim))?;
                let pos = g.constant(pos);
                let mut h = g.add_suffix(h, pos)?;
                let mask = BlockCausalMask::new(s, k);
                for block in blocks {
                    let a = block.attn.forward(g, p, h, &mask)?;
                    let z = g.add(a, h)?;
                    let m = block.mlp.forward(g, p, z)?;
                    h = g.add(m, z)?;
                }
                let y = head.forward(g, p, h)?;
                g.reshape(y, &out_shape)?
            }
            Net::Mlp(mlp) => {
                let flat = g.reshape(x, &[b, s, k * cin * 8])?;
                let y = mlp.forward(g, p, flat)?;
                g.reshape(y, &out_shape)?
            }
            Net::CliffordMlp(mlp) => {
                let flat = g.reshape(x, &[b, s, k * cin, 8])?;
                let y = mlp.forward(g, p, flat)?;
                g.reshape(y, &out_shape)?
            }
        };
        if !self.config.predict_delta {
            return Ok(raw);
        }
        let base = state_channels(input);
        let base = g.constant(base);
        g.add(raw, base)
    }

    /// The residual block stack of a Clifford transformer applied to
    /// `(B, N, C, 8)` tokens, without embedding or positional code.
    pub fn forward_blocks(&self, g: &mut Graph, p: &Bindings, tokens: Var, mask: &BlockCausalMask) -> Result<Var> {
        match &self.net {
            Net::Clifford { blocks, .. } => clifford_blocks(g, p, blocks, tokens, mask),
            _ => Err(Error::Config(format!(
                "variant {} has no Clifford attention blocks",
                self.config.variant
            ))),
        }
    }

    /// Mean squared error in multivector space against embedded targets.
    pub fn loss(&self, g: &mut Graph, p: &Bindings, input: &Tensor, target: &Tensor) -> Result<Var> {
        let y = self.forward(g, p, input)?;
        let t = g.constant(target.clone());
        g.l2_loss(y, t)
    }

    /// Forward pass without gradient tracking.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let y = self.forward(&mut g, &p, input)?;
        Ok(g.value(y).clone())
    }

    /// Predicts `horizon` frames after `context`, feeding each decoded
    /// prediction back in. At most the last `seq_len` frames are used.
    pub fn rollout(
        &self,
        shapes: &[Shape],
        context: &[Vec<ObjectState>],
        horizon: usize,
    ) -> Result<Vec<Vec<ObjectState>>> {
        if context.is_empty() {
            return Err(Error::Shape("rollout needs at least one context frame".into()));
        }
        let k = self.config.objects;
        if shapes.len() != k || context.iter().any(|f| f.len() != k) {
            return Err(Error::Shape(format!("rollout frames must hold {k} objects")));
        }
        let mut window: Vec<Vec<ObjectState>> = context
            [context.len().saturating_sub(self.config.seq_len)..]
            .to_vec();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let s = window.len();
            let mut data = Vec::with_capacity(s * k * self.config.input_channels() * 8);
            for frame in &window {
                embed_frame(frame, shapes, self.config.vertices, &mut data);
            }
            let input = Tensor::new(vec![1, s, k, self.config.input_channels(), 8], data)?;
            let pred = self.predict(&input)?;
            let last = &pred.data()[(s - 1) * k * STATE_WIDTH..];
            let mut next = decode_frame(last);
            for st in &mut next {
                st.theta = wrap_angle(st.theta);
            }
            out.push(next.clone());
            if window.len() == self.config.seq_len {
                window.remove(0);
            }
            window.push(next);
        }
        Ok(out)
    }

    /// Writes parameters to `path` and the config to `path` with a `.toml`
    /// extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        write_checkpoint(file, self.params.named_values())?;
        std::fs::write(config_path(path), self.config.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(config_path(path))?;
        let config = ModelConfig::from_toml(&text)?;
        let mut model = WorldModel::new(config)?;
        let tensors = read_checkpoint(BufReader::new(File::open(path)?))?;
        model.params.load(tensors)?;
        Ok(model)
    }
}

/// Location of the config written next to a checkpoint.
pub fn config_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("toml")
}

fn zero(params: &mut ParamStore, id: crate::tensor::ParamId) {
    params.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
}

fn clifford_blocks(
    g: &mut Graph,
    p: &Bindings,
    blocks: &[CliffordBlock],
    tokens: Var,
    mask: &BlockCausalMask,
) -> Result<Var> {
    let mut h = tokens;
    for block in blocks {
        let a = block.attn.forward(g, p, h, mask)?;
        let z = g.add(a, h)?;
        let m = block.mlp.forward(g, p, z)?;
        h = g.add(m, z)?;
    }
    Ok(h)
}

/// Shrinks a residual branch's final linear so the branch output scales by
/// `gain`; sandwich weights enter quadratically.
fn scale_branch(params: &mut ParamStore, lin: &CliffordLinear, gain: f64) {
    let factor = match lin.mode {
        LinearMode::SAd => gain.sqrt(),
        LinearMode::S | LinearMode::E => gain,
    };
    for v in params.value_mut(lin.weight()).data_mut() {
        *v *= factor;
    }
}

/// First four channels of an embedded input `(B, S, K, C_in, 8)`.
pub fn state_channels(input: &Tensor) -> Tensor {
    let shape = input.shape();
    let cin = shape[3];
    let data: Vec<f64> = input
        .data()
        .chunks(cin * 8)
        .flat_map(|obj| obj[..STATE_WIDTH].iter().copied())
        .collect();
    let mut out = shape.to_vec();
    out[3] = STATE_CHANNELS;
    Tensor::new(out, data).expect("sliced input")
}

/// Angle in `(-π, π]` of a rotor-like multivector.
pub fn rotor_angle(m: &Multivector) -> f64 {
    let a = m[E12].atan2(m[SCALAR]);
    if a == -PI {
        PI
    } else {
        a
    }
}
