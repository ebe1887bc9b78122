//! Clifford linear maps, the gated sigmoid, Clifford MLPs and dense baselines.
//!
//! All multivector activations have shape `(..., channels, 8)`. Each Clifford
//! linear map is realized in two stages: the weights are first turned into a
//! per-channel-pair `8×8` matrix `M[o, i, b, k]` (coefficient of output blade
//! `k` for input blade `b`), which is then applied with one contraction.
//! Building `M` is cheap and keeps all three modes on the same code path:
//!
//! - `S`: `out_o = Σ_i W_oi ⋆ x_i`
//! - `S-Ad`: `out_o = Σ_i W_oi ⋆ x_i ⋆ rev(W_oi)`
//! - `E`: `out_o = Σ_i Σ_k w_oik ⟨x_i⟩_k + v_oik e3 ⋆ ⟨x_i⟩_k`

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ga::{self, BLADE_GRADES, E3, SCALAR};
use crate::tensor::{Bindings, Graph, ParamId, ParamStore, Tensor, Var};

/// How multivector weights act on their inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinearMode {
    /// Left geometric product.
    S,
    /// Sandwich with the reverse.
    SAd,
    /// Grade-wise equivariant combination.
    E,
}

impl fmt::Display for LinearMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinearMode::S => "s",
            LinearMode::SAd => "s-ad",
            LinearMode::E => "e",
        })
    }
}

impl FromStr for LinearMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" => Ok(LinearMode::S),
            "s-ad" | "sad" | "ad" => Ok(LinearMode::SAd),
            "e" => Ok(LinearMode::E),
            other => Err(Error::Config(format!("unknown linear mode `{other}`"))),
        }
    }
}

/// Number of scalar weights per channel pair in E mode: four grade weights
/// and three e3-multiplied ones (the grade-3 product with e3 vanishes).
pub const E_BASIS_LEN: usize = 7;

/// Structure table as a `(8, 8, 8)` tensor `[a, b, k]`.
fn product_tensor() -> &'static Tensor {
    static T: OnceLock<Tensor> = OnceLock::new();
    T.get_or_init(|| Tensor::new(vec![8, 8, 8], ga::structure_table().to_dense()).expect("512"))
}

/// Sandwich tensor `[a, b, c, k]`: coefficient of `k` in `e_a e_b rev(e_c)`.
fn sandwich_tensor() -> &'static Tensor {
    static T: OnceLock<Tensor> = OnceLock::new();
    T.get_or_init(|| {
        let f = ga::structure_table();
        let mut data = vec![0.0; 8 * 8 * 8 * 8];
        for a in 0..8 {
            for b in 0..8 {
                let Some((m, s1)) = f.entry(a, b) else { continue };
                for c in 0..8 {
                    let Some((k, s2)) = f.entry(m, c) else { continue };
                    let rev = ga::reverse_sign(BLADE_GRADES[c]);
                    data[((a * 8 + b) * 8 + c) * 8 + k] += s1 as f64 * s2 as f64 * rev;
                }
            }
        }
        Tensor::new(vec![8, 8, 8, 8], data).expect("4096")
    })
}

/// Equivariant basis `[t, b, k]`: grade projections for `t < 4`, then
/// left multiplication by e3 after projecting to grade `t - 4`.
fn equivariant_basis() -> &'static Tensor {
    static T: OnceLock<Tensor> = OnceLock::new();
    T.get_or_init(|| {
        let f = ga::structure_table();
        let mut data = vec![0.0; E_BASIS_LEN * 64];
        for b in 0..8 {
            let grade = BLADE_GRADES[b];
            data[(grade * 8 + b) * 8 + b] = 1.0;
            if grade < 3 {
                if let Some((k, s)) = f.entry(E3, b) {
                    data[((4 + grade) * 8 + b) * 8 + k] = s as f64;
                }
            }
        }
        Tensor::new(vec![E_BASIS_LEN, 8, 8], data).expect("448")
    })
}

/// Average number of nonzero input-blade contributions per output blade of
/// one weight multivector, used as a fan-in factor at initialization.
fn blade_fan(mode: LinearMode) -> f64 {
    let nonzero = |t: &Tensor| t.data().iter().filter(|v| **v != 0.0).count() as f64;
    match mode {
        LinearMode::S => nonzero(product_tensor()) / 8.0,
        LinearMode::SAd => 1.0,
        LinearMode::E => nonzero(equivariant_basis()) / 8.0,
    }
}

fn scalar_slice(t: &Tensor, rank: usize) -> Tensor {
    // keep the k = SCALAR column of a tensor whose last axis is the blade
    let data: Vec<f64> = t.data().chunks(8).map(|c| c[SCALAR]).collect();
    let shape = t.shape()[..rank - 1].to_vec();
    Tensor::new(shape, data).expect("sliced")
}

fn normal_tensor(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

/// Multivector weights close to `scale · 1`.
fn near_scalar_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let dist = Normal::new(0.0, 0.1 * scale).expect("finite std");
    Tensor::from_fn(shape, |i| {
        let base = if i % 8 == SCALAR { scale } else { 0.0 };
        base + dist.sample(rng)
    })
}

/// Flattens `(..., c, 8)` into `(rows, c, 8)`, returning the leading shape.
fn flatten_rows(g: &mut Graph, x: Var, channels: usize) -> Result<(Var, Vec<usize>)> {
    let shape = g.shape(x).to_vec();
    if shape.len() < 2 || shape[shape.len() - 1] != 8 {
        return Err(Error::Shape(format!(
            "expected multivector channels (..., C, 8), got {shape:?}"
        )));
    }
    let got = shape[shape.len() - 2];
    if got != channels {
        return Err(Error::ChannelMismatch {
            expected: channels,
            got,
        });
    }
    let lead = shape[..shape.len() - 2].to_vec();
    let rows = lead.iter().product();
    Ok((g.reshape(x, &[rows, channels, 8])?, lead))
}

/// Linear map between multivector channel stacks.
#[derive(Clone, Debug)]
pub struct CliffordLinear {
    pub in_channels: usize,
    pub out_channels: usize,
    pub mode: LinearMode,
    weight: ParamId,
}

impl CliffordLinear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        mode: LinearMode,
        rng: &mut impl Rng,
    ) -> Self {
        let std = (1.0 / (in_channels as f64 * blade_fan(mode))).sqrt();
        let weight = match mode {
            LinearMode::S => normal_tensor(rng, &[out_channels, in_channels, 8], std),
            LinearMode::SAd => {
                let scale = (in_channels as f64).powf(-0.5);
                near_scalar_tensor(rng, &[out_channels, in_channels, 8], scale)
            }
            LinearMode::E => normal_tensor(rng, &[out_channels, in_channels, E_BASIS_LEN], std),
        };
        let weight = store.add(format!("{name}.w"), weight);
        CliffordLinear {
            in_channels,
            out_channels,
            mode,
            weight,
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn num_params(&self) -> usize {
        let per_pair = match self.mode {
            LinearMode::S | LinearMode::SAd => 8,
            LinearMode::E => E_BASIS_LEN,
        };
        self.in_channels * self.out_channels * per_pair
    }

    /// The per-pair blade matrix `M[o, i, b, k]`.
    fn blade_matrix(&self, g: &mut Graph, w: Var) -> Result<Var> {
        match self.mode {
            LinearMode::S => {
                let f = g.constant(product_tensor().clone());
                g.contract("oia,abk->oibk", w, f)
            }
            LinearMode::SAd => {
                let s = g.constant(sandwich_tensor().clone());
                let t = g.contract("oia,abck->oibck", w, s)?;
                g.contract("oibck,oic->oibk", t, w)
            }
            LinearMode::E => {
                let basis = g.constant(equivariant_basis().clone());
                g.contract("oit,tbk->oibk", w, basis)
            }
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bindings, x: Var) -> Result<Var> {
        let (flat, lead) = flatten_rows(g, x, self.in_channels)?;
        let m = self.blade_matrix(g, p.get(self.weight))?;
        let y = g.contract("rib,oibk->rok", flat, m)?;
        let mut shape = lead;
        shape.extend([self.out_channels, 8]);
        g.reshape(y, &shape)
    }
}

/// Gated sigmoid: each channel is scaled by `σ` of a scalar computed from
/// all input channels.
///
/// The gate argument of channel `c` is the scalar part of a linear map of
/// the input in the layer's mode: `⟨Σ_i W_ci ⋆ x_i⟩₀` for S,
/// `⟨Σ_i W_ci ⋆ x_i ⋆ rev(W_ci)⟩₀` for S-Ad, and `Σ_i w_ci ⟨x_i⟩₀` for E
/// (the only scalar an equivariant map can produce).
#[derive(Clone, Debug)]
pub struct GatedSigmoid {
    pub channels: usize,
    pub mode: LinearMode,
    weight: ParamId,
}

impl GatedSigmoid {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        mode: LinearMode,
        rng: &mut impl Rng,
    ) -> Self {
        let std = (1.0 / channels as f64).sqrt();
        let weight = match mode {
            LinearMode::S => normal_tensor(rng, &[channels, channels, 8], std),
            LinearMode::SAd => {
                near_scalar_tensor(rng, &[channels, channels, 8], (channels as f64).powf(-0.25))
            }
            LinearMode::E => normal_tensor(rng, &[channels, channels], std),
        };
        let weight = store.add(format!("{name}.act"), weight);
        GatedSigmoid {
            channels,
            mode,
            weight,
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn num_params(&self) -> usize {
        match self.mode {
            LinearMode::S | LinearMode::SAd => self.channels * self.channels * 8,
            LinearMode::E => self.channels * self.channels,
        }
    }

    /// Scalar read-out matrix `A[o, i, b]`: gate_o = Σ_ib A[o,i,b] x[i,b].
    fn gate_matrix(&self, g: &mut Graph, w: Var) -> Result<Var> {
        match self.mode {
            LinearMode::S => {
                let f0 = g.constant(scalar_slice(product_tensor(), 3));
                g.contract("oia,ab->oib", w, f0)
            }
            LinearMode::SAd => {
                let s0 = g.constant(scalar_slice(sandwich_tensor(), 4));
                let t = g.contract("oia,abc->oibc", w, s0)?;
                g.contract("oibc,oic->oib", t, w)
            }
            LinearMode::E => {
                let e0 = g.constant(Tensor::from_fn(&[8], |b| if b == SCALAR { 1.0 } else { 0.0 }));
                g.contract("oi,b->oib", w, e0)
            }
        }
    }

    /// Pre-activation gate values, shape `(..., channels)`.
    pub fn gate_logits(&self, g: &mut Graph, p: &Bindings, x: Var) -> Result<Var> {
        let (flat, lead) = flatten_rows(g, x, self.channels)?;
        let a = self.gate_matrix(g, p.get(self.weight))?;
        let logits = g.contract("rib,oib->ro", flat, a)?;
        let mut shape = lead;
        shape.push(self.channels);
        g.reshape(logits, &shape)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bindings, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let (flat, _) = flatten_rows(g, x, self.channels)?;
        let a = self.gate_matrix(g, p.get(self.weight))?;
        let logits = g.contract("rib,oib->ro", flat, a)?;
        let gate = g.sigmoid(logits);
        let y = g.contract("rcb,rc->rcb", flat, gate)?;
        g.reshape(y, &shape)
    }
}

/// Stack of Clifford linear layers with gated sigmoids between them.
#[derive(Clone, Debug)]
pub struct CliffordMlp {
    pub in_channels: usize,
    linears: Vec<CliffordLinear>,
    gates: Vec<GatedSigmoid>,
}

impl CliffordMlp {
    /// `widths` lists the output channels of each linear layer.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        widths: &[usize],
        mode: LinearMode,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::Config("Clifford MLP needs at least one layer".into()));
        }
        let mut linears = Vec::with_capacity(widths.len());
        let mut gates = Vec::with_capacity(widths.len() - 1);
        let mut c_in = in_channels;
        for (l, &w) in widths.iter().enumerate() {
            linears.push(CliffordLinear::new(
                store,
                &format!("{name}.lin{l}"),
                c_in,
                w,
                mode,
                rng,
            ));
            if l + 1 < widths.len() {
                gates.push(GatedSigmoid::new(store, &format!("{name}.gate{l}"), w, mode, rng));
            }
            c_in = w;
        }
        Ok(CliffordMlp {
            in_channels,
            linears,
            gates,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.linears.last().expect("non-empty").out_channels
    }

    pub fn linears(&self) -> &[CliffordLinear] {
        &self.linears
    }

    pub fn num_params(&self) -> usize {
        self.linears.iter().map(|l| l.num_params()).sum::<usize>()
            + self.gates.iter().map(|a| a.num_params()).sum::<usize>()
    }

    pub fn forward(&self, g: &mut Graph, p: &Bindings, x: Var) -> Result<Var> {
        let mut h = x;
        for (l, lin) in self.linears.iter().enumerate() {
            h = lin.forward(g, p, h)?;
            if let Some(gate) = self.gates.get(l) {
                h = gate.forward(g, p, h)?;
            }
        }
        Ok(h)
    }
}

/// Affine map on the last axis: `x W + b`.
#[derive(Clone, Debug)]
pub struct DenseLinear {
    pub in_dim: usize,
    pub out_dim: usize,
    weight: ParamId,
    bias: ParamId,
}

impl DenseLinear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let std = (1.0 / in_dim as f64).sqrt();
        let weight = store.add(format!("{name}.w"), normal_tensor(rng, &[in_dim, out_dim], std));
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[out_dim]));
        DenseLinear {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    pub fn forward(&self, g: &mut Graph, p: &Bindings, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let last = shape.last().copied().unwrap_or(0);
        if last != self.in_dim {
            return Err(Error::ChannelMismatch {
                expected: self.in_dim,
                got: last,
            });
        }
        let rows = shape[..shape.len() - 1].iter().product();
        let flat = g.reshape(x, &[rows, self.in_dim])?;
        let y = g.contract("ri,io->ro", flat, p.get(self.weight))?;
        let y = g.add_suffix(y, p.get(self.bias))?;
        let mut out = shape[..shape.len() - 1].to_vec();
        out.push(self.out_dim);
        g.reshape(y, &out)
    }
}

/// ReLU multilayer perceptron.
#[derive(Clone, Debug)]
pub struct DenseMlp {
    layers: Vec<DenseLinear>,
}

impl DenseMlp {
    /// `dims` = input width followed by each layer's output width.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("dense MLP needs an input and an output width".into()));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| DenseLinear::new(store, &format!("{name}.lin{l}"), w[0], w[1], rng))
            .collect();
        Ok(DenseMlp { layers })
    }

    pub fn layers(&self) -> &[DenseLinear] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum()
    }

    pub fn forward(&self, g: &mut Graph, p: &Bindings, x: Var) -> Result<Var> {
        let mut h = x;
        for (l, lin) in self.layers.iter().enumerate() {
            h = lin.forward(g, p, h)?;
            if l + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}
