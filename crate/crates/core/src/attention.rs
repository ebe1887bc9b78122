//! Block-causal multi-head attention over flattened (timestep, object) tokens.
//!
//! Token `n` of a flattened sequence corresponds to timestep `n / K` and
//! object `n % K`. A query may attend to every key at its own or an earlier
//! timestep.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ga::INNER_PRODUCT_SLOTS;
use crate::layers::{CliffordLinear, DenseLinear, LinearMode};
use crate::tensor::{Bindings, Graph, ParamStore, Tensor, Var};

/// Boolean `N×N` attention mask with `N = steps · objects`, row = query.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCausalMask {
    steps: usize,
    objects: usize,
    allowed: Arc<Vec<bool>>,
}

impl BlockCausalMask {
    pub fn new(steps: usize, objects: usize) -> Self {
        let n = steps * objects;
        let allowed = (0..n * n)
            .map(|i| (i / n) / objects >= (i % n) / objects)
            .collect();
        BlockCausalMask {
            steps,
            objects,
            allowed: Arc::new(allowed),
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn objects(&self) -> usize {
        self.objects
    }

    /// Number of tokens.
    pub fn len(&self) -> usize {
        self.steps * self.objects
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn allowed(&self, query: usize, key: usize) -> bool {
        self.allowed[query * self.len() + key]
    }

    pub fn shared(&self) -> Arc<Vec<bool>> {
        Arc::clone(&self.allowed)
    }
}

fn check_tokens(shape: &[usize], mask: &BlockCausalMask) -> Result<()> {
    if shape.len() < 2 || shape[1] != mask.len() {
        return Err(Error::Shape(format!(
            "attention input {shape:?} does not have {} tokens on axis 1",
            mask.len()
        )));
    }
    Ok(())
}

/// Multi-head attention on multivector channels.
///
/// Channels are split into `heads` groups; within a head the score between
/// two tokens is the PGA inner product summed over the head's channels.
#[derive(Clone, Debug)]
pub struct CliffordAttention {
    pub channels: usize,
    pub heads: usize,
    /// Divide scores by `sqrt(4 · channels_per_head)`.
    pub scaled: bool,
    q: CliffordLinear,
    k: CliffordLinear,
    v: CliffordLinear,
    out: CliffordLinear,
}

impl CliffordAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        heads: usize,
        mode: LinearMode,
        scaled: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::Config(format!(
                "{channels} channels cannot be split into {heads} heads"
            )));
        }
        let mut lin = |suffix: &str, rng: &mut _| {
            CliffordLinear::new(store, &format!("{name}.{suffix}"), channels, channels, mode, rng)
        };
        let q = lin("q", rng);
        let k = lin("k", rng);
        let v = lin("v", rng);
        let out = lin("o", rng);
        Ok(CliffordAttention {
            channels,
            heads,
            scaled,
            q,
            k,
            v,
            out,
        })
    }

    pub fn num_params(&self) -> usize {
        [&self.q, &self.k, &self.v, &self.out]
            .iter()
            .map(|l| l.num_params())
            .sum()
    }

    pub fn projections(&self) -> [&CliffordLinear; 4] {
        [&self.q, &self.k, &self.v, &self.out]
    }

    /// Attention weights of shape `(B, heads, N, N)`.
    pub fn weights(
        &self,
        g: &mut Graph,
        p: &Bindings,
        x: Var,
        mask: &BlockCausalMask,
    ) -> Result<Var> {
        let (q, k) = self.query_key(g, p, x, mask)?;
        self.weights_from(g, q, k, mask)
    }

    fn query_key(
        &self,
        g: &mut Graph,
        p: &Bindings,
        x: Var,
        mask: &BlockCausalMask,
    ) -> Result<(Var, Var)> {
        let shape = g.shape(x).to_vec();
        check_tokens(&shape, mask)?;
        let split = [shape[0], shape[1], self.heads, self.channels / self.heads, 8];
        let q = self.q.forward(g, p, x)?;
        let q = g.reshape(q, &split)?;
        let k = self.k.forward(g, p, x)?;
        let k = g.reshape(k, &split)?;
        Ok((q, k))
    }

    fn weights_from(&self, g: &mut Graph, q: Var, k: Var, mask: &BlockCausalMask) -> Result<Var> {
        let metric = Tensor::from_fn(&[8], |b| {
            if INNER_PRODUCT_SLOTS.contains(&b) {
                1.0
            } else {
                0.0
            }
        });
        let metric = g.constant(metric);
        let k = g.contract("bnhcx,x->bnhcx", k, metric)?;
        let scores = g.contract("bqhcx,bkhcx->bhqk", q, k)?;
        let scores = if self.scaled {
            let per_head = (self.channels / self.heads) as f64;
            g.scale(scores, 1.0 / (4.0 * per_head).sqrt())
        } else {
            scores
        };
        g.softmax_masked(scores, mask.shared())
    }

    /// Maps `(B, N, C, 8)` tokens to `(B, N, C, 8)`.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bindings,
        x: Var,
        mask: &BlockCausalMask,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let (q, k) = self.query_key(g, p, x, mask)?;
        let w = self.weights_from(g, q, k, mask)?;
        let v = self.v.forward(g, p, x)?;
        let v = g.reshape(v, &[shape[0], shape[1], self.heads, self.channels / self.heads, 8])?;
        let mixed = g.contract("bhqk,bkhcx->bqhcx", w, v)?;
        let mixed = g.reshape(mixed, &shape)?;
        self.out.forward(g, p, mixed)
    }
}

/// Standard scaled dot-product multi-head attention on `(B, N, D)` tokens.
#[derive(Clone, Debug)]
pub struct DenseAttention {
    pub dim: usize,
    pub heads: usize,
    q: DenseLinear,
    k: DenseLinear,
    v: DenseLinear,
    out: DenseLinear,
}

impl DenseAttention {
    pub fn out_projection(&self) -> &DenseLinear {
        &self.out
    }

    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "width {dim} cannot be split into {heads} heads"
            )));
        }
        let mut lin =
            |suffix: &str, rng: &mut _| DenseLinear::new(store, &format!("{name}.{suffix}"), dim, dim, rng);
        let q = lin("q", rng);
        let k = lin("k", rng);
        let v = lin("v", rng);
        let out = lin("o", rng);
        Ok(DenseAttention {
            dim,
            heads,
            q,
            k,
            v,
            out,
        })
    }

    pub fn num_params(&self) -> usize {
        4 * (self.dim * self.dim + self.dim)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bindings,
        x: Var,
        mask: &BlockCausalMask,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        check_tokens(&shape, mask)?;
        let dh = self.dim / self.heads;
        let split = [shape[0], shape[1], self.heads, dh];
        let q = self.q.forward(g, p, x)?;
        let q = g.reshape(q, &split)?;
        let k = self.k.forward(g, p, x)?;
        let k = g.reshape(k, &split)?;
        let v = self.v.forward(g, p, x)?;
        let v = g.reshape(v, &split)?;
        let scores = g.contract("bqhd,bkhd->bhqk", q, k)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let w = g.softmax_masked(scores, mask.shared())?;
        let mixed = g.contract("bhqk,bkhd->bqhd", w, v)?;
        let mixed = g.reshape(mixed, &shape)?;
        self.out.forward(g, p, mixed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ga::Multivector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(
        store: &ParamStore,
        attn: &CliffordAttention,
        x: &Tensor,
        mask: &BlockCausalMask,
    ) -> Tensor {
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = attn.forward(&mut g, &p, xv, mask).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn mask_block_pattern() {
        let m = BlockCausalMask::new(2, 4);
        assert_eq!(m.len(), 8);
        for q in 0..8 {
            for k in 0..8 {
                assert_eq!(m.allowed(q, k), !(q < 4 && k >= 4), "({q},{k})");
            }
        }
        let single = BlockCausalMask::new(1, 3);
        assert!((0..3).all(|q| (0..3).all(|k| single.allowed(q, k))));
        let tri = BlockCausalMask::new(5, 1);
        assert!((0..5).all(|q| (0..5).all(|k| tri.allowed(q, k) == (k <= q))));
    }

    #[test]
    fn single_token_returns_projected_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let attn =
            CliffordAttention::new(&mut store, "a", 2, 1, LinearMode::S, true, &mut rng).unwrap();
        let x = Tensor::from_fn(&[1, 1, 2, 8], |_| rng.gen_range(-1.0..1.0));
        let mask = BlockCausalMask::new(1, 1);
        let y = run(&store, &attn, &x, &mask);

        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xv = g.constant(x);
        let v = attn.v.forward(&mut g, &p, xv).unwrap();
        let o = attn.out.forward(&mut g, &p, v).unwrap();
        assert!(y
            .data()
            .iter()
            .zip(g.value(o).data())
            .all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let attn =
            CliffordAttention::new(&mut store, "a", 2, 2, LinearMode::E, true, &mut rng).unwrap();
        let token: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::new(vec![1, 2, 2, 8], [token.clone(), token].concat()).unwrap();
        let mask = BlockCausalMask::new(1, 2);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xv = g.constant(x);
        let w = attn.weights(&mut g, &p, xv, &mask).unwrap();
        assert!(g.value(w).data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn weights_are_causal_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let attn =
            CliffordAttention::new(&mut store, "a", 4, 2, LinearMode::SAd, true, &mut rng).unwrap();
        let mask = BlockCausalMask::new(3, 2);
        let x = Tensor::from_fn(&[2, 6, 4, 8], |_| rng.gen_range(-1.0..1.0));
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let xv = g.constant(x);
        let w = attn.weights(&mut g, &p, xv, &mask).unwrap();
        for (r, row) in g.value(w).data().chunks(6).enumerate() {
            let q = r % 6;
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            for (k, &v) in row.iter().enumerate() {
                assert!(v >= 0.0);
                if !mask.allowed(q, k) {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn future_tokens_do_not_leak() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let attn =
            CliffordAttention::new(&mut store, "a", 4, 2, LinearMode::S, false, &mut rng).unwrap();
        let (steps, objects) = (3, 2);
        let mask = BlockCausalMask::new(steps, objects);
        let x = Tensor::from_fn(&[1, 6, 4, 8], |_| rng.gen_range(-1.0..1.0));
        let base = run(&store, &attn, &x, &mask);
        let mut bumped = x.clone();
        // perturb every token at the last timestep
        for v in &mut bumped.data_mut()[4 * 32..] {
            *v += 0.37;
        }
        let after = run(&store, &attn, &bumped, &mask);
        assert_eq!(&base.data()[..4 * 32], &after.data()[..4 * 32]);
        assert_ne!(&base.data()[4 * 32..], &after.data()[4 * 32..]);
    }

    #[test]
    fn head_permutation_commutes_with_concatenation() {
        // swapping the two heads' q/k/v weight blocks permutes the pre-output
        // channels by swapping head blocks
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let attn =
            CliffordAttention::new(&mut store, "a", 2, 2, LinearMode::S, true, &mut rng).unwrap();
        let mut ident = store.value(attn.out.weight()).clone();
        let one = Multivector::ONE.0;
        ident.data_mut().iter_mut().for_each(|v| *v = 0.0);
        ident.data_mut()[0..8].copy_from_slice(&one);
        ident.data_mut()[24..32].copy_from_slice(&one);
        *store.value_mut(attn.out.weight()) = ident;
        let x = Tensor::from_fn(&[1, 3, 2, 8], |_| rng.gen_range(-1.0..1.0));
        let mask = BlockCausalMask::new(3, 1);
        let y = run(&store, &attn, &x, &mask);

        for lin in [attn.q.weight(), attn.k.weight(), attn.v.weight()] {
            // weight layout (out, in, 8): swap output rows
            let w = store.value_mut(lin).data_mut();
            let (a, b) = w.split_at_mut(16);
            a.swap_with_slice(b);
        }
        let swapped = run(&store, &attn, &x, &mask);
        for t in 0..3 {
            let y = &y.data()[t * 16..t * 16 + 16];
            let s = &swapped.data()[t * 16..t * 16 + 16];
            assert_eq!(&y[..8], &s[8..]);
            assert_eq!(&y[8..], &s[..8]);
        }
    }

    #[test]
    fn dense_attention_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let attn = DenseAttention::new(&mut store, "d", 6, 3, &mut rng).unwrap();
        assert_eq!(attn.num_params(), store.num_scalars());
        let mask = BlockCausalMask::new(2, 2);
        let x = Tensor::from_fn(&[1, 4, 6], |_| rng.gen_range(-1.0..1.0));
        let eval = |x: &Tensor| {
            let mut g = Graph::new();
            let p = store.bind(&mut g, false);
            let xv = g.constant(x.clone());
            let y = attn.forward(&mut g, &p, xv, &mask).unwrap();
            g.value(y).clone()
        };
        let base = eval(&x);
        let mut bumped = x.clone();
        bumped.data_mut()[20] += 1.0;
        let after = eval(&bumped);
        assert_eq!(&base.data()[..12], &after.data()[..12]);
    }

    #[test]
    fn head_count_must_divide_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        assert!(CliffordAttention::new(&mut store, "a", 6, 4, LinearMode::S, true, &mut rng).is_err());
    }
}
