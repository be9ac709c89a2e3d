use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::Linear;
use crate::error::{shape_err, Error, Result};
use crate::params::{Gradients, ParamBuilder, ParameterStore};
use crate::tensor::{Real, TokenSequence};

/// Scaled dot-product attention with `heads` heads. Queries come from one
/// sequence and keys/values from another; self-attention passes the same
/// sequence twice.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub attn_dim: usize,
}

pub struct AttentionCache<T> {
    q_src: Array2<T>,
    kv_src: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    mixed: Array2<T>,
}

impl<T> AttentionCache<T> {
    /// Softmax weights of every head, each `queries × keys`.
    pub fn weights(&self) -> &[Array2<T>] {
        &self.probs
    }
}

fn softmax_rows<T: Real>(scores: &mut Array2<T>) {
    for mut row in scores.outer_iter_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

impl MultiHeadAttention {
    pub fn build<T: Real, R: Rng>(
        b: &mut ParamBuilder<'_, T, R>,
        name: &str,
        q_dim: usize,
        kv_dim: usize,
        attn_dim: usize,
        out_dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || attn_dim % heads != 0 {
            return Err(Error::Config(format!(
                "attention width {attn_dim} is not divisible by {heads} heads"
            )));
        }
        let mut s = b.scope(name);
        Ok(Self {
            query: Linear::build(&mut s, "query", q_dim, attn_dim)?,
            key: Linear::build(&mut s, "key", kv_dim, attn_dim)?,
            value: Linear::build(&mut s, "value", kv_dim, attn_dim)?,
            output: Linear::build(&mut s, "output", attn_dim, out_dim)?,
            heads,
            attn_dim,
        })
    }

    fn head_dim(&self) -> usize {
        self.attn_dim / self.heads
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParameterStore<T>,
        q_src: &Array2<T>,
        kv_src: &Array2<T>,
    ) -> Result<(Array2<T>, AttentionCache<T>)> {
        if q_src.iter().chain(kv_src.iter()).any(|v| v.is_nan()) {
            return Err(Error::Numeric("NaN in attention input".into()));
        }
        if kv_src.nrows() == 0 {
            return Err(shape_err!("attention over an empty key/value sequence"));
        }
        let q = self.query.forward(store, q_src)?;
        let k = self.key.forward(store, kv_src)?;
        let v = self.value.forward(store, kv_src)?;
        let dh = self.head_dim();
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let mut mixed = Array2::zeros((q.nrows(), self.attn_dim));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t());
            scores.mapv_inplace(|x| x * scale);
            softmax_rows(&mut scores);
            mixed.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let out = self.output.forward(store, &mixed)?;
        Ok((
            out,
            AttentionCache {
                q_src: q_src.clone(),
                kv_src: kv_src.clone(),
                q,
                k,
                v,
                probs,
                mixed,
            },
        ))
    }

    /// Returns gradients with respect to the query source and the key/value
    /// source.
    pub fn backward<T: Real>(
        &self,
        store: &ParameterStore<T>,
        cache: &AttentionCache<T>,
        dout: &Array2<T>,
        grads: &mut Gradients<T>,
    ) -> (Array2<T>, Array2<T>) {
        let dmixed = self.output.backward(store, &cache.mixed, dout, grads);
        let dh = self.head_dim();
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dmix_h = dmixed.slice(cols);
            dv.slice_mut(cols).assign(&p.t().dot(&dmix_h));
            let dp = dmix_h.dot(&cache.v.slice(cols).t());
            let row_dot = (&dp * p).sum_axis(Axis(1));
            let mut ds = dp - &row_dot.insert_axis(Axis(1));
            ds *= p;
            ds.mapv_inplace(|x| x * scale);
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let dq_src = self.query.backward(store, &cache.q_src, &dq, grads);
        let mut dkv_src = self.key.backward(store, &cache.kv_src, &dk, grads);
        dkv_src += &self.value.backward(store, &cache.kv_src, &dv, grads);
        (dq_src, dkv_src)
    }
}

/// Cross (or self) attention over token sequences.
pub fn multi_head_attention<T: Real>(
    q_src: &TokenSequence<T>,
    kv_src: &TokenSequence<T>,
    store: &ParameterStore<T>,
    layer: &MultiHeadAttention,
) -> Result<TokenSequence<T>> {
    let (out, _) = layer.forward(store, q_src.data(), kv_src.data())?;
    Ok(TokenSequence::new(out))
}

/// Per-head attention weight matrices for a query/key pair.
pub fn attention_weights<T: Real>(
    q_src: &TokenSequence<T>,
    kv_src: &TokenSequence<T>,
    store: &ParameterStore<T>,
    layer: &MultiHeadAttention,
) -> Result<Vec<Array2<T>>> {
    let (_, cache) = layer.forward(store, q_src.data(), kv_src.data())?;
    Ok(cache.probs)
}
