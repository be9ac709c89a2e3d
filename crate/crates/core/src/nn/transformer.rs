use ndarray::Array2;
use rand::Rng;

use super::{AttentionCache, Gelu, LayerNorm, LayerNormCache, Linear, MultiHeadAttention};
use crate::error::{shape_err, Result};
use crate::params::{Gradients, ParamBuilder, ParameterStore};
use crate::tensor::{Real, TokenSequence};

/// Pre-norm transformer block: self-attention then a GELU MLP with a hidden
/// width of twice the block width, each wrapped in a residual connection.
#[derive(Clone, Copy, Debug)]
pub struct TransformerBlock {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_mlp: LayerNorm,
    pub fc_in: Linear,
    pub fc_out: Linear,
    pub width: usize,
}

pub struct BlockCache<T> {
    norm_attn: LayerNormCache<T>,
    attn: AttentionCache<T>,
    norm_mlp: LayerNormCache<T>,
    mlp_in: Array2<T>,
    pre_act: Array2<T>,
    hidden: Array2<T>,
}

impl TransformerBlock {
    pub fn build<T: Real, R: Rng>(
        b: &mut ParamBuilder<'_, T, R>,
        name: &str,
        width: usize,
        heads: usize,
    ) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(Self {
            norm_attn: LayerNorm::build(&mut s, "norm_attn", width)?,
            attn: MultiHeadAttention::build(&mut s, "attn", width, width, width, width, heads)?,
            norm_mlp: LayerNorm::build(&mut s, "norm_mlp", width)?,
            fc_in: Linear::build(&mut s, "fc_in", width, 2 * width)?,
            fc_out: Linear::build(&mut s, "fc_out", 2 * width, width)?,
            width,
        })
    }

    pub fn forward<T: Real>(
        &self,
        store: &ParameterStore<T>,
        x: &Array2<T>,
    ) -> Result<(Array2<T>, BlockCache<T>)> {
        if x.ncols() != self.width {
            return Err(shape_err!(
                "transformer block width {} got {} channels",
                self.width,
                x.ncols()
            ));
        }
        let (n1, norm_attn) = self.norm_attn.forward(store, x)?;
        let (a, attn) = self.attn.forward(store, &n1, &n1)?;
        let h = x + &a;
        let (mlp_in, norm_mlp) = self.norm_mlp.forward(store, &h)?;
        let pre_act = self.fc_in.forward(store, &mlp_in)?;
        let hidden = Gelu::forward(&pre_act);
        let y = h + &self.fc_out.forward(store, &hidden)?;
        Ok((
            y,
            BlockCache {
                norm_attn,
                attn,
                norm_mlp,
                mlp_in,
                pre_act,
                hidden,
            },
        ))
    }

    pub fn backward<T: Real>(
        &self,
        store: &ParameterStore<T>,
        cache: &BlockCache<T>,
        dy: &Array2<T>,
        grads: &mut Gradients<T>,
    ) -> Array2<T> {
        let dhidden = self.fc_out.backward(store, &cache.hidden, dy, grads);
        let dpre = Gelu::backward(&cache.pre_act, &dhidden);
        let dmlp_in = self.fc_in.backward(store, &cache.mlp_in, &dpre, grads);
        let mut dh = dy + &self.norm_mlp.backward(store, &cache.norm_mlp, &dmlp_in, grads);
        let (dq, dkv) = self.attn.backward(store, &cache.attn, &dh, grads);
        let dn1 = dq + &dkv;
        dh += &self.norm_attn.backward(store, &cache.norm_attn, &dn1, grads);
        dh
    }
}

/// Run one block over a token sequence; the patch grid tag is preserved.
pub fn transformer_block<T: Real>(
    toks: &TokenSequence<T>,
    store: &ParameterStore<T>,
    block: &TransformerBlock,
) -> Result<TokenSequence<T>> {
    let (y, _) = block.forward(store, toks.data())?;
    match toks.grid() {
        Some(g) if g.token_dim() == y.ncols() => TokenSequence::with_grid(y, g),
        _ => Ok(TokenSequence::new(y)),
    }
}
