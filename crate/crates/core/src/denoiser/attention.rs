//! Attention operators used by the denoiser.
//!
//! Token tensors are laid out `(batch, tokens, width)`; multi-view inputs add a
//! view axis, `(batch, views, tokens, width)`.

use candle_core::{Tensor, D};

use crate::error::{Error, Result};

/// Projection weights of one attention module. Matrices are stored `(in, out)`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights<'a> {
    pub q: &'a Tensor,
    pub k: &'a Tensor,
    pub v: &'a Tensor,
    pub o: &'a Tensor,
    pub o_bias: Option<&'a Tensor>,
    pub heads: usize,
}

impl AttentionWeights<'_> {
    fn inner_width(&self) -> Result<usize> {
        let d = self.q.dim(1)?;
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::invalid(format!("inner width {d} not divisible by {} heads", self.heads)));
        }
        Ok(d)
    }

    fn project_out(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(self.o)?;
        match self.o_bias {
            Some(b) => Ok(y.broadcast_add(b)?),
            None => Ok(y),
        }
    }
}

/// Row softmax over the last dimension. The max shift is detached; it cancels
/// analytically so gradients are unaffected.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, n, d) = x.dims3()?;
    Ok(x.reshape((b, n, heads, d / heads))?.transpose(1, 2)?.contiguous()?.reshape((b * heads, n, d / heads))?)
}

fn merge_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (bh, n, dh) = x.dims3()?;
    Ok(x.reshape((bh / heads, heads, n, dh))?.transpose(1, 2)?.contiguous()?.reshape((bh / heads, n, heads * dh))?)
}

/// Attention probabilities `softmax(q k^T / sqrt(d))` for already projected
/// single-head inputs `(b, nq, d)` and `(b, nk, d)`.
pub fn attention_probs(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    let d = q.dim(D::Minus1)?;
    let scores = (q.matmul(&k.transpose(1, 2)?.contiguous()?)? / (d as f64).sqrt())?;
    softmax_last(&scores)
}

/// Multi-head scaled dot-product attention on projected inputs.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor> {
    let (qh, kh, vh) = (split_heads(q, heads)?, split_heads(k, heads)?, split_heads(v, heads)?);
    let p = attention_probs(&qh, &kh)?;
    merge_heads(&p.matmul(&vh)?, heads)
}

/// Full attention: project, attend, project out.
pub fn attend(query_tokens: &Tensor, kv_tokens: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    w.inner_width()?;
    let q = query_tokens.broadcast_matmul(w.q)?;
    let k = kv_tokens.broadcast_matmul(w.k)?;
    let v = kv_tokens.broadcast_matmul(w.v)?;
    w.project_out(&scaled_dot_attention(&q, &k, &v, w.heads)?)
}

/// Stacks per-view token tensors `(batch, tokens, width)` into
/// `(batch, views, tokens, width)`.
pub fn stack_views(views: &[Tensor]) -> Result<Tensor> {
    let first = views.first().ok_or_else(|| Error::invalid("at least one view is required"))?;
    for (i, v) in views.iter().enumerate() {
        if v.dims() != first.dims() || v.rank() != 3 {
            return Err(Error::invalid(format!(
                "view {i} has shape {:?}, expected {:?}",
                v.dims(),
                first.dims()
            )));
        }
    }
    Ok(Tensor::stack(views, 1)?)
}

/// Every view's queries attend jointly over the keys and values of all views.
/// Input and output are `(batch, views, tokens, width)`.
pub fn multiview_attention(z: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    let (b, n, t, c) = z.dims4().map_err(|_| Error::invalid(format!("expected (batch, views, tokens, width), got {:?}", z.dims())))?;
    let flat = z.reshape((b, n * t, c))?;
    let out = attend(&flat, &flat, w)?;
    let c_out = out.dim(2)?;
    Ok(out.reshape((b, n, t, c_out))?)
}

/// Per-view variant taking a slice of `(batch, tokens, width)` tensors.
pub fn multiview_attention_views(views: &[Tensor], w: &AttentionWeights) -> Result<Vec<Tensor>> {
    let z = multiview_attention(&stack_views(views)?, w)?;
    (0..views.len()).map(|i| Ok(z.narrow(1, i, 1)?.squeeze(1)?)).collect()
}

/// Reference tokens cached at one attention stage of the backbone.
#[derive(Debug, Clone)]
pub struct RefLevel {
    pub stage: usize,
    /// `(batch, tokens, width)`
    pub tokens: Tensor,
}

/// Cross-attention from lane queries to the reference tokens of the same stage.
pub fn reference_cross_attention(q_tokens: &Tensor, stage: usize, reference: &RefLevel, w: &AttentionWeights) -> Result<Tensor> {
    if reference.stage != stage {
        return Err(Error::invalid(format!(
            "reference tokens belong to stage {}, queries to stage {stage}",
            reference.stage
        )));
    }
    let (qb, _, qc) = q_tokens.dims3()?;
    let (rb, _, rc) = reference.tokens.dims3()?;
    if qb != rb || qc != rc {
        return Err(Error::invalid(format!(
            "reference tokens {:?} incompatible with queries {:?}",
            reference.tokens.dims(),
            q_tokens.dims()
        )));
    }
    attend(q_tokens, &reference.tokens, w)
}

/// Residual injection of the albedo reference attention into the MR lane.
pub fn mcaa_inject(z_mr: &Tensor, attn_albedo: &Tensor) -> Result<Tensor> {
    if z_mr.dims() != attn_albedo.dims() {
        return Err(Error::invalid(format!(
            "MR tokens {:?} and albedo attention {:?} differ in shape",
            z_mr.dims(),
            attn_albedo.dims()
        )));
    }
    Ok((z_mr + attn_albedo)?)
}

/// Cross-attention from lane tokens `(batch, tokens, width)` to one lane's
/// embedding matrix `(embed_tokens, embed_width)`.
pub fn material_embedding_attention(lane_tokens: &Tensor, embedding: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    let (b, _, _) = lane_tokens.dims3()?;
    let (t, e) = embedding.dims2()?;
    if w.k.dim(0)? != e {
        return Err(Error::invalid(format!("embedding width {e} does not match key projection {:?}", w.k.dims())));
    }
    w.inner_width()?;
    // project the shared matrix once; matmul backward mishandles stride-0 batch inputs
    let k = embedding.matmul(w.k)?;
    let v = embedding.matmul(w.v)?;
    let d = k.dim(1)?;
    let k = k.unsqueeze(0)?.broadcast_as((b, t, d))?.contiguous()?;
    let v = v.unsqueeze(0)?.broadcast_as((b, t, d))?.contiguous()?;
    let q = lane_tokens.broadcast_matmul(w.q)?;
    w.project_out(&scaled_dot_attention(&q, &k, &v, w.heads)?)
}
