//! Single-head relative self-attention over note summaries.

use crate::error::{check_dim, ModelError, Result};
use crate::nn::{Linear, ParamStore};
use candle_core::{DType, Tensor, D};
use rand_chacha::ChaCha8Rng;

/// Additive logit for masked positions.
pub const MASKED: f64 = -1e9;

/// `softmax((Q Kᵀ + S) / √D) V` for `q: [B, Lq, D]`, `k: [B, Lk, D]`, `v: [B, Lk, Dv]`,
/// `s_rel: [Lq, Lk]` and an optional additive `mask: [Lq, Lk]`.
/// Returns the context `[B, Lq, Dv]` and the weights `[B, Lq, Lk]`.
pub fn relative_self_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    s_rel: &Tensor,
    mask: Option<&Tensor>,
) -> Result<(Tensor, Tensor)> {
    let (b, lq, d) = q.dims3()?;
    let (bk, lk, dk) = k.dims3()?;
    check_dim("attention keys", "batch", b, bk)?;
    check_dim("attention keys", "feature", d, dk)?;
    check_dim("attention values", "length", lk, v.dim(1)?)?;
    check_dim("relative table", "query", lq, s_rel.dim(0)?)?;
    check_dim("relative table", "key", lk, s_rel.dim(1)?)?;
    let mut logits = q.matmul(&k.transpose(1, 2)?.contiguous()?)?.broadcast_add(s_rel)?;
    logits = (logits / (d as f64).sqrt())?;
    if let Some(m) = mask {
        logits = logits.broadcast_add(m)?;
    }
    let w = softmax_last(&logits)?;
    Ok((w.matmul(v)?, w))
}

/// Softmax over the last axis; the shift by the row maximum is treated as a constant.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// Additive causal mask `[Lq, Lk]` for queries at absolute positions `q_start..q_start+lq`.
pub fn causal_mask(q_start: usize, lq: usize, lk: usize, dtype: DType) -> Result<Tensor> {
    let data: Vec<f64> = (0..lq)
        .flat_map(|i| (0..lk).map(move |j| if j <= q_start + i { 0.0 } else { MASKED }))
        .collect();
    Ok(Tensor::from_vec(data, (lq, lk), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

/// Projections plus the learned relative offset table.
#[derive(Clone)]
pub struct RelativeAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    table: Tensor,
    max_len: usize,
}

impl RelativeAttention {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        query_in: usize,
        summary: usize,
        dim: usize,
        max_len: usize,
    ) -> Result<Self> {
        Ok(Self {
            wq: Linear::new(ps, rng, &format!("{name}.q"), query_in, dim)?,
            wk: Linear::new(ps, rng, &format!("{name}.k"), summary, dim)?,
            wv: Linear::new(ps, rng, &format!("{name}.v"), summary, dim)?,
            wo: Linear::new(ps, rng, &format!("{name}.out"), dim, summary)?,
            table: ps.constant(&format!("{name}.s_rel"), &[2 * max_len - 1], 0.0)?,
            max_len,
        })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Gathers `S[i][j] = table[r]` with `r = (j) − (q_start + i)` into `[lq, lk]`.
    pub fn relative_logits(&self, q_start: usize, lq: usize, lk: usize) -> Result<Tensor> {
        let needed = (q_start + lq).max(lk);
        if needed > self.max_len {
            return Err(ModelError::OffsetCoverage { max: self.max_len, needed });
        }
        let idx: Vec<u32> = (0..lq)
            .flat_map(|i| (0..lk).map(move |j| (j + self.max_len - 1 - (q_start + i)) as u32))
            .collect();
        let idx = Tensor::from_vec(idx, lq * lk, self.table.device())?;
        Ok(self.table.index_select(&idx, 0)?.reshape((lq, lk))?)
    }

    /// Queries from `h: [B, Lq, Hq]` at positions `q_start..`, keys and values from
    /// `summary: [B, Lk, S]`, causal. Returns the context in summary width and the weights.
    pub fn forward(&self, h: &Tensor, summary: &Tensor, q_start: usize) -> Result<(Tensor, Tensor)> {
        let lq = h.dim(1)?;
        let lk = summary.dim(1)?;
        let q = self.wq.forward_nd(h)?;
        let k = self.wk.forward_nd(summary)?;
        let v = self.wv.forward_nd(summary)?;
        let s = self.relative_logits(q_start, lq, lk)?;
        let mask = causal_mask(q_start, lq, lk, h.dtype())?;
        let (ctx, w) = relative_self_attention(&q, &k, &v, &s, Some(&mask))?;
        Ok((self.wo.forward_nd(&ctx)?, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use rand::SeedableRng;

    fn t3(data: &[f64], shape: (usize, usize, usize)) -> Tensor {
        Tensor::from_vec(data.to_vec(), shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn single_position_returns_value_row() {
        let q = t3(&[0.3, -1.0], (1, 1, 2));
        let k = t3(&[2.0, 0.5], (1, 1, 2));
        let v = t3(&[7.0, -3.0, 1.5], (1, 1, 3));
        let s = Tensor::zeros((1, 1), DType::F64, &Device::Cpu).unwrap();
        let (out, w) = relative_self_attention(&q, &k, &v, &s, None).unwrap();
        assert_eq!(out.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![7.0, -3.0, 1.5]);
        assert_eq!(w.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![1.0]);
    }

    #[test]
    fn rows_are_distributions_and_causal() {
        let mut ps = ParamStore::new(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let att = RelativeAttention::new(&mut ps, &mut rng, "a", 5, 6, 4, 8).unwrap();
        let h = Tensor::randn(0.0f64, 1.0, (2, 5, 5), &Device::Cpu).unwrap();
        let s = Tensor::randn(0.0f64, 1.0, (2, 5, 6), &Device::Cpu).unwrap();
        let (ctx, w) = att.forward(&h, &s, 0).unwrap();
        assert_eq!(ctx.dims(), &[2, 5, 6]);
        let w = w.to_vec3::<f64>().unwrap();
        for row in w.iter().flatten().enumerate() {
            let (i, r) = (row.0 % 5, row.1);
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(r.iter().all(|x| *x >= 0.0));
            assert!(r[i + 1..].iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn offsets_index_the_table() {
        let mut ps = ParamStore::new(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let att = RelativeAttention::new(&mut ps, &mut rng, "a", 2, 2, 2, 4).unwrap();
        let table = Tensor::new(&[-3.0f64, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0], &Device::Cpu).unwrap();
        ps.get("a.s_rel").unwrap().set(&table).unwrap();
        let s = att.relative_logits(1, 2, 4).unwrap().to_vec2::<f64>().unwrap();
        // entry = key position − query position
        assert_eq!(s, vec![vec![-1.0, 0.0, 1.0, 2.0], vec![-2.0, -1.0, 0.0, 1.0]]);
        assert!(matches!(att.relative_logits(0, 5, 5), Err(ModelError::OffsetCoverage { .. })));
    }
}
