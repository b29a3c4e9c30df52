use std::cell::RefCell;

use candle_core::{Device, Tensor, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Init, ParamStore};
use crate::error::Result;

/// Forward-pass context: dropout is active only in training mode and draws
/// its masks from a seeded generator.
pub struct Ctx {
    train: bool,
    p: f32,
    rng: RefCell<ChaCha8Rng>,
}

impl Ctx {
    pub fn eval() -> Self {
        Ctx {
            train: false,
            p: 0.0,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    pub fn train(p: f32, seed: u64) -> Self {
        Ctx {
            train: true,
            p,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn dropout(&self, x: &Tensor) -> Result<Tensor> {
        if !self.train || self.p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - self.p;
        let mut rng = self.rng.borrow_mut();
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?;
        Ok(x.mul(&mask)?)
    }
}

pub struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Linear::with_std(ps, name, d_in, d_out, (d_in as f64).powf(-0.5))
    }

    pub fn with_std(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, std: f64) -> Result<Self> {
        Ok(Linear {
            w: ps.create(&format!("{name}.weight"), &[d_out, d_in], Init::Normal(std))?,
            b: ps.create(&format!("{name}.bias"), &[d_out], Init::Zeros)?,
        })
    }

    /// Applies to the last axis of an input of any rank.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = dims[dims.len() - 1];
        let rows = x.elem_count() / d_in.max(1);
        let y = (x.reshape((rows, d_in))?.matmul(&self.w.t()?)? + tile_rows(&self.b, rows)?)?;
        let mut out_dims = dims;
        *out_dims.last_mut().expect("rank >= 1") = self.w.dim(0)?;
        Ok(y.reshape(out_dims)?)
    }
}

pub struct LayerNorm {
    g: Tensor,
    b: Tensor,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(LayerNorm {
            g: ps.create(&format!("{name}.weight"), &[d], Init::Ones)?,
            b: ps.create(&format!("{name}.bias"), &[d], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d = dims[dims.len() - 1];
        let rows = x.elem_count() / d.max(1);
        let x = x.reshape((rows, d))?;
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        let y = ((xn * tile_rows(&self.g, rows)?)? + tile_rows(&self.b, rows)?)?;
        Ok(y.reshape(dims)?)
    }
}

/// Repeats a vector as `rows` rows. Built as a rank-1 product so the
/// gradient reduction runs through the matrix kernel.
fn tile_rows(v: &Tensor, rows: usize) -> Result<Tensor> {
    let ones = Tensor::ones((rows, 1), v.dtype(), v.device())?;
    Ok(ones.matmul(&v.reshape((1, v.elem_count()))?)?)
}

/// Row lookup into an embedding matrix.
pub fn embed(table: &Tensor, ids: &Tensor) -> Result<Tensor> {
    let (b, t) = ids.dims2()?;
    let dim = table.dim(1)?;
    Ok(table.index_select(&ids.flatten_all()?, 0)?.reshape((b, t, dim))?)
}

pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize) -> Result<Self> {
        Ok(Attention {
            q: Linear::new(ps, &format!("{name}.q"), d, d)?,
            k: Linear::new(ps, &format!("{name}.k"), d, d)?,
            v: Linear::new(ps, &format!("{name}.v"), d, d)?,
            o: Linear::new(ps, &format!("{name}.o"), d, d)?,
            heads,
        })
    }

    /// `mask` is additive with shape `(b, 1, tq, tk)`.
    pub fn forward(&self, q_in: &Tensor, kv_in: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, tq, d) = q_in.dims3()?;
        let tk = kv_in.dim(1)?;
        let (h, dh) = (self.heads, d / self.heads);
        let split = |x: Tensor, t: usize| -> Result<Tensor> {
            Ok(x.reshape((b, t, h, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(q_in)?, tq)?;
        let k = split(self.k.forward(kv_in)?, tk)?;
        let v = split(self.v.forward(kv_in)?, tk)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? * (dh as f64).powf(-0.5))?;
        let att = candle_nn::ops::softmax(&scores.broadcast_add(mask)?, D::Minus1)?;
        let out = att.matmul(&v)?.transpose(1, 2)?.reshape((b, tq, d))?;
        self.o.forward(&out)
    }
}

pub struct FeedForward {
    l1: Linear,
    l2: Linear,
}

impl FeedForward {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, ffn: usize) -> Result<Self> {
        Ok(FeedForward {
            l1: Linear::new(ps, &format!("{name}.fc1"), d, ffn)?,
            l2: Linear::new(ps, &format!("{name}.fc2"), ffn, d)?,
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let h = self.l1.forward(x)?.relu()?;
        self.l2.forward(&ctx.dropout(&h)?)
    }
}

/// Pre-norm self-attention block.
pub struct EncoderLayer {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize, ffn: usize) -> Result<Self> {
        Ok(EncoderLayer {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d)?,
            attn: Attention::new(ps, &format!("{name}.self_attn"), d, heads)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d)?,
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), d, ffn)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let x = (x + ctx.dropout(&self.attn.forward(&h, &h, mask)?)?)?;
        let h = self.ln2.forward(&x)?;
        Ok((&x + ctx.dropout(&self.ffn.forward(&h, ctx)?)?)?)
    }
}

/// Pre-norm self-attention, cross-attention and feed-forward block.
pub struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    cross_attn: Attention,
    ln3: LayerNorm,
    ffn: FeedForward,
}

impl DecoderLayer {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize, ffn: usize) -> Result<Self> {
        Ok(DecoderLayer {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d)?,
            self_attn: Attention::new(ps, &format!("{name}.self_attn"), d, heads)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d)?,
            cross_attn: Attention::new(ps, &format!("{name}.cross_attn"), d, heads)?,
            ln3: LayerNorm::new(ps, &format!("{name}.ln3"), d)?,
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), d, ffn)?,
        })
    }

    pub fn forward(
        &self,
        x: &Tensor,
        self_mask: &Tensor,
        memory: &Tensor,
        memory_mask: &Tensor,
        ctx: &Ctx,
    ) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let x = (x + ctx.dropout(&self.self_attn.forward(&h, &h, self_mask)?)?)?;
        let h = self.ln2.forward(&x)?;
        let x = (&x + ctx.dropout(&self.cross_attn.forward(&h, memory, memory_mask)?)?)?;
        let h = self.ln3.forward(&x)?;
        Ok((&x + ctx.dropout(&self.ffn.forward(&h, ctx)?)?)?)
    }
}

/// Sinusoidal position table of shape `(max_len, d)`.
pub fn sinusoids(max_len: usize, d: usize, device: &Device) -> Result<Tensor> {
    let mut data = vec![0f32; max_len * d];
    for pos in 0..max_len {
        for i in 0..d / 2 {
            let freq = (10_000f64).powf(-((2 * i) as f64) / d as f64);
            let a = pos as f64 * freq;
            data[pos * d + 2 * i] = a.sin() as f32;
            data[pos * d + 2 * i + 1] = a.cos() as f32;
        }
    }
    Ok(Tensor::from_vec(data, (max_len, d), device)?)
}

/// Additive attention mask `(b, 1, tq, tk)`: padded keys and, when
/// `causal`, future positions get a large negative score.
pub fn attention_mask(key_valid: &[Vec<bool>], tq: usize, causal: bool, device: &Device) -> Result<Tensor> {
    let b = key_valid.len();
    let tk = key_valid.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(b * tq * tk);
    for valid in key_valid {
        for i in 0..tq {
            for (j, &ok) in valid.iter().enumerate() {
                let blocked = !ok || (causal && j > i);
                data.push(if blocked { -1e9f32 } else { 0.0 });
            }
        }
    }
    Ok(Tensor::from_vec(data, (b, 1, tq, tk), device)?)
}
