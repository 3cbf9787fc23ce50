//! Parameter store and the small set of layers the model is built from.

use candle_core::{DType, Device, Result, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Named trainable parameters with seeded initialization.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self { vars: BTreeMap::new(), dtype, device: Device::Cpu }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: &str, t: Tensor) -> Result<Tensor> {
        assert!(!self.vars.contains_key(name), "duplicate parameter {name}");
        let var = Var::from_tensor(&t.to_dtype(self.dtype)?)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, rng: &mut ChaCha8Rng, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::from_vec(data, shape, &self.device)?)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.insert(name, Tensor::from_vec(vec![value; n], shape, &self.device)?)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn tensors(&self) -> BTreeMap<String, Tensor> {
        self.vars.iter().map(|(k, v)| (k.clone(), v.as_tensor().clone())).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites every parameter from `values`; names and shapes must match exactly.
    pub fn assign(&self, values: &BTreeMap<String, Tensor>) -> std::result::Result<(), String> {
        if values.len() != self.vars.len() {
            return Err(format!("expected {} tensors, found {}", self.vars.len(), values.len()));
        }
        for (name, var) in &self.vars {
            let t = values.get(name).ok_or_else(|| format!("missing tensor {name}"))?;
            if t.dims() != var.dims() {
                return Err(format!("tensor {name}: shape {:?}, expected {:?}", t.dims(), var.dims()));
            }
            let t = t.to_dtype(self.dtype).map_err(|e| e.to_string())?;
            var.set(&t).map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    ((x * 0.5)?.tanh()? + 1.0)? * 0.5
}

/// Elementwise `-[y log σ(x) + (1 - y) log(1 - σ(x))]`, computed stably.
pub fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let pos = logits.relu()?;
    let soft = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    (pos - (logits * targets)?)? + soft
}

#[derive(Clone)]
pub struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input: usize, output: usize) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        Ok(Self {
            w: ps.uniform(rng, &format!("{name}.weight"), &[output, input], bound)?,
            b: ps.uniform(rng, &format!("{name}.bias"), &[output], bound)?,
        })
    }

    /// `x` is `[n, input]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w.t()?)?.broadcast_add(&self.b)
    }

    /// Applies to the last axis of a tensor of any rank.
    pub fn forward_nd(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let last = dims[dims.len() - 1];
        let rows = x.elem_count() / last;
        let y = self.forward(&x.reshape((rows, last))?)?;
        let mut out = dims;
        let n = out.len();
        out[n - 1] = self.w.dim(0)?;
        y.reshape(out)
    }
}

/// Single-layer LSTM with gate order input, forget, cell, output.
#[derive(Clone)]
pub struct Lstm {
    w_ih: Tensor,
    w_hh: Tensor,
    b: Tensor,
    hidden: usize,
}

pub type State = (Tensor, Tensor);

impl Lstm {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input: usize, hidden: usize) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = ps.uniform(rng, &format!("{name}.w_ih"), &[4 * hidden, input], bound)?;
        let w_hh = ps.uniform(rng, &format!("{name}.w_hh"), &[4 * hidden, hidden], bound)?;
        // forget-gate bias starts at 1 so early gradients flow through time
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        let device = ps.device().clone();
        let b = ps.insert(&format!("{name}.bias"), Tensor::from_vec(bias, 4 * hidden, &device)?)?;
        Ok(Self { w_ih, w_hh, b, hidden })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn zero_state(&self, batch: usize, dtype: DType, device: &Device) -> Result<State> {
        let z = Tensor::zeros((batch, self.hidden), dtype, device)?;
        Ok((z.clone(), z))
    }

    /// Input contribution `x W_ihᵀ + b` for `[n, input]` rows.
    pub fn project(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w_ih.t()?)?.broadcast_add(&self.b)
    }

    /// One step from a precomputed input projection `[batch, 4·hidden]`.
    pub fn step_projected(&self, xp: &Tensor, state: &State) -> Result<State> {
        let (h, c) = state;
        let gates = (xp + h.matmul(&self.w_hh.t()?)?)?;
        let g = gates.chunk(4, 1)?;
        let i = sigmoid(&g[0])?;
        let f = sigmoid(&g[1])?;
        let cell = g[2].tanh()?;
        let o = sigmoid(&g[3])?;
        let c = ((f * c)? + (i * cell)?)?;
        let h = (o * c.tanh()?)?;
        Ok((h, c))
    }

    pub fn step(&self, x: &Tensor, state: &State) -> Result<State> {
        self.step_projected(&self.project(x)?, state)
    }

    /// Runs over `[batch, len, input]`; returns all hidden states `[batch, len, hidden]`
    /// and the final state. With `reverse` the sequence is read back to front and the
    /// outputs are returned in the original order.
    pub fn run(&self, x: &Tensor, state: State, reverse: bool) -> Result<(Tensor, State)> {
        let (b, l, i) = x.dims3()?;
        let xp = self.project(&x.reshape((b * l, i))?)?.reshape((b, l, 4 * self.hidden))?;
        let mut state = state;
        let mut outs = vec![None; l];
        for k in 0..l {
            let t = if reverse { l - 1 - k } else { k };
            state = self.step_projected(&xp.narrow(1, t, 1)?.squeeze(1)?, &state)?;
            outs[t] = Some(state.0.clone());
        }
        let outs: Vec<Tensor> = outs.into_iter().map(|o| o.expect("every step visited")).collect();
        Ok((Tensor::stack(&outs, 1)?, state))
    }
}

/// Bidirectional LSTM; the summary is `[h_forward(last), h_backward(first)]`.
#[derive(Clone)]
pub struct BiLstm {
    fwd: Lstm,
    bwd: Lstm,
}

impl BiLstm {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fwd: Lstm::new(ps, rng, &format!("{name}.fwd"), input, hidden)?,
            bwd: Lstm::new(ps, rng, &format!("{name}.bwd"), input, hidden)?,
        })
    }

    /// `[batch, len, input]` → `[batch, 2·hidden]`.
    pub fn summarize(&self, x: &Tensor) -> Result<Tensor> {
        let b = x.dim(0)?;
        let s0 = self.fwd.zero_state(b, x.dtype(), x.device())?;
        let (_, (hf, _)) = self.fwd.run(x, s0.clone(), false)?;
        let (_, (hb, _)) = self.bwd.run(x, s0, true)?;
        Tensor::cat(&[hf, hb], D::Minus1)
    }
}

/// 2-D convolution without padding, stride 1.
#[derive(Clone)]
pub struct Conv2d {
    w: Tensor,
    b: Tensor,
}

impl Conv2d {
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        output: usize,
        kernel: (usize, usize),
    ) -> Result<Self> {
        let fan_in = input * kernel.0 * kernel.1;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Ok(Self {
            w: ps.uniform(rng, &format!("{name}.weight"), &[output, input, kernel.0, kernel.1], bound)?,
            b: ps.uniform(rng, &format!("{name}.bias"), &[output], bound)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.w, 0, 1, 1, 1)?;
        y.broadcast_add(&self.b.reshape((1, self.b.dim(0)?, 1, 1))?)
    }

    /// Zero-padded convolution of a sparse input, channels last: `[B, T_out, P_out, O]`.
    /// Only the nonzero input cells are visited, each scattering one weight column
    /// into every output position it reaches.
    pub fn forward_sparse(&self, x: &SparseGrid, pad_t: (usize, usize), pad_p: (usize, usize)) -> Result<Tensor> {
        let (o, c, kt, kp) = self.w.dims4()?;
        assert_eq!(c, x.channels, "channel count");
        let t_out = x.steps + pad_t.0 + pad_t.1 + 1 - kt;
        let p_out = x.pitches + pad_p.0 + pad_p.1 + 1 - kp;
        let (mut idx, mut pos, mut val) = (Vec::new(), Vec::new(), Vec::new());
        for &(b, ch, t, p, v) in &x.entries {
            let (t, p) = (t as usize + pad_t.0, p as usize + pad_p.0);
            for i in 0..kt {
                let Some(to) = t.checked_sub(i).filter(|to| *to < t_out) else { continue };
                for j in 0..kp {
                    let Some(po) = p.checked_sub(j).filter(|po| *po < p_out) else { continue };
                    idx.push(((ch as usize * kt + i) * kp + j) as u32);
                    pos.push(((b as usize * t_out + to) * p_out + po) as u32);
                    val.push(v);
                }
            }
        }
        let dev = self.w.device();
        let rows = x.batch * t_out * p_out;
        let out = Tensor::zeros((rows, o), self.w.dtype(), dev)?;
        let out = if idx.is_empty() {
            out
        } else {
            let k = idx.len();
            let wflat = self.w.reshape((o, c * kt * kp))?.t()?.contiguous()?;
            let vals = Tensor::from_vec(val, (k, 1), dev)?.to_dtype(self.w.dtype())?;
            let src = wflat.index_select(&Tensor::from_vec(idx, k, dev)?, 0)?.broadcast_mul(&vals)?;
            out.index_add(&Tensor::from_vec(pos, k, dev)?, &src, 0)?
        };
        out.broadcast_add(&self.b)?.reshape((x.batch, t_out, p_out, o))
    }
}

/// Nonzero cells of a `[batch, channels, steps, pitches]` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrid {
    pub batch: usize,
    pub channels: usize,
    pub steps: usize,
    pub pitches: usize,
    /// `(batch, channel, step, pitch, value)`
    pub entries: Vec<(u32, u16, u16, u16, f32)>,
}

impl SparseGrid {
    /// From row-major dense items, each `[channels, steps, pitches]`.
    pub fn from_items(items: &[&[f32]], channels: usize, steps: usize, pitches: usize) -> Self {
        let mut entries = Vec::new();
        for (b, data) in items.iter().enumerate() {
            assert_eq!(data.len(), channels * steps * pitches, "grid size");
            for (k, &v) in data.iter().enumerate() {
                if v != 0.0 {
                    let (c, rest) = (k / (steps * pitches), k % (steps * pitches));
                    entries.push((b as u32, c as u16, (rest / pitches) as u16, (rest % pitches) as u16, v));
                }
            }
        }
        Self { batch: items.len(), channels, steps, pitches, entries }
    }

    pub fn from_tensor(x: &Tensor) -> Result<Self> {
        let (b, c, t, p) = x.dims4()?;
        let data = x.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let items: Vec<&[f32]> = data.chunks(c * t * p).collect();
        let mut g = Self::from_items(&items, c, t, p);
        g.batch = b;
        Ok(g)
    }

    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        let (c, t, p) = (self.channels, self.steps, self.pitches);
        let mut data = vec![0f32; self.batch * c * t * p];
        for &(b, ch, s, q, v) in &self.entries {
            data[((b as usize * c + ch as usize) * t + s as usize) * p + q as usize] = v;
        }
        Tensor::from_vec(data, (self.batch, c, t, p), &Device::Cpu)?.to_dtype(dtype)
    }
}
