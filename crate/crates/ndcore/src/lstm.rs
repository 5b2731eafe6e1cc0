//! Fused LSTM cell recurrence and its backpropagation-through-time.

use rand::Rng;

use crate::error::{shape_err, NdError, Result};
use crate::kernels::{self, sigmoid};
use crate::params::{uniform, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Activations saved by the forward pass, stored in processing order.
pub(crate) struct LstmCache<T> {
    len: usize,
    hidden: usize,
    reverse: bool,
    /// Activated gates per step, `[len, 4h]` (i, f, g, o).
    gates: Vec<T>,
    cells: Vec<T>,
    tanh_cells: Vec<T>,
    hiddens: Vec<T>,
}

impl<T> LstmCache<T> {
    fn position(&self, step: usize) -> usize {
        if self.reverse {
            self.len - 1 - step
        } else {
            step
        }
    }
}

pub(crate) fn forward<T: Scalar>(
    x: &Tensor<T>,
    len: usize,
    w: &Tensor<T>,
    b: &Tensor<T>,
    reverse: bool,
) -> Result<(Tensor<T>, LstmCache<T>)> {
    if x.rank() != 2 || w.rank() != 2 || b.rank() != 1 {
        return Err(shape_err("lstm", format!("x {:?} w {:?} b {:?}", x.shape(), w.shape(), b.shape())));
    }
    let (rows, input) = x.dims2();
    let (wr, wc) = w.dims2();
    if wc % 4 != 0 || b.len() != wc || wr != input + wc / 4 {
        return Err(shape_err("lstm", format!("x {:?} w {:?} b {:?}", x.shape(), w.shape(), b.shape())));
    }
    if len == 0 {
        return Err(NdError::EmptySequence);
    }
    if len > rows {
        return Err(shape_err("lstm", format!("length {len} > {rows} rows")));
    }
    let h = wc / 4;
    let mut cache = LstmCache {
        len,
        hidden: h,
        reverse,
        gates: vec![T::zero(); len * 4 * h],
        cells: vec![T::zero(); len * h],
        tanh_cells: vec![T::zero(); len * h],
        hiddens: vec![T::zero(); len * h],
    };
    let mut out = vec![T::zero(); rows * h];
    let mut z = vec![T::zero(); 4 * h];
    let wd = w.data();
    for s in 0..len {
        let t = cache.position(s);
        z.copy_from_slice(b.data());
        kernels::matmul(x.row(t), &wd[..input * wc], 1, input, wc, &mut z);
        if s > 0 {
            let hp = &cache.hiddens[(s - 1) * h..s * h];
            kernels::matmul(hp, &wd[input * wc..], 1, h, wc, &mut z);
        }
        for j in 0..h {
            let i_g = sigmoid(z[j]);
            let f_g = sigmoid(z[h + j]);
            let g_g = z[2 * h + j].tanh();
            let o_g = sigmoid(z[3 * h + j]);
            let c_prev = if s > 0 { cache.cells[(s - 1) * h + j] } else { T::zero() };
            let c = f_g * c_prev + i_g * g_g;
            let tc = c.tanh();
            let hv = o_g * tc;
            let gb = s * 4 * h;
            cache.gates[gb + j] = i_g;
            cache.gates[gb + h + j] = f_g;
            cache.gates[gb + 2 * h + j] = g_g;
            cache.gates[gb + 3 * h + j] = o_g;
            cache.cells[s * h + j] = c;
            cache.tanh_cells[s * h + j] = tc;
            cache.hiddens[s * h + j] = hv;
            out[t * h + j] = hv;
        }
    }
    Ok((Tensor::new(vec![rows, h], out)?, cache))
}

pub(crate) fn backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    cache: &LstmCache<T>,
    g: &[T],
    dx: &mut [T],
    dw: &mut [T],
    db: &mut [T],
) {
    let h = cache.hidden;
    let input = x.dims2().1;
    let wc = 4 * h;
    let wd = w.data();
    let mut dh_next = vec![T::zero(); h];
    let mut dc_next = vec![T::zero(); h];
    let mut dz = vec![T::zero(); wc];
    let one = T::one();
    for s in (0..cache.len).rev() {
        let t = cache.position(s);
        let gb = s * 4 * h;
        for j in 0..h {
            let i_g = cache.gates[gb + j];
            let f_g = cache.gates[gb + h + j];
            let g_g = cache.gates[gb + 2 * h + j];
            let o_g = cache.gates[gb + 3 * h + j];
            let tc = cache.tanh_cells[s * h + j];
            let c_prev = if s > 0 { cache.cells[(s - 1) * h + j] } else { T::zero() };
            let dh = g[t * h + j] + dh_next[j];
            let d_o = dh * tc;
            let dc = dc_next[j] + dh * o_g * (one - tc * tc);
            let d_i = dc * g_g;
            let d_g = dc * i_g;
            let d_f = dc * c_prev;
            dc_next[j] = dc * f_g;
            dz[j] = d_i * i_g * (one - i_g);
            dz[h + j] = d_f * f_g * (one - f_g);
            dz[2 * h + j] = d_g * (one - g_g * g_g);
            dz[3 * h + j] = d_o * o_g * (one - o_g);
        }
        kernels::axpy(one, &dz, db);
        // Input half of the weight matrix.
        let xt = x.row(t);
        for (p, &xv) in xt.iter().enumerate() {
            if xv != T::zero() {
                kernels::axpy(xv, &dz, &mut dw[p * wc..(p + 1) * wc]);
            }
            dx[t * input + p] += kernels::dot(&wd[p * wc..(p + 1) * wc], &dz);
        }
        // Recurrent half.
        if s > 0 {
            let hp = &cache.hiddens[(s - 1) * h..s * h];
            for (q, &hv) in hp.iter().enumerate() {
                let row = input + q;
                kernels::axpy(hv, &dz, &mut dw[row * wc..(row + 1) * wc]);
                dh_next[q] = kernels::dot(&wd[row * wc..(row + 1) * wc], &dz);
            }
        } else {
            dh_next.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// Parameter handles of a bidirectional LSTM. Each direction owns a
/// `[input_dim + hidden_dim, 4 * hidden_dim]` weight whose column blocks are
/// the input, forget, cell and output gates, and a `[4 * hidden_dim]` bias.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub fwd_w: ParamId,
    pub fwd_b: ParamId,
    pub bwd_w: ParamId,
    pub bwd_b: ParamId,
}

impl LstmParams {
    /// Registers both directions under `prefix`. Weights are Glorot-uniform,
    /// biases zero except the forget gate, which starts at +1.
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let rows = input_dim + hidden_dim;
        let mut dir = |name: &str, rng: &mut R| -> Result<(ParamId, ParamId)> {
            // Glorot per gate block: fan_out is one gate's width.
            let bound = (6.0 / (rows + hidden_dim) as f64).sqrt();
            let w = uniform(rng, &[rows, 4 * hidden_dim], bound);
            let mut bias = vec![T::zero(); 4 * hidden_dim];
            for v in &mut bias[hidden_dim..2 * hidden_dim] {
                *v = T::one();
            }
            let w = store.add(&format!("{prefix}.{name}.w"), w, true)?;
            let b = store.add(&format!("{prefix}.{name}.b"), Tensor::vector(bias), true)?;
            Ok((w, b))
        };
        let (fwd_w, fwd_b) = dir("fwd", rng)?;
        let (bwd_w, bwd_b) = dir("bwd", rng)?;
        Ok(Self {
            input_dim,
            hidden_dim,
            fwd_w,
            fwd_b,
            bwd_w,
            bwd_b,
        })
    }

    pub fn from_store<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let fwd_w = store.id(&format!("{prefix}.fwd.w"))?;
        let shape = store.value(fwd_w).shape().to_vec();
        let hidden_dim = shape[1] / 4;
        Ok(Self {
            input_dim: shape[0] - hidden_dim,
            hidden_dim,
            fwd_w,
            fwd_b: store.id(&format!("{prefix}.fwd.b"))?,
            bwd_w: store.id(&format!("{prefix}.bwd.w"))?,
            bwd_b: store.id(&format!("{prefix}.bwd.b"))?,
        })
    }

    /// Runs both directions over the first `len` rows of `x` and returns
    /// `[T, 2h]` with the forward states in the first `h` columns.
    pub fn encode<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, len: usize) -> Result<Var> {
        let in_dim = tape.shape(x).get(1).copied().unwrap_or(0);
        if in_dim != self.input_dim {
            return Err(shape_err(
                "bilstm",
                format!("input width {in_dim}, expected {}", self.input_dim),
            ));
        }
        let (fw, fb) = (tape.param(store, self.fwd_w), tape.param(store, self.fwd_b));
        let (bw, bb) = (tape.param(store, self.bwd_w), tape.param(store, self.bwd_b));
        let f = tape.lstm(x, len, fw, fb, false)?;
        let r = tape.lstm(x, len, bw, bb, true)?;
        tape.concat(&[f, r])
    }
}
