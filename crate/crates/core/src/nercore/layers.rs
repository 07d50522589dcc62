//! Forward and backward passes of the network layers.
//!
//! Every forward function returns the cache its backward counterpart needs;
//! backward functions accumulate into gradient tensors shaped like the
//! parameters.

use super::tensor::{sigmoid, Tensor};
use crate::corpus::PAD;

/// Character CNN parameters: embeddings, `M` filters of width `K`, biases.
#[derive(Debug, Clone, PartialEq)]
pub struct CharCnnParams {
    /// `|chars| × d_char`
    pub embedding: Tensor,
    /// `M × (K · d_char)`; window columns are laid out position-major.
    pub filters: Tensor,
    /// `1 × M`
    pub bias: Tensor,
    pub kernel_width: usize,
}

impl CharCnnParams {
    pub fn num_filters(&self) -> usize {
        self.filters.rows()
    }

    pub fn char_dim(&self) -> usize {
        self.embedding.cols()
    }
}

pub struct CharCnnCache {
    chars: Vec<usize>,
    /// winning window per filter, `None` when the pooled value is clipped to 0
    argmax: Vec<Option<usize>>,
}

fn pad_chars(chars: &[usize], k: usize) -> Vec<usize> {
    let mut padded = chars.to_vec();
    while padded.len() < k {
        padded.push(PAD);
    }
    padded
}

fn window(params: &CharCnnParams, chars: &[usize], p: usize, buf: &mut Vec<f64>) {
    buf.clear();
    for &c in &chars[p..p + params.kernel_width] {
        buf.extend_from_slice(params.embedding.row(c));
    }
}

/// Max over positions of `ReLU(w_m · window_p + b_m)`, one value per filter.
///
/// Words shorter than the kernel are right-padded with PAD characters.
pub fn char_cnn_forward(params: &CharCnnParams, word_chars: &[usize]) -> (Vec<f64>, CharCnnCache) {
    let m = params.num_filters();
    let chars = pad_chars(word_chars, params.kernel_width.max(1));
    let positions = chars.len() + 1 - params.kernel_width;
    let mut best = vec![f64::NEG_INFINITY; m];
    let mut arg = vec![0; m];
    let mut buf = Vec::with_capacity(params.filters.cols());
    let mut conv = vec![0.0; m];
    for p in 0..positions {
        window(params, &chars, p, &mut buf);
        conv.copy_from_slice(params.bias.data());
        params.filters.matvec_acc(&buf, &mut conv);
        for f in 0..m {
            if conv[f] > best[f] {
                best[f] = conv[f];
                arg[f] = p;
            }
        }
    }
    let mut out = vec![0.0; m];
    let mut argmax = vec![None; m];
    for f in 0..m {
        if best[f] > 0.0 {
            out[f] = best[f];
            argmax[f] = Some(arg[f]);
        }
    }
    (out, CharCnnCache { chars, argmax })
}

pub fn char_cnn_backward(params: &CharCnnParams, cache: &CharCnnCache, d_out: &[f64], grad: &mut CharCnnParams) {
    let d = params.char_dim();
    let mut buf = Vec::with_capacity(params.filters.cols());
    for (f, pos) in cache.argmax.iter().enumerate() {
        let Some(p) = *pos else { continue };
        let g = d_out[f];
        if g == 0.0 {
            continue;
        }
        window(params, &cache.chars, p, &mut buf);
        grad.bias.add_at(0, f, g);
        for (w, x) in grad.filters.row_mut(f).iter_mut().zip(&buf) {
            *w += g * x;
        }
        let filter = params.filters.row(f);
        for k in 0..params.kernel_width {
            let c = cache.chars[p + k];
            let row = grad.embedding.row_mut(c);
            for (e, w) in row.iter_mut().zip(&filter[k * d..(k + 1) * d]) {
                *e += g * w;
            }
        }
    }
}

/// One LSTM direction. Gate blocks are ordered input, forget, candidate,
/// output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `4S × D`
    pub w_ih: Tensor,
    /// `4S × S`
    pub w_hh: Tensor,
    /// `1 × 4S`
    pub bias: Tensor,
}

impl LstmParams {
    pub fn state_size(&self) -> usize {
        self.w_hh.cols()
    }
}

pub struct LstmCache {
    inputs: Vec<Vec<f64>>,
    /// activated gates per step, `4S` each
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
}

/// Runs the recurrence over `inputs` in order from zero initial state.
pub fn lstm_forward(params: &LstmParams, inputs: &[Vec<f64>]) -> (Vec<Vec<f64>>, LstmCache) {
    let s = params.state_size();
    let mut h = vec![0.0; s];
    let mut c = vec![0.0; s];
    let mut cache = LstmCache {
        inputs: inputs.to_vec(),
        gates: Vec::with_capacity(inputs.len()),
        cells: Vec::with_capacity(inputs.len()),
        hidden: Vec::with_capacity(inputs.len()),
    };
    for x in inputs {
        let mut z = params.bias.data().to_vec();
        params.w_ih.matvec_acc(x, &mut z);
        params.w_hh.matvec_acc(&h, &mut z);
        for v in &mut z[..2 * s] {
            *v = sigmoid(*v);
        }
        for v in &mut z[2 * s..3 * s] {
            *v = v.tanh();
        }
        for v in &mut z[3 * s..] {
            *v = sigmoid(*v);
        }
        for j in 0..s {
            c[j] = z[s + j] * c[j] + z[j] * z[2 * s + j];
            h[j] = z[3 * s + j] * c[j].tanh();
        }
        cache.gates.push(z);
        cache.cells.push(c.clone());
        cache.hidden.push(h.clone());
    }
    (cache.hidden.clone(), cache)
}

/// Backpropagation through time. Returns gradients w.r.t. the inputs.
pub fn lstm_backward(params: &LstmParams, cache: &LstmCache, d_hidden: &[Vec<f64>], grad: &mut LstmParams) -> Vec<Vec<f64>> {
    let s = params.state_size();
    let n = cache.inputs.len();
    let mut d_inputs = vec![Vec::new(); n];
    let mut dh_next = vec![0.0; s];
    let mut dc_next = vec![0.0; s];
    let zero = vec![0.0; s];
    let mut dz = vec![0.0; 4 * s];
    for t in (0..n).rev() {
        let g = &cache.gates[t];
        let c = &cache.cells[t];
        let c_prev = if t > 0 { &cache.cells[t - 1] } else { &zero };
        let h_prev = if t > 0 { &cache.hidden[t - 1] } else { &zero };
        for j in 0..s {
            let (i, f, cand, o) = (g[j], g[s + j], g[2 * s + j], g[3 * s + j]);
            let dh = d_hidden[t][j] + dh_next[j];
            let tc = c[j].tanh();
            let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
            dz[j] = dc * cand * i * (1.0 - i);
            dz[s + j] = dc * c_prev[j] * f * (1.0 - f);
            dz[2 * s + j] = dc * i * (1.0 - cand * cand);
            dz[3 * s + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        for (b, d) in grad.bias.data_mut().iter_mut().zip(&dz) {
            *b += d;
        }
        grad.w_ih.add_outer(&dz, &cache.inputs[t]);
        grad.w_hh.add_outer(&dz, h_prev);
        let mut dx = vec![0.0; params.w_ih.cols()];
        params.w_ih.matvec_t_acc(&dz, &mut dx);
        d_inputs[t] = dx;
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        params.w_hh.matvec_t_acc(&dz, &mut dh_next);
    }
    d_inputs
}

pub struct BiLstmCache {
    forward: LstmCache,
    backward: LstmCache,
}

/// `h_i = [→h_i, ←h_i]`, each of length `S`.
pub fn bilstm_forward(fwd: &LstmParams, bwd: &LstmParams, inputs: &[Vec<f64>]) -> (Vec<Vec<f64>>, BiLstmCache) {
    let (hf, cf) = lstm_forward(fwd, inputs);
    let reversed: Vec<Vec<f64>> = inputs.iter().rev().cloned().collect();
    let (mut hb, cb) = lstm_forward(bwd, &reversed);
    hb.reverse();
    let out = hf
        .into_iter()
        .zip(hb)
        .map(|(mut a, b)| {
            a.extend(b);
            a
        })
        .collect();
    (
        out,
        BiLstmCache {
            forward: cf,
            backward: cb,
        },
    )
}

pub fn bilstm_backward(
    fwd: &LstmParams,
    bwd: &LstmParams,
    cache: &BiLstmCache,
    d_hidden: &[Vec<f64>],
    grad_fwd: &mut LstmParams,
    grad_bwd: &mut LstmParams,
) -> Vec<Vec<f64>> {
    let s = fwd.state_size();
    let df: Vec<Vec<f64>> = d_hidden.iter().map(|d| d[..s].to_vec()).collect();
    let db: Vec<Vec<f64>> = d_hidden.iter().rev().map(|d| d[s..].to_vec()).collect();
    let mut dx = lstm_backward(fwd, &cache.forward, &df, grad_fwd);
    let dxb = lstm_backward(bwd, &cache.backward, &db, grad_bwd);
    let n = dx.len();
    for (t, d) in dx.iter_mut().enumerate() {
        for (a, b) in d.iter_mut().zip(&dxb[n - 1 - t]) {
            *a += b;
        }
    }
    dx
}

/// `tanh(W h_i + b)` for every position; returns an `N × T` score matrix.
pub fn emission_scores(w: &Tensor, b: &Tensor, hidden: &[Vec<f64>]) -> Tensor {
    let t = w.rows();
    let mut out = Tensor::zeros(hidden.len(), t);
    for (i, h) in hidden.iter().enumerate() {
        let row = out.row_mut(i);
        row.copy_from_slice(b.data());
        w.matvec_acc(h, row);
        row.iter_mut().for_each(|v| *v = v.tanh());
    }
    out
}

/// Backward through the tanh projection. Returns gradients w.r.t. `hidden`.
pub fn emission_backward(
    w: &Tensor,
    scores: &Tensor,
    hidden: &[Vec<f64>],
    d_scores: &Tensor,
    grad_w: &mut Tensor,
    grad_b: &mut Tensor,
) -> Vec<Vec<f64>> {
    let mut dh = Vec::with_capacity(hidden.len());
    for (i, h) in hidden.iter().enumerate() {
        let dpre: Vec<f64> = scores
            .row(i)
            .iter()
            .zip(d_scores.row(i))
            .map(|(s, d)| d * (1.0 - s * s))
            .collect();
        grad_w.add_outer(&dpre, h);
        for (g, d) in grad_b.data_mut().iter_mut().zip(&dpre) {
            *g += d;
        }
        let mut d = vec![0.0; w.cols()];
        w.matvec_t_acc(&dpre, &mut d);
        dh.push(d);
    }
    dh
}
