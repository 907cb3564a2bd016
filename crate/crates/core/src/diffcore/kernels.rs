//! Forward and backward arithmetic for the layer types, on plain slices.
//!
//! Weight matrices are row-major `[out x in]`. Backward functions accumulate
//! (`+=`) into their gradient outputs.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Dot product with four independent partial sums.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out = act(w x + b)`
pub fn dense_forward(x: &[f64], w: &[f64], b: &[f64], act: Activation, out: &mut [f64]) {
    let n_in = x.len();
    debug_assert_eq!(w.len(), n_in * out.len());
    for (j, o) in out.iter_mut().enumerate() {
        *o = act.apply(dot(&w[j * n_in..(j + 1) * n_in], x) + b[j]);
    }
}

/// Gradients of a dense layer given its input `x`, output `y` and the
/// upstream gradient `dy`. `dx` may be `None` when the input is a constant.
pub fn dense_backward(
    x: &[f64],
    w: &[f64],
    y: &[f64],
    dy: &[f64],
    act: Activation,
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let n_in = x.len();
    for j in 0..y.len() {
        let dz = dy[j] * act.grad_from_output(y[j]);
        if dz == 0.0 {
            continue;
        }
        db[j] += dz;
        let row = j * n_in..(j + 1) * n_in;
        for (g, xi) in dw[row.clone()].iter_mut().zip(x) {
            *g += dz * xi;
        }
        if let Some(dx) = dx.as_deref_mut() {
            for (g, wi) in dx.iter_mut().zip(&w[row]) {
                *g += dz * wi;
            }
        }
    }
}

/// Valid 1-D convolution of `signal` with `filters` (`[channels x width]`),
/// global max-pool per channel, then relu. Writes one value per channel and
/// the winning window offset for each channel.
pub fn conv1d_pool_forward(
    signal: &[f64],
    filters: &[f64],
    bias: &[f64],
    width: usize,
    out: &mut [f64],
    argmax: &mut [usize],
) {
    let positions = signal.len() + 1 - width;
    for f in 0..out.len() {
        let kernel = &filters[f * width..(f + 1) * width];
        let mut best = f64::NEG_INFINITY;
        let mut best_at = 0;
        for j in 0..positions {
            let v = dot(kernel, &signal[j..j + width]) + bias[f];
            if v > best {
                best = v;
                best_at = j;
            }
        }
        out[f] = best.max(0.0);
        argmax[f] = best_at;
    }
}

pub fn conv1d_pool_backward(
    signal: &[f64],
    filters: &[f64],
    width: usize,
    out: &[f64],
    argmax: &[usize],
    dy: &[f64],
    dfilters: &mut [f64],
    dbias: &mut [f64],
    mut dsignal: Option<&mut [f64]>,
) {
    for f in 0..out.len() {
        if out[f] <= 0.0 || dy[f] == 0.0 {
            continue;
        }
        let g = dy[f];
        let j = argmax[f];
        dbias[f] += g;
        for k in 0..width {
            dfilters[f * width + k] += g * signal[j + k];
        }
        if let Some(ds) = dsignal.as_deref_mut() {
            for k in 0..width {
                ds[j + k] += g * filters[f * width + k];
            }
        }
    }
}

/// Activated gates `[i | f | g | o]` of one LSTM step, kept for backward.
#[derive(Clone, Debug)]
pub struct LstmCache {
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// One LSTM cell step. `wx` is `[4H x I]`, `wh` is `[4H x H]`, `b` is `[4H]`,
/// gate blocks ordered input, forget, candidate, output. Writes the new
/// hidden and cell vectors.
pub fn lstm_forward(
    x: &[f64],
    h: &[f64],
    c: &[f64],
    wx: &[f64],
    wh: &[f64],
    b: &[f64],
    h_out: &mut [f64],
    c_out: &mut [f64],
) -> LstmCache {
    let hidden = h.len();
    let n_in = x.len();
    let mut gates = vec![0.0; 4 * hidden];
    for (r, z) in gates.iter_mut().enumerate() {
        let pre = b[r]
            + dot(&wx[r * n_in..(r + 1) * n_in], x)
            + dot(&wh[r * hidden..(r + 1) * hidden], h);
        *z = if (2 * hidden..3 * hidden).contains(&r) {
            pre.tanh()
        } else {
            sigmoid(pre)
        };
    }
    let mut tanh_c = vec![0.0; hidden];
    for k in 0..hidden {
        let (i, f, g, o) = (
            gates[k],
            gates[hidden + k],
            gates[2 * hidden + k],
            gates[3 * hidden + k],
        );
        c_out[k] = f * c[k] + i * g;
        tanh_c[k] = c_out[k].tanh();
        h_out[k] = o * tanh_c[k];
    }
    LstmCache { gates, tanh_c }
}

/// Backward through one LSTM step. `dh_out`/`dc_out` are the upstream
/// gradients of the new hidden and cell vectors.
pub struct LstmGrads<'a> {
    pub dwx: &'a mut [f64],
    pub dwh: &'a mut [f64],
    pub db: &'a mut [f64],
    pub dx: Option<&'a mut [f64]>,
    pub dh: Option<&'a mut [f64]>,
    pub dc: Option<&'a mut [f64]>,
}

pub fn lstm_backward(
    x: &[f64],
    h: &[f64],
    c: &[f64],
    wx: &[f64],
    wh: &[f64],
    cache: &LstmCache,
    dh_out: &[f64],
    dc_out: &[f64],
    grads: LstmGrads<'_>,
) {
    let hidden = h.len();
    let n_in = x.len();
    let gates = &cache.gates;
    let mut dz = vec![0.0; 4 * hidden];
    let LstmGrads {
        dwx,
        dwh,
        db,
        mut dx,
        mut dh,
        mut dc,
    } = grads;
    for k in 0..hidden {
        let (i, f, g, o) = (
            gates[k],
            gates[hidden + k],
            gates[2 * hidden + k],
            gates[3 * hidden + k],
        );
        let tc = cache.tanh_c[k];
        let d_o = dh_out[k] * tc;
        let d_c = dc_out[k] + dh_out[k] * o * (1.0 - tc * tc);
        let d_f = d_c * c[k];
        let d_i = d_c * g;
        let d_g = d_c * i;
        if let Some(dc) = dc.as_deref_mut() {
            dc[k] += d_c * f;
        }
        dz[k] = d_i * i * (1.0 - i);
        dz[hidden + k] = d_f * f * (1.0 - f);
        dz[2 * hidden + k] = d_g * (1.0 - g * g);
        dz[3 * hidden + k] = d_o * o * (1.0 - o);
    }
    for (r, &d) in dz.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        db[r] += d;
        let xrow = r * n_in..(r + 1) * n_in;
        let hrow = r * hidden..(r + 1) * hidden;
        for (g, xi) in dwx[xrow.clone()].iter_mut().zip(x) {
            *g += d * xi;
        }
        for (g, hi) in dwh[hrow.clone()].iter_mut().zip(h) {
            *g += d * hi;
        }
        if let Some(dx) = dx.as_deref_mut() {
            for (g, w) in dx.iter_mut().zip(&wx[xrow]) {
                *g += d * w;
            }
        }
        if let Some(dh) = dh.as_deref_mut() {
            for (g, w) in dh.iter_mut().zip(&wh[hrow]) {
                *g += d * w;
            }
        }
    }
}
