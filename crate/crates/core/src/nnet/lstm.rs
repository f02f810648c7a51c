//! Batched LSTM layer with full backpropagation through time.
//!
//! Sequences are stored time-major: row `t * batch + b` holds step `t` of
//! sequence `b`. Gate order is input, forget, cell, output.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::mixture::sigmoid;

pub(crate) struct LayerCache {
    /// Layer input, `TB x D`.
    pub x: Array2<f64>,
    /// Activated gates, `TB x 4H`.
    pub gates: Array2<f64>,
    pub c: Array2<f64>,
    pub tanh_c: Array2<f64>,
    /// Hidden states, `TB x H`.
    pub h: Array2<f64>,
}

pub(crate) struct LayerGrads {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
    pub dx: Option<Array2<f64>>,
}

pub(crate) fn forward(
    w_ih: ArrayView2<f64>,
    w_hh: ArrayView2<f64>,
    bias: ArrayView1<f64>,
    x: Array2<f64>,
    steps: usize,
    batch: usize,
) -> LayerCache {
    let hid = w_hh.ncols();
    let tb = steps * batch;
    let mut gates = Array2::<f64>::zeros((tb, 4 * hid));
    if x.ncols() > 0 {
        general_mat_mul(1.0, &x, &w_ih.t(), 0.0, &mut gates);
    }
    gates += &bias;
    let mut c = Array2::<f64>::zeros((tb, hid));
    let mut tanh_c = Array2::<f64>::zeros((tb, hid));
    let mut h = Array2::<f64>::zeros((tb, hid));
    for t in 0..steps {
        let rows = t * batch..(t + 1) * batch;
        if t > 0 {
            let prev = h.slice(s![(t - 1) * batch..t * batch, ..]);
            let mut g = gates.slice_mut(s![rows.clone(), ..]);
            general_mat_mul(1.0, &prev, &w_hh.t(), 1.0, &mut g);
        }
        for row in rows {
            let g = gates.row_mut(row).into_slice().expect("contiguous rows");
            let (gi, rest) = g.split_at_mut(hid);
            let (gf, rest) = rest.split_at_mut(hid);
            let (gg, go) = rest.split_at_mut(hid);
            for j in 0..hid {
                gi[j] = sigmoid(gi[j]);
                gf[j] = sigmoid(gf[j]);
                gg[j] = gg[j].tanh();
                go[j] = sigmoid(go[j]);
                let c_prev = if row >= batch { c[[row - batch, j]] } else { 0.0 };
                let cc = gf[j] * c_prev + gi[j] * gg[j];
                let tc = cc.tanh();
                c[[row, j]] = cc;
                tanh_c[[row, j]] = tc;
                h[[row, j]] = go[j] * tc;
            }
        }
    }
    LayerCache {
        x,
        gates,
        c,
        tanh_c,
        h,
    }
}

/// Gradients of the layer given `dh`, the loss gradient with respect to every
/// hidden state output.
pub(crate) fn backward(
    w_ih: ArrayView2<f64>,
    w_hh: ArrayView2<f64>,
    cache: &LayerCache,
    dh: &Array2<f64>,
    steps: usize,
    batch: usize,
    need_dx: bool,
) -> LayerGrads {
    let hid = w_hh.ncols();
    let tb = steps * batch;
    let mut da = Array2::<f64>::zeros((tb, 4 * hid));
    let mut dh_next = Array2::<f64>::zeros((batch, hid));
    let mut dc_next = Array2::<f64>::zeros((batch, hid));
    for t in (0..steps).rev() {
        for b in 0..batch {
            let row = t * batch + b;
            let g = cache.gates.row(row);
            let g = g.as_slice().expect("contiguous rows");
            let d = da.row_mut(row).into_slice().expect("contiguous rows");
            for j in 0..hid {
                let (i, f, gg, o) = (g[j], g[hid + j], g[2 * hid + j], g[3 * hid + j]);
                let tc = cache.tanh_c[[row, j]];
                let c_prev = if t > 0 { cache.c[[row - batch, j]] } else { 0.0 };
                let dht = dh[[row, j]] + dh_next[[b, j]];
                let dc = dht * o * (1.0 - tc * tc) + dc_next[[b, j]];
                d[j] = dc * gg * i * (1.0 - i);
                d[hid + j] = dc * c_prev * f * (1.0 - f);
                d[2 * hid + j] = dc * i * (1.0 - gg * gg);
                d[3 * hid + j] = dht * tc * o * (1.0 - o);
                dc_next[[b, j]] = dc * f;
            }
        }
        if t > 0 {
            let d_t = da.slice(s![t * batch..(t + 1) * batch, ..]);
            general_mat_mul(1.0, &d_t, &w_hh, 0.0, &mut dh_next);
        }
    }
    let dw_ih = da.t().dot(&cache.x);
    let dw_hh = if steps > 1 {
        da.slice(s![batch.., ..])
            .t()
            .dot(&cache.h.slice(s![..tb - batch, ..]))
    } else {
        Array2::zeros((4 * hid, hid))
    };
    let bias = da.sum_axis(Axis(0));
    let dx = need_dx.then(|| da.dot(&w_ih));
    LayerGrads {
        w_ih: dw_ih,
        w_hh: dw_hh,
        bias,
        dx,
    }
}

/// One step for a single sequence, updating `h` and `c` in place.
pub(crate) fn step(
    w_ih: ArrayView2<f64>,
    w_hh: ArrayView2<f64>,
    bias: ArrayView1<f64>,
    x: &[f64],
    h: &mut [f64],
    c: &mut [f64],
) {
    let hid = h.len();
    let a: Vec<f64> = (0..4 * hid)
        .map(|k| {
            let wx: f64 = w_ih.row(k).iter().zip(x).map(|(w, v)| w * v).sum();
            let wh: f64 = w_hh.row(k).iter().zip(h.iter()).map(|(w, v)| w * v).sum();
            wx + wh + bias[k]
        })
        .collect();
    for j in 0..hid {
        let i = sigmoid(a[j]);
        let f = sigmoid(a[hid + j]);
        let g = a[2 * hid + j].tanh();
        let o = sigmoid(a[3 * hid + j]);
        c[j] = f * c[j] + i * g;
        h[j] = o * c[j].tanh();
    }
}
