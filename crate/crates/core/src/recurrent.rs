//! Two-layer recurrent encoders: vanilla tanh RNN, LSTM and GRU.
//!
//! Every core maps a `T × d_in` input to the second layer's hidden
//! sequence (`T × d2`). States start at zero and backpropagation runs
//! through the full sequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{outer_acc, sigmoid, Layout, Matrix, SlotId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoreKind {
    Rnn,
    Lstm,
    Gru,
}

/// Second-layer hidden states `h^(2)_t`, one row per time step.
pub type HiddenSequence = Matrix;

// LSTM gate order inside the slot arrays.
const I: usize = 0;
const F: usize = 1;
const O: usize = 2;
const C: usize = 3;
// GRU gate order.
const UP: usize = 0;
const RE: usize = 1;
const HC: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum LayerSlots {
    Rnn {
        w_x: SlotId,
        w_h: SlotId,
        b: SlotId,
    },
    Lstm {
        w: [SlotId; 4],
        u: [SlotId; 4],
        b: [SlotId; 4],
    },
    Gru {
        w: [SlotId; 3],
        u: [SlotId; 3],
        b: [SlotId; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    d_in: usize,
    d_out: usize,
    slots: LayerSlots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentCore {
    kind: CoreKind,
    input_dim: usize,
    hidden: [usize; 2],
    layers: [Layer; 2],
}

/// Forward-pass intermediates of one layer.
#[derive(Debug, Clone)]
enum LayerCache {
    Rnn {
        h: Matrix,
    },
    Lstm {
        gates: [Matrix; 4],
        c: Matrix,
        tanh_c: Matrix,
        h: Matrix,
    },
    Gru {
        up: Matrix,
        re: Matrix,
        cand: Matrix,
        h: Matrix,
    },
}

impl LayerCache {
    fn output(&self) -> &Matrix {
        match self {
            LayerCache::Rnn { h } | LayerCache::Lstm { h, .. } | LayerCache::Gru { h, .. } => h,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoreCache {
    first: LayerCache,
    second: LayerCache,
}

impl CoreCache {
    pub fn output(&self) -> &HiddenSequence {
        self.second.output()
    }

    pub fn first_layer(&self) -> &Matrix {
        self.first.output()
    }
}

impl RecurrentCore {
    /// Registers the two layers' parameters in `layout`.
    pub fn new(kind: CoreKind, input_dim: usize, hidden: [usize; 2], layout: &mut Layout) -> Self {
        let dims = [(input_dim, hidden[0]), (hidden[0], hidden[1])];
        let layers = [0, 1].map(|l| {
            let (d_in, d_out) = dims[l];
            let n = l + 1;
            let slots = match kind {
                CoreKind::Rnn => LayerSlots::Rnn {
                    w_x: layout.add_weight(format!("rnn{n}.W_x"), d_out, d_in),
                    w_h: layout.add_weight(format!("rnn{n}.W_h"), d_out, d_out),
                    b: layout.add_bias(format!("rnn{n}.b"), d_out),
                },
                CoreKind::Lstm => {
                    let g = ["i", "f", "o", "c"];
                    LayerSlots::Lstm {
                        w: g.map(|s| layout.add_weight(format!("lstm{n}.W_{s}"), d_out, d_in)),
                        u: g.map(|s| layout.add_weight(format!("lstm{n}.U_{s}"), d_out, d_out)),
                        b: g.map(|s| layout.add_bias(format!("lstm{n}.b_{s}"), d_out)),
                    }
                }
                CoreKind::Gru => {
                    let g = ["up", "re", "h"];
                    LayerSlots::Gru {
                        w: g.map(|s| layout.add_weight(format!("gru{n}.W_{s}"), d_out, d_in)),
                        u: g.map(|s| layout.add_weight(format!("gru{n}.U_{s}"), d_out, d_out)),
                        b: g.map(|s| layout.add_bias(format!("gru{n}.b_{s}"), d_out)),
                    }
                }
            };
            Layer { d_in, d_out, slots }
        });
        Self {
            kind,
            input_dim,
            hidden,
            layers,
        }
    }

    pub fn kind(&self) -> CoreKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.hidden[1]
    }

    pub fn forward(&self, layout: &Layout, params: &[f64], x: &Matrix) -> Result<CoreCache> {
        if x.cols() != self.input_dim {
            return Err(Error::Validation(format!(
                "core expects {} input columns, got {}",
                self.input_dim,
                x.cols()
            )));
        }
        if !x.is_finite() {
            return Err(Error::Evaluation(
                "recurrent input contains non-finite values".into(),
            ));
        }
        let first = self.layers[0].forward(layout, params, x);
        let second = self.layers[1].forward(layout, params, first.output());
        Ok(CoreCache { first, second })
    }

    /// Convenience wrapper returning only `h^(2)`.
    pub fn hidden(&self, layout: &Layout, params: &[f64], x: &Matrix) -> Result<HiddenSequence> {
        Ok(self.forward(layout, params, x)?.second.output().clone())
    }

    /// Accumulates parameter gradients for upstream `dh2` (`T × d2`) into
    /// `grads` and returns the gradient with respect to `x`.
    pub fn backward(
        &self,
        layout: &Layout,
        params: &[f64],
        x: &Matrix,
        cache: &CoreCache,
        dh2: &Matrix,
        grads: &mut [f64],
    ) -> Matrix {
        let dh1 = self.layers[1].backward(
            layout,
            params,
            cache.first.output(),
            &cache.second,
            dh2,
            grads,
        );
        self.layers[0].backward(layout, params, x, &cache.first, &dh1, grads)
    }
}

impl Layer {
    fn forward(&self, layout: &Layout, p: &[f64], x: &Matrix) -> LayerCache {
        let t_len = x.rows();
        let d = self.d_out;
        match &self.slots {
            LayerSlots::Rnn { w_x, w_h, b } => {
                let (w_x, w_h, b) = (
                    layout.view(*w_x, p),
                    layout.view(*w_h, p),
                    layout.get(*b, p),
                );
                let mut h = Matrix::zeros(t_len, d);
                let mut prev = vec![0.0; d];
                let mut a = vec![0.0; d];
                for t in 0..t_len {
                    a.copy_from_slice(b);
                    w_h.mul_acc(&prev, &mut a);
                    w_x.mul_acc(x.row(t), &mut a);
                    for (hv, av) in h.row_mut(t).iter_mut().zip(&a) {
                        *hv = av.tanh();
                    }
                    prev.copy_from_slice(h.row(t));
                }
                LayerCache::Rnn { h }
            }
            LayerSlots::Lstm { w, u, b } => {
                let mut gates = [0; 4].map(|_| Matrix::zeros(t_len, d));
                let mut c = Matrix::zeros(t_len, d);
                let mut tanh_c = Matrix::zeros(t_len, d);
                let mut h = Matrix::zeros(t_len, d);
                let mut h_prev = vec![0.0; d];
                let mut c_prev = vec![0.0; d];
                let mut a = vec![0.0; d];
                for t in 0..t_len {
                    for g in 0..4 {
                        a.copy_from_slice(layout.get(b[g], p));
                        layout.view(w[g], p).mul_acc(x.row(t), &mut a);
                        layout.view(u[g], p).mul_acc(&h_prev, &mut a);
                        let row = gates[g].row_mut(t);
                        for (r, av) in row.iter_mut().zip(&a) {
                            *r = if g == C { av.tanh() } else { sigmoid(*av) };
                        }
                    }
                    for k in 0..d {
                        let ck = gates[F][(t, k)] * c_prev[k] + gates[I][(t, k)] * gates[C][(t, k)];
                        let tc = ck.tanh();
                        c[(t, k)] = ck;
                        tanh_c[(t, k)] = tc;
                        h[(t, k)] = gates[O][(t, k)] * tc;
                    }
                    h_prev.copy_from_slice(h.row(t));
                    c_prev.copy_from_slice(c.row(t));
                }
                LayerCache::Lstm {
                    gates,
                    c,
                    tanh_c,
                    h,
                }
            }
            LayerSlots::Gru { w, u, b } => {
                let mut up = Matrix::zeros(t_len, d);
                let mut re = Matrix::zeros(t_len, d);
                let mut cand = Matrix::zeros(t_len, d);
                let mut h = Matrix::zeros(t_len, d);
                let mut h_prev = vec![0.0; d];
                let mut a = vec![0.0; d];
                let mut gated = vec![0.0; d];
                for t in 0..t_len {
                    for (g, out) in [(UP, &mut up), (RE, &mut re)] {
                        a.copy_from_slice(layout.get(b[g], p));
                        layout.view(w[g], p).mul_acc(x.row(t), &mut a);
                        layout.view(u[g], p).mul_acc(&h_prev, &mut a);
                        for (r, av) in out.row_mut(t).iter_mut().zip(&a) {
                            *r = sigmoid(*av);
                        }
                    }
                    for k in 0..d {
                        gated[k] = re[(t, k)] * h_prev[k];
                    }
                    a.copy_from_slice(layout.get(b[HC], p));
                    layout.view(w[HC], p).mul_acc(x.row(t), &mut a);
                    layout.view(u[HC], p).mul_acc(&gated, &mut a);
                    for k in 0..d {
                        let ck = a[k].tanh();
                        cand[(t, k)] = ck;
                        h[(t, k)] = (1.0 - up[(t, k)]) * h_prev[k] + up[(t, k)] * ck;
                    }
                    h_prev.copy_from_slice(h.row(t));
                }
                LayerCache::Gru { up, re, cand, h }
            }
        }
    }

    fn backward(
        &self,
        layout: &Layout,
        p: &[f64],
        x: &Matrix,
        cache: &LayerCache,
        dh_out: &Matrix,
        grads: &mut [f64],
    ) -> Matrix {
        let t_len = x.rows();
        let d = self.d_out;
        let zeros = vec![0.0; d];
        let mut dx = Matrix::zeros(t_len, self.d_in);
        let mut dh_next = vec![0.0; d];
        match (&self.slots, cache) {
            (LayerSlots::Rnn { w_x, w_h, b }, LayerCache::Rnn { h }) => {
                let mut da = vec![0.0; d];
                for t in (0..t_len).rev() {
                    let h_prev = if t > 0 { h.row(t - 1) } else { &zeros[..] };
                    for k in 0..d {
                        let ht = h[(t, k)];
                        da[k] = (dh_out[(t, k)] + dh_next[k]) * (1.0 - ht * ht);
                    }
                    outer_acc(layout.get_mut(*w_x, grads), &da, x.row(t));
                    outer_acc(layout.get_mut(*w_h, grads), &da, h_prev);
                    for (g, v) in layout.get_mut(*b, grads).iter_mut().zip(&da) {
                        *g += v;
                    }
                    layout.view(*w_x, p).t_mul_acc(&da, dx.row_mut(t));
                    dh_next.iter_mut().for_each(|v| *v = 0.0);
                    layout.view(*w_h, p).t_mul_acc(&da, &mut dh_next);
                }
            }
            (
                LayerSlots::Lstm { w, u, b },
                LayerCache::Lstm {
                    gates,
                    c,
                    tanh_c,
                    h,
                },
            ) => {
                let mut dc_next = vec![0.0; d];
                let mut da = [0; 4].map(|_| vec![0.0; d]);
                for t in (0..t_len).rev() {
                    let h_prev = if t > 0 { h.row(t - 1) } else { &zeros[..] };
                    let c_prev = if t > 0 { c.row(t - 1) } else { &zeros[..] };
                    for k in 0..d {
                        let dh = dh_out[(t, k)] + dh_next[k];
                        let (ig, fg, og, cg) = (
                            gates[I][(t, k)],
                            gates[F][(t, k)],
                            gates[O][(t, k)],
                            gates[C][(t, k)],
                        );
                        let tc = tanh_c[(t, k)];
                        let dc = dc_next[k] + dh * og * (1.0 - tc * tc);
                        da[O][k] = dh * tc * og * (1.0 - og);
                        da[F][k] = dc * c_prev[k] * fg * (1.0 - fg);
                        da[I][k] = dc * cg * ig * (1.0 - ig);
                        da[C][k] = dc * ig * (1.0 - cg * cg);
                        dc_next[k] = dc * fg;
                    }
                    dh_next.iter_mut().for_each(|v| *v = 0.0);
                    for g in 0..4 {
                        outer_acc(layout.get_mut(w[g], grads), &da[g], x.row(t));
                        outer_acc(layout.get_mut(u[g], grads), &da[g], h_prev);
                        for (gb, v) in layout.get_mut(b[g], grads).iter_mut().zip(&da[g]) {
                            *gb += v;
                        }
                        layout.view(w[g], p).t_mul_acc(&da[g], dx.row_mut(t));
                        layout.view(u[g], p).t_mul_acc(&da[g], &mut dh_next);
                    }
                }
            }
            (LayerSlots::Gru { w, u, b }, LayerCache::Gru { up, re, cand, h }) => {
                let mut da_up = vec![0.0; d];
                let mut da_re = vec![0.0; d];
                let mut da_h = vec![0.0; d];
                let mut gated = vec![0.0; d];
                let mut d_gated = vec![0.0; d];
                for t in (0..t_len).rev() {
                    let h_prev = if t > 0 { h.row(t - 1) } else { &zeros[..] };
                    let mut dh_prev = vec![0.0; d];
                    for k in 0..d {
                        let dh = dh_out[(t, k)] + dh_next[k];
                        let (z, ck) = (up[(t, k)], cand[(t, k)]);
                        da_up[k] = dh * (ck - h_prev[k]) * z * (1.0 - z);
                        da_h[k] = dh * z * (1.0 - ck * ck);
                        dh_prev[k] = dh * (1.0 - z);
                        gated[k] = re[(t, k)] * h_prev[k];
                    }
                    d_gated.iter_mut().for_each(|v| *v = 0.0);
                    layout.view(u[HC], p).t_mul_acc(&da_h, &mut d_gated);
                    for k in 0..d {
                        let r = re[(t, k)];
                        dh_prev[k] += d_gated[k] * r;
                        da_re[k] = d_gated[k] * h_prev[k] * r * (1.0 - r);
                    }
                    outer_acc(layout.get_mut(u[HC], grads), &da_h, &gated);
                    for (g, da) in [(UP, &da_up), (RE, &da_re), (HC, &da_h)] {
                        outer_acc(layout.get_mut(w[g], grads), da, x.row(t));
                        if g != HC {
                            outer_acc(layout.get_mut(u[g], grads), da, h_prev);
                            layout.view(u[g], p).t_mul_acc(da, &mut dh_prev);
                        }
                        for (gb, v) in layout.get_mut(b[g], grads).iter_mut().zip(da.iter()) {
                            *gb += v;
                        }
                        layout.view(w[g], p).t_mul_acc(da, dx.row_mut(t));
                    }
                    dh_next.copy_from_slice(&dh_prev);
                }
            }
            _ => unreachable!("layer cache does not match layer kind"),
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check, RngState};

    fn build(kind: CoreKind, d_in: usize, hidden: [usize; 2]) -> (Layout, RecurrentCore) {
        let mut layout = Layout::new();
        let core = RecurrentCore::new(kind, d_in, hidden, &mut layout);
        (layout, core)
    }

    fn set(layout: &Layout, p: &mut [f64], name: &str, v: &[f64]) {
        let id = layout.find(name).unwrap();
        layout.get_mut(id, p).copy_from_slice(v);
    }

    fn random_input(rng: &mut RngState, t: usize, d: usize) -> Matrix {
        Matrix::from_vec(t, d, (0..t * d).map(|_| rng.uniform(-1.0, 1.0)).collect())
    }

    #[test]
    fn zero_params_give_zero_states() {
        for kind in [CoreKind::Rnn, CoreKind::Lstm, CoreKind::Gru] {
            let (layout, core) = build(kind, 3, [4, 2]);
            let p = vec![0.0; layout.len()];
            let x = random_input(&mut RngState::new(1), 5, 3);
            let h = core.hidden(&layout, &p, &x).unwrap();
            assert!(h.data().iter().all(|v| *v == 0.0), "{kind:?}");
        }
    }

    #[test]
    fn rnn_bias_only_single_step() {
        let (layout, core) = build(CoreKind::Rnn, 1, [1, 1]);
        let mut p = vec![0.0; layout.len()];
        set(&layout, &mut p, "rnn1.b", &[0.3]);
        set(&layout, &mut p, "rnn2.b", &[-0.2]);
        let cache = core
            .forward(&layout, &p, &Matrix::from_vec(1, 1, vec![5.0]))
            .unwrap();
        assert_eq!(cache.first_layer()[(0, 0)], 0.3f64.tanh());
        assert_eq!(cache.output()[(0, 0)], (-0.2f64).tanh());
    }

    #[test]
    fn rnn_scalar_unroll() {
        let (layout, core) = build(CoreKind::Rnn, 1, [1, 1]);
        let mut p = vec![0.0; layout.len()];
        let (wx1, wh1, b1, wx2, wh2, b2) = (0.7, -0.4, 0.1, 1.3, 0.5, -0.2);
        for (n, v) in [
            ("rnn1.W_x", wx1),
            ("rnn1.W_h", wh1),
            ("rnn1.b", b1),
            ("rnn2.W_x", wx2),
            ("rnn2.W_h", wh2),
            ("rnn2.b", b2),
        ] {
            set(&layout, &mut p, n, &[v]);
        }
        let x = [0.5, -1.2];
        let h1_1 = (wx1 * x[0] + b1).tanh();
        let h2_1 = (wx2 * h1_1 + b2).tanh();
        let h1_2 = (wh1 * h1_1 + wx1 * x[1] + b1).tanh();
        let h2_2 = (wh2 * h2_1 + wx2 * h1_2 + b2).tanh();
        let h = core
            .hidden(&layout, &p, &Matrix::from_vec(2, 1, x.to_vec()))
            .unwrap();
        assert!((h[(0, 0)] - h2_1).abs() < 1e-15);
        assert!((h[(1, 0)] - h2_2).abs() < 1e-15);
    }

    fn lstm_cell(x: f64, h: f64, c: f64, q: &[f64; 12]) -> (f64, f64) {
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = s(q[0] * x + q[4] * h + q[8]);
        let f = s(q[1] * x + q[5] * h + q[9]);
        let o = s(q[2] * x + q[6] * h + q[10]);
        let g = (q[3] * x + q[7] * h + q[11]).tanh();
        let c_new = f * c + i * g;
        (o * c_new.tanh(), c_new)
    }

    #[test]
    fn lstm_scalar_unroll() {
        let (layout, core) = build(CoreKind::Lstm, 1, [1, 1]);
        let mut rng = RngState::new(9);
        let p: Vec<f64> = (0..layout.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let get = |name: &str| p[layout.range(layout.find(name).unwrap())][0];
        let q = |l: usize| -> [f64; 12] {
            let mut out = [0.0; 12];
            for (k, pre) in ["W", "U", "b"].iter().enumerate() {
                for (g, s) in ["i", "f", "o", "c"].iter().enumerate() {
                    out[k * 4 + g] = get(&format!("lstm{l}.{pre}_{s}"));
                }
            }
            out
        };
        let (q1, q2) = (q(1), q(2));
        let x = [0.4, -0.9];
        let (mut h1, mut c1, mut h2, mut c2) = (0.0, 0.0, 0.0, 0.0);
        let mut expected = Vec::new();
        for xt in x {
            (h1, c1) = lstm_cell(xt, h1, c1, &q1);
            (h2, c2) = lstm_cell(h1, h2, c2, &q2);
            expected.push(h2);
        }
        let h = core
            .hidden(&layout, &p, &Matrix::from_vec(2, 1, x.to_vec()))
            .unwrap();
        for t in 0..2 {
            assert!((h[(t, 0)] - expected[t]).abs() < 1e-14);
        }
    }

    #[test]
    fn lstm_forget_gate_retains_memory() {
        let (layout, core) = build(CoreKind::Lstm, 1, [1, 1]);
        let mut p = vec![0.0; layout.len()];
        // write once at t=0 through a strong input gate, then hold
        set(&layout, &mut p, "lstm1.W_c", &[3.0]);
        set(&layout, &mut p, "lstm1.W_i", &[20.0]);
        set(&layout, &mut p, "lstm1.b_i", &[-10.0]);
        set(&layout, &mut p, "lstm1.b_f", &[30.0]);
        let x = Matrix::from_vec(4, 1, vec![1.0, 0.0, 0.0, 0.0]);
        let cache = core.forward(&layout, &p, &x).unwrap();
        if let LayerCache::Lstm { c, .. } = &cache.first {
            for t in 1..4 {
                assert!((c[(t, 0)] - c[(t - 1, 0)]).abs() < 1e-4);
            }
            assert!(c[(0, 0)] > 0.9);
        } else {
            unreachable!()
        }
    }

    fn gru_cell(x: f64, h: f64, q: &[f64; 9]) -> f64 {
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z = s(q[0] * x + q[3] * h + q[6]);
        let r = s(q[1] * x + q[4] * h + q[7]);
        let cand = (q[2] * x + q[5] * (r * h) + q[8]).tanh();
        (1.0 - z) * h + z * cand
    }

    #[test]
    fn gru_scalar_unroll() {
        let (layout, core) = build(CoreKind::Gru, 1, [1, 1]);
        let mut rng = RngState::new(17);
        let p: Vec<f64> = (0..layout.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let get = |name: &str| p[layout.range(layout.find(name).unwrap())][0];
        let q = |l: usize| -> [f64; 9] {
            let mut out = [0.0; 9];
            for (k, pre) in ["W", "U", "b"].iter().enumerate() {
                for (g, s) in ["up", "re", "h"].iter().enumerate() {
                    out[k * 3 + g] = get(&format!("gru{l}.{pre}_{s}"));
                }
            }
            out
        };
        let (q1, q2) = (q(1), q(2));
        let x = [0.8, -0.3];
        let (mut h1, mut h2) = (0.0, 0.0);
        let mut expected = Vec::new();
        for xt in x {
            h1 = gru_cell(xt, h1, &q1);
            h2 = gru_cell(h1, h2, &q2);
            expected.push(h2);
        }
        let h = core
            .hidden(&layout, &p, &Matrix::from_vec(2, 1, x.to_vec()))
            .unwrap();
        for t in 0..2 {
            assert!((h[(t, 0)] - expected[t]).abs() < 1e-14);
        }
    }

    #[test]
    fn gru_closed_update_gate_freezes_state() {
        let (layout, core) = build(CoreKind::Gru, 1, [1, 1]);
        let mut rng = RngState::new(5);
        let mut p: Vec<f64> = (0..layout.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        set(&layout, &mut p, "gru1.b_up", &[-40.0]);
        set(&layout, &mut p, "gru1.W_up", &[0.0]);
        set(&layout, &mut p, "gru1.U_up", &[0.0]);
        let x = random_input(&mut rng, 6, 1);
        let cache = core.forward(&layout, &p, &x).unwrap();
        let h1 = cache.first_layer();
        for t in 1..6 {
            assert!((h1[(t, 0)] - h1[(t - 1, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let (layout, core) = build(CoreKind::Rnn, 2, [3, 2]);
        let p = vec![0.0; layout.len()];
        let x = Matrix::from_vec(1, 2, vec![f64::NAN, 0.0]);
        assert!(matches!(
            core.forward(&layout, &p, &x),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn bptt_matches_finite_differences() {
        for (seed, kind) in [CoreKind::Rnn, CoreKind::Lstm, CoreKind::Gru]
            .into_iter()
            .enumerate()
        {
            let (layout, core) = build(kind, 3, [4, 3]);
            let mut rng = RngState::new(seed as u64 + 100);
            let p = layout.init(&mut rng);
            let p: Vec<f64> = p.iter().map(|v| v + rng.uniform(-0.3, 0.3)).collect();
            let x = random_input(&mut rng, 6, 3);
            let proj = random_input(&mut rng, 6, 3);
            let loss = |q: &[f64]| -> f64 {
                let h = core.hidden(&layout, q, &x).unwrap();
                h.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
            };
            let cache = core.forward(&layout, &p, &x).unwrap();
            let mut g = vec![0.0; layout.len()];
            core.backward(&layout, &p, &x, &cache, &proj, &mut g);
            let report = grad_check(loss, &p, &g, 1e-4, |_, _| false).unwrap();
            assert!(report.passed(), "{kind:?}: {:?}", report.by_slot(&layout));
        }
    }

    #[test]
    fn bounded_outputs() {
        for kind in [CoreKind::Rnn, CoreKind::Lstm, CoreKind::Gru] {
            let (layout, core) = build(kind, 2, [5, 4]);
            let mut rng = RngState::new(3);
            let p: Vec<f64> = (0..layout.len()).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let x = random_input(&mut rng, 20, 2).map(|v| v * 10.0);
            let h = core.hidden(&layout, &p, &x).unwrap();
            assert!(h.data().iter().all(|v| v.abs() <= 1.0));
        }
    }
}
