//! Causally masked attention over the recurrent hidden sequence.
//!
//! Scores `e[t][j]` exist only for `j` in the support of row `t`
//! (`j <= t`, and for the sparse variant the trailing window ending at `t`);
//! everything else is `-inf` and gets zero weight. Per mechanism:
//!
//! | mechanism    | score                                  | value     |
//! |--------------|----------------------------------------|-----------|
//! | `Batt`       | `vᵀ tanh(W_q h_t + W_k h_j)`           | `h_j`     |
//! | `LD`         | `h_tᵀ h_j / √d`                        | `h_j`     |
//! | `LG`         | `h_tᵀ W h_j / √d`                      | `h_j`     |
//! | `LC`         | `vᵀ tanh([W_q h_t ; W_k h_j])`         | `h_j`     |
//! | `self_att`   | `(W_q h_t)ᵀ (W_k h_j) / √d`            | `W_v h_j` |
//! | `sparse_att` | as `self_att`, window of `w` steps     | `W_v h_j` |
//!
//! `LC` concatenates rather than adds, so its score splits into a query
//! term and a key term; the query term is constant along a row and drops
//! out of the softmax. That is a property of the formula and is kept as is.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::matrix::dot;
use crate::numeric::softmax::masked_softmax_into;
use crate::numeric::{outer_acc, Layout, MatRef, Matrix, SlotId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mechanism {
    #[serde(rename = "Batt")]
    Batt,
    #[serde(rename = "LD")]
    Ld,
    #[serde(rename = "LG")]
    Lg,
    #[serde(rename = "LC")]
    Lc,
    #[serde(rename = "self_att")]
    SelfAtt,
    #[serde(rename = "sparse_att")]
    SparseAtt,
}

impl Mechanism {
    pub const ALL: [Mechanism; 6] = [
        Mechanism::Batt,
        Mechanism::Ld,
        Mechanism::Lg,
        Mechanism::Lc,
        Mechanism::SelfAtt,
        Mechanism::SparseAtt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Batt => "Batt",
            Mechanism::Ld => "LD",
            Mechanism::Lg => "LG",
            Mechanism::Lc => "LC",
            Mechanism::SelfAtt => "self_att",
            Mechanism::SparseAtt => "sparse_att",
        }
    }

    /// Whether values pass through `W_v` instead of being `h_j` itself.
    fn projects_values(self) -> bool {
        matches!(self, Mechanism::SelfAtt | Mechanism::SparseAtt)
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown attention mechanism {s:?}")))
    }
}

/// The window `S_t`: step `t` plus up to `w - 1` predecessors.
pub fn sparse_support(t: usize, w: usize) -> Range<usize> {
    assert!(w >= 1, "attention window must be at least 1");
    (t + 1).saturating_sub(w)..t + 1
}

/// Attention weights (`T × T`, lower triangular) and outputs (`T × d`).
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub weights: Matrix,
    pub outputs: Matrix,
    /// Number of pairwise scores computed.
    pub score_evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub trace: AttentionTrace,
    queries: Option<Matrix>,
    keys: Option<Matrix>,
    values: Option<Matrix>,
}

/// One attention layer; its parameters live in a shared [`Layout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    mechanism: Mechanism,
    dim: usize,
    window: usize,
    w_q: Option<SlotId>,
    w_k: Option<SlotId>,
    w_v: Option<SlotId>,
    w_general: Option<SlotId>,
    v: Option<SlotId>,
}

impl Attention {
    /// `window` is only used by `sparse_att`; it must be at least 1.
    pub fn new(
        mechanism: Mechanism,
        dim: usize,
        window: usize,
        layout: &mut Layout,
    ) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("attention window must be at least 1".into()));
        }
        let mut att = Attention {
            mechanism,
            dim,
            window,
            w_q: None,
            w_k: None,
            w_v: None,
            w_general: None,
            v: None,
        };
        match mechanism {
            Mechanism::Batt => {
                att.w_q = Some(layout.add_weight("att.W_q", dim, dim));
                att.w_k = Some(layout.add_weight("att.W_k", dim, dim));
                att.v = Some(layout.add_weight("att.v", dim, 1));
            }
            Mechanism::Ld => {}
            Mechanism::Lg => att.w_general = Some(layout.add_weight("att.W", dim, dim)),
            Mechanism::Lc => {
                att.w_q = Some(layout.add_weight("att.W_q", dim, dim));
                att.w_k = Some(layout.add_weight("att.W_k", dim, dim));
                att.v = Some(layout.add_weight("att.v", 2 * dim, 1));
            }
            Mechanism::SelfAtt | Mechanism::SparseAtt => {
                att.w_q = Some(layout.add_weight("att.W_q", dim, dim));
                att.w_k = Some(layout.add_weight("att.W_k", dim, dim));
                att.w_v = Some(layout.add_weight("att.W_v", dim, dim));
            }
        }
        Ok(att)
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn support(&self, t: usize) -> Range<usize> {
        match self.mechanism {
            Mechanism::SparseAtt => sparse_support(t, self.window),
            _ => 0..t + 1,
        }
    }

    fn project(
        layout: &Layout,
        params: &[f64],
        slot: Option<SlotId>,
        h: &Matrix,
    ) -> Option<Matrix> {
        slot.map(|id| {
            let w = layout.view(id, params);
            let mut out = Matrix::zeros(h.rows(), w.rows);
            for t in 0..h.rows() {
                w.mul_acc(h.row(t), out.row_mut(t));
            }
            out
        })
    }

    fn score(
        &self,
        t: usize,
        j: usize,
        h: &Matrix,
        q: Option<&Matrix>,
        k: Option<&Matrix>,
        v: Option<&[f64]>,
        scratch: &mut [f64],
    ) -> f64 {
        let scale = 1.0 / (self.dim as f64).sqrt();
        match self.mechanism {
            Mechanism::Batt => {
                let (q, k, v) = (q.unwrap().row(t), k.unwrap().row(j), v.unwrap());
                for (s, (a, b)) in scratch.iter_mut().zip(q.iter().zip(k)) {
                    *s = (a + b).tanh();
                }
                dot(v, scratch)
            }
            Mechanism::Ld => scale * dot(h.row(t), h.row(j)),
            Mechanism::Lg => scale * dot(h.row(t), k.unwrap().row(j)),
            Mechanism::Lc => {
                let (q, k, v) = (q.unwrap().row(t), k.unwrap().row(j), v.unwrap());
                let d = self.dim;
                let mut e = 0.0;
                for i in 0..d {
                    e += v[i] * q[i].tanh();
                }
                for i in 0..d {
                    e += v[d + i] * k[i].tanh();
                }
                e
            }
            Mechanism::SelfAtt | Mechanism::SparseAtt => {
                scale * dot(q.unwrap().row(t), k.unwrap().row(j))
            }
        }
    }

    fn check_input(&self, h: &Matrix) -> Result<()> {
        if h.cols() != self.dim {
            return Err(Error::Validation(format!(
                "attention expects {} columns, got {}",
                self.dim,
                h.cols()
            )));
        }
        if !h.is_finite() {
            return Err(Error::Evaluation(
                "attention input contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    fn projections(
        &self,
        layout: &Layout,
        params: &[f64],
        h: &Matrix,
    ) -> (Option<Matrix>, Option<Matrix>, Option<Matrix>) {
        let q = Self::project(layout, params, self.w_q, h);
        let k = if self.mechanism == Mechanism::Lg {
            Self::project(layout, params, self.w_general, h)
        } else {
            Self::project(layout, params, self.w_k, h)
        };
        let v = Self::project(layout, params, self.w_v, h);
        (q, k, v)
    }

    /// Full `T × T` score matrix with `-inf` outside each row's support.
    pub fn scores(&self, layout: &Layout, params: &[f64], h: &Matrix) -> Result<Matrix> {
        self.check_input(h)?;
        let (q, k, _) = self.projections(layout, params, h);
        let vec = self.v.map(|id| layout.get(id, params));
        let t_len = h.rows();
        let mut e = Matrix::filled(t_len, t_len, f64::NEG_INFINITY);
        let mut scratch = vec![0.0; self.dim];
        for t in 0..t_len {
            for j in self.support(t) {
                e[(t, j)] = self.score(t, j, h, q.as_ref(), k.as_ref(), vec, &mut scratch);
            }
        }
        Ok(e)
    }

    pub fn attend(&self, layout: &Layout, params: &[f64], h: &Matrix) -> Result<AttentionTrace> {
        Ok(self.forward(layout, params, h)?.trace)
    }

    pub fn forward(&self, layout: &Layout, params: &[f64], h: &Matrix) -> Result<AttentionCache> {
        self.check_input(h)?;
        let t_len = h.rows();
        let (q, k, values) = self.projections(layout, params, h);
        let vec = self.v.map(|id| layout.get(id, params));
        let vals = values.as_ref().unwrap_or(h);
        let mut weights = Matrix::zeros(t_len, t_len);
        let mut outputs = Matrix::zeros(t_len, self.dim);
        let mut scratch = vec![0.0; self.dim];
        let mut row_scores = Vec::with_capacity(t_len);
        let mut row_weights = Vec::with_capacity(t_len);
        let mut evaluations = 0;
        for t in 0..t_len {
            let support = self.support(t);
            row_scores.clear();
            for j in support.clone() {
                row_scores.push(self.score(t, j, h, q.as_ref(), k.as_ref(), vec, &mut scratch));
            }
            evaluations += row_scores.len();
            row_weights.resize(row_scores.len(), 0.0);
            masked_softmax_into(&row_scores, &mut row_weights)?;
            let z = outputs.row_mut(t);
            for (j, &a) in support.zip(&row_weights) {
                weights[(t, j)] = a;
                for (zi, vi) in z.iter_mut().zip(vals.row(j)) {
                    *zi += a * vi;
                }
            }
        }
        Ok(AttentionCache {
            trace: AttentionTrace {
                weights,
                outputs,
                score_evaluations: evaluations,
            },
            queries: q,
            keys: k,
            values,
        })
    }

    /// Accumulates parameter gradients for upstream `dz` (`T × d`) and
    /// returns the gradient with respect to `h`.
    pub fn backward(
        &self,
        layout: &Layout,
        params: &[f64],
        h: &Matrix,
        cache: &AttentionCache,
        dz: &Matrix,
        grads: &mut [f64],
    ) -> Matrix {
        let t_len = h.rows();
        let d = self.dim;
        let scale = 1.0 / (d as f64).sqrt();
        let alpha = &cache.trace.weights;
        let vals = cache.values.as_ref().unwrap_or(h);
        let q = cache.queries.as_ref();
        let k = cache.keys.as_ref();
        let vec = self.v.map(|id| layout.get(id, params));

        let mut dh = Matrix::zeros(t_len, d);
        let mut dvals = Matrix::zeros(t_len, d);
        let mut dq = Matrix::zeros(t_len, d);
        let mut dk = Matrix::zeros(t_len, d);
        let mut dvec = vec![0.0; self.v.map_or(0, |id| layout.slot(id).len())];
        let mut dalpha = Vec::with_capacity(t_len);
        let mut u = vec![0.0; d];

        for t in 0..t_len {
            let support = self.support(t);
            let dzt = dz.row(t);
            dalpha.clear();
            let mut mean = 0.0;
            for j in support.clone() {
                let a = alpha[(t, j)];
                let da = dot(dzt, vals.row(j));
                mean += a * da;
                dalpha.push(da);
                for (dv, g) in dvals.row_mut(j).iter_mut().zip(dzt) {
                    *dv += a * g;
                }
            }
            for (j, da) in support.zip(&dalpha) {
                let de = alpha[(t, j)] * (da - mean);
                if de == 0.0 {
                    continue;
                }
                match self.mechanism {
                    Mechanism::Batt => {
                        let (qt, kj, v) = (q.unwrap().row(t), k.unwrap().row(j), vec.unwrap());
                        for i in 0..d {
                            u[i] = (qt[i] + kj[i]).tanh();
                            dvec[i] += de * u[i];
                            let dpre = de * v[i] * (1.0 - u[i] * u[i]);
                            dq[(t, i)] += dpre;
                            dk[(j, i)] += dpre;
                        }
                    }
                    Mechanism::Ld => {
                        for i in 0..d {
                            let (ht, hj) = (h[(t, i)], h[(j, i)]);
                            dh[(t, i)] += de * scale * hj;
                            dh[(j, i)] += de * scale * ht;
                        }
                    }
                    Mechanism::Lg => {
                        let kj = k.unwrap().row(j);
                        for i in 0..d {
                            dh[(t, i)] += de * scale * kj[i];
                            dk[(j, i)] += de * scale * h[(t, i)];
                        }
                    }
                    Mechanism::Lc => {
                        let (qt, kj, v) = (q.unwrap().row(t), k.unwrap().row(j), vec.unwrap());
                        for i in 0..d {
                            let tq = qt[i].tanh();
                            let tk = kj[i].tanh();
                            dvec[i] += de * tq;
                            dvec[d + i] += de * tk;
                            dq[(t, i)] += de * v[i] * (1.0 - tq * tq);
                            dk[(j, i)] += de * v[d + i] * (1.0 - tk * tk);
                        }
                    }
                    Mechanism::SelfAtt | Mechanism::SparseAtt => {
                        let (qt, kj) = (q.unwrap().row(t), k.unwrap().row(j));
                        for i in 0..d {
                            dq[(t, i)] += de * scale * kj[i];
                            dk[(j, i)] += de * scale * qt[i];
                        }
                    }
                }
            }
        }

        let key_slot = if self.mechanism == Mechanism::Lg {
            self.w_general
        } else {
            self.w_k
        };
        let back = |slot: Option<SlotId>, d_out: &Matrix, grads: &mut [f64], dh: &mut Matrix| {
            if let Some(id) = slot {
                let w: MatRef<'_> = layout.view(id, params);
                for t in 0..t_len {
                    outer_acc(layout.get_mut(id, grads), d_out.row(t), h.row(t));
                    w.t_mul_acc(d_out.row(t), dh.row_mut(t));
                }
            }
        };
        back(self.w_q, &dq, grads, &mut dh);
        back(key_slot, &dk, grads, &mut dh);
        if self.mechanism.projects_values() {
            back(self.w_v, &dvals, grads, &mut dh);
        } else {
            for (a, b) in dh.data_mut().iter_mut().zip(dvals.data()) {
                *a += b;
            }
        }
        if let Some(id) = self.v {
            for (g, v) in layout.get_mut(id, grads).iter_mut().zip(&dvec) {
                *g += v;
            }
        }
        dh
    }
}
