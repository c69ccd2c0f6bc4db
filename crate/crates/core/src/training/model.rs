//! The composed forecaster: recurrent core, optional attention layer and a
//! linear head `ŷ_t = w·z_t + b`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{Attention, AttentionCache, Mechanism};
use crate::error::{Error, Result};
use crate::numeric::{Layout, Matrix, RngState, SlotId};
use crate::recurrent::{CoreCache, CoreKind, RecurrentCore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "RNN")]
    Rnn,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "GRU")]
    Gru,
    Batt,
    #[serde(rename = "LC")]
    Lc,
    #[serde(rename = "LD")]
    Ld,
    #[serde(rename = "LG")]
    Lg,
    #[serde(rename = "self_att")]
    SelfAtt,
    #[serde(rename = "sparse_att")]
    SparseAtt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        ModelKind::Rnn,
        ModelKind::Lstm,
        ModelKind::Gru,
        ModelKind::Batt,
        ModelKind::Lc,
        ModelKind::Ld,
        ModelKind::Lg,
        ModelKind::SelfAtt,
        ModelKind::SparseAtt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rnn => "RNN",
            ModelKind::Lstm => "LSTM",
            ModelKind::Gru => "GRU",
            ModelKind::Batt => "Batt",
            ModelKind::Lc => "LC",
            ModelKind::Ld => "LD",
            ModelKind::Lg => "LG",
            ModelKind::SelfAtt => "self_att",
            ModelKind::SparseAtt => "sparse_att",
        }
    }

    /// Attention models all sit on the vanilla RNN core.
    pub fn core_kind(self) -> CoreKind {
        match self {
            ModelKind::Lstm => CoreKind::Lstm,
            ModelKind::Gru => CoreKind::Gru,
            _ => CoreKind::Rnn,
        }
    }

    pub fn mechanism(self) -> Option<Mechanism> {
        match self {
            ModelKind::Rnn | ModelKind::Lstm | ModelKind::Gru => None,
            ModelKind::Batt => Some(Mechanism::Batt),
            ModelKind::Lc => Some(Mechanism::Lc),
            ModelKind::Ld => Some(Mechanism::Ld),
            ModelKind::Lg => Some(Mechanism::Lg),
            ModelKind::SelfAtt => Some(Mechanism::SelfAtt),
            ModelKind::SparseAtt => Some(Mechanism::SparseAtt),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden: [usize; 2],
    /// Sparse attention window `w`; ignored by other kinds.
    pub window: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, input_dim: usize) -> Self {
        Self {
            kind,
            input_dim,
            hidden: [64, 32],
            window: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    spec: ModelSpec,
    layout: Layout,
    core: RecurrentCore,
    attention: Option<Attention>,
    head_w: SlotId,
    head_b: SlotId,
}

/// Intermediates of [`Forecaster::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    core: CoreCache,
    attention: Option<AttentionCache>,
    /// `ŷ_t` for every position of the input.
    pub predictions: Vec<f64>,
}

impl ForwardCache {
    /// Vectors fed to the head: attention outputs, or `h^(2)` for plain cores.
    pub fn head_inputs(&self) -> &Matrix {
        match &self.attention {
            Some(a) => &a.trace.outputs,
            None => self.core.output(),
        }
    }

    pub fn attention(&self) -> Option<&AttentionCache> {
        self.attention.as_ref()
    }
}

impl Forecaster {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if spec.input_dim == 0 || spec.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "model dimensions must be positive (input {}, hidden {:?})",
                spec.input_dim, spec.hidden
            )));
        }
        let mut layout = Layout::new();
        let core = RecurrentCore::new(
            spec.kind.core_kind(),
            spec.input_dim,
            spec.hidden,
            &mut layout,
        );
        let attention = spec
            .kind
            .mechanism()
            .map(|m| Attention::new(m, spec.hidden[1], spec.window, &mut layout))
            .transpose()?;
        let head_w = layout.add_weight("head.W", 1, spec.hidden[1]);
        let head_b = layout.add_bias("head.b", 1);
        Ok(Self {
            spec,
            layout,
            core,
            attention,
            head_w,
            head_b,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    pub fn init(&self, rng: &mut RngState) -> Vec<f64> {
        self.layout.init(rng)
    }

    pub fn head_bias_slot(&self) -> SlotId {
        self.head_b
    }

    pub fn head_weight_slot(&self) -> SlotId {
        self.head_w
    }

    pub fn forward(&self, params: &[f64], x: &Matrix) -> Result<ForwardCache> {
        if params.len() != self.layout.len() {
            return Err(Error::Validation(format!(
                "expected {} parameters, got {}",
                self.layout.len(),
                params.len()
            )));
        }
        let core = self.core.forward(&self.layout, params, x)?;
        let attention = match &self.attention {
            Some(att) => Some(att.forward(&self.layout, params, core.output())?),
            None => None,
        };
        let w = self.layout.get(self.head_w, params);
        let b = self.layout.get(self.head_b, params)[0];
        let z = match &attention {
            Some(a) => &a.trace.outputs,
            None => core.output(),
        };
        let predictions = (0..z.rows())
            .map(|t| b + z.row(t).iter().zip(w).map(|(a, c)| a * c).sum::<f64>())
            .collect();
        Ok(ForwardCache {
            core,
            attention,
            predictions,
        })
    }

    /// `ŷ_t` for every row of `x`.
    pub fn predict(&self, params: &[f64], x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(params, x)?.predictions)
    }

    /// Accumulates into `grads` the gradient of `Σ_t dy_t ŷ_t`.
    pub fn backward(
        &self,
        params: &[f64],
        x: &Matrix,
        cache: &ForwardCache,
        dy: &[f64],
        grads: &mut [f64],
    ) {
        let z = cache.head_inputs();
        let d = z.cols();
        let w = self.layout.get(self.head_w, params).to_vec();
        let mut dz = Matrix::zeros(z.rows(), d);
        {
            let gw = self.layout.get_mut(self.head_w, grads);
            for (t, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for ((gw_i, z_i), (dz_i, w_i)) in gw
                    .iter_mut()
                    .zip(z.row(t))
                    .zip(dz.row_mut(t).iter_mut().zip(&w))
                {
                    *gw_i += g * z_i;
                    *dz_i = g * w_i;
                }
            }
        }
        self.layout.get_mut(self.head_b, grads)[0] += dy.iter().sum::<f64>();
        let dh2 = match (&self.attention, &cache.attention) {
            (Some(att), Some(ac)) => {
                att.backward(&self.layout, params, cache.core.output(), ac, &dz, grads)
            }
            _ => dz,
        };
        self.core
            .backward(&self.layout, params, x, &cache.core, &dh2, grads);
    }
}
