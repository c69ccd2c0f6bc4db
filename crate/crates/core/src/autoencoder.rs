//! Single-bottleneck MLP autoencoder used to compress the factor panel.
//!
//! `x = relu(W_en f + b_en)`, `f̂ = g(W_de x + b_de)` with `g = relu` by
//! default, and the latent width fixed at `round(0.7 n)`. Training minimises the reconstruction
//! error over observed cells only; missing cells start at the in-sample
//! column mean and are later replaced by the reconstruction.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{FactorPanel, Month};
use crate::error::{Error, Result};
use crate::numeric::{
    activation, activation_grad, outer_acc, relu, Activation, Layout, MatRef, Matrix, RngState,
    SlotId,
};
use crate::training::adam::{adam_step, AdamConfig, AdamState};
use crate::training::early_stopping::{EarlyStopping, StopDecision};

/// `round(0.7 n)`, halves rounded up.
pub fn latent_width(n: usize) -> usize {
    (7 * n + 5) / 10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    n: usize,
    m: usize,
    layout: Layout,
    w_en: SlotId,
    b_en: SlotId,
    w_de: SlotId,
    b_de: SlotId,
    decoder: Activation,
}

/// Bias value for freshly initialised networks, keeping ReLU units alive.
pub const INIT_BIAS: f64 = 0.1;

/// Encoder and decoder weights, flat in layout order
/// (`W_en`, `b_en`, `W_de`, `b_de`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderParams {
    pub net: Autoencoder,
    pub values: Vec<f64>,
}

/// Bottleneck activations for each month; all entries are non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFactors {
    pub dates: Vec<Month>,
    pub values: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    /// Fraction of the training rows held out (at the tail) for early stopping.
    pub valid_frac: f64,
    pub seed: u64,
    pub decoder: Activation,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            patience: 10,
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            valid_frac: 0.2,
            seed: 0,
            decoder: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PretrainLog {
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
}

/// Result of [`pretrain`].
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub params: AutoencoderParams,
    /// Per-column means of observed in-sample cells, used as initial fill.
    pub column_means: Vec<f64>,
    pub latent: LatentFactors,
    pub log: PretrainLog,
}

impl Autoencoder {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!(
                "autoencoder needs at least 2 factors, got {n}"
            )));
        }
        Ok(Self::with_width(n, latent_width(n)))
    }

    /// Explicit latent width, for tests and ablations.
    pub fn with_width(n: usize, m: usize) -> Self {
        let mut layout = Layout::new();
        let w_en = layout.add_weight("W_en", m, n);
        let b_en = layout.add_bias("b_en", m);
        let w_de = layout.add_weight("W_de", n, m);
        let b_de = layout.add_bias("b_de", n);
        Self {
            n,
            m,
            layout,
            w_en,
            b_en,
            w_de,
            b_de,
            decoder: Activation::Relu,
        }
    }

    pub fn with_decoder(mut self, decoder: Activation) -> Self {
        self.decoder = decoder;
        self
    }

    pub fn decoder(&self) -> Activation {
        self.decoder
    }

    pub fn input_dim(&self) -> usize {
        self.n
    }

    pub fn latent_dim(&self) -> usize {
        self.m
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Glorot weights, biases at [`INIT_BIAS`].
    pub fn init(&self, rng: &mut RngState) -> AutoencoderParams {
        let mut values = self.layout.init(rng);
        for id in [self.b_en, self.b_de] {
            self.layout.get_mut(id, &mut values).fill(INIT_BIAS);
        }
        AutoencoderParams {
            net: self.clone(),
            values,
        }
    }

    pub fn zeros(&self) -> AutoencoderParams {
        AutoencoderParams {
            net: self.clone(),
            values: vec![0.0; self.layout.len()],
        }
    }
}

impl AutoencoderParams {
    fn view(&self, id: SlotId) -> MatRef<'_> {
        self.net.layout.view(id, &self.values)
    }

    pub fn w_en(&self) -> MatRef<'_> {
        self.view(self.net.w_en)
    }

    pub fn b_en(&self) -> &[f64] {
        self.net.layout.get(self.net.b_en, &self.values)
    }

    pub fn w_de(&self) -> MatRef<'_> {
        self.view(self.net.w_de)
    }

    pub fn b_de(&self) -> &[f64] {
        self.net.layout.get(self.net.b_de, &self.values)
    }

    pub fn set(&mut self, name: &str, values: &[f64]) {
        let id = self
            .net
            .layout
            .find(name)
            .expect("unknown autoencoder slot");
        self.net
            .layout
            .get_mut(id, &mut self.values)
            .copy_from_slice(values);
    }

    fn encode_pre(&self, f: &[f64]) -> Vec<f64> {
        let mut a = self.b_en().to_vec();
        self.w_en().mul_acc(f, &mut a);
        a
    }

    fn decode_pre(&self, x: &[f64]) -> Vec<f64> {
        let mut a = self.b_de().to_vec();
        self.w_de().mul_acc(x, &mut a);
        a
    }
}

/// `relu(W_en f + b_en)`.
pub fn encode(f: &[f64], params: &AutoencoderParams) -> Result<Vec<f64>> {
    if f.len() != params.net.n {
        return Err(Error::Validation(format!(
            "encode expects {} factors, got {}",
            params.net.n,
            f.len()
        )));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation(
            "encode input contains non-finite values".into(),
        ));
    }
    Ok(params.encode_pre(f).into_iter().map(relu).collect())
}

/// `g(W_de x + b_de)` with the decoder activation `g`.
pub fn decode(x: &[f64], params: &AutoencoderParams) -> Result<Vec<f64>> {
    if x.len() != params.net.m {
        return Err(Error::Validation(format!(
            "decode expects {} latent values, got {}",
            params.net.m,
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation(
            "decode input contains non-finite values".into(),
        ));
    }
    let g = params.net.decoder;
    Ok(params
        .decode_pre(x)
        .into_iter()
        .map(|a| activation(g, a))
        .collect())
}

/// Means of observed cells per column over `rows` (0 for a column with no
/// observation there).
pub fn column_means(panel: &FactorPanel, rows: Range<usize>) -> Vec<f64> {
    (0..panel.width())
        .map(|c| {
            let (sum, count) = rows
                .clone()
                .filter(|&r| panel.observed(r, c))
                .fold((0.0, 0usize), |(s, n), r| (s + panel.values[(r, c)], n + 1));
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect()
}

/// Copy of the panel values with missing cells set to `fill[col]`.
pub fn mean_filled(panel: &FactorPanel, fill: &[f64]) -> Matrix {
    let mut out = panel.values.clone();
    for r in 0..panel.len() {
        for c in 0..panel.width() {
            if !panel.observed(r, c) {
                out[(r, c)] = fill[c];
            }
        }
    }
    out
}

/// Masked reconstruction loss `(1/T) Σ_t Σ_j mask (f - f̂)²` over `rows`,
/// optionally accumulating its gradient.
fn masked_loss(
    params: &AutoencoderParams,
    filled: &Matrix,
    panel: &FactorPanel,
    rows: Range<usize>,
    mut grads: Option<&mut [f64]>,
) -> f64 {
    let net = &params.net;
    let t_len = rows.len().max(1) as f64;
    let mut loss = 0.0;
    let mut d_out = vec![0.0; net.n];
    let mut d_lat = vec![0.0; net.m];
    for r in rows {
        let f = filled.row(r);
        let a_en = params.encode_pre(f);
        let x: Vec<f64> = a_en.iter().map(|v| relu(*v)).collect();
        let a_de = params.decode_pre(&x);
        for c in 0..net.n {
            let fhat = activation(net.decoder, a_de[c]);
            if panel.observed(r, c) {
                let diff = fhat - f[c];
                loss += diff * diff;
                d_out[c] = 2.0 * diff / t_len * activation_grad(net.decoder, a_de[c], fhat);
            } else {
                d_out[c] = 0.0;
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            outer_acc(net.layout.get_mut(net.w_de, g), &d_out, &x);
            for (gb, d) in net.layout.get_mut(net.b_de, g).iter_mut().zip(&d_out) {
                *gb += d;
            }
            d_lat.iter_mut().for_each(|v| *v = 0.0);
            params.w_de().t_mul_acc(&d_out, &mut d_lat);
            for (dl, a) in d_lat.iter_mut().zip(&a_en) {
                if *a <= 0.0 {
                    *dl = 0.0;
                }
            }
            outer_acc(net.layout.get_mut(net.w_en, g), &d_lat, f);
            for (gb, d) in net.layout.get_mut(net.b_en, g).iter_mut().zip(&d_lat) {
                *gb += d;
            }
        }
    }
    loss / t_len
}

/// Masked reconstruction loss and its gradient over `rows` of `panel`
/// after mean filling with `fill`.
pub fn reconstruction_loss(
    params: &AutoencoderParams,
    panel: &FactorPanel,
    fill: &[f64],
    rows: Range<usize>,
) -> (f64, Vec<f64>) {
    let filled = mean_filled(panel, fill);
    let mut g = vec![0.0; params.values.len()];
    let loss = masked_loss(params, &filled, panel, rows, Some(&mut g));
    (loss, g)
}

/// Fits the autoencoder on `train_rows` of `panel` (early stopping on the
/// trailing `valid_frac` of those rows) and encodes every row. Encoder
/// biases start so that each latent unit is active at the column means,
/// the decoder bias starts at those means; with a ReLU decoder the
/// decoder weights start non-negative so no output unit begins inactive.
pub fn pretrain(
    panel: &FactorPanel,
    train_rows: Range<usize>,
    cfg: &PretrainConfig,
) -> Result<Pretrained> {
    cfg.adam.validate()?;
    if cfg.patience == 0 {
        return Err(Error::Config(
            "autoencoder patience must be at least 1".into(),
        ));
    }
    if train_rows.end > panel.len() || train_rows.len() < 2 {
        return Err(Error::Config(format!(
            "autoencoder training rows {train_rows:?} invalid for a {}-row panel",
            panel.len()
        )));
    }
    let net = Autoencoder::new(panel.width())?.with_decoder(cfg.decoder);
    let means = column_means(panel, train_rows.clone());
    let filled = mean_filled(panel, &means);

    let valid_len = crate::data::validation_len(train_rows.len(), cfg.valid_frac)
        .clamp(1, train_rows.len() - 1);
    let split = train_rows.end - valid_len;
    let fit_rows = train_rows.start..split;
    let valid_rows = split..train_rows.end;

    let mut rng = RngState::new(cfg.seed);
    let mut params = net.init(&mut rng);
    let layout = &params.net.layout;
    let centred: Vec<f64> = {
        let mut mean_pre = vec![0.0; net.m];
        params.w_en().mul_acc(&means, &mut mean_pre);
        mean_pre.iter().map(|a| INIT_BIAS - a).collect()
    };
    layout
        .get_mut(params.net.b_en, &mut params.values)
        .copy_from_slice(&centred);
    layout
        .get_mut(params.net.b_de, &mut params.values)
        .copy_from_slice(&means);
    if net.decoder == Activation::Relu {
        for w in layout.get_mut(params.net.w_de, &mut params.values) {
            *w = w.abs();
        }
    }
    let mut best = params.values.clone();
    let mut state = AdamState::new(params.values.len());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut log = PretrainLog::default();
    let mut grads = vec![0.0; params.values.len()];

    for epoch in 1..=cfg.max_epochs {
        grads.iter_mut().for_each(|g| *g = 0.0);
        let loss = masked_loss(&params, &filled, panel, fit_rows.clone(), Some(&mut grads));
        if !loss.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("autoencoder reconstruction loss is {loss}"),
            });
        }
        adam_step(&mut params.values, &grads, &mut state, &cfg.adam)
            .map_err(|e| retag_epoch(e, epoch))?;
        let valid = masked_loss(&params, &filled, panel, valid_rows.clone(), None);
        if !valid.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("autoencoder validation loss is {valid}"),
            });
        }
        log.train_loss.push(loss);
        log.valid_loss.push(valid);
        match stopper.observe(epoch, valid) {
            StopDecision::Improved => best.copy_from_slice(&params.values),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    params.values = best;
    log.best_epoch = stopper.best_epoch().unwrap_or(0);
    log.best_valid_loss = stopper.best();

    let imputed = impute_with_fill(panel, &params, &means)?;
    let latent = encode_panel(&imputed, &params)?;
    Ok(Pretrained {
        params,
        column_means: means,
        latent,
        log,
    })
}

fn retag_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Training { msg, .. } => Error::Training { epoch, msg },
        other => other,
    }
}

/// Encodes every row of a fully observed panel.
pub fn encode_panel(panel: &FactorPanel, params: &AutoencoderParams) -> Result<LatentFactors> {
    let mut values = Matrix::zeros(panel.len(), params.net.m);
    for r in 0..panel.len() {
        let x = encode(panel.values.row(r), params)?;
        values.row_mut(r).copy_from_slice(&x);
    }
    Ok(LatentFactors {
        dates: panel.dates.clone(),
        values,
    })
}

/// Fixed-point passes used when imputing missing cells.
pub const IMPUTE_MAX_ITER: usize = 200;
const IMPUTE_TOL: f64 = 1e-10;

fn impute_with_fill(
    panel: &FactorPanel,
    params: &AutoencoderParams,
    fill: &[f64],
) -> Result<FactorPanel> {
    let mut out = panel.clone();
    out.values = mean_filled(panel, fill);
    for r in 0..panel.len() {
        let missing: Vec<usize> = (0..panel.width())
            .filter(|&c| !panel.observed(r, c))
            .collect();
        if missing.is_empty() {
            continue;
        }
        for _ in 0..IMPUTE_MAX_ITER {
            let recon = decode(&encode(out.values.row(r), params)?, params)?;
            let mut change: f64 = 0.0;
            for &c in &missing {
                change = change.max((out.values[(r, c)] - recon[c]).abs());
                out.values[(r, c)] = recon[c];
            }
            if change < IMPUTE_TOL {
                break;
            }
        }
    }
    out.mask.iter_mut().for_each(|m| *m = true);
    Ok(out)
}

/// Replaces missing cells by their reconstruction, repeating
/// `decode(encode(row))` on the missing positions until they settle;
/// observed cells are untouched. The initial fill uses the panel's own
/// column means.
pub fn impute_missing(panel: &FactorPanel, params: &AutoencoderParams) -> Result<FactorPanel> {
    let means = column_means(panel, 0..panel.len());
    impute_with_fill(panel, params, &means)
}

/// Per-column z-scoring with statistics from the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Non-finite cells are ignored; zero-variance columns get unit scale,
    /// so they map to zero.
    pub fn fit(values: &Matrix, rows: Range<usize>) -> Self {
        let cols = values.cols();
        let mut count = vec![0usize; cols];
        let mut mean = vec![0.0; cols];
        for r in rows.clone() {
            for (c, v) in values.row(r).iter().enumerate() {
                if v.is_finite() {
                    count[c] += 1;
                    mean[c] += v;
                }
            }
        }
        for (m, n) in mean.iter_mut().zip(&count) {
            *m /= (*n).max(1) as f64;
        }
        let mut var = vec![0.0; cols];
        for r in rows {
            for (c, v) in values.row(r).iter().enumerate() {
                if v.is_finite() {
                    var[c] += (v - mean[c]) * (v - mean[c]);
                }
            }
        }
        let std = var
            .into_iter()
            .zip(&count)
            .map(|(v, n)| (v / (*n).max(1) as f64).sqrt())
            .map(|s| if s > 1e-12 { s } else { 1.0 })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, values: &Matrix) -> Matrix {
        let mut out = values.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}
