//! Per-stock model fitting: MSE + L1 loss, full-batch Adam, patience-based
//! early stopping and one-step-ahead forecasts.

pub mod adam;
pub mod early_stopping;
mod model;

use serde::{Deserialize, Serialize};

use crate::data::Window;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngState};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use early_stopping::{EarlyStopping, StopDecision};
pub use model::{Forecaster, ForwardCache, ModelKind, ModelSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    /// L1 coefficient λ on every trainable weight and bias.
    pub lambda: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Number of fit positions drawn per epoch; `None` uses them all.
    pub minibatch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            lambda: 1e-4,
            patience: 10,
            max_epochs: 200,
            seed: 0,
            minibatch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.minibatch == Some(0) {
            return Err(Error::Config("minibatch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Penalised fit loss at the start of each epoch.
    pub train_loss: Vec<f64>,
    /// Validation MSE (no penalty) after each epoch's update.
    pub valid_mse: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

impl TrainLog {
    pub fn best_valid_mse(&self) -> f64 {
        self.valid_mse[self.best_epoch - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub forecaster: Forecaster,
    pub params: Vec<f64>,
    pub window: Window,
    pub log: TrainLog,
    /// Identifier of the autoencoder whose latents fed this model.
    pub autoencoder: Option<String>,
}

impl TrainedModel {
    pub fn spec(&self) -> &ModelSpec {
        self.forecaster.spec()
    }

    /// `ŷ_{τ+1}` from the rows `train_start..=τ` of `x`.
    pub fn forecast_at(&self, x: &Matrix, tau: usize) -> Result<f64> {
        if tau < self.window.train_start || tau >= x.rows() {
            return Err(Error::Validation(format!(
                "forecast index {tau} outside rows {}..{}",
                self.window.train_start,
                x.rows()
            )));
        }
        forecast_one_step(self, &x.slice_rows(self.window.train_start, tau + 1))
    }

    /// Forecasts for every index in `taus`, sharing one forward pass
    /// (valid because the model is causal).
    pub fn forecast_many(&self, x: &Matrix, taus: &[usize]) -> Result<Vec<f64>> {
        let Some(&last) = taus.iter().max() else {
            return Ok(Vec::new());
        };
        if taus.iter().any(|&t| t < self.window.train_start) || last >= x.rows() {
            return Err(Error::Validation(format!(
                "forecast indices {taus:?} outside the usable rows"
            )));
        }
        let path = self.forecaster.predict(
            &self.params,
            &x.slice_rows(self.window.train_start, last + 1),
        )?;
        Ok(taus
            .iter()
            .map(|&t| path[t - self.window.train_start])
            .collect())
    }
}

/// `(1/T) Σ (y − ŷ)² + λ ‖θ‖₁`.
pub fn loss(y: &[f64], yhat: &[f64], params: &[f64], lambda: f64) -> f64 {
    assert_eq!(y.len(), yhat.len(), "loss needs equal-length series");
    mse(y, yhat) + lambda * l1_norm(params)
}

pub fn mse(y: &[f64], yhat: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    y.iter()
        .zip(yhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y.len() as f64
}

pub fn l1_norm(params: &[f64]) -> f64 {
    params.iter().map(|p| p.abs()).sum()
}

fn l1_subgradient(p: f64) -> f64 {
    if p > 0.0 {
        1.0
    } else if p < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Penalised MSE over `positions` of an already computed forward pass, with
/// its gradient added to `grads`.
pub fn loss_and_grad(
    forecaster: &Forecaster,
    params: &[f64],
    x: &Matrix,
    y: &[f64],
    positions: &[usize],
    lambda: f64,
    cache: &ForwardCache,
    grads: &mut [f64],
) -> f64 {
    let n = positions.len().max(1) as f64;
    let mut dy = vec![0.0; cache.predictions.len()];
    let mut sq = 0.0;
    for &t in positions {
        let e = cache.predictions[t] - y[t];
        sq += e * e;
        dy[t] += 2.0 * e / n;
    }
    forecaster.backward(params, x, cache, &dy, grads);
    if lambda > 0.0 {
        for (g, p) in grads.iter_mut().zip(params) {
            *g += lambda * l1_subgradient(*p);
        }
    }
    sq / n + lambda * l1_norm(params)
}

fn observed(positions: std::ops::Range<usize>, y: &[f64], offset: usize) -> Vec<usize> {
    positions
        .map(|t| t - offset)
        .filter(|&t| y[t].is_finite())
        .collect()
}

/// Fits one forecaster on the training block of `window`.
///
/// `x` holds the (latent) inputs for every sample index and `y[k]` the
/// target paired with row `k`, i.e. the next month's excess return;
/// non-finite targets are left out of both losses. The model runs over
/// `train_start..=valid_end`, learns from the fit rows and stops on the
/// validation MSE of the trailing block.
pub fn train_model(
    spec: ModelSpec,
    x: &Matrix,
    y: &[f64],
    window: &Window,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if x.rows() != y.len() {
        return Err(Error::Validation(format!(
            "{} input rows but {} targets",
            x.rows(),
            y.len()
        )));
    }
    if window.valid_end >= x.rows() {
        return Err(Error::Validation(format!(
            "window ends at {} but only {} rows are available",
            window.valid_end,
            x.rows()
        )));
    }
    if x.cols() != spec.input_dim {
        return Err(Error::Validation(format!(
            "model expects {} inputs, data has {}",
            spec.input_dim,
            x.cols()
        )));
    }
    let forecaster = Forecaster::new(spec)?;
    let start = window.train_start;
    let xs = x.slice_rows(start, window.valid_end + 1);
    let ys = &y[start..=window.valid_end];
    let fit = observed(window.fit_range(), y, start);
    let valid = observed(window.valid_range(), y, start);
    if fit.is_empty() || valid.is_empty() {
        return Err(Error::Validation(format!(
            "window at test index {} has no observed targets in its {} block",
            window.test_index,
            if fit.is_empty() { "fit" } else { "validation" }
        )));
    }

    let mut rng = RngState::new(cfg.seed);
    let mut params = forecaster.init(&mut rng);
    let mut best = params.clone();
    let mut state = AdamState::new(params.len());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut log = TrainLog::default();
    let mut grads = vec![0.0; params.len()];
    let mut batch = fit.clone();

    let mut cache = forecaster
        .forward(&params, &xs)
        .map_err(|e| at_epoch(e, 1))?;
    for epoch in 1..=cfg.max_epochs {
        let positions = match cfg.minibatch {
            Some(k) if k < fit.len() => {
                rng.shuffle(&mut batch);
                &batch[..k]
            }
            _ => &fit[..],
        };
        grads.iter_mut().for_each(|g| *g = 0.0);
        let train_loss = loss_and_grad(
            &forecaster,
            &params,
            &xs,
            ys,
            positions,
            cfg.lambda,
            &cache,
            &mut grads,
        );
        if !train_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("training loss is {train_loss}"),
            });
        }
        adam_step(&mut params, &grads, &mut state, &cfg.adam).map_err(|e| at_epoch(e, epoch))?;
        cache = forecaster
            .forward(&params, &xs)
            .map_err(|e| at_epoch(e, epoch))?;
        let v = valid_mse(&cache.predictions, ys, &valid);
        if !v.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("validation MSE is {v}"),
            });
        }
        log.train_loss.push(train_loss);
        log.valid_mse.push(v);
        log.stopped_epoch = epoch;
        match stopper.observe(epoch, v) {
            StopDecision::Improved => best.copy_from_slice(&params),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    log.best_epoch = stopper.best_epoch().unwrap_or(1);
    Ok(TrainedModel {
        forecaster,
        params: best,
        window: *window,
        log,
        autoencoder: None,
    })
}

fn valid_mse(pred: &[f64], y: &[f64], positions: &[usize]) -> f64 {
    positions
        .iter()
        .map(|&t| (pred[t] - y[t]).powi(2))
        .sum::<f64>()
        / positions.len() as f64
}

fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Training { msg, .. } => Error::Training { epoch, msg },
        Error::Evaluation(msg) | Error::Domain(msg) => Error::Training { epoch, msg },
        other => other,
    }
}

/// `ŷ` for the month after the last row of `history`.
pub fn forecast_one_step(model: &TrainedModel, history: &Matrix) -> Result<f64> {
    if history.rows() == 0 {
        return Err(Error::Validation(
            "forecast needs at least one history row".into(),
        ));
    }
    let path = model.forecaster.predict(&model.params, history)?;
    Ok(path[path.len() - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_rolling_plan;
    use crate::numeric::grad_check;

    fn spec(kind: ModelKind, input_dim: usize, hidden: [usize; 2]) -> ModelSpec {
        ModelSpec {
            kind,
            input_dim,
            hidden,
            window: 3,
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss(&[0.3, -0.1], &[0.3, -0.1], &[1.0, -2.0], 0.0), 0.0);
        assert!((loss(&[0.0, 0.0], &[0.1, -0.1], &[], 0.0) - 0.01).abs() < 1e-15);
        assert_eq!(loss(&[1.0], &[1.0], &[0.0; 5], 0.5), 0.0);
        assert!((loss(&[1.0], &[1.0], &[0.5, -0.25], 2.0) - 1.5).abs() < 1e-15);
    }

    fn random_inputs(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = RngState::new(seed);
        let mut x = Matrix::zeros(rows, cols);
        x.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.uniform(-1.0, 1.0));
        x
    }

    #[test]
    fn composed_gradients_match_finite_differences() {
        let x = random_inputs(6, 3, 4);
        let y: Vec<f64> = (0..6).map(|t| 0.1 * t as f64 - 0.2).collect();
        let positions = [0, 2, 3, 5];
        for kind in ModelKind::ALL {
            let f = Forecaster::new(spec(kind, 3, [4, 3])).unwrap();
            let p = f.init(&mut RngState::new(9));
            let cache = f.forward(&p, &x).unwrap();
            let mut g = vec![0.0; p.len()];
            loss_and_grad(&f, &p, &x, &y, &positions, 0.01, &cache, &mut g);
            let objective = |q: &[f64]| {
                let pred = f.predict(q, &x).unwrap();
                let yy: Vec<f64> = positions.iter().map(|&t| y[t]).collect();
                let pp: Vec<f64> = positions.iter().map(|&t| pred[t]).collect();
                loss(&yy, &pp, q, 0.01)
            };
            // skip parameters sitting on the L1 kink
            let r = grad_check(objective, &p, &g, 1e-4, |_, v| v.abs() < 1e-4).unwrap();
            assert!(r.passed(), "{kind}: {:?}", r.by_slot(f.layout()));
        }
    }

    #[test]
    fn l1_subgradient_is_zero_at_zero() {
        let f = Forecaster::new(spec(ModelKind::Rnn, 2, [2, 2])).unwrap();
        let p = vec![0.0; f.num_params()];
        let x = Matrix::zeros(3, 2);
        let cache = f.forward(&p, &x).unwrap();
        let mut g = vec![0.0; p.len()];
        loss_and_grad(&f, &p, &x, &[0.0; 3], &[0, 1, 2], 1.0, &cache, &mut g);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    fn teacher(rows: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = RngState::new(seed);
        let mut x = Matrix::zeros(rows, 2);
        x.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.uniform(-1.0, 1.0));
        let y = (0..rows).map(|t| 0.8 * x[(t, 0)]).collect();
        (x, y)
    }

    #[test]
    fn learns_linear_teacher() {
        let (x, y) = teacher(100, 1);
        let plan = make_rolling_plan(101, 100, 0.2, 1).unwrap();
        let cfg = TrainConfig {
            adam: AdamConfig {
                lr: 0.03,
                ..AdamConfig::default()
            },
            lambda: 0.0,
            patience: 50,
            max_epochs: 500,
            ..TrainConfig::default()
        };
        let w = plan.windows[0];
        let x_full = Matrix::from_vec(101, 2, [x.data(), &[0.0, 0.0]].concat());
        let mut y_full = y;
        y_full.push(f64::NAN);
        let m = train_model(spec(ModelKind::Rnn, 2, [4, 4]), &x_full, &y_full, &w, &cfg).unwrap();
        assert!(
            m.log.best_valid_mse() < 1e-3,
            "valid mse {}",
            m.log.best_valid_mse()
        );

        // least-squares oracle on the same rows: the teacher is exactly linear
        let fit: Vec<usize> = w.fit_range().collect();
        let (sxx, sxy) = fit.iter().fold((0.0, 0.0), |(a, b), &t| {
            (
                a + x_full[(t, 0)] * x_full[(t, 0)],
                b + x_full[(t, 0)] * y_full[t],
            )
        });
        assert!((sxy / sxx - 0.8).abs() < 1e-12);
    }

    fn split_fixture() -> (Matrix, Vec<f64>, Window) {
        let x = Matrix::filled(10, 1, 0.5);
        let mut y = vec![1.0; 10];
        for v in &mut y[8..] {
            *v = -1.0;
        }
        let w = make_rolling_plan(11, 10, 0.2, 1).unwrap().windows[0];
        let x = Matrix::from_vec(11, 1, [x.data(), &[0.5]].concat());
        y.push(f64::NAN);
        (x, y, w)
    }

    #[test]
    fn patience_one_stops_at_epoch_two() {
        let (x, y, w) = split_fixture();
        let s = spec(ModelKind::Rnn, 1, [2, 2]);
        let cfg = TrainConfig {
            patience: 1,
            max_epochs: 50,
            lambda: 0.0,
            adam: AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        let m = train_model(s, &x, &y, &w, &cfg).unwrap();
        assert_eq!(m.log.stopped_epoch, 2);
        assert_eq!(m.log.best_epoch, 1);
        assert!(m.log.valid_mse[1] >= m.log.valid_mse[0]);
        let one = train_model(
            s,
            &x,
            &y,
            &w,
            &TrainConfig {
                max_epochs: 1,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(m.params, one.params);
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = teacher(40, 2);
        let w = make_rolling_plan(40, 30, 0.2, 10).unwrap().windows[3];
        for kind in [ModelKind::Lstm, ModelKind::SparseAtt] {
            let cfg = TrainConfig {
                max_epochs: 20,
                seed: 5,
                minibatch: Some(8),
                ..TrainConfig::default()
            };
            let a = train_model(spec(kind, 2, [3, 3]), &x, &y, &w, &cfg).unwrap();
            let b = train_model(spec(kind, 2, [3, 3]), &x, &y, &w, &cfg).unwrap();
            assert_eq!(a, b);
            let c = train_model(
                spec(kind, 2, [3, 3]),
                &x,
                &y,
                &w,
                &TrainConfig { seed: 6, ..cfg },
            )
            .unwrap();
            assert_ne!(a.params, c.params);
        }
    }

    #[test]
    fn best_so_far_validation_is_non_increasing() {
        let (x, y) = teacher(60, 3);
        let w = make_rolling_plan(60, 50, 0.2, 10).unwrap().windows[0];
        let cfg = TrainConfig {
            max_epochs: 80,
            patience: 5,
            ..TrainConfig::default()
        };
        let m = train_model(spec(ModelKind::Gru, 2, [3, 2]), &x, &y, &w, &cfg).unwrap();
        let mut best = f64::INFINITY;
        for v in &m.log.valid_mse {
            let next = best.min(*v);
            assert!(next <= best);
            best = next;
        }
        assert_eq!(best, m.log.best_valid_mse());
    }

    #[test]
    fn l1_shrinks_parameters() {
        let (x, y) = teacher(60, 8);
        let w = make_rolling_plan(60, 50, 0.2, 10).unwrap().windows[0];
        let base = TrainConfig {
            max_epochs: 300,
            patience: 300,
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            lambda: 0.0,
            ..TrainConfig::default()
        };
        let s = spec(ModelKind::Rnn, 2, [3, 3]);
        let free = train_model(s, &x, &y, &w, &base).unwrap();
        let pen = train_model(
            s,
            &x,
            &y,
            &w,
            &TrainConfig {
                lambda: 0.05,
                ..base
            },
        )
        .unwrap();
        assert!(l1_norm(&pen.params) <= l1_norm(&free.params));
    }

    #[test]
    fn forecast_ignores_future_rows() {
        let (x, y) = teacher(40, 4);
        let w = make_rolling_plan(40, 30, 0.2, 10).unwrap().windows[0];
        let cfg = TrainConfig {
            max_epochs: 5,
            ..TrainConfig::default()
        };
        for kind in ModelKind::ALL {
            let m = train_model(spec(kind, 2, [3, 3]), &x, &y, &w, &cfg).unwrap();
            let at = m.forecast_at(&x, w.test_index).unwrap();
            let mut longer = x.clone();
            longer
                .row_mut(w.test_index + 1)
                .iter_mut()
                .for_each(|v| *v = 9.0);
            assert_eq!(m.forecast_at(&longer, w.test_index).unwrap(), at);
            let many = m
                .forecast_many(&longer, &[w.test_index, w.test_index + 3])
                .unwrap();
            assert_eq!(many[0], at);
        }
    }

    #[test]
    fn scalar_rnn_forecast_unroll() {
        let s = spec(ModelKind::Rnn, 1, [1, 1]);
        let f = Forecaster::new(s).unwrap();
        let mut p = vec![0.0; f.num_params()];
        let set = |p: &mut Vec<f64>, name: &str, v: f64| {
            let id = f.layout().find(name).unwrap();
            f.layout().get_mut(id, p)[0] = v;
        };
        set(&mut p, "rnn1.W_x", 0.5);
        set(&mut p, "rnn1.W_h", -0.3);
        set(&mut p, "rnn1.b", 0.1);
        set(&mut p, "rnn2.W_x", 1.2);
        set(&mut p, "rnn2.W_h", 0.4);
        set(&mut p, "rnn2.b", -0.05);
        set(&mut p, "head.W", 2.0);
        set(&mut p, "head.b", 0.01);
        let model = TrainedModel {
            forecaster: f,
            params: p,
            window: make_rolling_plan(10, 5, 0.2, 1).unwrap().windows[0],
            log: TrainLog::default(),
            autoencoder: None,
        };
        let x = Matrix::from_vec(2, 1, vec![1.0, -2.0]);
        let a1 = (0.5f64 * 1.0 + 0.1).tanh();
        let b1 = (1.2 * a1 - 0.05).tanh();
        let a2 = (0.5 * -2.0 - 0.3 * a1 + 0.1).tanh();
        let b2 = (1.2 * a2 + 0.4 * b1 - 0.05).tanh();
        let expected = 2.0 * b2 + 0.01;
        assert!((forecast_one_step(&model, &x).unwrap() - expected).abs() < 1e-14);
        assert!(matches!(
            forecast_one_step(&model, &Matrix::zeros(0, 1)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn missing_targets_are_skipped() {
        let (x, mut y) = teacher(40, 5);
        let w = make_rolling_plan(40, 30, 0.2, 10).unwrap().windows[0];
        y[3] = f64::NAN;
        let cfg = TrainConfig {
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let m = train_model(spec(ModelKind::Rnn, 2, [3, 3]), &x, &y, &w, &cfg).unwrap();
        assert!(m.params.iter().all(|v| v.is_finite()));
        for t in w.valid_range() {
            y[t] = f64::NAN;
        }
        assert!(matches!(
            train_model(spec(ModelKind::Rnn, 2, [3, 3]), &x, &y, &w, &cfg),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn rejects_bad_config() {
        let bad = [
            TrainConfig {
                patience: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lambda: -1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                adam: AdamConfig {
                    lr: 0.0,
                    ..AdamConfig::default()
                },
                ..TrainConfig::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn model_serialises() {
        let (x, y) = teacher(30, 6);
        let w = make_rolling_plan(30, 20, 0.2, 10).unwrap().windows[0];
        let m = train_model(
            spec(ModelKind::Lg, 2, [3, 3]),
            &x,
            &y,
            &w,
            &TrainConfig {
                max_epochs: 2,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let back: TrainedModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
