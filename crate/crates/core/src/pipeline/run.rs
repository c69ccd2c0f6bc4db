//! Stage orchestration: load, pretrain, train, evaluate, backtest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

#[cfg(test)]
use super::config::PeriodLabel;
use super::config::{PeriodConfig, RunConfig};
use super::manifest::{Failure, RunManifest, RunStatus, StageTiming};
use super::report;
use crate::autoencoder::{column_means, mean_filled, pretrain, PretrainLog, Standardizer};
use crate::backtest::{
    aggregate_portfolio, buy_and_hold, performance_stats, strategy_returns, BacktestResult,
    Weighting,
};
use crate::data::{
    align_on_dates, filter_by_missingness, load_panel, load_riskfree, make_rolling_plan,
    write_panel, Month, Panel, PanelKind, RiskFreeSeries, RollingWindowPlan,
};
use crate::error::{Error, Result};
use crate::metrics::{permutation_importance, ForecastSet, MetricsReport, StockForecasts};
use crate::numeric::{derive_seed, Matrix};
use crate::training::{train_model, ModelKind, ModelSpec, TrainedModel};

/// Default training length for labelled periods.
pub const DEFAULT_TRAIN_LEN: usize = 672;

const TAG_AUTOENCODER: u64 = 0xAE;
const TAG_MODEL: u64 = 0x4D;
const TAG_IMPORTANCE: u64 = 0x1A;

/// Aligned input panels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub factors: Panel,
    pub returns: Panel,
    pub caps: Option<Panel>,
    pub riskfree: RiskFreeSeries,
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let d = &cfg.data;
        let mut factors = load_panel(&d.factors, PanelKind::Factor)?;
        let mut returns = load_panel(&d.returns, PanelKind::Returns)?;
        let mut caps = d
            .caps
            .as_ref()
            .map(|p| load_panel(p, PanelKind::Caps))
            .transpose()?;
        match caps.as_mut() {
            Some(c) => align_on_dates(&mut [&mut factors, &mut returns, c]),
            None => align_on_dates(&mut [&mut factors, &mut returns]),
        };
        if factors.is_empty() {
            return Err(Error::EmptyPanel(
                "factor and return files share no months".into(),
            ));
        }
        if let Some(c) = &caps {
            if c.names != returns.names {
                return Err(Error::Validation(
                    "caps and returns files list different stocks".into(),
                ));
            }
        }
        let before = factors.width();
        let factors = filter_by_missingness(&factors, d.max_missing)?;
        if factors.width() < before {
            log::warn!(
                "dropped {} of {before} factors above {:.0}% missing",
                before - factors.width(),
                d.max_missing * 100.0
            );
        }
        let riskfree = match &d.riskfree {
            Some(p) => load_riskfree(p)?,
            None => RiskFreeSeries::zeros(factors.dates.clone()),
        };
        Ok(Self {
            factors,
            returns,
            caps,
            riskfree,
        })
    }

    /// Targets of stock `i` indexed by sample: `y[k]` is the return of month `k + 1`.
    pub fn targets(&self, i: usize) -> Vec<f64> {
        let t = self.returns.len();
        (0..t)
            .map(|k| {
                if k + 1 < t {
                    self.returns.values[(k + 1, i)]
                } else {
                    f64::NAN
                }
            })
            .collect()
    }
}

/// Rolling plan over samples `k = 0..T−1`, where sample `k` pairs the
/// factors of month `k` with the return of month `k + 1`.
pub fn resolve_plan(period: &PeriodConfig, dates: &[Month]) -> Result<RollingWindowPlan> {
    let samples = dates.len().saturating_sub(1);
    match period.label.oos_months() {
        None => {
            let train_len = period
                .train_len
                .ok_or_else(|| Error::Config("custom period needs train_len".into()))?;
            let test_len = period
                .test_len
                .ok_or_else(|| Error::Config("custom period needs test_len".into()))?;
            make_rolling_plan(samples, train_len, period.valid_frac, test_len)
        }
        Some((first, last)) => {
            let row = |m: Month| {
                dates.binary_search(&m).map_err(|_| {
                    Error::Validation(format!("period {} needs data for {m}", period.label.name()))
                })
            };
            let first_sample = row(first.pred())?;
            let t_total = row(last)?;
            if let Some(n) = period.test_len {
                if n != t_total - first_sample {
                    return Err(Error::Config(format!(
                        "period {} forecasts {} months, test_len says {n}",
                        period.label.name(),
                        t_total - first_sample
                    )));
                }
            }
            let train_len = match period.train_len {
                Some(n) => n,
                None if first_sample < DEFAULT_TRAIN_LEN => {
                    log::warn!("only {first_sample} samples precede the test period; training windows are shortened");
                    first_sample
                }
                None => DEFAULT_TRAIN_LEN,
            };
            make_rolling_plan(
                t_total,
                train_len,
                period.valid_frac,
                t_total - first_sample,
            )
        }
    }
}

/// Inputs shared by the windows of one refit chunk.
#[derive(Debug, Clone)]
pub struct ChunkInputs {
    /// Indices into the plan.
    pub windows: Vec<usize>,
    /// Standardised model inputs for every month.
    pub x: Matrix,
    pub pretrain: Option<PretrainLog>,
}

pub fn chunks(plan: &RollingWindowPlan, refit_every: usize) -> Vec<Vec<usize>> {
    (0..plan.len())
        .collect::<Vec<_>>()
        .chunks(refit_every.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Z-scores the factors and pretrains (or mean-fills) the inputs of every
/// chunk, all on its first window's training months.
pub fn prepare_inputs(
    cfg: &RunConfig,
    ds: &Dataset,
    plan: &RollingWindowPlan,
) -> Result<Vec<ChunkInputs>> {
    let groups = chunks(plan, cfg.train.refit_every);
    pool(cfg.run.threads)?.install(|| {
        groups
            .into_par_iter()
            .enumerate()
            .map(|(c, windows)| {
                let rows = plan.windows[windows[0]].train_range();
                let mut factors = ds.factors.clone();
                factors.values =
                    Standardizer::fit(&factors.values, rows.clone()).apply(&factors.values);
                let (raw, log) = if cfg.autoencoder.enabled {
                    let seed = derive_seed(cfg.run.seed, &[TAG_AUTOENCODER, c as u64]);
                    let pcfg = cfg
                        .autoencoder
                        .to_pretrain_config(cfg.period.valid_frac, seed);
                    let p = pretrain(&factors, rows.clone(), &pcfg)?;
                    (p.latent.values, Some(p.log))
                } else {
                    (
                        mean_filled(&factors, &column_means(&factors, rows.clone())),
                        None,
                    )
                };
                let x = Standardizer::fit(&raw, rows).apply(&raw);
                Ok(ChunkInputs {
                    windows,
                    x,
                    pretrain: log,
                })
            })
            .collect()
    })
}

/// Column labels of the model inputs.
pub fn input_names(cfg: &RunConfig, ds: &Dataset, width: usize) -> Vec<String> {
    if cfg.autoencoder.enabled {
        (1..=width).map(|j| format!("Z{j:02}")).collect()
    } else {
        ds.factors.names.clone()
    }
}

/// One fitted `(model, stock, chunk)` job.
#[derive(Debug, Clone)]
pub struct FitRecord {
    pub model: ModelKind,
    pub stock: usize,
    pub chunk: usize,
    /// Forecasts for the chunk's test indices, in return units.
    pub forecasts: Vec<f64>,
    pub scale: TargetScale,
    /// Kept for the first chunk when importance is requested; it predicts
    /// standardised targets.
    pub fitted: Option<TrainedModel>,
}

/// Per-stock z-scoring of targets, fitted on a window's fit rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    pub const IDENTITY: TargetScale = TargetScale {
        mean: 0.0,
        std: 1.0,
    };

    /// Observed values only; a constant series keeps unit scale.
    pub fn fit(y: &[f64]) -> Self {
        let obs: Vec<f64> = y.iter().copied().filter(|v| v.is_finite()).collect();
        if obs.is_empty() {
            return Self::IDENTITY;
        }
        let n = obs.len() as f64;
        let mean = obs.iter().sum::<f64>() / n;
        let sd = (obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            mean,
            std: if sd > 1e-12 { sd } else { 1.0 },
        }
    }

    pub fn forward(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.mean) / self.std).collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|v| self.mean + self.std * v).collect()
    }
}

/// Output of the training stage.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub sets: Vec<(String, ForecastSet)>,
    pub records: Vec<FitRecord>,
    /// Mean MSE increase per input, in standardised target units.
    pub importance: Vec<(String, Vec<f64>)>,
    pub input_names: Vec<String>,
}

pub fn train_all(
    cfg: &RunConfig,
    ds: &Dataset,
    plan: &RollingWindowPlan,
    inputs: &[ChunkInputs],
) -> Result<TrainOutput> {
    if plan.is_empty() {
        return Err(Error::Config("the rolling plan has no test months".into()));
    }
    let n_stocks = ds.returns.width();
    let targets: Vec<Vec<f64>> = (0..n_stocks).map(|i| ds.targets(i)).collect();
    let width = inputs[0].x.cols();
    let keep_first = cfg.evaluate.importance_repeats > 0;
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.models.kinds.len())
        .flat_map(|m| (0..inputs.len()).flat_map(move |c| (0..n_stocks).map(move |i| (m, c, i))))
        .collect();

    let records: Vec<FitRecord> = pool(cfg.run.threads)?.install(|| {
        jobs.par_iter()
            .map(|&(m, c, i)| {
                let kind = cfg.models.kinds[m];
                let chunk = &inputs[c];
                let window = plan.windows[chunk.windows[0]];
                let y = &targets[i];
                let taus: Vec<usize> = chunk.windows.iter().map(|&w| plan.windows[w].test_index).collect();
                let has = |r: std::ops::Range<usize>| y[r].iter().any(|v| v.is_finite());
                if !has(window.fit_range()) || !has(window.valid_range()) {
                    log::warn!(
                        "{kind}: stock {} has no observed targets before test index {}; forecasts left missing",
                        ds.returns.names[i],
                        window.test_index
                    );
                    return Ok(FitRecord {
                        model: kind,
                        stock: i,
                        chunk: c,
                        forecasts: vec![f64::NAN; taus.len()],
                        scale: TargetScale::IDENTITY,
                        fitted: None,
                    });
                }
                let mut spec = ModelSpec::new(kind, width);
                spec.hidden = cfg.models.hidden;
                spec.window = cfg.models.window;
                let seed = derive_seed(cfg.run.seed, &[TAG_MODEL, m as u64, i as u64, c as u64]);
                let scale = TargetScale::fit(&y[window.fit_range()]);
                let scaled = scale.forward(y);
                let mut fitted = train_model(spec, &chunk.x, &scaled, &window, &cfg.train.to_train_config(seed))?;
                fitted.autoencoder = cfg.autoencoder.enabled.then(|| format!("chunk{c}"));
                let forecasts = scale.inverse(&fitted.forecast_many(&chunk.x, &taus)?);
                Ok(FitRecord {
                    model: kind,
                    stock: i,
                    chunk: c,
                    forecasts,
                    scale,
                    fitted: (keep_first && c == 0).then_some(fitted),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let dates: Vec<Month> = plan
        .windows
        .iter()
        .map(|w| ds.returns.dates[w.test_index + 1])
        .collect();
    let first = plan.windows[0];
    let mut sets = Vec::with_capacity(cfg.models.kinds.len());
    for &kind in &cfg.models.kinds {
        let stocks = (0..n_stocks)
            .map(|i| {
                let y = &targets[i];
                let mut predicted = Vec::with_capacity(plan.len());
                for r in records.iter().filter(|r| r.model == kind && r.stock == i) {
                    predicted.extend_from_slice(&r.forecasts);
                }
                let observed: Vec<f64> = y[first.train_range()]
                    .iter()
                    .copied()
                    .filter(|v| v.is_finite())
                    .collect();
                StockForecasts {
                    id: ds.returns.names[i].clone(),
                    actual: plan.windows.iter().map(|w| y[w.test_index]).collect(),
                    predicted,
                    train_mean: if observed.is_empty() {
                        f64::NAN
                    } else {
                        observed.iter().sum::<f64>() / observed.len() as f64
                    },
                }
            })
            .collect();
        sets.push((
            kind.name().to_string(),
            ForecastSet::new(dates.clone(), stocks)?,
        ));
    }

    let mut importance = Vec::new();
    if keep_first {
        let taus: Vec<usize> = plan.windows.iter().map(|w| w.test_index).collect();
        for (m, &kind) in cfg.models.kinds.iter().enumerate() {
            let mut total = vec![0.0; width];
            let mut count = 0usize;
            for r in records.iter().filter(|r| r.model == kind && r.chunk == 0) {
                if let Some(model) = &r.fitted {
                    let seed =
                        derive_seed(cfg.run.seed, &[TAG_IMPORTANCE, m as u64, r.stock as u64]);
                    let y = r.scale.forward(&targets[r.stock]);
                    let imp = permutation_importance(
                        model,
                        &inputs[0].x,
                        &y,
                        &taus,
                        cfg.evaluate.importance_repeats,
                        seed,
                    )?;
                    total.iter_mut().zip(&imp).for_each(|(t, v)| *t += v);
                    count += 1;
                }
            }
            if count > 0 {
                importance.push((
                    kind.name().to_string(),
                    total.into_iter().map(|t| t / count as f64).collect(),
                ));
            }
        }
    }
    Ok(TrainOutput {
        sets,
        records,
        importance,
        input_names: input_names(cfg, ds, width),
    })
}

/// Strategy rows (models then `BH`) for one weighting.
pub fn backtest_table(
    sets: &[(String, ForecastSet)],
    weighting: Weighting,
    ds: &Dataset,
    cfg: &RunConfig,
) -> Result<Vec<(String, BacktestResult)>> {
    let Some((_, first)) = sets.first() else {
        return Ok(Vec::new());
    };
    let dates = &first.dates;
    let rf = ds.riskfree.lookup(dates)?;
    let prior_caps = match weighting {
        Weighting::Equal => None,
        Weighting::Value => Some(prior_caps(ds, first)?),
    };
    let to_matrix = |set: &ForecastSet, pick: fn(&StockForecasts) -> &Vec<f64>| {
        let mut m = Matrix::zeros(set.len(), set.stocks.len());
        for (i, s) in set.stocks.iter().enumerate() {
            m.set_column(i, pick(s));
        }
        m
    };
    let actual = to_matrix(first, |s| &s.actual);
    let mut rows = Vec::with_capacity(sets.len() + 1);
    for (name, set) in sets {
        if set.dates != *dates {
            return Err(Error::Validation(format!(
                "forecasts of {name} cover different months"
            )));
        }
        let strat = strategy_returns(
            &to_matrix(set, |s| &s.actual),
            &to_matrix(set, |s| &s.predicted),
            cfg.backtest.cost_bp,
            cfg.backtest.convention,
        )?;
        let series = aggregate_portfolio(&strat, weighting, prior_caps.as_ref())?;
        rows.push((name.clone(), performance_stats(&series, &rf)?));
    }
    rows.push((
        "BH".to_string(),
        buy_and_hold(&actual, weighting, prior_caps.as_ref(), &rf)?,
    ));
    Ok(rows)
}

/// Caps of the month before each test month, in forecast stock order.
fn prior_caps(ds: &Dataset, set: &ForecastSet) -> Result<Matrix> {
    let caps = ds
        .caps
        .as_ref()
        .ok_or_else(|| Error::Config("value weighting needs a `caps` file".into()))?;
    let mut m = Matrix::filled(set.len(), set.stocks.len(), f64::NAN);
    for (t, d) in set.dates.iter().enumerate() {
        let row = caps
            .row_of(d.pred())
            .ok_or_else(|| Error::Validation(format!("market caps missing for {}", d.pred())))?;
        for (i, s) in set.stocks.iter().enumerate() {
            let c = caps
                .column_index(&s.id)
                .ok_or_else(|| Error::Validation(format!("no market cap column for {}", s.id)))?;
            m[(t, i)] = caps.values[(row, c)];
        }
    }
    Ok(m)
}

fn period_tag(cfg: &RunConfig) -> &'static str {
    cfg.period.label.name()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn forecast_file(kind: &str) -> String {
    format!("forecasts_{kind}.csv")
}

/// Pretraining stage: writes the per-chunk autoencoder log and the first chunk's inputs.
pub fn stage_pretrain(
    cfg: &RunConfig,
    ds: &Dataset,
    plan: &RollingWindowPlan,
    inputs: &[ChunkInputs],
) -> Result<Vec<String>> {
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    let mut log = String::from("chunk,first_test_month,epochs,best_epoch,best_valid_loss\n");
    for (c, chunk) in inputs.iter().enumerate() {
        let month = ds.returns.dates[plan.windows[chunk.windows[0]].test_index + 1];
        match &chunk.pretrain {
            Some(p) => log.push_str(&format!(
                "{c},{month},{},{},{}\n",
                p.valid_loss.len(),
                p.best_epoch,
                p.best_valid_loss
            )),
            None => log.push_str(&format!("{c},{month},0,0,\n")),
        }
    }
    let log_file = "pretrain_log.csv".to_string();
    let path = dir.join(&log_file);
    std::fs::write(&path, log).map_err(|e| Error::io(path, e))?;
    let first = &inputs[0];
    let panel = Panel::new(
        ds.factors.dates.clone(),
        input_names(cfg, ds, first.x.cols()),
        first.x.clone(),
    )?;
    let inputs_file = "inputs_chunk0.csv".to_string();
    write_panel(dir.join(&inputs_file), &panel)?;
    Ok(vec![log_file, inputs_file])
}

/// Training stage: forecasts per model, the fit log and optional importance.
pub fn stage_train(cfg: &RunConfig, out: &TrainOutput) -> Result<Vec<String>> {
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    let mut files = Vec::new();
    for (name, set) in &out.sets {
        let f = forecast_file(name);
        report::write_forecasts(&dir.join(&f), set)?;
        files.push(f);
    }
    if !out.importance.is_empty() {
        let f = format!("importance_{}.csv", period_tag(cfg));
        report::write_importance(&dir.join(&f), &out.input_names, &out.importance)?;
        files.push(f);
    }
    Ok(files)
}

/// Reads the persisted forecasts of every configured model.
pub fn load_forecasts(cfg: &RunConfig) -> Result<Vec<(String, ForecastSet)>> {
    cfg.models
        .kinds
        .iter()
        .map(|k| {
            let set = report::read_forecasts(&cfg.output.dir.join(forecast_file(k.name())))?;
            Ok((k.name().to_string(), set))
        })
        .collect()
}

pub fn stage_evaluate(
    cfg: &RunConfig,
    sets: &[(String, ForecastSet)],
) -> Result<(MetricsReport, Vec<String>)> {
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    let report = MetricsReport::build(sets, cfg.evaluate.dm_hac_lags)?;
    let metrics = format!("metrics_{}.csv", period_tag(cfg));
    let dm = format!("dm_{}.csv", period_tag(cfg));
    report::write_metrics(&dir.join(&metrics), &report)?;
    report::write_dm(&dir.join(&dm), &report)?;
    Ok((report, vec![metrics, dm]))
}

pub type BacktestTables = Vec<(Weighting, Vec<(String, BacktestResult)>)>;

pub fn stage_backtest(
    cfg: &RunConfig,
    ds: &Dataset,
    sets: &[(String, ForecastSet)],
) -> Result<(BacktestTables, Vec<String>)> {
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    let mut files = Vec::new();
    let mut tables = Vec::new();
    for &w in &cfg.backtest.weightings {
        let rows = backtest_table(sets, w, ds, cfg)?;
        let f = format!("bt_{}_{}.csv", w.name(), period_tag(cfg));
        report::write_backtest(&dir.join(&f), &rows)?;
        files.push(f);
        if let Some((_, bh)) = rows.last() {
            for (name, r) in &rows[..rows.len() - 1] {
                let f = format!("cumret_{name}_{}.csv", w.name());
                report::write_cumret(&dir.join(&f), &sets[0].1.dates, name, r, bh)?;
                files.push(f);
            }
        }
        tables.push((w, rows));
    }
    Ok((tables, files))
}

/// Everything a full run produced, for printing.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: RunManifest,
    pub metrics: MetricsReport,
    pub backtests: BacktestTables,
}

struct Tracker {
    manifest: RunManifest,
    dir: PathBuf,
    stage: &'static str,
    started: Instant,
}

impl Tracker {
    fn begin(&mut self, stage: &'static str) {
        log::info!("stage {stage}");
        self.stage = stage;
        self.started = Instant::now();
    }

    fn end(&mut self, files: &[String]) -> Result<()> {
        self.manifest.stages.push(StageTiming {
            stage: self.stage.to_string(),
            seconds: self.started.elapsed().as_secs_f64(),
        });
        for f in files {
            self.manifest.record_output(&self.dir, f)?;
        }
        Ok(())
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Full pipeline. A manifest is written to the output directory whether
/// the run succeeds or not; on failure it names the failing stage.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    let dir = cfg.output.dir.clone();
    ensure_dir(&dir)?;
    let mut tr = Tracker {
        manifest: RunManifest::new(cfg),
        dir: dir.clone(),
        stage: "load",
        started: Instant::now(),
    };
    let result = run_stages(cfg, &mut tr);
    let mut manifest = tr.manifest;
    match result {
        Ok((metrics, backtests)) => {
            manifest.write(&dir.join(MANIFEST_FILE))?;
            Ok(RunSummary {
                manifest,
                metrics,
                backtests,
            })
        }
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.failure = Some(Failure {
                stage: tr.stage.to_string(),
                category: format!("{:?}", e.category()).to_lowercase(),
                message: e.to_string(),
            });
            manifest.write(&dir.join(MANIFEST_FILE))?;
            Err(e)
        }
    }
}

fn run_stages(cfg: &RunConfig, tr: &mut Tracker) -> Result<(MetricsReport, BacktestTables)> {
    tr.begin("load");
    let ds = Dataset::load(cfg)?;
    let plan = resolve_plan(&cfg.period, &ds.factors.dates)?;
    tr.end(&[])?;

    tr.begin("pretrain");
    let inputs = prepare_inputs(cfg, &ds, &plan)?;
    let files = stage_pretrain(cfg, &ds, &plan, &inputs)?;
    tr.end(&files)?;

    tr.begin("train");
    let out = train_all(cfg, &ds, &plan, &inputs)?;
    let files = stage_train(cfg, &out)?;
    tr.end(&files)?;

    tr.begin("evaluate");
    let (mut metrics, files) = stage_evaluate(cfg, &out.sets)?;
    metrics.importance = out.importance.clone();
    tr.end(&files)?;

    tr.begin("backtest");
    let (tables, files) = stage_backtest(cfg, &ds, &out.sets)?;
    tr.end(&files)?;
    Ok((metrics, tables))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::config::{DataConfig, ModelsConfig};
    use crate::pipeline::synth::{synth, write_synth, SynthConfig};

    fn months(from: Month, to: Month) -> Vec<Month> {
        (0..=to.months_since(from))
            .map(|k| from.offset(k))
            .collect()
    }

    fn labelled(label: PeriodLabel) -> PeriodConfig {
        PeriodConfig {
            label,
            train_len: None,
            test_len: None,
            valid_frac: 0.2,
        }
    }

    #[test]
    fn labelled_periods_cover_the_right_months() {
        let dates = months(Month::new(1950, 1).unwrap(), Month::new(2022, 12).unwrap());
        for (label, n) in [
            (PeriodLabel::P1911, 83),
            (PeriodLabel::P2112, 108),
            (PeriodLabel::P2212, 120),
        ] {
            let plan = resolve_plan(&labelled(label), &dates).unwrap();
            assert_eq!(plan.len(), n);
            let w = plan.windows[0];
            assert_eq!(w.train_len(), DEFAULT_TRAIN_LEN);
            assert_eq!(dates[w.test_index + 1], Month::new(2013, 1).unwrap());
            let last = plan.windows[n - 1];
            assert_eq!(dates[last.test_index + 1], label.oos_months().unwrap().1);
        }
    }

    #[test]
    fn short_history_shrinks_training_windows() {
        let dates = months(Month::new(2000, 1).unwrap(), Month::new(2019, 11).unwrap());
        let plan = resolve_plan(&labelled(PeriodLabel::P1911), &dates).unwrap();
        assert_eq!(plan.windows[0].train_start, 0);
        assert_eq!(plan.windows[0].train_len(), 155);
    }

    #[test]
    fn labelled_period_needs_its_months() {
        let dates = months(Month::new(2000, 1).unwrap(), Month::new(2019, 6).unwrap());
        assert!(matches!(
            resolve_plan(&labelled(PeriodLabel::P1911), &dates),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn custom_period_uses_last_samples() {
        let dates = months(Month::new(2000, 1).unwrap(), Month::new(2009, 12).unwrap());
        let p = PeriodConfig {
            label: PeriodLabel::Custom,
            train_len: Some(60),
            test_len: Some(12),
            valid_frac: 0.2,
        };
        let plan = resolve_plan(&p, &dates).unwrap();
        assert_eq!(plan.windows[11].test_index, 118);
        assert_eq!(
            dates[plan.windows[11].test_index + 1],
            *dates.last().unwrap()
        );
    }

    #[test]
    fn refit_chunks_partition_the_plan() {
        let plan = make_rolling_plan(40, 20, 0.2, 7).unwrap();
        assert_eq!(
            chunks(&plan, 3),
            vec![vec![0, 1, 2], vec![3, 4, 5], vec![6]]
        );
        assert_eq!(chunks(&plan, 1).len(), 7);
    }

    fn tiny_config(dir: &Path, threads: usize) -> RunConfig {
        let data = synth(&SynthConfig {
            stocks: 3,
            months: 60,
            factors: 4,
            seed: 11,
            ..SynthConfig::default()
        })
        .unwrap();
        write_synth(&dir.join("data"), &data).unwrap();
        let mut cfg = RunConfig {
            data: DataConfig {
                factors: dir.join("data/factors.csv"),
                returns: dir.join("data/returns.csv"),
                caps: Some(dir.join("data/caps.csv")),
                riskfree: Some(dir.join("data/rf.csv")),
                max_missing: 0.4,
            },
            period: PeriodConfig {
                label: PeriodLabel::Custom,
                train_len: Some(40),
                test_len: Some(6),
                valid_frac: 0.2,
            },
            models: ModelsConfig {
                kinds: vec![ModelKind::Rnn, ModelKind::Batt],
                hidden: [3, 2],
                window: 4,
            },
            train: Default::default(),
            autoencoder: Default::default(),
            evaluate: Default::default(),
            backtest: Default::default(),
            output: Default::default(),
            run: Default::default(),
        };
        cfg.train.max_epochs = 15;
        cfg.train.refit_every = 3;
        cfg.autoencoder.max_epochs = 20;
        cfg.evaluate.importance_repeats = 1;
        cfg.run.threads = threads;
        cfg.output.dir = dir.join(format!("out{threads}"));
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn end_to_end_is_thread_count_invariant() {
        let dir = tempfile::tempdir().unwrap();
        let a = run(&tiny_config(dir.path(), 1)).unwrap();
        let b = run(&tiny_config(dir.path(), 3)).unwrap();
        assert_eq!(a.manifest.status, RunStatus::Ok);
        let hashes = |m: &RunManifest| {
            m.outputs
                .iter()
                .map(|o| (o.file.clone(), o.sha256.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(hashes(&a.manifest), hashes(&b.manifest));
        for f in [
            "forecasts_RNN.csv",
            "metrics_custom.csv",
            "dm_custom.csv",
            "bt_equal_custom.csv",
            "bt_value_custom.csv",
            "importance_custom.csv",
            "cumret_Batt_value.csv",
        ] {
            assert!(
                a.manifest.outputs.iter().any(|o| o.file == f),
                "missing {f}"
            );
        }
        let saved = RunManifest::load(dir.path().join("out1").join(MANIFEST_FILE)).unwrap();
        assert_eq!(saved, a.manifest);
        // models plus buy-and-hold in each backtest table
        assert!(a.backtests.iter().all(|(_, rows)| rows.len() == 3));
    }

    #[test]
    fn evaluation_from_persisted_forecasts_matches() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path(), 2);
        let summary = run(&cfg).unwrap();
        let sets = load_forecasts(&cfg).unwrap();
        let mut again = cfg.clone();
        again.output.dir = dir.path().join("again");
        let (report, _) = stage_evaluate(&again, &sets).unwrap();
        assert_eq!(report.models, summary.metrics.models);
        assert_eq!(report.dm, summary.metrics.dm);
        let original = std::fs::read(cfg.output.dir.join("metrics_custom.csv")).unwrap();
        let rerun = std::fs::read(again.output.dir.join("metrics_custom.csv")).unwrap();
        assert_eq!(original, rerun);
    }

    #[test]
    fn failure_writes_partial_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path(), 1);
        cfg.period.train_len = Some(200);
        assert!(run(&cfg).is_err());
        let m = RunManifest::load(cfg.output.dir.join(MANIFEST_FILE)).unwrap();
        assert_eq!(m.status, RunStatus::Failed);
        let f = m.failure.unwrap();
        assert_eq!((f.stage.as_str(), f.category.as_str()), ("load", "config"));
    }
}
