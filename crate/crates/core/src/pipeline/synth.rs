//! Synthetic panels with a planted linear signal.
//!
//! Factors follow independent AR(1) processes, returns are
//! `r_{i,t+1} = β_iᵀ f_t + ε` with `sd(ε_i) = noise_ratio · sd(β_iᵀ f)`, and
//! market caps are static log-normal draws. With `null = true` the signal is
//! dropped and returns are pure noise of the same scale.

use std::path::Path;

use rand_distr::{LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    write_panel, write_riskfree, FactorPanel, MarketCapPanel, Month, Panel, ReturnsPanel,
    RiskFreeSeries,
};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub stocks: usize,
    pub months: usize,
    pub factors: usize,
    pub noise_ratio: f64,
    pub null: bool,
    pub ar: f64,
    pub factor_vol: f64,
    /// Fraction of factor cells blanked at random.
    pub missing_frac: f64,
    pub start: Month,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            stocks: 5,
            months: 240,
            factors: 10,
            noise_ratio: 0.5,
            null: false,
            ar: 0.3,
            factor_vol: 0.03,
            missing_frac: 0.0,
            start: Month::new(2000, 1).expect("valid month"),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub betas: Vec<Vec<f64>>,
    pub noise_std: Vec<f64>,
    pub config: SynthConfig,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub factors: FactorPanel,
    pub returns: ReturnsPanel,
    pub caps: MarketCapPanel,
    pub riskfree: RiskFreeSeries,
    pub truth: SynthTruth,
}

pub fn synth(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.stocks == 0 || cfg.factors == 0 || cfg.months < 2 {
        return Err(Error::Config(
            "synthetic data needs stocks, factors and at least 2 months".into(),
        ));
    }
    if !(cfg.noise_ratio >= 0.0) || !(-1.0 < cfg.ar && cfg.ar < 1.0) || !(cfg.factor_vol > 0.0) {
        return Err(Error::Config(
            "noise_ratio ≥ 0, |ar| < 1 and factor_vol > 0 are required".into(),
        ));
    }
    if !(0.0..1.0).contains(&cfg.missing_frac) {
        return Err(Error::Config("missing_frac must lie in [0, 1)".into()));
    }
    let (t_len, n, s) = (cfg.months, cfg.factors, cfg.stocks);
    let mut rng = RngState::new(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");

    // one extra leading row drives the first month's return
    let mut f = Matrix::zeros(t_len + 1, n);
    let innov = cfg.factor_vol * (1.0 - cfg.ar * cfg.ar).sqrt();
    for c in 0..n {
        f[(0, c)] = cfg.factor_vol * rng.sample(&std_normal);
        for t in 1..=t_len {
            f[(t, c)] = cfg.ar * f[(t - 1, c)] + innov * rng.sample(&std_normal);
        }
    }
    let scale = 1.0 / (n as f64).sqrt();
    let betas: Vec<Vec<f64>> = (0..s)
        .map(|_| (0..n).map(|_| scale * rng.sample(&std_normal)).collect())
        .collect();

    let mut returns = Matrix::zeros(t_len, s);
    let mut noise_std = Vec::with_capacity(s);
    for (i, beta) in betas.iter().enumerate() {
        let signal: Vec<f64> = (0..t_len)
            .map(|t| f.row(t).iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect();
        let mean = signal.iter().sum::<f64>() / t_len as f64;
        let sd = (signal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t_len as f64).sqrt();
        let sigma = cfg.noise_ratio * sd;
        noise_std.push(sigma);
        for t in 0..t_len {
            let eps = if cfg.null {
                sd * rng.sample(&std_normal)
            } else {
                sigma * rng.sample(&std_normal)
            };
            returns[(t, i)] = if cfg.null { eps } else { signal[t] + eps };
        }
    }

    let mut factors = f.slice_rows(1, t_len + 1);
    if cfg.missing_frac > 0.0 {
        for v in factors.data_mut() {
            if rng.uniform(0.0, 1.0) < cfg.missing_frac {
                *v = f64::NAN;
            }
        }
    }
    let cap_dist = LogNormal::new(10.0, 1.0).expect("valid log-normal");
    let cap_row: Vec<f64> = (0..s).map(|_| rng.sample(&cap_dist)).collect();
    let mut caps = Matrix::zeros(t_len, s);
    for t in 0..t_len {
        caps.row_mut(t).copy_from_slice(&cap_row);
    }

    let dates: Vec<Month> = (0..t_len).map(|t| cfg.start.offset(t as i32)).collect();
    let factor_names = (1..=n).map(|c| format!("F{c:02}")).collect();
    let tickers: Vec<String> = (1..=s).map(|i| format!("S{i:03}")).collect();
    Ok(SynthData {
        factors: Panel::new(dates.clone(), factor_names, factors)?,
        returns: Panel::new(dates.clone(), tickers.clone(), returns)?,
        caps: Panel::new(dates.clone(), tickers, caps)?,
        riskfree: RiskFreeSeries::zeros(dates),
        truth: SynthTruth {
            betas,
            noise_std,
            config: cfg.clone(),
        },
    })
}

/// Writes `factors.csv`, `returns.csv`, `caps.csv`, `rf.csv` and `truth.json`.
pub fn write_synth(dir: &Path, data: &SynthData) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_panel(dir.join("factors.csv"), &data.factors)?;
    write_panel(dir.join("returns.csv"), &data.returns)?;
    write_panel(dir.join("caps.csv"), &data.caps)?;
    write_riskfree(dir.join("rf.csv"), &data.riskfree)?;
    let truth =
        serde_json::to_string_pretty(&data.truth).map_err(|e| Error::Serde(e.to_string()))?;
    let path = dir.join("truth.json");
    std::fs::write(&path, truth).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_panels() {
        let cfg = SynthConfig {
            months: 30,
            seed: 4,
            ..SynthConfig::default()
        };
        let a = synth(&cfg).unwrap();
        let b = synth(&cfg).unwrap();
        assert_eq!(a.factors, b.factors);
        assert_eq!(a.returns, b.returns);
        assert_eq!(a.caps, b.caps);
        let c = synth(&SynthConfig { seed: 5, ..cfg }).unwrap();
        assert_ne!(a.returns, c.returns);
    }

    #[test]
    fn noiseless_returns_are_exactly_linear() {
        let cfg = SynthConfig {
            months: 40,
            noise_ratio: 0.0,
            seed: 1,
            ..SynthConfig::default()
        };
        let d = synth(&cfg).unwrap();
        for i in 0..cfg.stocks {
            for t in 1..cfg.months {
                let fit: f64 = d
                    .factors
                    .values
                    .row(t - 1)
                    .iter()
                    .zip(&d.truth.betas[i])
                    .map(|(a, b)| a * b)
                    .sum();
                assert!((d.returns.values[(t, i)] - fit).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn noise_ratio_sets_scale() {
        let cfg = SynthConfig {
            months: 4000,
            stocks: 2,
            seed: 8,
            ..SynthConfig::default()
        };
        let d = synth(&cfg).unwrap();
        for i in 0..2 {
            let resid: Vec<f64> = (1..cfg.months)
                .map(|t| {
                    let fit: f64 = d
                        .factors
                        .values
                        .row(t - 1)
                        .iter()
                        .zip(&d.truth.betas[i])
                        .map(|(a, b)| a * b)
                        .sum();
                    d.returns.values[(t, i)] - fit
                })
                .collect();
            let sd = (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).sqrt();
            assert!((sd / d.truth.noise_std[i] - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn caps_static_and_positive() {
        let d = synth(&SynthConfig {
            months: 12,
            ..SynthConfig::default()
        })
        .unwrap();
        for t in 1..12 {
            assert_eq!(d.caps.values.row(t), d.caps.values.row(0));
        }
        assert!(d.caps.values.data().iter().all(|c| *c > 0.0));
    }

    #[test]
    fn missing_cells_planted() {
        let d = synth(&SynthConfig {
            months: 200,
            missing_frac: 0.1,
            ..SynthConfig::default()
        })
        .unwrap();
        let frac =
            d.factors.mask.iter().filter(|m| !**m).count() as f64 / d.factors.mask.len() as f64;
        assert!((frac - 0.1).abs() < 0.03);
    }

    #[test]
    fn written_files_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let d = synth(&SynthConfig {
            months: 20,
            seed: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        write_synth(dir.path(), &d).unwrap();
        let f = crate::data::load_panel(
            dir.path().join("factors.csv"),
            crate::data::PanelKind::Factor,
        )
        .unwrap();
        assert_eq!(f, d.factors);
        assert!(dir.path().join("truth.json").exists());
    }
}
