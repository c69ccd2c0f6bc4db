use crate::error::{Error, Result};

/// Gradients smaller than this are compared on an absolute scale.
pub const DEFAULT_ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Relative error per flat parameter index.
    pub rel_errors: Vec<f64>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Indices whose relative error exceeded the tolerance.
    pub flagged: Vec<usize>,
    /// Indices skipped by the caller's exclusion predicate.
    pub skipped: Vec<usize>,
    pub rel_tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }

    /// Max relative error per named block of a [`super::Layout`].
    pub fn by_slot(&self, layout: &super::Layout) -> Vec<(String, f64)> {
        layout
            .slots()
            .iter()
            .map(|s| {
                let worst = self.rel_errors[s.range()]
                    .iter()
                    .copied()
                    .fold(0.0, f64::max);
                (s.name.clone(), worst)
            })
            .collect()
    }
}

/// Compares `analytic` against central differences of `loss` at `params`.
///
/// The step is `h = 1e-5 * max(1, |θ|)`; the relative error is
/// `|a - n| / max(|a|, |n|, DEFAULT_ABS_FLOOR)`. `skip(i, θ_i)` lets callers
/// exclude indices sitting on a non-differentiable kink.
pub fn grad_check<F, S>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    rel_tol: f64,
    skip: S,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
    S: Fn(usize, f64) -> bool,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let base = loss(params);
    if !base.is_finite() {
        return Err(Error::Evaluation(format!("loss is not finite: {base}")));
    }
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        rel_errors: vec![0.0; params.len()],
        analytic: analytic.to_vec(),
        numeric: vec![0.0; params.len()],
        flagged: Vec::new(),
        skipped: Vec::new(),
        rel_tol,
    };
    for i in 0..params.len() {
        let theta = params[i];
        if skip(i, theta) {
            report.skipped.push(i);
            continue;
        }
        let h = 1e-5 * theta.abs().max(1.0);
        work[i] = theta + h;
        let up = loss(&work);
        work[i] = theta - h;
        let down = loss(&work);
        work[i] = theta;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Evaluation(format!(
                "loss is not finite around parameter {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(DEFAULT_ABS_FLOOR);
        let rel = (a - numeric).abs() / denom;
        report.numeric[i] = numeric;
        report.rel_errors[i] = rel;
        if rel > rel_tol {
            report.flagged.push(i);
        }
    }
    Ok(report)
}
