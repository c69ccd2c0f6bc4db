use crate::error::{Error, Result};

/// Softmax over the finite entries of `scores`; `-inf` entries are masked
/// and receive exactly zero weight.
pub fn masked_softmax(scores: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; scores.len()];
    masked_softmax_into(scores, &mut out)?;
    Ok(out)
}

pub(crate) fn masked_softmax_into(scores: &[f64], out: &mut [f64]) -> Result<()> {
    let max = scores
        .iter()
        .copied()
        .filter(|s| *s != f64::NEG_INFINITY)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Domain("masked_softmax: every slot is masked".into()));
    }
    if !max.is_finite() {
        return Err(Error::Domain(format!(
            "masked_softmax: non-finite score {max}"
        )));
    }
    let mut sum = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = if s == f64::NEG_INFINITY {
            0.0
        } else {
            (s - max).exp()
        };
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}
