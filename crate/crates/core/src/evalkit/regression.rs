use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `y` on `x` with an intercept.
pub fn linear_fit_r2(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} x values vs {} y values",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InvalidArgument(
            "linear fit needs at least 3 points".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("linear fit input".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("x is constant".into()));
    }
    if syy == 0.0 {
        return Ok(LinearFit {
            slope: 0.0,
            intercept: my,
            r_squared: 0.0,
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum();
    Ok(LinearFit {
        slope,
        intercept,
        r_squared: 1.0 - ss_res / syy,
    })
}
