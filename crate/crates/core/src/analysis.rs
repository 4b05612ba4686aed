//! The metric-shape functions: `f(x) = x / (1 - x)` (the relative metric in
//! terms of the normalized history distance) against the linear `g(x) = c x`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default right edge of emitted curves.
pub const CURVE_UPPER: f64 = 0.99;

fn check_domain<T: Scalar>(x: T) -> Result<()> {
    if x >= T::zero() && x < T::one() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("x = {x} outside [0, 1)")))
    }
}

pub fn f<T: Scalar>(x: T) -> Result<T> {
    check_domain(x)?;
    Ok(x / (T::one() - x))
}

/// `1 / (1 - x)^2`
pub fn f_prime<T: Scalar>(x: T) -> Result<T> {
    check_domain(x)?;
    let d = T::one() - x;
    Ok(T::one() / (d * d))
}

/// `2 / (1 - x)^3`
pub fn f_double_prime<T: Scalar>(x: T) -> Result<T> {
    check_domain(x)?;
    let d = T::one() - x;
    Ok(T::of(2.0) / (d * d * d))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub x: f64,
    pub f: f64,
    pub f_prime: f64,
    pub f_double_prime: f64,
    pub g: f64,
}

/// `points` evenly spaced samples on `[0, upper]`.
pub fn emit_curves(points: usize, upper: f64, c: f64) -> Result<Vec<CurveSample>> {
    if points < 2 {
        return Err(Error::InvalidArgument("need at least two grid points".into()));
    }
    if !(upper > 0.0 && upper < 1.0) {
        return Err(Error::InvalidArgument(format!("upper limit {upper} outside (0, 1)")));
    }
    (0..points)
        .map(|k| {
            let x = if k + 1 == points {
                upper
            } else {
                upper * k as f64 / (points - 1) as f64
            };
            Ok(CurveSample {
                x,
                f: f(x)?,
                f_prime: f_prime(x)?,
                f_double_prime: f_double_prime(x)?,
                g: c * x,
            })
        })
        .collect()
}

/// Tab-separated curve table with a commented header recording the grid.
pub fn write_curves(path: &Path, samples: &[CurveSample], c: f64) -> Result<()> {
    let upper = samples.last().map_or(0.0, |s| s.x);
    let mut out = format!(
        "# metric curves: f(x)=x/(1-x), g(x)=c*x; points={} upper={upper} c={c}\n",
        samples.len()
    );
    out.push_str("x\tf\tf_prime\tf_double_prime\tg\n");
    for s in samples {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            s.x, s.f, s.f_prime, s.f_double_prime, s.g
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
