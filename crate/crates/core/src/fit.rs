//! Least-squares scaling fits in linearizing coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitModel {
    /// `y = a x + b`; a flat profile has `a = 0`.
    Plateau,
    /// `y = a ln x + b`.
    Log,
    /// `ln y = a ln x + b`.
    PowerLaw,
    /// `ln y = a x + b`.
    Exponential,
}

impl FitModel {
    fn transform(self, x: f64, y: f64) -> Result<(f64, f64)> {
        let need_pos = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::DegenerateFit(format!("{self:?} model needs positive {what}, got {v}")))
            }
        };
        Ok(match self {
            FitModel::Plateau => (x, y),
            FitModel::Log => (need_pos(x, "abscissa")?.ln(), y),
            FitModel::PowerLaw => (need_pos(x, "abscissa")?.ln(), need_pos(y, "ordinate")?.ln()),
            FitModel::Exponential => (x, need_pos(y, "ordinate")?.ln()),
        })
    }

    /// Derivative of the transformed ordinate with respect to `y`.
    fn ordinate_jacobian(self, y: f64) -> f64 {
        match self {
            FitModel::Plateau | FitModel::Log => 1.0,
            FitModel::PowerLaw | FitModel::Exponential => 1.0 / y,
        }
    }
}

impl std::str::FromStr for FitModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plateau" => Ok(FitModel::Plateau),
            "log" => Ok(FitModel::Log),
            "powerlaw" | "power-law" => Ok(FitModel::PowerLaw),
            "exponential" | "exp" => Ok(FitModel::Exponential),
            other => Err(Error::invalid(format!("unknown fit model {other:?}"))),
        }
    }
}

/// One data point with an optional standard error on `y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub x: f64,
    pub y: f64,
    pub stderr: Option<f64>,
}

impl FitPoint {
    pub fn new(x: f64, y: f64) -> Self {
        FitPoint { x, y, stderr: None }
    }

    pub fn with_stderr(x: f64, y: f64, stderr: f64) -> Self {
        FitPoint { x, y, stderr: Some(stderr) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: FitModel,
    pub slope: f64,
    pub intercept: f64,
    /// `None` when the transformed ordinates are all equal.
    pub r_squared: Option<f64>,
    /// Slope uncertainty propagated from per-point standard errors, when
    /// every point carries one.
    pub slope_stderr: Option<f64>,
    /// Residuals in transformed coordinates.
    pub residuals: Vec<f64>,
    /// `(max y - min y) / |mean y|` of the raw ordinates.
    pub relative_spread: f64,
}

impl FitReport {
    pub fn predict(&self, x: f64) -> f64 {
        match self.model {
            FitModel::Plateau => self.slope * x + self.intercept,
            FitModel::Log => self.slope * x.ln() + self.intercept,
            FitModel::PowerLaw => (self.intercept + self.slope * x.ln()).exp(),
            FitModel::Exponential => (self.intercept + self.slope * x).exp(),
        }
    }
}

/// Plain ordinary least squares on `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: Option<f64>,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return Err(Error::DegenerateFit(format!("need at least 2 points, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > f64::EPSILON * mx.abs().max(1.0) * n) {
        return Err(Error::DegenerateFit("all abscissas coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r_squared = (ss_tot > 0.0).then(|| (1.0 - ss_res / ss_tot).clamp(0.0, 1.0));
    Ok(LinearFit { slope, intercept, r_squared })
}

/// Fits `points` in the linearizing coordinates of `model`. Requires at
/// least three points.
pub fn scaling_fit(points: &[FitPoint], model: FitModel) -> Result<FitReport> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "scaling fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    fit_points(points, model)
}

/// Same as [`scaling_fit`] but accepts two points (exact interpolation).
pub fn fit_points(points: &[FitPoint], model: FitModel) -> Result<FitReport> {
    let mut tx = Vec::with_capacity(points.len());
    let mut ty = Vec::with_capacity(points.len());
    for p in points {
        let (a, b) = model.transform(p.x, p.y)?;
        tx.push(a);
        ty.push(b);
    }
    let lf = linear_fit(&tx, &ty)?;
    let residuals = tx
        .iter()
        .zip(&ty)
        .map(|(a, b)| b - lf.intercept - lf.slope * a)
        .collect();

    let slope_stderr = if points.iter().all(|p| p.stderr.is_some()) {
        let n = tx.len() as f64;
        let mx = tx.iter().sum::<f64>() / n;
        let sxx: f64 = tx.iter().map(|v| (v - mx).powi(2)).sum();
        let var: f64 = points
            .iter()
            .zip(&tx)
            .map(|(p, a)| {
                let c = (a - mx) / sxx;
                let s = p.stderr.unwrap_or(0.0) * model.ordinate_jacobian(p.y);
                c * c * s * s
            })
            .sum();
        Some(var.sqrt())
    } else {
        None
    };

    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let relative_spread = if mean != 0.0 { (max - min) / mean.abs() } else { f64::INFINITY };

    Ok(FitReport {
        model,
        slope: lf.slope,
        intercept: lf.intercept,
        r_squared: lf.r_squared,
        slope_stderr,
        residuals,
        relative_spread,
    })
}

/// Breakpoint of the best two-segment linear fit of `y` against its index.
/// Returns the index of the first point of the second segment. Each segment
/// keeps at least `min_len` points.
pub fn two_segment_breakpoint(y: &[f64], min_len: usize) -> Option<usize> {
    let min_len = min_len.max(2);
    if y.len() < 2 * min_len {
        return None;
    }
    let x: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
    let sse = |lo: usize, hi: usize| -> f64 {
        match linear_fit(&x[lo..hi], &y[lo..hi]) {
            Ok(f) => (lo..hi).map(|i| (y[i] - f.intercept - f.slope * x[i]).powi(2)).sum(),
            Err(_) => f64::INFINITY,
        }
    };
    (min_len..=y.len() - min_len)
        .map(|k| (sse(0, k) + sse(k, y.len()), k))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(xs: &[f64], f: impl Fn(f64) -> f64) -> Vec<FitPoint> {
        xs.iter().map(|&x| FitPoint::new(x, f(x))).collect()
    }

    #[test]
    fn exact_plateau() {
        let r = scaling_fit(&pts(&[10.0, 20.0, 30.0], |_| 0.5), FitModel::Plateau).unwrap();
        assert_eq!(r.slope, 0.0);
        assert_eq!(r.r_squared, None);
        assert_eq!(r.relative_spread, 0.0);
    }

    #[test]
    fn log_model_recovers_unit_slope() {
        let r = scaling_fit(&pts(&[16.0, 32.0, 64.0, 128.0], f64::ln), FitModel::Log).unwrap();
        assert!((r.slope - 1.0).abs() < 1e-6);
        assert!(r.intercept.abs() < 1e-12);
    }

    #[test]
    fn power_law_inverse_square() {
        let r = scaling_fit(&pts(&[10.0, 20.0, 30.0, 40.0], |x| x.powi(-2)), FitModel::PowerLaw).unwrap();
        assert!((r.slope + 2.0).abs() < 1e-12);
        assert!((r.r_squared.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_decay_rate() {
        let r = scaling_fit(&pts(&[1.0, 2.0, 3.0, 4.0, 5.0], |x| 3.0 * (-0.7 * x).exp()), FitModel::Exponential)
            .unwrap();
        assert!((r.slope + 0.7).abs() < 1e-12);
        assert!((r.predict(2.5) - 3.0 * (-1.75f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        assert!(scaling_fit(&pts(&[1.0, 1.0, 1.0], |x| x), FitModel::Plateau).is_err());
        assert!(scaling_fit(&pts(&[1.0, 2.0], |x| x), FitModel::Plateau).is_err());
        assert!(scaling_fit(&pts(&[1.0, 2.0, 3.0], |_| -1.0), FitModel::PowerLaw).is_err());
    }

    #[test]
    fn propagated_slope_error() {
        // slope = Σ c_i y_i with c = (x - x̄)/Sxx = (-1/2, 0, 1/2) for x = 0,1,2
        let p = vec![
            FitPoint::with_stderr(0.0, 0.0, 0.2),
            FitPoint::with_stderr(1.0, 1.0, 0.3),
            FitPoint::with_stderr(2.0, 2.0, 0.4),
        ];
        let r = scaling_fit(&p, FitModel::Plateau).unwrap();
        let want = (0.25f64 * 0.04 + 0.25 * 0.16).sqrt();
        assert!((r.slope_stderr.unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn breakpoint_of_kinked_profile() {
        let y: Vec<f64> = (0..20).map(|i| if i < 7 { -(i as f64) } else { -3.0 + 0.01 * (i - 7) as f64 }).collect();
        assert_eq!(two_segment_breakpoint(&y, 3), Some(7));
        assert_eq!(two_segment_breakpoint(&y[..5], 3), None);
    }

    proptest! {
        #[test]
        fn r_squared_is_a_fraction(ys in proptest::collection::vec(-5.0f64..5.0, 3..12)) {
            let p: Vec<FitPoint> = ys.iter().enumerate().map(|(i, y)| FitPoint::new(i as f64, *y)).collect();
            let r = scaling_fit(&p, FitModel::Plateau).unwrap();
            if let Some(r2) = r.r_squared {
                prop_assert!((0.0..=1.0).contains(&r2));
            }
            let s: f64 = r.residuals.iter().sum();
            prop_assert!(s.abs() < 1e-9);
        }
    }
}
