//! Ordinary least squares on a line.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination; `1` when the responses are constant.
    pub r_squared: f64,
}

pub fn linear_fit(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least two points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let fit = linear_fit(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_response() {
        let fit = linear_fit(&[(0.0, 4.0), (1.0, 4.0), (3.0, 4.0)]).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn degenerate() {
        assert!(linear_fit(&[(1.0, 2.0)]).is_err());
        assert!(linear_fit(&[(1.0, 2.0), (1.0, 3.0)]).is_err());
    }
}
