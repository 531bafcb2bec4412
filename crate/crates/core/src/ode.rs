//! Ground truth for the flow constructions: explicit Euler, a high-accuracy reference
//! integrator, the flow operator `x ↦ g(X^x_T)` and the explicit Euler global-error bound.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::net::norm;
use crate::stats::linear_fit;
use crate::{Error, Result};

pub type FieldFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Step cap of the reference integrator.
pub const REFERENCE_MAX_STEPS: usize = 1 << 20;

/// Globally Lipschitz drift `f: ℝ^d → ℝ^d` with declared constants.
#[derive(Clone)]
pub struct VectorField {
    pub dim: usize,
    eval: FieldFn,
    /// Declared Lipschitz constant `L`.
    pub lipschitz: f64,
    /// Declared `‖f(0)‖`.
    pub f0_norm: f64,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("dim", &self.dim)
            .field("lipschitz", &self.lipschitz)
            .field("f0_norm", &self.f0_norm)
            .finish_non_exhaustive()
    }
}

impl VectorField {
    pub fn new(
        dim: usize,
        lipschitz: f64,
        f0_norm: f64,
        eval: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("field dimension must be positive".into()));
        }
        if !(lipschitz >= 0.0 && f0_norm >= 0.0) {
            return Err(Error::InvalidArgument(
                "Lipschitz constant and ‖f(0)‖ must be nonnegative".into(),
            ));
        }
        Ok(VectorField {
            dim,
            eval: Arc::new(eval),
            lipschitz,
            f0_norm,
        })
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        (self.eval)(x)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dim {
            Ok(())
        } else {
            Err(Error::DimMismatch {
                expected: self.dim,
                got: x.len(),
            })
        }
    }

    /// Randomized check of the declared constants: `‖f(0)‖` within `1e-9` of the declared
    /// value or below it, and `‖f(x) − f(y)‖ ≤ L‖x − y‖ + 1e-9` on `pairs` random pairs.
    ///
    /// Returns the largest observed difference quotient.
    pub fn spot_check(&self, pairs: usize, radius: f64, seed: u64) -> Result<f64> {
        let f0 = norm(&self.eval(&vec![0.0; self.dim]));
        if f0 > self.f0_norm + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "declared ‖f(0)‖ = {} but measured {f0}",
                self.f0_norm
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..pairs {
            let x: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-radius..=radius)).collect();
            let y: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-radius..=radius)).collect();
            let fx = self.eval(&x);
            let fy = self.eval(&y);
            let num = norm(&sub(&fx, &fy));
            let den = norm(&sub(&x, &y));
            if num > self.lipschitz * den + 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "declared Lipschitz constant {} violated: ratio {}",
                    self.lipschitz,
                    num / den
                )));
            }
            if den > 0.0 {
                worst = worst.max(num / den);
            }
        }
        Ok(worst)
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn axpy(y: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    y.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Transport problem: drift, terminal functional `g` and horizon `T`.
#[derive(Clone)]
pub struct FlowProblem {
    pub field: VectorField,
    terminal: ScalarFn,
    pub horizon: f64,
    pub g_lipschitz: f64,
}

impl fmt::Debug for FlowProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowProblem")
            .field("field", &self.field)
            .field("horizon", &self.horizon)
            .field("g_lipschitz", &self.g_lipschitz)
            .finish_non_exhaustive()
    }
}

impl FlowProblem {
    pub fn new(
        field: VectorField,
        terminal: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        horizon: f64,
        g_lipschitz: f64,
    ) -> Result<Self> {
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be ≥ 0, got {horizon}")));
        }
        if !(g_lipschitz >= 0.0) {
            return Err(Error::InvalidArgument("g Lipschitz constant must be ≥ 0".into()));
        }
        Ok(FlowProblem {
            field,
            terminal: Arc::new(terminal),
            horizon,
            g_lipschitz,
        })
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    pub fn dim(&self) -> usize {
        self.field.dim
    }
}

/// `n` explicit Euler steps of size `T/n` from `x0`.
pub fn euler_scheme(field: &VectorField, x0: &[f64], horizon: f64, n: usize) -> Result<Vec<f64>> {
    field.check_dim(x0)?;
    if n == 0 {
        return Err(Error::InvalidArgument("Euler step count must be ≥ 1".into()));
    }
    let h = horizon / n as f64;
    let mut x = x0.to_vec();
    for _ in 0..n {
        let fx = field.eval(&x);
        x = axpy(&x, h, &fx);
    }
    Ok(x)
}

fn rk4(field: &VectorField, x0: &[f64], horizon: f64, steps: usize) -> Vec<f64> {
    let h = horizon / steps as f64;
    let mut y = x0.to_vec();
    for _ in 0..steps {
        let k1 = field.eval(&y);
        let k2 = field.eval(&axpy(&y, h / 2.0, &k1));
        let k3 = field.eval(&axpy(&y, h / 2.0, &k2));
        let k4 = field.eval(&axpy(&y, h, &k3));
        for i in 0..y.len() {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

/// Endpoint `X^x_T` of the exact flow, from classical fourth-order Runge–Kutta with global
/// step doubling until successive endpoints differ by less than `tol`.
pub fn reference_flow(field: &VectorField, x0: &[f64], horizon: f64, tol: f64) -> Result<Vec<f64>> {
    field.check_dim(x0)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if horizon == 0.0 {
        return Ok(x0.to_vec());
    }
    let mut steps = 1;
    let mut prev = rk4(field, x0, horizon, steps);
    while steps < REFERENCE_MAX_STEPS {
        steps *= 2;
        let next = rk4(field, x0, horizon, steps);
        if norm(&sub(&next, &prev)) < tol {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::NoConvergence {
        max_steps: REFERENCE_MAX_STEPS,
    })
}

/// `u(T, x) = g(X^x_T)`, the solution of the transport equation at time `T`.
pub fn flow_operator_eval(problem: &FlowProblem, x: &[f64], tol: f64) -> Result<f64> {
    let end = reference_flow(&problem.field, x, problem.horizon, tol)?;
    Ok(problem.terminal(&end))
}

/// Global error bound of `n` Euler steps:
/// `(1/n) max{L,1} L T² (T+1) e^{2LT} max{‖f(0)‖,1} (1 + ‖x‖)`.
pub fn euler_error_bound(lipschitz: f64, f0_norm: f64, horizon: f64, n: usize, x_norm: f64) -> f64 {
    let t = horizon;
    lipschitz.max(1.0) * lipschitz * t * t * (t + 1.0) * (2.0 * lipschitz * t).exp() * f0_norm.max(1.0)
        * (1.0 + x_norm)
        / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub x_id: usize,
    pub n: usize,
    pub measured_error: f64,
    pub bound: f64,
}

impl ConvergenceRow {
    pub fn ratio(&self) -> f64 {
        if self.bound > 0.0 {
            self.measured_error / self.bound
        } else if self.measured_error == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub horizon: f64,
    pub rows: Vec<ConvergenceRow>,
    /// Slope of `log(max_x error)` against `log n`; `None` when every error is zero.
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
}

impl ConvergenceReport {
    /// CSV with header `x_id,n,measured_error,bound,ratio`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_id,n,measured_error,bound,ratio\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:e},{:e},{:e}\n",
                r.x_id,
                r.n,
                r.measured_error,
                r.bound,
                r.ratio()
            ));
        }
        out
    }
}

/// Measures the Euler error at every `(x, n)` against [`reference_flow`], checks it against
/// [`euler_error_bound`] and fits the observed convergence order.
pub fn verify_euler_convergence(
    field: &VectorField,
    sample_points: &[Vec<f64>],
    horizon: f64,
    n_list: &[usize],
    tol: f64,
) -> Result<ConvergenceReport> {
    if n_list.len() < 2 || n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] == 0 {
        return Err(Error::InvalidArgument(
            "n_list must be strictly increasing with at least two positive entries".into(),
        ));
    }
    let per_point: Vec<Vec<ConvergenceRow>> = sample_points
        .par_iter()
        .enumerate()
        .map(|(x_id, x)| {
            let exact = reference_flow(field, x, horizon, tol)?;
            let x_norm = norm(x);
            n_list
                .iter()
                .map(|&n| {
                    let approx = euler_scheme(field, x, horizon, n)?;
                    Ok(ConvergenceRow {
                        x_id,
                        n,
                        measured_error: norm(&sub(&exact, &approx)),
                        bound: euler_error_bound(field.lipschitz, field.f0_norm, horizon, n, x_norm),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ConvergenceRow> = per_point.into_iter().flatten().collect();
    if let Some(bad) = rows.iter().find(|r| r.measured_error > r.bound) {
        return Err(Error::BoundViolated {
            x_id: bad.x_id,
            n: bad.n,
            measured: bad.measured_error,
            bound: bad.bound,
        });
    }
    let worst: Vec<(f64, f64)> = n_list
        .iter()
        .filter_map(|&n| {
            let e = rows
                .iter()
                .filter(|r| r.n == n)
                .map(|r| r.measured_error)
                .fold(0.0, f64::max);
            (e > 0.0).then(|| ((n as f64).ln(), e.ln()))
        })
        .collect();
    let (slope, r_squared) = if worst.len() >= 2 {
        let fit = linear_fit(&worst)?;
        (Some(fit.slope), Some(fit.r_squared))
    } else {
        (None, None)
    };
    Ok(ConvergenceReport {
        horizon,
        rows,
        slope,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(d: usize) -> VectorField {
        VectorField::new(d, 1.0, 0.0, |x| x.iter().map(|v| -v).collect()).unwrap()
    }

    fn rotation() -> VectorField {
        VectorField::new(2, 1.0, 0.0, |x| vec![-x[1], x[0]]).unwrap()
    }

    #[test]
    fn euler_examples() {
        let f = decay(1);
        assert_eq!(euler_scheme(&f, &[1.0], 1.0, 1).unwrap(), vec![0.0]);
        assert_eq!(euler_scheme(&f, &[1.0], 1.0, 2).unwrap(), vec![0.25]);
        let zero = VectorField::new(2, 0.0, 0.0, |_| vec![0.0, 0.0]).unwrap();
        for n in [1, 5, 17] {
            assert_eq!(euler_scheme(&zero, &[0.3, -2.0], 1.0, n).unwrap(), vec![0.3, -2.0]);
        }
        assert!(matches!(
            euler_scheme(&f, &[1.0, 2.0], 1.0, 3),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn reference_against_analytic_flows() {
        let tol = 1e-10;
        let y = reference_flow(&decay(1), &[1.0], 1.0, tol).unwrap();
        assert!((y[0] - (-1.0f64).exp()).abs() < tol);
        let y = reference_flow(&rotation(), &[1.0, 0.0], std::f64::consts::FRAC_PI_2, tol).unwrap();
        assert!(y[0].abs() < tol && (y[1] - 1.0).abs() < tol);
        assert_eq!(reference_flow(&rotation(), &[0.7, 0.2], 0.0, tol).unwrap(), vec![0.7, 0.2]);
    }

    #[test]
    fn semigroup() {
        let tol = 1e-11;
        let f = rotation();
        let x = [0.4, -1.3];
        let direct = reference_flow(&f, &x, 1.7, tol).unwrap();
        let mid = reference_flow(&f, &x, 0.6, tol).unwrap();
        let twice = reference_flow(&f, &mid, 1.1, tol).unwrap();
        assert!(norm(&sub(&direct, &twice)) <= 10.0 * tol);
    }

    #[test]
    fn flow_operator_examples() {
        let tol = 1e-10;
        let p = FlowProblem::new(decay(2), |x| x[0], 2f64.ln(), 1.0).unwrap();
        assert!((flow_operator_eval(&p, &[2.0, 0.0], tol).unwrap() - 1.0).abs() < tol);
        let p0 = FlowProblem::new(decay(2), |x| x[0] * x[1], 0.0, 1.0).unwrap();
        assert_eq!(flow_operator_eval(&p0, &[3.0, 1.5], tol).unwrap(), 4.5);
        let c = FlowProblem::new(rotation(), |_| 5.0, 3.0, 0.0).unwrap();
        assert_eq!(flow_operator_eval(&c, &[3.0, 1.5], tol).unwrap(), 5.0);
    }

    #[test]
    fn bound_formula() {
        let b = euler_error_bound(1.0, 0.0, 1.0, 10, 1.0);
        assert!((b - 0.4 * 1f64.exp().powi(2)).abs() < 1e-12);
        assert_eq!(euler_error_bound(0.0, 3.0, 2.0, 4, 1.0), 0.0);
        let b20 = euler_error_bound(1.3, 0.5, 0.7, 20, 2.0);
        let b40 = euler_error_bound(1.3, 0.5, 0.7, 40, 2.0);
        assert_eq!(b20, 2.0 * b40);
    }

    #[test]
    fn convergence_zero_field() {
        let zero = VectorField::new(1, 0.0, 0.0, |_| vec![0.0]).unwrap();
        let pts = vec![vec![1.0], vec![-2.0]];
        let report = verify_euler_convergence(&zero, &pts, 1.0, &[2, 4, 8], 1e-12).unwrap();
        assert!(report.rows.iter().all(|r| r.measured_error == 0.0));
        assert_eq!(report.slope, None);
    }

    #[test]
    fn misdeclared_lipschitz_is_caught() {
        let too_small = VectorField::new(1, 0.1, 0.0, |x| vec![-3.0 * x[0]]).unwrap();
        let pts = vec![vec![1.0]];
        assert!(matches!(
            verify_euler_convergence(&too_small, &pts, 1.0, &[1, 2], 1e-12),
            Err(Error::BoundViolated { .. })
        ));
        assert!(too_small.spot_check(16, 2.0, 7).is_err());
        assert!(rotation().spot_check(64, 5.0, 7).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn n_list_validation() {
        let pts = vec![vec![1.0]];
        assert!(verify_euler_convergence(&decay(1), &pts, 1.0, &[8], 1e-10).is_err());
        assert!(verify_euler_convergence(&decay(1), &pts, 1.0, &[8, 8], 1e-10).is_err());
    }
}
