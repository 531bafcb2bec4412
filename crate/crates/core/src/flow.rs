//! ReLU networks for transport PDE solutions `u(T, x) = g(X^x_T)`: `n` Euler-step networks
//! composed with a network for `g`, with the step count chosen from the Euler error bound.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{points_matrix, NetworkFamilyBuilder, SamplePlan, WeightKappa};
use crate::net::{norm, Activation, Ann};
use crate::ode::{euler_error_bound, flow_operator_eval, FlowProblem};
use crate::ops::{compose_chain, euler_step_net};
use crate::problems::{FamilyConstants, FlowFamily};
use crate::stats::linear_fit;
use crate::{Error, Result};

pub const DEFAULT_N_CAP: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowBuildConfig {
    pub eps: f64,
    pub kappa: WeightKappa,
    /// Shared Lipschitz and growth constant; raised to the drift's Lipschitz constant if
    /// smaller.
    pub c: f64,
    /// `(discretization, network)` shares of `ε`.
    pub budget_split: (f64, f64),
    pub n_cap: usize,
    pub sample_plan: SamplePlan,
    pub reference_tol: f64,
}

impl Default for FlowBuildConfig {
    fn default() -> Self {
        FlowBuildConfig {
            eps: 0.1,
            kappa: WeightKappa::new(1.0).expect("κ = 1 is valid"),
            c: 1.0,
            budget_split: (0.5, 0.5),
            n_cap: DEFAULT_N_CAP,
            sample_plan: SamplePlan::default(),
            reference_tol: 1e-10,
        }
    }
}

impl FlowBuildConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.budget_split;
        if !(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0) || (a + b - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "budget split ({a}, {b}) must be two fractions in (0, 1) summing to 1"
            )));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::InvalidArgument(format!("ε must lie in (0, 1], got {}", self.eps)));
        }
        if self.n_cap == 0 {
            return Err(Error::InvalidArgument("n_cap must be ≥ 1".into()));
        }
        if !(self.c >= 0.0) || !(self.reference_tol > 0.0) {
            return Err(Error::InvalidArgument("need c ≥ 0 and a positive reference tolerance".into()));
        }
        if !(self.sample_plan.radius >= 0.0) {
            return Err(Error::InvalidArgument("sample radius must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// `sup_{0 ≤ v ≤ ρ} (1 + v)/(1 + v^κ)`: the worst ratio between the linear growth of the
/// Euler bound and the weight. Equal to 1 for `κ = 1`; for `κ > 1` the maximizer lies in
/// `(0, 1)`, where the ratio is unimodal.
pub fn growth_ratio_sup(kappa: f64, rho_max: f64) -> f64 {
    let ratio = |v: f64| (1.0 + v) / (1.0 + v.powf(kappa));
    if kappa <= 1.0 || rho_max <= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, rho_max.min(1.0));
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if ratio(m1) < ratio(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    ratio(0.5 * (lo + hi)).max(ratio(rho_max.min(1.0))).max(1.0)
}

/// Smallest `n ≤ n_cap` with
/// `g_lip · euler_error_bound(L, ‖f(0)‖, T, n, 0) · sup_{v ≤ ρ} (1+v)/(1+v^κ) ≤ ε_disc`,
/// which makes the weighted discretization error at most `ε_disc` on the ball of radius `ρ`.
#[allow(clippy::too_many_arguments)]
pub fn choose_step_count(
    lipschitz: f64,
    f0_norm: f64,
    horizon: f64,
    eps_disc: f64,
    g_lipschitz: f64,
    rho_max: f64,
    kappa: WeightKappa,
    n_cap: usize,
) -> Result<usize> {
    if !(eps_disc > 0.0) {
        return Err(Error::InvalidArgument(format!("ε_disc must be positive, got {eps_disc}")));
    }
    let slack = growth_ratio_sup(kappa.kappa(), rho_max);
    let total = |n: usize| g_lipschitz * euler_error_bound(lipschitz, f0_norm, horizon, n, 0.0) * slack;
    let per_step = total(1);
    if !per_step.is_finite() {
        return Err(Error::CapExceeded { cap: n_cap });
    }
    let guess = (per_step / eps_disc).ceil();
    if guess > n_cap as f64 + 1.0 {
        return Err(Error::CapExceeded { cap: n_cap });
    }
    let mut n = (guess as usize).max(1);
    while n > 1 && total(n - 1) <= eps_disc {
        n -= 1;
    }
    while total(n) > eps_disc {
        n += 1;
    }
    if n > n_cap {
        return Err(Error::CapExceeded { cap: n_cap });
    }
    Ok(n)
}

/// Sampled `sup_x |oracle(x) − net(x)| / (1 + ‖x‖^κ)` and where it is attained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSup {
    pub value: f64,
    pub argmax: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub x: Vec<f64>,
    pub oracle: f64,
    pub network: f64,
    pub weighted_error: f64,
}

fn evaluate_points(
    net: &Ann,
    act: &Activation,
    oracle: &(dyn Fn(&[f64]) -> Result<f64> + Sync),
    wk: WeightKappa,
    points: &[Vec<f64>],
) -> Result<Vec<PointRow>> {
    if net.output_dim() != 1 {
        return Err(Error::DimMismatch {
            expected: 1,
            got: net.output_dim(),
        });
    }
    let dim = net.input_dim();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            got: p.len(),
        });
    }
    let out = net.realize_batch(act, &points_matrix(points, dim))?;
    let truth: Vec<f64> = points.par_iter().map(|x| oracle(x)).collect::<Result<_>>()?;
    Ok(points
        .iter()
        .zip(truth)
        .zip(out.column(0))
        .map(|((x, t), &y)| PointRow {
            x: x.clone(),
            oracle: t,
            network: y,
            weighted_error: (t - y).abs() * wk.value(norm(x)),
        })
        .collect())
}

fn worst(rows: &[PointRow]) -> WeightedSup {
    let mut best: Option<&PointRow> = None;
    for r in rows {
        let better = match best {
            None => true,
            Some(b) => r.weighted_error.is_nan() && !b.weighted_error.is_nan() || r.weighted_error > b.weighted_error,
        };
        if better {
            best = Some(r);
        }
    }
    best.map(|r| WeightedSup {
        value: r.weighted_error,
        argmax: r.x.clone(),
    })
    .unwrap_or(WeightedSup {
        value: 0.0,
        argmax: Vec::new(),
    })
}

pub fn weighted_sup_error(
    net: &Ann,
    act: &Activation,
    oracle: &(dyn Fn(&[f64]) -> Result<f64> + Sync),
    wk: WeightKappa,
    plan: &SamplePlan,
) -> Result<WeightedSup> {
    let points = plan.points(net.input_dim());
    Ok(worst(&evaluate_points(net, act, oracle, wk, &points)?))
}

/// Exponents `(ε, d)` of the parameter bound for ReLU flow networks:
/// `1 + 2 r0 (κ+2)/(1 − ρκ)` and `8 + α + 2 r1 + 2 r0 (α(κ+1) + βκ)/(1 − ρκ)`.
pub fn relu_flow_exponents(k: &FamilyConstants, kappa: f64) -> (f64, f64) {
    let denom = 1.0 - k.rho * kappa;
    (
        1.0 + 2.0 * k.r0 * (kappa + 2.0) / denom,
        8.0 + k.alpha + 2.0 * k.r1 + 2.0 * k.r0 * (k.alpha * (kappa + 1.0) + k.beta * kappa) / denom,
    )
}

/// General exponents `R_0 = 1 + 2 r0 (κ+2)/(1−ρ)` and
/// `R_k = α_k + 2 r_k + 8 ι_k + 2 r0 (α_k(κ+1) + β_k)/(1−ρ)`, where `ρ` and `β` are the rates of
/// `H^κ`.
pub fn flow_rate_exponents(
    r0: f64,
    r: &[f64],
    alpha: &[f64],
    beta: &[f64],
    iota: &[f64],
    rho: f64,
    kappa: f64,
) -> Vec<f64> {
    let denom = 1.0 - rho;
    let mut out = vec![1.0 + 2.0 * r0 * (kappa + 2.0) / denom];
    for l in 0..r.len() {
        out.push(alpha[l] + 2.0 * r[l] + 8.0 * iota[l] + 2.0 * r0 * (alpha[l] * (kappa + 1.0) + beta[l]) / denom);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowBuildReport {
    pub dim: usize,
    pub horizon: f64,
    pub eps: f64,
    pub eps_disc: f64,
    pub eps_net: f64,
    /// Accuracy requested from the drift builder.
    pub eps_f: f64,
    pub n_chosen: usize,
    #[serde(skip)]
    pub network: Option<Ann>,
    pub params: u64,
    /// `2 Σ P_k P_{k+1}` over the chain `g, E, …, E`; the count itself for a lone `g`.
    pub param_bound: u128,
    /// Declared `(ε, d)` exponents of the parameter bound.
    pub rate_exponents: (f64, f64),
    pub measured_weighted_error: f64,
    pub argmax: Vec<f64>,
    pub pass: bool,
    pub per_point: Vec<PointRow>,
}

/// Builds `g • E • … • E` (`n` Euler-step networks of size `T/n`) and measures its weighted
/// error against the flow oracle on the sample plan.
pub fn build_flow_network(
    f_builder: &NetworkFamilyBuilder,
    g_builder: &NetworkFamilyBuilder,
    problem: &FlowProblem,
    constants: &FamilyConstants,
    cfg: &FlowBuildConfig,
) -> Result<FlowBuildReport> {
    cfg.validate()?;
    let d = problem.dim();
    let t = problem.horizon;
    let eps_disc = cfg.eps * cfg.budget_split.0;
    let eps_net = cfg.eps * cfg.budget_split.1;
    let kappa = cfg.kappa.kappa();
    let g = g_builder.build(&[d], eps_net / 2.0)?;
    if g.input_dim() != d || g.output_dim() != 1 {
        return Err(Error::DimMismatch {
            expected: d,
            got: g.input_dim(),
        });
    }
    let field = &problem.field;
    let (n, eps_f, network, bound) = if t == 0.0 {
        let p = g.param_count() as u128;
        (0, 0.0, g, p)
    } else {
        let n = choose_step_count(
            field.lipschitz,
            field.f0_norm,
            t,
            eps_disc,
            problem.g_lipschitz,
            cfg.sample_plan.radius,
            cfg.kappa,
            cfg.n_cap,
        )?;
        let c = cfg.c.max(field.lipschitz);
        let eps_f = eps_net / (2.0 * n as f64 * (c * t * (1.0 + kappa)).exp() * t.max(1.0));
        let f = f_builder.build(&[d], eps_f)?;
        if f.input_dim() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: f.input_dim(),
            });
        }
        let step = euler_step_net(&f, t / n as f64, &f_builder.activation)?;
        let mut chain: Vec<&Ann> = Vec::with_capacity(n + 1);
        chain.push(&g);
        chain.extend(std::iter::repeat_n(&step, n));
        let (net, report) = compose_chain(&chain)?;
        (n, eps_f, net, report.upper_bound.unwrap_or(report.exact_param_count as u128))
    };
    network.require_finite()?;
    let tol = cfg.reference_tol;
    let oracle = |x: &[f64]| flow_operator_eval(problem, x, tol);
    let per_point = evaluate_points(
        &network,
        &g_builder.activation,
        &oracle,
        cfg.kappa,
        &cfg.sample_plan.points(d),
    )?;
    let sup = worst(&per_point);
    Ok(FlowBuildReport {
        dim: d,
        horizon: t,
        eps: cfg.eps,
        eps_disc,
        eps_net,
        eps_f,
        n_chosen: n,
        params: network.param_count(),
        network: Some(network),
        param_bound: bound,
        rate_exponents: relu_flow_exponents(constants, kappa),
        measured_weighted_error: sup.value,
        argmax: sup.argmax,
        pass: sup.value <= cfg.eps,
        per_point,
    })
}

/// [`build_flow_network`] for a built-in family at dimension `d`.
pub fn build_family(family: &FlowFamily, d: usize, cfg: &FlowBuildConfig) -> Result<FlowBuildReport> {
    build_flow_network(
        &family.f_builder(),
        &family.g_builder(),
        &family.problem(d)?,
        &family.constants(),
        cfg,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: usize,
    pub eps: f64,
    pub n: usize,
    pub params: u64,
    pub param_bound: u128,
    pub weighted_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub const CSV_HEADER: &'static str = "d,eps,n,params,param_bound,weighted_error,pass";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:e},{}\n",
                r.d, r.eps, r.n, r.params, r.param_bound, r.weighted_error, r.pass
            ));
        }
        out
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// One flow build per `(d, ε)` cell, in parallel; rows are sorted by `(d, ε)`.
pub fn sweep(family: &FlowFamily, d_list: &[usize], eps_list: &[f64], cfg: &FlowBuildConfig) -> Result<SweepTable> {
    if d_list.is_empty() || eps_list.is_empty() {
        return Err(Error::InvalidArgument("sweep needs nonempty d and ε lists".into()));
    }
    let mut cells: Vec<(usize, f64)> = d_list
        .iter()
        .flat_map(|&d| eps_list.iter().map(move |&e| (d, e)))
        .collect();
    cells.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    cells.dedup();
    let rows = cells
        .par_iter()
        .map(|&(d, eps)| {
            let cell_cfg = FlowBuildConfig { eps, ..cfg.clone() };
            let rep = build_family(family, d, &cell_cfg)?;
            Ok(SweepRow {
                d,
                eps,
                n: rep.n_chosen,
                params: rep.params,
                param_bound: rep.param_bound,
                weighted_error: rep.measured_weighted_error,
                pass: rep.pass,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { rows })
}

/// Log-log slopes of the parameter count against `1/ε` (at fixed `d`) and against `d` (at
/// fixed `ε`). With several slices the largest slope and the smallest `R²` are reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub eps_exponent: f64,
    pub eps_r_squared: f64,
    pub d_exponent: f64,
    pub d_r_squared: f64,
}

fn distinct_sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    v.dedup();
    v
}

pub fn fit_scaling_exponents(rows: &[SweepRow]) -> Result<ScalingFit> {
    let ds = distinct_sorted(rows.iter().map(|r| r.d as f64).collect());
    let es = distinct_sorted(rows.iter().map(|r| r.eps).collect());
    if ds.len() < 3 || es.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need ≥ 3 distinct values per axis, got {} dimensions and {} accuracies",
            ds.len(),
            es.len()
        )));
    }
    let slices = |key: &dyn Fn(&SweepRow) -> f64, x: &dyn Fn(&SweepRow) -> f64, keys: &[f64]| -> Result<(f64, f64)> {
        let mut slope = f64::NEG_INFINITY;
        let mut r2 = f64::INFINITY;
        for &k in keys {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| key(r) == k)
                .map(|r| (x(r), (r.params as f64).ln()))
                .collect();
            if pts.len() < 3 {
                continue;
            }
            let fit = linear_fit(&pts)?;
            slope = slope.max(fit.slope);
            r2 = r2.min(fit.r_squared);
        }
        if slope == f64::NEG_INFINITY {
            return Err(Error::DegenerateFit("no slice has three points".into()));
        }
        Ok((slope, r2))
    };
    let (eps_exponent, eps_r_squared) = slices(&|r| r.d as f64, &|r| (1.0 / r.eps).ln(), &ds)?;
    let (d_exponent, d_r_squared) = slices(&|r| r.eps, &|r| (r.d as f64).ln(), &es)?;
    Ok(ScalingFit {
        eps_exponent,
        eps_r_squared,
        d_exponent,
        d_r_squared,
    })
}
