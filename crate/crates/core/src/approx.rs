//! Function families over finite index grids, sampled membership certificates for
//! approximation spaces, and the closure combinators that build new network families from
//! old ones (linear combinations, limits, compositions, Euler steps).
//!
//! An index is a tuple of nonnegative integers, usually `(d)` or `(d, n)`. Membership is the
//! statement that for every index `i` and accuracy `ε ∈ (0, 1]` there is a network with at
//! most `K ε^{-r0} Π 𝔡_l(i)^{r_l}` parameters whose weighted error `𝔴(‖x‖)‖f_i(x) − net(x)‖`
//! is at most `ε` everywhere. Here "everywhere" is replaced by a [`SamplePlan`] and "every
//! index and accuracy" by the grid handed to [`check_membership`].

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::net::{norm, Activation, Ann};
use crate::ops::{compose_chain, euler_step_net, linear_combination};
use crate::{Error, Result};

pub type DimensionMap = Arc<dyn Fn(&[usize]) -> Vec<usize> + Send + Sync>;
pub type IoMap = Arc<dyn Fn(&[usize]) -> (usize, usize) + Send + Sync>;
pub type PointFn = Arc<dyn Fn(&[usize], &[f64]) -> Vec<f64> + Send + Sync>;
pub type BuildFn = Arc<dyn Fn(&[usize], f64) -> Result<Ann> + Send + Sync>;
pub type EnvelopeFn = Arc<dyn Fn(&[usize], f64) -> EnvelopeValue + Send + Sync>;

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("accuracy must lie in (0, 1], got {eps}")))
    }
}

/// Finite index set with an `N`-fold dimension mapping and input/output dimensions.
#[derive(Clone)]
pub struct IndexGrid {
    indices: Vec<Vec<usize>>,
    dim_map: DimensionMap,
    io_map: IoMap,
    n_dims: usize,
}

impl fmt::Debug for IndexGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IndexGrid")
            .field("indices", &self.indices)
            .field("n_dims", &self.n_dims)
            .finish_non_exhaustive()
    }
}

impl IndexGrid {
    pub fn new(
        indices: Vec<Vec<usize>>,
        dim_map: impl Fn(&[usize]) -> Vec<usize> + Send + Sync + 'static,
        io_map: impl Fn(&[usize]) -> (usize, usize) + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::from_arcs(indices, Arc::new(dim_map), Arc::new(io_map))
    }

    fn from_arcs(indices: Vec<Vec<usize>>, dim_map: DimensionMap, io_map: IoMap) -> Result<Self> {
        let first = indices
            .first()
            .ok_or_else(|| Error::InvalidArgument("index grid is empty".into()))?;
        let n_dims = dim_map(first).len();
        for i in &indices {
            let dims = dim_map(i);
            if dims.len() != n_dims || dims.iter().any(|&d| d == 0) {
                return Err(Error::InvalidArgument(format!(
                    "dimension map at {i:?} gave {dims:?}; expected {n_dims} positive entries"
                )));
            }
            let (input, output) = io_map(i);
            if input == 0 || output == 0 {
                return Err(Error::InvalidArgument(format!("zero io dimension at {i:?}")));
            }
        }
        Ok(IndexGrid {
            indices,
            dim_map,
            io_map,
            n_dims,
        })
    }

    /// Grid `{(d) : d ∈ ds}` with `𝔡(d) = (d)` and io dimensions `io(d)`.
    pub fn dimensions(ds: &[usize], io: impl Fn(usize) -> (usize, usize) + Send + Sync + 'static) -> Result<Self> {
        Self::new(
            ds.iter().map(|&d| vec![d]).collect(),
            |i: &[usize]| vec![i[0]],
            move |i: &[usize]| io(i[0]),
        )
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn dims(&self, index: &[usize]) -> Vec<usize> {
        (self.dim_map)(index)
    }

    pub fn io(&self, index: &[usize]) -> (usize, usize) {
        (self.io_map)(index)
    }

    /// Length `N` of the dimension vectors.
    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn dim_map(&self) -> DimensionMap {
        self.dim_map.clone()
    }

    /// Grid over `(i, v)` for `v ∈ values`, keeping the dims and io of `i`.
    pub fn extend_index(&self, values: &[usize]) -> Result<IndexGrid> {
        let indices = self
            .indices
            .iter()
            .flat_map(|i| {
                values.iter().map(move |&v| {
                    let mut j = i.clone();
                    j.push(v);
                    j
                })
            })
            .collect();
        let (dm, io) = (self.dim_map.clone(), self.io_map.clone());
        Self::from_arcs(
            indices,
            Arc::new(move |j: &[usize]| dm(&j[..j.len() - 1])),
            Arc::new(move |j: &[usize]| io(&j[..j.len() - 1])),
        )
    }

    /// Grid over `(i, j)` with dimension map `𝔡 ⊗ 𝖽`; io dimensions are taken from `self`.
    ///
    /// Every index of `self` must have the same length.
    pub fn product(&self, other: &IndexGrid) -> Result<IndexGrid> {
        let arity = self.indices[0].len();
        if self.indices.iter().any(|i| i.len() != arity) {
            return Err(Error::InvalidArgument("product needs indices of equal length".into()));
        }
        let indices = self
            .indices
            .iter()
            .flat_map(|i| {
                other.indices.iter().map(move |j| {
                    let mut k = i.clone();
                    k.extend_from_slice(j);
                    k
                })
            })
            .collect();
        let io = self.io_map.clone();
        Self::from_arcs(
            indices,
            product_dim_map(self.dim_map.clone(), arity, other.dim_map.clone()),
            Arc::new(move |k: &[usize]| io(&k[..arity])),
        )
    }
}

/// `(𝔡 ⊗ 𝖽)(i, j) = (𝔡(i), 𝖽(j))`, where `i` is the first `arity` index entries.
pub fn product_dim_map(first: DimensionMap, arity: usize, second: DimensionMap) -> DimensionMap {
    Arc::new(move |k: &[usize]| {
        let mut dims = first(&k[..arity]);
        dims.extend(second(&k[arity..]));
        dims
    })
}

/// `f = (f_i)_i` with `f_i: ℝ^{ℑ(i)} → ℝ^{𝔒(i)}`.
#[derive(Clone)]
pub struct FunctionFamily {
    eval: PointFn,
}

impl fmt::Debug for FunctionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FunctionFamily(..)")
    }
}

impl FunctionFamily {
    pub fn new(eval: impl Fn(&[usize], &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        FunctionFamily { eval: Arc::new(eval) }
    }

    pub fn eval(&self, index: &[usize], x: &[f64]) -> Vec<f64> {
        (self.eval)(index, x)
    }

    /// The family realized by a network builder at a fixed accuracy.
    pub fn from_builder(builder: &NetworkFamilyBuilder, eps: f64) -> Self {
        let b = builder.clone();
        FunctionFamily::new(move |i, x| {
            b.build(i, eps)
                .and_then(|net| net.realize(&b.activation, x))
                .unwrap_or_else(|_| vec![f64::NAN])
        })
    }

    /// `outer ⊚ inner`: index-wise composition.
    pub fn compose(outer: &FunctionFamily, inner: &FunctionFamily) -> Self {
        let (o, n) = (outer.eval.clone(), inner.eval.clone());
        FunctionFamily::new(move |i, x| o(i, &n(i, x)))
    }

    /// `x ↦ x + (T/n) f_i(x)` over indices `(i, n)`.
    pub fn euler_step(f: &FunctionFamily, horizon: f64) -> Self {
        let f = f.eval.clone();
        FunctionFamily::new(move |k, x| {
            let (n, i) = k.split_last().expect("Euler indices end in the step count");
            let h = horizon / *n as f64;
            x.iter().zip(f(i, x)).map(|(a, b)| a + h * b).collect()
        })
    }
}

/// `⊠_j f^j`: the family indexed by `(i, j)` whose member is `f^j_i`.
#[derive(Debug, Clone)]
pub struct ProductFamily {
    parts: Vec<FunctionFamily>,
}

impl ProductFamily {
    /// Splits `(i, j)` into the factor `f^j` and the index `i`.
    pub fn lookup<'a>(&self, index: &'a [usize]) -> Option<(&FunctionFamily, &'a [usize])> {
        let (j, i) = index.split_last()?;
        self.parts.get(*j).map(|f| (f, i))
    }

    pub fn family(&self) -> FunctionFamily {
        let parts = self.parts.clone();
        FunctionFamily::new(move |k, x| {
            let (j, i) = k.split_last().expect("product indices are nonempty");
            parts[*j].eval(i, x)
        })
    }
}

pub fn product_family(families: Vec<FunctionFamily>) -> ProductFamily {
    ProductFamily { parts: families }
}

/// `𝒫 ≤ K ε^{-r0} Π 𝔡_l^{r_l}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthBudget {
    #[serde(rename = "K")]
    pub k: f64,
    pub r0: f64,
    pub r: Vec<f64>,
}

impl GrowthBudget {
    pub fn value(&self, eps: f64, dims: &[usize]) -> f64 {
        self.k * eps.powf(-self.r0) * dim_product(dims, &self.r)
    }

    /// The smallest `K` this row would need.
    pub fn required_k(&self, params: u64, eps: f64, dims: &[usize]) -> f64 {
        params as f64 * eps.powf(self.r0) / dim_product(dims, &self.r)
    }
}

fn dim_product(dims: &[usize], exponents: &[f64]) -> f64 {
    dims.iter()
        .zip(exponents)
        .map(|(&d, &e)| (d as f64).powf(e))
        .product()
}

/// `𝔴(v) = (1 + v^κ)^{-1}` with `κ ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightKappa {
    kappa: f64,
}

impl WeightKappa {
    pub fn new(kappa: f64) -> Result<Self> {
        if kappa >= 1.0 && kappa.is_finite() {
            Ok(WeightKappa { kappa })
        } else {
            Err(Error::InvalidArgument(format!("κ must be a finite number ≥ 1, got {kappa}")))
        }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn value(&self, v: f64) -> f64 {
        weight_value(*self, v)
    }
}

pub fn weight_value(wk: WeightKappa, v: f64) -> f64 {
    1.0 / (1.0 + v.powf(wk.kappa))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnvelopeValue {
    Finite(f64),
    Unbounded,
}

/// Linear-growth envelope `‖net(x)‖ ≤ G (H + ‖x‖)` of a network family.
#[derive(Clone)]
pub struct GrowthEnvelope {
    g: EnvelopeFn,
    h: EnvelopeFn,
    /// Declared ε-rate of `H^κ`.
    pub rho: f64,
    /// Declared dimension exponents of `H^κ`.
    pub beta: Vec<f64>,
}

impl fmt::Debug for GrowthEnvelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrowthEnvelope")
            .field("rho", &self.rho)
            .field("beta", &self.beta)
            .finish_non_exhaustive()
    }
}

impl GrowthEnvelope {
    pub fn new(
        g: impl Fn(&[usize], f64) -> EnvelopeValue + Send + Sync + 'static,
        h: impl Fn(&[usize], f64) -> EnvelopeValue + Send + Sync + 'static,
        rho: f64,
        beta: Vec<f64>,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidArgument(format!("ρ must lie in [0, 1), got {rho}")));
        }
        Ok(GrowthEnvelope {
            g: Arc::new(g),
            h: Arc::new(h),
            rho,
            beta,
        })
    }

    /// Constant `G` and `H`, with `ρ = 0` and `β = 0`.
    pub fn constant(g: f64, h: f64, n_dims: usize) -> Self {
        GrowthEnvelope {
            g: Arc::new(move |_, _| EnvelopeValue::Finite(g)),
            h: Arc::new(move |_, _| EnvelopeValue::Finite(h)),
            rho: 0.0,
            beta: vec![0.0; n_dims],
        }
    }

    pub fn unbounded(n_dims: usize) -> Self {
        GrowthEnvelope {
            g: Arc::new(|_, _| EnvelopeValue::Unbounded),
            h: Arc::new(|_, _| EnvelopeValue::Unbounded),
            rho: 0.0,
            beta: vec![0.0; n_dims],
        }
    }

    pub fn g(&self, index: &[usize], eps: f64) -> EnvelopeValue {
        (self.g)(index, eps)
    }

    pub fn h(&self, index: &[usize], eps: f64) -> EnvelopeValue {
        (self.h)(index, eps)
    }

    /// `(G, H)` when both are finite.
    pub fn at(&self, index: &[usize], eps: f64) -> Option<(f64, f64)> {
        match (self.g(index, eps), self.h(index, eps)) {
            (EnvelopeValue::Finite(g), EnvelopeValue::Finite(h)) => Some((g, h)),
            _ => None,
        }
    }
}

/// Constructive witness of membership: `(i, ε) ↦ network`.
#[derive(Clone)]
pub struct NetworkFamilyBuilder {
    build: BuildFn,
    pub activation: Activation,
    pub envelope: Option<GrowthEnvelope>,
}

impl fmt::Debug for NetworkFamilyBuilder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NetworkFamilyBuilder")
            .field("activation", &self.activation)
            .field("envelope", &self.envelope)
            .finish_non_exhaustive()
    }
}

impl NetworkFamilyBuilder {
    pub fn new(
        activation: Activation,
        build: impl Fn(&[usize], f64) -> Result<Ann> + Send + Sync + 'static,
    ) -> Self {
        NetworkFamilyBuilder {
            build: Arc::new(build),
            activation,
            envelope: None,
        }
    }

    pub fn with_envelope(mut self, envelope: GrowthEnvelope) -> Self {
        self.envelope = Some(envelope);
        self
    }

    pub fn build(&self, index: &[usize], eps: f64) -> Result<Ann> {
        check_eps(eps)?;
        (self.build)(index, eps)
    }
}

/// Finite stand-in for `sup_{x ∈ ℝ^d}`: the origin, points along `±e_k` and `±(1,…,1)/√d`
/// at `radial_steps` equally spaced radii up to `radius`, and `random_points` points drawn
/// uniformly from the ball of that radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub radius: f64,
    pub radial_steps: usize,
    pub random_points: usize,
    pub seed: u64,
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan {
            radius: 10.0,
            radial_steps: 8,
            random_points: 512,
            seed: 0,
        }
    }
}

impl SamplePlan {
    pub fn points(&self, dim: usize) -> Vec<Vec<f64>> {
        let mut pts = vec![vec![0.0; dim]];
        let radii: Vec<f64> = (1..=self.radial_steps)
            .map(|s| self.radius * s as f64 / self.radial_steps as f64)
            .collect();
        let mut directions: Vec<Vec<f64>> = Vec::with_capacity(2 * dim + 2);
        for k in 0..dim {
            for sign in [1.0, -1.0] {
                let mut e = vec![0.0; dim];
                e[k] = sign;
                directions.push(e);
            }
        }
        if dim > 1 {
            let c = 1.0 / (dim as f64).sqrt();
            directions.push(vec![c; dim]);
            directions.push(vec![-c; dim]);
        }
        for dir in &directions {
            for &r in &radii {
                pts.push(dir.iter().map(|v| v * r).collect());
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed ^ (dim as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        for _ in 0..self.random_points {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let len = norm(&v);
            let u: f64 = rng.random();
            let r = self.radius * u.powf(1.0 / dim as f64);
            let scale = if len > 0.0 { r / len } else { 0.0 };
            v.iter_mut().for_each(|c| *c *= scale);
            pts.push(v);
        }
        pts
    }
}

pub(crate) fn points_matrix(points: &[Vec<f64>], dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), dim), |(r, c)| points[r][c])
}

/// Maximum of `𝔴(‖x‖)‖target(x) − net(x)‖` over `points`, with the index of the maximizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedError {
    pub value: f64,
    pub argmax: usize,
}

fn weighted_max(errors: impl Iterator<Item = f64>) -> WeightedError {
    let mut best = WeightedError {
        value: 0.0,
        argmax: 0,
    };
    for (k, e) in errors.enumerate() {
        if e.is_nan() {
            // a NaN poisons the maximum so that every comparison against it fails
            return WeightedError { value: e, argmax: k };
        }
        if e > best.value {
            best = WeightedError { value: e, argmax: k };
        }
    }
    best
}

/// Row of a membership certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertRow {
    pub index: Vec<usize>,
    pub eps: f64,
    pub params: u64,
    pub budget: f64,
    pub weighted_error: f64,
    /// `None` when no envelope was declared or a value was unbounded.
    pub growth_ok: Option<bool>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    #[serde(rename = "fitted_K")]
    pub fitted_k: f64,
    pub pass: bool,
    pub worst_error: f64,
    pub rows: Vec<CertRow>,
    pub sample_plan: SamplePlan,
    pub seed: u64,
    /// Always `"sampled"`: the suprema were taken over the sample plan only.
    pub surrogate: String,
}

impl CertReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// Empirical check of the three membership clauses on every `(index, ε)` of the grid.
pub fn check_membership(
    builder: &NetworkFamilyBuilder,
    family: &FunctionFamily,
    budget: &GrowthBudget,
    wk: WeightKappa,
    grid: &IndexGrid,
    eps_list: &[f64],
    plan: &SamplePlan,
) -> Result<CertReport> {
    if eps_list.is_empty() {
        return Err(Error::InvalidArgument("accuracy list is empty".into()));
    }
    for &eps in eps_list {
        check_eps(eps)?;
    }
    if budget.r.len() != grid.n_dims() {
        return Err(Error::InvalidArgument(format!(
            "budget has {} dimension exponents, grid has {}",
            budget.r.len(),
            grid.n_dims()
        )));
    }
    let mut cells: Vec<(Vec<usize>, f64)> = grid
        .indices()
        .iter()
        .flat_map(|i| eps_list.iter().map(move |&e| (i.clone(), e)))
        .collect();
    cells.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
    cells.dedup();

    let rows: Vec<(CertRow, f64)> = cells
        .par_iter()
        .map(|(index, eps)| certify_cell(builder, family, budget, wk, grid, index, *eps, plan))
        .collect::<Result<_>>()?;

    let fitted_k = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let rows: Vec<CertRow> = rows.into_iter().map(|r| r.0).collect();
    let worst_error = weighted_max(rows.iter().map(|r| r.weighted_error)).value;
    Ok(CertReport {
        fitted_k,
        pass: rows.iter().all(|r| r.pass),
        worst_error,
        rows,
        sample_plan: *plan,
        seed: plan.seed,
        surrogate: "sampled".into(),
    })
}

#[allow(clippy::too_many_arguments)]
fn certify_cell(
    builder: &NetworkFamilyBuilder,
    family: &FunctionFamily,
    budget: &GrowthBudget,
    wk: WeightKappa,
    grid: &IndexGrid,
    index: &[usize],
    eps: f64,
    plan: &SamplePlan,
) -> Result<(CertRow, f64)> {
    let (input, output) = grid.io(index);
    let net = builder.build(index, eps)?;
    if net.input_dim() != input {
        return Err(Error::DimMismatch {
            expected: input,
            got: net.input_dim(),
        });
    }
    if net.output_dim() != output {
        return Err(Error::DimMismatch {
            expected: output,
            got: net.output_dim(),
        });
    }
    net.require_finite()?;
    let points = plan.points(input);
    let out = net.realize_batch(&builder.activation, &points_matrix(&points, input))?;
    let bound = builder.envelope.as_ref().and_then(|e| e.at(index, eps));
    let mut errors = Vec::with_capacity(points.len());
    let mut growth_ok = bound.map(|_| true);
    for (x, y) in points.iter().zip(out.rows()) {
        let target = family.eval(index, x);
        if target.len() != output {
            return Err(Error::DimMismatch {
                expected: output,
                got: target.len(),
            });
        }
        let y = y.to_vec();
        let diff: Vec<f64> = target.iter().zip(&y).map(|(a, b)| a - b).collect();
        let xn = norm(x);
        errors.push(wk.value(xn) * norm(&diff));
        if let Some((g, h)) = bound {
            if !(norm(&y) <= g * (h + xn) * (1.0 + 1e-12) + 1e-12) {
                growth_ok = Some(false);
            }
        }
    }
    let weighted_error = weighted_max(errors.into_iter()).value;
    let dims = grid.dims(index);
    let params = net.param_count();
    let budget_value = budget.value(eps, &dims);
    let pass = params as f64 <= budget_value && weighted_error <= eps && growth_ok != Some(false);
    Ok((
        CertRow {
            index: index.to_vec(),
            eps,
            params,
            budget: budget_value,
            weighted_error,
            growth_ok,
            pass,
        },
        budget.required_k(params, eps, &dims),
    ))
}

fn require_sum_activation(act: &Activation) -> Result<()> {
    act.identity_width_factor()
        .map(|_| ())
        .ok_or(Error::UnsupportedActivation)
}

/// `λ f + g`, with `f` built at `ε / (2 max{|λ|, 1})` and `g` at `ε / 2`.
pub fn combinator_linear(
    bf: &NetworkFamilyBuilder,
    bg: &NetworkFamilyBuilder,
    lambda: f64,
    act: &Activation,
) -> Result<NetworkFamilyBuilder> {
    require_sum_activation(act)?;
    let (bf, bg) = (bf.clone(), bg.clone());
    let inner = act.clone();
    Ok(NetworkFamilyBuilder::new(act.clone(), move |i, eps| {
        let f = bf.build(i, eps / (2.0 * lambda.abs().max(1.0)))?;
        let g = bg.build(i, eps / 2.0)?;
        Ok(linear_combination(lambda, &f, 1.0, &g, &inner)?.0)
    }))
}

/// Smallest `n ∈ ℕ` with `n ≥ (D δ^{-1} Π 𝔡_l^{α_l})^{1/R}`, i.e. with
/// `D n^{-R} Π 𝔡_l^{α_l} ≤ δ`.
pub fn limit_step_count(d_const: f64, rate: f64, alpha: &[f64], dims: &[usize], delta: f64) -> Result<usize> {
    if !(rate > 0.0) {
        return Err(Error::NonpositiveR(rate));
    }
    if !(d_const >= 0.0) || !(delta > 0.0) {
        return Err(Error::InvalidArgument("need D ≥ 0 and δ > 0".into()));
    }
    let scale = d_const * dim_product(dims, alpha);
    let q = (scale / delta).powf(1.0 / rate);
    const CAP: f64 = 9.007_199_254_740_992e15;
    if !(q <= CAP) {
        return Err(Error::CapExceeded { cap: CAP as usize });
    }
    let holds = |n: usize| scale * (n as f64).powf(-rate) <= delta;
    let mut n = (q.ceil() as usize).max(1);
    // the power above may round either way; settle on the exact minimum
    while n > 1 && holds(n - 1) {
        n -= 1;
    }
    while !holds(n) {
        n += 1;
    }
    Ok(n)
}

/// Network family for the limit `g` of families `f_{·,n}` whose weighted deviation from `g`
/// is at most `D n^{-R} Π 𝔡_l^{α_l}`: at `(i, δ)` it builds `f_{·,𝔫}` at accuracy `δ/2`,
/// where `𝔫` is [`limit_step_count`] at `δ/2`.
pub fn combinator_limit(
    builders_by_n: impl Fn(usize) -> NetworkFamilyBuilder + Send + Sync + 'static,
    dim_map: DimensionMap,
    d_const: f64,
    rate: f64,
    alpha: Vec<f64>,
    act: &Activation,
) -> Result<NetworkFamilyBuilder> {
    if !(rate > 0.0) {
        return Err(Error::NonpositiveR(rate));
    }
    Ok(NetworkFamilyBuilder::new(act.clone(), move |i, delta| {
        let n = limit_step_count(d_const, rate, &alpha, &dim_map(i), delta / 2.0)?;
        builders_by_n(n).build(i, delta / 2.0)
    }))
}

/// Declared rates of a network family: `𝒫 ≤ K ε^{-r0} Π 𝔡^{r}` and weighted error
/// `≤ K ε^{R} Π 𝔡^{α}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateDeclaration {
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "R")]
    pub rate: f64,
    pub alpha: Vec<f64>,
    pub r0: f64,
    pub r: Vec<f64>,
}

impl RateDeclaration {
    /// Membership exponents `(r0/R, r_l + r0 α_l / R)`.
    pub fn implied_exponents(&self) -> Result<(f64, Vec<f64>)> {
        if !(self.rate > 0.0) {
            return Err(Error::NonpositiveR(self.rate));
        }
        let r = self
            .r
            .iter()
            .zip(&self.alpha)
            .map(|(r, a)| r + self.r0 * a / self.rate)
            .collect();
        Ok((self.r0 / self.rate, r))
    }
}

/// Turns a family with a polynomial error rate into an approximation-space witness and
/// certifies it against the implied exponents with constant `budget_k`.
///
/// The witness at `(i, δ)` is the declared family at accuracy `1/𝔫`, with `𝔫` chosen by
/// [`limit_step_count`] using `D = K`.
#[allow(clippy::too_many_arguments)]
pub fn certify_from_rate(
    builder: &NetworkFamilyBuilder,
    rate: &RateDeclaration,
    family: &FunctionFamily,
    budget_k: f64,
    wk: WeightKappa,
    grid: &IndexGrid,
    eps_list: &[f64],
    plan: &SamplePlan,
) -> Result<CertReport> {
    let witness = rate_witness(builder, rate, grid.dim_map())?;
    let (r0, r) = rate.implied_exponents()?;
    let budget = GrowthBudget { k: budget_k, r0, r };
    check_membership(&witness, family, &budget, wk, grid, eps_list, plan)
}

/// The witness family used by [`certify_from_rate`].
pub fn rate_witness(
    builder: &NetworkFamilyBuilder,
    rate: &RateDeclaration,
    dim_map: DimensionMap,
) -> Result<NetworkFamilyBuilder> {
    let base = builder.clone();
    let act = builder.activation.clone();
    combinator_limit(
        move |n| {
            let b = base.clone();
            NetworkFamilyBuilder::new(b.activation.clone(), move |i, _| b.build(i, 1.0 / n as f64))
        },
        dim_map,
        rate.k,
        rate.rate,
        rate.alpha.clone(),
        &act,
    )
}

/// Composition of network families, applied first to last, every factor built at the
/// same accuracy.
#[derive(Debug, Clone)]
pub struct ChainBuilder {
    pub builder: NetworkFamilyBuilder,
    factors: Vec<NetworkFamilyBuilder>,
    lipschitz: Vec<f64>,
    wk: WeightKappa,
}

impl ChainBuilder {
    /// Telescoping error prediction at a point of norm `x_norm`:
    /// `ε Σ_k (1 + B_k^κ) Π_{l>k} L_l`, with `B_k` the envelope bound on the input norm of
    /// factor `k`. Infinite when some envelope is missing or unbounded.
    pub fn predicted_error(&self, index: &[usize], eps: f64, x_norm: f64) -> f64 {
        let n = self.factors.len();
        let mut total = 0.0;
        let mut reach = x_norm;
        for k in 0..n {
            let after: f64 = self.lipschitz[k..].iter().product();
            total += (1.0 + reach.powf(self.wk.kappa())) * after;
            if k + 1 < n {
                match self.factors[k].envelope.as_ref().and_then(|e| e.at(index, eps)) {
                    Some((g, h)) => reach = g * (h + reach),
                    None => return f64::INFINITY,
                }
            }
        }
        eps * total
    }
}

/// `Σ_k (Π_{l>k} L_l) e_k`, the first line of the telescoping estimate, from the measured
/// error `e_k` of factor `k` at its actual input.
pub fn telescoping_bound(lipschitz_after_first: &[f64], factor_errors: &[f64]) -> f64 {
    factor_errors
        .iter()
        .enumerate()
        .map(|(k, e)| e * lipschitz_after_first[k..].iter().product::<f64>())
        .sum()
}

/// `f^n ⊚ … ⊚ f^1` as one network family. `lipschitz[k]` is the Lipschitz constant of the
/// target `f^{k+2}`, i.e. of every factor applied after the first.
pub fn combinator_compose_chain(
    factors: &[NetworkFamilyBuilder],
    lipschitz: &[f64],
    wk: WeightKappa,
    act: &Activation,
) -> Result<ChainBuilder> {
    if factors.is_empty() {
        return Err(Error::EmptyChain);
    }
    if lipschitz.len() + 1 < factors.len() {
        return Err(Error::MissingLipschitz {
            factor: lipschitz.len() + 2,
        });
    }
    let lipschitz = lipschitz[..factors.len() - 1].to_vec();
    let owned = factors.to_vec();
    let builder = NetworkFamilyBuilder::new(act.clone(), move |i, eps| {
        let nets = owned
            .iter()
            .rev()
            .map(|b| b.build(i, eps))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Ann> = nets.iter().collect();
        Ok(compose_chain(&refs)?.0)
    });
    Ok(ChainBuilder {
        builder,
        factors: factors.to_vec(),
        lipschitz,
        wk,
    })
}

/// Euler-step networks `x ↦ x + (T/n) f_i(x)` over indices `(i, n)`, with `f` built at
/// `ε / max{T, 1}`. The envelope becomes `G = 1 + cT/n`, `H = H_{i, ε/max{T,1}}`.
pub fn combinator_euler_family(
    bf: &NetworkFamilyBuilder,
    horizon: f64,
    c: f64,
) -> Result<NetworkFamilyBuilder> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    require_sum_activation(&bf.activation)?;
    let scale = horizon.max(1.0);
    let base = bf.clone();
    let act = bf.activation.clone();
    let mut out = NetworkFamilyBuilder::new(act.clone(), move |k, eps| {
        let (n, i) = split_step(k)?;
        let f = base.build(i, eps / scale)?;
        euler_step_net(&f, horizon / n as f64, &act)
    });
    let (rho, beta, h_src) = match &bf.envelope {
        Some(e) => (e.rho, e.beta.clone(), Some(e.clone())),
        None => (0.0, Vec::new(), None),
    };
    out.envelope = Some(GrowthEnvelope {
        g: Arc::new(move |k, _| match split_step(k) {
            Ok((n, _)) => EnvelopeValue::Finite(1.0 + c * horizon / n as f64),
            Err(_) => EnvelopeValue::Unbounded,
        }),
        h: Arc::new(move |k, eps| match (&h_src, k.split_last()) {
            (Some(e), Some((_, i))) => e.h(i, eps / scale),
            _ => EnvelopeValue::Unbounded,
        }),
        rho,
        beta,
    });
    Ok(out)
}

fn split_step(k: &[usize]) -> Result<(usize, &[usize])> {
    match k.split_last() {
        Some((&n, i)) if n >= 1 => Ok((n, i)),
        _ => Err(Error::InvalidArgument(format!(
            "Euler family index {k:?} must end in a step count ≥ 1"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{affine_net, identity_net};
    use ndarray::{Array1, Array2};

    fn relu() -> Activation {
        Activation::Rectifier
    }

    fn small_plan() -> SamplePlan {
        SamplePlan {
            radius: 5.0,
            radial_steps: 4,
            random_points: 64,
            seed: 7,
        }
    }

    fn relu_sum_net(d: usize) -> Ann {
        Ann::from_pairs(vec![
            (Array2::eye(d), Array1::zeros(d)),
            (Array2::ones((1, d)), Array1::zeros(1)),
        ])
        .unwrap()
    }

    /// `x ↦ a x` on `ℝ^d`, built exactly.
    fn scaling(a: f64) -> NetworkFamilyBuilder {
        NetworkFamilyBuilder::new(relu(), move |i, _| {
            affine_net(Array2::eye(i[0]) * a, Array1::zeros(i[0]))
        })
    }

    /// `x ↦ a x + (ε/2) e_1`: a deliberate bias error of size `ε/2`.
    fn sloppy_scaling(a: f64) -> NetworkFamilyBuilder {
        NetworkFamilyBuilder::new(relu(), move |i, eps| {
            let mut b = Array1::zeros(i[0]);
            b[0] = eps / 2.0;
            affine_net(Array2::eye(i[0]) * a, b)
        })
    }

    fn scaling_family(a: f64) -> FunctionFamily {
        FunctionFamily::new(move |_, x| x.iter().map(|v| a * v).collect())
    }

    #[test]
    fn weights() {
        let one = WeightKappa::new(1.0).unwrap();
        assert_eq!(weight_value(one, 0.0), 1.0);
        assert_eq!(weight_value(one, 1.0), 0.5);
        let two = WeightKappa::new(2.0).unwrap();
        assert!((weight_value(two, 3.0) - 0.1).abs() < 1e-15);
        assert!(WeightKappa::new(0.5).is_err());
    }

    #[test]
    fn sample_plan_shape_and_determinism() {
        let plan = SamplePlan::default();
        let pts = plan.points(3);
        assert_eq!(pts.len(), 1 + 8 * 8 + 512);
        assert_eq!(pts, plan.points(3));
        assert!(pts.iter().all(|p| norm(p) <= 10.0 + 1e-12));
        assert_eq!(pts[0], vec![0.0; 3]);
        assert_eq!(plan.points(1).len(), 1 + 2 * 8 + 512);
    }

    #[test]
    fn zero_family_passes() {
        let grid = IndexGrid::dimensions(&[1, 2, 3], |d| (d, 1)).unwrap();
        let zero = NetworkFamilyBuilder::new(relu(), |i, _| {
            affine_net(Array2::zeros((1, i[0])), Array1::zeros(1))
        });
        let family = FunctionFamily::new(|_, _| vec![0.0]);
        let budget = GrowthBudget { k: 3.0, r0: 0.0, r: vec![1.0] };
        let wk = WeightKappa::new(1.0).unwrap();
        let rep = check_membership(&zero, &family, &budget, wk, &grid, &[1.0, 0.5, 0.1], &small_plan()).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.worst_error, 0.0);
        assert_eq!(rep.rows.len(), 9);
        // P = d + 1 against 3 d; d = 1 needs K = 2
        assert!((rep.fitted_k - 2.0).abs() < 1e-12);
    }

    #[test]
    fn negative_zeroth_rate_fails() {
        let grid = IndexGrid::dimensions(&[1], |d| (d, 1)).unwrap();
        let zero = NetworkFamilyBuilder::new(relu(), |i, _| {
            affine_net(Array2::zeros((1, i[0])), Array1::zeros(1))
        });
        let family = FunctionFamily::new(|_, _| vec![0.0]);
        let budget = GrowthBudget { k: 10.0, r0: -1.0, r: vec![0.0] };
        let wk = WeightKappa::new(1.0).unwrap();
        let rep = check_membership(&zero, &family, &budget, wk, &grid, &[0.5, 0.1], &small_plan()).unwrap();
        assert!(!rep.pass);
        assert!(rep.rows.iter().find(|r| r.eps == 0.1).map(|r| !r.pass).unwrap());
    }

    #[test]
    fn relu_sum_exact() {
        let grid = IndexGrid::dimensions(&[1, 2, 4, 8], |d| (d, 1)).unwrap();
        let b = NetworkFamilyBuilder::new(relu(), |i, _| Ok(relu_sum_net(i[0])));
        let family = FunctionFamily::new(|_, x| vec![x.iter().map(|v| v.max(0.0)).sum()]);
        let budget = GrowthBudget { k: 4.0, r0: 0.0, r: vec![2.0] };
        let wk = WeightKappa::new(1.0).unwrap();
        let rep = check_membership(&b, &family, &budget, wk, &grid, &[0.5, 0.05], &small_plan()).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.worst_error, 0.0);
        let again = check_membership(&b, &family, &budget, wk, &grid, &[0.5, 0.05], &small_plan()).unwrap();
        assert_eq!(rep, again);
    }

    #[test]
    fn membership_dim_mismatch() {
        let grid = IndexGrid::dimensions(&[2], |d| (d, 2)).unwrap();
        let b = NetworkFamilyBuilder::new(relu(), |i, _| Ok(relu_sum_net(i[0])));
        let family = FunctionFamily::new(|_, x| x.to_vec());
        let budget = GrowthBudget { k: 100.0, r0: 0.0, r: vec![0.0] };
        let wk = WeightKappa::new(1.0).unwrap();
        assert!(matches!(
            check_membership(&b, &family, &budget, wk, &grid, &[0.5], &small_plan()),
            Err(Error::DimMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn growth_clause() {
        let grid = IndexGrid::dimensions(&[2], |d| (d, d)).unwrap();
        let wk = WeightKappa::new(1.0).unwrap();
        let budget = GrowthBudget { k: 100.0, r0: 0.0, r: vec![0.0] };
        let tight = scaling(2.0).with_envelope(GrowthEnvelope::constant(2.0, 0.0, 1));
        let rep = check_membership(&tight, &scaling_family(2.0), &budget, wk, &grid, &[0.5], &small_plan()).unwrap();
        assert_eq!(rep.rows[0].growth_ok, Some(true));
        let loose = scaling(2.0).with_envelope(GrowthEnvelope::constant(1.5, 0.0, 1));
        let rep = check_membership(&loose, &scaling_family(2.0), &budget, wk, &grid, &[0.5], &small_plan()).unwrap();
        assert_eq!(rep.rows[0].growth_ok, Some(false));
        assert!(!rep.pass);
        let free = scaling(2.0).with_envelope(GrowthEnvelope::unbounded(1));
        let rep = check_membership(&free, &scaling_family(2.0), &budget, wk, &grid, &[0.5], &small_plan()).unwrap();
        assert_eq!(rep.rows[0].growth_ok, None);
        assert!(rep.pass);
    }

    #[test]
    fn report_json_shape() {
        let grid = IndexGrid::dimensions(&[1], |d| (d, d)).unwrap();
        let wk = WeightKappa::new(1.0).unwrap();
        let budget = GrowthBudget { k: 10.0, r0: 0.0, r: vec![0.0] };
        let rep = check_membership(&scaling(1.0), &scaling_family(1.0), &budget, wk, &grid, &[0.5], &small_plan()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        for key in ["fitted_K", "pass", "rows", "sample_plan", "seed"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v["rows"][0]["growth_ok"].is_null());
        let back: CertReport = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn monotone_in_budget() {
        let grid = IndexGrid::dimensions(&[1, 2, 3], |d| (d, d)).unwrap();
        let wk = WeightKappa::new(1.0).unwrap();
        let budget = GrowthBudget { k: 2.0, r0: 0.0, r: vec![2.0] };
        let rep = check_membership(&scaling(1.0), &scaling_family(1.0), &budget, wk, &grid, &[1.0, 0.2], &small_plan()).unwrap();
        assert!(rep.pass);
        for bigger in [
            GrowthBudget { k: 3.0, r0: 0.0, r: vec![2.0] },
            GrowthBudget { k: 2.0, r0: 0.5, r: vec![2.0] },
            GrowthBudget { k: 2.0, r0: 0.0, r: vec![2.5] },
        ] {
            assert!(check_membership(&scaling(1.0), &scaling_family(1.0), &bigger, wk, &grid, &[1.0, 0.2], &small_plan()).unwrap().pass);
        }
    }

    fn measured(b: &NetworkFamilyBuilder, fam: &FunctionFamily, i: &[usize], eps: f64, wk: WeightKappa, pts: &[Vec<f64>]) -> f64 {
        let net = b.build(i, eps).unwrap();
        pts.iter()
            .map(|x| {
                let y = net.realize(&b.activation, x).unwrap();
                let t = fam.eval(i, x);
                wk.value(norm(x)) * norm(&t.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn linear_combinator() {
        let wk = WeightKappa::new(1.0).unwrap();
        let pts = small_plan().points(2);
        let i = [2usize];
        // λ = 1, exact operands
        let h = combinator_linear(&scaling(1.0), &scaling(1.0), 1.0, &relu()).unwrap();
        assert_eq!(measured(&h, &scaling_family(2.0), &i, 0.1, wk, &pts), 0.0);
        // λ = 0: the g branch alone, built at ε/2
        let h = combinator_linear(&scaling(3.0), &sloppy_scaling(1.0), 0.0, &relu()).unwrap();
        let e = measured(&h, &scaling_family(1.0), &i, 0.2, wk, &pts);
        assert!((e - 0.05).abs() < 1e-12, "{e}");
        // λ = 2, both operands off
        let h = combinator_linear(&sloppy_scaling(1.0), &sloppy_scaling(-1.0), 2.0, &relu()).unwrap();
        let eps = 0.4;
        let ef = measured(&sloppy_scaling(1.0), &scaling_family(1.0), &i, eps / 4.0, wk, &pts);
        let eg = measured(&sloppy_scaling(-1.0), &scaling_family(-1.0), &i, eps / 2.0, wk, &pts);
        let e = measured(&h, &scaling_family(1.0), &i, eps, wk, &pts);
        assert!(e <= 2.0 * ef + eg + 1e-12);
        assert!(e <= eps);
    }

    #[test]
    fn limit_counts() {
        assert_eq!(limit_step_count(1.0, 1.0, &[], &[], 0.25).unwrap(), 4);
        assert_eq!(limit_step_count(1.0, 2.0, &[], &[], 0.25).unwrap(), 2);
        assert_eq!(limit_step_count(0.0, 1.0, &[], &[], 0.25).unwrap(), 1);
        assert_eq!(limit_step_count(1.0, 0.0, &[], &[], 0.25), Err(Error::NonpositiveR(0.0)));
        // δ/2 split: δ = 0.5 gives q = 4
        let pick = combinator_limit(
            |n| NetworkFamilyBuilder::new(relu(), move |_, _| affine_net(Array2::from_elem((1, 1), n as f64), Array1::zeros(1))),
            Arc::new(|_: &[usize]| vec![1]),
            1.0,
            1.0,
            vec![0.0],
            &relu(),
        )
        .unwrap();
        assert_eq!(pick.build(&[1], 0.5).unwrap().layers()[0].weights[[0, 0]], 4.0);
    }

    #[test]
    fn limit_soundness_on_synthetic_family() {
        // f_{i,n}(x) = x + D/n, whose weighted deviation from the identity is at most D/n
        let d_const = 0.3;
        let b = combinator_limit(
            move |n| {
                NetworkFamilyBuilder::new(relu(), move |_, _| {
                    affine_net(Array2::eye(1), Array1::from_elem(1, d_const / n as f64))
                })
            },
            Arc::new(|_: &[usize]| vec![1]),
            d_const,
            1.0,
            vec![0.0],
            &relu(),
        )
        .unwrap();
        let wk = WeightKappa::new(1.0).unwrap();
        let pts = small_plan().points(1);
        for delta in [1.0, 0.5, 0.1, 0.01] {
            assert!(measured(&b, &scaling_family(1.0), &[1], delta, wk, &pts) <= delta);
        }
    }

    #[test]
    fn rate_exponents() {
        let rate = RateDeclaration { k: 1.0, rate: 1.0, alpha: vec![0.0], r0: 1.0, r: vec![2.0] };
        assert_eq!(rate.implied_exponents().unwrap(), (1.0, vec![2.0]));
        let rate = RateDeclaration { k: 1.0, rate: 2.0, alpha: vec![1.0], r0: 1.0, r: vec![0.0] };
        assert_eq!(rate.implied_exponents().unwrap(), (0.5, vec![0.5]));
    }

    #[test]
    fn certify_exact_from_rate() {
        let grid = IndexGrid::dimensions(&[1, 2, 3], |d| (d, d)).unwrap();
        let wk = WeightKappa::new(1.0).unwrap();
        let rate = RateDeclaration { k: 0.0, rate: 1.0, alpha: vec![0.0], r0: 0.0, r: vec![2.0] };
        let rep = certify_from_rate(&scaling(1.0), &rate, &scaling_family(1.0), 2.0, wk, &grid, &[1.0, 0.1], &small_plan()).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.worst_error, 0.0);
    }

    #[test]
    fn compose_chain_combinator() {
        let wk = WeightKappa::new(1.0).unwrap();
        let pts = small_plan().points(2);
        let single = combinator_compose_chain(&[scaling(2.0)], &[], wk, &relu()).unwrap();
        assert_eq!(single.builder.build(&[2], 0.5).unwrap(), scaling(2.0).build(&[2], 0.5).unwrap());
        let two = combinator_compose_chain(&[scaling(2.0), scaling(-0.5)], &[0.5], wk, &relu()).unwrap();
        assert_eq!(measured(&two.builder, &scaling_family(-1.0), &[2], 0.5, wk, &pts), 0.0);
        assert_eq!(
            combinator_compose_chain(&[scaling(2.0), scaling(1.0), scaling(1.0)], &[1.0], wk, &relu()).unwrap_err(),
            Error::MissingLipschitz { factor: 3 }
        );
    }

    #[test]
    fn compose_chain_telescoping() {
        // three sloppy contractions; per-factor errors at the actual intermediate points
        // must dominate the composed error through the Lipschitz products
        let wk = WeightKappa::new(1.0).unwrap();
        let a = 0.9;
        let factors = vec![
            sloppy_scaling(a).with_envelope(GrowthEnvelope::constant(1.0, 1.0, 1)),
            sloppy_scaling(a).with_envelope(GrowthEnvelope::constant(1.0, 1.0, 1)),
            sloppy_scaling(a).with_envelope(GrowthEnvelope::constant(1.0, 1.0, 1)),
        ];
        let chain = combinator_compose_chain(&factors, &[a, a], wk, &relu()).unwrap();
        let i = [2usize];
        let eps = 0.2;
        let net = chain.builder.build(&i, eps).unwrap();
        let step = factors[0].build(&i, eps).unwrap();
        for x in small_plan().points(2) {
            let composed = net.realize(&relu(), &x).unwrap();
            let exact: Vec<f64> = x.iter().map(|v| a * a * a * v).collect();
            let err = norm(&exact.iter().zip(&composed).map(|(p, q)| p - q).collect::<Vec<_>>());
            let mut cur = x.clone();
            let mut errs = Vec::new();
            for _ in 0..3 {
                let next = step.realize(&relu(), &cur).unwrap();
                let truth: Vec<f64> = cur.iter().map(|v| a * v).collect();
                errs.push(norm(&truth.iter().zip(&next).map(|(p, q)| p - q).collect::<Vec<_>>()));
                cur = next;
            }
            let tele = telescoping_bound(&[a, a], &errs);
            assert!(err <= tele + 1e-12);
            assert!(tele <= chain.predicted_error(&i, eps, norm(&x)) + 1e-12);
        }
    }

    #[test]
    fn euler_family() {
        let neg = scaling(-1.0).with_envelope(GrowthEnvelope::constant(1.0, 0.0, 1));
        let e = combinator_euler_family(&neg, 1.0, 1.0).unwrap();
        // n = 1, T = 1: x + f(x) = 0
        let net = e.build(&[2, 1], 0.5).unwrap();
        assert_eq!(net.realize(&relu(), &[3.0, -1.0]).unwrap(), vec![0.0, 0.0]);
        let grid = IndexGrid::dimensions(&[1, 3], |d| (d, d)).unwrap().extend_index(&[1, 2, 4]).unwrap();
        let family = FunctionFamily::euler_step(&scaling_family(-1.0), 1.0);
        let wk = WeightKappa::new(1.0).unwrap();
        let budget = GrowthBudget { k: 1e6, r0: 0.0, r: vec![0.0] };
        let rep = check_membership(&e, &family, &budget, wk, &grid, &[1.0, 0.1], &small_plan()).unwrap();
        assert!(rep.pass);
        assert!(rep.rows.iter().all(|r| r.growth_ok == Some(true)));
        assert!(combinator_euler_family(&neg, 0.0, 1.0).is_err());
        assert!(e.build(&[2, 0], 0.5).is_err());
    }

    #[test]
    fn euler_step_error_scales_with_step() {
        let t = 2.0;
        let b = combinator_euler_family(&sloppy_scaling(-1.0), t, 1.0).unwrap();
        let family = FunctionFamily::euler_step(&scaling_family(-1.0), t);
        let wk = WeightKappa::new(1.0).unwrap();
        let pts = small_plan().points(1);
        for n in [1usize, 3, 8] {
            let eps = 0.5;
            let e = measured(&b, &family, &[1, n], eps, wk, &pts);
            let ef = measured(&sloppy_scaling(-1.0), &scaling_family(-1.0), &[1], eps / t, wk, &pts);
            assert!((e - t / n as f64 * ef).abs() < 1e-12);
            assert!(e <= eps);
        }
    }

    #[test]
    fn products() {
        let f = FunctionFamily::new(|_, x| vec![x[0] + 1.0]);
        let g = FunctionFamily::new(|_, x| vec![x[0] * 10.0]);
        let p = product_family(vec![f.clone(), g.clone()]);
        let (part, i) = p.lookup(&[4, 1]).unwrap();
        assert_eq!(i, &[4]);
        assert_eq!(part.eval(i, &[2.0]), g.eval(&[4], &[2.0]));
        assert_eq!(p.family().eval(&[4, 0], &[2.0]), vec![3.0]);
        assert!(p.lookup(&[4, 2]).is_none());
        let dm = product_dim_map(Arc::new(|i: &[usize]| vec![i[0]]), 1, Arc::new(|j: &[usize]| vec![j[0] + 1]));
        assert_eq!(dm(&[3, 5]), vec![3, 6]);
        let a = IndexGrid::dimensions(&[1, 2], |d| (d, 1)).unwrap();
        let b = IndexGrid::dimensions(&[7], |d| (d, 1)).unwrap();
        let ab = a.product(&b).unwrap();
        assert_eq!(ab.indices(), &[vec![1, 7], vec![2, 7]]);
        assert_eq!(ab.dims(&[2, 7]), vec![2, 7]);
        assert_eq!(ab.io(&[2, 7]), (2, 1));
    }

    #[test]
    fn identity_family_is_exact() {
        let grid = IndexGrid::dimensions(&[1, 4], |d| (d, d)).unwrap();
        let b = NetworkFamilyBuilder::new(relu(), |i, _| identity_net(i[0], &Activation::Rectifier));
        let wk = WeightKappa::new(2.0).unwrap();
        let budget = GrowthBudget { k: 8.0, r0: 0.0, r: vec![2.0] };
        let rep = check_membership(&b, &scaling_family(1.0), &budget, wk, &grid, &[0.01], &small_plan()).unwrap();
        assert!(rep.pass);
    }
}
