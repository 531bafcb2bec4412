//! Network algebra: composition, depth padding, parallelization, linear combinations and
//! Euler-step emulation, with the parameter accounting that goes with each.
//!
//! Chains are written outermost first: `compose_chain(&[f1, f2, f3])` realizes
//! `f1 ∘ f2 ∘ f3`, so `f3` sees the input.

use ndarray::{concatenate, s, Array1, Array2, Axis};

use crate::net::{identity_net, Activation, Ann, Layer};
use crate::{Error, Result};

/// Parameter bookkeeping for a composition chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositionReport {
    /// Parameter count predicted from the factors' architectures alone.
    pub exact_param_count: u64,
    /// `2 Σ_k P(f_k) P(f_{k+1})`; `None` for a single factor.
    pub upper_bound: Option<u128>,
    pub dims: Vec<usize>,
}

/// Constants of the sum construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SumConstants {
    pub c_identity: f64,
    pub io_max: usize,
    pub declared_bound: u128,
}

fn fuse(outer_first: &Layer, inner_last: &Layer) -> Layer {
    let weights = outer_first.weights.dot(&inner_last.weights);
    let bias = outer_first.weights.dot(&inner_last.bias) + &outer_first.bias;
    Layer::new(weights, bias)
}

/// `f • g`: the network realizing `R(f) ∘ R(g)`, with `g`'s last affine layer merged into
/// `f`'s first.
pub fn compose(f: &Ann, g: &Ann) -> Result<Ann> {
    if f.input_dim() != g.output_dim() {
        return Err(Error::DimMismatch {
            expected: f.input_dim(),
            got: g.output_dim(),
        });
    }
    let inner = g.layers();
    let outer = f.layers();
    let mut layers = Vec::with_capacity(inner.len() + outer.len() - 1);
    layers.extend_from_slice(&inner[..inner.len() - 1]);
    layers.push(fuse(&outer[0], &inner[inner.len() - 1]));
    layers.extend_from_slice(&outer[1..]);
    Ok(Ann::from_layers_unchecked(layers))
}

/// Composes `fs[0] • fs[1] • … • fs[n-1]` in one pass.
///
/// Equal to any bracketing of pairwise [`compose`] calls, but linear in the total size.
pub fn compose_chain(fs: &[&Ann]) -> Result<(Ann, CompositionReport)> {
    let (innermost, rest) = fs.split_last().ok_or(Error::EmptyChain)?;
    for pair in fs.windows(2) {
        if pair[0].input_dim() != pair[1].output_dim() {
            return Err(Error::DimMismatch {
                expected: pair[0].input_dim(),
                got: pair[1].output_dim(),
            });
        }
    }
    let total: usize = fs.iter().map(|f| f.depth()).sum::<usize>() + 1 - fs.len();
    let mut layers: Vec<Layer> = Vec::with_capacity(total);
    layers.extend_from_slice(innermost.layers());
    for outer in rest.iter().rev() {
        let last = layers.pop().expect("chain is nonempty");
        layers.push(fuse(&outer.layers()[0], &last));
        layers.extend_from_slice(&outer.layers()[1..]);
    }
    let ann = Ann::from_layers_unchecked(layers);
    let report = CompositionReport {
        exact_param_count: chain_param_count(fs),
        upper_bound: chain_param_bound(fs),
        dims: ann.dims(),
    };
    Ok((ann, report))
}

fn dims_param_count(dims: &[usize]) -> i128 {
    dims.windows(2).map(|w| w[1] as i128 * (w[0] as i128 + 1)).sum()
}

fn four_term(chain: &[Vec<usize>]) -> u64 {
    let mut total: i128 = chain.iter().map(|d| dims_param_count(d)).sum();
    for pair in chain.windows(2) {
        let (outer, inner) = (&pair[0], &pair[1]);
        let li = inner.len() - 1;
        let (o0, o1) = (outer[0] as i128, outer[1] as i128);
        let (i_last, i_prev) = (inner[li] as i128, inner[li - 1] as i128);
        total += o1 * (i_prev + 1) - o1 * (o0 + 1) - i_last * (i_prev + 1);
    }
    total as u64
}

/// Parameter count of a composition chain computed from the factors' dims alone:
///
/// `Σ P(f_k) + Σ l_{k,1}(l_{k+1,L-1} + 1) − Σ l_{k,1}(l_{k,0} + 1) − Σ l_{k+1,L}(l_{k+1,L-1} + 1)`.
///
/// Exact when every interior factor `f_2, …, f_{n-1}` has depth at least two. A depth-one
/// interior factor is fused on both sides and this expression overcounts; see
/// [`chain_param_count`].
pub fn chain_param_identity(fs: &[&Ann]) -> u64 {
    let chain: Vec<Vec<usize>> = fs.iter().map(|f| f.dims()).collect();
    four_term(&chain)
}

/// Exact parameter count of `compose_chain(fs)` for any chain.
///
/// Depth-one interior factors are first merged into their inner neighbour (on dims only),
/// after which the four-term identity applies.
pub fn chain_param_count(fs: &[&Ann]) -> u64 {
    let n = fs.len();
    let mut collapsed: Vec<Vec<usize>> = Vec::with_capacity(n);
    for (k, f) in fs.iter().enumerate().rev() {
        let dims = f.dims();
        let interior = k > 0 && k + 1 < n;
        match collapsed.last_mut() {
            Some(inner) if interior && dims.len() == 2 => {
                *inner.last_mut().expect("dims are nonempty") = dims[1];
            }
            _ => collapsed.push(dims),
        }
    }
    collapsed.reverse();
    four_term(&collapsed)
}

/// `2 Σ_{k=1}^{n-1} P(f_k) P(f_{k+1})`, defined for chains of length at least two.
pub fn chain_param_bound(fs: &[&Ann]) -> Option<u128> {
    if fs.len() < 2 {
        return None;
    }
    Some(
        2 * fs
            .windows(2)
            .map(|p| p[0].param_count() as u128 * p[1].param_count() as u128)
            .sum::<u128>(),
    )
}

/// Pads `f` with identity networks on its output side until it has `target_depth` layers.
pub fn pad_depth(f: &Ann, target_depth: usize, act: &Activation) -> Result<Ann> {
    act.require_identity()?;
    if target_depth < f.depth() {
        return Err(Error::TargetTooSmall {
            target: target_depth,
            current: f.depth(),
        });
    }
    let extra = target_depth - f.depth();
    if extra == 0 {
        return Ok(f.clone());
    }
    let id = identity_net(f.output_dim(), act)?;
    let mut chain: Vec<&Ann> = vec![&id; extra];
    chain.push(f);
    Ok(compose_chain(&chain)?.0)
}

fn block_diag(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar + br, ac + bc));
    out.slice_mut(s![..ar, ..ac]).assign(a);
    out.slice_mut(s![ar.., ac..]).assign(b);
    out
}

/// Network realizing `(x, y) ↦ (R(f1)(x), R(f2)(y))`.
///
/// The shallower operand is padded with identity networks, then layers are stacked
/// block-diagonally.
pub fn parallelize(f1: &Ann, f2: &Ann, act: &Activation) -> Result<Ann> {
    act.require_identity()?;
    let depth = f1.depth().max(f2.depth());
    let p1 = pad_depth(f1, depth, act)?;
    let p2 = pad_depth(f2, depth, act)?;
    let layers = p1
        .layers()
        .iter()
        .zip(p2.layers())
        .map(|(a, b)| {
            let bias = concatenate(Axis(0), &[a.bias.view(), b.bias.view()])
                .expect("bias vectors concatenate");
            Layer::new(block_diag(&a.weights, &b.weights), bias)
        })
        .collect();
    Ok(Ann::from_layers_unchecked(layers))
}

/// `11 max{1, c²} (max{I, O})² (P1 + P2)`.
pub fn sum_param_bound(c: f64, io_max: usize, p1: u64, p2: u64) -> u128 {
    let factor = (11.0 * (c * c).max(1.0)).ceil() as u128;
    factor * (io_max as u128).pow(2) * (p1 as u128 + p2 as u128)
}

/// `44 max{1, c³} I⁴ P`.
pub fn euler_param_bound(c: f64, input_dim: usize, p: u64) -> u128 {
    let factor = (44.0 * (c * c * c).max(1.0)).ceil() as u128;
    factor * (input_dim as u128).pow(4) * p as u128
}

fn identity_constant(act: &Activation) -> Result<f64> {
    act.identity_width_factor()
        .map(|c| c as f64)
        .ok_or(Error::UnsupportedActivation)
}

/// Network realizing `x ↦ λ1 R(f1)(x) + λ2 R(f2)(x)`, built as `S • parallelize(f1, f2) • T`
/// with `T x = (x, x)` and `S(y, z) = λ1 y + λ2 z` fused into the neighbouring layers.
pub fn linear_combination(
    lambda1: f64,
    f1: &Ann,
    lambda2: f64,
    f2: &Ann,
    act: &Activation,
) -> Result<(Ann, SumConstants)> {
    let c = identity_constant(act)?;
    if f1.input_dim() != f2.input_dim() {
        return Err(Error::DimMismatch {
            expected: f1.input_dim(),
            got: f2.input_dim(),
        });
    }
    if f1.output_dim() != f2.output_dim() {
        return Err(Error::DimMismatch {
            expected: f1.output_dim(),
            got: f2.output_dim(),
        });
    }
    let (input, output) = (f1.input_dim(), f1.output_dim());
    let eye_in = Array2::<f64>::eye(input);
    let duplicator = Ann::from_layers_unchecked(vec![Layer::new(
        concatenate(Axis(0), &[eye_in.view(), eye_in.view()]).expect("stacked identities"),
        Array1::zeros(2 * input),
    )]);
    let eye_out = Array2::<f64>::eye(output);
    let combiner = Ann::from_layers_unchecked(vec![Layer::new(
        concatenate(
            Axis(1),
            &[(&eye_out * lambda1).view(), (&eye_out * lambda2).view()],
        )
        .expect("side-by-side identities"),
        Array1::zeros(output),
    )]);
    let p = parallelize(f1, f2, act)?;
    let (h, _) = compose_chain(&[&combiner, &p, &duplicator])?;
    let io_max = input.max(output);
    let consts = SumConstants {
        c_identity: c,
        io_max,
        declared_bound: sum_param_bound(c, io_max, f1.param_count(), f2.param_count()),
    };
    Ok((h, consts))
}

/// Network realizing one explicit Euler step `x ↦ x + δ R(f)(x)`.
pub fn euler_step_net(f: &Ann, delta: f64, act: &Activation) -> Result<Ann> {
    if f.input_dim() != f.output_dim() {
        return Err(Error::NotEndomorphic {
            input: f.input_dim(),
            output: f.output_dim(),
        });
    }
    act.require_identity()?;
    let id = identity_net(f.input_dim(), act)?;
    Ok(linear_combination(1.0, &id, delta, f, act)?.0)
}
