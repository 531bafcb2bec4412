//! The network value type.
//!
//! An [`Ann`] is a nonempty list of affine layers `(W_k, b_k)` with `W_k` of shape
//! `l_k × l_{k-1}`. Its realization under an activation `a` alternates the affine maps with
//! componentwise application of `a`, and applies **no activation after the final layer**:
//!
//! ```text
//! x_0 = x,   x_k = a(W_k x_{k-1} + b_k)  for 0 < k < L,   output = W_L x_{L-1} + b_L
//! ```
//!
//! Many frameworks activate the output layer too; this crate never does.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};

use crate::{Error, Result};

/// Euclidean norm.
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scalar activation applied componentwise between layers.
#[derive(Clone)]
pub enum Activation {
    /// `x ↦ max{x, 0}`.
    Rectifier,
    /// `x ↦ max{x, slope·x}` with `0 < slope < 1`.
    LeakyRectifier(f64),
    /// Any other scalar function. Supported for evaluation only.
    Opaque(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Activation {
    pub fn leaky(slope: f64) -> Result<Self> {
        if slope > 0.0 && slope < 1.0 {
            Ok(Activation::LeakyRectifier(slope))
        } else {
            Err(Error::InvalidActivation(format!(
                "leaky slope must lie in (0, 1), got {slope}"
            )))
        }
    }

    pub fn opaque(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Activation::Opaque(Arc::new(f))
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Rectifier => x.max(0.0),
            Activation::LeakyRectifier(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Opaque(f) => f(x),
        }
    }

    /// Width factor `c` of the identity networks `(d, c·d, d)` this activation admits.
    pub fn identity_width_factor(&self) -> Option<usize> {
        match self {
            Activation::Rectifier | Activation::LeakyRectifier(_) => Some(2),
            Activation::Opaque(_) => None,
        }
    }

    /// Short name used as the `activation_hint` of serialized networks.
    pub fn hint(&self) -> Option<String> {
        match self {
            Activation::Rectifier => Some("relu".to_string()),
            Activation::LeakyRectifier(s) => Some(format!("leaky_relu:{s}")),
            Activation::Opaque(_) => None,
        }
    }

    /// Parses `relu` or `leaky_relu:<slope>`.
    pub fn from_hint(hint: &str) -> Result<Self> {
        match hint {
            "relu" | "rectifier" => Ok(Activation::Rectifier),
            _ => {
                let slope = hint
                    .strip_prefix("leaky_relu:")
                    .or_else(|| hint.strip_prefix("leaky:"))
                    .ok_or_else(|| Error::InvalidActivation(format!("unknown activation `{hint}`")))?;
                let slope: f64 = slope
                    .parse()
                    .map_err(|_| Error::InvalidActivation(format!("bad leaky slope `{slope}`")))?;
                Activation::leaky(slope)
            }
        }
    }

    pub(crate) fn require_identity(&self) -> Result<()> {
        self.identity_width_factor()
            .map(|_| ())
            .ok_or(Error::UnsupportedActivation)
    }
}

impl fmt::Debug for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Rectifier => write!(f, "Rectifier"),
            Activation::LeakyRectifier(s) => write!(f, "LeakyRectifier({s})"),
            Activation::Opaque(_) => write!(f, "Opaque(..)"),
        }
    }
}

/// One affine layer `x ↦ W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Self {
        Layer { weights, bias }
    }

    pub fn rows(&self) -> usize {
        self.weights.nrows()
    }

    pub fn cols(&self) -> usize {
        self.weights.ncols()
    }

    fn param_count(&self) -> u64 {
        (self.rows() * (self.cols() + 1)) as u64
    }
}

/// Architecture of a network: `dims = (l_0, …, l_L)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub depth: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_count: usize,
    pub dims: Vec<usize>,
}

/// A validated feedforward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Ann {
    layers: Vec<Layer>,
}

impl Ann {
    /// Validates shapes and builds a network.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.rows() == 0 || layer.cols() == 0 {
                return Err(Error::ZeroWidthLayer { layer: k });
            }
            if layer.bias.len() != layer.rows() {
                return Err(Error::ShapeMismatch {
                    layer: k,
                    detail: format!(
                        "bias length {} != weight rows {}",
                        layer.bias.len(),
                        layer.rows()
                    ),
                });
            }
            if k > 0 && layers[k - 1].rows() != layer.cols() {
                return Err(Error::ShapeMismatch {
                    layer: k,
                    detail: format!(
                        "weight columns {} != previous layer rows {}",
                        layer.cols(),
                        layers[k - 1].rows()
                    ),
                });
            }
        }
        Ok(Ann { layers })
    }

    /// Convenience constructor from `(W, b)` pairs.
    pub fn from_pairs(pairs: Vec<(Array2<f64>, Array1<f64>)>) -> Result<Self> {
        Ann::new(pairs.into_iter().map(|(w, b)| Layer::new(w, b)).collect())
    }

    /// Skips validation; callers guarantee the chain invariant.
    pub(crate) fn from_layers_unchecked(layers: Vec<Layer>) -> Self {
        debug_assert!(Ann::new(layers.clone()).is_ok());
        Ann { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::rows))
            .collect()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            depth: self.depth(),
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
            hidden_count: self.depth() - 1,
            dims: self.dims(),
        }
    }

    /// `Σ_k l_k (l_{k-1} + 1)`.
    pub fn param_count(&self) -> u64 {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    pub(crate) fn require_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteParameters)
        }
    }

    /// Equality of every parameter bit pattern (distinguishes `-0.0` and NaN payloads).
    pub fn bit_eq(&self, other: &Ann) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.dim() == b.weights.dim()
                    && a.bias.len() == b.bias.len()
                    && a.weights.iter().zip(b.weights.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
                    && a.bias.iter().zip(b.bias.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Forward evaluation of a single point.
    pub fn realize(&self, act: &Activation, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut cur = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut next = layer.bias.to_vec();
            for (r, out) in next.iter_mut().enumerate() {
                let row = layer.weights.row(r);
                let mut acc = 0.0;
                for (w, v) in row.iter().zip(&cur) {
                    acc += w * v;
                }
                *out += acc;
            }
            if k < last {
                next.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Forward evaluation of a batch, one sample per row.
    pub fn realize_batch(&self, act: &Activation, xs: &Array2<f64>) -> Result<Array2<f64>> {
        if xs.ncols() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                got: xs.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut cur = xs.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut next = cur.dot(&layer.weights.t());
            next += &layer.bias.view().insert_axis(Axis(0));
            if k < last {
                next.mapv_inplace(|v| act.apply(v));
            }
            cur = next;
        }
        Ok(cur)
    }
}

/// Single-layer network `x ↦ W x + b`.
pub fn affine_net(weights: Array2<f64>, bias: Array1<f64>) -> Result<Ann> {
    Ann::new(vec![Layer::new(weights, bias)])
}

/// Network of architecture `(d, 2d, d)` realizing the identity on `ℝ^d`.
///
/// The hidden layer holds `(x, -x)`; the output recombines the two channels. For the leaky
/// rectifier with slope `α`, `a(x) - a(-x) = (1 + α) x`, so the output weights carry the
/// factor `1 / (1 + α)`.
pub fn identity_net(d: usize, act: &Activation) -> Result<Ann> {
    if d == 0 {
        return Err(Error::ZeroWidthLayer { layer: 0 });
    }
    let scale = match act {
        Activation::Rectifier => 1.0,
        Activation::LeakyRectifier(alpha) => 1.0 / (1.0 + alpha),
        Activation::Opaque(_) => return Err(Error::UnsupportedActivation),
    };
    let mut w1 = Array2::zeros((2 * d, d));
    let mut w2 = Array2::zeros((d, 2 * d));
    for i in 0..d {
        w1[[i, i]] = 1.0;
        w1[[d + i, i]] = -1.0;
        w2[[i, i]] = scale;
        w2[[i, d + i]] = -scale;
    }
    Ok(Ann::from_layers_unchecked(vec![
        Layer::new(w1, Array1::zeros(2 * d)),
        Layer::new(w2, Array1::zeros(d)),
    ]))
}
