//! `ann-v1` JSON network documents.
//!
//! ```json
//! {"format":"ann-v1","activation_hint":"relu",
//!  "layers":[{"rows":2,"cols":1,"weights":[1.0,-1.0],"bias":[0.0,0.0]}, ...]}
//! ```
//!
//! Weights are row-major. Finite floats are written as shortest round-trip decimals, so a
//! reload is bit-exact. JSON has no literal for non-finite numbers; those are written as the
//! strings `"NaN"`, `"inf"` and `"-inf"`. Loading accepts them and reports a
//! [`LoadWarning`] per entry; certification and flow builds reject such networks.

use ndarray::{Array1, Array2};
use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::net::{Ann, Layer};
use crate::{Error, Result};

pub const FORMAT_TAG: &str = "ann-v1";

#[derive(Debug, Clone, Copy)]
struct Float(f64);

impl Serialize for Float {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v.is_nan() {
            s.serialize_str("NaN")
        } else if v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for Float {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct FloatVisitor;
        impl Visitor<'_> for FloatVisitor {
            type Value = Float;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number or one of \"NaN\", \"inf\", \"-inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Float, E> {
                Ok(Float(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Float, E> {
                Ok(Float(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Float, E> {
                Ok(Float(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Float, E> {
                v.parse::<f64>()
                    .map(Float)
                    .map_err(|_| E::invalid_value(de::Unexpected::Str(v), &self))
            }
        }
        d.deserialize_any(FloatVisitor)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    rows: usize,
    cols: usize,
    weights: Vec<Float>,
    bias: Vec<Float>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    format: String,
    activation_hint: Option<String>,
    layers: Vec<LayerDoc>,
}

/// A parameter that failed the finiteness check on load.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadWarning {
    NonFiniteWeight { layer: usize, row: usize, col: usize },
    NonFiniteBias { layer: usize, row: usize },
}

#[derive(Debug, Clone)]
pub struct LoadedNetwork {
    pub ann: Ann,
    pub activation_hint: Option<String>,
    pub warnings: Vec<LoadWarning>,
}

/// Serializes a network as a compact `ann-v1` document.
pub fn save(ann: &Ann, activation_hint: Option<&str>) -> Vec<u8> {
    let doc = NetworkDoc {
        format: FORMAT_TAG.to_string(),
        activation_hint: activation_hint.map(str::to_string),
        layers: ann
            .layers()
            .iter()
            .map(|l| LayerDoc {
                rows: l.rows(),
                cols: l.cols(),
                weights: l.weights.iter().copied().map(Float).collect(),
                bias: l.bias.iter().copied().map(Float).collect(),
            })
            .collect(),
    };
    serde_json::to_vec(&doc).expect("network documents always serialize")
}

pub fn load(bytes: &[u8]) -> Result<LoadedNetwork> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Error::Parse(e.to_string()))?;
    let doc: NetworkDoc =
        serde_json::from_value(value).map_err(|e| Error::SchemaViolation(e.to_string()))?;
    if doc.format != FORMAT_TAG {
        return Err(Error::SchemaViolation(format!(
            "unsupported format tag `{}`",
            doc.format
        )));
    }
    let mut warnings = Vec::new();
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (k, l) in doc.layers.into_iter().enumerate() {
        if l.weights.len() != l.rows * l.cols {
            return Err(Error::SchemaViolation(format!(
                "layer {k}: {} weights for a {}x{} matrix",
                l.weights.len(),
                l.rows,
                l.cols
            )));
        }
        if l.bias.len() != l.rows {
            return Err(Error::SchemaViolation(format!(
                "layer {k}: bias length {} != rows {}",
                l.bias.len(),
                l.rows
            )));
        }
        for (idx, w) in l.weights.iter().enumerate() {
            if !w.0.is_finite() {
                warnings.push(LoadWarning::NonFiniteWeight {
                    layer: k,
                    row: idx / l.cols,
                    col: idx % l.cols,
                });
            }
        }
        for (row, b) in l.bias.iter().enumerate() {
            if !b.0.is_finite() {
                warnings.push(LoadWarning::NonFiniteBias { layer: k, row });
            }
        }
        let weights = Array2::from_shape_vec((l.rows, l.cols), l.weights.iter().map(|f| f.0).collect())
            .map_err(|e| Error::SchemaViolation(e.to_string()))?;
        let bias = Array1::from_iter(l.bias.iter().map(|f| f.0));
        layers.push(Layer::new(weights, bias));
    }
    let ann = Ann::new(layers).map_err(|e| Error::SchemaViolation(e.to_string()))?;
    Ok(LoadedNetwork {
        ann,
        activation_hint: doc.activation_hint,
        warnings,
    })
}
