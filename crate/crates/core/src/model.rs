//! Shared architecture description and per-layer parameter storage.
//!
//! Each layer's weights and biases live in one flat vector: the weight matrix
//! first, row-major with shape `output_dim × input_dim` (row `o` holds the
//! incoming weights of unit `o`), followed by the `output_dim` biases when the
//! layer has them. Combination, training and the wire format all index
//! parameters through this single order.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub has_bias: bool,
}

/// Position of one scalar inside a layer's flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamCoord {
    Weight { row: usize, col: usize },
    Bias { unit: usize },
}

impl LayerSpec {
    pub fn new(
        name: impl Into<String>,
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        has_bias: bool,
    ) -> Self {
        Self {
            name: name.into(),
            input_dim,
            output_dim,
            activation,
            has_bias,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.input_dim * self.output_dim
    }

    /// Number of scalars in the layer (weights plus biases), `M_ℓ`.
    pub fn param_count(&self) -> usize {
        self.weight_count() + if self.has_bias { self.output_dim } else { 0 }
    }

    pub fn coordinate(&self, index: usize) -> Option<ParamCoord> {
        let weights = self.weight_count();
        if index < weights {
            Some(ParamCoord::Weight {
                row: index / self.input_dim,
                col: index % self.input_dim,
            })
        } else if self.has_bias && index < weights + self.output_dim {
            Some(ParamCoord::Bias {
                unit: index - weights,
            })
        } else {
            None
        }
    }

    pub fn flat_index(&self, coord: ParamCoord) -> Option<usize> {
        match coord {
            ParamCoord::Weight { row, col } if row < self.output_dim && col < self.input_dim => {
                Some(row * self.input_dim + col)
            }
            ParamCoord::Bias { unit } if self.has_bias && unit < self.output_dim => {
                Some(self.weight_count() + unit)
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawArchitecture", into = "RawArchitecture")]
pub struct ArchitectureDescriptor {
    layers: Vec<LayerSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArchitecture {
    layers: Vec<LayerSpec>,
}

impl TryFrom<RawArchitecture> for ArchitectureDescriptor {
    type Error = Error;

    fn try_from(raw: RawArchitecture) -> Result<Self> {
        ArchitectureDescriptor::new(raw.layers)
    }
}

impl From<ArchitectureDescriptor> for RawArchitecture {
    fn from(arch: ArchitectureDescriptor) -> Self {
        RawArchitecture {
            layers: arch.layers,
        }
    }
}

impl ArchitectureDescriptor {
    /// Validates a feed-forward layer chain: at least one layer, positive
    /// dimensions, and each layer consuming the previous layer's output.
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::argument("architecture needs at least one layer"));
        }
        for (idx, layer) in layers.iter().enumerate() {
            if layer.input_dim == 0 || layer.output_dim == 0 {
                return Err(Error::argument(format!(
                    "layer {idx} ({}) has a zero dimension",
                    layer.name
                )));
            }
            if idx > 0 && layers[idx - 1].output_dim != layer.input_dim {
                return Err(Error::argument(format!(
                    "layer {idx} ({}) expects {} inputs but the previous layer emits {}",
                    layer.name,
                    layer.input_dim,
                    layers[idx - 1].output_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Convenience builder for a dense chain `dims[0] → dims[1] → …`, every
    /// layer with a bias, hidden layers using `hidden`.
    pub fn dense(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::argument("dense chain needs an input and an output width"));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(idx, pair)| {
                let activation = if idx == last { output } else { hidden };
                LayerSpec::new(format!("dense_{idx}"), pair[0], pair[1], activation, true)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    pub fn output_activation(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// SHA-256 (hex) over the canonical JSON serialization of the descriptor.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("architecture serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Σ_ℓ M_ℓ over the descriptor.
pub fn param_count(arch: &ArchitectureDescriptor) -> usize {
    arch.param_count()
}

/// One host's full weight and bias state, one flat vector per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    architecture: ArchitectureDescriptor,
    per_layer: Vec<Vec<f64>>,
}

impl ParameterSet {
    pub fn new(architecture: ArchitectureDescriptor, per_layer: Vec<Vec<f64>>) -> Result<Self> {
        check_shape(&architecture, &per_layer)?;
        for (idx, values) in per_layer.iter().enumerate() {
            if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::argument(format!(
                    "layer {idx} value {pos} is not finite ({})",
                    values[pos]
                )));
            }
        }
        Ok(Self {
            architecture,
            per_layer,
        })
    }

    pub fn zeros(architecture: &ArchitectureDescriptor) -> Self {
        let per_layer = architecture
            .layers()
            .iter()
            .map(|l| vec![0.0; l.param_count()])
            .collect();
        Self {
            architecture: architecture.clone(),
            per_layer,
        }
    }

    pub fn architecture(&self) -> &ArchitectureDescriptor {
        &self.architecture
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.per_layer
    }

    pub fn layer(&self, idx: usize) -> &[f64] {
        &self.per_layer[idx]
    }

    pub fn into_layers(self) -> Vec<Vec<f64>> {
        self.per_layer
    }

    /// The weight-matrix part of layer `idx` (row-major, `output_dim × input_dim`).
    pub fn weights(&self, idx: usize) -> &[f64] {
        let n = self.architecture.layers()[idx].weight_count();
        &self.per_layer[idx][..n]
    }

    /// The bias part of layer `idx`; empty when the layer has no bias.
    pub fn biases(&self, idx: usize) -> &[f64] {
        let n = self.architecture.layers()[idx].weight_count();
        &self.per_layer[idx][n..]
    }

    pub fn get(&self, layer: usize, coord: ParamCoord) -> Option<f64> {
        let spec = self.architecture.layers().get(layer)?;
        spec.flat_index(coord).map(|i| self.per_layer[layer][i])
    }

    /// All parameters in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        self.per_layer.iter().flatten().copied().collect()
    }

    pub fn from_flat(architecture: &ArchitectureDescriptor, flat: &[f64]) -> Result<Self> {
        if flat.len() != architecture.param_count() {
            return Err(Error::argument(format!(
                "expected {} values, got {}",
                architecture.param_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        let per_layer = architecture
            .layers()
            .iter()
            .map(|l| {
                let chunk = flat[offset..offset + l.param_count()].to_vec();
                offset += l.param_count();
                chunk
            })
            .collect();
        Self::new(architecture.clone(), per_layer)
    }

    /// SHA-256 (hex) over the architecture digest and the little-endian bit
    /// patterns of every value in canonical order.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.architecture.digest().as_bytes());
        for values in &self.per_layer {
            for v in values {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn l2_distance(&self, other: &ParameterSet) -> f64 {
        self.per_layer
            .iter()
            .flatten()
            .zip(other.per_layer.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn check_shape(arch: &ArchitectureDescriptor, per_layer: &[Vec<f64>]) -> Result<()> {
    if per_layer.len() != arch.layer_count() {
        return Err(Error::argument(format!(
            "expected {} layers, got {}",
            arch.layer_count(),
            per_layer.len()
        )));
    }
    for (idx, (spec, values)) in arch.layers().iter().zip(per_layer).enumerate() {
        if values.len() != spec.param_count() {
            return Err(Error::argument(format!(
                "layer {idx} ({}) expects {} values, got {}",
                spec.name,
                spec.param_count(),
                values.len()
            )));
        }
    }
    Ok(())
}

/// What a host sends to the synchronizer each round: its weights and the size
/// of its training corpus, nothing else.
#[derive(Clone, Debug, PartialEq)]
pub struct HostSubmission {
    pub host_id: String,
    pub round: u64,
    pub corpus_size: u64,
    pub params: ParameterSet,
}

impl HostSubmission {
    pub fn new(host_id: impl Into<String>, round: u64, corpus_size: u64, params: ParameterSet) -> Result<Self> {
        if corpus_size == 0 {
            return Err(Error::argument("corpus_size must be at least 1"));
        }
        Ok(Self {
            host_id: host_id.into(),
            round,
            corpus_size,
            params,
        })
    }
}

/// True iff every submission carries the same architecture as the first.
pub fn validate_same_architecture(submissions: &[HostSubmission]) -> Result<bool> {
    let first = submissions
        .first()
        .ok_or_else(|| Error::argument("no submissions to compare"))?;
    let reference = first.params.architecture();
    Ok(submissions
        .iter()
        .all(|s| s.params.architecture() == reference))
}

/// One layer's flat values as they appear in model files and on the wire.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerValues {
    pub values: Vec<f64>,
}

impl ParameterSet {
    pub fn to_layer_values(&self) -> Vec<LayerValues> {
        self.per_layer
            .iter()
            .map(|v| LayerValues { values: v.clone() })
            .collect()
    }

    pub fn from_layer_values(architecture: ArchitectureDescriptor, layers: Vec<LayerValues>) -> Result<Self> {
        Self::new(architecture, layers.into_iter().map(|l| l.values).collect())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    architecture: ArchitectureDescriptor,
    layers: Vec<LayerValues>,
}

/// Encodes a parameter set as the portable JSON model file. Reals are written
/// in their shortest round-trip form.
pub fn serialize_params(params: &ParameterSet) -> Result<Vec<u8>> {
    for (idx, values) in params.per_layer.iter().enumerate() {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Serialization(format!(
                "layer {idx} value {pos} is not finite"
            )));
        }
    }
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        architecture: params.architecture.clone(),
        layers: params.to_layer_values(),
    };
    let mut bytes = serde_json::to_vec(&file)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn deserialize_params(bytes: &[u8]) -> Result<ParameterSet> {
    let file: ModelFile =
        serde_json::from_slice(bytes).map_err(|e| Error::Serialization(e.to_string()))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Serialization(format!(
            "unsupported format_version {}",
            file.format_version
        )));
    }
    let per_layer = file.layers.into_iter().map(|l| l.values).collect();
    ParameterSet::new(file.architecture, per_layer).map_err(|e| Error::Serialization(e.to_string()))
}

pub fn write_model_file(path: &Path, params: &ParameterSet) -> Result<()> {
    std::fs::write(path, serialize_params(params)?)?;
    Ok(())
}

pub fn read_model_file(path: &Path) -> Result<ParameterSet> {
    deserialize_params(&std::fs::read(path)?)
}
