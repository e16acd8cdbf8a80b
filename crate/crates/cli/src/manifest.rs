//! JSON model manifest: an ordered list of blocks, each an ordered list of
//! linear layers, with weight tensor paths resolved relative to the
//! manifest file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use thanos_core::DenseMatrix;

use crate::tensor::{load_tensor, Dtype, TensorError};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("manifest parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("unsupported manifest schema version {found}, expected {MANIFEST_SCHEMA_VERSION}")]
    SchemaVersion { found: u32 },

    #[error("block {block} layer {layer}: {source}")]
    Tensor {
        block: usize,
        layer: usize,
        source: TensorError,
    },

    #[error("block {block} layer {layer}: weight tensor must be rank 2")]
    NotAMatrix { block: usize, layer: usize },

    #[error(
        "dimension chain broken at block {block} layer {layer}: \
         weights take {got} inputs but the incoming activation has {expected}"
    )]
    ChainBroken {
        block: usize,
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("manifest has no blocks")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSpec {
    /// Tensor file path, relative to the manifest.
    pub weights: String,
    pub activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelManifest {
    pub schema_version: u32,
    /// Input dimension of the first layer of the first block.
    pub input_dim: usize,
    pub blocks: Vec<Vec<LayerSpec>>,
}

impl ModelManifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest: ModelManifest = serde_json::from_str(&text)?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(ManifestError::SchemaVersion {
                found: manifest.schema_version,
            });
        }
        if manifest.blocks.is_empty() {
            return Err(ManifestError::Empty);
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text.as_bytes()).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }
}

/// One loaded layer: weights widened to f64 plus the dtype they arrived in,
/// so outputs can be written back in kind.
#[derive(Debug, Clone)]
pub struct LoadedLayer {
    pub spec: LayerSpec,
    pub weights: DenseMatrix,
    pub dtype: Dtype,
}

/// A manifest with all weight tensors loaded and the dimension chain
/// validated: within a block each layer consumes the previous layer's
/// output, and block boundaries chain the same way.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub manifest: ModelManifest,
    pub blocks: Vec<Vec<LoadedLayer>>,
}

impl LoadedModel {
    pub fn load(manifest_path: &Path) -> Result<Self, ManifestError> {
        let manifest = ModelManifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));

        let mut blocks = Vec::with_capacity(manifest.blocks.len());
        let mut incoming = manifest.input_dim;
        for (bi, block) in manifest.blocks.iter().enumerate() {
            let mut layers = Vec::with_capacity(block.len());
            for (li, spec) in block.iter().enumerate() {
                let tensor = load_tensor(&base.join(&spec.weights)).map_err(|source| {
                    ManifestError::Tensor {
                        block: bi,
                        layer: li,
                        source,
                    }
                })?;
                if tensor.rank() != 2 {
                    return Err(ManifestError::NotAMatrix {
                        block: bi,
                        layer: li,
                    });
                }
                let dtype = tensor.dtype;
                let weights = tensor.matrix().map_err(|source| ManifestError::Tensor {
                    block: bi,
                    layer: li,
                    source,
                })?;
                if weights.cols() != incoming {
                    return Err(ManifestError::ChainBroken {
                        block: bi,
                        layer: li,
                        expected: incoming,
                        got: weights.cols(),
                    });
                }
                incoming = weights.rows();
                layers.push(LoadedLayer {
                    spec: spec.clone(),
                    weights,
                    dtype,
                });
            }
            blocks.push(layers);
        }
        Ok(Self { manifest, blocks })
    }

    pub fn input_dim(&self) -> usize {
        self.manifest.input_dim
    }
}
