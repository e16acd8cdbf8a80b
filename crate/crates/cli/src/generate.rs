//! Synthesis of toy multi-block models plus matching calibration tensors.
//! Entirely seed-driven: identical arguments produce identical bytes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use thanos_core::DenseMatrix;

use crate::manifest::{Activation, LayerSpec, ManifestError, ModelManifest};
use crate::tensor::{save_tensor, Dtype, TensorData, TensorError};

#[derive(Debug, Clone)]
pub struct GenSpec {
    pub blocks: usize,
    pub layers_per_block: usize,
    pub dims: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            blocks: 2,
            layers_per_block: 2,
            dims: 64,
            samples: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("invalid generation spec: {0}")]
    Invalid(String),
}

fn random_matrix(rng: &mut ChaCha12Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-1.0..1.0) * scale)
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("finite by construction")
}

/// Write `model.json`, one square weight tensor per layer, and a rank-3
/// calibration tensor `calib.thns` into `out_dir`.
pub fn generate_model(spec: &GenSpec, out_dir: &Path) -> Result<(), GenError> {
    if spec.blocks == 0 || spec.layers_per_block == 0 || spec.dims == 0 || spec.samples == 0 {
        return Err(GenError::Invalid(
            "blocks, layers, dims, and samples must all be positive".into(),
        ));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);

    // keeps activation magnitudes roughly stable across layers
    let weight_scale = (3.0 / spec.dims as f64).sqrt();

    let mut blocks = Vec::with_capacity(spec.blocks);
    for bi in 0..spec.blocks {
        let mut layers = Vec::with_capacity(spec.layers_per_block);
        for li in 0..spec.layers_per_block {
            let name = format!("layer_{bi}_{li}.thns");
            let w = random_matrix(&mut rng, spec.dims, spec.dims, weight_scale);
            save_tensor(
                &out_dir.join(&name),
                &TensorData::from_matrix(&w, Dtype::F64),
            )?;
            let activation = if li + 1 == spec.layers_per_block {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(LayerSpec {
                weights: name,
                activation,
            });
        }
        blocks.push(layers);
    }

    let samples: Vec<DenseMatrix> = (0..spec.samples)
        .map(|_| random_matrix(&mut rng, spec.dims, spec.dims, 1.0))
        .collect();
    save_tensor(
        &out_dir.join("calib.thns"),
        &TensorData::from_samples(&samples, Dtype::F64),
    )?;

    let manifest = ModelManifest {
        schema_version: 1,
        input_dim: spec.dims,
        blocks,
    };
    manifest.save(&out_dir.join("model.json"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::LoadedModel;
    use crate::tensor::load_tensor;

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("thns-gen-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn generated_model_loads_and_chains() {
        let dir = tmpdir("load");
        let spec = GenSpec {
            blocks: 2,
            layers_per_block: 2,
            dims: 8,
            samples: 3,
            seed: 7,
        };
        generate_model(&spec, &dir).unwrap();
        let model = LoadedModel::load(&dir.join("model.json")).unwrap();
        assert_eq!(model.blocks.len(), 2);
        let cal = load_tensor(&dir.join("calib.thns"))
            .unwrap()
            .calibration()
            .unwrap();
        assert_eq!(cal.count(), 3);
        assert_eq!(cal.input_dim(), 8);
    }

    #[test]
    fn identical_seeds_identical_bytes() {
        let d1 = tmpdir("seed1");
        let d2 = tmpdir("seed2");
        let spec = GenSpec {
            blocks: 1,
            layers_per_block: 2,
            dims: 6,
            samples: 2,
            seed: 42,
        };
        generate_model(&spec, &d1).unwrap();
        generate_model(&spec, &d2).unwrap();
        for name in [
            "model.json",
            "layer_0_0.thns",
            "layer_0_1.thns",
            "calib.thns",
        ] {
            let a = std::fs::read(d1.join(name)).unwrap();
            let b = std::fs::read(d2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
    }

    #[test]
    fn different_seeds_differ() {
        let d1 = tmpdir("s1");
        let d2 = tmpdir("s2");
        generate_model(
            &GenSpec {
                seed: 1,
                ..GenSpec::default()
            },
            &d1,
        )
        .unwrap();
        generate_model(
            &GenSpec {
                seed: 2,
                ..GenSpec::default()
            },
            &d2,
        )
        .unwrap();
        let a = std::fs::read(d1.join("layer_0_0.thns")).unwrap();
        let b = std::fs::read(d2.join("layer_0_0.thns")).unwrap();
        assert_ne!(a, b);
    }
}
