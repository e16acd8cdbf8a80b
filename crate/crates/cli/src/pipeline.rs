//! Block-by-block pruning pipeline over a loaded model.
//!
//! For each block: one forward pass with the original weights captures
//! every layer's calibration input, each layer is then pruned
//! independently against its captured input, and a second forward pass
//! through the pruned block produces the next block's input. Outputs are
//! written as fresh tensor files (in the dtype they arrived with) plus a
//! manifest, and the run is summarized in a [`Report`].

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use thanos_core::baselines::{
    prune_magnitude, prune_sparsegpt, prune_wanda, PruneOutcome, SparsityTarget,
};
use thanos_core::thanos::{
    prune_thanos_nm, prune_thanos_structured, prune_thanos_unstructured, ThanosConfig,
    ThanosPattern,
};
use thanos_core::{CalibrationSet, DenseMatrix, PruneError};

use crate::manifest::{Activation, LoadedModel, ManifestError};
use crate::report::{emit_report, LayerRecord, Report};
use crate::tensor::{save_tensor, TensorData, TensorError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("calibration input dim {got} does not match model input dim {expected}")]
    CalibrationMismatch { expected: usize, got: usize },

    #[error("block {block} layer {layer}: {source}")]
    Layer {
        block: usize,
        layer: usize,
        source: PruneError,
    },

    #[error(transparent)]
    Prune(#[from] PruneError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Magnitude,
    Wanda,
    Sparsegpt,
    Thanos,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Magnitude => "magnitude",
            Method::Wanda => "wanda",
            Method::Sparsegpt => "sparsegpt",
            Method::Thanos => "thanos",
        }
    }
}

/// Sparsity structure, round-tripping through its textual form
/// (`unstructured`, `structured`, or `n:m` such as `2:4`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Pattern {
    Unstructured,
    Nm { n: usize, m: usize },
    Structured,
}

impl Pattern {
    pub fn parse(text: &str) -> Result<Self, String> {
        match text {
            "unstructured" => Ok(Pattern::Unstructured),
            "structured" => Ok(Pattern::Structured),
            other => {
                let (n, m) = other.split_once(':').ok_or_else(|| {
                    format!("pattern must be unstructured, structured, or n:m, got {other:?}")
                })?;
                let n: usize = n
                    .parse()
                    .map_err(|_| format!("bad n in pattern {other:?}"))?;
                let m: usize = m
                    .parse()
                    .map_err(|_| format!("bad m in pattern {other:?}"))?;
                if n == 0 || n >= m {
                    return Err(format!("pattern {other:?} needs 0 < n < m"));
                }
                Ok(Pattern::Nm { n, m })
            }
        }
    }
}

impl std::fmt::Display for Pattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Pattern::Unstructured => write!(f, "unstructured"),
            Pattern::Nm { n, m } => write!(f, "{n}:{m}"),
            Pattern::Structured => write!(f, "structured"),
        }
    }
}

impl TryFrom<String> for Pattern {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        Pattern::parse(&s)
    }
}

impl From<Pattern> for String {
    fn from(p: Pattern) -> String {
        p.to_string()
    }
}

/// Fully resolved knobs for one pruning run; echoed verbatim into reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: Method,
    pub sparsity: f64,
    pub pattern: Pattern,
    pub block_size: usize,
    /// Mask re-selection interval for the sequential pruner; 0 means
    /// "same as block_size".
    pub mask_block: usize,
    pub alpha: f64,
    pub lambda_rel: f64,
    pub seed: u64,
    pub row_chunk: usize,
}

impl RunConfig {
    fn thanos_config(&self) -> ThanosConfig {
        let pattern = match self.pattern {
            Pattern::Unstructured => ThanosPattern::Unstructured,
            Pattern::Nm { n, m } => ThanosPattern::SemiStructured { n, m },
            Pattern::Structured => ThanosPattern::Structured,
        };
        ThanosConfig {
            block_size: self.block_size,
            sparsity: self.sparsity,
            pattern,
            alpha: self.alpha,
            lambda_rel: self.lambda_rel,
            row_chunk: self.row_chunk,
        }
    }
}

/// Prune one layer according to the configured method and pattern.
pub fn prune_layer(
    w: &DenseMatrix,
    cal: &CalibrationSet,
    cfg: &RunConfig,
) -> Result<PruneOutcome, PruneError> {
    match cfg.method {
        Method::Magnitude => prune_magnitude(w, cal, cfg.sparsity),
        Method::Wanda => prune_wanda(w, cal, cfg.sparsity),
        Method::Sparsegpt => {
            let target = match cfg.pattern {
                Pattern::Unstructured => SparsityTarget::Ratio(cfg.sparsity),
                Pattern::Nm { n, m } => SparsityTarget::Pattern { n, m },
                Pattern::Structured => {
                    return Err(PruneError::InvalidConfig {
                        reason: "structured pattern requires the thanos method".into(),
                    })
                }
            };
            prune_sparsegpt(
                w,
                cal,
                target,
                cfg.block_size,
                cfg.mask_block,
                cfg.lambda_rel,
            )
        }
        Method::Thanos => {
            let tcfg = cfg.thanos_config();
            match cfg.pattern {
                Pattern::Unstructured => prune_thanos_unstructured(w, cal, &tcfg),
                Pattern::Nm { n, m } => prune_thanos_nm(w, cal, n, m, cfg.alpha, &tcfg),
                Pattern::Structured => {
                    prune_thanos_structured(w, cal, cfg.sparsity, cfg.alpha, cfg.lambda_rel)
                }
            }
        }
    }
}

/// Apply one linear layer to every sample: `W x` then the activation.
pub fn forward_layer(
    w: &DenseMatrix,
    activation: Activation,
    samples: &[DenseMatrix],
) -> Result<Vec<DenseMatrix>, PruneError> {
    samples
        .iter()
        .map(|x| {
            let out = w.matmul(x)?;
            let data = out.data().iter().map(|&v| activation.apply(v)).collect();
            DenseMatrix::from_vec(out.rows(), out.cols(), data)
        })
        .collect()
}

/// Capture every layer's calibration input for one block by a forward pass
/// with the given weights. Returns per-layer sample lists plus the block
/// output.
fn capture_block_inputs(
    weights: &[&DenseMatrix],
    activations: &[Activation],
    block_input: &[DenseMatrix],
) -> Result<(Vec<Vec<DenseMatrix>>, Vec<DenseMatrix>), PruneError> {
    let mut captured = Vec::with_capacity(weights.len());
    let mut cur = block_input.to_vec();
    for (w, &act) in weights.iter().zip(activations) {
        captured.push(cur.clone());
        cur = forward_layer(w, act, &cur)?;
    }
    Ok((captured, cur))
}

/// Run the whole pipeline and write pruned tensors plus a manifest into
/// `out_dir`. Output tensors reuse the manifest's relative paths and the
/// source dtypes, so a rerun with identical inputs is byte-identical.
pub fn prune_model(
    model: &LoadedModel,
    calib: &CalibrationSet,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<Report, PipelineError> {
    if calib.input_dim() != model.input_dim() {
        return Err(PipelineError::CalibrationMismatch {
            expected: model.input_dim(),
            got: calib.input_dim(),
        });
    }
    std::fs::create_dir_all(out_dir)?;

    let mut block_input: Vec<DenseMatrix> = calib.samples().to_vec();
    let mut records: Vec<LayerRecord> = Vec::with_capacity(model.manifest.layer_count());

    for (bi, block) in model.blocks.iter().enumerate() {
        let weights: Vec<&DenseMatrix> = block.iter().map(|l| &l.weights).collect();
        let acts: Vec<Activation> = block.iter().map(|l| l.spec.activation).collect();
        let (captured, _) = capture_block_inputs(&weights, &acts, &block_input)?;

        let mut pruned_weights: Vec<DenseMatrix> = Vec::with_capacity(block.len());
        for (li, layer) in block.iter().enumerate() {
            let cal_layer = CalibrationSet::new(captured[li].clone()).map_err(|source| {
                PipelineError::Layer {
                    block: bi,
                    layer: li,
                    source,
                }
            })?;
            let started = Instant::now();
            let outcome = prune_layer(&layer.weights, &cal_layer, cfg).map_err(|source| {
                PipelineError::Layer {
                    block: bi,
                    layer: li,
                    source,
                }
            })?;
            let seconds = started.elapsed().as_secs_f64();

            let cells = outcome.pruned.rows() * outcome.pruned.cols();
            records.push(LayerRecord {
                block: bi,
                layer: li,
                method: outcome.method.clone(),
                rows: outcome.pruned.rows(),
                cols: outcome.pruned.cols(),
                cells,
                zeros: outcome.zeros(),
                sparsity: outcome.sparsity(),
                loss_before: outcome.loss_before,
                loss_after: outcome.loss_after,
                seconds,
            });

            let path = out_dir.join(&layer.spec.weights);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            save_tensor(
                &path,
                &TensorData::from_matrix(&outcome.pruned, layer.dtype),
            )?;
            pruned_weights.push(outcome.pruned);
        }

        // second pass through the pruned block feeds the next block
        let mut cur = block_input;
        for (li, layer) in block.iter().enumerate() {
            cur = forward_layer(&pruned_weights[li], layer.spec.activation, &cur)?;
        }
        block_input = cur;
    }

    model.manifest.save(&out_dir.join("model.json"))?;
    Ok(emit_report(cfg.clone(), records))
}
