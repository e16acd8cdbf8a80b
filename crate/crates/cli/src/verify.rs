//! Re-verification of a pruned model against its original: recompute every
//! layer's reconstruction loss by direct evaluation, recount zeros, and
//! cross-check a report if one is supplied.

use std::path::Path;

use thiserror::Error;

use thanos_core::oracle::loss_eval;
use thanos_core::{CalibrationSet, DenseMatrix};

use crate::manifest::{LoadedModel, ManifestError};
use crate::pipeline::forward_layer;
use crate::report::Report;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Prune(#[from] thanos_core::PruneError),
    #[error("models disagree in structure: {0}")]
    StructureMismatch(String),
}

#[derive(Debug)]
pub struct VerifySummary {
    pub lines: Vec<String>,
    pub failures: usize,
    pub total_loss: f64,
    pub global_sparsity: f64,
}

impl VerifySummary {
    pub fn ok(&self) -> bool {
        self.failures == 0
    }
}

/// Replay the capture pass on the original model, measure each pruned
/// layer against it, and compare with `report` when given (losses within
/// `tol` relative, zero counts exactly).
pub fn verify_pruned_model(
    original_path: &Path,
    pruned_path: &Path,
    calib: &CalibrationSet,
    report: Option<&Report>,
    tol: f64,
) -> Result<VerifySummary, VerifyError> {
    let original = LoadedModel::load(original_path)?;
    let pruned = LoadedModel::load(pruned_path)?;

    if original.blocks.len() != pruned.blocks.len() {
        return Err(VerifyError::StructureMismatch(format!(
            "{} blocks vs {}",
            original.blocks.len(),
            pruned.blocks.len()
        )));
    }

    let mut lines = Vec::new();
    let mut failures = 0usize;
    let mut total_loss = 0.0;
    let mut total_zeros = 0usize;
    let mut total_cells = 0usize;
    let mut flat_index = 0usize;

    // Each block's input is the PRUNED chain so far; within the block,
    // layer inputs are captured by a pass through the ORIGINAL weights,
    // mirroring the pruning pipeline.
    let mut block_input: Vec<DenseMatrix> = calib.samples().to_vec();

    for (bi, (ob, pb)) in original.blocks.iter().zip(&pruned.blocks).enumerate() {
        if ob.len() != pb.len() {
            return Err(VerifyError::StructureMismatch(format!(
                "block {bi}: {} layers vs {}",
                ob.len(),
                pb.len()
            )));
        }
        let mut captured = Vec::with_capacity(ob.len());
        let mut cur = block_input.clone();
        for layer in ob {
            captured.push(cur.clone());
            cur = forward_layer(&layer.weights, layer.spec.activation, &cur)?;
        }

        for (li, (ol, pl)) in ob.iter().zip(pb).enumerate() {
            if ol.weights.rows() != pl.weights.rows() || ol.weights.cols() != pl.weights.cols() {
                return Err(VerifyError::StructureMismatch(format!(
                    "block {bi} layer {li}: {}x{} vs {}x{}",
                    ol.weights.rows(),
                    ol.weights.cols(),
                    pl.weights.rows(),
                    pl.weights.cols()
                )));
            }
            let cal_layer = CalibrationSet::new(captured[li].clone())?;
            let delta = DenseMatrix::from_vec(
                ol.weights.rows(),
                ol.weights.cols(),
                pl.weights
                    .data()
                    .iter()
                    .zip(ol.weights.data())
                    .map(|(a, b)| a - b)
                    .collect(),
            )?;
            let loss = loss_eval(&delta, &cal_layer)?.value();
            let zeros = pl.weights.data().iter().filter(|&&v| v == 0.0).count();
            let cells = pl.weights.rows() * pl.weights.cols();
            total_loss += loss;
            total_zeros += zeros;
            total_cells += cells;

            let mut status = "ok";
            let mut detail = String::new();
            if let Some(rep) = report {
                match rep.layers.get(flat_index) {
                    Some(rec) => {
                        let loss_gap = (rec.loss_after - loss).abs();
                        if loss_gap > tol * loss.max(1.0) {
                            status = "FAIL";
                            detail =
                                format!(" reported loss {} recomputed {}", rec.loss_after, loss);
                        } else if rec.zeros != zeros {
                            status = "FAIL";
                            detail = format!(" reported zeros {} recounted {}", rec.zeros, zeros);
                        }
                    }
                    None => {
                        status = "FAIL";
                        detail = " missing from report".to_string();
                    }
                }
            }
            if status == "FAIL" {
                failures += 1;
            }
            lines.push(format!(
                "[{status}] block {bi} layer {li}: zeros {zeros}/{cells}, loss {loss:.6e}{detail}"
            ));
            flat_index += 1;
        }

        let mut cur = block_input;
        for layer in pb {
            cur = forward_layer(&layer.weights, layer.spec.activation, &cur)?;
        }
        block_input = cur;
    }

    if let Some(rep) = report {
        if rep.layers.len() != flat_index {
            failures += 1;
            lines.push(format!(
                "[FAIL] report lists {} layers, model has {flat_index}",
                rep.layers.len()
            ));
        }
    }

    let global_sparsity = if total_cells == 0 {
        0.0
    } else {
        total_zeros as f64 / total_cells as f64
    };
    lines.push(format!(
        "[{}] totals: zeros {total_zeros}/{total_cells} (sparsity {global_sparsity:.4}), summed loss {total_loss:.6e}",
        if failures == 0 { "ok" } else { "FAIL" }
    ));
    Ok(VerifySummary {
        lines,
        failures,
        total_loss,
        global_sparsity,
    })
}
