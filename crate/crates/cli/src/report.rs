//! Pruning run reports: per-layer records plus totals, serialized as JSON
//! with stable field ordering, with an optional CSV flattening.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pipeline::RunConfig;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerRecord {
    pub block: usize,
    pub layer: usize,
    pub method: String,
    pub rows: usize,
    pub cols: usize,
    pub cells: usize,
    pub zeros: usize,
    pub sparsity: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Totals {
    pub zeros: usize,
    pub cells: usize,
    pub global_sparsity: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: RunConfig,
    pub layers: Vec<LayerRecord>,
    pub totals: Totals,
}

/// Assemble a report; totals are sums over the per-layer records and the
/// global sparsity is total zeros over total cells.
pub fn emit_report(config: RunConfig, layers: Vec<LayerRecord>) -> Report {
    let zeros: usize = layers.iter().map(|l| l.zeros).sum();
    let cells: usize = layers.iter().map(|l| l.cells).sum();
    let totals = Totals {
        zeros,
        cells,
        global_sparsity: if cells == 0 {
            0.0
        } else {
            zeros as f64 / cells as f64
        },
        loss_before: layers.iter().map(|l| l.loss_before).sum(),
        loss_after: layers.iter().map(|l| l.loss_after).sum(),
        seconds: layers.iter().map(|l| l.seconds).sum(),
    };
    Report {
        schema_version: REPORT_SCHEMA_VERSION,
        config,
        layers,
        totals,
    }
}

impl Report {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, self.to_json_pretty().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// One CSV row per layer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "block,layer,method,rows,cols,cells,zeros,sparsity,loss_before,loss_after,seconds\n",
        );
        for l in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                l.block,
                l.layer,
                l.method,
                l.rows,
                l.cols,
                l.cells,
                l.zeros,
                l.sparsity,
                l.loss_before,
                l.loss_after,
                l.seconds
            ));
        }
        out
    }
}
