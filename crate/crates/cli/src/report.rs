use std::path::PathBuf;

use neft_core::distill::{KdPreset, Lambdas};
use neft_core::metrics::Metrics;
use neft_core::models::NeftConfig;
use neft_core::trainer::TrainReport;
use serde::{Deserialize, Serialize};

use crate::output::Provenance;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopSummary {
    pub total: u64,
    pub encoder: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    /// `test` when a test set was given, otherwise the best validation epoch.
    pub split: String,
    pub metrics: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillSummary {
    pub teacher: PathBuf,
    pub teacher_model: NeftConfig,
    pub lambdas: Lambdas,
}

/// Written as `report.json` by `train` and `distill`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub status: String,
    pub model: NeftConfig,
    pub param_count: u64,
    pub flops: FlopSummary,
    pub training: TrainReport,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distillation: Option<DistillSummary>,
}

impl ExperimentReport {
    /// Row label in comparison tables, e.g. `NEFT-Compact-w/o-KD`.
    pub fn label(&self) -> String {
        let base = self.model.variant.name();
        let Some(d) = &self.distillation else { return base.to_string() };
        match KdPreset::ALL.into_iter().find(|p| p.lambdas() == d.lambdas) {
            Some(KdPreset::Full) => base.to_string(),
            Some(KdPreset::OnlyRecon) => format!("{base}-onlyRecon"),
            Some(KdPreset::WithoutKd) => format!("{base}-w/o-KD"),
            None => format!("{base}-KD({},{},{})", d.lambdas.ra, d.lambdas.aa, d.lambdas.ca),
        }
    }
}
