use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use neft_core::channel::{ArrayGeometry, DEFAULT_BS_ANTENNAS, DEFAULT_CARRIER_HZ, DEFAULT_R_BOUNDS};
use neft_core::distill::{KdPreset, Lambdas};
use neft_core::models::{NeftConfig, Variant};
use neft_core::trainer::{MetricDomain, TrainConfig, DEFAULT_DISTILL_LR};
use neft_tensor::DType;
use serde::{Deserialize, Serialize};

use crate::exit::usage;

/// Everything needed to reproduce one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub distill: DistillConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub n1: usize,
    pub n2: usize,
    pub carrier_hz: f64,
    /// Element spacing in meters; half a wavelength when absent.
    pub spacing: Option<f64>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig { n1: DEFAULT_BS_ANTENNAS, n2: 1, carrier_hz: DEFAULT_CARRIER_HZ, spacing: None }
    }
}

impl GeometryConfig {
    pub fn build(&self) -> Result<ArrayGeometry> {
        let half = ArrayGeometry::half_wavelength(self.n1, self.n2, self.carrier_hz)?;
        Ok(match self.spacing {
            Some(d) => ArrayGeometry::new(self.n1, self.n2, d, half.wavelength)?,
            None => half,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub count: usize,
    /// Distance bounds as fractions of the Rayleigh distance.
    pub r_lo: f64,
    pub r_hi: f64,
    pub seed: u64,
    pub dtype: DType,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { count: 100, r_lo: DEFAULT_R_BOUNDS.0, r_hi: DEFAULT_R_BOUNDS.1, seed: 0, dtype: DType::F32 }
    }
}

/// Variant preset plus optional dimension overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct ModelConfig {
    pub variant: Option<Variant>,
    pub gamma: Option<usize>,
    pub c1: Option<usize>,
    pub c0: Option<usize>,
    pub heads_per_stage: Option<[usize; 2]>,
    pub mlp_ratio: Option<f64>,
    pub blocks_per_stage: Option<[usize; 2]>,
    pub input_shape: Option<[usize; 3]>,
    pub seed: u64,
}


impl ModelConfig {
    /// Fills the unset variant, gamma and input shape, then builds the
    /// architecture. The filled values are written back so the embedded
    /// config is fully resolved.
    pub fn resolve(&mut self, variant: Variant, gamma: usize, input_shape: [usize; 3]) -> Result<NeftConfig> {
        let variant = *self.variant.get_or_insert(variant);
        let gamma = *self.gamma.get_or_insert(gamma);
        let input_shape = *self.input_shape.get_or_insert(input_shape);
        let mut cfg = NeftConfig::preset(variant, gamma);
        cfg.input_shape = input_shape;
        cfg.seed = self.seed;
        if let Some(c1) = self.c1 {
            cfg.c1 = c1;
        }
        if self.c0.is_some() {
            cfg.c0 = self.c0;
        }
        if let Some(h) = self.heads_per_stage {
            cfg.heads_per_stage = h;
        }
        if let Some(r) = self.mlp_ratio {
            cfg.mlp_ratio = r;
        }
        if let Some(b) = self.blocks_per_stage {
            cfg.blocks_per_stage = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub lambdas: Lambdas,
    pub lr_max: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig { lambdas: Lambdas::default(), lr_max: DEFAULT_DISTILL_LR }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub batch_size: usize,
    pub domain: MetricDomain,
    pub sample_index: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { batch_size: 200, domain: MetricDomain::Normalized, sample_index: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub teacher: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub reports: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

impl PathsConfig {
    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        match value {
            Some(p) => Ok(p),
            None => Err(usage(format!("missing required input: pass {flag} or set it in the config file"))),
        }
    }
}

/// Reads a run config. Artifacts written by this tool carry their config
/// under `run_config` and can be passed here directly to re-run them.
pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let value = match value.get("run_config") {
        Some(embedded) => embedded.clone(),
        None => value,
    };
    serde_json::from_value(value).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

pub fn load_or_default(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Accepts a preset name (`full`, `only_recon`, `without_kd`) or three
/// comma-separated weights.
pub fn parse_lambdas(s: &str) -> Result<Lambdas> {
    if let Ok(p) = s.parse::<KdPreset>() {
        return Ok(p.lambdas());
    }
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        bail!(usage(format!("--lambdas expects a preset or three comma-separated weights, got `{s}`")));
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.parse().map_err(|_| usage(format!("`{p}` is not a number")))?;
    }
    let l = Lambdas { ra: v[0], aa: v[1], ca: v[2] };
    l.validate()?;
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"epoch": 3}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 200);
    }

    #[test]
    fn lambdas_parse() {
        assert_eq!(parse_lambdas("0,0,0").unwrap(), Lambdas { ra: 0.0, aa: 0.0, ca: 0.0 });
        assert_eq!(parse_lambdas("only_recon").unwrap(), KdPreset::OnlyRecon.lambdas());
        assert_eq!(parse_lambdas("0.3, 2, 2").unwrap(), KdPreset::Full.lambdas());
        assert!(parse_lambdas("1,2").is_err());
        assert!(parse_lambdas("1,-2,0").is_err());
    }

    #[test]
    fn model_resolution_fills_defaults() {
        let mut m = ModelConfig { c1: Some(24), ..Default::default() };
        let cfg = m.resolve(Variant::Neft, 32, [2, 32, 32]).unwrap();
        assert_eq!((cfg.c1, cfg.gamma), (24, 32));
        assert_eq!(m.variant, Some(Variant::Neft));
        assert_eq!(m.input_shape, Some([2, 32, 32]));
    }
}
