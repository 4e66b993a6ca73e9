//! Ordered layer list derived from a config, with the parameter and buffer
//! tensors each layer owns.

use serde::Serialize;

use super::config::NeftConfig;
use super::layers::relative_table_len;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Encoder,
    Decoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    /// Convolution with kernel = stride = `patch`.
    PatchEmbed { cin: usize, cout: usize, patch: usize, out_grid: (usize, usize) },
    VitBlock { grid: (usize, usize), width: usize, heads: usize, hidden: usize },
    /// 2x2 stride-2 convolution on the token grid.
    PatchMerge { cin: usize, cout: usize, out_grid: (usize, usize) },
    /// 3x3 stride-2 pad-1 convolution, batch norm, ReLU.
    ConvBnRelu { cin: usize, cout: usize, out_grid: (usize, usize) },
    CodewordProject { features: [usize; 3], k: usize },
    CodewordExpand { k: usize, features: [usize; 3] },
    /// Transposed convolution with kernel = stride = `k`.
    PatchDivide { cin: usize, cout: usize, k: usize, in_grid: (usize, usize) },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Init {
    /// Truncated normal, std 0.02, cut at two standard deviations (dense layers).
    TruncNormal,
    /// Uniform in `+-1/sqrt(fan_in)` (convolution kernels).
    FanInUniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Layer {
    pub name: String,
    pub part: Part,
    #[serde(flatten)]
    pub kind: LayerKind,
}

fn spec(layer: &str, suffix: &str, shape: &[usize], init: Init) -> TensorSpec {
    TensorSpec { name: format!("{layer}.{suffix}"), shape: shape.to_vec(), init }
}

impl Layer {
    pub fn params(&self) -> Vec<TensorSpec> {
        use Init::*;
        let n = self.name.as_str();
        match self.kind {
            LayerKind::PatchEmbed { cin, cout, patch, .. } => vec![
                spec(n, "weight", &[cout, cin, patch, patch], FanInUniform { fan_in: cin * patch * patch }),
                spec(n, "bias", &[cout], Zeros),
            ],
            LayerKind::VitBlock { grid, width: c, heads, hidden } => vec![
                spec(n, "ln1.gain", &[c], Ones),
                spec(n, "ln1.bias", &[c], Zeros),
                spec(n, "attn.wq", &[c, c], TruncNormal),
                spec(n, "attn.wk", &[c, c], TruncNormal),
                spec(n, "attn.wv", &[c, c], TruncNormal),
                spec(n, "attn.wo", &[c, c], TruncNormal),
                spec(n, "attn.rel_bias", &[heads, relative_table_len(grid)], Zeros),
                spec(n, "ln2.gain", &[c], Ones),
                spec(n, "ln2.bias", &[c], Zeros),
                spec(n, "mlp.fc1.weight", &[c, hidden], TruncNormal),
                spec(n, "mlp.fc1.bias", &[hidden], Zeros),
                spec(n, "mlp.fc2.weight", &[hidden, c], TruncNormal),
                spec(n, "mlp.fc2.bias", &[c], Zeros),
            ],
            LayerKind::PatchMerge { cin, cout, .. } => vec![
                spec(n, "weight", &[cout, cin, 2, 2], FanInUniform { fan_in: cin * 4 }),
                spec(n, "bias", &[cout], Zeros),
            ],
            LayerKind::ConvBnRelu { cin, cout, .. } => vec![
                spec(n, "weight", &[cout, cin, 3, 3], FanInUniform { fan_in: cin * 9 }),
                spec(n, "bn.gain", &[cout], Ones),
                spec(n, "bn.bias", &[cout], Zeros),
            ],
            LayerKind::CodewordProject { features, k } => vec![
                spec(n, "weight", &[features.iter().product(), k], TruncNormal),
                spec(n, "bias", &[k], Zeros),
            ],
            LayerKind::CodewordExpand { k, features } => {
                let len: usize = features.iter().product();
                vec![spec(n, "weight", &[k, len], TruncNormal), spec(n, "bias", &[len], Zeros)]
            }
            // each output pixel of a kernel = stride transposed conv sums `cin` terms
            LayerKind::PatchDivide { cin, cout, k, .. } => vec![
                spec(n, "weight", &[cin, cout, k, k], FanInUniform { fan_in: cin }),
                spec(n, "bias", &[cout], Zeros),
            ],
        }
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<TensorSpec> {
        match self.kind {
            LayerKind::ConvBnRelu { cout, .. } => vec![
                spec(&self.name, "bn.running_mean", &[cout], Init::Zeros),
                spec(&self.name, "bn.running_var", &[cout], Init::Ones),
            ],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(TensorSpec::numel).sum()
    }
}

/// Builds the layer list for a validated config.
pub fn topology(cfg: &NeftConfig) -> Result<Vec<Layer>> {
    cfg.validate()?;
    let [cin, h, w] = cfg.input_shape;
    let [c1, c2] = cfg.stage_widths();
    let [g1, g2] = cfg.stage_grids();
    let [h1, h2] = cfg.heads_per_stage;
    let [d1, d2] = cfg.blocks_per_stage;
    let k = cfg.codeword_len();
    let mut layers = Vec::new();
    let mut push = |name: String, part: Part, kind: LayerKind| layers.push(Layer { name, part, kind });
    let block = |grid, width, heads| LayerKind::VitBlock { grid, width, heads, hidden: cfg.mlp_hidden(width) };

    if let Some(c0) = cfg.c0 {
        let widths = [c0 / 4, c0 / 2, c0];
        let mut prev = cin;
        for (i, &cout) in widths.iter().enumerate() {
            let s = 2usize.pow(i as u32 + 1);
            push(format!("encoder.conv{}", i + 1), Part::Encoder, LayerKind::ConvBnRelu { cin: prev, cout, out_grid: (h / s, w / s) });
            prev = cout;
        }
        push("encoder.project".into(), Part::Encoder, LayerKind::CodewordProject { features: [c0, g2.0, g2.1], k });
    } else {
        push("encoder.patch_embed".into(), Part::Encoder, LayerKind::PatchEmbed { cin, cout: c1, patch: 4, out_grid: g1 });
        for b in 0..d1 {
            push(format!("encoder.stage1.block{b}"), Part::Encoder, block(g1, c1, h1));
        }
        push("encoder.patch_merge".into(), Part::Encoder, LayerKind::PatchMerge { cin: c1, cout: c2, out_grid: g2 });
        for b in 0..d2 {
            push(format!("encoder.stage2.block{b}"), Part::Encoder, block(g2, c2, h2));
        }
        push("encoder.project".into(), Part::Encoder, LayerKind::CodewordProject { features: [c2, g2.0, g2.1], k });
    }

    push("decoder.expand".into(), Part::Decoder, LayerKind::CodewordExpand { k, features: [c2, g2.0, g2.1] });
    for b in 0..d2 {
        push(format!("decoder.stage2.block{b}"), Part::Decoder, block(g2, c2, h2));
    }
    push("decoder.divide1".into(), Part::Decoder, LayerKind::PatchDivide { cin: c2, cout: c1, k: 2, in_grid: g2 });
    for b in 0..d1 {
        push(format!("decoder.stage1.block{b}"), Part::Decoder, block(g1, c1, h1));
    }
    push("decoder.divide2".into(), Part::Decoder, LayerKind::PatchDivide { cin: c1, cout: cin, k: 4, in_grid: g1 });
    Ok(layers)
}

/// Parameter count straight from the config, without allocating a model.
pub fn param_count(cfg: &NeftConfig) -> Result<usize> {
    Ok(topology(cfg)?.iter().map(Layer::param_count).sum())
}
