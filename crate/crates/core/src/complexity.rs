//! Analytic FLOPs and parameter accounting.
//!
//! Counting rules: global attention `4hwC^2 + 2(hw)^2 C`, windowed attention
//! `4hwC^2 + 2M^2 hwC`, convolutions `h_out w_out c_out k_h k_w c_in`, dense
//! layers `2 in out` per token. Activations, norms, residual adds and softmax
//! are not counted.

use serde::Serialize;

use crate::error::{NeftError, Result};
use crate::models::{topology, Layer, LayerKind, Model, NeftConfig, Part};
use neft_tensor::Element;

pub const CONVENTION: &str = "MSA 4hwC^2+2(hw)^2C; W-MSA 4hwC^2+2M^2hwC; conv h_out*w_out*c_out*k_h*k_w*c_in; \
dense 2*in*out per token; element-wise ops (activations, norms, residual adds, softmax) excluded";

/// Reported windowed-attention total for the windowed baseline that the
/// global-attention encoder is compared against.
pub const REPORTED_WMSA_BASELINE: u64 = 5_013_504;

pub fn msa_flops(h: u64, w: u64, c: u64) -> u64 {
    let hw = h * w;
    4 * hw * c * c + 2 * hw * hw * c
}

pub fn wmsa_flops(h: u64, w: u64, c: u64, m: u64) -> Result<u64> {
    if m == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
        return Err(NeftError::Config(format!("window size {m} does not divide the {h}x{w} feature map")));
    }
    let hw = h * w;
    Ok(4 * hw * c * c + 2 * m * m * hw * c)
}

pub fn conv_flops(h_out: u64, w_out: u64, c_out: u64, k_h: u64, k_w: u64, c_in: u64) -> u64 {
    h_out * w_out * c_out * k_h * k_w * c_in
}

pub fn dense_flops(inputs: u64, outputs: u64) -> u64 {
    2 * inputs * outputs
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: &'static str,
    pub part: Part,
    pub flops: u64,
    pub params: u64,
    /// Attention share of `flops` (zero for non-attention layers).
    pub attention_flops: u64,
}

pub fn layer_cost(layer: &Layer) -> LayerCost {
    let u = |v: usize| v as u64;
    let (kind, flops, attention_flops) = match layer.kind {
        LayerKind::PatchEmbed { cin, cout, patch, out_grid } => {
            ("patch_embed", conv_flops(u(out_grid.0), u(out_grid.1), u(cout), u(patch), u(patch), u(cin)), 0)
        }
        LayerKind::VitBlock { grid, width, hidden, .. } => {
            let attn = msa_flops(u(grid.0), u(grid.1), u(width));
            let tokens = u(grid.0 * grid.1);
            let mlp = tokens * (dense_flops(u(width), u(hidden)) + dense_flops(u(hidden), u(width)));
            ("vit_block", attn + mlp, attn)
        }
        LayerKind::PatchMerge { cin, cout, out_grid } => ("patch_merge", conv_flops(u(out_grid.0), u(out_grid.1), u(cout), 2, 2, u(cin)), 0),
        LayerKind::ConvBnRelu { cin, cout, out_grid } => ("conv_bn_relu", conv_flops(u(out_grid.0), u(out_grid.1), u(cout), 3, 3, u(cin)), 0),
        LayerKind::CodewordProject { features, k } => ("codeword_project", dense_flops(u(features.iter().product()), u(k)), 0),
        LayerKind::CodewordExpand { k, features } => ("codeword_expand", dense_flops(u(k), u(features.iter().product())), 0),
        LayerKind::PatchDivide { cin, cout, k, in_grid } => ("patch_divide", conv_flops(u(in_grid.0), u(in_grid.1), u(cout), u(k), u(k), u(cin)), 0),
    };
    LayerCost { name: layer.name.clone(), kind, part: layer.part, flops, params: u(layer.param_count()), attention_flops }
}

/// Global attention versus the windowed baseline, both at the stage-1 width.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionAnalysis {
    pub width: u64,
    /// `(h, w, blocks, flops)` per encoder stage.
    pub global_stages: Vec<(u64, u64, u64, u64)>,
    pub global_total: u64,
    pub window: u64,
    pub windowed_stages: Vec<(u64, u64, u64, u64)>,
    pub windowed_total: u64,
    pub windowed_reported: u64,
    pub windowed_matches_reported: bool,
}

/// Global MSA on the two encoder grids at width `c1` (one pass per block),
/// against a windowed encoder with 2 blocks at 16x16 and 4 at 8x8, `M = 4`.
pub fn attention_analysis(cfg: &NeftConfig) -> Result<AttentionAnalysis> {
    let c = cfg.c1 as u64;
    let grids = cfg.stage_grids();
    let global_stages: Vec<_> = grids
        .iter()
        .zip(cfg.blocks_per_stage)
        .map(|(&(h, w), blocks)| {
            let (h, w, b) = (h as u64, w as u64, blocks as u64);
            (h, w, b, b * msa_flops(h, w, c))
        })
        .collect();
    let [_, ih, iw] = cfg.input_shape;
    let window = 4;
    let mut windowed_stages = Vec::new();
    for (div, blocks) in [(2u64, 2u64), (4, 4)] {
        let (h, w) = (ih as u64 / div, iw as u64 / div);
        windowed_stages.push((h, w, blocks, blocks * wmsa_flops(h, w, c, window)?));
    }
    let windowed_total = windowed_stages.iter().map(|s| s.3).sum();
    Ok(AttentionAnalysis {
        width: c,
        global_total: global_stages.iter().map(|s| s.3).sum(),
        global_stages,
        window,
        windowed_stages,
        windowed_total,
        windowed_reported: REPORTED_WMSA_BASELINE,
        windowed_matches_reported: windowed_total == REPORTED_WMSA_BASELINE,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub model: String,
    pub gamma: usize,
    pub convention: &'static str,
    pub layers: Vec<LayerCost>,
    pub total_flops: u64,
    pub encoder_flops: u64,
    pub total_params: u64,
    pub encoder_params: u64,
    /// Attention FLOPs of the encoder blocks as built (stage 2 is `2 c1` wide).
    pub encoder_msa_flops: u64,
    pub attention_analysis: AttentionAnalysis,
}

pub fn complexity_for(cfg: &NeftConfig) -> Result<ComplexityReport> {
    let layers: Vec<LayerCost> = topology(cfg)?.iter().map(layer_cost).collect();
    let enc = |f: fn(&LayerCost) -> u64| layers.iter().filter(|l| l.part == Part::Encoder).map(f).sum::<u64>();
    Ok(ComplexityReport {
        model: cfg.variant.name().to_string(),
        gamma: cfg.gamma,
        convention: CONVENTION,
        total_flops: layers.iter().map(|l| l.flops).sum(),
        encoder_flops: enc(|l| l.flops),
        total_params: layers.iter().map(|l| l.params).sum(),
        encoder_params: enc(|l| l.params),
        encoder_msa_flops: enc(|l| l.attention_flops),
        attention_analysis: attention_analysis(cfg)?,
        layers,
    })
}

pub fn model_flops<T: Element>(model: &Model<T>) -> Result<ComplexityReport> {
    complexity_for(model.config())
}

pub fn param_count<T: Element>(model: &Model<T>) -> u64 {
    model.param_count() as u64
}

/// Thousands-separated integer.
pub fn group(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl ComplexityReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("# {} (gamma = {})\n# counting: {}\n\n", self.model, self.gamma, self.convention));
        s.push_str(&format!("{:<26} {:<17} {:<8} {:>12} {:>14}\n", "layer", "kind", "part", "params", "FLOPs"));
        for l in &self.layers {
            let part = match l.part {
                Part::Encoder => "encoder",
                Part::Decoder => "decoder",
            };
            s.push_str(&format!("{:<26} {:<17} {:<8} {:>12} {:>14}\n", l.name, l.kind, part, group(l.params), group(l.flops)));
        }
        s.push('\n');
        s.push_str(&format!("{:<6} {:<14} {:>12} {:>10} {:>12}\n", "gamma", "model", "parameters", "FLOPs (M)", "enc FLOPs (M)"));
        s.push_str(&format!(
            "{:<6} {:<14} {:>12} {:>10.2} {:>12.2}\n\n",
            self.gamma,
            self.model,
            group(self.total_params),
            self.total_flops as f64 / 1e6,
            self.encoder_flops as f64 / 1e6
        ));
        s.push_str(&format!("encoder attention as built: {}\n", group(self.encoder_msa_flops)));
        let a = &self.attention_analysis;
        s.push_str(&format!("global MSA at C = {}:\n", a.width));
        for (h, w, b, f) in &a.global_stages {
            s.push_str(&format!("  {b} x {h}x{w}: {}\n", group(*f)));
        }
        s.push_str(&format!("encoder MSA subtotal: {}\n", group(a.global_total)));
        s.push_str(&format!("windowed MSA at C = {}, M = {}:\n", a.width, a.window));
        for (h, w, b, f) in &a.windowed_stages {
            s.push_str(&format!("  {b} x {h}x{w}: {}\n", group(*f)));
        }
        s.push_str(&format!(
            "windowed total: {} (reported {}{})\n",
            group(a.windowed_total),
            group(a.windowed_reported),
            if a.windowed_matches_reported { "" } else { "; not reproduced by the formula" }
        ));
        s
    }
}
