use serde::{Deserialize, Serialize};

use crate::error::{NeftError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "NEFT")]
    Neft,
    Compact,
    Hybrid,
    Edge,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Neft, Variant::Compact, Variant::Hybrid, Variant::Edge];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Neft => "NEFT",
            Variant::Compact => "NEFT-Compact",
            Variant::Hybrid => "NEFT-Hybrid",
            Variant::Edge => "NEFT-Edge",
        }
    }

    /// True for the variants with a convolutional encoder.
    pub fn has_cnn_encoder(self) -> bool {
        matches!(self, Variant::Hybrid | Variant::Edge)
    }

    /// The variant a student of this kind is distilled from.
    pub fn teacher(self) -> Option<Variant> {
        match self {
            Variant::Compact => Some(Variant::Neft),
            Variant::Edge => Some(Variant::Hybrid),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = NeftError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "neft" => Ok(Variant::Neft),
            "compact" | "neft-compact" => Ok(Variant::Compact),
            "hybrid" | "neft-hybrid" => Ok(Variant::Hybrid),
            "edge" | "neft-edge" => Ok(Variant::Edge),
            _ => Err(NeftError::Config(format!("unknown variant `{s}` (expected NEFT, Compact, Hybrid or Edge)"))),
        }
    }
}

/// Declarative architecture description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeftConfig {
    pub variant: Variant,
    /// Reduction factor `L / K` with `L = 2 H W`.
    pub gamma: usize,
    /// Token width of the first (8x8) stage; the second stage is `2 c1` wide.
    pub c1: usize,
    pub heads_per_stage: [usize; 2],
    pub mlp_ratio: f64,
    pub input_shape: [usize; 3],
    /// Final width of the convolutional encoder (Hybrid / Edge only).
    pub c0: Option<usize>,
    /// Transformer blocks per stage, mirrored in encoder and decoder.
    pub blocks_per_stage: [usize; 2],
    pub seed: u64,
}

pub const DEFAULT_INPUT: [usize; 3] = [2, 32, 32];

impl NeftConfig {
    /// Default dimensions for a variant.
    pub fn preset(variant: Variant, gamma: usize) -> Self {
        let (c1, c0) = match variant {
            Variant::Neft => (40, None),
            Variant::Compact => (32, None),
            Variant::Hybrid => (40, Some(64)),
            Variant::Edge => (32, Some(44)),
        };
        NeftConfig {
            variant,
            gamma,
            c1,
            heads_per_stage: [4, 4],
            mlp_ratio: 2.0,
            input_shape: DEFAULT_INPUT,
            c0,
            blocks_per_stage: [1, 1],
            seed: 0,
        }
    }

    /// Small NEFT used for whole-model gradient checks.
    pub fn tiny() -> Self {
        NeftConfig {
            variant: Variant::Neft,
            gamma: 64,
            c1: 8,
            heads_per_stage: [2, 2],
            mlp_ratio: 2.0,
            input_shape: [2, 16, 16],
            c0: None,
            blocks_per_stage: [1, 1],
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn codeword_len(&self) -> usize {
        self.input_len() / self.gamma.max(1)
    }

    pub fn stage_widths(&self) -> [usize; 2] {
        [self.c1, 2 * self.c1]
    }

    /// Token grids of the two transformer stages.
    pub fn stage_grids(&self) -> [(usize, usize); 2] {
        let [_, h, w] = self.input_shape;
        [(h / 4, w / 4), (h / 8, w / 8)]
    }

    pub fn mlp_hidden(&self, width: usize) -> usize {
        (self.mlp_ratio * width as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input_shape;
        if c != 2 {
            return Err(NeftError::Config(format!("input must have 2 channels (real, imaginary), got {c}")));
        }
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(NeftError::Config(format!("input spatial dims {h}x{w} must be positive multiples of 8")));
        }
        if self.gamma == 0 || !self.input_len().is_multiple_of(self.gamma) {
            return Err(NeftError::Config(format!(
                "gamma = {} does not divide the input length {}; the codeword length must be an integer",
                self.gamma,
                self.input_len()
            )));
        }
        if self.c1 == 0 {
            return Err(NeftError::Config("c1 must be positive".into()));
        }
        for (stage, (&heads, width)) in self.heads_per_stage.iter().zip(self.stage_widths()).enumerate() {
            if heads == 0 || width % heads != 0 {
                return Err(NeftError::Config(format!(
                    "stage {} width {width} is not divisible by {heads} heads",
                    stage + 1
                )));
            }
            let hidden = self.mlp_ratio * width as f64;
            if !(self.mlp_ratio > 0.0) || (hidden - hidden.round()).abs() > 1e-9 || hidden.round() < 1.0 {
                return Err(NeftError::Config(format!(
                    "mlp_ratio {} does not give an integer hidden width for width {width}",
                    self.mlp_ratio
                )));
            }
        }
        if self.blocks_per_stage.contains(&0) {
            return Err(NeftError::Config("each stage needs at least one transformer block".into()));
        }
        match (self.variant.has_cnn_encoder(), self.c0) {
            (true, None) => return Err(NeftError::Config(format!("{} requires c0", self.variant))),
            (true, Some(c0)) if c0 == 0 || c0 % 4 != 0 => {
                return Err(NeftError::Config(format!("c0 = {c0} must be a positive multiple of 4")))
            }
            (false, Some(_)) => return Err(NeftError::Config(format!("c0 only applies to Hybrid and Edge, not {}", self.variant))),
            _ => {}
        }
        Ok(())
    }

    /// Checks that `self` can be distilled from `teacher`: matching attention
    /// layout and codeword length, and strictly narrower layers.
    pub fn check_student_of(&self, teacher: &NeftConfig) -> Result<()> {
        let incompatible = |msg: String| Err(NeftError::Compatibility(msg));
        if self.variant.teacher() != Some(teacher.variant) {
            return incompatible(format!("{} cannot be distilled from {}", self.variant, teacher.variant));
        }
        self.check_alignment(teacher)?;
        let narrower = match (self.c0, teacher.c0) {
            (Some(s), Some(t)) => s < t && self.c1 <= teacher.c1,
            _ => self.c1 < teacher.c1,
        };
        if !narrower {
            return incompatible(format!(
                "student widths (c1 {}, c0 {:?}) must be smaller than the teacher's (c1 {}, c0 {:?})",
                self.c1, self.c0, teacher.c1, teacher.c0
            ));
        }
        Ok(())
    }

    /// Structural contract for the alignment losses: same input, codeword
    /// length, attention layer count, heads and token grids.
    pub fn check_alignment(&self, teacher: &NeftConfig) -> Result<()> {
        let incompatible = |msg: String| Err(NeftError::Compatibility(msg));
        if self.input_shape != teacher.input_shape {
            return incompatible(format!("input shapes differ: {:?} vs {:?}", self.input_shape, teacher.input_shape));
        }
        if self.codeword_len() != teacher.codeword_len() {
            return incompatible(format!(
                "codeword lengths differ: student {} vs teacher {}",
                self.codeword_len(),
                teacher.codeword_len()
            ));
        }
        if self.heads_per_stage != teacher.heads_per_stage {
            return incompatible(format!(
                "head counts must match the teacher per stage: student {:?} vs teacher {:?}",
                self.heads_per_stage, teacher.heads_per_stage
            ));
        }
        if self.blocks_per_stage != teacher.blocks_per_stage || self.variant.has_cnn_encoder() != teacher.variant.has_cnn_encoder() {
            return incompatible(format!(
                "attention layer counts differ: student {} with {:?} blocks per stage vs teacher {} with {:?}",
                self.variant, self.blocks_per_stage, teacher.variant, teacher.blocks_per_stage
            ));
        }
        Ok(())
    }
}
