use indexmap::IndexMap;
use neft_tensor::{BatchNormMode, Element, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::NeftConfig;
use super::layers::{self, MsaWeights, VitWeights, BATCH_NORM_MOMENTUM};
use super::topology::{topology, Init, Layer, LayerKind, Part, TensorSpec};
use crate::error::{NeftError, Result};

pub const INIT_STD: f64 = 0.02;

/// How parameters enter the tape and which batch-norm statistics are used.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardMode {
    /// Record parameters as gradient-tracking leaves.
    pub trainable: bool,
    /// Normalize with batch statistics instead of the running buffers.
    pub batch_stats: bool,
}

impl ForwardMode {
    pub const TRAIN: ForwardMode = ForwardMode { trainable: true, batch_stats: true };
    pub const EVAL: ForwardMode = ForwardMode { trainable: false, batch_stats: false };
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub layer: String,
    pub part: Part,
    /// 1 for the 8x8 stage, 2 for the 4x4 stage.
    pub stage: usize,
    pub block: usize,
    pub heads: usize,
    pub tokens: usize,
    /// Post-softmax maps, `[B, heads, N, N]`.
    pub var: Var,
}

/// Handles into the tape for one forward pass.
#[derive(Debug)]
pub struct ForwardPass {
    pub reconstruction: Var,
    pub codeword: Var,
    pub attention: Vec<AttentionRecord>,
    pub params: IndexMap<String, Var>,
    /// Batch-norm outputs per layer, for updating running statistics.
    pub batch_norm: Vec<(String, Var)>,
}

/// Detached results of an evaluation-mode forward pass.
#[derive(Clone, Debug)]
pub struct Inference<T: Element> {
    pub reconstruction: Tensor<T>,
    pub codeword: Tensor<T>,
    pub attention: Vec<(AttentionRecord, Tensor<T>)>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Element = f64> {
    config: NeftConfig,
    layers: Vec<Layer>,
    params: IndexMap<String, Tensor<T>>,
    buffers: IndexMap<String, Tensor<T>>,
}

fn trunc_normal(rng: &mut ChaCha8Rng, dist: &Normal<f64>) -> f64 {
    loop {
        let v = dist.sample(rng);
        if v.abs() <= 2.0 * INIT_STD {
            return v;
        }
    }
}

fn init_tensor<T: Element>(spec: &TensorSpec, rng: &mut ChaCha8Rng, dist: &Normal<f64>) -> Tensor<T> {
    match spec.init {
        Init::Zeros => Tensor::zeros(&spec.shape),
        Init::Ones => Tensor::ones(&spec.shape),
        Init::TruncNormal => Tensor::from_fn(&spec.shape, |_| T::cast(trunc_normal(rng, dist))),
        Init::FanInUniform { fan_in } => {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(&spec.shape, |_| T::cast(rng.gen_range(-bound..bound)))
        }
    }
}

impl<T: Element> Model<T> {
    /// Builds and initializes a model; identical configs give identical parameters.
    pub fn build(config: &NeftConfig) -> Result<Self> {
        let layers = topology(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dist = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = IndexMap::new();
        let mut buffers = IndexMap::new();
        for layer in &layers {
            for spec in layer.params() {
                let t = init_tensor(&spec, &mut rng, &dist);
                params.insert(spec.name, t);
            }
            for spec in layer.buffers() {
                let t = init_tensor(&spec, &mut rng, &dist);
                buffers.insert(spec.name, t);
            }
        }
        Ok(Model { config: config.clone(), layers, params, buffers })
    }

    /// Assembles a model from stored tensors, checking every name and shape
    /// against the topology derived from `config`.
    pub fn from_parts(config: NeftConfig, params: IndexMap<String, Tensor<T>>, buffers: IndexMap<String, Tensor<T>>) -> Result<Self> {
        let layers = topology(&config)?;
        let check = |what: &str, specs: Vec<TensorSpec>, have: &IndexMap<String, Tensor<T>>| -> Result<()> {
            if specs.len() != have.len() {
                return Err(NeftError::Format(format!("expected {} {what} tensors, found {}", specs.len(), have.len())));
            }
            for s in specs {
                match have.get(&s.name) {
                    None => return Err(NeftError::Format(format!("missing {what} `{}`", s.name))),
                    Some(t) if t.shape() != s.shape.as_slice() => {
                        return Err(NeftError::Format(format!(
                            "{what} `{}` has shape {:?}, config requires {:?}",
                            s.name,
                            t.shape(),
                            s.shape
                        )))
                    }
                    _ => {}
                }
            }
            Ok(())
        };
        check("parameter", layers.iter().flat_map(Layer::params).collect(), &params)?;
        check("buffer", layers.iter().flat_map(Layer::buffers).collect(), &buffers)?;
        Ok(Model { config, layers, params, buffers })
    }

    pub fn config(&self) -> &NeftConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &IndexMap<String, Tensor<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut IndexMap<String, Tensor<T>> {
        &mut self.params
    }

    pub fn buffers(&self) -> &IndexMap<String, Tensor<T>> {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut IndexMap<String, Tensor<T>> {
        &mut self.buffers
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        let conv = |m: &IndexMap<String, Tensor<T>>| m.iter().map(|(k, v)| (k.clone(), v.cast::<U>())).collect();
        Model { config: self.config.clone(), layers: self.layers.clone(), params: conv(&self.params), buffers: conv(&self.buffers) }
    }

    /// Runs encoder and decoder on `x` (`[B, 2, H, W]`).
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: ForwardMode) -> Result<ForwardPass> {
        let [c, h, w] = self.config.input_shape;
        let xs = tape.shape(x).to_vec();
        if xs.len() != 4 || xs[1..] != [c, h, w] {
            return Err(NeftError::Dimension(format!("model expects [B, {c}, {h}, {w}] input, got {xs:?}")));
        }
        let mut bound: IndexMap<String, Var> = IndexMap::with_capacity(self.params.len());
        for (name, t) in &self.params {
            let v = if mode.trainable { tape.param(t) } else { tape.constant(t) };
            bound.insert(name.clone(), v);
        }
        self.forward_bound(tape, x, mode, bound)
    }

    /// Like [`forward`](Self::forward) but with parameters already on the
    /// tape, given in [`params`](Self::params) order.
    pub fn forward_with_params(&self, tape: &mut Tape<T>, x: Var, mode: ForwardMode, vars: &[Var]) -> Result<ForwardPass> {
        if vars.len() != self.params.len() {
            return Err(NeftError::Dimension(format!("expected {} parameter handles, got {}", self.params.len(), vars.len())));
        }
        let mut bound = IndexMap::with_capacity(vars.len());
        for ((name, t), &v) in self.params.iter().zip(vars) {
            if tape.shape(v) != t.shape() {
                return Err(NeftError::Dimension(format!("handle for `{name}` has shape {:?}, expected {:?}", tape.shape(v), t.shape())));
            }
            bound.insert(name.clone(), v);
        }
        self.forward_bound(tape, x, mode, bound)
    }

    fn forward_bound(&self, tape: &mut Tape<T>, x: Var, mode: ForwardMode, bound: IndexMap<String, Var>) -> Result<ForwardPass> {
        let [c, h, w] = self.config.input_shape;
        let xs = tape.shape(x).to_vec();
        if xs.len() != 4 || xs[1..] != [c, h, w] {
            return Err(NeftError::Dimension(format!("model expects [B, {c}, {h}, {w}] input, got {xs:?}")));
        }
        let batch = xs[0];
        let p = |name: &str, suffix: &str| bound[format!("{name}.{suffix}").as_str()];

        let mut attention = Vec::new();
        let mut batch_norm = Vec::new();
        let mut cur = x;
        let mut codeword = None;
        for layer in &self.layers {
            let n = layer.name.as_str();
            cur = match layer.kind {
                LayerKind::PatchEmbed { patch, out_grid, cout, .. } => {
                    let y = layers::patch_embed(tape, cur, p(n, "weight"), p(n, "bias"), patch)?;
                    expect_shape(tape, y, &[batch, out_grid.0 * out_grid.1, cout], n)?;
                    y
                }
                LayerKind::VitBlock { grid, heads, width, .. } => {
                    let weights = VitWeights {
                        ln1_gain: p(n, "ln1.gain"),
                        ln1_bias: p(n, "ln1.bias"),
                        msa: MsaWeights {
                            wq: p(n, "attn.wq"),
                            wk: p(n, "attn.wk"),
                            wv: p(n, "attn.wv"),
                            wo: p(n, "attn.wo"),
                            rel_bias: p(n, "attn.rel_bias"),
                        },
                        ln2_gain: p(n, "ln2.gain"),
                        ln2_bias: p(n, "ln2.bias"),
                        fc1_weight: p(n, "mlp.fc1.weight"),
                        fc1_bias: p(n, "mlp.fc1.bias"),
                        fc2_weight: p(n, "mlp.fc2.weight"),
                        fc2_bias: p(n, "mlp.fc2.bias"),
                    };
                    let tokens = grid.0 * grid.1;
                    let input = if tape.shape(cur).len() == 4 { layers::map_to_tokens(tape, cur)? } else { cur };
                    expect_shape(tape, input, &[batch, tokens, width], n)?;
                    let (y, attn) = layers::vit_block(tape, input, &weights, heads, grid)?;
                    let (stage, block) = stage_and_block(n);
                    attention.push(AttentionRecord { layer: n.to_string(), part: layer.part, stage, block, heads, tokens, var: attn });
                    y
                }
                LayerKind::PatchMerge { out_grid, cout, .. } => {
                    let in_grid = (out_grid.0 * 2, out_grid.1 * 2);
                    let y = layers::patch_merge(tape, cur, in_grid, p(n, "weight"), p(n, "bias"))?;
                    expect_shape(tape, y, &[batch, out_grid.0 * out_grid.1, cout], n)?;
                    y
                }
                LayerKind::ConvBnRelu { cout, out_grid, .. } => {
                    let mode_bn = if mode.batch_stats {
                        BatchNormMode::Train
                    } else {
                        BatchNormMode::Eval {
                            running_mean: self.buffers[format!("{n}.bn.running_mean").as_str()].data(),
                            running_var: self.buffers[format!("{n}.bn.running_var").as_str()].data(),
                        }
                    };
                    let conv = tape.conv2d(cur, p(n, "weight"), None, 2, 1)?;
                    let bn = tape.batch_norm(conv, p(n, "bn.gain"), p(n, "bn.bias"), mode_bn, layers::BATCH_NORM_EPS)?;
                    if mode.batch_stats {
                        batch_norm.push((n.to_string(), bn));
                    }
                    let y = tape.relu(bn);
                    expect_shape(tape, y, &[batch, cout, out_grid.0, out_grid.1], n)?;
                    y
                }
                LayerKind::CodewordProject { features, k } => {
                    let map = if tape.shape(cur).len() == 3 { layers::tokens_to_map(tape, cur, (features[1], features[2]))? } else { cur };
                    expect_shape(tape, map, &[batch, features[0], features[1], features[2]], n)?;
                    let z = layers::codeword_project(tape, map, p(n, "weight"), p(n, "bias"))?;
                    expect_shape(tape, z, &[batch, k], n)?;
                    codeword = Some(z);
                    z
                }
                LayerKind::CodewordExpand { features, .. } => layers::codeword_expand(tape, cur, p(n, "weight"), p(n, "bias"), features)?,
                LayerKind::PatchDivide { k, in_grid, cout, .. } => {
                    let map = if tape.shape(cur).len() == 3 { layers::tokens_to_map(tape, cur, in_grid)? } else { cur };
                    let y = layers::patch_divide(tape, map, p(n, "weight"), p(n, "bias"), k)?;
                    expect_shape(tape, y, &[batch, cout, in_grid.0 * k, in_grid.1 * k], n)?;
                    y
                }
            };
        }
        expect_shape(tape, cur, &[batch, c, h, w], "reconstruction")?;
        let codeword = codeword.ok_or_else(|| NeftError::Config("topology has no codeword layer".into()))?;
        Ok(ForwardPass { reconstruction: cur, codeword, attention, params: bound, batch_norm })
    }

    /// Folds the batch statistics of a training pass into the running buffers.
    pub fn update_running_stats(&mut self, tape: &Tape<T>, pass: &ForwardPass) -> Result<()> {
        let m = T::cast(BATCH_NORM_MOMENTUM);
        for (layer, var) in &pass.batch_norm {
            let (mean, var) = tape
                .batch_stats(*var)
                .ok_or_else(|| NeftError::Config(format!("no batch statistics recorded for `{layer}`")))?;
            let (mean, var) = (mean.to_vec(), var.to_vec());
            for (suffix, stats) in [("bn.running_mean", mean), ("bn.running_var", var)] {
                let buf = self.buffers.get_mut(format!("{layer}.{suffix}").as_str()).expect("buffer exists for batch-norm layer");
                for (r, s) in buf.data_mut().iter_mut().zip(stats) {
                    *r = (T::one() - m) * *r + m * s;
                }
            }
        }
        Ok(())
    }

    /// Evaluation-mode forward pass on `[B, 2, H, W]` input.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Inference<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let pass = self.forward(&mut tape, xv, ForwardMode::EVAL)?;
        Ok(Inference {
            reconstruction: tape.tensor(pass.reconstruction),
            codeword: tape.tensor(pass.codeword),
            attention: pass.attention.iter().map(|r| (r.clone(), tape.tensor(r.var))).collect(),
        })
    }
}

fn expect_shape<T: Element>(tape: &Tape<T>, v: Var, want: &[usize], at: &str) -> Result<()> {
    if tape.shape(v) != want {
        return Err(NeftError::Dimension(format!("`{at}` produced shape {:?}, expected {want:?}", tape.shape(v))));
    }
    Ok(())
}

/// Parses `...stage{s}.block{b}` layer names.
fn stage_and_block(name: &str) -> (usize, usize) {
    let num = |key: &str| {
        name.split('.')
            .find_map(|part| part.strip_prefix(key))
            .and_then(|s| s.parse().ok())
            .unwrap_or(0)
    };
    (num("stage"), num("block"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{param_count, Variant};

    fn input(cfg: &NeftConfig, batch: usize, seed: u64) -> Tensor<f64> {
        let mut shape = vec![batch];
        shape.extend(cfg.input_shape);
        Tensor::from_fn(&shape, |i| (((i as u64 + 1) * (seed + 7)) % 97) as f64 / 97.0)
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = NeftConfig::tiny().with_seed(5);
        let a = Model::<f64>::build(&cfg).unwrap();
        let b = Model::<f64>::build(&cfg).unwrap();
        for (x, y) in a.params().values().zip(b.params().values()) {
            assert_eq!(x.data(), y.data());
        }
        let c = Model::<f64>::build(&cfg.clone().with_seed(6)).unwrap();
        assert_ne!(a.params()["encoder.patch_embed.weight"].data(), c.params()["encoder.patch_embed.weight"].data());
    }

    #[test]
    fn param_count_matches_config() {
        for v in Variant::ALL {
            let cfg = NeftConfig::preset(v, 16);
            assert_eq!(Model::<f64>::build(&cfg).unwrap().param_count(), param_count(&cfg).unwrap());
        }
    }

    #[test]
    fn init_is_truncated() {
        let m = Model::<f64>::build(&NeftConfig::preset(Variant::Neft, 16)).unwrap();
        let w = m.params()["encoder.stage1.block0.attn.wq"].data();
        let k = m.params()["encoder.patch_merge.weight"].data();
        assert!(k.iter().all(|v| v.abs() <= 1.0 / 160f64.sqrt()));
        assert!(w.iter().all(|v| v.abs() <= 2.0 * INIT_STD));
        assert!(w.iter().any(|&v| v != 0.0));
        assert!(m.params()["encoder.stage1.block0.attn.rel_bias"].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_forward_shapes() {
        let cfg = NeftConfig::tiny();
        let m = Model::<f64>::build(&cfg).unwrap();
        let out = m.infer(&input(&cfg, 3, 1)).unwrap();
        assert_eq!(out.reconstruction.shape(), &[3, 2, 16, 16]);
        assert_eq!(out.codeword.shape(), &[3, 8]);
        let tokens: Vec<_> = out.attention.iter().map(|(r, _)| (r.part, r.stage, r.tokens)).collect();
        assert_eq!(tokens, [(Part::Encoder, 1, 16), (Part::Encoder, 2, 4), (Part::Decoder, 2, 4), (Part::Decoder, 1, 16)]);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let m = Model::<f64>::build(&NeftConfig::tiny()).unwrap();
        let x = Tensor::zeros(&[1, 2, 32, 32]);
        assert!(matches!(m.infer(&x), Err(NeftError::Dimension(_))));
    }

    #[test]
    fn hybrid_running_stats_move_toward_batch() {
        let mut cfg = NeftConfig::preset(Variant::Hybrid, 64);
        cfg.c1 = 8;
        cfg.heads_per_stage = [2, 2];
        cfg.c0 = Some(8);
        cfg.input_shape = [2, 16, 16];
        let mut m = Model::<f64>::build(&cfg).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(&input(&cfg, 4, 2));
        let pass = m.forward(&mut tape, x, ForwardMode::TRAIN).unwrap();
        assert_eq!(pass.batch_norm.len(), 3);
        let (bm, bv) = tape.batch_stats(pass.batch_norm[0].1).map(|(a, b)| (a.to_vec(), b.to_vec())).unwrap();
        m.update_running_stats(&tape, &pass).unwrap();
        let rm = m.buffers()["encoder.conv1.bn.running_mean"].data();
        let rv = m.buffers()["encoder.conv1.bn.running_var"].data();
        for i in 0..rm.len() {
            assert!((rm[i] - 0.1 * bm[i]).abs() < 1e-15);
            assert!((rv[i] - (0.9 + 0.1 * bv[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn from_parts_validates_shapes() {
        let cfg = NeftConfig::tiny();
        let m = Model::<f64>::build(&cfg).unwrap();
        let mut params = m.params().clone();
        Model::from_parts(cfg.clone(), params.clone(), m.buffers().clone()).unwrap();
        params.insert("encoder.project.bias".into(), Tensor::zeros(&[9]));
        assert!(matches!(Model::from_parts(cfg, params, m.buffers().clone()), Err(NeftError::Format(_))));
    }
}
