//! Tape-level building blocks shared by every variant. All token tensors are
//! `[B, N, C]` with tokens in row-major grid order; feature maps are `[B, C, H, W]`.

use neft_tensor::{BatchNormMode, Element, Tape, Var};

use crate::error::{NeftError, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Flat index into a `(2gh-1) x (2gw-1)` offset table for every token pair.
pub fn relative_position_index(grid: (usize, usize)) -> Vec<usize> {
    let (gh, gw) = grid;
    let n = gh * gw;
    let span = 2 * gw - 1;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let (yi, xi) = (i / gw, i % gw);
        for j in 0..n {
            let (yj, xj) = (j / gw, j % gw);
            idx.push((yi + gh - 1 - yj) * span + (xi + gw - 1 - xj));
        }
    }
    idx
}

pub fn relative_table_len(grid: (usize, usize)) -> usize {
    (2 * grid.0 - 1) * (2 * grid.1 - 1)
}

fn dims3<T: Element>(tape: &Tape<T>, x: Var, op: &str) -> Result<[usize; 3]> {
    match *tape.shape(x) {
        [b, n, c] => Ok([b, n, c]),
        ref s => Err(NeftError::Dimension(format!("{op} expects [B, N, C] tokens, got {s:?}"))),
    }
}

fn dims4<T: Element>(tape: &Tape<T>, x: Var, op: &str) -> Result<[usize; 4]> {
    match *tape.shape(x) {
        [b, c, h, w] => Ok([b, c, h, w]),
        ref s => Err(NeftError::Dimension(format!("{op} expects [B, C, H, W] features, got {s:?}"))),
    }
}

pub fn tokens_to_map<T: Element>(tape: &mut Tape<T>, x: Var, grid: (usize, usize)) -> Result<Var> {
    let [b, n, c] = dims3(tape, x, "tokens_to_map")?;
    if n != grid.0 * grid.1 {
        return Err(NeftError::Dimension(format!("{n} tokens do not form a {}x{} grid", grid.0, grid.1)));
    }
    let t = tape.permute(x, &[0, 2, 1])?;
    Ok(tape.reshape(t, &[b, c, grid.0, grid.1])?)
}

pub fn map_to_tokens<T: Element>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let [b, c, h, w] = dims4(tape, x, "map_to_tokens")?;
    let t = tape.reshape(x, &[b, c, h * w])?;
    Ok(tape.permute(t, &[0, 2, 1])?)
}

/// `x W + b` over the last axis.
pub fn affine<T: Element>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, weight)?;
    Ok(match bias {
        Some(b) => tape.add(y, b)?,
        None => y,
    })
}

/// Non-overlapping `patch x patch` patches projected to `C` channels, as tokens.
pub fn patch_embed<T: Element>(tape: &mut Tape<T>, x: Var, kernel: Var, bias: Var, patch: usize) -> Result<Var> {
    let [_, _, h, w] = dims4(tape, x, "patch_embed")?;
    if h % patch != 0 || w % patch != 0 {
        return Err(NeftError::Config(format!("input {h}x{w} is not divisible into {patch}x{patch} patches")));
    }
    let y = tape.conv2d(x, kernel, Some(bias), patch, 0)?;
    map_to_tokens(tape, y)
}

/// Strided 2x2 convolution on the token grid: 4x fewer tokens.
pub fn patch_merge<T: Element>(tape: &mut Tape<T>, x: Var, grid: (usize, usize), kernel: Var, bias: Var) -> Result<Var> {
    if !grid.0.is_multiple_of(2) || !grid.1.is_multiple_of(2) {
        return Err(NeftError::Config(format!("patch merging needs an even grid, got {}x{}", grid.0, grid.1)));
    }
    let m = tokens_to_map(tape, x, grid)?;
    let y = tape.conv2d(m, kernel, Some(bias), 2, 0)?;
    map_to_tokens(tape, y)
}

/// Transposed convolution with kernel = stride, on a feature map.
pub fn patch_divide<T: Element>(tape: &mut Tape<T>, x: Var, kernel: Var, bias: Var, k: usize) -> Result<Var> {
    Ok(tape.conv_transpose2d(x, kernel, Some(bias), k)?)
}

#[derive(Clone, Copy, Debug)]
pub struct MsaWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    /// `[heads, (2gh-1)(2gw-1)]`.
    pub rel_bias: Var,
}

/// Global multi-head self-attention with a learned relative position bias.
/// Returns the projected output and the post-softmax maps `[B, heads, N, N]`.
pub fn msa<T: Element>(tape: &mut Tape<T>, x: Var, w: &MsaWeights, heads: usize, grid: (usize, usize)) -> Result<(Var, Var)> {
    let [b, n, c] = dims3(tape, x, "msa")?;
    if heads == 0 || c % heads != 0 {
        return Err(NeftError::Config(format!("width {c} is not divisible by {heads} heads")));
    }
    if n != grid.0 * grid.1 {
        return Err(NeftError::Dimension(format!("{n} tokens do not form a {}x{} grid", grid.0, grid.1)));
    }
    let d = c / heads;
    let split = |tape: &mut Tape<T>, v: Var, axes: &[usize]| -> Result<Var> {
        let r = tape.reshape(v, &[b, n, heads, d])?;
        Ok(tape.permute(r, axes)?)
    };
    let q = tape.matmul(x, w.wq)?;
    let k = tape.matmul(x, w.wk)?;
    let v = tape.matmul(x, w.wv)?;
    let q = split(tape, q, &[0, 2, 1, 3])?;
    let kt = split(tape, k, &[0, 2, 3, 1])?;
    let v = split(tape, v, &[0, 2, 1, 3])?;

    let logits = tape.matmul(q, kt)?;
    let logits = tape.scale(logits, T::cast(1.0 / (d as f64).sqrt()));
    let table_len = relative_table_len(grid);
    if tape.shape(w.rel_bias) != [heads, table_len] {
        return Err(NeftError::Dimension(format!(
            "relative bias table has shape {:?}, expected [{heads}, {table_len}]",
            tape.shape(w.rel_bias)
        )));
    }
    let rpi = relative_position_index(grid);
    let index = (0..heads).flat_map(|h| rpi.iter().map(move |&i| h * table_len + i)).collect();
    let bias = tape.gather(w.rel_bias, index, &[heads, n, n])?;
    let logits = tape.add(logits, bias)?;
    let attn = tape.softmax(logits, 3)?;

    let out = tape.matmul(attn, v)?;
    let out = tape.permute(out, &[0, 2, 1, 3])?;
    let out = tape.reshape(out, &[b, n, c])?;
    let out = tape.matmul(out, w.wo)?;
    Ok((out, attn))
}

#[derive(Clone, Copy, Debug)]
pub struct VitWeights {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub msa: MsaWeights,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub fc1_weight: Var,
    pub fc1_bias: Var,
    pub fc2_weight: Var,
    pub fc2_bias: Var,
}

/// Pre-norm block: `x + MSA(LN(x))`, then `+ MLP(LN(.))` with a GELU MLP.
pub fn vit_block<T: Element>(tape: &mut Tape<T>, x: Var, w: &VitWeights, heads: usize, grid: (usize, usize)) -> Result<(Var, Var)> {
    let h = tape.layer_norm(x, w.ln1_gain, w.ln1_bias, LAYER_NORM_EPS)?;
    let (a, attn) = msa(tape, h, &w.msa, heads, grid)?;
    let x = tape.add(x, a)?;
    let h = tape.layer_norm(x, w.ln2_gain, w.ln2_bias, LAYER_NORM_EPS)?;
    let h = affine(tape, h, w.fc1_weight, Some(w.fc1_bias))?;
    let h = tape.gelu(h);
    let h = affine(tape, h, w.fc2_weight, Some(w.fc2_bias))?;
    Ok((tape.add(x, h)?, attn))
}

/// 3x3 stride-2 convolution (no bias), batch norm, ReLU.
pub fn conv_bn_relu<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    kernel: Var,
    gain: Var,
    bias: Var,
    mode: BatchNormMode<'_, T>,
) -> Result<Var> {
    let y = tape.conv2d(x, kernel, None, 2, 1)?;
    let y = tape.batch_norm(y, gain, bias, mode, BATCH_NORM_EPS)?;
    Ok(tape.relu(y))
}

/// Flattens `[B, ...]` and maps it affinely to `[B, K]`.
pub fn codeword_project<T: Element>(tape: &mut Tape<T>, features: Var, weight: Var, bias: Var) -> Result<Var> {
    let shape = tape.shape(features).to_vec();
    let b = shape[0];
    let flat = tape.reshape(features, &[b, shape[1..].iter().product()])?;
    affine(tape, flat, weight, Some(bias))
}

/// Affine map `[B, K] -> [B, C*gh*gw]` reshaped to a `[B, C, gh, gw]` map.
pub fn codeword_expand<T: Element>(tape: &mut Tape<T>, code: Var, weight: Var, bias: Var, features: [usize; 3]) -> Result<Var> {
    let b = tape.shape(code)[0];
    let y = affine(tape, code, weight, Some(bias))?;
    Ok(tape.reshape(y, &[b, features[0], features[1], features[2]])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use neft_tensor::Tensor;

    #[test]
    fn relative_index_is_symmetric_in_offset() {
        let idx = relative_position_index((2, 2));
        // self offset is the table centre
        assert_eq!(idx[0], 4);
        assert_eq!(idx[3 * 4 + 3], 4);
        // token 0 -> token 3 is offset (-1, -1); reverse is (+1, +1)
        assert_eq!(idx[3], 0);
        assert_eq!(idx[3 * 4], 8);
        assert!(idx.iter().all(|&i| i < relative_table_len((2, 2))));
    }

    fn zero_msa(tape: &mut Tape<f64>, c: usize, heads: usize, grid: (usize, usize)) -> MsaWeights {
        let z = |tape: &mut Tape<f64>, s: &[usize]| tape.constant(&Tensor::zeros(s));
        MsaWeights {
            wq: z(tape, &[c, c]),
            wk: z(tape, &[c, c]),
            wv: z(tape, &[c, c]),
            wo: z(tape, &[c, c]),
            rel_bias: z(tape, &[heads, relative_table_len(grid)]),
        }
    }

    #[test]
    fn zero_logits_give_uniform_attention() {
        let mut tape = Tape::<f64>::new();
        let (c, heads, grid) = (4, 2, (2, 2));
        let x = tape.constant(&Tensor::from_fn(&[1, 4, c], |i| (i as f64 * 0.37).sin()));
        let mut w = zero_msa(&mut tape, c, heads, grid);
        let eye = Tensor::from_fn(&[c, c], |i| if i / c == i % c { 1.0 } else { 0.0 });
        w.wv = tape.constant(&eye);
        w.wo = tape.constant(&Tensor::from_fn(&[c, c], |i| 0.1 * i as f64));
        let (out, attn) = msa(&mut tape, x, &w, heads, grid).unwrap();
        assert!(tape.value(attn).iter().all(|&a| (a - 0.25).abs() < 1e-15));
        let xv = tape.value(x).to_vec();
        let wo = tape.value(w.wo).to_vec();
        let mean: Vec<f64> = (0..c).map(|j| (0..4).map(|t| xv[t * c + j]).sum::<f64>() / 4.0).collect();
        for t in 0..4 {
            for j in 0..c {
                let want: f64 = (0..c).map(|i| mean[i] * wo[i * c + j]).sum();
                assert!((tape.value(out)[t * c + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_block_is_identity() {
        let mut tape = Tape::<f64>::new();
        let (c, grid) = (4, (2, 2));
        let x = tape.constant(&Tensor::from_fn(&[2, 4, c], |i| i as f64 - 3.0));
        let z = |tape: &mut Tape<f64>, s: &[usize]| tape.constant(&Tensor::zeros(s));
        let msa = zero_msa(&mut tape, c, 2, grid);
        let w = VitWeights {
            ln1_gain: z(&mut tape, &[c]),
            ln1_bias: z(&mut tape, &[c]),
            msa,
            ln2_gain: z(&mut tape, &[c]),
            ln2_bias: z(&mut tape, &[c]),
            fc1_weight: z(&mut tape, &[c, 8]),
            fc1_bias: z(&mut tape, &[8]),
            fc2_weight: z(&mut tape, &[8, c]),
            fc2_bias: z(&mut tape, &[c]),
        };
        let (y, _) = vit_block(&mut tape, x, &w, 2, grid).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn heads_must_divide_width() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::zeros(&[1, 4, 6]));
        let w = zero_msa(&mut tape, 6, 4, (2, 2));
        assert!(matches!(msa(&mut tape, x, &w, 4, (2, 2)), Err(NeftError::Config(_))));
    }

    #[test]
    fn token_map_round_trip() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::from_fn(&[2, 6, 3], |i| i as f64));
        let m = tokens_to_map(&mut tape, x, (2, 3)).unwrap();
        assert_eq!(tape.shape(m), &[2, 3, 2, 3]);
        let back = map_to_tokens(&mut tape, m).unwrap();
        assert_eq!(tape.value(back), tape.value(x));
    }

    #[test]
    fn patch_embed_rejects_indivisible_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(&Tensor::zeros(&[1, 2, 10, 10]));
        let k = tape.constant(&Tensor::zeros(&[4, 2, 4, 4]));
        let b = tape.constant(&Tensor::zeros(&[4]));
        assert!(matches!(patch_embed(&mut tape, x, k, b, 4), Err(NeftError::Config(_))));
    }
}
