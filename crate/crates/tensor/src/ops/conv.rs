//! 2-D cross-correlation (im2col + one GEMM over the whole batch) and the
//! non-overlapping transposed convolution used for patch division.

use crate::element::{gemm, Element, MatMut, MatRef};
use crate::error::{Result, TensorError};
use crate::tape::{GradSink, Node, Op, Tape, Var};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }
}

pub(crate) struct Conv2dSaved {
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: ConvGeom,
}

pub(crate) struct ConvTransposeSaved {
    x: Var,
    w: Var,
    b: Option<Var>,
    batch: usize,
    cin: usize,
    h: usize,
    w_in: usize,
    cout: usize,
    k: usize,
}

/// Accepts `[C, H, W]` or `[B, C, H, W]`; returns `(batch, c, h, w, batched)`.
fn image_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w, false)),
        [b, c, h, w] => Ok((b, c, h, w, true)),
        _ => Err(TensorError::config(op, format!("expected [C,H,W] or [B,C,H,W], got {shape:?}"))),
    }
}

/// Unrolls input patches into a `[cin*kh*kw, batch*ho*wo]` matrix.
fn im2col<T: Element>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let cols_n = g.batch * g.out_pixels();
    let mut cols = vec![T::zero(); g.patch_len() * cols_n];
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..g.batch {
                    let src = &x[(b * g.cin + ci) * g.h * g.w..(b * g.cin + ci + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            dst[(b * g.ho + oy) * g.wo + ox] = src[iy as usize * g.w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Element>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let cols_n = g.batch * g.out_pixels();
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..g.batch {
                    let base = (b * g.cin + ci) * g.h * g.w;
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            let p = base + iy as usize * g.w + ix as usize;
                            dx[p] = dx[p] + src[(b * g.ho + oy) * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Element> Tape<T> {
    /// Cross-correlation of `x` (`[C_in,H,W]` or `[B,C_in,H,W]`) with a
    /// `[C_out,C_in,K_h,K_w]` kernel and optional `[C_out]` bias.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        let (batch, cin, h, w, batched) = image_dims("conv2d", &xs)?;
        let [cout, kcin, kh, kw] = ks[..] else {
            return Err(TensorError::shape("conv2d", &xs, &ks));
        };
        if kcin != cin {
            return Err(TensorError::shape("conv2d", &xs, &ks));
        }
        if stride == 0 {
            return Err(TensorError::config("conv2d", "stride must be positive"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(TensorError::shape("conv2d", &ks, self.shape(b)));
            }
        }
        let span_h = (h + 2 * padding) as isize - kh as isize;
        let span_w = (w + 2 * padding) as isize - kw as isize;
        if span_h < 0 || span_w < 0 {
            return Err(TensorError::config(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{w} (padding {padding})"),
            ));
        }
        let ho = span_h as usize / stride + 1;
        let wo = span_w as usize / stride + 1;
        let geom = ConvGeom { batch, cin, h, w, cout, kh, kw, stride, pad: padding, ho, wo };
        let cols = im2col(self.value(x), &geom);
        let cols_n = batch * geom.out_pixels();
        let mut prod = vec![T::zero(); cout * cols_n];
        gemm(
            MatRef::rm(self.value(kernel), 0, cout, geom.patch_len()),
            MatRef::rm(&cols, 0, geom.patch_len(), cols_n),
            T::zero(),
            MatMut::rm(&mut prod, 0, cout, cols_n),
        );
        let pix = geom.out_pixels();
        let mut out = vec![T::zero(); batch * cout * pix];
        let bias_v = bias.map(|b| self.value(b));
        for co in 0..cout {
            let bval = bias_v.map_or(T::zero(), |bv| bv[co]);
            for b in 0..batch {
                let src = &prod[co * cols_n + b * pix..co * cols_n + (b + 1) * pix];
                let dst = &mut out[(b * cout + co) * pix..(b * cout + co + 1) * pix];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + bval;
                }
            }
        }
        let out_shape = if batched { vec![batch, cout, ho, wo] } else { vec![cout, ho, wo] };
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        let saved = Conv2dSaved { x, w: kernel, b: bias, geom };
        Ok(self.push(out_shape, out, Op::Conv2d(saved), &inputs))
    }

    /// Transposed convolution with kernel size equal to stride and no padding:
    /// every input pixel expands into its own `k x k` output block.
    /// Kernel layout is `[C_in, C_out, k, k]`.
    pub fn conv_transpose2d(&mut self, x: Var, kernel: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        let (batch, cin, h, w_in, batched) = image_dims("conv_transpose2d", &xs)?;
        let [kcin, cout, kh, kw] = ks[..] else {
            return Err(TensorError::shape("conv_transpose2d", &xs, &ks));
        };
        if kcin != cin {
            return Err(TensorError::shape("conv_transpose2d", &xs, &ks));
        }
        if kh != kw || kh != stride || stride == 0 {
            return Err(TensorError::config(
                "conv_transpose2d",
                format!("only kernel size == stride is supported (kernel {kh}x{kw}, stride {stride})"),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(TensorError::shape("conv_transpose2d", &ks, self.shape(b)));
            }
        }
        let k = stride;
        let hw = h * w_in;
        let blk = cout * k * k;
        let (ho, wo) = (h * k, w_in * k);
        let xv = self.value(x);
        let kv = self.value(kernel);
        let bias_v = bias.map(|b| self.value(b));
        let mut out = vec![T::zero(); batch * cout * ho * wo];
        let mut y = vec![T::zero(); hw * blk];
        for b in 0..batch {
            // x[b] viewed as [HW, C_in]
            let a = MatRef { data: xv, offset: b * cin * hw, rows: hw, cols: cin, rs: 1, cs: hw };
            gemm(a, MatRef::rm(kv, 0, cin, blk), T::zero(), MatMut::rm(&mut y, 0, hw, blk));
            for p in 0..hw {
                let (iy, ix) = (p / w_in, p % w_in);
                for co in 0..cout {
                    let bval = bias_v.map_or(T::zero(), |bv| bv[co]);
                    for ky in 0..k {
                        let row = ((b * cout + co) * ho + iy * k + ky) * wo + ix * k;
                        let src = p * blk + (co * k + ky) * k;
                        for kx in 0..k {
                            out[row + kx] = y[src + kx] + bval;
                        }
                    }
                }
            }
        }
        let out_shape = if batched { vec![batch, cout, ho, wo] } else { vec![cout, ho, wo] };
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        let saved = ConvTransposeSaved { x, w: kernel, b: bias, batch, cin, h, w_in, cout, k };
        Ok(self.push(out_shape, out, Op::ConvTranspose2d(saved), &inputs))
    }
}

pub(crate) fn conv2d_backward<T: Element>(nodes: &[Node<T>], s: &Conv2dSaved, g: &[T], sink: &mut GradSink<'_, T>) {
    let geom = &s.geom;
    let pix = geom.out_pixels();
    let cols_n = geom.batch * pix;
    // regroup dOut as [C_out, B*P]
    let mut gmat = vec![T::zero(); geom.cout * cols_n];
    for b in 0..geom.batch {
        for co in 0..geom.cout {
            let src = &g[(b * geom.cout + co) * pix..(b * geom.cout + co + 1) * pix];
            gmat[co * cols_n + b * pix..co * cols_n + (b + 1) * pix].copy_from_slice(src);
        }
    }
    if let Some(bv) = s.b {
        if sink.wants(bv) {
            let gb = sink.slot(bv);
            for co in 0..geom.cout {
                gb[co] = gb[co] + gmat[co * cols_n..(co + 1) * cols_n].iter().copied().sum::<T>();
            }
        }
    }
    let want_w = sink.wants(s.w);
    let want_x = sink.wants(s.x);
    if !want_w && !want_x {
        return;
    }
    let plen = geom.patch_len();
    if want_w {
        let cols = im2col(&nodes[s.x.0].value, geom);
        let gw = sink.slot(s.w);
        gemm(
            MatRef::rm(&gmat, 0, geom.cout, cols_n),
            MatRef::rm(&cols, 0, plen, cols_n).t(),
            T::one(),
            MatMut::rm(gw, 0, geom.cout, plen),
        );
    }
    if want_x {
        let mut dcols = vec![T::zero(); plen * cols_n];
        gemm(
            MatRef::rm(&nodes[s.w.0].value, 0, geom.cout, plen).t(),
            MatRef::rm(&gmat, 0, geom.cout, cols_n),
            T::zero(),
            MatMut::rm(&mut dcols, 0, plen, cols_n),
        );
        col2im_add(&dcols, geom, sink.slot(s.x));
    }
}

pub(crate) fn conv_transpose2d_backward<T: Element>(
    nodes: &[Node<T>],
    s: &ConvTransposeSaved,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let (k, cout, cin) = (s.k, s.cout, s.cin);
    let hw = s.h * s.w_in;
    let blk = cout * k * k;
    let (ho, wo) = (s.h * k, s.w_in * k);
    let want_x = sink.wants(s.x);
    let want_w = sink.wants(s.w);
    let want_b = s.b.is_some_and(|b| sink.wants(b));
    let xv = &nodes[s.x.0].value;
    let kv = &nodes[s.w.0].value;
    let mut dy = vec![T::zero(); hw * blk];
    let mut dbias = vec![T::zero(); cout];
    let mut dw = vec![T::zero(); cin * blk];
    let mut dx = if want_x { vec![T::zero(); xv.len()] } else { Vec::new() };
    for b in 0..s.batch {
        for p in 0..hw {
            let (iy, ix) = (p / s.w_in, p % s.w_in);
            for co in 0..cout {
                for ky in 0..k {
                    let row = ((b * cout + co) * ho + iy * k + ky) * wo + ix * k;
                    let dst = p * blk + (co * k + ky) * k;
                    for kx in 0..k {
                        dy[dst + kx] = g[row + kx];
                        dbias[co] = dbias[co] + g[row + kx];
                    }
                }
            }
        }
        if want_w {
            let a = MatRef { data: xv.as_slice(), offset: b * cin * hw, rows: hw, cols: cin, rs: 1, cs: hw };
            gemm(a.t(), MatRef::rm(&dy, 0, hw, blk), T::one(), MatMut::rm(&mut dw, 0, cin, blk));
        }
        if want_x {
            let out = MatMut { data: dx.as_mut_slice(), offset: b * cin * hw, rows: hw, cols: cin, rs: 1, cs: hw };
            gemm(MatRef::rm(&dy, 0, hw, blk), MatRef::rm(kv, 0, cin, blk).t(), T::zero(), out);
        }
    }
    if want_x {
        for (d, v) in sink.slot(s.x).iter_mut().zip(&dx) {
            *d = *d + *v;
        }
    }
    if want_w {
        for (d, v) in sink.slot(s.w).iter_mut().zip(&dw) {
            *d = *d + *v;
        }
    }
    if want_b {
        let bv = s.b.expect("checked above");
        for (d, v) in sink.slot(bv).iter_mut().zip(&dbias) {
            *d = *d + *v;
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::Tape;

    #[test]
    fn all_ones_kernel_sums_window() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[1, 3, 3], vec![1.0; 9], false).unwrap();
        let k = tape.input(&[1, 1, 3, 3], vec![1.0; 9], false).unwrap();
        let y = tape.conv2d(x, k, None, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1]);
        assert_eq!(tape.value(y), &[9.0]);
    }

    #[test]
    fn stride_two_padding_one_halves_spatial() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[2, 32, 32], vec![0.5; 2 * 32 * 32], false).unwrap();
        let k = tape.input(&[8, 2, 3, 3], vec![0.1; 8 * 18], false).unwrap();
        let y = tape.conv2d(x, k, None, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[8, 16, 16]);
    }

    #[test]
    fn empty_output_is_configuration_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[1, 2, 2], vec![0.0; 4], false).unwrap();
        let k = tape.input(&[1, 1, 3, 3], vec![0.0; 9], false).unwrap();
        assert!(tape.conv2d(x, k, None, 1, 0).is_err());
    }

    #[test]
    fn padded_border_sees_zeros() {
        // 2x2 input, 3x3 ones kernel, pad 1, stride 1 -> each output sums all 4 inputs
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0], false).unwrap();
        let k = tape.input(&[1, 1, 3, 3], vec![1.0; 9], false).unwrap();
        let y = tape.conv2d(x, k, None, 1, 1).unwrap();
        assert_eq!(tape.value(y), &[10.0; 4]);
    }

    #[test]
    fn transpose_upsampling_shapes() {
        let mut tape = Tape::<f64>::new();
        let c1 = 5;
        let x = tape.input(&[2 * c1, 4, 4], vec![0.1; 2 * c1 * 16], false).unwrap();
        let k = tape.input(&[2 * c1, c1, 2, 2], vec![0.1; 2 * c1 * c1 * 4], false).unwrap();
        let y = tape.conv_transpose2d(x, k, None, 2).unwrap();
        assert_eq!(tape.shape(y), &[c1, 8, 8]);
        let k4 = tape.input(&[c1, 2, 4, 4], vec![0.1; c1 * 32], false).unwrap();
        let z = tape.conv_transpose2d(y, k4, None, 4).unwrap();
        assert_eq!(tape.shape(z), &[2, 32, 32]);
    }

    #[test]
    fn transpose_requires_kernel_equal_stride() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[1, 2, 2], vec![0.0; 4], false).unwrap();
        let k = tape.input(&[1, 1, 3, 3], vec![0.0; 9], false).unwrap();
        assert!(tape.conv_transpose2d(x, k, None, 2).is_err());
    }

    #[test]
    fn strided_conv_then_transpose_round_trips_shape_and_values() {
        // one-hot kernels: conv picks the top-left pixel of each 2x2 block,
        // transpose writes it back to the top-left position
        let mut tape = Tape::<f64>::new();
        let xv: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let x = tape.input(&[1, 4, 4], xv.clone(), false).unwrap();
        let k = tape.input(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0], false).unwrap();
        let down = tape.conv2d(x, k, None, 2, 0).unwrap();
        assert_eq!(tape.value(down), &[0.0, 2.0, 8.0, 10.0]);
        let up = tape.conv_transpose2d(down, k, None, 2).unwrap();
        assert_eq!(tape.shape(up), &[1, 4, 4]);
        for (i, &v) in tape.value(up).iter().enumerate() {
            let (r, c) = (i / 4, i % 4);
            let want = if r % 2 == 0 && c % 2 == 0 { xv[i] } else { 0.0 };
            assert_eq!(v, want);
        }
    }
}
