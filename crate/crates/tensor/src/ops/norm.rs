use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{GradSink, Node, Op, Tape, Var};

pub(crate) struct LayerNormSaved<T> {
    x: Var,
    gain: Var,
    bias: Var,
    xhat: Vec<T>,
    rstd: Vec<T>,
}

pub(crate) struct BatchNormSaved<T> {
    x: Var,
    gain: Var,
    bias: Var,
    xhat: Vec<T>,
    /// Per-channel reciprocal standard deviation actually applied.
    rstd: Vec<T>,
    train: bool,
    channels: usize,
    spatial: usize,
    /// Batch statistics (mean, unbiased variance) in training mode.
    pub stats: Option<(Vec<T>, Vec<T>)>,
}

/// Statistics source for [`Tape::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a, T> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with frozen running statistics.
    Eval { running_mean: &'a [T], running_var: &'a [T] },
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Element> Tape<T> {
    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::config("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let x = self.value(a);
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..len {
                    mx = mx.max(x[base + j * inner]);
                }
                let mut total = T::zero();
                for j in 0..len {
                    let e = (x[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    total = total + e;
                }
                for j in 0..len {
                    out[base + j * inner] = out[base + j * inner] / total;
                }
            }
        }
        Ok(self.push(shape, out, Op::Softmax { a, axis }, &[a]))
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or_else(|| TensorError::config("layer_norm", "rank-0 input"))?;
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(TensorError::shape("layer_norm", &shape, self.shape(gain)));
        }
        if eps <= 0.0 {
            return Err(TensorError::config("layer_norm", "eps must be positive"));
        }
        let eps = T::cast(eps);
        let xv = self.value(x);
        let gv = self.value(gain);
        let bv = self.value(bias);
        let rows = xv.len() / n;
        let nf = T::cast(n as f64);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * gv[j] + bv[j];
            }
        }
        let saved = LayerNormSaved { x, gain, bias, xhat, rstd };
        Ok(self.push(shape, out, Op::LayerNorm(saved), &[x, gain, bias]))
    }

    /// Per-channel normalization of `[B, C, ...]` input.
    pub fn batch_norm(&mut self, x: Var, gain: Var, bias: Var, mode: BatchNormMode<'_, T>, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::config("batch_norm", format!("need [B, C, ...] input, got {shape:?}")));
        }
        let (batch, channels) = (shape[0], shape[1]);
        let spatial: usize = shape[2..].iter().product();
        if self.shape(gain) != [channels] || self.shape(bias) != [channels] {
            return Err(TensorError::shape("batch_norm", &shape, self.shape(gain)));
        }
        let count = batch * spatial;
        let eps_t = T::cast(eps);
        let xv = self.value(x);
        let (mean, rstd, stats) = match mode {
            BatchNormMode::Train => {
                let cf = T::cast(count as f64);
                let mut mean = vec![T::zero(); channels];
                let mut var = vec![T::zero(); channels];
                for c in 0..channels {
                    let mut s = T::zero();
                    for b in 0..batch {
                        let base = (b * channels + c) * spatial;
                        s = s + xv[base..base + spatial].iter().copied().sum::<T>();
                    }
                    mean[c] = s / cf;
                    let mut q = T::zero();
                    for b in 0..batch {
                        let base = (b * channels + c) * spatial;
                        q = q + xv[base..base + spatial].iter().map(|&v| (v - mean[c]) * (v - mean[c])).sum::<T>();
                    }
                    var[c] = q / cf;
                }
                let rstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
                let unbiased: Vec<T> = if count > 1 {
                    var.iter().map(|&v| v * cf / T::cast((count - 1) as f64)).collect()
                } else {
                    var.clone()
                };
                (mean.clone(), rstd, Some((mean, unbiased)))
            }
            BatchNormMode::Eval { running_mean, running_var } => {
                if running_mean.len() != channels || running_var.len() != channels {
                    return Err(TensorError::shape("batch_norm", &[channels], &[running_mean.len()]));
                }
                let rstd = running_var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
                (running_mean.to_vec(), rstd, None)
            }
        };
        let gv = self.value(gain);
        let bv = self.value(bias);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * spatial;
                for p in base..base + spatial {
                    let h = (xv[p] - mean[c]) * rstd[c];
                    xhat[p] = h;
                    out[p] = h * gv[c] + bv[c];
                }
            }
        }
        let train = matches!(mode, BatchNormMode::Train);
        let saved = BatchNormSaved { x, gain, bias, xhat, rstd, train, channels, spatial, stats };
        Ok(self.push(shape, out, Op::BatchNorm(saved), &[x, gain, bias]))
    }

    /// Batch mean and unbiased variance recorded by a training-mode batch norm.
    pub fn batch_stats(&self, v: Var) -> Option<(&[T], &[T])> {
        match &self.node(v).op {
            Op::BatchNorm(BatchNormSaved { stats: Some((m, s)), .. }) => Some((m, s)),
            _ => None,
        }
    }
}

pub(crate) fn softmax_backward<T: Element>(out: &Node<T>, a: Var, axis: usize, g: &[T], sink: &mut GradSink<'_, T>) {
    if !sink.wants(a) {
        return;
    }
    let (outer, len, inner) = split_axis(&out.shape, axis);
    let y = &out.value;
    let ga = sink.slot(a);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = T::zero();
            for j in 0..len {
                let p = base + j * inner;
                dot = dot + g[p] * y[p];
            }
            for j in 0..len {
                let p = base + j * inner;
                ga[p] = ga[p] + y[p] * (g[p] - dot);
            }
        }
    }
}

pub(crate) fn layer_norm_backward<T: Element>(
    nodes: &[Node<T>],
    s: &LayerNormSaved<T>,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let gain = &nodes[s.gain.0].value;
    let n = gain.len();
    let rows = g.len() / n;
    if sink.wants(s.gain) {
        let gg = sink.slot(s.gain);
        for r in 0..rows {
            for j in 0..n {
                gg[j] = gg[j] + g[r * n + j] * s.xhat[r * n + j];
            }
        }
    }
    if sink.wants(s.bias) {
        let gb = sink.slot(s.bias);
        for r in 0..rows {
            for j in 0..n {
                gb[j] = gb[j] + g[r * n + j];
            }
        }
    }
    if sink.wants(s.x) {
        let nf = T::cast(n as f64);
        let gx = sink.slot(s.x);
        for r in 0..rows {
            let mut m1 = T::zero();
            let mut m2 = T::zero();
            for j in 0..n {
                let d = g[r * n + j] * gain[j];
                m1 = m1 + d;
                m2 = m2 + d * s.xhat[r * n + j];
            }
            m1 = m1 / nf;
            m2 = m2 / nf;
            for j in 0..n {
                let p = r * n + j;
                let d = g[p] * gain[j];
                gx[p] = gx[p] + s.rstd[r] * (d - m1 - s.xhat[p] * m2);
            }
        }
    }
}

pub(crate) fn batch_norm_backward<T: Element>(
    nodes: &[Node<T>],
    s: &BatchNormSaved<T>,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let gain = &nodes[s.gain.0].value;
    let (channels, spatial) = (s.channels, s.spatial);
    let batch = g.len() / (channels * spatial);
    let mut dgain = vec![T::zero(); channels];
    let mut dbias = vec![T::zero(); channels];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * spatial;
            for p in base..base + spatial {
                dgain[c] = dgain[c] + g[p] * s.xhat[p];
                dbias[c] = dbias[c] + g[p];
            }
        }
    }
    if sink.wants(s.x) {
        let cf = T::cast((batch * spatial) as f64);
        let gx = sink.slot(s.x);
        for c in 0..channels {
            let scale = gain[c] * s.rstd[c];
            let (m1, m2) = if s.train { (dbias[c] / cf, dgain[c] / cf) } else { (T::zero(), T::zero()) };
            for b in 0..batch {
                let base = (b * channels + c) * spatial;
                for p in base..base + spatial {
                    gx[p] = gx[p] + scale * (g[p] - m1 - s.xhat[p] * m2);
                }
            }
        }
    }
    if sink.wants(s.gain) {
        for (d, v) in sink.slot(s.gain).iter_mut().zip(&dgain) {
            *d = *d + *v;
        }
    }
    if sink.wants(s.bias) {
        for (d, v) in sink.slot(s.bias).iter_mut().zip(&dbias) {
            *d = *d + *v;
        }
    }
}
