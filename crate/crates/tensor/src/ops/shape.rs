use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tape::{GradSink, Node, Op, Tape, Var};
use crate::tensor::numel;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For every output position of `in_shape` permuted by `axes`, the source offset.
fn permute_sources(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = out_shape.len();
    let total = numel(in_shape);
    let mut src = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        src.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= step[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    src
}

impl<T: Element> Tape<T> {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).len() {
            return Err(TensorError::shape("reshape", self.shape(a), shape));
        }
        let v = self.value(a).to_vec();
        Ok(self.push(shape.to_vec(), v, Op::Reshape(a), &[a]))
    }

    /// Keeps the first axis and folds the rest.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let lead = shape.first().copied().unwrap_or(1);
        let rest: usize = shape.iter().skip(1).product();
        self.reshape(a, &[lead, rest])
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true)) {
            return Err(TensorError::config("permute", format!("axes {axes:?} do not permute {shape:?}")));
        }
        let src = permute_sources(&shape, axes);
        let v = self.value(a);
        let out: Vec<T> = src.iter().map(|&s| v[s]).collect();
        let out_shape = axes.iter().map(|&ax| shape[ax]).collect();
        Ok(self.push(out_shape, out, Op::Permute { a, axes: axes.to_vec() }, &[a]))
    }

    /// `out[i] = a[index[i]]` over flat positions, reshaped to `shape`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let n = self.value(a).len();
        if numel(shape) != index.len() {
            return Err(TensorError::shape("gather", shape, &[index.len()]));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(TensorError::config("gather", format!("index {bad} out of range for {n} elements")));
        }
        let v = self.value(a);
        let out = index.iter().map(|&i| v[i]).collect();
        Ok(self.push(shape.to_vec(), out, Op::Gather { a, index }, &[a]))
    }
}

pub(crate) fn reshape_backward<T: Element>(a: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    if sink.wants(a) {
        for (s, &v) in sink.slot(a).iter_mut().zip(g) {
            *s = *s + v;
        }
    }
}

pub(crate) fn permute_backward<T: Element>(nodes: &[Node<T>], a: Var, axes: &[usize], g: &[T], sink: &mut GradSink<'_, T>) {
    if !sink.wants(a) {
        return;
    }
    let src = permute_sources(&nodes[a.0].shape, axes);
    let ga = sink.slot(a);
    for (&s, &v) in src.iter().zip(g) {
        ga[s] = ga[s] + v;
    }
}

pub(crate) fn gather_backward<T: Element>(a: Var, index: &[usize], g: &[T], sink: &mut GradSink<'_, T>) {
    if sink.wants(a) {
        let ga = sink.slot(a);
        for (&i, &v) in index.iter().zip(g) {
            ga[i] = ga[i] + v;
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::Tape;

    #[test]
    fn permute_transposes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], false).unwrap();
        let y = tape.permute(x, &[1, 0]).unwrap();
        assert_eq!(tape.shape(y), &[3, 2]);
        assert_eq!(tape.value(y), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn permute_rejects_repeated_axes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[2, 3], vec![0.0; 6], false).unwrap();
        assert!(tape.permute(x, &[0, 0]).is_err());
    }

    #[test]
    fn gather_scatters_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[3], vec![1.0, 2.0, 3.0], true).unwrap();
        let y = tape.gather(x, vec![2, 0, 2, 2], &[2, 2]).unwrap();
        assert_eq!(tape.value(y), &[3.0, 1.0, 3.0, 3.0]);
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 3.0]);
    }

    #[test]
    fn reshape_rejects_size_change() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(&[2, 3], vec![0.0; 6], false).unwrap();
        assert!(tape.reshape(x, &[4]).is_err());
    }
}
