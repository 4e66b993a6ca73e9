use crate::element::{gemm, Element, MatMut, MatRef};
use crate::error::{Result, TensorError};
use crate::ops::{broadcast_index_map, broadcast_shapes};
use crate::tape::{GradSink, Node, Op, Tape, Var};

pub(crate) struct MatMulSaved {
    a: Var,
    b: Var,
    m: usize,
    k: usize,
    n: usize,
    /// `(a_batch, b_batch)` per output batch; `None` when `b` is a plain
    /// matrix and `a` can be folded into one tall product.
    pairs: Option<Vec<(usize, usize)>>,
}

impl<T: Element> Tape<T> {
    /// Batched matrix product over the last two axes with broadcast batch axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(TensorError::shape("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = sb[sb.len() - 1];
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let batch = broadcast_shapes(ba, bb).ok_or_else(|| TensorError::shape("matmul", &sa, &sb))?;
        let nbatch: usize = batch.iter().product();
        let mut out_shape = batch.clone();
        out_shape.extend([m, n]);
        let mut out = vec![T::zero(); nbatch * m * n];
        let av = self.value(a);
        let bv = self.value(b);
        let pairs = if bb.is_empty() {
            gemm(MatRef::rm(av, 0, nbatch * m, k), MatRef::rm(bv, 0, k, n), T::zero(), MatMut::rm(&mut out, 0, nbatch * m, n));
            None
        } else {
            let ma = broadcast_index_map(&batch, ba);
            let mb = broadcast_index_map(&batch, bb);
            let pairs: Vec<(usize, usize)> = ma.into_iter().zip(mb).collect();
            for (i, &(ia, ib)) in pairs.iter().enumerate() {
                gemm(
                    MatRef::rm(av, ia * m * k, m, k),
                    MatRef::rm(bv, ib * k * n, k, n),
                    T::zero(),
                    MatMut::rm(&mut out, i * m * n, m, n),
                );
            }
            Some(pairs)
        };
        let saved = MatMulSaved { a, b, m, k, n, pairs };
        Ok(self.push(out_shape, out, Op::MatMul(saved), &[a, b]))
    }
}

pub(crate) fn matmul_backward<T: Element>(nodes: &[Node<T>], s: &MatMulSaved, g: &[T], sink: &mut GradSink<'_, T>) {
    let (m, k, n) = (s.m, s.k, s.n);
    let av = &nodes[s.a.0].value;
    let bv = &nodes[s.b.0].value;
    match &s.pairs {
        None => {
            let rows = av.len() / k;
            if sink.wants(s.a) {
                // dA = dC * B^T
                let ga = sink.slot(s.a);
                gemm(MatRef::rm(g, 0, rows, n), MatRef::rm(bv, 0, k, n).t(), T::one(), MatMut::rm(ga, 0, rows, k));
            }
            if sink.wants(s.b) {
                // dB = A^T * dC
                let gb = sink.slot(s.b);
                gemm(MatRef::rm(av, 0, rows, k).t(), MatRef::rm(g, 0, rows, n), T::one(), MatMut::rm(gb, 0, k, n));
            }
        }
        Some(pairs) => {
            if sink.wants(s.a) {
                let ga = sink.slot(s.a);
                for (i, &(ia, ib)) in pairs.iter().enumerate() {
                    gemm(
                        MatRef::rm(g, i * m * n, m, n),
                        MatRef::rm(bv, ib * k * n, k, n).t(),
                        T::one(),
                        MatMut::rm(ga, ia * m * k, m, k),
                    );
                }
            }
            if sink.wants(s.b) {
                let gb = sink.slot(s.b);
                for (i, &(ia, ib)) in pairs.iter().enumerate() {
                    gemm(
                        MatRef::rm(av, ia * m * k, m, k).t(),
                        MatRef::rm(g, i * m * n, m, n),
                        T::one(),
                        MatMut::rm(gb, ib * k * n, k, n),
                    );
                }
            }
        }
    }
}
