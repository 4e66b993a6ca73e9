use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::{broadcast_index_map, broadcast_shapes, is_suffix_broadcast};
use crate::tape::{GradSink, Node, Op, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Maps each output position to an input position under broadcasting.
enum Index {
    Modulo(usize),
    Map(Vec<usize>),
}

impl Index {
    fn new(in_shape: &[usize], out_shape: &[usize]) -> Self {
        if is_suffix_broadcast(in_shape, out_shape) {
            Index::Modulo(in_shape.iter().product())
        } else {
            Index::Map(broadcast_index_map(out_shape, in_shape))
        }
    }

    #[inline]
    fn at(&self, i: usize) -> usize {
        match self {
            Index::Modulo(n) => i % n,
            Index::Map(m) => m[i],
        }
    }
}

impl<T: Element> Tape<T> {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let out_shape = broadcast_shapes(sa, sb).ok_or_else(|| TensorError::shape("elementwise", sa, sb))?;
        let ia = Index::new(sa, &out_shape);
        let ib = Index::new(sb, &out_shape);
        let av = self.value(a);
        let bv = self.value(b);
        let total: usize = out_shape.iter().product();
        let f = |x: T, y: T| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let out: Vec<T> = if av.len() == total && bv.len() == total {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..total).map(|i| f(av[ia.at(i)], bv[ib.at(i)])).collect()
        };
        Ok(self.push(out_shape, out, Op::Binary { kind, a, b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Scale { a, factor }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Relu(a), &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = T::cast(GELU_C);
        let k = T::cast(GELU_A);
        let half = T::cast(0.5);
        let out = self
            .value(a)
            .iter()
            .map(|&x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Gelu(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push(Vec::new(), vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: T = v.iter().copied().sum();
        let m = s / T::cast(v.len() as f64);
        self.push(Vec::new(), vec![m], Op::Mean(a), &[a])
    }

    /// Mean of squared differences over every element.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape("mse", self.shape(a), self.shape(b)));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let s: T = av.iter().zip(bv).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let m = s / T::cast(av.len() as f64);
        Ok(self.push(Vec::new(), vec![m], Op::Mse { a, b }, &[a, b]))
    }
}

pub(crate) fn binary_backward<T: Element>(
    nodes: &[Node<T>],
    out: &Node<T>,
    kind: BinaryKind,
    a: Var,
    b: Var,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let na = &nodes[a.0];
    let nb = &nodes[b.0];
    let same = na.value.len() == g.len() && nb.value.len() == g.len();
    let ia = Index::new(&na.shape, &out.shape);
    let ib = Index::new(&nb.shape, &out.shape);
    let pos_a = |i: usize| if same { i } else { ia.at(i) };
    let pos_b = |i: usize| if same { i } else { ib.at(i) };
    if sink.wants(a) {
        let ga = sink.slot(a);
        match kind {
            BinaryKind::Add | BinaryKind::Sub => {
                for (i, &gi) in g.iter().enumerate() {
                    ga[pos_a(i)] = ga[pos_a(i)] + gi;
                }
            }
            BinaryKind::Mul => {
                for (i, &gi) in g.iter().enumerate() {
                    ga[pos_a(i)] = ga[pos_a(i)] + gi * nb.value[pos_b(i)];
                }
            }
        }
    }
    if sink.wants(b) {
        let gb = sink.slot(b);
        match kind {
            BinaryKind::Add => {
                for (i, &gi) in g.iter().enumerate() {
                    gb[pos_b(i)] = gb[pos_b(i)] + gi;
                }
            }
            BinaryKind::Sub => {
                for (i, &gi) in g.iter().enumerate() {
                    gb[pos_b(i)] = gb[pos_b(i)] - gi;
                }
            }
            BinaryKind::Mul => {
                for (i, &gi) in g.iter().enumerate() {
                    gb[pos_b(i)] = gb[pos_b(i)] + gi * na.value[pos_a(i)];
                }
            }
        }
    }
}

pub(crate) fn scale_backward<T: Element>(a: Var, factor: T, g: &[T], sink: &mut GradSink<'_, T>) {
    if sink.wants(a) {
        for (s, &gi) in sink.slot(a).iter_mut().zip(g) {
            *s = *s + gi * factor;
        }
    }
}

pub(crate) fn relu_backward<T: Element>(nodes: &[Node<T>], a: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    if sink.wants(a) {
        let x = &nodes[a.0].value;
        for ((s, &gi), &xi) in sink.slot(a).iter_mut().zip(g).zip(x) {
            if xi > T::zero() {
                *s = *s + gi;
            }
        }
    }
}

pub(crate) fn gelu_backward<T: Element>(nodes: &[Node<T>], a: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    if !sink.wants(a) {
        return;
    }
    let c = T::cast(GELU_C);
    let k = T::cast(GELU_A);
    let half = T::cast(0.5);
    let three = T::cast(3.0);
    let x = &nodes[a.0].value;
    for ((s, &gi), &xi) in sink.slot(a).iter_mut().zip(g).zip(x) {
        let t = (c * (xi + k * xi * xi * xi)).tanh();
        let d = half * (T::one() + t) + half * xi * (T::one() - t * t) * c * (T::one() + three * k * xi * xi);
        *s = *s + gi * d;
    }
}

pub(crate) fn sum_backward<T: Element>(a: Var, factor: T, g: &[T], sink: &mut GradSink<'_, T>) {
    if sink.wants(a) {
        let v = g[0] * factor;
        for s in sink.slot(a).iter_mut() {
            *s = *s + v;
        }
    }
}

pub(crate) fn mse_backward<T: Element>(nodes: &[Node<T>], a: Var, b: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    let av = &nodes[a.0].value;
    let bv = &nodes[b.0].value;
    let coef = g[0] * T::cast(2.0) / T::cast(av.len() as f64);
    if sink.wants(a) {
        for ((s, &x), &y) in sink.slot(a).iter_mut().zip(av).zip(bv) {
            *s = *s + coef * (x - y);
        }
    }
    if sink.wants(b) {
        for ((s, &x), &y) in sink.slot(b).iter_mut().zip(av).zip(bv) {
            *s = *s - coef * (x - y);
        }
    }
}
