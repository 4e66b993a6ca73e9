pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod linalg;
pub(crate) mod norm;
pub(crate) mod shape;

/// Right-aligned broadcast of two shapes, numpy style.
pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat index of `out_shape`, the flat index into a tensor of
/// `in_shape` that broadcasts onto it.
pub(crate) fn broadcast_index_map(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let pad = rank - in_shape.len();
    // stride of each output axis inside the input (0 where broadcast)
    let mut in_strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..in_shape.len()).rev() {
        if in_shape[i] != 1 {
            in_strides[i + pad] = acc;
        }
        acc *= in_shape[i];
    }
    let total: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        map.push(offset);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += in_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= in_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

/// True when `small` (ignoring leading unit axes) equals the trailing axes of
/// `out`, so the broadcast index is simply `i % numel(small)`.
pub(crate) fn is_suffix_broadcast(small: &[usize], out: &[usize]) -> bool {
    let first = small.iter().position(|&d| d != 1).unwrap_or(small.len());
    let s = &small[first..];
    s.len() <= out.len() && out[out.len() - s.len()..] == *s
}
