//! Raw slice kernels shared by the forward and backward passes.

/// `out[m×n] += a[m×k] · b[k×n]`, all row-major.
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(m, k, n, a, (k, 1), b, (n, 1), out);
}

/// `da[m×k] += dc[m×n] · bᵀ` where `b` is `k×n`.
pub fn matmul_grad_a(dc: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(m, n, k, dc, (n, 1), b, (1, n), da);
}

/// `db[k×n] += aᵀ · dc` where `a` is `m×k` and `dc` is `m×n`.
pub fn matmul_grad_b(a: &[f64], dc: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(k, m, n, a, (1, k), dc, (n, 1), db);
}

/// `c[m×n] += A·B` for strided `A: m×k` and `B: k×n`; `c` is row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too short");
    // SAFETY: the slices cover every strided index touched for these
    // extents, checked above; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Splits `shape` around `axis` into `(outer, len, inner)` so that element
/// `(o, i, j)` lives at `o * len * inner + i * inner + j`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// Walks every element of a broadcast result of shape `out`, calling
/// `f(out_index, a_offset, b_offset)`. `a` and `b` have the same rank as
/// `out` with each extent either equal to it or 1.
pub fn broadcast_for_each(out: &[usize], a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    let sa = strides(a);
    let sb = strides(b);
    // Broadcast dims step by zero.
    let step_a: Vec<usize> = (0..rank).map(|d| if a[d] == 1 { 0 } else { sa[d] }).collect();
    let step_b: Vec<usize> = (0..rank).map(|d| if b[d] == 1 { 0 } else { sb[d] }).collect();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    // Innermost axis runs in a tight loop; the rest use an odometer.
    let run = out[rank - 1];
    let (ra, rb) = (step_a[rank - 1], step_b[rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    while o < total {
        for j in 0..run {
            f(o + j, oa + j * ra, ob + j * rb);
        }
        o += run;
        let mut d = rank - 1;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            oa += step_a[d];
            ob += step_b[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= step_a[d] * out[d];
            ob -= step_b[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Numerically stable softmax of `x` along the middle axis of an
/// `(outer, len, inner)` layout.
pub fn softmax_axis(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for j in 0..inner {
            let base = o * len * inner + j;
            let mut m = f64::NEG_INFINITY;
            for i in 0..len {
                m = m.max(x[base + i * inner]);
            }
            let mut s = 0.0;
            for i in 0..len {
                let e = (x[base + i * inner] - m).exp();
                out[base + i * inner] = e;
                s += e;
            }
            for i in 0..len {
                out[base + i * inner] /= s;
            }
        }
    }
    out
}

/// Backward of softmax along an axis: `dx = y ⊙ (dy − Σ y dy)`.
pub fn softmax_axis_grad(y: &[f64], dy: &[f64], dx: &mut [f64], outer: usize, len: usize, inner: usize) {
    for o in 0..outer {
        for j in 0..inner {
            let base = o * len * inner + j;
            let s: f64 = (0..len).map(|i| y[base + i * inner] * dy[base + i * inner]).sum();
            for i in 0..len {
                let at = base + i * inner;
                dx[at] += y[at] * (dy[at] - s);
            }
        }
    }
}

/// First index of the maximum along the middle axis (lowest index wins ties).
pub fn argmax_axis(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for j in 0..inner {
            let base = o * len * inner + j;
            let mut best = 0;
            for i in 1..len {
                if x[base + i * inner] > x[base + best * inner] {
                    best = i;
                }
            }
            out.push(best);
        }
    }
    out
}
