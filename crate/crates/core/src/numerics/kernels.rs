//! Slice-level kernels shared by the tape's forward and backward passes.
//! All matrices are row-major.

// Below this many multiply-adds the packing overhead of the blocked kernel
// outweighs its gains.
const GEMM_MIN_WORK: usize = 4096;

/// `out += a · b` where each operand is described by (rows, cols, row stride,
/// col stride). Dispatch depends on shapes only, so results are reproducible.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    out: &mut [f64],
    a: &[f64],
    (ars, acs): (isize, isize),
    b: &[f64],
    (brs, bcs): (isize, isize),
    n: usize,
    k: usize,
    m: usize,
) {
    debug_assert!(out.len() >= n * m);
    // SAFETY: the strides describe views that stay inside `a` (n×k), `b` (k×m)
    // and `out` (n×m), all of which are bounds-checked by the callers' shapes.
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            ars,
            acs,
            b.as_ptr(),
            brs,
            bcs,
            1.0,
            out.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}

/// `out[n×m] += a[n×k] · b[k×m]`
pub fn matmul_acc(out: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    assert!(a.len() >= n * k && b.len() >= k * m && out.len() >= n * m);
    if n * k * m >= GEMM_MIN_WORK {
        return gemm_acc(out, a, (k as isize, 1), b, (m as isize, 1), n, k, m);
    }
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[n×m] += a[n×d] · b[m×d]ᵀ`
pub fn matmul_nt_acc(out: &mut [f64], a: &[f64], b: &[f64], n: usize, d: usize, m: usize) {
    assert!(a.len() >= n * d && b.len() >= m * d && out.len() >= n * m);
    if n * d * m >= GEMM_MIN_WORK {
        return gemm_acc(out, a, (d as isize, 1), b, (1, d as isize), n, d, m);
    }
    for i in 0..n {
        let arow = &a[i * d..(i + 1) * d];
        for j in 0..m {
            out[i * m + j] += dot(arow, &b[j * d..(j + 1) * d]);
        }
    }
}

/// `out[k×m] += a[n×k]ᵀ · b[n×m]`
pub fn matmul_tn_acc(out: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    assert!(a.len() >= n * k && b.len() >= n * m && out.len() >= k * m);
    if n * k * m >= GEMM_MIN_WORK {
        return gemm_acc(out, a, (1, k as isize), b, (m as isize, 1), k, n, m);
    }
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorise without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// `tanh(√(2/π)·(x + 0.044715x³))`, shared by the value and the derivative.
pub fn gelu_tanh(x: f64) -> f64 {
    // tanh(u) = 1 - 2 / (e^{2u} + 1); one exp is cheaper than libm tanh and
    // saturates cleanly at both ends.
    let u = GELU_C * (x + 0.044715 * x * x * x);
    1.0 - 2.0 / ((2.0 * u).exp() + 1.0)
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + gelu_tanh(x))
}

pub fn gelu_grad(x: f64) -> f64 {
    gelu_grad_from_tanh(x, gelu_tanh(x))
}

pub fn gelu_grad_from_tanh(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
