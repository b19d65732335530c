//! Dense kernels on row-major slices. `w` is `rows x cols`.

/// `out = W x + b`.
pub fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        *o = b[i] + dot(row, x);
    }
}

/// `dx += W^T dy`.
pub fn affine_back_input(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (i, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (d, &wv) in dx.iter_mut().zip(row) {
            *d += g * wv;
        }
    }
}

/// `dW += dy x^T`, `db += dy`.
pub fn affine_back_params(dw: &mut [f64], db: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (i, &g) in dy.iter().enumerate() {
        db[i] += g;
        if g == 0.0 {
            continue;
        }
        let row = &mut dw[i * cols..(i + 1) * cols];
        for (d, &xv) in row.iter_mut().zip(x) {
            *d += g * xv;
        }
    }
}

/// Four independent partial sums so the loop vectorizes; the summation
/// order is fixed, so results are still deterministic.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

pub const LN_EPS: f64 = 1e-6;

/// Layer norm of one row. Returns `(x_hat, inv_std)`; writes the affine output.
pub fn layer_norm(x: &[f64], g: &[f64], b: &[f64], out: &mut [f64], x_hat: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        x_hat[i] = (x[i] - mean) * inv;
        out[i] = g[i] * x_hat[i] + b[i];
    }
    inv
}

/// Backward of one layer-norm row: accumulates `dg`, `db` and writes `dx`.
pub fn layer_norm_back(
    dy: &[f64],
    x_hat: &[f64],
    inv: f64,
    g: &[f64],
    dg: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    let n = dy.len() as f64;
    let mut mean_dxh = 0.0;
    let mut mean_dxh_xh = 0.0;
    for i in 0..dy.len() {
        dg[i] += dy[i] * x_hat[i];
        db[i] += dy[i];
        let dxh = dy[i] * g[i];
        mean_dxh += dxh;
        mean_dxh_xh += dxh * x_hat[i];
    }
    mean_dxh /= n;
    mean_dxh_xh /= n;
    for i in 0..dy.len() {
        let dxh = dy[i] * g[i];
        dx[i] = inv * (dxh - mean_dxh - x_hat[i] * mean_dxh_xh);
    }
}

/// In-place numerically stable softmax.
pub fn softmax(x: &mut [f64]) {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in x.iter_mut() {
        *v /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_standardizes() {
        let x = [0.3, -1.2, 4.0, 2.2, -0.5, 0.9];
        let (g, b) = ([1.0; 6], [0.0; 6]);
        let (mut out, mut xh) = ([0.0; 6], [0.0; 6]);
        layer_norm(&x, &g, &b, &mut out, &mut xh);
        let mean = out.iter().sum::<f64>() / 6.0;
        let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut x = [1000.0, 999.0, -5.0];
        softmax(&mut x);
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(x.iter().all(|v| *v >= 0.0));
    }
}
